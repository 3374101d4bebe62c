from setuptools import setup, find_packages

setup(
    name='ArrayTrack',
    version='1.0',
    author='ArrayTrack developers',
    description='Localize and track multiple sound sources with an 8 microphone array',
    license='MIT',
    packages=['ArrayTrack'],
    keywords='microphone array sound source localization tracking beamforming particle filter',
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.17',
        'scipy>=1.4',
        'transforms3d>=0.3.1',
        'PyYAML>=5.1',
        'soundfile>=0.11'
    ],
    extras_require={
        'plot': ['matplotlib>=3.1'],
    },
    entry_points={
        'console_scripts': ['arraytrack = ArrayTrack.cli:main'],
    },
    test_suite='Tests',
    classifiers=[
        'Development Status :: 4 - Beta',

        # Indicate who your project is intended for
        'Intended Audience :: Science/Research',
        'Topic :: Multimedia :: Sound/Audio :: Analysis',

        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
      ]
)
