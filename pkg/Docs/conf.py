# -*- coding: utf-8 -*-
#
# ArrayTrack documentation build configuration file
#
# Build with ``sphinx-build -b html Docs Docs/build``

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

from ArrayTrack import __version__

# -- General configuration ------------------------------------------------

extensions = ['sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx.ext.githubpages',
    'sphinx.ext.autosummary']

autosummary_generate = False
autodoc_mock_imports = ['soundfile']

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'ArrayTrack'
copyright = '2026, ArrayTrack developers'
author = 'ArrayTrack developers'

version = __version__
release = __version__

language = None
exclude_patterns = ['build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'
todo_include_todos = False


# -- Options for HTML output ----------------------------------------------

html_theme = 'alabaster'
html_sidebars = {
    '**': [
        'about.html',
        'navigation.html',
        'relations.html',
        'searchbox.html',
    ]
}
htmlhelp_basename = 'ArrayTrackdoc'


# -- Options for LaTeX and manual page output -----------------------------

latex_documents = [
    (master_doc, 'ArrayTrack.tex', 'ArrayTrack Documentation', author, 'manual'),
]

man_pages = [
    (master_doc, 'arraytrack', 'ArrayTrack Documentation', [author], 1)
]
