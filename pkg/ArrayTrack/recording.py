import logging
import os.path as p
import numpy as np
import soundfile

from ArrayTrack import InputError
from ArrayTrack.simulator import GroundTruth

logger = logging.getLogger(__name__)


def truth_path(path):
    r""" The ground truth file that belongs to a recording, e.g. ``scene.truth.jsonl`` for ``scene.wav`` """
    return p.splitext(path)[0] + '.truth.jsonl'


def write_wav(path, audio, sample_rate, subtype='PCM_16'):
    r"""
    :param str path: the WAV file to write
    :param audio: (M, T) ndarray, samples in [-1, 1]
    :param int sample_rate: in Hz
    :param str subtype: ``PCM_16`` or ``FLOAT``
    """
    soundfile.write(path, np.asarray(audio).T, int(sample_rate), subtype=subtype)
    logger.info('Wrote %d channels, %.2f s to %s', audio.shape[0], audio.shape[1] / float(sample_rate), path)


class Recording(object):
    r"""A multichannel WAV recording of the array, optionally with its ground truth.

    The constructor only reads the header and checks it against the array geometry, so a mismatch is
    reported before any processing starts. Samples are streamed in blocks, the file is never loaded as
    a whole::

        recording = Recording('scene.wav', geometry)
        print(recording.duration)
        for block in recording.blocks():
            print(block.shape)            # (8, 4096)

        if recording.truth is not None:
            print(recording.truth.source_ids)

    """

    @staticmethod
    def _check_file_exists(file):
        r""" Checks if a file exists and raises an exception otherwise
        :param str file: the path to the file to check for existance
        :raises IOError
        """
        if not p.exists(file):
            raise IOError("Could not find %s" % file)

    def __init__(self, path, geometry=None, truth=None):
        r"""
        :param str path: the WAV file. Environment variables and ``~`` get expanded
        :param MicArrayGeometry geometry: if given, the channel count and sample rate must match it
        :param str truth: a ground truth JSONL file; if None the file next to the recording is used
                          when it exists (see :any:`truth_path`)
        :raises: IOError: if a file is missing or not readable as audio
        :raises: InputError: on a channel count or sample rate mismatch
        """
        path = p.expandvars(p.expanduser(path))
        Recording._check_file_exists(path)
        self._path = path
        try:
            self._info = soundfile.info(path)
        except RuntimeError as error:
            raise IOError('Could not read %s: %s' % (path, error))

        if geometry is not None:
            if self._info.channels != geometry.count:
                raise InputError('[%s] Has %d channels, but %s has %d microphones'
                                 % (self, self._info.channels, geometry, geometry.count))
            if self._info.samplerate != geometry.sample_rate:
                raise InputError('[%s] Is sampled at %d Hz, expected %d Hz (no resampling)'
                                 % (self, self._info.samplerate, geometry.sample_rate))

        self._truth = None
        if truth is not None:
            Recording._check_file_exists(truth)
            self._truth = GroundTruth.load(truth)
        elif p.exists(truth_path(path)):
            self._truth = GroundTruth.load(truth_path(path))

    def __str__(self):
        return "%s (%s)" % (type(self).__name__, p.basename(self._path))

    @property
    def path(self):
        return self._path

    @property
    def sample_rate(self):
        return self._info.samplerate

    @property
    def channels(self):
        return self._info.channels

    @property
    def samples(self):
        return self._info.frames

    @property
    def duration(self):
        r""" Length of the recording in seconds """
        return self._info.frames / float(self._info.samplerate)

    @property
    def truth(self):
        r""" The :any:`GroundTruth <ArrayTrack.simulator.GroundTruth>` of this recording or None """
        return self._truth

    def blocks(self, size=4096):
        r"""
        :param int size: samples per block
        :return: generator of (channels, n) float blocks, in order; the last one may be shorter
        """
        for block in soundfile.blocks(self._path, blocksize=size, always_2d=True, dtype='float64'):
            yield block.T

    def read(self):
        r""" All samples as (channels, T) ndarray """
        data, _ = soundfile.read(self._path, always_2d=True, dtype='float64')
        return data.T
