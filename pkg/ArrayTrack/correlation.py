r"""
Reliability weighted phase transform (RWPHAT) cross-correlations of all microphone pairs.

Each frame contributes the weighted, magnitude normalized cross-spectrum

.. math:: C_{ij}(k) = \frac{\zeta_i(k) X_i(k) \zeta_j(k) X_j^*(k)}{|X_i(k)| |X_j(k)|}

to a :any:`CrossSpectrumAccumulator`, which keeps the last few frames (4 by default) per pair. The
correlation of a pair is the inverse DFT of their mean, scaled by 1/L, so that a perfectly coherent
pair peaks at exactly 1. The peak of :math:`R_{ij}` lies at lag :math:`D_i - D_j` (mod L), where
:math:`D_m` is the arrival delay at microphone m, which is exactly what
:any:`compute_tdoa <ArrayTrack.geometry.compute_tdoa>` tabulates.
"""
import logging
import numpy as np
import scipy.fft

from ArrayTrack import StateError

logger = logging.getLogger(__name__)


class CrossSpectrumAccumulator(object):
    r"""
    Ring buffer of the last ``depth`` weighted cross-spectra of every microphone pair.

    :param pairs: list of microphone index pairs ``(i, j)``, usually :any:`MicArrayGeometry.pairs`
    :param int bins: number of one-sided frequency bins (L/2 + 1)
    :param int depth: number of frames averaged
    """

    def __init__(self, pairs, bins, depth=4):
        if depth < 1: raise ValueError('Accumulator depth must be at least 1, got %s' % depth)
        self._pairs = list(pairs)
        self._first = np.array([i for i, _ in self._pairs], dtype=int)
        self._second = np.array([j for _, j in self._pairs], dtype=int)
        self._buffer = np.zeros((depth, len(self._pairs), bins), dtype=complex)
        self._count = 0

    def __str__(self):
        return "CrossSpectrumAccumulator (%d pairs/%d frames)" % (len(self._pairs), self.depth)

    @property
    def pairs(self):
        return self._pairs

    @property
    def depth(self):
        return self._buffer.shape[0]

    @property
    def bins(self):
        return self._buffer.shape[2]

    @property
    def frame_count(self):
        r""" The number of frames pushed since construction (or the last :any:`reset`) """
        return self._count

    @property
    def filled(self):
        r""" How many frames the average currently spans (less than :any:`depth` at start up) """
        return min(self._count, self.depth)

    def push(self, cross):
        r"""
        :param cross: (P, bins) complex ndarray, the cross-spectra of one frame
        """
        self._buffer[self._count % self.depth] = cross
        self._count += 1

    def mean(self):
        r"""
        :return: the (P, bins) average over the stored frames
        :raises: StateError: if nothing was accumulated yet
        """
        if self._count == 0: raise StateError('[%s] No frame accumulated yet' % self)
        return self._buffer[:self.filled].mean(axis=0)

    def reset(self):
        self._buffer[:] = 0
        self._count = 0

    def cross_spectra(self, spectra, zeta):
        r"""
        :param spectra: (M, bins) complex spectra of one frame
        :param zeta: (M, bins) reliability weights of that frame
        :return: the (P, bins) weighted normalized cross-spectra, zero where a magnitude vanishes
        """
        magnitude = np.abs(spectra)
        safe = np.where(magnitude > 0, magnitude, 1.)
        whitened = np.where(magnitude > 0, zeta * spectra / safe, 0.)
        return whitened[self._first] * np.conj(whitened[self._second])


class CorrelationSet(object):
    r"""
    The correlation vectors :math:`R_{ij}(\tau)`, :math:`\tau \in [0, L)`, of all pairs as one C-contiguous
    (P, L) array. Lag :math:`\tau` of pair p sits at ``flat[p * L + tau]``, which is how the
    steered beamformer reads (and clears) it.
    """

    def __init__(self, values, pairs):
        self._values = np.ascontiguousarray(values, dtype=float)
        self._pairs = list(pairs)
        if self._values.shape[0] != len(self._pairs):
            raise ValueError('Got %d correlation vectors for %d pairs' % (self._values.shape[0], len(self._pairs)))

    def __str__(self):
        return "CorrelationSet (%d pairs/L=%d)" % self._values.shape

    def __getitem__(self, pair):
        r""" The correlation vector of pair ``(i, j)``; ``(j, i)`` gives the time reversed vector """
        i, j = pair
        if (i, j) in self._pairs:
            return self._values[self._pairs.index((i, j))]
        if (j, i) in self._pairs:
            return np.roll(self._values[self._pairs.index((j, i))][::-1], 1)
        raise KeyError('[%s] Unknown microphone pair (%d, %d)' % (self, i, j))

    @property
    def values(self):
        return self._values

    @property
    def flat(self):
        r""" A flat view on :any:`values`, writes go through """
        return self._values.reshape(-1)

    @property
    def pairs(self):
        return self._pairs

    @property
    def length(self):
        return self._values.shape[1]

    def copy(self):
        return CorrelationSet(self._values.copy(), self._pairs)


def accumulate(acc, frame, weights):
    r"""
    :param CrossSpectrumAccumulator acc: the accumulator (updated in place)
    :param SpectralFrame frame: the current frame
    :param ReliabilityWeights weights: the weights of that frame
    :return: the accumulator
    """
    acc.push(acc.cross_spectra(frame.spectra, weights.zeta))
    return acc


def correlations(acc, workers=None):
    r"""
    :param CrossSpectrumAccumulator acc: holds at least one frame
    :param int workers: threads for the P inverse transforms (see ``scipy.fft.irfft``)
    :return: the :any:`CorrelationSet` of the averaged cross-spectra, real and of length L = 2 (bins - 1)
    :raises: StateError: if the accumulator is empty
    """
    length = 2 * (acc.bins - 1)
    return CorrelationSet(scipy.fft.irfft(acc.mean(), n=length, axis=1, workers=workers), acc.pairs)
