r"""
Per-channel frontend of the localizer: the short time Fourier transform of every microphone and the
reliability weights :math:`\zeta` which tell the correlation stage how much to trust each frequency bin.

For every frame n the following recursions run, in this order:

1. :any:`update_noise` tracks the background noise :math:`\sigma^2` (simplified minima controlled recursive averaging)
2. :any:`update_reverb` tracks the reverberation :math:`\lambda^n = \gamma\lambda^{n-1} + (1-\gamma)\delta^{-1}|\zeta^{n-1}X^{n-1}|^2`
3. :any:`a_priori_snr` estimates :math:`\xi` with the decision directed rule against :math:`\sigma^2 + \lambda`
4. :any:`reliability_weights` turns it into the Wiener gain :math:`\zeta = \xi / (\xi + 1)`

:any:`SpectralFrontend` bundles the three states and runs these steps for you.
"""
import math
import logging
import numpy as np
import scipy.fft
import scipy.signal

from collections import namedtuple
from ArrayTrack import InputError

logger = logging.getLogger(__name__)

SpectralFrame = namedtuple('SpectralFrame', 'frame_index spectra')
ReliabilityWeights = namedtuple('ReliabilityWeights', 'zeta')

_TINY = 1e-20


def analysis_window(length, name='hann'):
    r""" The (periodic) analysis window of ``length`` samples, raised cosine by default """
    return scipy.signal.get_window(name, length, fftbins=True)


def stft_frame(samples, window=None, frame_index=0, channels=None):
    r"""
    :param samples: (M, L) ndarray, one window of L time samples per channel
    :param window: the analysis window of length L (Hann if None)
    :param int frame_index: the index of this frame in the stream
    :param int channels: the expected channel count; raises if the samples disagree
    :return: a :any:`SpectralFrame` with the one-sided spectra, shape (M, L/2 + 1)
    :raises: InputError: if the channel count does not match
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if channels is not None and samples.shape[0] != channels:
        raise InputError('Frame %d has %d channels but the array has %d microphones'
                         % (frame_index, samples.shape[0], channels))
    if window is None: window = analysis_window(samples.shape[1])
    return SpectralFrame(frame_index, scipy.fft.rfft(samples * window, axis=1))


def gamma_from_rt60(rt60, hop=512, sample_rate=48000.):
    r"""
    :return: the per-frame reverberation decay :math:`\gamma = 10^{-6 \cdot hop / (RT_{60} f_s)}`,
             i.e. the energy decays by 60 dB within ``rt60`` seconds. Zero for an anechoic room.
    """
    if rt60 <= 0: return 0.
    return 10 ** (-6. * hop / (rt60 * sample_rate))


class NoiseState(object):
    r"""
    Background noise power :math:`\sigma^2_i(k)` per channel and bin, tracked with a simplified
    minima controlled recursive average:

    * the power spectrum is smoothed over frequency (0.25, 0.5, 0.25) and over time (``smoothing``)
    * the minimum S_min of the smoothed power is tracked over a window of ``window`` frames
      (two stage: a temporary minimum replaces S_min at the end of every window)
    * :math:`\sigma^2 \leftarrow (1-\alpha)\sigma^2 + \alpha|X|^2` is only applied in bins where the
      smoothed power is within ``gate`` times S_min, i.e. during periods of low energy

    The first frame initialises everything to its power spectrum, unless ``initial`` is given. Until the time
    smoothing has settled (:any:`settle` frames) the estimate adapts in every bin and the minima follow
    the smoothed power, so that a single low first frame cannot close the gate for a whole window.
    """

    def __init__(self, alpha=0.05, smoothing=0.8, window=150, gate=5., initial=None):
        self.alpha = float(alpha)
        self.smoothing = float(smoothing)
        self.window = int(window)
        self.gate = float(gate)
        self.sigma2 = None if initial is None else np.array(initial, dtype=float)
        self.smoothed = None
        self.minimum = None
        self.temporary = None
        self.frames = 0

    def __str__(self):
        return "NoiseState (frame %d)" % self.frames

    @property
    def settle(self):
        r""" Start up frames: twice the time constant of the smoothing """
        return int(math.ceil(2. / (1. - self.smoothing)))


class ReverbState(object):
    r"""
    Reverberation power :math:`\lambda_i^n(k)`, starting from all zeros.

    :param float gamma: decay per frame, in [0, 1) (see :any:`gamma_from_rt60`)
    :param float delta: the signal to reverberant ratio, positive
    """

    def __init__(self, gamma=0.6, delta=10., initial=None):
        if not 0 <= gamma < 1: raise ValueError('Reverberation decay must lie in [0, 1), got %s' % gamma)
        if delta <= 0: raise ValueError('Signal to reverberant ratio must be positive, got %s' % delta)
        self.gamma = float(gamma)
        self.delta = float(delta)
        self.power = None if initial is None else np.array(initial, dtype=float)


class SnrState(object):
    r"""
    Memory of the decision directed estimator: the clean power :math:`|\zeta X|^2` of the previous
    frame and the smoothing :math:`\alpha_{dd}`.
    """

    def __init__(self, alpha_dd=0.97, initial=None):
        if not 0 <= alpha_dd < 1: raise ValueError('Decision directed smoothing must lie in [0, 1), got %s' % alpha_dd)
        self.alpha_dd = float(alpha_dd)
        self.prev_clean_power = None if initial is None else np.array(initial, dtype=float)


def _smooth_frequency(power):
    smoothed = 0.5 * power
    smoothed[:, 1:] += 0.25 * power[:, :-1]
    smoothed[:, :-1] += 0.25 * power[:, 1:]
    smoothed[:, 0] += 0.25 * power[:, 0]
    smoothed[:, -1] += 0.25 * power[:, -1]
    return smoothed


def update_noise(state, frame):
    r"""
    :param NoiseState state: the state holding the estimate of the previous frame (updated in place)
    :param SpectralFrame frame: the current frame
    :return: the updated state
    """
    power = np.abs(frame.spectra) ** 2
    smoothed = _smooth_frequency(power)

    if state.smoothed is None:
        state.smoothed = smoothed
        state.minimum = smoothed.copy()
        state.temporary = smoothed.copy()
        state.frames = 1
        if state.sigma2 is None:
            state.sigma2 = power.copy()
            return state
    else:
        state.smoothed = state.smoothing * state.smoothed + (1. - state.smoothing) * smoothed
        state.frames += 1
        if state.frames <= state.settle:
            state.minimum = state.smoothed.copy()
            state.temporary = state.smoothed.copy()
        else:
            np.minimum(state.minimum, state.smoothed, out=state.minimum)
            np.minimum(state.temporary, state.smoothed, out=state.temporary)
        if state.frames % state.window == 0:
            state.minimum = np.minimum(state.temporary, state.smoothed)
            state.temporary = state.smoothed.copy()

    quiet = (state.smoothed <= state.gate * state.minimum) | (state.frames <= state.settle)
    state.sigma2 = np.where(quiet, (1. - state.alpha) * state.sigma2 + state.alpha * power, state.sigma2)
    return state


def update_reverb(state, prev_weights, prev_frame):
    r"""
    :param ReverbState state: holds :math:`\lambda^{n-1}` (updated in place)
    :param ReliabilityWeights prev_weights: the weights of frame n-1 (None at start up)
    :param SpectralFrame prev_frame: frame n-1 (None at start up)
    :return: the state now holding :math:`\lambda^n`
    """
    if prev_weights is None or prev_frame is None:
        if state.power is not None: state.power = state.gamma * state.power
        return state

    clean = np.abs(prev_weights.zeta * prev_frame.spectra) ** 2
    if state.power is None: state.power = np.zeros_like(clean)
    state.power = state.gamma * state.power + (1. - state.gamma) / state.delta * clean
    return state


def a_priori_snr(state, noise, reverb, frame):
    r"""
    :param SnrState state: the decision directed memory
    :param NoiseState noise: the background noise estimate of the current frame
    :param ReverbState reverb: the reverberation estimate of the current frame
    :param SpectralFrame frame: the current frame
    :return: the a priori SNR :math:`\xi \geq 0` per channel and bin as ndarray

    .. math::
        \xi = \alpha_{dd} \frac{|\zeta^{n-1} X^{n-1}|^2}{\sigma^2 + \lambda}
              + (1 - \alpha_{dd}) \max\left(\frac{|X|^2}{\sigma^2 + \lambda} - 1, 0\right)

    """
    power = np.abs(frame.spectra) ** 2
    interference = np.zeros_like(power) if noise.sigma2 is None else noise.sigma2.copy()
    if reverb.power is not None: interference += reverb.power
    interference = np.maximum(interference, _TINY)

    previous = 0. if state.prev_clean_power is None else state.prev_clean_power
    posterior = power / interference
    return state.alpha_dd * previous / interference + (1. - state.alpha_dd) * np.maximum(posterior - 1., 0.)


def reliability_weights(xi):
    r"""
    :param xi: the a priori SNR, non negative
    :return: :any:`ReliabilityWeights` with the Wiener gain :math:`\zeta = \xi / (\xi + 1)` in [0, 1)
    """
    xi = np.asarray(xi, dtype=float)
    return ReliabilityWeights(xi / (xi + 1.))


def update_snr(state, weights, frame):
    r""" Remember :math:`|\zeta X|^2` of this frame for the decision directed rule of the next one """
    state.prev_clean_power = np.abs(weights.zeta * frame.spectra) ** 2
    return state


class FrameBuffer(object):
    r"""
    A ring buffer cutting a multichannel sample stream into overlapping analysis windows.
    Blocks of any size go in, windows of ``length`` samples every ``hop`` samples come out; the
    memory used does not depend on how long the stream runs::

        buffer = FrameBuffer(channels=8)
        for block in blocks:
            for index, samples in buffer.push(block):
                frame = stft_frame(samples, frame_index=index)

    """

    def __init__(self, channels, length=1024, hop=512):
        if not 0 < hop <= length: raise ValueError('Hop must lie in (0, %d], got %s' % (length, hop))
        self._channels = int(channels)
        self._length = int(length)
        self._hop = int(hop)
        self._buffer = np.zeros((self._channels, self._length))
        self._fill = 0
        self._index = 0

    @property
    def frames_emitted(self):
        return self._index

    def push(self, block):
        r"""
        :param block: (channels, n) ndarray of new samples
        :return: generator yielding ``(frame_index, samples)`` for every window completed by this block
        :raises: InputError: on a channel count mismatch
        """
        block = np.atleast_2d(np.asarray(block, dtype=float))
        if block.shape[0] != self._channels:
            raise InputError('Block has %d channels, expected %d' % (block.shape[0], self._channels))

        position = 0
        while position < block.shape[1]:
            take = min(self._length - self._fill, block.shape[1] - position)
            self._buffer[:, self._fill:self._fill + take] = block[:, position:position + take]
            self._fill += take
            position += take
            if self._fill == self._length:
                yield self._index, self._buffer.copy()
                self._index += 1
                self._buffer[:, :self._length - self._hop] = self._buffer[:, self._hop:]
                self._fill = self._length - self._hop


class SpectralFrontend(object):
    r"""
    Runs the whole frontend for one array: transform, noise, reverberation, a priori SNR and weights.

    :param int channels: number of microphones
    :param int length: analysis window length L
    :param float gamma: reverberation decay per frame (see :any:`gamma_from_rt60`)
    :param float delta: signal to reverberant ratio
    :param float alpha_dd: decision directed smoothing
    :param dict noise: keyword arguments for :any:`NoiseState`
    """

    def __init__(self, channels, length=1024, gamma=0.6, delta=10., alpha_dd=0.97, noise=None, window='hann'):
        self._channels = int(channels)
        self._window = analysis_window(length, window)
        self.noise = NoiseState(**(noise or {}))
        self.reverb = ReverbState(gamma, delta)
        self.snr = SnrState(alpha_dd)
        self._previous = (None, None)

    def transform(self, samples, frame_index=0):
        return stft_frame(samples, self._window, frame_index, self._channels)

    def process(self, frame):
        r"""
        :param SpectralFrame frame: the next frame, in temporal order
        :return: the :any:`ReliabilityWeights` of this frame
        """
        prev_weights, prev_frame = self._previous
        update_noise(self.noise, frame)
        update_reverb(self.reverb, prev_weights, prev_frame)
        weights = reliability_weights(a_priori_snr(self.snr, self.noise, self.reverb, frame))
        update_snr(self.snr, weights, frame)
        self._previous = (weights, frame)
        return weights
