r"""
Synthetic scenes with ground truth. Point sources move along waypoints, each microphone receives every
source delayed by its propagation time (fractional delays, re-evaluated once per hop) and attenuated by
1/r, independent white noise is added at a target SNR and, for rt60 > 0, a diffuse exponentially
decaying tail.

A scene is described by a :any:`SceneSpec`, either built in code, loaded from a YAML/JSON file or taken
from the :any:`presets`::

    scene = preset('crossing', seed=3)
    audio, truth = synthesize(scene)      # (8, T) float array, GroundTruth
    truth.save('crossing.truth.jsonl')

"""
import json
import math
import logging
import os.path as p
import numpy as np
import scipy.fft
import scipy.signal
import soundfile
import yaml

from dataclasses import dataclass, field
from ArrayTrack import ConfigurationError, InputError, Interpolation
from ArrayTrack.geometry import MicArrayGeometry, angles_to_direction

logger = logging.getLogger(__name__)

_TAPS = 31
_HALF = _TAPS // 2
_PULSE_DENSITY = 2000.
_PRE_DELAY_S = 0.005
_RAMP_S = 0.01
_SIGNAL_KINDS = ('bursts', 'pink', 'wav')


def fractional_delay_filter(fraction):
    r"""
    :param float fraction: the fractional part of a delay in [0, 1)
    :return: the 31 taps of a Blackman windowed sinc for that fraction; tap 15 is the integer part
    """
    t = np.arange(_TAPS) - _HALF - fraction
    window = 0.42 + 0.5 * np.cos(np.pi * t / (_HALF + 1)) + 0.08 * np.cos(2 * np.pi * t / (_HALF + 1))
    return np.sinc(t) * window


def fractional_delay(signal, delay):
    r"""
    :param signal: 1D samples
    :param float delay: the delay in (possibly fractional) samples, ``|delay| < len(signal)``
    :return: the delayed signal, same length, zero where the delayed input is unknown

    Windowed sinc interpolation with the filter's group delay compensated, so ``delay = 3`` is a plain
    shift by 3 samples.
    """
    signal = np.asarray(signal, dtype=float)
    if abs(delay) >= len(signal):
        raise ValueError('Delay of %s samples exceeds the signal length %d' % (delay, len(signal)))
    whole = int(math.floor(delay))
    full = np.convolve(signal, fractional_delay_filter(delay - whole))
    index = np.arange(len(signal)) - whole + _HALF
    valid = (index >= 0) & (index < len(full))
    result = np.zeros(len(signal))
    result[valid] = full[index[valid]]
    return result


def _delayed_block(signal, start, stop, delay):
    whole = int(math.floor(delay))
    lo = start - whole - _HALF
    hi = stop - whole + _HALF
    segment = np.zeros(hi - lo)
    a, b = max(lo, 0), min(hi, len(signal))
    if a < b: segment[a - lo:b - lo] = signal[a:b]
    return np.convolve(segment, fractional_delay_filter(delay - whole), mode='valid')


def pink_noise(count, rng):
    r""" ``count`` samples of unit RMS noise with a 1/f power spectrum """
    spectrum = scipy.fft.rfft(rng.standard_normal(count))
    scale = np.ones(len(spectrum))
    scale[1:] = 1. / np.sqrt(np.arange(1, len(spectrum)))
    scale[0] = 0.
    noise = scipy.fft.irfft(spectrum * scale, n=count)
    return noise / max(np.sqrt(np.mean(noise ** 2)), 1e-12)


def burst_envelope(count, sample_rate, rng, on_s=(0.4, 1.2), off_s=(0.1, 0.4)):
    r"""
    :return: an on/off amplitude envelope with raised cosine ramps; talk spurts last ``on_s`` seconds
             and pauses ``off_s`` seconds (both drawn uniformly from the given ranges)
    """
    envelope = np.zeros(count)
    ramp = int(_RAMP_S * sample_rate)
    position = 0
    while position < count:
        length = int(rng.uniform(*on_s) * sample_rate)
        stop = min(position + length, count)
        envelope[position:stop] = 1.
        rise = min(ramp, stop - position)
        envelope[position:position + rise] = 0.5 - 0.5 * np.cos(np.pi * np.arange(rise) / ramp)
        fall = min(ramp, stop - position - rise)
        if fall > 0: envelope[stop - fall:stop] = 0.5 + 0.5 * np.cos(np.pi * np.arange(1, fall + 1) / ramp)
        position = stop + int(rng.uniform(*off_s) * sample_rate)
    return envelope


@dataclass
class SourceSpec:
    r"""
    One simulated source. ``waypoints`` is a list of ``(t, [x, y, z])``; between them the position is
    interpolated with ``interpolation`` (``linear``, ``cubic`` or any function with the signature of
    :any:`Interpolation.linear`). ``signal`` is one of::

        {'kind': 'bursts', 'on_s': [0.4, 1.2], 'off_s': [0.1, 0.4]}   # speech-like pink noise bursts
        {'kind': 'pink'}                                               # continuous pink noise
        {'kind': 'wav', 'path': 'speech.wav'}                          # first channel of a file

    """
    id: int
    waypoints: list
    signal: dict = field(default_factory=lambda: {'kind': 'bursts'})
    gain: float = 1.
    interpolation: object = 'linear'

    @property
    def times(self):
        return np.array([w[0] for w in self.waypoints], dtype=float)

    @property
    def points(self):
        return np.array([w[1] for w in self.waypoints], dtype=float).reshape(-1, 3)

    @property
    def method(self):
        if callable(self.interpolation): return self.interpolation
        if self.interpolation not in ('linear', 'cubic'):
            raise ConfigurationError('Unknown interpolation "%s" for source %d' % (self.interpolation, self.id))
        return getattr(Interpolation, self.interpolation)

    def position(self, t):
        r""" The source position at time ``t`` in seconds """
        return Interpolation.along(self.times, self.points, t, self.method)

    def to_dict(self):
        if callable(self.interpolation):
            raise ConfigurationError('Source %d uses a custom interpolation which cannot be saved' % self.id)
        return {'id': self.id, 'waypoints': [[float(t), list(map(float, x))] for t, x in self.waypoints],
                'signal': dict(self.signal), 'gain': self.gain, 'interpolation': self.interpolation}


@dataclass
class SceneSpec:
    r"""
    A complete scene. ``snr_db`` is the per-array SNR of the clean mixture against the sensor noise
    (None for a noiseless scene); without any source the noise is rendered at ``noise_level_db``
    (power in dB re full scale). ``rt60 = 0`` is anechoic, otherwise a diffuse tail ``drr_db`` below the
    direct sound is added.
    """
    duration: float = 10.
    geometry: MicArrayGeometry = field(default_factory=MicArrayGeometry.circular)
    sources: list = field(default_factory=list)
    snr_db: float = 7.
    rt60: float = 0.
    drr_db: float = 0.
    noise_level_db: float = -40.
    seed: int = 0
    hop: int = 512
    length: int = 1024
    min_distance: float = 0.3
    max_distance: float = 3.

    def __str__(self):
        return "SceneSpec (%d sources/%.1f s)" % (len(self.sources), self.duration)

    @property
    def samples(self):
        return int(round(self.duration * self.geometry.sample_rate))

    @property
    def frames(self):
        r""" The number of analysis frames the recording holds """
        return max(0, 1 + (self.samples - self.length) // self.hop)

    def validate(self):
        r"""
        :raises: ConfigurationError: for non-ascending waypoints, waypoints outside the scene duration or
                 positions closer than ``min_distance`` or farther than ``max_distance`` from the array center
        """
        if self.duration <= 0: raise ConfigurationError('[%s] Duration must be positive' % self)
        if self.rt60 < 0: raise ConfigurationError('[%s] rt60 must not be negative' % self)
        ids = [s.id for s in self.sources]
        if len(set(ids)) != len(ids): raise ConfigurationError('[%s] Source ids must be unique: %s' % (self, ids))

        centroid = self.geometry.centroid
        for source in self.sources:
            if not source.waypoints:
                raise ConfigurationError('[%s] Source %d has no waypoints' % (self, source.id))
            times = source.times
            if np.any(np.diff(times) <= 0):
                raise ConfigurationError('[%s] Waypoint times of source %d must be ascending' % (self, source.id))
            if times[0] < 0 or times[-1] > self.duration:
                raise ConfigurationError('[%s] Waypoints of source %d lie outside [0, %s] s'
                                         % (self, source.id, self.duration))
            distances = np.linalg.norm(source.points - centroid, axis=1)
            if np.any(distances < self.min_distance - 1e-9) or np.any(distances > self.max_distance + 1e-9):
                raise ConfigurationError('[%s] Source %d leaves the [%s, %s] m shell around the array'
                                         % (self, source.id, self.min_distance, self.max_distance))
            kind = source.signal.get('kind', 'bursts')
            if kind not in _SIGNAL_KINDS:
                raise ConfigurationError('[%s] Unknown signal kind "%s", use one of %s' % (self, kind, _SIGNAL_KINDS))
        return self

    @staticmethod
    def from_dict(params):
        r"""
        :param dict params: the scene as read from a file; ``geometry`` follows
                            :any:`MicArrayGeometry.from_dict <ArrayTrack.geometry.MicArrayGeometry.from_dict>`
        :raises: ConfigurationError: on unknown keys or invalid values
        """
        params = dict(params)
        allowed = {'duration', 'geometry', 'sources', 'snr_db', 'rt60', 'drr_db', 'noise_level_db', 'seed', 'hop',
                   'length', 'min_distance', 'max_distance'}
        unknown = set(params) - allowed
        if unknown: raise ConfigurationError('Unknown scene keys: %s' % ', '.join(sorted(unknown)))

        sources = []
        for entry in params.pop('sources', None) or []:
            unknown = set(entry) - {'id', 'waypoints', 'signal', 'gain', 'interpolation'}
            if unknown: raise ConfigurationError('Unknown source keys: %s' % ', '.join(sorted(unknown)))
            if 'id' not in entry or 'waypoints' not in entry:
                raise ConfigurationError('Every source needs an "id" and "waypoints"')
            sources.append(SourceSpec(**entry))

        if 'geometry' in params: params['geometry'] = MicArrayGeometry.from_dict(params['geometry'])
        return SceneSpec(sources=sources, **params).validate()

    @staticmethod
    def load(path):
        r"""
        :param str path: a YAML or JSON scene file
        :raises: IOError: if the file does not exist
        """
        path = p.expandvars(p.expanduser(path))
        if not p.exists(path): raise IOError('Could not find scene file %s' % path)
        with open(path) as stream:
            params = yaml.safe_load(stream) or {}
        return SceneSpec.from_dict(params)

    def to_dict(self):
        return {'duration': self.duration, 'geometry': self.geometry.to_dict(),
                'sources': [s.to_dict() for s in self.sources], 'snr_db': self.snr_db, 'rt60': self.rt60,
                'drr_db': self.drr_db, 'noise_level_db': self.noise_level_db, 'seed': self.seed, 'hop': self.hop,
                'length': self.length, 'min_distance': self.min_distance, 'max_distance': self.max_distance}

    def save(self, path):
        with open(path, 'w') as stream:
            if path.endswith('.json'): json.dump(self.to_dict(), stream, indent=2)
            else: yaml.safe_dump(self.to_dict(), stream, default_flow_style=None)


class GroundTruth(object):
    r"""
    The true source positions on the analysis hop grid. Record n belongs to the analysis window starting
    at sample ``n * hop`` and is stamped with the window center ``(n * hop + L / 2) / fs``. Every record is a
    dict ``{'frame': n, 't_seconds': t, 'sources': [{'id': .., 'pos_m': [x, y, z], 'active': ..}]}``.
    """

    def __init__(self, records=()):
        self._records = list(records)

    def __len__(self):
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, n):
        return self._records[n]

    def __str__(self):
        return "GroundTruth (%d frames)" % len(self._records)

    @property
    def records(self):
        return self._records

    @property
    def times(self):
        return np.array([r['t_seconds'] for r in self._records])

    @property
    def source_ids(self):
        return sorted({s['id'] for r in self._records for s in r['sources']})

    def at(self, t):
        r""" The record closest to time ``t``, None if there is none """
        if not self._records: return None
        return self._records[int(np.argmin(np.abs(self.times - t)))]

    def save(self, path):
        with open(path, 'w') as stream:
            for record in self._records:
                stream.write(json.dumps(record) + '\n')
        logger.info('Wrote %s to %s', self, path)

    @staticmethod
    def load(path):
        r"""
        :raises: IOError: if the file does not exist
        :raises: InputError: on malformed lines
        """
        if not p.exists(path): raise IOError('Could not find ground truth file %s' % path)
        records = []
        with open(path) as stream:
            for number, line in enumerate(stream, 1):
                if not line.strip(): continue
                try:
                    record = json.loads(line)
                    record['t_seconds'] = float(record['t_seconds'])
                    record['sources'] = list(record['sources'])
                except (ValueError, KeyError, TypeError) as error:
                    raise InputError('Malformed ground truth record in %s:%d (%s)' % (path, number, error))
                records.append(record)
        return GroundTruth(records)


def _source_signal(spec, count, sample_rate, rng):
    kind = spec.signal.get('kind', 'bursts')
    if kind == 'pink':
        return pink_noise(count, rng), np.ones(count)

    if kind == 'bursts':
        envelope = burst_envelope(count, sample_rate, rng, tuple(spec.signal.get('on_s', (0.4, 1.2))),
                                  tuple(spec.signal.get('off_s', (0.1, 0.4))))
        return pink_noise(count, rng) * envelope, envelope

    path = spec.signal.get('path')
    if path is None: raise ConfigurationError('Source %d: a wav signal needs a "path"' % spec.id)
    data, rate = soundfile.read(path, always_2d=True)
    if rate != sample_rate:
        raise InputError('Source %d: %s has %d Hz, the scene runs at %d Hz' % (spec.id, path, rate, sample_rate))
    data = np.resize(data[:, 0], count)
    rms = np.sqrt(np.mean(data ** 2))
    if rms > 0: data = data / rms
    level = np.abs(data)
    return data, (scipy.signal.fftconvolve(level, np.ones(512) / 512., mode='same') > 0.1).astype(float)


def velvet_tail(count, sample_rate, rt60, rng):
    r"""
    :return: a velvet noise impulse response of ``count`` samples: one random sign pulse per
             1 / 2000 s segment after a 5 ms pre-delay, under an envelope reaching -60 dB at ``rt60``
    """
    response = np.zeros(count)
    start = int(_PRE_DELAY_S * sample_rate)
    spacing = sample_rate / _PULSE_DENSITY
    positions = start + (np.arange(int((count - start) / spacing)) + rng.random(int((count - start) / spacing))) * spacing
    positions = positions.astype(int)
    positions = positions[positions < count]
    signs = rng.choice((-1., 1.), len(positions))
    response[positions] = signs * np.exp(-3. * math.log(10.) * positions / (rt60 * sample_rate))
    return response


def render_source(scene, spec):
    r"""
    :param SceneSpec scene: the scene (geometry, duration, hop, reverberation)
    :param SourceSpec spec: the source to render
    :return: the (M, T) signal the array receives from this source alone, and its activity envelope
    """
    geometry = scene.geometry
    fs = geometry.sample_rate
    count = scene.samples
    rng = np.random.default_rng([scene.seed, 0, spec.id])
    signal, envelope = _source_signal(spec, count, fs, rng)
    signal = spec.gain * signal

    out = np.zeros((geometry.count, count))
    for start in range(0, count, scene.hop):
        stop = min(start + scene.hop, count)
        position = spec.position((start + stop) / 2. / fs)
        for m, mic in enumerate(geometry.positions):
            r = np.linalg.norm(position - mic)
            out[m, start:stop] = _delayed_block(signal, start, stop, r / geometry.speed_of_sound * fs) / r

    if scene.rt60 > 0:
        length = int(1.2 * scene.rt60 * fs)
        for m in range(geometry.count):
            response = velvet_tail(length, fs, scene.rt60, rng)
            tail = scipy.signal.fftconvolve(out[m], response)[:count]
            power = np.mean(tail ** 2)
            if power > 0:
                out[m] += tail * np.sqrt(np.mean(out[m] ** 2) / power / 10 ** (scene.drr_db / 10.))
    return out, envelope


def synthesize(scene):
    r"""
    :param SceneSpec scene: a valid scene
    :return: the (M, T) float audio and its :any:`GroundTruth`

    The same scene (including its seed) always renders the same samples. Sources are rendered with
    independent random streams, so a scene with two sources is the sum of both rendered alone plus
    the noise. If the mix exceeds full scale it is scaled down (with a warning).
    """
    scene.validate()
    geometry = scene.geometry
    count = scene.samples
    clean = np.zeros((geometry.count, count))
    envelopes = {}
    for spec in scene.sources:
        rendered, envelopes[spec.id] = render_source(scene, spec)
        clean += rendered

    audio = clean.copy()
    if scene.snr_db is not None:
        noise = np.random.default_rng([scene.seed, 1]).standard_normal((geometry.count, count))
        clean_power = np.mean(clean ** 2)
        target = clean_power / 10 ** (scene.snr_db / 10.) if clean_power > 0 else 10 ** (scene.noise_level_db / 10.)
        audio += noise * np.sqrt(target / np.mean(noise ** 2))

    peak = np.max(np.abs(audio)) if audio.size else 0.
    if peak > 1.:
        logger.warning('[%s] Mix peaks at %.2f, scaled down to avoid clipping', scene, peak)
        audio *= 0.99 / peak

    records = []
    fs = geometry.sample_rate
    for n in range(scene.frames):
        center = n * scene.hop + scene.length // 2
        t = center / fs
        records.append({'frame': n, 't_seconds': t, 'sources': [
            {'id': spec.id, 'pos_m': spec.position(t).tolist(), 'active': bool(envelopes[spec.id][min(center, count - 1)] > 0.5)}
            for spec in scene.sources]})

    logger.info('Synthesized %s', scene)
    return audio, GroundTruth(records)


def _arc(distance, elevation, azimuths, duration):
    times = np.linspace(0., duration, len(azimuths))
    return [[float(t), (distance * angles_to_direction(az, elevation)).tolist()] for t, az in zip(times, azimuths)]


def _static(distance, elevation, azimuth, duration):
    return [[0., (distance * angles_to_direction(azimuth, elevation)).tolist()]]


def _movers(count, duration):
    starts = (0., 120., 240.)
    sweep = np.linspace(0., 60., 13)
    sources = []
    for i in range(count):
        direction = 1. if i % 2 == 0 else -1.
        sources.append(SourceSpec(i, _arc(1.5 + 0.25 * i, 15. + 10. * i, starts[i] + direction * sweep, duration)))
    return sources


PRESETS = ('static', 'movers1', 'movers2', 'movers3', 'crossing', 'silence', 'static3')


def preset(name, seed=0, duration=10.):
    r"""
    :param str name: one of :any:`PRESETS`
    :return: the :any:`SceneSpec` of a built in scene, all at 7 dB SNR with moderate reverberation
             (rt60 0.3 s):

             * ``static`` one speaker at 1.5 m
             * ``movers1``, ``movers2``, ``movers3`` one to three speakers moving along arcs (below 0.5 m/s)
             * ``crossing`` two speakers whose azimuths cross halfway
             * ``silence`` noise only
             * ``static3`` three speakers standing still at 120 degree spacing

    :raises: ConfigurationError: for an unknown name
    """
    if name == 'static':
        sources = [SourceSpec(0, _static(1.5, 20., 45., duration))]
    elif name in ('movers1', 'movers2', 'movers3'):
        sources = _movers(int(name[-1]), duration)
    elif name == 'crossing':
        sweep = np.linspace(0., 120., 17)
        sources = [SourceSpec(0, _arc(1.5, 10., sweep, duration)),
                   SourceSpec(1, _arc(2., 30., sweep[::-1], duration))]
    elif name == 'silence':
        sources = []
    elif name == 'static3':
        sources = [SourceSpec(i, _static(1.5 + 0.5 * i, 20., 120. * i, duration)) for i in range(3)]
    else:
        raise ConfigurationError('Unknown preset "%s", choose one of %s' % (name, ', '.join(PRESETS)))
    return SceneSpec(duration=duration, sources=sources, snr_db=7., rt60=0.3, seed=seed)
