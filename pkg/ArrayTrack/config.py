r"""
Configuration of the whole pipeline. A config file (YAML or JSON) only needs the keys it changes, every
other value keeps the default below::

    geometry:
      circular: {count: 8, diameter: 0.6}
    spectral:
      rt60: 0.5
    grid:
      coarse_distances: {min: 0.3, max: 3.0, count: 5, spacing: log}
    tracker:
      energy_threshold: 2.5
    seed: 7

Unknown keys are rejected with their dotted path (e.g. ``tracker.sigma_dir``), and :any:`PipelineConfig.validate`
checks the preconditions of every module when the file is loaded, not when the first frame arrives.
"""
import json
import logging
import os.path as p
import dataclasses
import numpy as np
import yaml

from dataclasses import dataclass, field
from ArrayTrack import ConfigurationError
from ArrayTrack.geometry import MicArrayGeometry, build_search_grid, log_distances
from ArrayTrack.localization import FINE_SEARCH_MODES
from ArrayTrack.spectral import gamma_from_rt60
from ArrayTrack.tracker import TrackerConfig

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ('jsonl', 'csv')
WAV_SUBTYPES = ('PCM_16', 'FLOAT')


@dataclass
class GeometryConfig:
    r""" Either explicit ``mic_positions`` or the ``circular`` shorthand (used when no positions are given) """
    mic_positions: list = None
    circular: dict = field(default_factory=lambda: {'count': 8, 'diameter': 0.6, 'yaw_deg': 0.})
    sample_rate: float = 48000.
    speed_of_sound: float = 343.

    def build(self):
        params = {'sample_rate': self.sample_rate, 'speed_of_sound': self.speed_of_sound}
        if self.mic_positions is not None: params['mic_positions'] = self.mic_positions
        else: params['circular'] = self.circular
        return MicArrayGeometry.from_dict(params)


@dataclass
class NoiseConfig:
    alpha: float = 0.05
    smoothing: float = 0.8
    window: int = 150
    gate: float = 5.


@dataclass
class SpectralConfig:
    length: int = 1024
    hop: int = 512
    window: str = 'hann'
    alpha_dd: float = 0.97
    rt60: float = 0.3
    srr: float = 10.
    average_frames: int = 4
    noise: NoiseConfig = field(default_factory=NoiseConfig)


@dataclass
class GridConfig:
    r""" Distances are a list in meters or a range ``{min, max, count, spacing: log|linear}`` """
    coarse_side: int = 41
    coarse_distances: object = field(default_factory=lambda: {'min': 0.3, 'max': 3., 'count': 5, 'spacing': 'log'})
    fine_side: int = 201
    fine_distances: object = field(default_factory=lambda: {'min': 0.3, 'max': 3., 'count': 25, 'spacing': 'log'})


@dataclass
class LocalizationConfig:
    sources: int = 2
    fine_search: str = 'local'
    neighbourhood: float = 1.5


@dataclass
class OutputConfig:
    format: str = 'jsonl'
    path: str = None
    wav_subtype: str = 'PCM_16'


def resolve_distances(value, name='distances'):
    r"""
    :param value: a list of distances or a dict ``{min, max, count, spacing}``
    :return: the distances as ndarray
    :raises: ConfigurationError: for a malformed range
    """
    if isinstance(value, dict):
        unknown = set(value) - {'min', 'max', 'count', 'spacing'}
        if unknown: raise ConfigurationError('Unknown %s keys: %s' % (name, ', '.join(sorted(unknown))))
        for key in ('min', 'max', 'count'):
            if key not in value: raise ConfigurationError('Could not find %s in %s' % (key, name))
        spacing = value.get('spacing', 'log')
        if spacing == 'log':
            if value['min'] <= 0: raise ConfigurationError('%s: log spacing needs a positive minimum' % name)
            return log_distances(value['min'], value['max'], int(value['count']))
        if spacing == 'linear':
            return np.linspace(value['min'], value['max'], int(value['count']))
        raise ConfigurationError('%s: unknown spacing "%s", use log or linear' % (name, spacing))
    return np.asarray(value, dtype=float)


def _typed(value, kind, path):
    r"""
    :return: ``value`` checked against the annotated field type, ints widened to float
    :raises: ConfigurationError: naming the dotted key
    """
    if value is None or kind not in (bool, int, float, str, list, dict): return value
    if kind is float and isinstance(value, int) and not isinstance(value, bool): return float(value)
    if kind is int and isinstance(value, float) and value.is_integer(): return int(value)
    if isinstance(value, kind) and not (kind is not bool and isinstance(value, bool)): return value
    raise ConfigurationError('%s must be of type %s, got %r' % (path, kind.__name__, value))


def _from_dict(cls, params, prefix):
    if params is None: params = {}
    if not isinstance(params, dict):
        raise ConfigurationError('%s must be a mapping, got %r' % (prefix or 'config', params))

    default = cls()
    known = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, value in params.items():
        path = '%s.%s' % (prefix, key) if prefix else key
        if key not in known: raise ConfigurationError('Unknown configuration key "%s"' % path)
        current = getattr(default, key)
        if dataclasses.is_dataclass(current): values[key] = _from_dict(type(current), value, path)
        else: values[key] = _typed(value, known[key].type, path)
    return cls(**values)


@dataclass
class PipelineConfig:
    r"""
    Every constant of the pipeline, grouped per module. Build it from a dict with :any:`from_dict`, from a file with
    :any:`load`, or just use the defaults::

        config = PipelineConfig.load('Tests/valid/config.yaml')
        geometry = config.geometry.build()

    """
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    localization: LocalizationConfig = field(default_factory=LocalizationConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    threads: int = 1

    @staticmethod
    def from_dict(params):
        r"""
        :raises: ConfigurationError: on unknown keys, wrongly typed values or violated preconditions
        """
        try:
            return _from_dict(PipelineConfig, params, '').validate()
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as error:
            raise ConfigurationError('Malformed configuration: %s' % error)

    @staticmethod
    def load(path):
        r"""
        :param str path: a YAML or JSON file
        :raises: IOError: if the file does not exist
        :raises: ConfigurationError: on unknown keys, unparsable content or violated preconditions
        """
        path = p.expandvars(p.expanduser(path))
        if not p.exists(path): raise IOError('Could not find config file %s' % path)
        with open(path) as stream:
            try:
                params = yaml.safe_load(stream)
            except yaml.YAMLError as error:
                raise ConfigurationError('Could not parse %s: %s' % (path, error))
        config = PipelineConfig.from_dict(params)
        logger.debug('Loaded configuration from %s', path)
        return config

    def to_dict(self):
        return dataclasses.asdict(self)

    def save(self, path):
        with open(path, 'w') as stream:
            if path.endswith('.json'): json.dump(self.to_dict(), stream, indent=2)
            else: yaml.safe_dump(self.to_dict(), stream, default_flow_style=None)

    @property
    def frame_period(self):
        r""" Seconds between two localization passes: hop * average_frames / sample rate """
        return self.spectral.hop * self.spectral.average_frames / float(self.geometry.sample_rate)

    @property
    def gamma(self):
        return gamma_from_rt60(self.spectral.rt60, self.spectral.hop, self.geometry.sample_rate)

    def tracker_config(self):
        r""" The tracker constants with ``delta_t`` set to the localization :any:`frame_period` """
        if abs(self.tracker.delta_t - self.frame_period) > 1e-9 and self.tracker.delta_t != TrackerConfig.delta_t:
            logger.warning('tracker.delta_t=%s replaced by the localization period %.5f s',
                           self.tracker.delta_t, self.frame_period)
        return dataclasses.replace(self.tracker, delta_t=self.frame_period)

    def distances(self):
        r""" The (coarse, fine) grid distances as ndarrays """
        return (resolve_distances(self.grid.coarse_distances, 'grid.coarse_distances'),
                resolve_distances(self.grid.fine_distances, 'grid.fine_distances'))

    def validate(self):
        r"""
        Check the preconditions of every module.

        :return: self
        :raises: ConfigurationError: naming the offending key
        """
        geometry = self.geometry.build()
        s = self.spectral
        if s.length < 4 or s.length % 2:
            raise ConfigurationError('spectral.length must be even and at least 4, got %s' % s.length)
        if not 0 < s.hop <= s.length:
            raise ConfigurationError('spectral.hop must lie in (0, %d], got %s' % (s.length, s.hop))
        if not 0 <= s.alpha_dd < 1:
            raise ConfigurationError('spectral.alpha_dd must lie in [0, 1), got %s' % s.alpha_dd)
        if s.rt60 < 0: raise ConfigurationError('spectral.rt60 must not be negative, got %s' % s.rt60)
        if s.srr <= 0: raise ConfigurationError('spectral.srr must be positive, got %s' % s.srr)
        if s.average_frames < 1:
            raise ConfigurationError('spectral.average_frames must be at least 1, got %s' % s.average_frames)
        if not 0 < s.noise.alpha <= 1 or not 0 <= s.noise.smoothing < 1:
            raise ConfigurationError('spectral.noise.alpha must lie in (0, 1] and smoothing in [0, 1)')
        if s.noise.window < 1 or s.noise.gate < 1:
            raise ConfigurationError('spectral.noise.window and gate must be at least 1')
        if geometry.max_delay >= s.length / 2:
            raise ConfigurationError('[%s] Delays up to %d samples do not fit spectral.length=%d'
                                     % (geometry, geometry.max_delay, s.length))

        coarse, fine = self.distances()
        build_search_grid(self.grid.coarse_side, coarse)
        build_search_grid(self.grid.fine_side, fine)

        l = self.localization
        if not 1 <= l.sources <= 4:
            raise ConfigurationError('localization.sources must lie in [1, 4], got %s' % l.sources)
        if l.fine_search not in FINE_SEARCH_MODES:
            raise ConfigurationError('localization.fine_search must be one of %s, got %s'
                                     % (FINE_SEARCH_MODES, l.fine_search))
        if l.neighbourhood <= 0:
            raise ConfigurationError('localization.neighbourhood must be positive, got %s' % l.neighbourhood)

        self.tracker.validate()
        if self.output.format not in OUTPUT_FORMATS:
            raise ConfigurationError('output.format must be one of %s, got %s' % (OUTPUT_FORMATS, self.output.format))
        if self.output.wav_subtype not in WAV_SUBTYPES:
            raise ConfigurationError('output.wav_subtype must be one of %s, got %s'
                                     % (WAV_SUBTYPES, self.output.wav_subtype))
        if self.threads < 1: raise ConfigurationError('threads must be at least 1, got %s' % self.threads)
        return self
