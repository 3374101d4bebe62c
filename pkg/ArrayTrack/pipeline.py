r"""
The streaming pipeline: sample blocks → frames → spectral weights → pair correlations → steered
beamformer → tracker, and the writers for its output.

Localization runs once per ``average_frames`` analysis frames, on the correlations averaged over exactly
those frames. Every pass yields one :any:`Update`::

    config = PipelineConfig.load('config.yaml')
    for update in run_pipeline(config, Recording('scene.wav', config.geometry.build())):
        for estimate in update.estimates:
            print(update.t_seconds, estimate.id, estimate.position)

"""
import csv
import json
import sys
import time
import logging
import dataclasses
import numpy as np

from collections import namedtuple
from ArrayTrack.correlation import CrossSpectrumAccumulator, accumulate, correlations
from ArrayTrack.geometry import build_search_grid, direction_to_angles
from ArrayTrack.localization import SteeredBeamformer
from ArrayTrack.spectral import FrameBuffer, SpectralFrontend
from ArrayTrack.tracker import TrackerState, track_step

logger = logging.getLogger(__name__)

Update = namedtuple('Update', 'frame_index t_seconds output estimates')

CSV_COLUMNS = ('t_seconds', 'id', 'x', 'y', 'z', 'azimuth_deg', 'elevation_deg', 'distance_m', 'existence')

_BLOCK = 4096


class Pipeline(object):
    r"""
    All stages of one run, wired from a :any:`PipelineConfig <ArrayTrack.config.PipelineConfig>`. Building
    it builds the grids and lookup tables, which takes a moment for the default fine grid.

    :param config: the validated configuration
    :param bool track: if False only the beamformer runs and the updates carry no estimates
    """

    def __init__(self, config, track=True):
        self.config = config
        self.geometry = config.geometry.build()
        s = config.spectral
        coarse_distances, fine_distances = config.distances()
        coarse = build_search_grid(config.grid.coarse_side, coarse_distances)
        fine = None
        if config.localization.fine_search != 'none':
            fine = build_search_grid(config.grid.fine_side, fine_distances)

        self.buffer = FrameBuffer(self.geometry.count, s.length, s.hop)
        self.frontend = SpectralFrontend(self.geometry.count, s.length, config.gamma, s.srr, s.alpha_dd,
                                         dataclasses.asdict(s.noise), s.window)
        self.accumulator = CrossSpectrumAccumulator(self.geometry.pairs, s.length // 2 + 1, s.average_frames)
        self.beamformer = SteeredBeamformer(self.geometry, coarse, fine, s.length, config.localization.sources,
                                            config.localization.fine_search, config.localization.neighbourhood,
                                            config.threads)
        self.tracker = config.tracker_config() if track else None
        self.state = TrackerState(seed=config.seed, origin=self.geometry.centroid)
        logger.info('Pipeline ready: %s, %s', self.geometry, self.beamformer)

    def __enter__(self):
        return self

    def __exit__(self, *_):
        self.close()

    def close(self):
        self.beamformer.close()

    def timestamp(self, frame_index):
        r""" The center of the ``average_frames`` analysis windows ending with ``frame_index``, in seconds """
        s = self.config.spectral
        first = frame_index - (s.average_frames - 1)
        return ((first + frame_index) / 2. * s.hop + s.length / 2.) / self.geometry.sample_rate

    def push(self, block):
        r"""
        :param block: (M, n) samples, in order
        :return: generator of the :any:`Update` s completed by this block
        """
        s = self.config.spectral
        for index, samples in self.buffer.push(block):
            frame = self.frontend.transform(samples, index)
            accumulate(self.accumulator, frame, self.frontend.process(frame))
            if (index + 1) % s.average_frames: continue

            output = self.beamformer.locate(correlations(self.accumulator), index)
            t = self.timestamp(index)
            estimates = []
            if self.tracker is not None:
                _, estimates = track_step(self.state, output, self.tracker, t)
            yield Update(index, t, output, estimates)


def _blocks(source):
    if hasattr(source, 'blocks'):
        for block in source.blocks(_BLOCK): yield block
        return
    audio = np.atleast_2d(np.asarray(source, dtype=float))
    for start in range(0, audio.shape[1], _BLOCK):
        yield audio[:, start:start + _BLOCK]


def run_pipeline(config, source, track=True):
    r"""
    :param config: the validated :any:`PipelineConfig <ArrayTrack.config.PipelineConfig>`
    :param source: a :any:`Recording <ArrayTrack.recording.Recording>` or an (M, T) array, e.g. from
                   :any:`synthesize <ArrayTrack.simulator.synthesize>`
    :param bool track: run the tracker (False: beamformer observations only)
    :return: generator of :any:`Update` s, one per localization pass
    """
    with Pipeline(config, track) as pipeline:
        for block in _blocks(source):
            for update in pipeline.push(block):
                yield update
        diagnostics = pipeline.state.diagnostics
        logger.info('Processed %d frames, %d births, %d deaths, %d degenerate weight updates',
                    pipeline.buffer.frames_emitted, diagnostics['births'], diagnostics['deaths'],
                    diagnostics['degenerate_updates'])


def observation_record(update):
    r""" The JSONL record of the beamformer output of an :any:`Update` """
    return {'frame': int(update.frame_index), 't_seconds': round(float(update.t_seconds), 6),
            'observations': [{'dir': [round(float(x), 6) for x in o.direction], 'dist_m': round(float(o.distance), 6),
                              'energy': round(float(o.energy), 6)} for o in update.output.observations]}


def estimate_fields(estimate, origin=(0., 0., 0.)):
    r""" The output fields of one source estimate: position, angles and distance from ``origin`` """
    position = np.asarray(estimate.position, dtype=float)
    offset = position - np.asarray(origin, dtype=float)
    distance = float(np.linalg.norm(offset))
    azimuth, elevation = direction_to_angles(offset) if distance > 0 else (0., 0.)
    return {'id': int(estimate.id), 'pos_m': [round(float(x), 6) for x in position],
            'azimuth_deg': round(azimuth, 4), 'elevation_deg': round(elevation, 4),
            'distance_m': round(distance, 6), 'existence': round(float(estimate.existence), 6)}


def trajectory_record(update, origin=(0., 0., 0.)):
    r""" The JSONL record of the tracker estimates of an :any:`Update` """
    return {'t_seconds': round(float(update.t_seconds), 6),
            'sources': [estimate_fields(e, origin) for e in update.estimates]}


class RecordWriter(object):
    r"""
    Writes records as JSON lines or, for trajectories, as CSV rows (columns :any:`CSV_COLUMNS`) to a file
    or to stdout (``path`` None or ``-``). Records are written in the order they arrive.
    """

    def __init__(self, path=None, format='jsonl'):
        self._path = path
        self._format = format
        self._own = path not in (None, '-')
        self._stream = open(path, 'w', newline='') if self._own else sys.stdout
        self._csv = None
        if format == 'csv':
            self._csv = csv.writer(self._stream)
            self._csv.writerow(CSV_COLUMNS)
        self.count = 0

    def __enter__(self):
        return self

    def __exit__(self, *_):
        self.close()

    def write(self, record):
        if self._csv is None:
            self._stream.write(json.dumps(record) + '\n')
        else:
            for source in record.get('sources', []):
                x, y, z = source['pos_m']
                self._csv.writerow((record['t_seconds'], source['id'], x, y, z, source['azimuth_deg'],
                                    source['elevation_deg'], source['distance_m'], source['existence']))
        self.count += 1

    def close(self):
        if self._own: self._stream.close()
        else: self._stream.flush()
        if self._own: logger.info('Wrote %d records to %s', self.count, self._path)


def read_trajectories(path):
    r"""
    :param str path: a trajectory JSONL file as written by the ``track`` command
    :return: list of records ``{'t_seconds': .., 'sources': [{'id': .., 'pos_m': [..]}, ..]}``
    """
    with open(path) as stream:
        return [json.loads(line) for line in stream if line.strip()]


def measure(config, audio, track=True):
    r"""
    Run the pipeline on in-memory audio and time it (grid and table construction excluded).

    :return: a dict with the audio duration, wall time, ``real_time_factor`` (audio / wall, above 1 means
             faster than real time), ``load`` (wall / audio, the share of one core), the number of updates and
             the lookup count of the last coarse pass
    """
    audio = np.atleast_2d(audio)
    pipeline = Pipeline(config, track)
    try:
        start = time.perf_counter()
        updates = sum(1 for block in _blocks(audio) for _ in pipeline.push(block))
        wall = time.perf_counter() - start
    finally:
        pipeline.close()

    duration = audio.shape[1] / float(pipeline.geometry.sample_rate)
    result = {'audio_s': duration, 'wall_s': wall, 'real_time_factor': duration / wall if wall > 0 else float('inf'),
              'load': wall / duration if duration else 0., 'updates': updates,
              'coarse_lookups': pipeline.beamformer.statistics.coarse_lookups, 'threads': config.threads}
    logger.info('Processed %.2f s of audio in %.2f s (real time factor %.3f)', duration, wall,
                result['real_time_factor'])
    return result


def calibrate(config, speech, noise, truth=None):
    r"""
    Suggest an energy threshold E_T from the top observation energies of a speech scene and a noise only scene.

    :param speech: (M, T) audio with at least one source
    :param noise: (M, T) audio without sources
    :param GroundTruth truth: if given, only speech passes with an active source count
    :return: a dict with both medians and ``energy_threshold`` = speech median / 2, so that a typical
             speech observation gets :math:`\nu \approx 2`
    """
    def top_energies(audio, active_only):
        energies = []
        for update in run_pipeline(config, audio, track=False):
            if active_only:
                record = truth.at(update.t_seconds)
                if record is None or not any(s['active'] for s in record['sources']): continue
            energies.append(update.output.observations[0].energy)
        return np.array(energies)

    speech_energies = top_energies(speech, truth is not None)
    noise_energies = top_energies(noise, False)
    speech_median = float(np.median(speech_energies)) if speech_energies.size else 0.
    noise_median = float(np.median(noise_energies)) if noise_energies.size else 0.
    if speech_median <= noise_median:
        logger.warning('Speech energies (median %.3f) do not exceed the noise energies (median %.3f)',
                       speech_median, noise_median)
    return {'speech_median': speech_median, 'noise_median': noise_median,
            'energy_threshold': speech_median / 2., 'speech_passes': int(speech_energies.size),
            'noise_passes': int(noise_energies.size)}
