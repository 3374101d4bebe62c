r"""
The steered beamformer: lookup-and-sum maximization of the beamformer energy over the search grids.

The energy of grid point k is the sum of the pair correlations at the lags the point implies:

.. math:: E_k = \sum_{(i,j)} R_{ij}\left(\mathrm{lookup}(k, i, j)\right)

:any:`search_sources` looks for Q sources per pass. Each iteration scans the coarse grid, refines the
winner on the fine grid and clears the lags it used, so that the next iteration finds the next source
instead of the same one again. Q observations are always returned, even for silence; telling real
sources from false alarms is left to the :any:`tracker <ArrayTrack.tracker>`.
"""
import logging
import numpy as np

from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from ArrayTrack import ConfigurationError
from ArrayTrack.geometry import build_lookup_table

logger = logging.getLogger(__name__)

Observation = namedtuple('Observation', 'direction distance energy grid_index')
BeamformerOutput = namedtuple('BeamformerOutput', 'frame_index observations')
SearchLevel = namedtuple('SearchLevel', 'grid table')

FINE_SEARCH_MODES = ('local', 'global', 'none')


class SearchStatistics(object):
    r"""
    Counts table lookups. A coarse pass over N grid points with P pairs costs exactly N * P lookups
    (and as many additions); :any:`coarse_lookups` keeps that number for the last pass.
    """

    def __init__(self):
        self.passes = 0
        self.coarse_lookups = 0
        self.fine_lookups = 0
        self.total_lookups = 0

    def __str__(self):
        return "SearchStatistics (%d passes/%d lookups)" % (self.passes, self.total_lookups)

    def record(self, coarse, fine):
        self.passes += 1
        self.coarse_lookups = coarse
        self.fine_lookups = fine
        self.total_lookups += coarse + fine


def _offsets(table):
    return np.arange(len(table.pairs), dtype=np.intp) * table.length


def _energies(flat, table, indices=None, chunk=65536):
    offsets = _offsets(table)
    if indices is None:
        indices = np.arange(len(table))
    result = np.empty(len(indices))
    for start in range(0, len(indices), chunk):
        part = indices[start:start + chunk]
        result[start:start + chunk] = flat[table.delays[part].astype(np.intp) + offsets].sum(axis=1)
    return result


def steered_energy(k, corr, table):
    r"""
    :param int k: grid point index
    :param CorrelationSet corr: the pair correlations
    :param TdoaLookupTable table: the table of the grid containing k
    :return: the energy :math:`E_k` as float
    """
    return float(corr.flat[table.delays[k].astype(np.intp) + _offsets(table)].sum())


def scan(corr, table, indices=None, executor=None, workers=1):
    r"""
    :param CorrelationSet corr: the pair correlations
    :param TdoaLookupTable table: the table to scan
    :param indices: the grid points to evaluate (all if None)
    :param executor: an optional ``concurrent.futures`` executor to split the scan over ``workers`` chunks
    :return: the energies of the evaluated points as ndarray, in the order of ``indices``
    """
    flat = corr.flat
    if indices is None: indices = np.arange(len(table))
    if executor is None or workers <= 1:
        return _energies(flat, table, indices)

    chunks = np.array_split(indices, workers)
    return np.concatenate(list(executor.map(lambda part: _energies(flat, table, part), chunks)))


def search_sources(corr, coarse, fine=None, Q=2, mode='local', half_width=1.5, stats=None, executor=None, workers=1):
    r"""
    :param CorrelationSet corr: the pair correlations of this pass (not modified, a copy is cleared)
    :param SearchLevel coarse: coarse grid and its lookup table
    :param SearchLevel fine: fine grid and its lookup table, or None to skip the refinement
    :param int Q: the number of sources to look for
    :param str mode: ``local`` refines within ``half_width`` coarse cells around the coarse winner,
                     ``global`` scans the whole fine grid, ``none`` keeps the coarse winner
    :param float half_width: half side of the local refinement square in coarse cells
    :param SearchStatistics stats: optional lookup counter
    :return: :any:`BeamformerOutput` with Q :any:`Observation` s by descending energy
             (the frame index is left at -1)

    Ties break toward the lowest grid index. The energy of an observation is measured before its lags
    are cleared. Correlations can be negative, so clearing a winner may raise the energy of a later one;
    the observations are therefore sorted (stable) once all Q are found.
    """
    if Q < 1: raise ValueError('Need to look for at least one source, got Q=%s' % Q)
    if mode not in FINE_SEARCH_MODES:
        raise ConfigurationError('Unknown fine search mode "%s", use one of %s' % (mode, FINE_SEARCH_MODES))
    if fine is None: mode = 'none'

    corr = corr.copy()
    flat = corr.flat
    observations = []
    coarse_lookups, fine_lookups = 0, 0

    for _ in range(Q):
        energies = scan(corr, coarse.table, executor=executor, workers=workers)
        coarse_lookups += energies.size * len(coarse.table.pairs)
        kc = int(np.argmax(energies))
        level, k, energy = coarse, kc, float(energies[kc])

        if mode != 'none':
            candidates = None
            if mode == 'local':
                u, v = coarse.grid.uv(kc)
                candidates = fine.grid.neighbourhood(u, v, half_width * coarse.grid.step)
            fine_energies = scan(corr, fine.table, candidates, executor, workers)
            fine_lookups += fine_energies.size * len(fine.table.pairs)
            best = int(np.argmax(fine_energies))
            level, energy = fine, float(fine_energies[best])
            k = best if candidates is None else int(candidates[best])

        point = level.grid[k]
        observations.append(Observation(np.array(point.direction), float(point.distance), energy, k))
        logger.debug('Source candidate %d: grid point %d, energy %.4f', len(observations) - 1, k, energy)

        flat[level.table.delays[k].astype(np.intp) + _offsets(level.table)] = 0.
        if level is not coarse:
            flat[coarse.table.delays[kc].astype(np.intp) + _offsets(coarse.table)] = 0.

    if stats is not None: stats.record(coarse_lookups // Q, fine_lookups)
    return BeamformerOutput(-1, sorted(observations, key=lambda o: -o.energy))


class SteeredBeamformer(object):
    r"""
    Holds everything a search needs: the grids, their lookup tables (built once on construction) and an
    optional thread pool for the coarse scan. The result does not depend on the number of threads::

        geometry = MicArrayGeometry.circular()
        coarse = build_search_grid(41, log_distances(.3, 3., 5))
        fine = build_search_grid(201, log_distances(.3, 3., 25))
        with SteeredBeamformer(geometry, coarse, fine) as beamformer:
            output = beamformer.locate(correlation_set, frame_index=12)

    """

    def __init__(self, geometry, coarse_grid, fine_grid=None, length=1024, sources=2, fine_search='local',
                 neighbourhood=1.5, threads=1):
        if not 1 <= sources <= 4:
            raise ConfigurationError('The beamformer looks for 1 to 4 sources, got %s' % sources)
        if fine_search not in FINE_SEARCH_MODES:
            raise ConfigurationError('Unknown fine search mode "%s", use one of %s' % (fine_search, FINE_SEARCH_MODES))

        self._geometry = geometry
        self._coarse = SearchLevel(coarse_grid, build_lookup_table(coarse_grid, geometry, length))
        self._fine = None
        if fine_grid is not None and fine_search != 'none':
            self._fine = SearchLevel(fine_grid, build_lookup_table(fine_grid, geometry, length))
        self._sources = int(sources)
        self._mode = fine_search if self._fine is not None else 'none'
        self._neighbourhood = float(neighbourhood)
        self._threads = max(1, int(threads))
        self._executor = ThreadPoolExecutor(self._threads) if self._threads > 1 else None
        self.statistics = SearchStatistics()

    def __str__(self):
        return "SteeredBeamformer (Q=%d/%s)" % (self._sources, self._mode)

    def __enter__(self):
        return self

    def __exit__(self, *_):
        self.close()

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    @property
    def geometry(self):
        return self._geometry

    @property
    def coarse(self):
        return self._coarse

    @property
    def fine(self):
        return self._fine

    @property
    def sources(self):
        return self._sources

    def locate(self, corr, frame_index=0):
        r"""
        :param CorrelationSet corr: the averaged pair correlations
        :param int frame_index: stamped on the output
        :return: the :any:`BeamformerOutput` of this pass
        """
        output = search_sources(corr, self._coarse, self._fine, self._sources, self._mode, self._neighbourhood,
                                self.statistics, self._executor, self._threads)
        return output._replace(frame_index=frame_index)
