import math
import logging
import numpy as np
import transforms3d as tf

from collections import namedtuple
from ArrayTrack import ConfigurationError

logger = logging.getLogger(__name__)

GridPoint = namedtuple('GridPoint', 'u v direction distance')


def _round_away(x):
    r""" Round to the nearest integer, ties away from zero (``np.round`` rounds ties to even) """
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def log_distances(start, stop, count):
    r"""
    :param float start: the smallest distance in meters
    :param float stop: the largest distance in meters
    :param int count: how many distances
    :return: ``count`` logarithmically spaced distances as ndarray, both ends included
    """
    if count == 1: return np.array([float(start)])
    return np.geomspace(start, stop, count)


def direction_to_angles(vector):
    r"""
    :param vector: a 3D vector (needs not be normalized)
    :return: a tuple ``(azimuth, elevation)`` in degrees, azimuth counter clockwise from the x-axis
    """
    x, y, z = np.asarray(vector, dtype=float)
    norm = math.sqrt(x * x + y * y + z * z)
    if norm == 0: raise ValueError('Cannot compute the angles of a zero vector')
    return math.degrees(math.atan2(y, x)), math.degrees(math.asin(max(-1., min(1., z / norm))))


def angles_to_direction(azimuth, elevation):
    r"""
    :param float azimuth: degrees, counter clockwise from the x-axis
    :param float elevation: degrees above the array plane
    :return: the unit vector as ndarray
    """
    az, el = math.radians(azimuth), math.radians(elevation)
    return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


class MicArrayGeometry(object):
    r"""
    Where the microphones are. All positions are in meters; the search grid is centred on the
    :any:`centroid` of the array and only covers the upper hemisphere, so the array is expected
    to lie in the z = 0 plane.

    A typical array is created like so::

        geometry = MicArrayGeometry.circular()          # 8 mics on a 60 cm circle, 48 kHz
        print(geometry.count, len(geometry.pairs))       # 8 28
        print(geometry.max_delay)                        # 84 samples

    """

    def __init__(self, mic_positions, sample_rate=48000., speed_of_sound=343.):
        r"""
        :param mic_positions: list of [x, y, z] positions in meters, one per microphone
        :param float sample_rate: the sampling rate in Hz
        :param float speed_of_sound: in m/s
        :raises: ConfigurationError: for fewer than two microphones or two coincident microphones
        """
        positions = np.asarray(mic_positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ConfigurationError('Microphone positions must be a list of [x,y,z] points, got shape %s'
                                     % (positions.shape,))
        if positions.shape[0] < 2:
            raise ConfigurationError('An array needs at least 2 microphones, got %d' % positions.shape[0])
        if sample_rate <= 0 or speed_of_sound <= 0:
            raise ConfigurationError('Sample rate and speed of sound must be positive')

        self._positions = positions
        self._sample_rate = float(sample_rate)
        self._speed_of_sound = float(speed_of_sound)
        self._pairs = [(i, j) for i in range(len(positions)) for j in range(i + 1, len(positions))]

        for i, j in self._pairs:
            if np.linalg.norm(positions[i] - positions[j]) <= 0:
                raise ConfigurationError('[%s] Microphones %d and %d coincide' % (self, i, j))

        if np.ptp(positions[:, 2]) > 1e-9:
            logger.warning('%s is not planar, the hemisphere grid cannot resolve the front/back ambiguity', self)

    @staticmethod
    def circular(count=8, diameter=0.6, sample_rate=48000., speed_of_sound=343., yaw_deg=0.):
        r"""
        :param int count: number of microphones
        :param float diameter: circle diameter in meters
        :param float sample_rate: in Hz
        :param float speed_of_sound: in m/s
        :param float yaw_deg: rotation of the whole array around the z-axis in degrees
        :return: a :any:`MicArrayGeometry` with the microphones evenly spaced on a circle in the z = 0 plane,
                 microphone 0 on the x-axis (before rotation)
        """
        angles = 2 * np.pi * np.arange(count) / count
        ring = 0.5 * diameter * np.stack((np.cos(angles), np.sin(angles), np.zeros(count)), axis=1)
        R = tf.euler.euler2mat(0, 0, math.radians(yaw_deg), 'sxyz')
        return MicArrayGeometry(ring.dot(R.T), sample_rate, speed_of_sound)

    @staticmethod
    def from_dict(params):
        r"""
        :param dict params: either ``mic_positions`` (list of [x,y,z]) or ``circular`` (a dict with
                            ``count``, ``diameter`` and ``yaw_deg``), plus optional ``sample_rate`` and
                            ``speed_of_sound``
        :return: the :any:`MicArrayGeometry`
        :raises: ConfigurationError: on unknown keys or when both or none of the layouts are given
        """
        unknown = set(params) - {'mic_positions', 'circular', 'sample_rate', 'speed_of_sound'}
        if unknown:
            raise ConfigurationError('Unknown geometry keys: %s' % ', '.join(sorted(unknown)))
        if ('mic_positions' in params) == ('circular' in params):
            raise ConfigurationError('Geometry needs exactly one of "mic_positions" or "circular"')

        sample_rate = float(params.get('sample_rate', 48000.))
        speed_of_sound = float(params.get('speed_of_sound', 343.))
        if 'mic_positions' in params:
            return MicArrayGeometry(params['mic_positions'], sample_rate, speed_of_sound)

        circular = dict(params['circular'] or {})
        unknown = set(circular) - {'count', 'diameter', 'yaw_deg'}
        if unknown:
            raise ConfigurationError('Unknown geometry.circular keys: %s' % ', '.join(sorted(unknown)))
        return MicArrayGeometry.circular(int(circular.get('count', 8)), float(circular.get('diameter', .6)),
                                         sample_rate, speed_of_sound, float(circular.get('yaw_deg', 0.)))

    def to_dict(self):
        r""" The explicit form accepted by :any:`from_dict` """
        return {'mic_positions': self._positions.tolist(), 'sample_rate': self._sample_rate,
                'speed_of_sound': self._speed_of_sound}

    def __str__(self):
        return "MicArrayGeometry (%d mics/%.0f Hz)" % (self.count, self._sample_rate)

    def __eq__(self, other):
        if not isinstance(other, MicArrayGeometry): return False
        return (np.allclose(self._positions, other._positions)
                and self._sample_rate == other._sample_rate
                and self._speed_of_sound == other._speed_of_sound)

    @property
    def positions(self):
        r""" The microphone positions as (M, 3) ndarray in meters """
        return self._positions

    @property
    def count(self):
        r""" The number of microphones M """
        return self._positions.shape[0]

    @property
    def sample_rate(self):
        return self._sample_rate

    @property
    def speed_of_sound(self):
        return self._speed_of_sound

    @property
    def pairs(self):
        r"""
        All microphone pairs ``(i, j)`` with ``i < j`` as list. The position of a pair in this list is
        the pair index used by the lookup table and the correlation set (28 pairs for 8 mics).
        """
        return self._pairs

    @property
    def centroid(self):
        r""" The array center, from which all grid distances are measured """
        return self._positions.mean(axis=0)

    @property
    def aperture(self):
        r""" The largest distance between two microphones in meters """
        return max(np.linalg.norm(self._positions[i] - self._positions[j]) for i, j in self._pairs)

    @property
    def max_delay(self):
        r""" Upper bound of any pair delay in samples: :math:`\lceil f_s \cdot aperture / c \rceil` """
        return int(math.ceil(self._sample_rate * self.aperture / self._speed_of_sound))


def fold_grid(u, v):
    r"""
    :param float u: grid parameter in [-1, 1]
    :param float v: grid parameter in [-1, 1]
    :return: the unit direction vector as ndarray
    :raises: ValueError: if u or v are outside [-1, 1]

    Fold a square grid onto the upper hemisphere:

    .. math::
        \mathbf{u} = \left[ \frac{v}{\sqrt{u^2+v^2}} \sin\phi, \frac{u}{\sqrt{u^2+v^2}} \sin\phi, \cos\phi \right]^T,
        \quad \phi = \frac{\pi}{2} \max(u^2, v^2)

    The origin (where the ratio is 0/0) maps to the zenith ``[0, 0, 1]``.
    """
    if not (-1 <= u <= 1 and -1 <= v <= 1):
        raise ValueError('Grid parameters must lie in [-1, 1], got u=%s v=%s' % (u, v))
    return _fold(np.array([u], dtype=float), np.array([v], dtype=float))[0]


def _fold(u, v):
    phi = 0.5 * np.pi * np.maximum(u * u, v * v)
    r = np.sqrt(u * u + v * v)
    safe = np.where(r > 0, r, 1.)
    s = np.sin(phi)
    directions = np.stack((v / safe * s, u / safe * s, np.cos(phi)), axis=1)
    directions[r == 0] = (0., 0., 1.)
    return directions


class SearchGrid(object):
    r"""
    The points scanned by the steered beamformer: ``side x side`` directions folded onto the hemisphere
    (see :any:`fold_grid`) times a list of distances.

    The point index is ``k = (iu * side + iv) * D + id`` with ``D`` distances, i.e. distances vary fastest.
    You can index and iterate a grid like a list of :any:`GridPoint` s::

        grid = build_search_grid(41, log_distances(.3, 3., 5))
        print(len(grid))           # 8405
        point = grid[17]
        print(point.direction, point.distance)

    """

    def __init__(self, side, distances):
        self._side = int(side)
        self._distances = np.asarray(distances, dtype=float)
        axis = np.linspace(-1., 1., self._side)
        iu, iv = np.meshgrid(np.arange(self._side), np.arange(self._side), indexing='ij')
        self._u = axis[iu.ravel()]
        self._v = axis[iv.ravel()]
        self._directions = _fold(self._u, self._v)

    def __len__(self):
        return self._side * self._side * len(self._distances)

    def __str__(self):
        return "SearchGrid (%dx%dx%d)" % (self._side, self._side, len(self._distances))

    def __getitem__(self, k):
        if not 0 <= k < len(self): raise IndexError('[%s] No grid point %d' % (self, k))
        d, idist = divmod(k, len(self._distances))
        return GridPoint(u=self._u[d], v=self._v[d], direction=self._directions[d], distance=self._distances[idist])

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    @property
    def points(self):
        r""" Generator over all :any:`GridPoint` s in index order """
        return iter(self)

    @property
    def direction_resolution(self):
        r""" The grid side count """
        return self._side

    @property
    def distances(self):
        return self._distances

    @property
    def step(self):
        r""" The spacing of u and v between two neighbouring grid lines """
        return 2. / (self._side - 1)

    @property
    def directions(self):
        r""" The ``side*side`` unit directions as ndarray, in direction index order """
        return self._directions

    def direction_index(self, k):
        r""" The direction index of grid point ``k`` (i.e. ``iu * side + iv``) """
        return k // len(self._distances)

    def uv(self, k):
        r""" The grid parameters ``(u, v)`` of point ``k`` """
        d = self.direction_index(k)
        return self._u[d], self._v[d]

    def index(self, iu, iv, idist):
        r""" The point index ``k`` for the grid line indices and a distance index (array friendly) """
        return (np.asarray(iu) * self._side + np.asarray(iv)) * len(self._distances) + np.asarray(idist)

    def positions(self, origin=(0., 0., 0.), indices=None):
        r"""
        :param origin: the point the distances are measured from, usually :any:`MicArrayGeometry.centroid`
        :param indices: optional subset of point indices; all points if None
        :return: the 3D positions in meters as (N, 3) ndarray
        """
        if indices is None: indices = np.arange(len(self))
        indices = np.asarray(indices)
        D = len(self._distances)
        return (np.asarray(origin, dtype=float)
                + self._directions[indices // D] * self._distances[indices % D][:, None])

    def neighbourhood(self, u, v, half_width):
        r"""
        :param float u: center of the neighbourhood
        :param float v: center of the neighbourhood
        :param float half_width: half side length of the square neighbourhood in (u, v) units
        :return: all point indices (every distance) whose (u, v) lie in the square, ascending
        """
        axis = np.linspace(-1., 1., self._side)
        eps = 1e-9
        iu = np.flatnonzero(np.abs(axis - u) <= half_width + eps)
        iv = np.flatnonzero(np.abs(axis - v) <= half_width + eps)
        D = len(self._distances)
        return self.index(iu[:, None, None], iv[None, :, None], np.arange(D)[None, None, :]).ravel()


def build_search_grid(side, distances):
    r"""
    :param int side: number of grid lines for u and v, at least 2
    :param distances: ascending, strictly positive list of distances in meters
    :return: a :any:`SearchGrid` with ``side * side * len(distances)`` points
    :raises: ConfigurationError: for an empty, non-positive or unsorted distance list, or side < 2
    """
    if side < 2:
        raise ConfigurationError('A search grid needs at least 2 lines per side, got %s' % side)
    distances = np.asarray(distances, dtype=float)
    if distances.size == 0:
        raise ConfigurationError('A search grid needs at least one distance')
    if np.any(distances <= 0) or np.any(np.diff(distances) <= 0):
        raise ConfigurationError('Grid distances must be strictly positive and ascending, got %s' % distances)
    return SearchGrid(side, distances)


def compute_tdoa(source, i, j, geom):
    r"""
    :param source: the 3D source position in meters
    :param int i: first microphone index
    :param int j: second microphone index, different from i
    :param MicArrayGeometry geom: the array
    :return: the integer delay of microphone i relative to j in samples

    .. math:: \tau_{ij} = \mathrm{round}\left(\frac{f_s}{c} \left(\|s - m_i\| - \|s - m_j\|\right)\right)

    Ties are rounded away from zero. Swapping i and j negates the result.
    """
    if i == j: raise ValueError('[%s] A delay needs two different microphones, got %d twice' % (geom, i))
    source = np.asarray(source, dtype=float)
    di = np.linalg.norm(source - geom.positions[i])
    dj = np.linalg.norm(source - geom.positions[j])
    if di == 0 or dj == 0:
        raise ValueError('[%s] Source %s coincides with a microphone' % (geom, source))
    return int(_round_away(geom.sample_rate / geom.speed_of_sound * (di - dj)))


class TdoaLookupTable(object):
    r"""
    Precomputed pair delays for every point of a :any:`SearchGrid`.

    :any:`delays` is an (N, P) int16 array: row k holds the correlation lags (modulo L) of all P pairs
    for grid point k, so that evaluating one point touches one contiguous span of memory. For the
    default coarse grid (N = 8405, M = 8) the table holds 8405 x 28 entries (about 460 kB).
    """

    def __init__(self, delays, pairs, length):
        self._delays = np.ascontiguousarray(delays, dtype=np.int16)
        self._delays.flags.writeable = False
        self._pairs = list(pairs)
        self._length = int(length)

    def __len__(self):
        return self._delays.shape[0]

    def __str__(self):
        return "TdoaLookupTable (%dx%d/L=%d)" % (self._delays.shape[0], self._delays.shape[1], self._length)

    @property
    def delays(self):
        return self._delays

    @property
    def pairs(self):
        return self._pairs

    @property
    def length(self):
        r""" The correlation length L the lags are wrapped to """
        return self._length

    @property
    def entries(self):
        return self._delays.size

    def lookup(self, k, i, j):
        r"""
        :return: the stored lag of pair (i, j) at grid point k. Asking for (j, i) returns the
                 mirrored lag ``(L - lag) mod L``.
        """
        if (i, j) in self._pairs:
            return int(self._delays[k, self._pairs.index((i, j))])
        if (j, i) in self._pairs:
            return int((self._length - self._delays[k, self._pairs.index((j, i))]) % self._length)
        raise KeyError('[%s] Unknown microphone pair (%d, %d)' % (self, i, j))


def build_lookup_table(grid, geom, L=1024, chunk=65536):
    r"""
    :param SearchGrid grid: the grid whose points to tabulate
    :param MicArrayGeometry geom: the array
    :param int L: the correlation length (analysis window length)
    :param int chunk: how many grid points to process at once, bounds the temporary memory
    :return: a :any:`TdoaLookupTable` with ``delays[k, p] = compute_tdoa(point_k, i_p, j_p) mod L``
    :raises: ConfigurationError: if any delay magnitude reaches L/2 (array too large for the window)
    """
    pairs = geom.pairs
    first = np.array([i for i, _ in pairs])
    second = np.array([j for _, j in pairs])
    scale = geom.sample_rate / geom.speed_of_sound
    delays = np.empty((len(grid), len(pairs)), dtype=np.int16)

    for start in range(0, len(grid), chunk):
        indices = np.arange(start, min(start + chunk, len(grid)))
        points = grid.positions(geom.centroid, indices)
        dist = np.linalg.norm(points[:, None, :] - geom.positions[None, :, :], axis=2)
        raw = _round_away(scale * (dist[:, first] - dist[:, second]))
        if np.any(np.abs(raw) >= L / 2):
            raise ConfigurationError('[%s] Delays up to %d samples do not fit a correlation of length %d'
                                     % (geom, np.abs(raw).max(), L))
        delays[indices] = np.mod(raw, L).astype(np.int16)

    table = TdoaLookupTable(delays, pairs, L)
    logger.info('Built %s for %s', table, grid)
    return table
