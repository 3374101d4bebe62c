"""
.. module:: ArrayTrack
   :platform: Unix, Windows
   :synopsis: Localize and track multiple sound sources with a circular microphone array

"""
import numpy as np

__version__ = '1.0'


class ConfigurationError(ValueError):
    r"""Raised when a configuration violates a precondition of one of the modules
    (unknown keys, empty distance lists, an array too large for the analysis window, ...)"""


class InputError(ValueError):
    r"""Raised when audio or stream input does not match the configured array
    (wrong channel count, wrong sample rate, malformed records)"""


class StateError(RuntimeError):
    r"""Raised when a stateful object is queried before it holds any data"""


class Interpolation:
    r"""Interpolation lets you calculate intermediate values between two waypoints, based on a given formula.

    Sources in a simulated scene move along waypoints given at sparse instants, while the renderer
    needs one position per analysis hop (every 512 samples). Between two waypoints the position is
    interpolated with one of these functions. You can hand your own function to a
    :any:`SourceSpec <ArrayTrack.simulator.SourceSpec>` as long as it has the same signature::

        def hop_in_the_middle(a, b, t, a0, b0):
            return a if t < .5 else b

        spec = SourceSpec(id=0, waypoints=..., interpolation=hop_in_the_middle)

    """

    @staticmethod
    def linear(a, b, t, *_):
        r"""
        :param a: (float/ndarray) the lower bound from which to interpolate
        :param b: (float/ndarray) the upper bound to which to interpolate
        :param t: (float) the value between 0 .. 1 of the interpolation
        :param _: further args are ignored but required in the function definition (see :any:`cubic`)
        :rtype: float/ndarray

        Interpolate linearly between two points

        .. math:: x(t) = \left (1 - t \right ) \cdot a + t \cdot b

        Example::

            # Halfway between two source positions
            p1 = np.array([1.5, 0, 0])
            p2 = np.array([0, 1.5, 0])
            p  = Interpolation.linear(p1, p2, .5)   # np.array([0.75, 0.75, 0])

        """
        return (1 - t) * a + t * b

    @staticmethod
    def cubic(a, b, t, a0=None, b0=None):
        r"""
        :param a: (float/ndarray) the lower bound from which to interpolate
        :param b: (float/ndarray) the upper bound to which to interpolate
        :param t: (float) the value between 0 .. 1 of the interpolation
        :param a0: (float/ndarray) the waypoint before a, from which the tangent in a is calculated. If None, a0 = a
        :param b0: (float/ndarray) the waypoint after b, from which the tangent in b is calculated. If None, b0 = b
        :rtype: float/ndarray

        Interpolate cubically (Catmull-Rom) between two points, which gives smooth trajectories
        through all waypoints of a moving source. Note that a, b, a0 and b0 must all have the same shape.

        .. math::
            x(t) = a + \frac{1}{2} t \cdot \left ( b - a_0 + t \cdot \left (2 a_0 - 5 a + 4 b - b_0 + t \cdot \left (3 \cdot \left (a - b \right ) + b_0 - a_0 \right ) \right ) \right )
        """
        if a0 is None: a0 = a
        if b0 is None: b0 = b
        return a + 0.5 * t * (b - a0 + t * (2.0 * a0 - 5.0 * a + 4.0 * b - b0 + t * (3.0 * (a - b) + b0 - a0)))

    @staticmethod
    def along(times, points, t, method=None):
        r"""
        :param times: (ndarray) ascending waypoint instants in seconds, shape (W,)
        :param points: (ndarray) waypoint positions, shape (W, 3)
        :param t: (float) the instant at which to evaluate the trajectory
        :param method: one of the interpolation functions (default :any:`linear`)
        :return: the position at ``t`` as ndarray. Before the first (after the last) waypoint the
                 first (last) position is held.

        Evaluate a piecewise trajectory, picking the segment around ``t`` and its outer neighbours
        for the tangents of :any:`cubic`.
        """
        if method is None: method = Interpolation.linear
        times = np.asarray(times, dtype=float)
        points = np.asarray(points, dtype=float)
        if t <= times[0]:  return points[0].copy()
        if t >= times[-1]: return points[-1].copy()

        idx = int(np.searchsorted(times, t, side='right'))
        a, b = points[idx - 1], points[idx]
        a0 = points[idx - 2] if idx - 2 >= 0 else a
        b0 = points[idx + 1] if idx + 1 < len(points) else b
        s = (t - times[idx - 1]) / (times[idx] - times[idx - 1])
        return np.asarray(method(a, b, s, a0, b0), dtype=float)
