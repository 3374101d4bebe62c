r"""
Scores tracker output against ground truth.

Every trajectory record is compared to the truth record closest in time. Estimates and active truth sources
are matched greedily, smallest angle first, as long as the angle (seen from the array center) stays within
the gate. From the matches follow the azimuth and distance errors; a truth source whose matched estimate
id changes from one id to another counts as an id switch.
"""
import math
import logging
import numpy as np

from dataclasses import dataclass, asdict
from ArrayTrack.geometry import direction_to_angles

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    r"""
    ``count_accuracy`` is the share of frames with an active truth source in which the number of reported
    sources equals the number of truth sources in the scene. Errors cover matched active truth sources only.
    """
    frames: int = 0
    active_frames: int = 0
    matches: int = 0
    misses: int = 0
    azimuth_rms_deg: float = 0.
    azimuth_max_deg: float = 0.
    distance_rms_pct: float = 0.
    count_accuracy: float = 0.
    id_switches: int = 0
    runtime_s: float = None
    real_time_factor: float = None

    def to_dict(self):
        return asdict(self)

    def __str__(self):
        return ('EvalReport (%d frames): azimuth RMS %.2f deg (max %.2f), distance RMS %.1f %%, '
                'count accuracy %.1f %%, %d id switches'
                % (self.frames, self.azimuth_rms_deg, self.azimuth_max_deg, self.distance_rms_pct,
                   100. * self.count_accuracy, self.id_switches))


def angle_between(a, b):
    r""" The angle between two vectors in degrees """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def azimuth_error(a, b):
    r""" The signed azimuth difference of two vectors in degrees, wrapped to [-180, 180) """
    difference = direction_to_angles(a)[0] - direction_to_angles(b)[0]
    return (difference + 180.) % 360. - 180.


def match(estimates, truths, origin=(0., 0., 0.), gate_deg=20.):
    r"""
    :param estimates: list of ``(id, position)``
    :param truths: list of ``(id, position)``
    :return: list of ``(truth index, estimate index)`` pairs, greedily by ascending angle within the gate
    """
    origin = np.asarray(origin, dtype=float)
    candidates = sorted((angle_between(np.asarray(e[1]) - origin, np.asarray(t[1]) - origin), ti, ei)
                        for ti, t in enumerate(truths) for ei, e in enumerate(estimates))
    used_truths, used_estimates, pairs = set(), set(), []
    for angle, ti, ei in candidates:
        if angle > gate_deg: break
        if ti in used_truths or ei in used_estimates: continue
        used_truths.add(ti)
        used_estimates.add(ei)
        pairs.append((ti, ei))
    return pairs


def evaluate(trajectories, ground_truth, origin=(0., 0., 0.), gate_deg=20.):
    r"""
    :param trajectories: list of trajectory records (as written by the ``track`` command)
    :param GroundTruth ground_truth: the truth of the same scene
    :param origin: the array center
    :param float gate_deg: the largest angle at which an estimate may still match a truth source
    :return: the :any:`EvalReport`; empty inputs give an empty report
    """
    report = EvalReport()
    if not trajectories or ground_truth is None or not len(ground_truth):
        return report

    origin = np.asarray(origin, dtype=float)
    azimuths, distances = [], []
    counted = 0
    last_match = {}

    for record in trajectories:
        truth = ground_truth.at(float(record['t_seconds']))
        estimates = [(s['id'], np.asarray(s['pos_m'], dtype=float)) for s in record.get('sources', [])]
        active = [(s['id'], np.asarray(s['pos_m'], dtype=float)) for s in truth['sources'] if s['active']]
        report.frames += 1
        if not active: continue

        report.active_frames += 1
        if len(estimates) == len(truth['sources']): counted += 1

        pairs = match(estimates, active, origin, gate_deg)
        report.matches += len(pairs)
        report.misses += len(active) - len(pairs)
        for ti, ei in pairs:
            truth_id, truth_pos = active[ti]
            estimate_id, estimate_pos = estimates[ei]
            azimuths.append(azimuth_error(estimate_pos - origin, truth_pos - origin))
            true_distance = np.linalg.norm(truth_pos - origin)
            distances.append((np.linalg.norm(estimate_pos - origin) - true_distance) / true_distance)

            previous = last_match.get(truth_id)
            if previous is not None and previous != estimate_id:
                report.id_switches += 1
                logger.debug('Id switch of truth source %s at %.2f s: %s -> %s', truth_id, record['t_seconds'],
                             previous, estimate_id)
            last_match[truth_id] = estimate_id

    if azimuths:
        azimuths = np.abs(azimuths)
        report.azimuth_rms_deg = float(np.sqrt(np.mean(azimuths ** 2)))
        report.azimuth_max_deg = float(azimuths.max())
        report.distance_rms_pct = float(100. * np.sqrt(np.mean(np.square(distances))))
    if report.active_frames:
        report.count_accuracy = counted / float(report.active_frames)
    return report
