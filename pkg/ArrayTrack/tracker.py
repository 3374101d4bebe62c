r"""
Multi-source particle filter. Every tracked source owns a cloud of particles (position and velocity)
and two probabilities: that it exists and that it is currently active (emitting sound). One call of
:any:`track_step` per beamformer output runs:

1. :any:`predict` moves the particles with the excitation-damping model
2. :any:`observation_confidence` turns each observation energy into the probability that it is real
3. :any:`assignment_probabilities` decides which observation belongs to which source, is a false
   alarm or a new source
4. :any:`update_weights` and :any:`update_observability` fold the observations into every source
5. :any:`manage_sources` creates sources for confident new observations and removes stale ones
6. :any:`estimate` reports the sources which most probably exist
7. :any:`resample_if_needed` keeps the particle clouds healthy

Observations are hypothesised to be a false alarm (assignment value -2), a new source (-1) or one of
the tracked sources (0 .. N_s - 1).
"""
import math
import itertools
import logging
import numpy as np
import transforms3d as tf

from collections import namedtuple, Counter
from dataclasses import dataclass, field
from ArrayTrack import ConfigurationError

logger = logging.getLogger(__name__)

Particle = namedtuple('Particle', 'position velocity weight')
SourceEstimate = namedtuple('SourceEstimate', 'id position timestamp existence')


@dataclass
class TrackerConfig:
    r"""
    All constants of the tracker. Distances are in meters, times in seconds, angles in degrees.
    ``n_min`` is the effective sample size below which a source is resampled, ``n_particles / 3`` if None.
    """
    n_particles: int = 500
    alpha: float = 2.
    beta: float = 0.04
    delta_t: float = 512. * 4 / 48000.
    energy_threshold: float = 3.
    sigma_dir_deg: float = 3.
    sigma_dist_rel: float = 0.15
    p_new: float = 0.005
    p_false: float = 0.05
    n_min: float = None
    birth_threshold: float = 0.3
    death_timeout_s: float = 2.
    markov_stay_active: float = 0.95
    markov_become_active: float = 0.05
    existence_keep: float = 0.9
    report_threshold: float = 0.5
    min_distance: float = 0.3
    max_distance: float = 3.
    exhaustive_assignment: bool = False

    @property
    def resample_threshold(self):
        return self.n_particles / 3. if self.n_min is None else float(self.n_min)

    @property
    def sigma_dir(self):
        r""" Direction standard deviation in radians """
        return math.radians(self.sigma_dir_deg)

    @property
    def search_volume(self):
        r""" Volume of the hemispherical shell the observations come from, in cubic meters """
        return 2. / 3. * math.pi * (self.max_distance ** 3 - self.min_distance ** 3)

    def validate(self):
        r"""
        :raises: ConfigurationError: naming the first offending field
        """
        for name in ('p_new', 'p_false', 'birth_threshold', 'markov_stay_active', 'markov_become_active',
                     'existence_keep', 'report_threshold'):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ConfigurationError('tracker.%s must be a probability, got %s' % (name, value))
        if self.n_particles < 1:
            raise ConfigurationError('tracker.n_particles must be positive, got %s' % self.n_particles)
        if not 0 < self.resample_threshold < self.n_particles:
            raise ConfigurationError('tracker.n_min must lie in (0, n_particles), got %s' % self.resample_threshold)
        for name in ('alpha', 'delta_t', 'energy_threshold', 'sigma_dir_deg', 'sigma_dist_rel', 'death_timeout_s'):
            if not getattr(self, name) > 0:
                raise ConfigurationError('tracker.%s must be positive, got %s' % (name, getattr(self, name)))
        if self.beta < 0:
            raise ConfigurationError('tracker.beta must not be negative, got %s' % self.beta)
        if not 0 < self.min_distance < self.max_distance:
            raise ConfigurationError('tracker distances must satisfy 0 < min_distance < max_distance')
        return self


class TrackedSource(object):
    r"""
    One tracked source: ``n`` particles with positions, velocities and weights, the probabilities that the
    source exists and that it is active, and its own random generator.
    """

    def __init__(self, id, positions, velocities, rng, existence=0.5, activity=0.5, born=0.):
        self.id = int(id)
        self.positions = np.array(positions, dtype=float)
        self.velocities = np.array(velocities, dtype=float)
        self.weights = np.full(len(self.positions), 1. / len(self.positions))
        self.rng = rng
        self.existence = float(existence)
        self.activity = float(activity)
        self.frames_unobserved = 0
        self.born = born

    def __len__(self):
        return len(self.weights)

    def __str__(self):
        return "TrackedSource %d (P(E)=%.2f/P(A)=%.2f)" % (self.id, self.existence, self.activity)

    def particle(self, i):
        return Particle(self.positions[i], self.velocities[i], self.weights[i])

    @property
    def particles(self):
        r""" Generator over all :any:`Particle` s """
        return (self.particle(i) for i in range(len(self)))

    @property
    def effective_size(self):
        r""" :math:`N_{eff} = 1 / \sum_i w_i^2` """
        return 1. / np.sum(self.weights ** 2)


@dataclass
class AssignmentPosterior:
    r"""
    Marginal probabilities of the observation-to-source assignment: ``P_qj[q, j]`` that observation q
    belongs to source ``source_ids[j]``, ``P_q_false[q]`` that it is a false alarm and ``P_q_new[q]``
    that it is a new source. Every observation's probabilities sum to 1.
    """
    P_qj: np.ndarray
    P_q_false: np.ndarray
    P_q_new: np.ndarray
    source_ids: list

    def column(self, source_id):
        return self.P_qj[:, self.source_ids.index(source_id)]

    def observed(self, source_id):
        r""" :math:`P_j = \sum_q P_{q,j}`, clipped to [0, 1] """
        return float(min(1., max(0., self.column(source_id).sum())))


@dataclass
class TrackerState:
    r"""
    Everything the tracker carries from one update to the next. ``origin`` is the point observation
    directions and distances refer to (the array centroid). Every new source spawns its own random
    generator from ``seed_sequence`` in birth order.
    """
    seed: int = None
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sources: list = field(default_factory=list)
    next_id: int = 0
    time: float = 0.
    updates: int = 0
    diagnostics: Counter = field(default_factory=Counter)
    seed_sequence: np.random.SeedSequence = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        if self.seed_sequence is None:
            self.seed_sequence = np.random.SeedSequence(self.seed)

    def spawn_rng(self):
        return np.random.default_rng(self.seed_sequence.spawn(1)[0])


def predict(source, cfg, rng=None):
    r"""
    :param TrackedSource source: updated in place
    :param TrackerConfig cfg: uses alpha, beta and delta_t
    :param rng: a ``numpy.random.Generator``, the source's own if None
    :return: the source

    Excitation-damping model, per particle:

    .. math::
        \dot{x} \leftarrow a\dot{x} + bF_x, \quad x \leftarrow x + \Delta T \dot{x}, \quad
        a = e^{-\alpha\Delta T}, \quad b = \beta\sqrt{1 - a^2}

    """
    if rng is None: rng = source.rng
    a = math.exp(-cfg.alpha * cfg.delta_t)
    b = cfg.beta * math.sqrt(1. - a * a)
    source.velocities = a * source.velocities + b * rng.standard_normal(source.velocities.shape)
    source.positions = source.positions + cfg.delta_t * source.velocities
    return source


def observation_confidence(energy, cfg):
    r"""
    :param float energy: the beamformer energy of an observation
    :return: the probability :math:`P_q` that the observation is a real source

    .. math:: P_q = \begin{cases} \nu^2/2, & \nu \leq 1 \\ 1 - \nu^{-2}/2, & \nu > 1 \end{cases}, \quad \nu = E / E_T
    """
    nu = max(0., energy) / cfg.energy_threshold
    return nu * nu / 2. if nu <= 1 else 1. - 0.5 / (nu * nu)


def observation_likelihood(obs, positions, cfg, origin=(0., 0., 0.)):
    r"""
    :param Observation obs: the observation
    :param positions: one (3,) or many (N, 3) particle positions in meters
    :param TrackerConfig cfg: uses sigma_dir_deg and sigma_dist_rel
    :param origin: the point observations refer to
    :return: the density :math:`p(O_q | x)` per position (float for a single position)

    The density is the isotropic normal on the sphere in the angle between the observed direction and the
    particle direction, times a normal in distance with :math:`\sigma = 0.15 d_{obs}`. The angular part is
    converted to a volume density at the observed distance so that it compares to the uniform density of
    false alarms and new sources. A particle at the origin has density 0.
    """
    positions = np.asarray(positions, dtype=float)
    single = positions.ndim == 1
    offsets = np.atleast_2d(positions) - np.asarray(origin, dtype=float)
    distance = np.linalg.norm(offsets, axis=1)
    direction = np.asarray(obs.direction, dtype=float)

    cross = np.linalg.norm(np.cross(offsets, direction), axis=1)
    theta = np.arctan2(cross, offsets.dot(direction))

    sigma = cfg.sigma_dir
    d_obs = float(obs.distance)
    sigma_d = cfg.sigma_dist_rel * d_obs
    angular = np.exp(-0.5 * theta * theta / (sigma * sigma)) / (2. * math.pi * sigma * sigma) / (d_obs * d_obs)
    radial = np.exp(-0.5 * ((distance - d_obs) / sigma_d) ** 2) / (math.sqrt(2. * math.pi) * sigma_d)
    density = np.where(distance > 0, angular * radial, 0.)
    return float(density[0]) if single else density


def predicted_activity(source, cfg):
    r""" The activity probability propagated one step through the two state Markov chain """
    return (cfg.markov_stay_active * source.activity
            + cfg.markov_become_active * (1. - source.activity))


def observability(source, cfg):
    r""" :math:`P(Obs_j) = P(E_j) P(A_j)`, with the propagated activity """
    return source.existence * predicted_activity(source, cfg)


def _scores(confidences, densities, observabilities, cfg):
    r"""
    The unnormalized per-observation terms :math:`P(f(q)) p(O_q | f(q))` as (Q, N_s + 2) array,
    columns: false alarm, new source, tracked sources. A row without any mass counts as false alarm.
    """
    P_q = np.asarray(confidences, dtype=float)[:, None]
    uniform = 1. / cfg.search_volume
    scores = np.hstack(((1. - P_q) * cfg.p_false * uniform,
                        P_q * cfg.p_new * uniform,
                        P_q * np.asarray(observabilities)[None, :] * densities))
    empty = scores.sum(axis=1) <= 0
    scores[empty] = 0.
    scores[empty, 0] = 1.
    return scores


def enumerate_assignments(scores):
    r"""
    :param scores: (Q, N_s + 2) per-observation terms (see :any:`assignment_probabilities`)
    :return: the (Q, N_s + 2) marginals, by summing :math:`\prod_q` over all :math:`(N_s + 2)^Q`
             assignment functions
    """
    Q, H = scores.shape
    marginals = np.zeros((Q, H))
    total = 0.
    for f in itertools.product(range(H), repeat=Q):
        p = 1.
        for q, h in enumerate(f): p *= scores[q, h]
        total += p
        for q, h in enumerate(f): marginals[q, h] += p
    return marginals / total


def assignment_probabilities(obs_list, sources, cfg, confidences=None, densities=None):
    r"""
    :param obs_list: the observations of this frame
    :param sources: the tracked sources
    :param TrackerConfig cfg: uses the priors and, with ``exhaustive_assignment``, the slow path
    :param confidences: :math:`P_q` per observation (computed if None)
    :param densities: (Q, N_s) :math:`p(O_q | j) = \sum_i w_{j,i} p(O_q | x_{j,i})` (computed if None)
    :return: :any:`AssignmentPosterior`

    The prior of an assignment f is :math:`\prod_q P(f(q))` with

    .. math::
        P(f(q)) = \begin{cases} (1 - P_q) P_{false} & f(q) = -2 \\ P_q P_{new} & f(q) = -1 \\
                  P_q P(Obs_j) & f(q) = j \end{cases}

    and false alarms and new sources are uniformly distributed over the search volume. Since prior and
    likelihood factor over the observations, the marginals are the per-observation normalized terms;
    the enumeration over all assignment functions (``exhaustive_assignment``) gives the same result.
    """
    if confidences is None:
        confidences = [observation_confidence(o.energy, cfg) for o in obs_list]
    if densities is None:
        densities = np.array([[np.dot(s.weights, observation_likelihood(o, s.positions, cfg)) for s in sources]
                              for o in obs_list]).reshape(len(obs_list), len(sources))

    scores = _scores(confidences, densities, [observability(s, cfg) for s in sources], cfg)
    if cfg.exhaustive_assignment:
        marginals = enumerate_assignments(scores)
    else:
        marginals = scores / scores.sum(axis=1, keepdims=True)

    posterior = AssignmentPosterior(marginals[:, 2:], marginals[:, 0], marginals[:, 1], [s.id for s in sources])
    logger.debug('Assignment: false %s, new %s, sources %s', posterior.P_q_false, posterior.P_q_new,
                 posterior.P_qj.tolist())
    return posterior


def update_weights(source, obs_list, assign, cfg, likelihoods=None, diagnostics=None):
    r"""
    :param TrackedSource source: updated in place
    :param obs_list: the observations of this frame
    :param AssignmentPosterior assign: the marginals of this frame
    :param likelihoods: (Q, N) :math:`p(O_q | x_i)` of the source's particles (computed if None)
    :param Counter diagnostics: counts degenerate updates under ``degenerate_updates``
    :return: the source

    .. math::
        p(x_i | O) = \frac{1 - P_j}{N} + P_j \frac{\sum_q P_{q,j} p(O_q | x_i)}{\sum_{i'} \sum_q P_{q,j} p(O_q | x_{i'})},
        \quad w_i \propto p(x_i | O) w_i

    If the weighted likelihoods all vanish the weights are left unchanged.
    """
    n = len(source)
    if likelihoods is None:
        likelihoods = np.array([observation_likelihood(o, source.positions, cfg) for o in obs_list]).reshape(-1, n)

    P_j = assign.observed(source.id)
    support = assign.column(source.id).dot(likelihoods) if len(obs_list) else np.zeros(n)
    normalizer = support.sum()

    if P_j > 0 and not normalizer > 0:
        _degenerate(source, diagnostics)
        return source

    posterior = np.full(n, (1. - P_j) / n)
    if P_j > 0: posterior += P_j * support / normalizer
    weights = posterior * source.weights
    total = weights.sum()
    if not (total > 0 and np.isfinite(total)):
        _degenerate(source, diagnostics)
        return source

    source.weights = weights / total
    return source


def _degenerate(source, diagnostics):
    logger.debug('[%s] Degenerate weight update, weights kept', source)
    if diagnostics is not None: diagnostics['degenerate_updates'] += 1


def update_observability(source, assign, cfg):
    r"""
    :param TrackedSource source: updated in place
    :param AssignmentPosterior assign: the marginals of this frame
    :return: the source

    The activity is propagated through the Markov chain and then updated with Bayes' rule, taking
    :math:`P_j` as the evidence for "active" and :math:`1 - P_j` as the evidence for "inactive". The existence
    becomes :math:`P_j + (1 - P_j) \cdot keep \cdot P(E_j)`.
    """
    P_j = assign.observed(source.id)
    prior = predicted_activity(source, cfg)
    evidence = P_j * prior + (1. - P_j) * (1. - prior)
    source.activity = P_j * prior / evidence if evidence > 0 else prior
    source.existence = min(1., max(0., P_j + (1. - P_j) * cfg.existence_keep * source.existence))
    source.frames_unobserved = source.frames_unobserved + 1 if P_j < 0.5 else 0
    return source


def spawn_source(state, obs, cfg, existence):
    r"""
    :return: a new :any:`TrackedSource` whose particles are spread around the observation by the
             observation noise: directions jittered by ``sigma_dir_deg``, distances by ``sigma_dist_rel``,
             velocities zero mean with standard deviation ``beta``
    """
    rng = state.spawn_rng()
    n = cfg.n_particles
    direction = np.asarray(obs.direction, dtype=float)
    directions = np.empty((n, 3))
    for i in range(n):
        axis = np.cross(direction, rng.standard_normal(3))
        if np.linalg.norm(axis) == 0: axis = np.cross(direction, (1., 0., 0.))
        directions[i] = tf.axangles.axangle2mat(axis, rng.normal(0., cfg.sigma_dir)).dot(direction)

    distances = np.maximum(obs.distance * (1. + cfg.sigma_dist_rel * rng.standard_normal(n)), 0.1 * cfg.min_distance)
    positions = state.origin + directions * distances[:, None]
    velocities = cfg.beta * rng.standard_normal((n, 3))

    source = TrackedSource(state.next_id, positions, velocities, rng, existence=existence, activity=0.5,
                           born=state.time)
    state.next_id += 1
    return source


def manage_sources(state, obs_list, assign, cfg):
    r"""
    :param TrackerState state: updated in place
    :return: the state

    Every observation with :math:`P_q(H_2)` above ``birth_threshold`` creates a new source (its existence
    starts at that probability). Sources not observed for more than ``death_timeout_s`` are removed.
    """
    survivors = []
    for source in state.sources:
        if source.frames_unobserved * cfg.delta_t > cfg.death_timeout_s:
            logger.info('Source %d removed after %.2f s unobserved', source.id, source.frames_unobserved * cfg.delta_t)
            state.diagnostics['deaths'] += 1
        else:
            survivors.append(source)
    state.sources = survivors

    for q, obs in enumerate(obs_list):
        if assign.P_q_new[q] > cfg.birth_threshold:
            source = spawn_source(state, obs, cfg, float(assign.P_q_new[q]))
            state.sources.append(source)
            state.diagnostics['births'] += 1
            logger.info('Source %d born at %.2f s (P_new=%.2f, %.2f m)', source.id, state.time,
                        assign.P_q_new[q], obs.distance)
    return state


def estimate(source, timestamp=0.):
    r"""
    :return: :any:`SourceEstimate` at the weighted mean of the particle positions
    """
    return SourceEstimate(source.id, source.weights.dot(source.positions), timestamp, source.existence)


def resample_if_needed(source, cfg, rng=None):
    r"""
    :param TrackedSource source: updated in place
    :param TrackerConfig cfg: uses the resampling threshold N_min
    :param rng: a ``numpy.random.Generator``, the source's own if None
    :return: the source, systematically resampled to equal weights if :math:`N_{eff} < N_{min}`
    """
    if source.effective_size >= cfg.resample_threshold:
        return source
    if rng is None: rng = source.rng

    n = len(source)
    cumulative = np.cumsum(source.weights)
    cumulative[-1] = 1.
    picks = np.minimum(np.searchsorted(cumulative, (rng.random() + np.arange(n)) / n, side='right'), n - 1)
    source.positions = source.positions[picks]
    source.velocities = source.velocities[picks]
    source.weights = np.full(n, 1. / n)
    return source


def track_step(state, beamformer_output, cfg, timestamp=None):
    r"""
    :param TrackerState state: updated in place
    :param BeamformerOutput beamformer_output: the observations of this update
    :param TrackerConfig cfg: the constants
    :param float timestamp: the time of this update in seconds (previous + delta_t if None)
    :return: the state and the list of :any:`SourceEstimate` s of the sources with existence above
             ``report_threshold``
    """
    state.time = state.time + cfg.delta_t if timestamp is None else float(timestamp)
    state.updates += 1
    observations = list(beamformer_output.observations)

    for source in state.sources:
        predict(source, cfg)

    confidences = [observation_confidence(o.energy, cfg) for o in observations]
    likelihoods = [np.array([observation_likelihood(o, s.positions, cfg, state.origin) for o in observations])
                   .reshape(len(observations), len(s)) for s in state.sources]
    densities = np.array([lk.dot(s.weights) for lk, s in zip(likelihoods, state.sources)]).T
    densities = densities.reshape(len(observations), len(state.sources))
    assign = assignment_probabilities(observations, state.sources, cfg, confidences, densities)

    for source, lk in zip(state.sources, likelihoods):
        update_weights(source, observations, assign, cfg, lk, state.diagnostics)
        update_observability(source, assign, cfg)

    manage_sources(state, observations, assign, cfg)

    estimates = [estimate(s, state.time) for s in state.sources if s.existence > cfg.report_threshold]

    for source in state.sources:
        resample_if_needed(source, cfg)
    return state, estimates
