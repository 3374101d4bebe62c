import math
import unittest
import itertools
import numpy as np

from dataclasses import replace
from ArrayTrack import ConfigurationError
from ArrayTrack.geometry import angles_to_direction, direction_to_angles
from ArrayTrack.localization import Observation, BeamformerOutput
from ArrayTrack.tracker import (TrackerConfig, TrackedSource, TrackerState, AssignmentPosterior, predict,
                                observation_confidence, observation_likelihood, assignment_probabilities,
                                enumerate_assignments, update_weights, update_observability, manage_sources,
                                estimate, resample_if_needed, track_step, predicted_activity)


def observation(az, el, distance=1.5, energy=9.):
    return Observation(angles_to_direction(az, el), distance, energy, 0)


def source_at(id, position, n=50, seed=0, spread=.02):
    rng = np.random.default_rng(seed)
    positions = np.asarray(position, dtype=float) + spread * rng.standard_normal((n, 3))
    return TrackedSource(id, positions, np.zeros((n, 3)), rng)


def angle(a, b):
    return math.degrees(math.acos(min(1., np.dot(a, b) / np.linalg.norm(a) / np.linalg.norm(b))))


class TestTrackerConfig(unittest.TestCase):

    def test_defaults(self):
        cfg = TrackerConfig().validate()
        self.assertEqual(cfg.n_particles, 500)
        self.assertAlmostEqual(cfg.resample_threshold, 500 / 3.)
        self.assertAlmostEqual(1. / cfg.search_volume, .0177, places=4)

    def test_invalid_values_raise(self):
        for changes in ({'p_new': 1.5}, {'n_min': 500}, {'beta': -.1}, {'alpha': 0.}, {'min_distance': 4.}):
            with self.assertRaises(ConfigurationError):
                replace(TrackerConfig(), **changes).validate()


class TestPredict(unittest.TestCase):

    def setUp(self):
        self.cfg = TrackerConfig(alpha=2., beta=0., delta_t=.04)

    def test_without_excitation_velocity_is_damped(self):
        source = TrackedSource(0, np.zeros((3, 3)), np.ones((3, 3)), np.random.default_rng(0))
        predict(source, self.cfg)
        a = math.exp(-.08)
        self.assertAlmostEqual(a, .92312, places=5)
        np.testing.assert_allclose(source.velocities, a)
        np.testing.assert_allclose(source.positions, .04 * a)

    def test_strong_damping_stops_particles(self):
        cfg = replace(self.cfg, alpha=1e4)
        source = TrackedSource(0, np.ones((2, 3)), np.full((2, 3), 5.), np.random.default_rng(0))
        predict(source, cfg)
        np.testing.assert_allclose(source.velocities, 0., atol=1e-12)
        np.testing.assert_allclose(source.positions, 1., atol=1e-12)

    def test_excitation_keeps_velocity_spread_at_beta(self):
        cfg = TrackerConfig(beta=.5)
        source = TrackedSource(0, np.zeros((4000, 3)), np.zeros((4000, 3)), np.random.default_rng(1))
        for _ in range(100):
            predict(source, cfg)
        self.assertAlmostEqual(source.velocities.std(), .5, delta=.03)


class TestObservationConfidence(unittest.TestCase):

    def setUp(self):
        self.cfg = TrackerConfig(energy_threshold=3.)

    def test_examples(self):
        self.assertAlmostEqual(observation_confidence(3., self.cfg), .5)
        self.assertAlmostEqual(observation_confidence(1.5, self.cfg), .125)
        self.assertAlmostEqual(observation_confidence(6., self.cfg), .875)
        self.assertEqual(observation_confidence(0., self.cfg), 0.)
        self.assertEqual(observation_confidence(-1., self.cfg), 0.)

    def test_depends_only_on_the_energy_ratio(self):
        scaled = TrackerConfig(energy_threshold=30.)
        for energy in (.3, 2., 3., 7., 50.):
            self.assertAlmostEqual(observation_confidence(energy, self.cfg),
                                   observation_confidence(10 * energy, scaled))

    def test_monotone(self):
        values = [observation_confidence(e, self.cfg) for e in np.linspace(0, 20, 200)]
        self.assertTrue(np.all(np.diff(values) >= 0))
        self.assertLess(values[-1], 1.)


class TestObservationLikelihood(unittest.TestCase):

    def setUp(self):
        self.cfg = TrackerConfig()
        self.obs = observation(30., 20.)

    def test_mode_at_the_observed_point(self):
        mode = observation_likelihood(self.obs, self.obs.direction * 1.5, self.cfg)
        for position in (self.obs.direction * 1.4, 1.5 * angles_to_direction(31., 20.)):
            self.assertLess(observation_likelihood(self.obs, position, self.cfg), mode)
        self.assertAlmostEqual(mode, 45.8, delta=.5)

    def test_one_sigma_off_direction(self):
        mode = observation_likelihood(self.obs, self.obs.direction * 1.5, self.cfg)
        off = observation_likelihood(self.obs, 1.5 * angles_to_direction(30., 23.), self.cfg)
        self.assertAlmostEqual(off / mode, math.exp(-.5), places=6)

    def test_symmetric_around_the_direction(self):
        left = observation_likelihood(self.obs, 1.5 * angles_to_direction(30., 25.), self.cfg)
        right = observation_likelihood(self.obs, 1.5 * angles_to_direction(30., 15.), self.cfg)
        self.assertAlmostEqual(left, right)

    def test_vectorized_and_origin(self):
        positions = np.array([self.obs.direction * 1.5, np.zeros(3), self.obs.direction * 3.])
        densities = observation_likelihood(self.obs, positions, self.cfg)
        self.assertEqual(densities.shape, (3,))
        self.assertEqual(densities[1], 0.)
        self.assertAlmostEqual(densities[0], observation_likelihood(self.obs, positions[0], self.cfg))

    def test_origin_shifts_the_frame(self):
        origin = np.array([1., 2., 0.])
        shifted = observation_likelihood(self.obs, origin + self.obs.direction * 1.5, self.cfg, origin)
        centred = observation_likelihood(self.obs, self.obs.direction * 1.5, self.cfg)
        self.assertAlmostEqual(shifted, centred)


class TestAssignmentProbabilities(unittest.TestCase):

    def setUp(self):
        self.cfg = TrackerConfig()

    def test_single_observation_without_sources(self):
        posterior = assignment_probabilities([observation(0., 20., energy=3.)], [], self.cfg)
        self.assertEqual(posterior.P_qj.shape, (1, 0))
        self.assertAlmostEqual(posterior.P_q_false[0], .05 / .055)
        self.assertAlmostEqual(posterior.P_q_new[0], .005 / .055)

    def test_strong_observation_is_probably_new(self):
        strong = assignment_probabilities([observation(0., 20., energy=9.)], [], self.cfg)
        weak = assignment_probabilities([observation(0., 20., energy=.9)], [], self.cfg)
        self.assertAlmostEqual(strong.P_q_new[0], .63, delta=.01)
        self.assertLess(weak.P_q_new[0], .01)

    def test_observation_near_a_source_is_assigned_to_it(self):
        obs = observation(0., 20.)
        posterior = assignment_probabilities([obs], [source_at(4, obs.direction * 1.5)], self.cfg)
        self.assertEqual(posterior.source_ids, [4])
        self.assertGreater(posterior.observed(4), .99)

    def test_fast_path_equals_enumeration(self):
        observations = [observation(0., 20., energy=5.), observation(80., 40., 2., energy=2.)]
        sources = [source_at(0, observations[0].direction * 1.5, seed=1),
                   source_at(1, 1.9 * angles_to_direction(78., 38.), seed=2)]
        sources[1].existence = .7
        fast = assignment_probabilities(observations, sources, self.cfg)
        slow = assignment_probabilities(observations, sources, replace(self.cfg, exhaustive_assignment=True))
        np.testing.assert_allclose(fast.P_qj, slow.P_qj, atol=1e-12)
        np.testing.assert_allclose(fast.P_q_new, slow.P_q_new, atol=1e-12)
        np.testing.assert_allclose(fast.P_q_false, slow.P_q_false, atol=1e-12)
        np.testing.assert_allclose(fast.P_qj.sum(axis=1) + fast.P_q_new + fast.P_q_false, 1.)

    def test_enumeration_against_brute_force(self):
        scores = np.random.default_rng(3).uniform(0, 1, (3, 4))
        marginals = enumerate_assignments(scores)
        expected = np.zeros((3, 4))
        for f in itertools.product(range(4), repeat=3):
            p = np.prod([scores[q, h] for q, h in enumerate(f)])
            for q, h in enumerate(f):
                expected[q, h] += p
        np.testing.assert_allclose(marginals, expected / expected.sum(axis=1, keepdims=True))

    def test_without_observations(self):
        posterior = assignment_probabilities([], [source_at(0, (1., 0, 1.))], self.cfg)
        self.assertEqual(posterior.P_qj.shape, (0, 1))
        self.assertEqual(posterior.observed(0), 0.)


class TestUpdateWeights(unittest.TestCase):

    def setUp(self):
        self.cfg = TrackerConfig()
        self.obs = observation(0., 20.)

    def _posterior(self, P):
        return AssignmentPosterior(np.array([[P]]), np.array([1. - P]), np.array([0.]), [0])

    def test_unobserved_source_keeps_its_weights(self):
        source = source_at(0, self.obs.direction * 1.5)
        source.weights = np.random.default_rng(0).dirichlet(np.ones(len(source)))
        before = source.weights.copy()
        update_weights(source, [self.obs], self._posterior(0.), self.cfg)
        np.testing.assert_allclose(source.weights, before)

    def test_single_particle_gets_all_weight(self):
        source = source_at(0, self.obs.direction * 1.5, n=1)
        update_weights(source, [self.obs], self._posterior(.8), self.cfg)
        np.testing.assert_allclose(source.weights, [1.])

    def test_certain_observation_weights_by_likelihood(self):
        source = source_at(0, self.obs.direction * 1.5, n=3)
        likelihoods = np.array([[1., 2., 5.]])
        update_weights(source, [self.obs], self._posterior(1.), self.cfg, likelihoods)
        np.testing.assert_allclose(source.weights, [.125, .25, .625])

    def test_partial_observation_mixes_with_uniform(self):
        source = source_at(0, self.obs.direction * 1.5, n=2)
        update_weights(source, [self.obs], self._posterior(.5), self.cfg, np.array([[1., 3.]]))
        np.testing.assert_allclose(source.weights, [.25 + .125, .25 + .375])

    def test_vanishing_likelihoods_are_counted(self):
        source = source_at(0, self.obs.direction * 1.5, n=4)
        diagnostics = {'degenerate_updates': 0}
        update_weights(source, [self.obs], self._posterior(1.), self.cfg, np.zeros((1, 4)), diagnostics)
        np.testing.assert_allclose(source.weights, .25)
        self.assertEqual(diagnostics['degenerate_updates'], 1)

    def test_vanishing_likelihoods_are_logged_at_debug_level(self):
        source = source_at(0, self.obs.direction * 1.5, n=4)
        with self.assertLogs('ArrayTrack.tracker', 'DEBUG') as logs:
            for _ in range(5):
                update_weights(source, [self.obs], self._posterior(1.), self.cfg, np.zeros((1, 4)))
        self.assertEqual(len(logs.records), 5)
        self.assertTrue(all(r.levelname == 'DEBUG' for r in logs.records))


class TestUpdateObservability(unittest.TestCase):

    def setUp(self):
        self.cfg = TrackerConfig()

    def _posterior(self, P):
        return AssignmentPosterior(np.array([[P]]), np.array([1. - P]), np.array([0.]), [0])

    def test_half_evidence_leaves_half_activity(self):
        source = source_at(0, (1., 0, 1.))
        update_observability(source, self._posterior(.5), self.cfg)
        self.assertAlmostEqual(source.activity, .5)
        self.assertAlmostEqual(source.existence, .5 + .5 * .9 * .5)

    def test_markov_chain_is_stationary_at_half_activity(self):
        source = source_at(0, (1., 0, 1.))
        source.activity = .5
        self.assertAlmostEqual(predicted_activity(source, self.cfg), .5, places=12)
        for start in (0., 1.):
            source.activity = start
            for _ in range(400):
                source.activity = predicted_activity(source, self.cfg)
            self.assertAlmostEqual(source.activity, .5, places=12)

    def test_observed_source_exists_and_is_active(self):
        source = source_at(0, (1., 0, 1.))
        update_observability(source, self._posterior(1.), self.cfg)
        self.assertEqual(source.existence, 1.)
        self.assertEqual(source.activity, 1.)
        self.assertEqual(source.frames_unobserved, 0)

    def test_unobserved_source_fades(self):
        source = source_at(0, (1., 0, 1.))
        source.existence = .8
        for n in range(1, 4):
            update_observability(source, self._posterior(0.), self.cfg)
            self.assertAlmostEqual(source.existence, .8 * .9 ** n)
            self.assertEqual(source.frames_unobserved, n)
            self.assertEqual(source.activity, 0.)


class TestManageSources(unittest.TestCase):

    def setUp(self):
        self.cfg = TrackerConfig()
        self.obs = observation(45., 20.)

    def _new(self, P):
        return AssignmentPosterior(np.zeros((1, 0)), np.array([1. - P]), np.array([P]), [])

    def test_birth_above_threshold(self):
        state = manage_sources(TrackerState(seed=0), [self.obs], self._new(.31), self.cfg)
        self.assertEqual(len(state.sources), 1)
        born = state.sources[0]
        self.assertEqual(born.id, 0)
        self.assertAlmostEqual(born.existence, .31)
        self.assertEqual(len(born), self.cfg.n_particles)
        np.testing.assert_allclose(born.weights.sum(), 1.)
        self.assertLess(angle(born.positions.mean(axis=0), self.obs.direction), 1.)
        self.assertAlmostEqual(np.linalg.norm(born.positions, axis=1).mean(), 1.5, delta=.05)
        self.assertEqual(state.next_id, 1)

    def test_no_birth_below_threshold(self):
        state = manage_sources(TrackerState(seed=0), [self.obs], self._new(.29), self.cfg)
        self.assertEqual(state.sources, [])
        self.assertEqual(state.next_id, 0)

    def test_stale_source_dies(self):
        state = TrackerState(seed=0)
        state.sources = [source_at(0, (1., 0, 1.)), source_at(1, (0, 1., 1.))]
        state.sources[0].frames_unobserved = int(math.ceil(2.1 / self.cfg.delta_t))
        state.sources[1].frames_unobserved = int(1.9 / self.cfg.delta_t)
        empty = AssignmentPosterior(np.zeros((0, 2)), np.zeros(0), np.zeros(0), [0, 1])
        manage_sources(state, [], empty, self.cfg)
        self.assertEqual([s.id for s in state.sources], [1])
        self.assertEqual(state.diagnostics['deaths'], 1)


class TestEstimateAndResample(unittest.TestCase):

    def test_estimate_is_the_weighted_mean(self):
        source = TrackedSource(3, [[0., 0, 0], [4., 0, 0]], np.zeros((2, 3)), np.random.default_rng(0), existence=.7)
        source.weights = np.array([.25, .75])
        result = estimate(source, 1.5)
        np.testing.assert_allclose(result.position, (3., 0, 0))
        self.assertEqual((result.id, result.timestamp, result.existence), (3, 1.5, .7))

    def test_healthy_cloud_is_not_resampled(self):
        source = source_at(0, (1., 0, 1.), n=500)
        before = source.positions.copy()
        resample_if_needed(source, TrackerConfig())
        np.testing.assert_array_equal(source.positions, before)

    def test_collapsed_cloud_is_copied(self):
        source = source_at(0, (1., 0, 1.), n=10)
        source.weights = np.zeros(10)
        source.weights[7] = 1.
        kept = source.positions[7].copy()
        resample_if_needed(source, TrackerConfig(n_particles=10))
        np.testing.assert_allclose(source.positions, np.repeat(kept[None, :], 10, axis=0))
        np.testing.assert_allclose(source.weights, .1)

    def test_resampling_keeps_the_mean(self):
        n = 1000
        x = np.linspace(0, 1, n)
        source = TrackedSource(0, np.stack((x, np.zeros(n), np.zeros(n)), axis=1), np.zeros((n, 3)),
                               np.random.default_rng(5))
        source.weights = x ** 8 / np.sum(x ** 8)
        expected = source.weights.dot(x)
        resample_if_needed(source, TrackerConfig(n_particles=n))
        self.assertAlmostEqual(source.effective_size, n)
        self.assertAlmostEqual(source.positions[:, 0].mean(), expected, delta=.01)


class TestTrackStep(unittest.TestCase):

    def _run(self, frames, cfg=None, seed=0):
        cfg = cfg or TrackerConfig()
        state = TrackerState(seed=seed)
        history = []
        for n, observations in enumerate(frames):
            state, estimates = track_step(state, BeamformerOutput(n, observations), cfg)
            history.append(estimates)
        return state, history

    def test_strong_static_observations_give_one_source(self):
        frames = [[observation(45., 20.), observation(-100., 60., energy=.3)] for _ in range(5)]
        state, history = self._run(frames)
        self.assertEqual(len(state.sources), 1)
        self.assertEqual(state.diagnostics['births'], 1)
        self.assertEqual(len(history[0]), 1)
        last = history[-1]
        self.assertEqual([e.id for e in last], [0])
        self.assertLess(angle(last[0].position, angles_to_direction(45., 20.)), 2.)
        self.assertAlmostEqual(last[0].timestamp, 5 * TrackerConfig().delta_t)

    def test_silence_gives_no_sources(self):
        frames = [[observation(45., 20., energy=0.), observation(0., 50., energy=0.)] for _ in range(20)]
        state, history = self._run(frames)
        self.assertEqual(state.sources, [])
        self.assertTrue(all(estimates == [] for estimates in history))

    def test_deterministic_for_a_seed(self):
        frames = [[observation(10. + n, 30.)] for n in range(8)]
        _, first = self._run(frames, seed=7)
        _, second = self._run(frames, seed=7)
        for a, b in zip(first, second):
            self.assertEqual([e.id for e in a], [e.id for e in b])
            for x, y in zip(a, b):
                np.testing.assert_array_equal(x.position, y.position)

    def test_probability_mass_over_random_frames(self):
        cfg = TrackerConfig(n_particles=20)
        rng = np.random.default_rng(11)
        state = TrackerState(seed=11)
        for n in range(1000):
            observations = []
            for _ in range(rng.integers(0, 5)):
                direction = angles_to_direction(rng.uniform(-180., 180.), rng.uniform(0., 90.))
                energy = rng.choice([0., rng.uniform(0., 20.)])
                observations.append(Observation(direction, rng.uniform(.3, 3.), energy, 0))

            assign = assignment_probabilities(observations, state.sources, cfg)
            totals = assign.P_qj.sum(axis=1) + assign.P_q_false + assign.P_q_new
            np.testing.assert_allclose(totals, 1., atol=1e-9, err_msg='frame %d' % n)
            self.assertTrue(np.all(np.isfinite(assign.P_qj)))

            state, estimates = track_step(state, BeamformerOutput(n, observations), cfg)
            for source in state.sources:
                self.assertAlmostEqual(source.weights.sum(), 1., places=9)
                self.assertTrue(np.all(np.isfinite(source.positions)))
                self.assertTrue(np.all(np.isfinite(source.velocities)))
                self.assertTrue(0. <= source.existence <= 1.)
                self.assertTrue(0. <= source.activity <= 1.)
            for e in estimates:
                self.assertTrue(np.all(np.isfinite(e.position)))
                self.assertGreater(e.existence, cfg.report_threshold)

    def test_crossing_sources_keep_their_ids(self):
        cfg = TrackerConfig(beta=.5)
        count = int(3. / cfg.delta_t)
        sweep = np.linspace(-30., 30., count)
        frames = [[observation(az, 15.), observation(-az, 45.)] for az in sweep]
        state, history = self._run(frames, cfg)

        self.assertEqual(state.diagnostics['births'], 2)
        self.assertEqual(sorted(s.id for s in state.sources), [0, 1])
        final = {e.id: e.position for e in history[-1]}
        self.assertLess(angle(final[0], angles_to_direction(30., 15.)), 8.)
        self.assertLess(angle(final[1], angles_to_direction(-30., 45.)), 8.)
        az, _ = direction_to_angles(final[0])
        self.assertGreater(az, 15.)


if __name__ == '__main__':
    unittest.main()
