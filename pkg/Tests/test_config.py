import shutil
import tempfile
import unittest
import numpy as np
import os.path as p

from ArrayTrack import ConfigurationError
from ArrayTrack.config import PipelineConfig, resolve_distances
from ArrayTrack.geometry import MicArrayGeometry


class TestPipelineConfig(unittest.TestCase):

    def setUp(self):
        d = p.dirname(p.realpath(__file__))
        self._valid = p.join(d, 'valid')
        self._invalid = p.join(d, 'invalid')
        self._tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self._tmp)

    def test_defaults_are_valid(self):
        config = PipelineConfig().validate()
        self.assertEqual(config.spectral.length, 1024)
        self.assertEqual(config.spectral.hop, 512)
        self.assertEqual(config.localization.sources, 2)
        self.assertEqual(config.geometry.build(), MicArrayGeometry.circular())
        self.assertAlmostEqual(config.frame_period, 2048 / 48000.)

    def test_load_valid_file(self):
        config = PipelineConfig.load(p.join(self._valid, 'config.yaml'))
        self.assertEqual(config.seed, 7)
        self.assertEqual(config.spectral.rt60, .5)
        self.assertEqual(config.spectral.noise.window, 100)
        self.assertEqual(config.spectral.noise.smoothing, .8)
        self.assertEqual(config.grid.coarse_side, 21)
        self.assertEqual(config.localization.sources, 3)
        self.assertEqual(config.tracker.energy_threshold, 2.5)
        self.assertEqual(config.tracker.alpha, 2.)
        self.assertEqual(config.output.format, 'csv')

        coarse, fine = config.distances()
        np.testing.assert_allclose(coarse, [.5, 1., 2.])
        np.testing.assert_allclose(fine, np.linspace(.3, 3., 9))

    def test_invalid_files_raise(self):
        for name in ('config_unknown_key.yaml', 'config_bad_probability.yaml', 'config_short_window.yaml',
                     'config_empty_distances.yaml', 'config_unparsable.yaml', 'config_wrong_type.yaml'):
            with self.assertRaises(ConfigurationError, msg=name):
                PipelineConfig.load(p.join(self._invalid, name))

    def test_unknown_key_names_its_path(self):
        with self.assertRaises(ConfigurationError) as context:
            PipelineConfig.load(p.join(self._invalid, 'config_unknown_key.yaml'))
        self.assertIn('tracker.sigma_dir', str(context.exception))

    def test_wrong_type_names_its_path(self):
        with self.assertRaises(ConfigurationError) as context:
            PipelineConfig.load(p.join(self._invalid, 'config_wrong_type.yaml'))
        self.assertIn('tracker.n_particles', str(context.exception))

    def test_values_are_checked_against_their_field_types(self):
        for params in ({'seed': 'seven'},
                       {'threads': True},
                       {'spectral': {'rt60': 'long'}},
                       {'localization': {'fine_search': 3}},
                       {'tracker': {'exhaustive_assignment': 'yes'}},
                       {'geometry': {'circular': {'count': 'eight'}}},
                       {'grid': {'coarse_distances': {'min': 'near', 'max': 3., 'count': 5}}}):
            with self.assertRaises(ConfigurationError, msg=str(params)):
                PipelineConfig.from_dict(params)

    def test_numbers_are_widened(self):
        config = PipelineConfig.from_dict({'spectral': {'rt60': 1}, 'tracker': {'n_particles': 300.}})
        self.assertIsInstance(config.spectral.rt60, float)
        self.assertIsInstance(config.tracker.n_particles, int)

    def test_missing_file_raises(self):
        with self.assertRaises(IOError):
            PipelineConfig.load(p.join(self._tmp, 'none.yaml'))

    def test_empty_file_gives_defaults(self):
        path = p.join(self._tmp, 'empty.yaml')
        open(path, 'w').close()
        self.assertEqual(PipelineConfig.load(path), PipelineConfig())

    def test_saved_config_loads_back(self):
        config = PipelineConfig.load(p.join(self._valid, 'config.yaml'))
        for name in ('saved.yaml', 'saved.json'):
            path = p.join(self._tmp, name)
            config.save(path)
            self.assertEqual(PipelineConfig.load(path), config)

    def test_preconditions(self):
        for params in ({'spectral': {'hop': 0}},
                       {'spectral': {'length': 1023}},
                       {'spectral': {'alpha_dd': 1.}},
                       {'spectral': {'average_frames': 0}},
                       {'spectral': {'noise': {'smoothing': 1.}}},
                       {'grid': {'coarse_side': 1}},
                       {'grid': {'fine_distances': [2., 1.]}},
                       {'localization': {'sources': 5}},
                       {'localization': {'fine_search': 'everywhere'}},
                       {'tracker': {'n_particles': 0}},
                       {'output': {'format': 'xml'}},
                       {'geometry': {'mic_positions': [[0, 0, 0]]}},
                       {'threads': 0},
                       {'spectral': 3}):
            with self.assertRaises(ConfigurationError, msg=str(params)):
                PipelineConfig.from_dict(params)

    def test_tracker_runs_at_the_localization_period(self):
        config = PipelineConfig.from_dict({'spectral': {'hop': 256, 'average_frames': 2}})
        self.assertAlmostEqual(config.tracker_config().delta_t, 512 / 48000.)
        self.assertAlmostEqual(config.tracker.delta_t, 2048 / 48000.)

    def test_gamma_follows_rt60(self):
        self.assertEqual(PipelineConfig.from_dict({'spectral': {'rt60': 0.}}).gamma, 0.)
        self.assertGreater(PipelineConfig.from_dict({'spectral': {'rt60': .6}}).gamma, PipelineConfig().gamma)


class TestResolveDistances(unittest.TestCase):

    def test_list(self):
        np.testing.assert_allclose(resolve_distances([.5, 1.]), [.5, 1.])

    def test_log_range(self):
        distances = resolve_distances({'min': .3, 'max': 3., 'count': 5})
        np.testing.assert_allclose(distances[[0, -1]], [.3, 3.])
        np.testing.assert_allclose(distances[1:] / distances[:-1], 10 ** .25)

    def test_malformed_ranges_raise(self):
        for value in ({'min': .3, 'max': 3.}, {'min': 0., 'max': 3., 'count': 3},
                      {'min': .3, 'max': 3., 'count': 3, 'spacing': 'cubic'},
                      {'min': .3, 'max': 3., 'count': 3, 'step': 1}):
            with self.assertRaises(ConfigurationError, msg=str(value)):
                resolve_distances(value)


if __name__ == '__main__':
    unittest.main()
