import json
import shutil
import tempfile
import unittest
import numpy as np
import scipy.fft
import os.path as p

from ArrayTrack import ConfigurationError, InputError
from ArrayTrack.correlation import CrossSpectrumAccumulator, accumulate, correlations
from ArrayTrack.geometry import MicArrayGeometry, angles_to_direction, direction_to_angles, compute_tdoa
from ArrayTrack.simulator import (SceneSpec, SourceSpec, GroundTruth, PRESETS, fractional_delay, pink_noise,
                                  burst_envelope, synthesize, preset)
from ArrayTrack.spectral import ReliabilityWeights, stft_frame


def _scene(sources, **kwargs):
    kwargs.setdefault('duration', .2)
    kwargs.setdefault('snr_db', None)
    return SceneSpec(sources=sources, **kwargs)


def _pink(id, position, gain=.1):
    return SourceSpec(id, [[0., list(position)]], signal={'kind': 'pink'}, gain=gain)


class TestFractionalDelay(unittest.TestCase):

    def setUp(self):
        self.signal = np.random.default_rng(0).standard_normal(400)

    def test_integer_delay_is_a_shift(self):
        delayed = fractional_delay(self.signal, 3)
        np.testing.assert_allclose(delayed[:3], 0., atol=1e-12)
        np.testing.assert_allclose(delayed[3:], self.signal[:-3], atol=1e-12)

    def test_zero_delay_is_identity(self):
        np.testing.assert_allclose(fractional_delay(self.signal, 0.), self.signal, atol=1e-12)

    def test_half_sample_delay_of_a_slow_sine(self):
        n = np.arange(2000)
        w = 2 * np.pi * 1000. / 48000.
        delayed = fractional_delay(np.sin(w * n), 10.5)
        np.testing.assert_allclose(delayed[100:-100], np.sin(w * (n[100:-100] - 10.5)), atol=1e-2)

    def test_half_sample_there_and_back(self):
        spectrum = scipy.fft.rfft(np.random.default_rng(4).standard_normal(4800))
        spectrum[len(spectrum) // 6:] = 0.
        noise = scipy.fft.irfft(spectrum, n=4800)
        noise /= np.sqrt(np.mean(noise ** 2))
        back = fractional_delay(fractional_delay(noise, .5), -.5)
        error = np.sqrt(np.mean((back - noise)[200:-200] ** 2))
        self.assertLess(error, 1e-3)

    def test_too_long_delay_raises(self):
        with self.assertRaises(ValueError):
            fractional_delay(self.signal, 400)


class TestSignals(unittest.TestCase):

    def test_pink_noise_has_unit_rms_and_falling_spectrum(self):
        noise = pink_noise(48000, np.random.default_rng(1))
        self.assertAlmostEqual(np.sqrt(np.mean(noise ** 2)), 1.)
        power = np.abs(scipy.fft.rfft(noise)) ** 2
        self.assertGreater(power[100:1000].mean(), 5 * power[10000:20000].mean())

    def test_pink_noise_has_no_dc_and_keeps_odd_lengths(self):
        noise = pink_noise(4801, np.random.default_rng(3))
        self.assertEqual(noise.shape, (4801,))
        self.assertTrue(np.isrealobj(noise))
        self.assertAlmostEqual(noise.mean(), 0., places=9)
        np.testing.assert_array_equal(pink_noise(4801, np.random.default_rng(3)), noise)

    def test_bursts_switch_on_and_off(self):
        envelope = burst_envelope(48000 * 5, 48000., np.random.default_rng(2))
        self.assertTrue(np.all((envelope >= 0) & (envelope <= 1)))
        active = np.mean(envelope > .5)
        self.assertGreater(active, .5)
        self.assertLess(active, .95)


class TestSynthesize(unittest.TestCase):

    def setUp(self):
        self.first = _pink(0, 1.5 * angles_to_direction(45., 20.))
        self.second = _pink(1, 2. * angles_to_direction(-90., 30.))

    def test_same_scene_renders_same_samples(self):
        scene = _scene([self.first], snr_db=10.)
        a, truth_a = synthesize(scene)
        b, truth_b = synthesize(scene)
        np.testing.assert_array_equal(a, b)
        self.assertEqual(truth_a.records, truth_b.records)
        self.assertEqual(a.shape, (8, scene.samples))

    def test_seed_changes_the_noise(self):
        a, _ = synthesize(_scene([self.first], snr_db=10., seed=1))
        b, _ = synthesize(_scene([self.first], snr_db=10., seed=2))
        self.assertFalse(np.array_equal(a, b))

    def test_sources_superpose(self):
        both, _ = synthesize(_scene([self.first, self.second]))
        first, _ = synthesize(_scene([self.first]))
        second, _ = synthesize(_scene([self.second]))
        np.testing.assert_allclose(both, first + second, atol=1e-12)

    def test_noise_matches_the_snr(self):
        clean, _ = synthesize(_scene([self.first]))
        noisy, _ = synthesize(_scene([self.first], snr_db=10.))
        snr = 10 * np.log10(np.mean(clean ** 2) / np.mean((noisy - clean) ** 2))
        self.assertAlmostEqual(snr, 10., delta=.5)

    def test_scene_without_sources_is_noise(self):
        scene = _scene([], snr_db=7., noise_level_db=-40.)
        audio, truth = synthesize(scene)
        self.assertAlmostEqual(10 * np.log10(np.mean(audio ** 2)), -40., delta=.1)
        self.assertEqual(len(truth), scene.frames)
        self.assertTrue(all(r['sources'] == [] for r in truth))

    def test_received_delays_match_the_geometry(self):
        geometry = MicArrayGeometry.circular()
        position = 1.5 * angles_to_direction(45., 20.)
        audio, _ = synthesize(_scene([_pink(0, position)], duration=.5))

        acc = CrossSpectrumAccumulator(geometry.pairs, 513, 4)
        for n in range(10, 14):
            frame = stft_frame(audio[:, n * 512:n * 512 + 1024], frame_index=n)
            accumulate(acc, frame, ReliabilityWeights(np.ones(frame.spectra.shape)))
        corr = correlations(acc)
        for i, j in geometry.pairs:
            lag = int(np.argmax(corr[i, j]))
            offset = (lag - compute_tdoa(position, i, j, geometry) + 512) % 1024 - 512
            self.assertLessEqual(abs(offset), 1, 'pair %d-%d' % (i, j))

    def test_loud_mix_is_scaled_below_full_scale(self):
        loud = _pink(0, (.3, 0., .1), gain=5.)
        with self.assertLogs('ArrayTrack.simulator', 'WARNING'):
            audio, _ = synthesize(_scene([loud]))
        self.assertLessEqual(np.abs(audio).max(), 1.)


class TestGroundTruth(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_records_are_stamped_at_window_centres(self):
        scene = _scene([_pink(0, (1., 1., 1.))], duration=.5)
        _, truth = synthesize(scene)
        self.assertEqual(len(truth), 1 + (24000 - 1024) // 512)
        for n in (0, 1, 20):
            self.assertEqual(truth[n]['frame'], n)
            self.assertAlmostEqual(truth[n]['t_seconds'], (n * 512 + 512) / 48000.)
            self.assertEqual(truth[n]['sources'][0]['pos_m'], [1., 1., 1.])
            self.assertTrue(truth[n]['sources'][0]['active'])

    def test_moving_source_is_interpolated(self):
        mover = SourceSpec(3, [[0., [1.5, 0., 0.]], [1., [0., 1.5, 0.]]], signal={'kind': 'pink'}, gain=.2)
        _, truth = synthesize(_scene([mover], duration=1.))
        record = truth.at(.5)
        t = record['t_seconds']
        np.testing.assert_allclose(record['sources'][0]['pos_m'], [1.5 * (1 - t), 1.5 * t, 0.])
        self.assertEqual(truth.source_ids, [3])

    def test_save_and_load(self):
        _, truth = synthesize(_scene([_pink(0, (1., 1., 1.))]))
        path = p.join(self.tmp, 'scene.truth.jsonl')
        truth.save(path)
        loaded = GroundTruth.load(path)
        self.assertEqual(loaded.records, truth.records)

    def test_malformed_record_raises(self):
        path = p.join(self.tmp, 'broken.jsonl')
        with open(path, 'w') as stream:
            stream.write(json.dumps({'frame': 0, 't_seconds': 0.01, 'sources': []}) + '\n')
            stream.write('{"frame": 1}\n')
        with self.assertRaises(InputError):
            GroundTruth.load(path)

    def test_missing_file_raises(self):
        with self.assertRaises(IOError):
            GroundTruth.load(p.join(self.tmp, 'nothing.jsonl'))


class TestSceneSpec(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.valid = p.join(p.dirname(p.realpath(__file__)), 'valid')

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_load_scene_file(self):
        scene = SceneSpec.load(p.join(self.valid, 'scene.yaml'))
        self.assertEqual(scene.duration, 2.)
        self.assertEqual(len(scene.sources), 2)
        self.assertEqual(scene.sources[1].interpolation, 'cubic')
        self.assertEqual(scene.geometry, MicArrayGeometry.circular())

    def test_saved_scene_loads_back(self):
        scene = _scene([_pink(0, (1., 1., 1.))], snr_db=5., rt60=.2)
        for name in ('scene.yaml', 'scene.json'):
            path = p.join(self.tmp, name)
            scene.save(path)
            self.assertEqual(SceneSpec.load(path).to_dict(), scene.to_dict())

    def test_invalid_scenes_raise(self):
        folder = p.join(p.dirname(p.realpath(__file__)), 'invalid')
        for name in ('scene_unknown_key.yaml', 'scene_outside_shell.yaml', 'scene_unordered_waypoints.yaml'):
            with self.assertRaises(ConfigurationError, msg=name):
                SceneSpec.load(p.join(folder, name))

    def test_validation(self):
        near = _pink(0, (.1, 0., 0.))
        with self.assertRaises(ConfigurationError):
            _scene([near]).validate()
        with self.assertRaises(ConfigurationError):
            _scene([self._mover(1.), self._mover(1.)]).validate()
        with self.assertRaises(ConfigurationError):
            _scene([SourceSpec(0, [[0., [1., 0., 0.]]], signal={'kind': 'chirp'})]).validate()
        with self.assertRaises(ConfigurationError):
            _scene([SourceSpec(0, [[.5, [1., 0., 0.]]])], duration=.2).validate()

    def _mover(self, distance):
        return SourceSpec(0, [[0., [distance, 0., 0.]]])

    def test_missing_file_raises(self):
        with self.assertRaises(IOError):
            SceneSpec.load(p.join(self.tmp, 'none.yaml'))


class TestPresets(unittest.TestCase):

    def test_every_preset_is_valid(self):
        for name in PRESETS:
            scene = preset(name, duration=4.)
            scene.validate()
            self.assertEqual(scene.snr_db, 7.)
            self.assertEqual(scene.rt60, .3)

    def test_source_counts(self):
        counts = {'static': 1, 'movers1': 1, 'movers2': 2, 'movers3': 3, 'crossing': 2, 'silence': 0, 'static3': 3}
        for name, count in counts.items():
            self.assertEqual(len(preset(name).sources), count)

    def test_crossing_azimuths_meet_halfway(self):
        scene = preset('crossing', duration=4.)
        first, second = (direction_to_angles(s.position(2.))[0] for s in scene.sources)
        self.assertAlmostEqual(first, second)
        start = [direction_to_angles(s.position(0.))[0] for s in scene.sources]
        self.assertAlmostEqual(abs(start[0] - start[1]), 120.)

    def test_unknown_preset_raises(self):
        with self.assertRaises(ConfigurationError):
            preset('choir')


if __name__ == '__main__':
    unittest.main()
