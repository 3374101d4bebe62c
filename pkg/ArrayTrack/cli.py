#!/usr/bin/env python3
r"""
The ``arraytrack`` command::

    arraytrack simulate --preset crossing --out crossing.wav          # + crossing.truth.jsonl
    arraytrack track --config config.yaml --input crossing.wav --out traj.jsonl
    arraytrack eval --input traj.jsonl --truth crossing.truth.jsonl
    arraytrack eval --preset movers2 --seed 4                         # simulate, track and evaluate
    arraytrack localize --input crossing.wav --out observations.jsonl
    arraytrack calibrate --config config.yaml
    arraytrack bench --preset static --threads 4

Exit codes: 0 on success, 2 for invalid configurations or input, 1 for I/O failures.
"""
import sys
import json
import time
import logging
import dataclasses
import soundfile

from argparse import ArgumentParser
from ArrayTrack import ConfigurationError, InputError
from ArrayTrack.config import PipelineConfig, OUTPUT_FORMATS, WAV_SUBTYPES
from ArrayTrack.evaluation import evaluate
from ArrayTrack.pipeline import (run_pipeline, observation_record, trajectory_record, RecordWriter, read_trajectories,
                                 measure, calibrate)
from ArrayTrack.recording import Recording, write_wav, truth_path
from ArrayTrack.simulator import SceneSpec, GroundTruth, PRESETS, preset, synthesize

logger = logging.getLogger('arraytrack')


class UsageError(Exception):
    r""" Raised by the argument parser instead of exiting """


class _Parser(ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    parser = _Parser(prog='arraytrack', description="Localize and track sound sources with a microphone array")
    parser.add_argument('-v', '--verbose', action='store_true', help="Log per frame details")
    parser.add_argument('-q', '--quiet', action='store_true', help="Only log warnings and errors")
    part = parser.add_subparsers(dest='command', help="What to do")

    def common(sub, inputs=True, formats=False):
        sub.add_argument('--config', default=None, help="A YAML or JSON configuration (default values otherwise)")
        sub.add_argument('--seed', default=None, type=int, help="Overrides the seed of the configuration")
        sub.add_argument('--threads', default=None, type=int, help="Worker threads for the grid scan")
        if inputs: sub.add_argument('--input', required=True, help="The multichannel WAV recording")
        if formats: sub.add_argument('--format', default=None, choices=OUTPUT_FORMATS, help="Output format")
        sub.add_argument('--out', default=None, help="Where to write the result (default stdout)")

    def scene(sub):
        group = sub.add_mutually_exclusive_group()
        group.add_argument('--scene', default=None, help="A YAML or JSON scene file")
        group.add_argument('--preset', default=None, choices=PRESETS, help="A built in scene")
        sub.add_argument('--duration', default=None, type=float, help="Scene duration in seconds (presets only)")

    simulate = part.add_parser('simulate', help="Render a scene to a WAV file and its ground truth")
    scene(simulate)
    simulate.add_argument('--config', default=None, help="A configuration, for output.wav_subtype")
    simulate.add_argument('--seed', default=None, type=int, help="Overrides the seed of the scene")
    simulate.add_argument('--out', required=True, help="The WAV file to write")
    simulate.add_argument('--truth', default=None, help="The ground truth JSONL (default next to the WAV)")
    simulate.add_argument('--subtype', default=None, choices=WAV_SUBTYPES,
                          help="WAV sample format (default output.wav_subtype of the configuration)")

    common(part.add_parser('localize', help="Write the beamformer observations of a recording"))
    common(part.add_parser('track', help="Track the sources of a recording"), formats=True)

    calib = part.add_parser('calibrate', help="Suggest an energy threshold from a speech and a noise scene")
    common(calib, inputs=False)
    scene(calib)

    bench = part.add_parser('bench', help="Measure the real time factor")
    common(bench, inputs=False)
    scene(bench)
    bench.add_argument('--input', default=None, help="A WAV recording instead of a scene")

    ev = part.add_parser('eval', help="Score trajectories against ground truth")
    common(ev, inputs=False)
    scene(ev)
    ev.add_argument('--input', default=None, help="Trajectory JSONL (needs --truth)")
    ev.add_argument('--truth', default=None, help="Ground truth JSONL")
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='[%(name)s] %(levelname)s: %(message)s', stream=sys.stderr, force=True)


def _config(args):
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if getattr(args, 'seed', None) is not None: config.seed = args.seed
    if getattr(args, 'threads', None) is not None: config.threads = args.threads
    if getattr(args, 'format', None) is not None: config.output.format = args.format
    return config.validate()


def _scene(args, default='static', seed=None):
    if args.scene:
        spec = SceneSpec.load(args.scene)
        if seed is not None: spec.seed = seed
        return spec
    return preset(args.preset or default, seed=seed or 0, duration=args.duration or 10.)


def _emit(result, out):
    text = json.dumps(result, indent=2)
    if out in (None, '-'):
        print(text)
    else:
        with open(out, 'w') as stream: stream.write(text + '\n')
        logger.info('Wrote %s', out)


def simulate(args):
    subtype = args.subtype or _config(args).output.wav_subtype
    scene = _scene(args, seed=args.seed)
    audio, truth = synthesize(scene)
    write_wav(args.out, audio, scene.geometry.sample_rate, subtype)
    truth.save(args.truth or truth_path(args.out))


def localize(args):
    config = _config(args)
    recording = Recording(args.input, config.geometry.build())
    with RecordWriter(args.out or config.output.path) as writer:
        for update in run_pipeline(config, recording, track=False):
            writer.write(observation_record(update))


def track(args):
    config = _config(args)
    geometry = config.geometry.build()
    recording = Recording(args.input, geometry)
    with RecordWriter(args.out or config.output.path, config.output.format) as writer:
        for update in run_pipeline(config, recording):
            writer.write(trajectory_record(update, geometry.centroid))


def calibrate_command(args):
    config = _config(args)
    speech = _scene(args, default='static', seed=config.seed)
    noise = dataclasses.replace(speech, sources=[])
    speech_audio, truth = synthesize(speech)
    noise_audio, _ = synthesize(noise)
    _emit(calibrate(config, speech_audio, noise_audio, truth), args.out)


def bench(args):
    config = _config(args)
    if args.input:
        audio = Recording(args.input, config.geometry.build()).read()
    else:
        audio, _ = synthesize(_scene(args, seed=config.seed))
    _emit(measure(config, audio), args.out)


def eval_command(args):
    config = _config(args)
    geometry = config.geometry.build()
    if args.input:
        if not args.truth: raise InputError('eval --input needs --truth')
        report = evaluate(read_trajectories(args.input), GroundTruth.load(args.truth), geometry.centroid)
    else:
        scene = _scene(args, seed=config.seed)
        audio, truth = synthesize(scene)
        start = time.perf_counter()
        records = [trajectory_record(u, geometry.centroid) for u in run_pipeline(config, audio)]
        runtime = time.perf_counter() - start
        report = evaluate(records, truth, geometry.centroid)
        report.runtime_s = runtime
        report.real_time_factor = scene.duration / runtime if runtime > 0 else None
    logger.info('%s', report)
    _emit(report.to_dict(), args.out)


COMMANDS = {'simulate': simulate, 'localize': localize, 'track': track, 'calibrate': calibrate_command,
            'bench': bench, 'eval': eval_command}


def main(argv=None):
    r"""
    :param argv: the arguments (``sys.argv[1:]`` if None)
    :return: the exit code
    """
    try:
        args = _parser().parse_args(argv)
    except UsageError as error:
        sys.stderr.write('arraytrack: %s\n' % error)
        return 2
    if args.command is None:
        _parser().print_usage(sys.stderr)
        return 2

    _configure_logging(args)
    try:
        COMMANDS[args.command](args)
    except (ConfigurationError, InputError) as error:
        logger.error('%s', error)
        return 2
    except (OSError, soundfile.LibsndfileError) as error:
        logger.error('%s', error)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
