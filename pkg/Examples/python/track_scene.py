#!/usr/bin/env python
r"""
Simulate a scene, track it and compare the trajectories to the ground truth, either as printed table
or as azimuth/distance plot over time (needs matplotlib, ``pip install ArrayTrack[plot]``)::

    python Examples/python/track_scene.py --preset crossing --plot
    python Examples/python/track_scene.py --scene Examples/scenes/walk_past.yaml --config Examples/configs/moving.yaml

"""
import numpy as np

from argparse import ArgumentParser
from ArrayTrack.config import PipelineConfig
from ArrayTrack.evaluation import evaluate
from ArrayTrack.geometry import direction_to_angles
from ArrayTrack.pipeline import run_pipeline, trajectory_record
from ArrayTrack.simulator import SceneSpec, PRESETS, preset, synthesize


def track_scene(scene, config):
    audio, truth = synthesize(scene)
    origin = scene.geometry.centroid
    records = [trajectory_record(update, origin) for update in run_pipeline(config, audio)]
    return records, truth


def truth_angles(truth, origin):
    r""" Returns {id: (times, azimuths, distances)} of the active truth sources """
    tracks = {}
    for record in truth:
        for source in record['sources']:
            if not source['active']: continue
            offset = np.asarray(source['pos_m']) - origin
            t, az, d = tracks.setdefault(source['id'], ([], [], []))
            t.append(record['t_seconds'])
            az.append(direction_to_angles(offset)[0])
            d.append(np.linalg.norm(offset))
    return tracks


def estimate_angles(records):
    r""" Returns {id: (times, azimuths, distances)} of the reported sources """
    tracks = {}
    for record in records:
        for source in record['sources']:
            t, az, d = tracks.setdefault(source['id'], ([], [], []))
            t.append(record['t_seconds'])
            az.append(source['azimuth_deg'])
            d.append(source['distance_m'])
    return tracks


def plot(records, truth, origin):
    import matplotlib.pyplot as plt

    f, ax = plt.subplots(2, sharex=True)
    for id, (t, az, d) in truth_angles(truth, origin).items():
        ax[0].plot(t, az, 'k.', markersize=2)
        ax[1].plot(t, d, 'k.', markersize=2)
    for id, (t, az, d) in estimate_angles(records).items():
        ax[0].plot(t, az, '.', markersize=4, label='Source %d' % id)
        ax[1].plot(t, d, '.', markersize=4)

    ax[0].set_ylabel('Azimuth [deg]')
    ax[1].set_ylabel('Distance [m]')
    ax[0].legend()
    plt.xlabel('Time [s]')
    plt.show()


if __name__ == '__main__':

    parser = ArgumentParser()
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--scene', default=None, help="A YAML or JSON scene file")
    group.add_argument('--preset', default='crossing', choices=PRESETS, help="A built in scene [crossing]")
    parser.add_argument('--config', default=None, help="A pipeline configuration [defaults]")
    parser.add_argument('--seed', default=0, type=int, help="Seed of the preset [0]")
    parser.add_argument('--plot', action='store_true', help="Plot azimuth and distance over time")
    args = parser.parse_args()

    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    scene = SceneSpec.load(args.scene) if args.scene else preset(args.preset, seed=args.seed)
    records, truth = track_scene(scene, config)
    origin = scene.geometry.centroid

    print(evaluate(records, truth, origin))
    if args.plot:
        plot(records, truth, origin)
    else:
        for record in records[::10]:
            sources = ', '.join('%d: %6.1f deg %4.2f m' % (s['id'], s['azimuth_deg'], s['distance_m'])
                                for s in record['sources'])
            print('%6.2f s | %s' % (record['t_seconds'], sources or '-'))
