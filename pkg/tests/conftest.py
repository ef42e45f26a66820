"""Shared fixtures: one small model trained once per session.

Several behavioral tests (pipeline, CLI, acceptance) need link-scorer
weights that actually separate same-object from different-object pairs;
they share this trained checkpoint instead of retraining per test.
"""

import numpy as np
import pytest

from mcmot.gtn import GtnConfig, init_params, save_checkpoint
from mcmot.simulator import ScenarioConfig, generate
from mcmot.training import LossWeights, TrainConfig, WalkConfig, build_chunks, train

SMALL_GTN = dict(feature_dim=16, num_cameras=6, model_dim=16, heads=2,
                 self_layers=1, cross_layers=1, ffn_hidden=32, classes=("car",))


def training_scenes():
    return [
        ScenarioConfig(n_objects=8, n_frames=40, dt=0.1, feature_dim=16, seed=101,
                       spawn_radius_min=6.0, spawn_radius_max=16.0),
        ScenarioConfig(n_objects=8, n_frames=40, dt=0.1, feature_dim=16, seed=102,
                       motion="turning", center_noise=0.15, feature_noise=0.05,
                       spawn_radius_min=6.0, spawn_radius_max=16.0),
        ScenarioConfig(n_objects=8, n_frames=40, dt=0.1, feature_dim=16, seed=103,
                       duplicate_rate=0.3, dropout=0.2, dropout_scope="overlap",
                       spawn_radius_min=6.0, spawn_radius_max=16.0),
        # dense counter-orbiting ring: different objects pass within touching
        # distance, teaching near-zero-distance negatives
        ScenarioConfig(n_objects=10, n_frames=40, dt=0.1, feature_dim=16, seed=104,
                       motion="turning", spawn_radius_min=7.0, spawn_radius_max=11.0,
                       speed_min=0.8, speed_max=1.6),
    ]


def train_small_model(steps=400, seed=7):
    config = GtnConfig(**SMALL_GTN)
    params = init_params(config, seed=seed)
    chunks = []
    for scenario in training_scenes():
        scene = generate(scenario)
        chunks.extend(build_chunks(scene.detections, scene.ground_truth,
                                   scene.rig.camera_ids, label_match_radius=1.0))
    train_config = TrainConfig(
        steps=steps, learning_rate=2e-3, seed=seed,
        weights=LossWeights(lambda_cls=1.0, lambda_box=1.0, lambda_iou=1.0),
        walks=WalkConfig(walk_length=2, walks_per_node=2,
                         neighbor_edge_threshold=0.6, negatives_per_node=2),
        label_match_radius=1.0,
    )
    history = train(params, chunks, train_config)
    return params, history, chunks, train_config


@pytest.fixture(scope="session")
def trained_model():
    params, history, _, _ = train_small_model()
    return params, history


@pytest.fixture(scope="session")
def trained_weights_path(trained_model, tmp_path_factory):
    params, _ = trained_model
    path = tmp_path_factory.mktemp("weights") / "weights.json"
    save_checkpoint(params, path)
    return path
