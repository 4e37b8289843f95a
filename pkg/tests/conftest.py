"""Shared fixtures: small synthetic datasets and trained tiny models."""

import numpy as np
import pytest

from zest.ingest import (apply_normalizer, build_dataset, fit_normalizer,
                         train_val_test_split)
from zest.sane import SaneConfig, SaneModel, train_sane
from zest.synth import DeviceProfile, generate_records

TINY_N = 10


def tiny_profiles(num_devices=3, sessions=30):
    """Well-separated small devices for fast training tests."""
    ports = [53, 443, 123, 80, 1883, 5353]
    protos = ["udp", "tcp", "udp", "tcp", "tcp", "udp"]
    profiles = []
    for i in range(num_devices):
        profiles.append(DeviceProfile(
            device_id=f"tiny-{i:02d}",
            proto_probs={"tcp": 0.0, "udp": 0.0, "other": 0.0}
            | {protos[i]: 1.0},
            port_probs={ports[i]: 0.9, ports[(i + 1) % len(ports)]: 0.1},
            direction_probs={"out": 0.3 + 0.1 * i, "in": 0.7 - 0.1 * i},
            size_log_mean=4.0 + 0.5 * i, size_log_sigma=0.3,
            iat_log_mean=-2.0 + 0.5 * i, iat_log_sigma=0.4,
            sessions=sessions, packets_per_session=TINY_N,
        ))
    return profiles


def tiny_config(num_classes=3, **overrides):
    defaults = dict(n=TINY_N, f=8, d_model=16, e=1, h=2, d_mlp=32, M=8, N=3,
                    num_classes=num_classes, batch_size=16, epochs=10,
                    learning_rate=5e-3, seed=0)
    defaults.update(overrides)
    return SaneConfig(**defaults)


def make_tiny_splits(num_devices=3, sessions=30, seed=0):
    profiles = tiny_profiles(num_devices, sessions)
    dataset = build_dataset(generate_records(profiles, seed=seed), n=TINY_N)
    train, val, test = train_val_test_split(dataset.points, seed=seed)
    norm = fit_normalizer(train)
    return (apply_normalizer(norm, train), apply_normalizer(norm, val),
            apply_normalizer(norm, test), profiles)


@pytest.fixture(scope="session")
def tiny_splits():
    return make_tiny_splits()


@pytest.fixture(scope="session")
def tiny_trained(tiny_splits):
    train, val, test, _ = tiny_splits
    model, log = train_sane(train, val, tiny_config())
    return model, log, test


@pytest.fixture(scope="session")
def tiny_model():
    return SaneModel(tiny_config(), rng=np.random.default_rng(3))
