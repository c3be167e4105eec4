import sys

import numpy as np
import pytest

from unislam.estimators.ekf import PlanarFrame
from unislam.experiment import planar_model
from unislam.sim import SimConfig, gen_dataset


@pytest.fixture(scope="session")
def planar_noisy():
    return gen_dataset(SimConfig(seed=42, steps=60))


@pytest.fixture(scope="session")
def planar_clean():
    return gen_dataset(SimConfig(seed=7, steps=60, noise_free=True))


@pytest.fixture(scope="session")
def stereo_clean():
    return gen_dataset(SimConfig(seed=3, model="stereo3d", steps=30, noise_free=True, n_landmarks=60))


def planar_frames(ds):
    U = ds.controls()
    return [PlanarFrame(t, m, U[k]) for k, (t, m) in enumerate(zip(ds.gt_t, ds.frames()))]


def planar_setup(ds, prior_sigma=1e-3):
    """Model, frames, initial mean and covariance for a planar dataset."""
    return planar_model(ds), planar_frames(ds), np.array(ds.gt[0]), prior_sigma**2 * np.eye(3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
