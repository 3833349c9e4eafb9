"""Shared fixtures.

The heavy artifacts (trained base model, erased model, audits) are built
once per session through the real pipeline with the shipped default
config, and their build times are recorded so the acceptance tests can
check the runtime budgets of the work itself rather than of fixture
caching.
"""

from __future__ import annotations

import os
import time

import numpy as np
import pytest

from erasure_lab import dataio, pipeline
from erasure_lab.checkpoint import load_checkpoint
from erasure_lab.config import RunConfig


@pytest.fixture(scope="session")
def default_cfg() -> RunConfig:
    return RunConfig.from_dict({})


@pytest.fixture(scope="session")
def timings() -> dict:
    return {}


@pytest.fixture(scope="session")
def default_run(tmp_path_factory, default_cfg, timings):
    """Full default pipeline: data -> base -> erased (+ final probe)."""
    run_dir = str(tmp_path_factory.mktemp("default_run"))
    default_cfg.data["output_dir"] = run_dir
    pipeline.prepare_run_dir(default_cfg)
    t0 = time.monotonic()
    pipeline.phase_gen_data(default_cfg, run_dir)
    timings["gen_data"] = time.monotonic() - t0
    t0 = time.monotonic()
    pipeline.phase_train_base(default_cfg, run_dir)
    timings["train_base"] = time.monotonic() - t0
    t0 = time.monotonic()
    pipeline.phase_erase(default_cfg, run_dir)
    timings["erase"] = time.monotonic() - t0
    return run_dir


@pytest.fixture(scope="session")
def default_dataset(default_run) -> dataio.LabeledDataset:
    return dataio.load_dataset(pipeline.dataset_path(default_run))


@pytest.fixture(scope="session")
def base_model(default_run):
    return load_checkpoint(pipeline.ckpt_path(default_run, "base")).to_model()


@pytest.fixture(scope="session")
def erased_model(default_run):
    return load_checkpoint(pipeline.ckpt_path(default_run, "erased")).to_model()


@pytest.fixture(scope="session")
def erased_checkpoint(default_run):
    return load_checkpoint(pipeline.ckpt_path(default_run, "erased"))


@pytest.fixture(scope="session")
def base_audit(default_cfg, default_run, timings):
    t0 = time.monotonic()
    audit = pipeline.phase_audit(default_cfg, default_run, which="base")
    timings["audit_base"] = time.monotonic() - t0
    return audit


@pytest.fixture(scope="session")
def erased_audit(default_cfg, default_run, timings):
    t0 = time.monotonic()
    audit = pipeline.phase_audit(default_cfg, default_run, which="erased")
    timings["audit_erased"] = time.monotonic() - t0
    return audit


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.PCG64(20260808))


def small_smoke_config(out_dir: str, seed: int = 123) -> RunConfig:
    """Tiny config for plumbing tests; quality numbers do not apply."""
    cfg = RunConfig.from_dict({
        "seed": seed,
        "output_dir": out_dir,
        "dataset": {"n": 3000},
        "model": {"train_steps": 300, "hidden": [32, 32]},
        "erasure": {
            "iterations": 100, "warmup_steps": 30, "mi_probe_every": 0,
            "probe_samples": 0,
        },
        "evaluation": {"sample_budget": 6000, "eval_samples": 3000,
                       "probe_steps": 400},
        "attack": {"q_values": [1], "trials": 40},
        "sweep": {"lambdas": [0.1], "iterations": 80, "sample_budget": 4000},
    })
    return cfg


@pytest.fixture()
def smoke_cfg(tmp_path):
    return small_smoke_config(str(tmp_path / "run"))
