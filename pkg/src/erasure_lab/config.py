"""Run configuration: a YAML key-value tree with strict validation.

Unknown keys are rejected with their full path (no silent typos), every
default is filled in explicitly, and the normalized dump is the canonical
record of the run: re-parsing it reproduces the identical configuration.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field

import numpy as np
import yaml

from .erasure import ErasureConfig
from .fixtures import BENCHMARKS, PILOT_FD2_GATE
from .mixture import MixtureSpec


class ConfigError(ValueError):
    pass


def _bool(x):
    if isinstance(x, bool):
        return x
    raise TypeError("expected a boolean")


def _num(x):
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return float(x)
    raise TypeError("expected a number")


def _int(x):
    if isinstance(x, int) and not isinstance(x, bool):
        return int(x)
    raise TypeError("expected an integer")


def _str(x):
    if isinstance(x, str):
        return x
    raise TypeError("expected a string")


def _str_list(x):
    if isinstance(x, list) and all(isinstance(i, str) for i in x):
        return list(x)
    raise TypeError("expected a list of strings")


def _int_list(x):
    if isinstance(x, list) and all(isinstance(i, int) and not isinstance(i, bool) for i in x):
        return list(x)
    raise TypeError("expected a list of integers")


def _num_list(x):
    if isinstance(x, list) and all(isinstance(i, (int, float)) and not isinstance(i, bool) for i in x):
        return [float(i) for i in x]
    raise TypeError("expected a list of numbers")


def _any(x):
    return x


# (converter, default); None default means "must be provided when reached"
SCHEMA = {
    "seed": (_int, 20260808),
    "output_dir": (_str, "runs/default"),
    "dataset": {
        "benchmark": (_str, "default"),
        "n": (_int, 20000),
        "train_fraction": (_num, 0.85),
        "mixture": (_any, None),
    },
    "model": {
        "hidden": (_int_list, [64, 64, 64]),
        "t_steps": (_int, 200),
        "beta_min": (_num, 1e-4),
        "beta_max": (_num, 0.05),
        "train_steps": (_int, 3000),
        "batch_size": (_int, 128),
        "lr": (_num, 1e-3),
        "weight_decay": (_num, 1e-4),
    },
    "erasure": {
        "lambda_traj": (_num, 0.1),
        "saliency_fraction": (_num, 0.05),
        "anchor_fraction": (_num, 0.3),
        "anchor_window": (_str, "high"),
        "iterations": (_int, 12000),
        "batch_size": (_int, 128),
        "gen_lr": (_num, 1e-3),
        "disc_lr": (_num, 2e-3),
        "disc_steps": (_int, 2),
        "warmup_steps": (_int, 200),
        "probe_batches": (_int, 8),
        "adversarial_form": (_str, "paper"),
        "per_layer_topk": (_bool, False),
        "disc_hidden": (_int_list, [64, 64]),
        "targets": (_str_list, ["right"]),
        "gen_lr_decay": (_str, "cosine"),
        "ema_decay": (_num, 0.998),
        "mi_probe_every": (_int, 600),
        "mi_probe_samples": (_int, 4096),
        "mi_probe_bins": (_int, 30),
        "probe_samples": (_int, 20000),
    },
    "evaluation": {
        "sample_budget": (_int, 100000),
        "bins": (_int, 40),
        "slack_nats": (_num, 0.02),
        "probe_hidden": (_int_list, [64, 64]),
        "probe_steps": (_int, 2500),
        "probe_batch": (_int, 256),
        "probe_lr": (_num, 2e-3),
        "eval_samples": (_int, 20000),
        "fd2_gate": (_num, PILOT_FD2_GATE),
    },
    "attack": {
        "strategies": (_str_list, ["repeat-query", "condition-sweep", "composite-flags"]),
        "q_values": (_int_list, [1, 4, 16, 64]),
        "n_per_query": (_int, 64),
        "trials": (_int, 200),
        "trial_batch": (_int, 64),
    },
    "sweep": {
        "lambdas": (_num_list, [0.0, 0.1, 1.0, 3.0]),
        "iterations": (_int, 3000),
        "sample_budget": (_int, 30000),
        "bins": (_int, 30),
    },
}


def _walk(schema: dict, raw: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    out = {}
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key {path + key!r}")
    for key, spec in schema.items():
        here = f"{path}{key}"
        if isinstance(spec, dict):
            out[key] = _walk(spec, raw.get(key, {}), here + ".")
        else:
            conv, default = spec
            if key in raw and raw[key] is not None:
                try:
                    out[key] = conv(raw[key])
                except TypeError as e:
                    raise ConfigError(f"{here}: {e}") from None
            else:
                out[key] = default
    return out


def _validate(cfg: dict) -> dict:
    e = cfg["erasure"]
    if e["lambda_traj"] < 0:
        raise ConfigError("erasure.lambda_traj: must be >= 0")
    if not 0.0 <= e["saliency_fraction"] <= 1.0:
        raise ConfigError("erasure.saliency_fraction: must be in [0,1]")
    if e["iterations"] < 1:
        raise ConfigError("erasure.iterations: must be >= 1")
    if e["anchor_window"] not in ("low", "high"):
        raise ConfigError("erasure.anchor_window: must be low|high")
    if e["adversarial_form"] not in ("paper", "symmetric"):
        raise ConfigError("erasure.adversarial_form: must be paper|symmetric")
    d = cfg["dataset"]
    if d["benchmark"] not in set(BENCHMARKS) | {"custom"}:
        raise ConfigError(
            f"dataset.benchmark: unknown benchmark {d['benchmark']!r}; "
            f"choose from {sorted(BENCHMARKS)} or 'custom'"
        )
    if d["benchmark"] == "custom" and not d["mixture"]:
        raise ConfigError("dataset.mixture: required when benchmark is 'custom'")
    if not 0.0 < d["train_fraction"] < 1.0:
        raise ConfigError("dataset.train_fraction: must be in (0,1)")
    m = cfg["model"]
    if m["t_steps"] < 1:
        raise ConfigError("model.t_steps: must be >= 1")
    if not (0.0 < m["beta_min"] <= m["beta_max"] < 1.0):
        raise ConfigError("model.beta_min/beta_max: need 0 < min <= max < 1")
    for s in cfg["attack"]["strategies"]:
        if s not in ("repeat-query", "condition-sweep", "composite-flags"):
            raise ConfigError(f"attack.strategies: unknown strategy {s!r}")
    return cfg


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return cls(data=_validate(_walk(SCHEMA, raw or {}, "")))

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def mixture(self) -> MixtureSpec:
        d = self.data["dataset"]
        if d["benchmark"] == "custom":
            return MixtureSpec.from_dict(d["mixture"])
        return BENCHMARKS[d["benchmark"]]()

    def erasure_config(self, seed: int, concept_names) -> ErasureConfig:
        e = self.data["erasure"]
        targets = tuple(concept_names.index(t) for t in e["targets"])
        return ErasureConfig(
            lambda_traj=e["lambda_traj"],
            saliency_fraction=e["saliency_fraction"],
            iterations=e["iterations"],
            batch_size=e["batch_size"],
            gen_lr=e["gen_lr"],
            disc_lr=e["disc_lr"],
            anchor_fraction=e["anchor_fraction"],
            anchor_window=e["anchor_window"],
            seed=seed,
            disc_steps=e["disc_steps"],
            warmup_steps=e["warmup_steps"],
            probe_batches=e["probe_batches"],
            adversarial_form=e["adversarial_form"],
            per_layer_topk=e["per_layer_topk"],
            disc_hidden=tuple(e["disc_hidden"]),
            target_indices=targets,
            gen_lr_decay=e["gen_lr_decay"],
            ema_decay=e["ema_decay"],
            mi_probe_every=e["mi_probe_every"],
            mi_probe_samples=e["mi_probe_samples"],
            mi_probe_bins=e["mi_probe_bins"],
            probe_samples=e["probe_samples"],
        ).validate()

    def normalized_dump(self) -> str:
        buf = io.StringIO()
        yaml.safe_dump(self.data, buf, sort_keys=True, default_flow_style=False)
        return buf.getvalue()

    def digest(self) -> str:
        """Identity of the experiment: the normalized config minus the
        output location, so moving a run does not change its run_id."""
        body = {k: v for k, v in self.data.items() if k != "output_dir"}
        buf = io.StringIO()
        yaml.safe_dump(body, buf, sort_keys=True, default_flow_style=False)
        return hashlib.sha256(buf.getvalue().encode()).hexdigest()

    @property
    def run_id(self) -> str:
        return self.digest()[:12]

    def derived_seed(self, *tags) -> int:
        """Stable per-phase seed derived from the run seed."""
        mix = [self.seed] + [abs(hash_tag(t)) for t in tags]
        return int(np.random.SeedSequence(mix).generate_state(1)[0])


def hash_tag(tag) -> int:
    if isinstance(tag, int):
        return tag
    return int.from_bytes(hashlib.sha256(str(tag).encode()).digest()[:4], "little")


def parse_config(path: str) -> RunConfig:
    """Load and validate a YAML config file."""
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"config is not valid YAML: {e}") from None
    if raw is None:
        raw = {}
    return RunConfig.from_dict(raw)


def parse_config_text(text: str) -> RunConfig:
    raw = yaml.safe_load(text)
    return RunConfig.from_dict(raw or {})
