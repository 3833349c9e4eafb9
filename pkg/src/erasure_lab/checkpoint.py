"""Checkpoints: a JSON envelope with lossless base64 numeric payloads.

Metadata stays human-inspectable; every float64 array round-trips bit
exactly. The digest covers the canonical serialization, so tampering is
detected on load, and save -> load -> save is byte-identical (provenance,
including the original timestamp, is part of the stored state and never
regenerated).
"""

from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import nn
from .backends import active_backend
from .dataio import canonical_json, decode_array, encode_array, payload_digest
from .diffusion import DiffusionModel, build_schedule
from .erasure import ErasureConfig, ErasureRunState, SaliencyMask

CHECKPOINT_FORMAT_VERSION = 1

ACT_NAMES = {0: "identity", 1: "tanh", 2: "relu", 3: "sigmoid"}


class CheckpointError(ValueError):
    pass


def code_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _net_to_dict(net: nn.DenseNet) -> dict:
    return {
        "sizes": net.sizes.tolist(),
        "acts": [ACT_NAMES[int(a)] for a in net.acts],
        "params": encode_array(net.params),
    }


def _net_from_dict(d: dict) -> nn.DenseNet:
    net = nn.init_net(d["sizes"], d["acts"], seed=0)
    net.params[:] = decode_array(d["params"])
    return net


def _adamw_to_dict(state: nn.AdamWState) -> dict:
    return {
        "m": encode_array(state.m), "v": encode_array(state.v),
        "step": state.step, "lr": state.lr, "beta1": state.beta1,
        "beta2": state.beta2, "eps": state.eps,
        "weight_decay": state.weight_decay,
    }


def _adamw_from_dict(d: dict) -> nn.AdamWState:
    return nn.AdamWState(
        m=decode_array(d["m"]), v=decode_array(d["v"]), step=d["step"],
        lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"],
        weight_decay=d["weight_decay"],
    )


@dataclass
class Checkpoint:
    payload: dict

    @classmethod
    def create(cls, config_data: dict, model: DiffusionModel, command: str,
               erasure_state: ErasureRunState | None = None,
               erasure_cfg: ErasureConfig | None = None) -> "Checkpoint":
        payload = {
            "kind": "erasure-lab-checkpoint",
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": config_data,
            "provenance": {
                "command": command,
                "timestamp": datetime.now(timezone.utc).isoformat(),
                "revision": code_revision(),
                "backend": active_backend(),
            },
            "model": {
                "d": model.d,
                "n_flags": model.n_flags,
                "t_steps": model.schedule.T,
                "beta_min": float(model.schedule.betas[1]),
                "beta_max": float(model.schedule.betas[-1]),
                "live": _net_to_dict(model.eps_net),
                "frozen": _net_to_dict(model.frozen_net),
            },
            "meta": model.meta,
            "erasure": None,
        }
        if erasure_state is not None:
            st = erasure_state
            payload["erasure"] = {
                "iteration": st.iteration,
                "config": _erasure_cfg_to_dict(erasure_cfg),
                "mask": encode_array(st.mask.mask.astype(np.uint8)),
                "gen_state": _adamw_to_dict(st.gen_state),
                "discs": [_net_to_dict(d) for d in st.discs],
                "disc_states": [_adamw_to_dict(s) for s in st.disc_states],
                "rng_state": _rng_state_to_jsonable(st.rng.bit_generator.state),
                "series": {k: list(v) for k, v in st.series.items()},
                "mi_trace": [[int(i), float(v)] for i, v in st.mi_trace],
                "elapsed": st.elapsed_before,
                # raw last iterate (the payload model carries the delivered
                # EMA parameters); both are needed for exact resume
                "raw_live": encode_array(st.model.eps_net.params),
                "ema": None if st.ema is None else encode_array(st.ema),
            }
        return cls(payload=payload)

    def to_model(self) -> DiffusionModel:
        m = self.payload["model"]
        model = DiffusionModel(
            eps_net=_net_from_dict(m["live"]),
            frozen_net=_net_from_dict(m["frozen"]),
            schedule=build_schedule(m["t_steps"], m["beta_min"], m["beta_max"]),
            d=m["d"], n_flags=m["n_flags"],
            meta=dict(self.payload.get("meta", {})),
        )
        return model

    def to_erasure_state(self) -> ErasureRunState:
        e = self.payload.get("erasure")
        if e is None:
            raise CheckpointError("checkpoint holds no erasure state to resume")
        mask_arr = decode_array(e["mask"]).astype(bool)
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = _rng_state_from_jsonable(e["rng_state"])
        model = self.to_model()
        model.eps_net.params[:] = decode_array(e["raw_live"])
        return ErasureRunState(
            iteration=e["iteration"],
            model=model,
            discs=[_net_from_dict(d) for d in e["discs"]],
            gen_state=_adamw_from_dict(e["gen_state"]),
            disc_states=[_adamw_from_dict(s) for s in e["disc_states"]],
            mask=SaliencyMask(mask=mask_arr, selected_count=int(mask_arr.sum())),
            rng=rng,
            series={k: list(v) for k, v in e["series"].items()},
            mi_trace=[(int(i), float(v)) for i, v in e["mi_trace"]],
            ema=None if e["ema"] is None else decode_array(e["ema"]),
            elapsed_before=e["elapsed"],
        )

    def erasure_cfg(self) -> ErasureConfig:
        e = self.payload.get("erasure")
        if e is None:
            raise CheckpointError("checkpoint holds no erasure config")
        return _erasure_cfg_from_dict(e["config"])


def _erasure_cfg_to_dict(cfg: ErasureConfig) -> dict:
    d = dict(cfg.__dict__)
    d["disc_hidden"] = list(cfg.disc_hidden)
    d["target_indices"] = list(cfg.target_indices)
    return d


def _erasure_cfg_from_dict(d: dict) -> ErasureConfig:
    d = dict(d)
    d["disc_hidden"] = tuple(d["disc_hidden"])
    d["target_indices"] = tuple(d["target_indices"])
    return ErasureConfig(**d)


def _rng_state_to_jsonable(state: dict) -> dict:
    out = dict(state)
    inner = dict(out["state"])
    inner["state"] = str(inner["state"])      # 128-bit ints exceed JSON range
    inner["inc"] = str(inner["inc"])
    out["state"] = inner
    return out


def _rng_state_from_jsonable(state: dict) -> dict:
    out = dict(state)
    inner = dict(out["state"])
    inner["state"] = int(inner["state"])
    inner["inc"] = int(inner["inc"])
    out["state"] = inner
    return out


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    body = dict(ckpt.payload)
    body.pop("digest", None)
    body["digest"] = payload_digest(body)
    with open(path, "w") as f:
        f.write(canonical_json(body))


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path) as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint is not valid JSON: {e}") from None
    if payload.get("kind") != "erasure-lab-checkpoint":
        raise CheckpointError("not a checkpoint file")
    if payload.get("format_version", 0) > CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format v{payload['format_version']} is newer than this build"
        )
    digest = payload.pop("digest", None)
    if digest != payload_digest(payload):
        raise CheckpointError("checkpoint digest mismatch (file corrupted or edited)")
    payload["digest"] = digest
    return Checkpoint(payload=payload)
