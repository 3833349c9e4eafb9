"""Dataset files: self-describing JSON with lossless numeric payloads.

The mixture parameters ride along inside the file so oracle computations
can recover the exact ground truth; the erasure path only ever touches
points and flags.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .mixture import MixtureSpec, concept_flags, sample_mixture

DATASET_FORMAT_VERSION = 1


class DataError(ValueError):
    pass


def encode_array(arr: np.ndarray) -> dict:
    """Lossless little-endian base64 payload with dtype and shape."""
    a = np.ascontiguousarray(arr)
    dtype = {"float64": "<f8", "uint8": "u1", "int64": "<i8"}[str(a.dtype)]
    return {
        "dtype": dtype,
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype(dtype).tobytes()).decode("ascii"),
    }


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d["dtype"]).reshape(d["shape"]).copy()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def payload_digest(payload: dict) -> str:
    return hashlib.sha256(canonical_json(payload).encode()).hexdigest()


@dataclass
class LabeledDataset:
    points: np.ndarray      # (n, d) float64
    flags: np.ndarray       # (n, n_concepts) uint8
    mixture: MixtureSpec
    seed: int

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def concept_names(self) -> list[str]:
        return self.mixture.concept_names

    def split(self, train_fraction: float):
        """Deterministic train/eval split by position (points are already
        an i.i.d. draw, so a prefix split is unbiased)."""
        cut = int(self.n * train_fraction)
        return (self.points[:cut], self.flags[:cut],
                self.points[cut:], self.flags[cut:])

    def neutral_points(self) -> np.ndarray:
        """Points whose every concept flag is off."""
        return self.points[self.flags.max(axis=1) == 0]


def gen_data(mixture: MixtureSpec, n: int, seed: int) -> LabeledDataset:
    """Sample a labeled dataset; deterministic given the seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    points, comp = sample_mixture(mixture, n, rng)
    flags = concept_flags(mixture, comp)
    return LabeledDataset(points=points, flags=flags, mixture=mixture, seed=seed)


def save_dataset(ds: LabeledDataset, path: str) -> None:
    payload = {
        "kind": "erasure-lab-dataset",
        "format_version": DATASET_FORMAT_VERSION,
        "n": ds.n,
        "seed": ds.seed,
        "mixture": ds.mixture.to_dict(),
        "points": encode_array(ds.points),
        "flags": encode_array(ds.flags),
    }
    payload["digest"] = payload_digest(payload)
    with open(path, "w") as f:
        f.write(canonical_json(payload))


def load_dataset(path: str) -> LabeledDataset:
    try:
        with open(path) as f:
            payload = json.load(f)
    except FileNotFoundError:
        raise DataError(f"dataset file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"dataset file is not valid JSON: {e}") from None
    if payload.get("kind") != "erasure-lab-dataset":
        raise DataError("not a dataset file")
    if payload.get("format_version", 0) > DATASET_FORMAT_VERSION:
        raise DataError(
            f"dataset format v{payload['format_version']} is newer than this build"
        )
    digest = payload.pop("digest", None)
    if digest != payload_digest(payload):
        raise DataError("dataset digest mismatch (file corrupted or edited)")
    return LabeledDataset(
        points=decode_array(payload["points"]),
        flags=decode_array(payload["flags"]),
        mixture=MixtureSpec.from_dict(payload["mixture"]),
        seed=payload["seed"],
    )
