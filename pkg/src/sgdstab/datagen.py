"""Synthetic dataset generators: Gaussian blobs and a tanh teacher network.

Desk-scale stand-ins for external data.  Everything is deterministic in the
seed; the teacher's weights are derived from the same seed so the planted
hypothesis can be recovered for transfer experiments.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .models import Dataset, Example, TanhMlpModel

Array = np.ndarray

_BLOB_DEFAULTS = {"d": 2, "m": 100, "separation": 4.0, "cluster_std": 1.0, "label_noise": 0.0}
_TEACHER_DEFAULTS = {
    "d": 5, "m": 100, "hidden": 8, "teacher_scale": 1.0, "x_scale": 1.0,
    "label_noise_std": 0.0, "output": "tanh",
}


def _merge(defaults: dict, params: Optional[dict], kind: str) -> dict:
    params = dict(params or {})
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(f"unknown {kind} params: {sorted(unknown)}")
    out = dict(defaults)
    out.update(params)
    if out["m"] < 1:
        raise ValueError(f"m must be >= 1, got {out['m']}")
    if out["d"] < 1:
        raise ValueError(f"d must be >= 1, got {out['d']}")
    return out


def _blobs_with_rng(params: dict, rng: np.random.Generator) -> Dataset:
    p = _merge(_BLOB_DEFAULTS, params, "gaussian_blobs")
    m, d = p["m"], p["d"]
    labels = rng.integers(0, 2, size=m).astype(float)
    offset = np.zeros(d)
    offset[0] = p["separation"] / 2.0
    X = rng.standard_normal((m, d)) * p["cluster_std"]
    X += np.where(labels[:, None] > 0.5, offset[None, :], -offset[None, :])
    if p["label_noise"] > 0:
        flip = rng.random(m) < p["label_noise"]
        labels[flip] = 1.0 - labels[flip]
    return Dataset(X, labels)


def teacher_weights(params: Optional[dict], seed: int) -> Array:
    """The planted network's parameter vector for a given generator seed."""
    p = _merge(_TEACHER_DEFAULTS, params, "teacher_mlp")
    tseed, _ = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(tseed)
    n_w = p["hidden"] * p["d"] + p["hidden"]
    return rng.standard_normal(n_w) * p["teacher_scale"]


def teacher_model(params: Optional[dict]) -> TanhMlpModel:
    p = _merge(_TEACHER_DEFAULTS, params, "teacher_mlp")
    return TanhMlpModel(dim=p["d"], hidden=p["hidden"], output=p["output"])


def _teacher_with_rngs(params: dict, teacher_rng: np.random.Generator,
                       data_rng: np.random.Generator) -> Dataset:
    p = _merge(_TEACHER_DEFAULTS, params, "teacher_mlp")
    model = teacher_model(p)
    n_w = p["hidden"] * p["d"] + p["hidden"]
    w_star = teacher_rng.standard_normal(n_w) * p["teacher_scale"]
    X = data_rng.standard_normal((p["m"], p["d"])) * p["x_scale"]
    W, v = model.unpack(w_star)
    y = np.tanh(X @ W.T) @ v
    if p["output"] == "tanh":
        y = np.tanh(y)
    if p["label_noise_std"] > 0:
        y = y + data_rng.standard_normal(p["m"]) * p["label_noise_std"]
        if p["output"] == "tanh":
            y = np.clip(y, -1.0, 1.0)
    return Dataset(X, y)


def generate_synthetic(kind: str, params: Optional[dict], seed: int) -> Dataset:
    """Draw a dataset of the requested kind, deterministic in the seed."""
    if kind == "gaussian_blobs":
        return _blobs_with_rng(params or {}, np.random.default_rng(seed))
    if kind == "teacher_mlp":
        tseed, dseed = np.random.SeedSequence(seed).spawn(2)
        return _teacher_with_rngs(params or {}, np.random.default_rng(tseed),
                                  np.random.default_rng(dseed))
    raise ValueError(f"unknown synthetic kind {kind!r}")


def dataset_drawer(kind: str, params: Optional[dict], teacher_seed: Optional[int] = None
                   ) -> Callable[[np.random.Generator], Dataset]:
    """rng -> Dataset closure for replicated experiments.

    For teacher data the planted weights stay fixed across draws (pinned by
    ``teacher_seed``) while the inputs are redrawn, so replicates share one
    ground-truth task.
    """
    if kind == "gaussian_blobs":
        return lambda rng: _blobs_with_rng(params or {}, rng)
    if kind == "teacher_mlp":
        if teacher_seed is None:
            raise ValueError("teacher_mlp drawer needs a teacher_seed")
        tseed, _ = np.random.SeedSequence(teacher_seed).spawn(2)

        def draw(rng: np.random.Generator) -> Dataset:
            return _teacher_with_rngs(params or {}, np.random.default_rng(tseed), rng)

        return draw
    raise ValueError(f"unknown synthetic kind {kind!r}")


def example_drawer(kind: str, params: Optional[dict], teacher_seed: Optional[int] = None
                   ) -> Callable[[np.random.Generator], Example]:
    """rng -> Example closure drawing single fresh observations."""
    single = dict(params or {})
    single["m"] = 1
    draw = dataset_drawer(kind, single, teacher_seed)
    return lambda rng: draw(rng).example(0)
