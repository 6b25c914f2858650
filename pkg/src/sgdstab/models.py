"""Datasets and analytic per-example loss models.

Every model exposes the loss value, the analytic gradient, and an analytic
Hessian-vector product, together with declared smoothness constants
(gradient bound, gradient Lipschitz constant, Hessian Lipschitz constant,
loss ceiling).  Models are immutable and all evaluations are pure, so they
can be shared freely across worker processes.

Built-in models:

* :class:`QuadraticModel`   -- f(w, z) = 0.5 (w - x)' A (w - x), exact oracle.
* :class:`LogisticModel`    -- binary cross-entropy with labels in {0, 1}.
* :class:`TanhMlpModel`     -- one-hidden-layer tanh network, squared error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

Array = np.ndarray

#: Largest parameter dimension for which the dense-Hessian oracle will run.
ORACLE_DIM_LIMIT = 100

# sup |t (1 - t^2)| and sup |(1 - t^2)(1 - 3 t^2)| over t = tanh(u)
_TANH_D2_MAX = 2.0 / (3.0 * math.sqrt(3.0))
_TANH_D3_MAX = 2.0


class OracleLimitError(ValueError):
    """Dense-Hessian oracle requested above its dimension cap."""


@dataclass(frozen=True)
class Example:
    """One observation: a feature vector and a scalar label."""

    features: Array
    label: float

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 1:
            raise ValueError(f"features must be a vector, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        if not math.isfinite(self.label):
            raise ValueError("label must be finite")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", float(self.label))

    @property
    def dim(self) -> int:
        return self.features.shape[0]


class Dataset:
    """An ordered sample of examples with a common feature dimension.

    Stored as a dense (m, d) feature matrix plus an (m,) label vector so
    estimators can vectorize over examples.
    """

    def __init__(self, features: Array, labels: Array):
        X = np.asarray(features, dtype=float)
        y = np.asarray(labels, dtype=float)
        if X.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {X.shape}")
        if X.shape[0] < 1:
            raise ValueError("a dataset needs at least one example")
        if y.shape != (X.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {X.shape[0]} examples")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        self.features = X
        self.labels = y

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.m

    def example(self, i: int) -> Example:
        return Example(self.features[i].copy(), float(self.labels[i]))

    def examples(self) -> Iterator[Example]:
        for i in range(self.m):
            yield self.example(i)

    def replace(self, i: int, z: Example) -> "Dataset":
        """Copy of the dataset with example ``i`` swapped for ``z``.

        All other rows are carried over bit-for-bit, which is what the
        coupled paired-run protocol relies on.
        """
        if not 0 <= i < self.m:
            raise IndexError(f"replace index {i} out of range [0, {self.m})")
        if z.dim != self.dim:
            raise ValueError(f"replacement has dim {z.dim}, dataset has dim {self.dim}")
        X = self.features.copy()
        y = self.labels.copy()
        X[i] = z.features
        y[i] = z.label
        return Dataset(X, y)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.features[idx], self.labels[idx])

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> "Dataset":
        if len(examples) < 1:
            raise ValueError("a dataset needs at least one example")
        dims = {z.dim for z in examples}
        if len(dims) != 1:
            raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")
        X = np.stack([z.features for z in examples])
        y = np.array([z.label for z in examples], dtype=float)
        return cls(X, y)

    def to_csv(self, path) -> None:
        """Write ``f0,...,f{d-1},y`` rows in IEEE-754 decimal text."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"f{j}" for j in range(self.dim)] + ["y"])
            for i in range(self.m):
                writer.writerow([repr(float(x)) for x in self.features[i]]
                                + [repr(float(self.labels[i]))])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1] != "y" or any(h != f"f{j}" for j, h in enumerate(header[:-1])):
                raise ValueError(f"unexpected dataset header: {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise ValueError("dataset CSV has no data rows")
        arr = np.array(rows, dtype=float)
        return cls(arr[:, :-1], arr[:, -1])


@dataclass(frozen=True)
class SmoothnessConstants:
    """Declared regularity constants of a loss model on a dataset.

    ``None`` marks an unbounded or unknown constant; ``note`` records how
    the numbers were obtained ("closed-form", "box", or "empirical", the
    last directing callers to the trajectory-tracking estimators).
    """

    L: Optional[float]
    beta: Optional[float]
    rho: Optional[float]
    loss_upper_bound: Optional[float]
    note: str = "closed-form"

    def __post_init__(self):
        for name in ("L", "beta", "rho", "loss_upper_bound"):
            v = getattr(self, name)
            if v is not None and (not math.isfinite(v) or v < 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


class LossModel:
    """Base contract for a differentiable per-example loss f(w, z).

    Subclasses implement :meth:`loss`, :meth:`grad`, and :meth:`hvp`
    analytically.  ``batch_losses`` / ``batch_grads`` have loop defaults
    that concrete models override with vectorized versions.
    """

    name: str = "abstract"
    param_dim: int = 0
    kind: str = "nonconvex"  # "convex" or "nonconvex"

    def loss(self, w: Array, z: Example) -> float:
        raise NotImplementedError

    def grad(self, w: Array, z: Example) -> Array:
        raise NotImplementedError

    def hvp(self, w: Array, z: Example, v: Array) -> Array:
        raise NotImplementedError

    def declared_constants(self, dataset: Dataset) -> SmoothnessConstants:
        raise NotImplementedError

    def batch_losses(self, w: Array, dataset: Dataset) -> Array:
        return np.array([self.loss(w, z) for z in dataset.examples()])

    def batch_grads(self, w: Array, dataset: Dataset) -> Array:
        return np.stack([self.grad(w, z) for z in dataset.examples()])

    def _check_w(self, w: Array) -> Array:
        w = np.asarray(w, dtype=float)
        if w.shape != (self.param_dim,):
            raise ValueError(
                f"{self.name}: parameter vector has shape {w.shape}, expected ({self.param_dim},)"
            )
        return w

    def _check_z(self, z: Example, expected_dim: int) -> Example:
        if z.dim != expected_dim:
            raise ValueError(f"{self.name}: example has dim {z.dim}, expected {expected_dim}")
        return z


def dense_hessian(model: LossModel, w: Array, z: Example, max_dim: int = ORACLE_DIM_LIMIT) -> Array:
    """Materialize the per-example Hessian column by column from HVPs.

    Verification oracle only; refuses above ``max_dim`` parameters.
    """
    p = model.param_dim
    if p > max_dim:
        raise OracleLimitError(f"param_dim {p} exceeds dense-Hessian oracle limit {max_dim}")
    H = np.empty((p, p))
    basis = np.zeros(p)
    for j in range(p):
        basis[j] = 1.0
        H[:, j] = model.hvp(w, z, basis)
        basis[j] = 0.0
    return H


class QuadraticModel(LossModel):
    """f(w, z) = 0.5 (w - x)' A (w - x) with A symmetric PSD.

    The example's feature vector acts as the quadratic's center; labels are
    ignored.  The gradient is unbounded on all of R^p, so the declared L is
    the ``None`` sentinel unless a domain radius is supplied.
    """

    kind = "convex"

    def __init__(self, A: Array, domain_radius: Optional[float] = None):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        if not np.allclose(A, A.T, atol=1e-12):
            raise ValueError("A must be symmetric")
        eigs = np.linalg.eigvalsh(A)
        if eigs.min() < -1e-10:
            raise ValueError(f"A must be PSD, min eigenvalue {eigs.min():.3e}")
        self.A = A
        self.param_dim = A.shape[0]
        self.name = f"quadratic(p={self.param_dim})"
        self.domain_radius = domain_radius
        self._spectral_norm = float(eigs.max())

    def loss(self, w, z):
        w = self._check_w(w)
        self._check_z(z, self.param_dim)
        d = w - z.features
        return float(max(0.5 * d @ (self.A @ d), 0.0))

    def grad(self, w, z):
        w = self._check_w(w)
        self._check_z(z, self.param_dim)
        return self.A @ (w - z.features)

    def hvp(self, w, z, v):
        self._check_w(w)
        self._check_z(z, self.param_dim)
        v = np.asarray(v, dtype=float)
        if v.shape != (self.param_dim,):
            raise ValueError(f"direction has shape {v.shape}, expected ({self.param_dim},)")
        return self.A @ v

    def batch_losses(self, w, dataset):
        D = w[None, :] - dataset.features
        vals = 0.5 * np.einsum("ij,jk,ik->i", D, self.A, D)
        return np.maximum(vals, 0.0)

    def batch_grads(self, w, dataset):
        return (w[None, :] - dataset.features) @ self.A.T

    def declared_constants(self, dataset):
        if self.domain_radius is None:
            L = None
            B = None
        else:
            reach = self.domain_radius + float(np.linalg.norm(dataset.features, axis=1).max())
            L = self._spectral_norm * reach
            B = 0.5 * self._spectral_norm * reach**2
        return SmoothnessConstants(L=L, beta=self._spectral_norm, rho=0.0, loss_upper_bound=B)


def _sigmoid(s: Array) -> Array:
    out = np.empty_like(s, dtype=float)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


class LogisticModel(LossModel):
    """Binary cross-entropy f(w, z) = log(1 + e^{w'x}) - y w'x, labels in {0, 1}."""

    kind = "convex"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.param_dim = int(dim)
        self.name = f"logistic(d={dim})"

    def loss(self, w, z):
        w = self._check_w(w)
        self._check_z(z, self.param_dim)
        s = float(w @ z.features)
        return float(np.logaddexp(0.0, s) - z.label * s)

    def grad(self, w, z):
        w = self._check_w(w)
        self._check_z(z, self.param_dim)
        s = np.array(w @ z.features)
        return (float(_sigmoid(s)) - z.label) * z.features

    def hvp(self, w, z, v):
        w = self._check_w(w)
        self._check_z(z, self.param_dim)
        v = np.asarray(v, dtype=float)
        if v.shape != (self.param_dim,):
            raise ValueError(f"direction has shape {v.shape}, expected ({self.param_dim},)")
        p = float(_sigmoid(np.array(w @ z.features)))
        return (p * (1.0 - p)) * (z.features @ v) * z.features

    def batch_losses(self, w, dataset):
        s = dataset.features @ w
        return np.logaddexp(0.0, s) - dataset.labels * s

    def batch_grads(self, w, dataset):
        s = dataset.features @ w
        return (_sigmoid(s) - dataset.labels)[:, None] * dataset.features

    def declared_constants(self, dataset):
        # Data-dependent suprema: |sigma - y| <= 1, sigma' <= 1/4, and the
        # third derivative of the sigmoid is bounded by 1/(6 sqrt(3)).
        xmax = float(np.linalg.norm(dataset.features, axis=1).max())
        return SmoothnessConstants(
            L=xmax,
            beta=xmax**2 / 4.0,
            rho=xmax**3 / (6.0 * math.sqrt(3.0)),
            loss_upper_bound=None,
        )


class TanhMlpModel(LossModel):
    """One-hidden-layer tanh network with squared-error loss.

    Parameters pack as [W.ravel(), v] with W of shape (hidden, dim).  With
    ``output="tanh"`` the prediction is tanh(v' tanh(W x)) and the loss is
    (yhat - y)^2 / 4, which stays in [0, 1] whenever |y| <= 1.  With
    ``output="linear"`` the prediction is v' tanh(W x) and the loss is
    (yhat - y)^2 / 2 (no finite ceiling).

    HVPs are analytic via the forward-over-reverse rule: the backward pass
    is differentiated once more along the requested direction.
    """

    kind = "nonconvex"

    def __init__(self, dim: int, hidden: int, output: str = "tanh",
                 box_radius: Optional[float] = None):
        if dim < 1 or hidden < 1:
            raise ValueError("dim and hidden must be >= 1")
        if output not in ("tanh", "linear"):
            raise ValueError(f"unknown output kind {output!r}")
        self.dim = int(dim)
        self.hidden = int(hidden)
        self.output = output
        self.box_radius = box_radius
        self.param_dim = self.hidden * self.dim + self.hidden
        self.name = f"tanh_mlp(d={dim},h={hidden},{output})"
        self._scale = 0.25 if output == "tanh" else 0.5

    def unpack(self, w: Array):
        W = w[: self.hidden * self.dim].reshape(self.hidden, self.dim)
        v = w[self.hidden * self.dim:]
        return W, v

    def pack(self, W: Array, v: Array) -> Array:
        return np.concatenate([np.asarray(W, dtype=float).ravel(), np.asarray(v, dtype=float)])

    def predict(self, w: Array, x: Array) -> float:
        W, v = self.unpack(self._check_w(w))
        s = float(v @ np.tanh(W @ x))
        return math.tanh(s) if self.output == "tanh" else s

    def _forward(self, w, x):
        W, v = self.unpack(w)
        u = W @ x
        h = np.tanh(u)
        s = float(v @ h)
        yhat = math.tanh(s) if self.output == "tanh" else s
        return W, v, h, s, yhat

    def loss(self, w, z):
        w = self._check_w(w)
        self._check_z(z, self.dim)
        *_, yhat = self._forward(w, z.features)
        e = yhat - z.label
        return self._scale * e * e

    def grad(self, w, z):
        w = self._check_w(w)
        self._check_z(z, self.dim)
        x = z.features
        W, v, h, s, yhat = self._forward(w, x)
        e = yhat - z.label
        dyds = (1.0 - yhat * yhat) if self.output == "tanh" else 1.0
        q = 2.0 * self._scale * e * dyds          # dL/ds
        gu = q * v * (1.0 - h * h)                # dL/du
        return np.concatenate([np.outer(gu, x).ravel(), q * h])

    def hvp(self, w, z, v_dir):
        w = self._check_w(w)
        self._check_z(z, self.dim)
        v_dir = np.asarray(v_dir, dtype=float)
        if v_dir.shape != (self.param_dim,):
            raise ValueError(f"direction has shape {v_dir.shape}, expected ({self.param_dim},)")
        x = z.features
        W, v, h, s, yhat = self._forward(w, x)
        Wd, vd = self.unpack(v_dir)
        e = yhat - z.label

        hp = 1.0 - h * h                           # tanh'(u)
        ud = Wd @ x
        hd = hp * ud
        sd = float(vd @ h + v @ hd)
        if self.output == "tanh":
            dyds = 1.0 - yhat * yhat
            yhatd = dyds * sd
            q = 2.0 * self._scale * e * dyds
            qd = 2.0 * self._scale * (yhatd * dyds + e * (-2.0 * yhat * yhatd))
        else:
            yhatd = sd
            q = 2.0 * self._scale * e
            qd = 2.0 * self._scale * yhatd

        gv_d = qd * h + q * hd
        gu_d = qd * v * hp + q * vd * hp + q * v * (-2.0 * h * hd)
        return np.concatenate([np.outer(gu_d, x).ravel(), gv_d])

    def batch_losses(self, w, dataset):
        W, v = self.unpack(self._check_w(w))
        S = np.tanh(dataset.features @ W.T) @ v
        yhat = np.tanh(S) if self.output == "tanh" else S
        e = yhat - dataset.labels
        return self._scale * e * e

    def batch_grads(self, w, dataset):
        W, v = self.unpack(self._check_w(w))
        X = dataset.features
        Hh = np.tanh(X @ W.T)                      # (m, hidden)
        S = Hh @ v
        if self.output == "tanh":
            yhat = np.tanh(S)
            q = 2.0 * self._scale * (yhat - dataset.labels) * (1.0 - yhat * yhat)
        else:
            q = 2.0 * self._scale * (S - dataset.labels)
        Gu = q[:, None] * (v[None, :] * (1.0 - Hh * Hh))   # (m, hidden)
        GW = Gu[:, :, None] * X[:, None, :]                # (m, hidden, dim)
        return np.concatenate([GW.reshape(len(dataset), -1), q[:, None] * Hh], axis=1)

    def declared_constants(self, dataset):
        """Conservative box constants, or the "empirical" sentinel.

        Without a ``box_radius`` there is no global Lipschitz/smoothness
        constant for this architecture (second derivatives grow with the
        output weights), so callers are pointed at the trajectory-tracking
        estimators instead.  With a radius r the constants below upper-bound
        the respective derivative norms on {||w|| <= r}; they are crude sums
        of block norms, valid but far from tight.
        """
        ymax = float(np.abs(dataset.labels).max())
        if self.output == "tanh":
            B = (1.0 + ymax) ** 2 / 4.0
        else:
            B = None
        if self.box_radius is None:
            return SmoothnessConstants(L=None, beta=None, rho=None,
                                       loss_upper_bound=B, note="empirical")
        r = float(self.box_radius)
        X = float(np.linalg.norm(dataset.features, axis=1).max())
        emax = 1.0 + ymax if self.output == "tanh" else None
        if emax is None:
            raise ValueError("box constants are only derived for the tanh output head")
        Gs = math.sqrt(self.hidden + (r * X) ** 2)          # sup ||grad s||
        d2s = X + _TANH_D2_MAX * r * X**2                    # sup ||hess s|| (block sum)
        d2y = _TANH_D2_MAX * Gs**2 + d2s                     # sup ||hess yhat||
        d3s = 3.0 * _TANH_D2_MAX * X**2 + _TANH_D3_MAX * r * X**3
        d3y = _TANH_D3_MAX * Gs**3 + 3.0 * _TANH_D2_MAX * Gs * d2s + d3s
        L = 0.5 * emax * Gs
        beta = 0.5 * Gs**2 + 0.5 * emax * d2y
        rho = 1.5 * Gs * d2y + 0.5 * emax * d3y
        return SmoothnessConstants(L=L, beta=beta, rho=rho, loss_upper_bound=B, note="box")


def make_model(kind: str, **params) -> LossModel:
    """Construct a built-in model from a config-style description."""
    if kind == "logistic":
        return LogisticModel(dim=params["dim"])
    if kind == "quadratic":
        A = np.asarray(params["A"], dtype=float)
        return QuadraticModel(A, domain_radius=params.get("domain_radius"))
    if kind == "tanh_mlp":
        return TanhMlpModel(
            dim=params["dim"],
            hidden=params["hidden"],
            output=params.get("output", "tanh"),
            box_radius=params.get("box_radius"),
        )
    raise ValueError(f"unknown model kind {kind!r}")
