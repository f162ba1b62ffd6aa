"""Max-affine convex regression.

``fit`` alternates per-cell least squares with reassignment of every sample to
its maximizing hyperplane, starting from a k-means partition of the inputs.
Several seeded members are trained and the one with the smallest held-out
RMSE is polished on the full data set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

RIDGE = 1e-8


@dataclass(frozen=True)
class FitConfig:
    n_hyperplanes: int = 8
    ensemble_size: int = 4
    lspa_iters: int = 20
    improvement_rounds: int = 2
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_hyperplanes < 1 or self.ensemble_size < 1 or self.lspa_iters < 1:
            raise ValueError("n_hyperplanes, ensemble_size and lspa_iters must be >= 1")
        if self.improvement_rounds < 0:
            raise ValueError("improvement_rounds must be >= 0")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class MaxAffineModel:
    """f(x) = max_h (weights[h] @ x + offsets[h])."""

    weights: np.ndarray
    offsets: np.ndarray
    report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        b = np.atleast_1d(np.asarray(self.offsets, dtype=float)).ravel()
        if w.shape[0] != b.shape[0] or w.shape[0] < 1:
            raise ValueError("need one offset per hyperplane and at least one hyperplane")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "offsets", b)

    @property
    def n_hyperplanes(self) -> int:
        return self.weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def constant(cls, c: float, dim: int) -> "MaxAffineModel":
        return cls(np.zeros((1, dim)), np.array([float(c)]))

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected input dimension {self.input_dim}, got {x.shape[-1]}")
        return x

    def pieces(self, x: np.ndarray) -> np.ndarray:
        return self._check(x) @ self.weights.T + self.offsets

    def __call__(self, x: np.ndarray):
        v = self.pieces(x).max(axis=-1)
        return float(v) if np.ndim(v) == 0 else v

    def active(self, x: np.ndarray) -> int:
        # argmax returns the first maximizer, i.e. the lowest index on ties
        return int(np.argmax(self.pieces(x)))

    def subgradient(self, x: np.ndarray) -> np.ndarray:
        return self.weights[self.active(x)].copy()

    def offset(self, c: float) -> "MaxAffineModel":
        return MaxAffineModel(self.weights.copy(), self.offsets + c, dict(self.report))

    def scaled(self, lam: float) -> "MaxAffineModel":
        """Model of ``lam * f``; only convex for ``lam >= 0``."""
        if lam < 0:
            raise ValueError("negative scaling breaks convexity")
        return MaxAffineModel(self.weights * lam, self.offsets * lam, dict(self.report))

    def to_dict(self) -> dict:
        return {
            "format": "max-affine/1",
            "H": self.n_hyperplanes,
            "D": self.input_dim,
            "weights": self.weights.ravel().tolist(),
            "offsets": self.offsets.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaxAffineModel":
        H, D = int(d["H"]), int(d["D"])
        return cls(np.asarray(d["weights"], dtype=float).reshape(H, D), np.asarray(d["offsets"], dtype=float))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, s: str) -> "MaxAffineModel":
        return cls.from_dict(json.loads(s))


def evaluate(model: MaxAffineModel, x: np.ndarray):
    return model(x)


def subgradient(model: MaxAffineModel, x: np.ndarray) -> np.ndarray:
    return model.subgradient(x)


def offset(model: MaxAffineModel, c: float) -> MaxAffineModel:
    return model.offset(c)


# --- fitting ---------------------------------------------------------------


def _kmeans(X: np.ndarray, k: int, rng: np.random.Generator, iters: int = 25) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns labels."""
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.asarray(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(X[idx])
    C = np.asarray(centers, dtype=float)
    labels = np.zeros(n, dtype=int)
    for it in range(iters):
        d2 = ((X[:, None, :] - C[None]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        if it > 0 and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            m = labels == j
            if m.any():
                C[j] = X[m].mean(axis=0)
    return labels


def _cell_lstsq(X: np.ndarray, y: np.ndarray, flags: list) -> np.ndarray:
    """Affine least squares on one cell; returns [w, b]."""
    A = np.hstack([X, np.ones((X.shape[0], 1))])
    if A.shape[0] >= A.shape[1] and np.linalg.matrix_rank(A) == A.shape[1]:
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        return coef
    flags.append("ridge")
    return np.linalg.solve(A.T @ A + RIDGE * np.eye(A.shape[1]), A.T @ y)


def _fit_cells(X, y, labels, H, flags):
    planes = []
    for h in range(H):
        m = labels == h
        if m.any():
            planes.append(_cell_lstsq(X[m], y[m], flags))
    return np.asarray(planes)


def _predict(planes: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ planes[:, :-1].T + planes[:, -1]


def _split_worst(X, y, labels, resid, H, rng):
    """Restore ``H`` cells by repeatedly splitting the cell with the largest error."""
    _, labels = np.unique(labels, return_inverse=True)
    while labels.max() + 1 < H:
        cells = np.arange(labels.max() + 1)
        sse = np.array([resid[labels == c].sum() for c in cells])
        sizes = np.bincount(labels)
        order = np.lexsort((-sizes, -sse))
        target = next((cells[o] for o in order if sizes[o] >= 2), None)
        if target is None:
            break
        m = np.flatnonzero(labels == target)
        sub = _kmeans(X[m], 2, rng)
        if sub.min() == sub.max():
            sub = np.arange(len(m)) % 2
        labels[m[sub == 1]] = labels.max() + 1
    return labels


def _sq_resid(planes, X, y):
    return (y - _predict(planes, X).max(axis=1)) ** 2


def _lspa(X, y, labels, H, iters, rng, flags):
    best_planes, best_err = None, np.inf
    for _ in range(iters):
        _, labels = np.unique(labels, return_inverse=True)
        planes = _fit_cells(X, y, labels, labels.max() + 1, flags)
        err = float(np.mean((y - _predict(planes, X).max(axis=1)) ** 2))
        if err < best_err:
            best_planes, best_err = planes, err
        new = np.argmax(_predict(planes, X), axis=1)
        _, new = np.unique(new, return_inverse=True)
        if new.max() + 1 < H:
            new = _split_worst(X, y, new, _sq_resid(planes, X, y), H, rng)
        if np.array_equal(new, labels):
            break
        labels = new
    return best_planes, best_err


def _improve(X, y, planes, H, cfg, rng, flags):
    """Drop the least populated cell, split the worst one, refit; keep improvements."""
    best_planes = planes
    best_err = float(np.mean(_sq_resid(planes, X, y)))
    for _ in range(cfg.improvement_rounds):
        if H < 2:
            break
        labels = np.argmax(_predict(best_planes, X), axis=1)
        used = np.unique(labels)
        if len(used) >= 2:
            smallest = used[np.argmin([np.sum(labels == u) for u in used])]
            keep = best_planes[[u for u in used if u != smallest]]
            labels = np.argmax(_predict(keep, X), axis=1)
        labels = _split_worst(X, y, labels, _sq_resid(best_planes, X, y), H, rng)
        planes, err = _lspa(X, y, labels, H, cfg.lspa_iters, rng, flags)
        if planes is not None and err < best_err:
            best_planes, best_err = planes, err
    return best_planes, best_err


def _train(X, y, H, cfg, rng, flags):
    labels = _kmeans(X, H, rng) if H > 1 else np.zeros(len(y), dtype=int)
    planes, _ = _lspa(X, y, labels, H, cfg.lspa_iters, rng, flags)
    planes, _ = _improve(X, y, planes, H, cfg, rng, flags)
    return planes


def fit(X, y, cfg: FitConfig = FitConfig()) -> MaxAffineModel:
    """Fit a convex max-affine model to samples ``(X[k], y[k])``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, D = X.shape
    H = cfg.n_hyperplanes
    if len(y) != n:
        raise ValueError("X and y lengths differ")
    if n < max(H, D + 1):
        raise ValueError(f"need at least max(H, D+1) = {max(H, D + 1)} samples, got {n}")
    flags: list = []
    n_val = int(round(cfg.validation_fraction * n))
    members = []
    for m in range(cfg.ensemble_size):
        rng = np.random.default_rng([cfg.seed, m])
        perm = rng.permutation(n)
        val, tr = perm[:n_val], perm[n_val:]
        if n_val == 0 or len(tr) < max(H, D + 1):
            tr, val = perm, perm
        planes = _train(X[tr], y[tr], min(H, len(tr)), cfg, rng, flags)
        rmse = float(np.sqrt(np.mean((y[val] - _predict(planes, X[val]).max(axis=1)) ** 2)))
        members.append((rmse, m, planes))
    val_rmse, best_m, planes = min(members, key=lambda t: (t[0], t[1]))
    rng = np.random.default_rng([cfg.seed, cfg.ensemble_size])
    labels = np.argmax(_predict(planes, X), axis=1)
    polished, _ = _lspa(X, y, labels, H, cfg.lspa_iters, rng, flags)
    candidates = [p for p in (polished, planes) if p is not None]
    errs = [float(np.mean((y - _predict(p, X).max(axis=1)) ** 2)) for p in candidates]
    planes = candidates[int(np.argmin(errs))]
    report = {
        "member": best_m,
        "validation_rmse": val_rmse,
        "train_rmse": float(np.sqrt(min(errs))),
        "ridge_cells": flags.count("ridge"),
    }
    return MaxAffineModel(planes[:, :-1], planes[:, -1], report)


def rmse(model: MaxAffineModel, X, y) -> float:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return float(np.sqrt(np.mean((np.asarray(y, dtype=float) - model(X)) ** 2)))


def fit_surrogate(X, y, cfg: FitConfig = FitConfig()) -> MaxAffineModel:
    """:func:`fit` with the hyperplane count reduced to what the data supports.

    Each cell needs ``D + 1`` points for a determined least-squares fit, so at
    most ``n // (D + 1)`` hyperplanes are used; below ``D + 1`` samples the
    result is a single ridge-damped affine piece.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    n, D = X.shape
    H = max(1, min(cfg.n_hyperplanes, n // (D + 1)))
    if n < D + 1:
        flags: list = []
        coef = _cell_lstsq(X, y, flags)
        return MaxAffineModel(coef[None, :-1], coef[-1:], {"ridge_cells": len(flags), "n_hyperplanes": 1})
    model = fit(X, y, replace(cfg, n_hyperplanes=H))
    model.report["n_hyperplanes"] = H
    return model
