"""Linear SVM with squared hinge loss, C selection and logistic score mapping.

The primal objective

    F(w, b) = 0.5 * |w|^2 + C * sum_i max(0, 1 - y_i (w . x_i + b))^2

is convex and once differentiable, so it is minimized with a generalized
Newton method: each step solves the quadratic model restricted to the
currently active (margin-violating) samples, followed by an exact line search
along the piecewise quadratic objective. The bias is an unregularized
intercept. Labels are +1 for spoof and -1 for live.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateLabelsError, DescriptorMismatchError, InvalidDataError
from .texture import DESCRIPTOR_DIMS, FeatureVector

MODEL_VERSION = "fpad.svm/1"
DEFAULT_C = 1e2
DEFAULT_C_GRID = tuple(10.0 ** k for k in range(-5, 6))

SPOOF = 1
LIVE = -1


@dataclass(frozen=True)
class TrainConfig:
    C: float = DEFAULT_C
    c_grid: Tuple[float, ...] = DEFAULT_C_GRID
    tolerance: float = 1e-6
    max_epochs: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not (self.C > 0 and math.isfinite(self.C)):
            raise InvalidDataError(f"C must be positive, got {self.C}")
        grid = tuple(float(c) for c in self.c_grid)
        if not grid or any(not (c > 0 and math.isfinite(c)) for c in grid):
            raise InvalidDataError("c_grid must be a non-empty list of positive values")
        object.__setattr__(self, "c_grid", grid)
        if not self.tolerance > 0:
            raise InvalidDataError("tolerance must be positive")
        if self.max_epochs < 1:
            raise InvalidDataError("max_epochs must be >= 1")


@dataclass(frozen=True, eq=False)
class SvmModel:
    w: np.ndarray
    b: float
    C: float
    descriptor: Optional[str] = None
    calib: Optional[Tuple[float, float]] = None
    train_fingerprint: Optional[str] = None
    version: str = MODEL_VERSION
    objective_history: List[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 1:
            raise InvalidDataError("w must be a vector")
        if self.descriptor is not None and w.shape[0] != DESCRIPTOR_DIMS[self.descriptor]:
            raise DescriptorMismatchError(
                f"{self.descriptor} models need {DESCRIPTOR_DIMS[self.descriptor]} weights")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))
        if self.calib is not None:
            object.__setattr__(self, "calib", (float(self.calib[0]), float(self.calib[1])))

    @property
    def calibrated(self) -> bool:
        return self.calib is not None

    def with_calibration(self, A: float, B: float) -> "SvmModel":
        return SvmModel(self.w, self.b, self.C, self.descriptor, (A, B),
                        self.train_fingerprint, self.version, list(self.objective_history))

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "descriptor": self.descriptor,
            "C": self.C,
            "w": [float(v) for v in self.w],
            "b": self.b,
            "calib": None if self.calib is None else {"A": self.calib[0], "B": self.calib[1]},
            "train_fingerprint": self.train_fingerprint,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SvmModel":
        if doc.get("version") != MODEL_VERSION:
            raise InvalidDataError(f"unsupported model version {doc.get('version')!r}")
        calib = doc.get("calib")
        return cls(np.array(doc["w"], dtype=np.float64), doc["b"], doc["C"],
                   doc.get("descriptor"),
                   None if calib is None else (calib["A"], calib["B"]),
                   doc.get("train_fingerprint"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SvmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# training


def _check_training_data(X, y) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise InvalidDataError(f"X must be (n, d) and y (n,), got {X.shape} and {y.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidDataError("features contain non-finite values")
    if not np.all((y == 1) | (y == -1)):
        raise InvalidDataError("labels must be +1 or -1")
    if X.shape[0] < 2 or np.all(y == y[0]):
        raise DegenerateLabelsError("training data needs both classes")
    return X, y


def svm_objective(w, b, X, y, C) -> float:
    w = np.asarray(w, dtype=np.float64)
    slack = np.maximum(0.0, 1.0 - y * (X @ w + b))
    return 0.5 * float(w @ w) + C * float(slack @ slack)


def _line_search(w, s_w, r, q, C) -> float:
    """Exact minimizer of t -> F(theta + t s) along a descent direction.

    ``r`` are the current residuals 1 - y_i f(x_i) and ``q`` their rate of
    decrease, so residuals along the ray are ``r - t q``.
    """
    ww, ss = float(w @ s_w), float(s_w @ s_w)

    def slope(t):
        res = r - t * q
        act = res > 0
        return ww + t * ss - 2.0 * C * float(res[act] @ q[act]), ss + 2.0 * C * float(q[act] @ q[act])

    d0, _ = slope(0.0)
    if d0 >= 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while slope(hi)[0] < 0:
        lo, hi = hi, hi * 2.0
        if hi > 1e12:
            return hi
    t = hi
    for _ in range(100):
        d, dd = slope(t)
        if abs(d) <= 1e-14 * abs(d0):
            break
        if d < 0:
            lo = t
        else:
            hi = t
        t_new = t - d / dd if dd > 0 else 0.5 * (lo + hi)
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
        t = t_new
    return t


def train_l2svm(X, y, cfg: Optional[TrainConfig] = None, C: Optional[float] = None,
                descriptor: Optional[str] = None) -> SvmModel:
    """Fit ``(w, b)`` minimizing the squared-hinge objective.

    ``C`` overrides ``cfg.C``. The returned model is uncalibrated; its
    ``objective_history`` records F after every Newton epoch, starting from
    F(0, 0) = C * n.
    """
    cfg = cfg or TrainConfig()
    C = float(cfg.C if C is None else C)
    if not (C > 0 and math.isfinite(C)):
        raise InvalidDataError(f"C must be positive, got {C}")
    X, y = _check_training_data(X, y)
    n, d = X.shape
    Z = np.hstack([X, np.ones((n, 1))])
    Zy = Z * y[:, None]
    reg = np.ones(d + 1)
    reg[d] = 0.0
    ridge = 1e-12 * max(1.0, 2.0 * C * n)

    theta = np.zeros(d + 1)
    r = np.ones(n)  # residuals 1 - y_i f(x_i)
    history = [svm_objective(theta[:d], 0.0, X, y, C)]
    g0 = None
    for _ in range(cfg.max_epochs):
        act = r > 0
        grad = reg * theta - 2.0 * C * (Zy[act].T @ r[act])
        gnorm = float(np.abs(grad).max())
        if g0 is None:
            g0 = max(gnorm, 1e-300)
        if gnorm <= 1e-12 * max(1.0, g0):
            break
        Za = Z[act]
        hess = 2.0 * C * (Za.T @ Za)
        hess[np.diag_indices(d + 1)] += reg
        hess[d, d] += ridge
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
        q = Zy @ step
        t = _line_search(theta[:d], step[:d], r, q, C)
        if t == 0.0:
            break
        theta = theta + t * step
        r = 1.0 - Zy @ theta
        slack = np.maximum(r, 0.0)
        f_new = 0.5 * float(theta[:d] @ theta[:d]) + C * float(slack @ slack)
        f_old = history[-1]
        if f_new > f_old:
            # round-off at convergence; keep the better iterate
            theta = theta - t * step
            r = 1.0 - Zy @ theta
            break
        history.append(f_new)
        if f_old - f_new <= 1e-3 * cfg.tolerance * max(abs(f_new), 1e-300) and gnorm <= 1e-6 * g0:
            break
    return SvmModel(theta[:d].copy(), float(theta[d]), C, descriptor,
                    objective_history=history)


# --------------------------------------------------------------------------
# scoring


def _as_vector(model: SvmModel, x) -> np.ndarray:
    if isinstance(x, FeatureVector):
        if model.descriptor is not None and x.descriptor != model.descriptor:
            raise DescriptorMismatchError(
                f"model expects {model.descriptor}, got {x.descriptor}")
        return x.values
    v = np.asarray(x, dtype=np.float64)
    if v.shape[-1] != model.w.shape[0]:
        raise DescriptorMismatchError(
            f"model expects {model.w.shape[0]} features, got {v.shape[-1]}")
    return v


def decision_value(model: SvmModel, x) -> float:
    """``w . x + b``; positive means spoof."""
    return float(_as_vector(model, x) @ model.w + model.b)


def decision_values(model: SvmModel, X) -> np.ndarray:
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], FeatureVector):
        X = np.stack([_as_vector(model, fv) for fv in X])
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return _as_vector(model, X) @ model.w + model.b


def logistic_score(d, A: float, B: float):
    """``1 / (1 + exp(A d + B))`` evaluated without overflow."""
    z = A * np.asarray(d, dtype=np.float64) + B
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    return out if out.ndim else float(out)


def score(model: SvmModel, x) -> float:
    if model.calib is None:
        raise InvalidDataError("model is not calibrated")
    return float(logistic_score(decision_value(model, x), *model.calib))


def scores(model: SvmModel, X) -> np.ndarray:
    if model.calib is None:
        raise InvalidDataError("model is not calibrated")
    return logistic_score(decision_values(model, X), *model.calib)


# --------------------------------------------------------------------------
# calibration

_MAX_SLOPE = -1e-12


def calibration_targets(y) -> np.ndarray:
    """Prior-smoothed targets; finite even on perfectly separated data."""
    y = np.asarray(y)
    n_pos = float(np.sum(y > 0))
    n_neg = float(np.sum(y <= 0))
    return np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))


def calibration_nll(A: float, B: float, d, t) -> float:
    """Negative log-likelihood of targets ``t`` under the logistic score map."""
    z = A * np.asarray(d, dtype=np.float64) + B
    # score p = sigmoid(-z): -log p = log1p(exp(z)), -log(1-p) = log1p(exp(-z))
    return float(np.sum(t * np.logaddexp(0.0, z) + (1.0 - t) * np.logaddexp(0.0, -z)))


def _fit_logistic(d, t, fixed_A: Optional[float] = None) -> Tuple[float, float]:
    n_pos = float(np.sum(t > 0.5))
    n_neg = len(t) - n_pos
    A = 0.0 if fixed_A is None else fixed_A
    B = math.log((n_neg + 1.0) / (n_pos + 1.0))
    f = calibration_nll(A, B, d, t)
    for _ in range(100):
        p = logistic_score(d, A, B)
        # derivatives of the NLL w.r.t. z are (t - p)
        r = t - p
        w = p * (1.0 - p)
        gA, gB = float(r @ d), float(r.sum())
        hAA = float(w @ (d * d)) + 1e-12
        hAB = float(w @ d)
        hBB = float(w.sum()) + 1e-12
        if fixed_A is not None:
            gA, hAA, hAB = 0.0, 1.0, 0.0
        if abs(gA) < 1e-10 and abs(gB) < 1e-10:
            break
        det = hAA * hBB - hAB * hAB
        dA = -(hBB * gA - hAB * gB) / det
        dB = -(-hAB * gA + hAA * gB) / det
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = calibration_nll(nA, nB, d, t)
            if nf < f + 1e-4 * step * (gA * dA + gB * dB):
                break
            step *= 0.5
        else:
            break
        A, B, f = nA, nB, nf
    return A, B


def calibrate(model: SvmModel, X_holdout, y_holdout) -> SvmModel:
    """Attach a logistic map from decision values to scores in (0, 1).

    ``(A, B)`` maximize the (prior-smoothed) binomial likelihood of the
    holdout labels. A is kept negative so the score rises with the decision
    value.
    """
    y = np.asarray(y_holdout, dtype=np.float64)
    if y.size == 0 or np.all(y > 0) or np.all(y <= 0):
        raise DegenerateLabelsError("calibration holdout needs both classes")
    return model.with_calibration(*fit_score_map(decision_values(model, X_holdout), y))


def fit_score_map(d, y) -> Tuple[float, float]:
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    t = calibration_targets(y)
    A, B = _fit_logistic(d, t)
    if A > _MAX_SLOPE:
        A, B = _fit_logistic(d, t, fixed_A=_MAX_SLOPE)
    return A, B


# --------------------------------------------------------------------------
# model selection


def stratified_folds(y, k: int, seed: int) -> List[np.ndarray]:
    """Index arrays of ``k`` folds, each holding a share of every class."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    folds: List[list] = [[] for _ in range(k)]
    for label in (-1, 1):
        idx = np.flatnonzero(y == label)
        if len(idx) < k:
            raise DegenerateLabelsError(
                f"class {label:+d} has {len(idx)} samples, fewer than {k} folds")
        idx = rng.permutation(idx)
        for f, chunk in enumerate(np.array_split(idx, k)):
            folds[f].extend(chunk.tolist())
    return [np.array(sorted(f), dtype=np.intp) for f in folds]


def cross_validated_accuracy(X, y, C: float, folds: Sequence[np.ndarray],
                             cfg: Optional[TrainConfig] = None) -> float:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    accs = []
    for test in folds:
        train = np.setdiff1d(np.arange(len(y)), test)
        model = train_l2svm(X[train], y[train], cfg, C=C)
        pred = np.where(decision_values(model, X[test]) >= 0, 1.0, -1.0)
        accs.append(float(np.mean(pred == y[test])))
    return float(np.mean(accs))


def select_C(X, y, cfg: Optional[TrainConfig] = None, k: int = 5) -> float:
    """Grid value with the best mean k-fold validation accuracy.

    Ties go to the smaller C.
    """
    cfg = cfg or TrainConfig()
    X, y = _check_training_data(X, y)
    if len(y) < k:
        raise DegenerateLabelsError(f"{len(y)} samples cannot fill {k} folds")
    if len(cfg.c_grid) == 1:
        return cfg.c_grid[0]
    folds = stratified_folds(y, k, cfg.seed)
    best_C, best_acc = None, -1.0
    for C in sorted(cfg.c_grid):
        acc = cross_validated_accuracy(X, y, C, folds, cfg)
        if acc > best_acc + 1e-12:
            best_C, best_acc = C, acc
    return best_C
