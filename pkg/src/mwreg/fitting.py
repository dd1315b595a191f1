"""Penalized alternating least squares for low-rank multiway regression.

The model is Y = <X, B>_L + E with B held in CP form at rank R, fitted by
minimizing ||Y - <X, B>_L||_F^2 + lambda * ||B||_F^2.  Each factor update
solves its ridge subproblem exactly, so at fixed lambda a full sweep never
increases the penalized objective.  The penalty is annealed down from a
large start value over the first sweeps, which keeps early iterations away
from degenerate configurations, then held at its target until the
objective stabilizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from math import prod

import numpy as np
import scipy.linalg

from .coefficients import CpCoefficients
from .tensors import DenseTensor, khatri_rao

__all__ = [
    "FitConfig",
    "FitResult",
    "SingularSystemError",
    "center",
    "objective",
    "build_design_predictor",
    "build_design_outcome",
    "update_predictor_factor",
    "update_outcome_factor",
    "fit",
    "fit_augmented_oracle",
    "predict",
]

_FIT_STREAM = 0


class SingularSystemError(np.linalg.LinAlgError):
    """A mode's least-squares subproblem has no unique solution."""


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters for `fit`.

    rank is the CP rank R of the coefficient array and lam the ridge
    penalty.  The penalty is annealed geometrically over the first
    anneal_steps sweeps starting at anneal_start_factor * max(lam, 1);
    a lam of 0 instead descends from an absolute 1.0 over those sweeps
    and then drops to 0.
    Convergence is declared when the relative drop of the penalized
    objective between post-annealing sweeps falls below rel_tol.  Factors
    start as seeded standard normals scaled by init_scale; n_starts > 1
    reruns from fresh seeds and keeps the best final objective.
    """

    rank: int
    lam: float = 0.0
    max_iters: int = 500
    rel_tol: float = 1e-8
    anneal_steps: int = 10
    anneal_start_factor: float = 100.0
    seed: int = 0
    init_scale: float = 1.0
    center_data: bool = True
    n_starts: int = 1

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError("lam must be finite and non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not (np.isfinite(self.rel_tol) and self.rel_tol > 0.0):
            raise ValueError("rel_tol must be positive")
        if self.anneal_steps < 0:
            raise ValueError("anneal_steps must be non-negative")
        if not (np.isfinite(self.anneal_start_factor) and self.anneal_start_factor > 0.0):
            raise ValueError("anneal_start_factor must be positive")
        if not (np.isfinite(self.init_scale) and self.init_scale > 0.0):
            raise ValueError("init_scale must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")


@dataclass
class FitResult:
    """Output of `fit`.

    objective_trace holds the penalized objective at the target lambda
    after each sweep; substep_trace holds the same quantity after every
    individual factor update once annealing has finished (it is
    non-increasing up to round-off).  Offsets are None when the data were
    not centered.
    """

    coefficients: CpCoefficients
    objective_trace: list
    substep_trace: list
    converged: bool
    iterations: int
    x_offsets: np.ndarray | None
    y_offsets: np.ndarray | None


def center(x: DenseTensor, y: DenseTensor):
    """Remove per-cell means over the observation mode.

    Returns (centered x, centered y, (x offsets, y offsets)); the offsets
    have the trailing dims of x and y.  Requires at least two observations.
    """
    if x.dims[0] != y.dims[0]:
        raise ValueError(
            f"x has {x.dims[0]} observations but y has {y.dims[0]}"
        )
    if x.dims[0] < 2:
        raise ValueError("centering needs at least two observations")
    x_off = x.array.mean(axis=0)
    y_off = y.array.mean(axis=0)
    return DenseTensor(x.array - x_off), DenseTensor(y.array - y_off), (x_off, y_off)


# =====================================================================
# cached unfoldings and the mode-wise normal-equation systems
# =====================================================================


class _Workspace:
    """Unfoldings of one (already centered) dataset, cached per mode."""

    def __init__(self, xarr: np.ndarray, yarr: np.ndarray):
        if xarr.shape[0] != yarr.shape[0]:
            raise ValueError(
                f"x has {xarr.shape[0]} observations but y has {yarr.shape[0]}"
            )
        self.xarr = xarr
        self.yarr = yarr
        self.n = xarr.shape[0]
        self.in_dims = xarr.shape[1:]
        self.out_dims = yarr.shape[1:]
        self.p = prod(self.in_dims)
        self.q = prod(self.out_dims) if self.out_dims else 1
        self.x1 = xarr.reshape(self.n, self.p, order="F")
        self.y1 = yarr.reshape(self.n, self.q, order="F")
        self._x_by_mode = {}
        self._y_by_mode = {}

    def x_by_mode(self, l: int) -> np.ndarray:
        # (N * P_l, prod of other predictor dims), observation index fastest
        if l not in self._x_by_mode:
            moved = np.moveaxis(self.xarr, 1 + l, 1)
            self._x_by_mode[l] = moved.reshape(
                self.n * self.in_dims[l], -1, order="F"
            )
        return self._x_by_mode[l]

    def y_by_mode(self, m: int) -> np.ndarray:
        # (Q_m, N * prod of other outcome dims)
        if m not in self._y_by_mode:
            moved = np.moveaxis(self.yarr, 1 + m, 0)
            self._y_by_mode[m] = moved.reshape(self.out_dims[m], -1, order="F")
        return self._y_by_mode[m]


def _kr_or_ones(factors, rank: int) -> np.ndarray:
    if factors:
        return khatri_rao(factors)
    return np.ones((1, rank))


def _gram_product(factors, rank: int) -> np.ndarray:
    g = np.ones((rank, rank))
    for f in factors:
        g = g * (f.T @ f)
    return g


def _squared_norm(factors) -> float:
    """||B||_F^2 from the factors via the all-mode Gram entrywise product."""
    rank = factors[0].shape[1]
    return float(np.sum(_gram_product(factors, rank)))


def _predictor_system(ws: _Workspace, pred, out, l: int, lam: float):
    """Normal equations (S, rhs) for predictor mode l.

    S = C^T C + lam * (G (x) I) and rhs = C^T vec(Y) where C is the
    explicit design matrix of `build_design_predictor`; the flat index is
    p + P_l * r, i.e. blocked by component.
    """
    rank = pred[0].shape[1]
    pl = ws.in_dims[l]
    others = list(pred[:l]) + list(pred[l + 1:])
    w2 = ws.x_by_mode(l) @ _kr_or_ones(others, rank)
    w3 = w2.reshape(ws.n, pl, rank, order="F")
    wf = np.ascontiguousarray(w3.transpose(0, 2, 1)).reshape(ws.n, rank * pl)
    vq = _kr_or_ones(list(out), rank)
    vgram = vq.T @ vq
    s = (wf.T @ wf) * np.kron(vgram, np.ones((pl, pl)))
    if lam:
        g = vgram.copy()
        for f in others:
            g = g * (f.T @ f)
        s = s + lam * np.kron(g, np.eye(pl))
    z = ws.y1 @ vq
    rhs = np.einsum("npr,nr->rp", w3, z).reshape(-1)
    return s, rhs


def _outcome_system(ws: _Workspace, pred, out, m: int, lam: float):
    """Normal equations (A, rhs) for outcome mode m.

    A = D^T D + lam * G (R x R) and rhs = D^T Ym^T (R x Q_m) where D is the
    explicit design matrix of `build_design_outcome` taken for mode m.
    """
    rank = pred[0].shape[1]
    uq = khatri_rao(list(pred))
    t = ws.x1 @ uq
    others = list(out[:m]) + list(out[m + 1:])
    wq = _kr_or_ones(others, rank)
    a = (t.T @ t) * (wq.T @ wq)
    if lam:
        g = _gram_product(list(pred) + others, rank)
        a = a + lam * g
    d = (t[:, None, :] * wq[None, :, :]).reshape(ws.n * wq.shape[0], rank, order="F")
    rhs = (ws.y_by_mode(m) @ d).T
    return a, rhs


def _spd_solve(s: np.ndarray, rhs: np.ndarray, lam: float):
    """Solve the SPD system via Cholesky; returns (solution, lower factor)."""
    try:
        low = scipy.linalg.cholesky(s, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        if lam == 0.0:
            raise SingularSystemError(
                "mode subproblem is singular at lambda=0; "
                "increase the penalty or lower the rank"
            ) from exc
        raise SingularSystemError("mode subproblem is numerically singular") from exc
    return scipy.linalg.cho_solve((low, True), rhs, check_finite=False), low


def _update_predictor(ws, pred, out, l, lam):
    s, rhs = _predictor_system(ws, pred, out, l, lam)
    sol, _ = _spd_solve(s, rhs, lam)
    return sol.reshape(ws.in_dims[l], pred[0].shape[1], order="F")


def _update_outcome(ws, pred, out, m, lam):
    a, rhs = _outcome_system(ws, pred, out, m, lam)
    sol, _ = _spd_solve(a, rhs, lam)
    return sol.T


def _prediction_matrix(x1, pred, out, rank):
    return (x1 @ khatri_rao(list(pred))) @ _kr_or_ones(list(out), rank).T


def _objective_arrays(ws, pred, out, lam) -> float:
    rank = pred[0].shape[1]
    resid = ws.y1 - _prediction_matrix(ws.x1, pred, out, rank)
    rss = float(np.sum(resid * resid))
    if lam:
        return rss + lam * _squared_norm(list(pred) + list(out))
    return rss


# =====================================================================
# public single-step operations
# =====================================================================


def _check_pair(x: DenseTensor, y: DenseTensor, b: CpCoefficients) -> None:
    if x.dims[0] != y.dims[0]:
        raise ValueError(f"x has {x.dims[0]} observations but y has {y.dims[0]}")
    if x.dims[1:] != b.in_dims:
        raise ValueError(f"x trailing dims {x.dims[1:]} do not match coefficients {b.in_dims}")
    if y.dims[1:] != b.out_dims:
        raise ValueError(f"y trailing dims {y.dims[1:]} do not match coefficients {b.out_dims}")


def objective(x: DenseTensor, y: DenseTensor, b: CpCoefficients, lam: float = 0.0) -> float:
    """Penalized residual sum of squares ||Y - <X,B>||_F^2 + lam * ||B||_F^2."""
    _check_pair(x, y, b)
    if not (np.isfinite(lam) and lam >= 0.0):
        raise ValueError("lam must be finite and non-negative")
    ws = _Workspace(x.array, y.array)
    return _objective_arrays(ws, list(b.predictor_factors), list(b.outcome_factors), lam)


def build_design_predictor(x: DenseTensor, b: CpCoefficients, mode: int) -> np.ndarray:
    """Explicit design matrix C (N*Q x R*P_mode) for one predictor mode.

    Block r holds the contraction of X with the mode-omitted rank-1 term of
    component r, unfolded so that C @ vec(U_mode) = vec(<X, B>_L).  Built
    definitionally (outer products, tensordot, unfold); the fitting loop
    assembles C^T C without materializing C, and the two routes are checked
    against each other in the tests.
    """
    L = len(b.predictor_factors)
    if not 0 <= mode < L:
        raise ValueError(f"predictor mode {mode} out of range for {L} modes")
    if x.dims[1:] != b.in_dims:
        raise ValueError(f"x trailing dims {x.dims[1:]} do not match coefficients {b.in_dims}")
    xp = np.moveaxis(x.array, 1 + mode, 1)
    pl = b.in_dims[mode]
    n = x.dims[0]
    others = [f for k, f in enumerate(b.predictor_factors) if k != mode]
    blocks = []
    for r in range(b.rank):
        cols = [f[:, r] for f in others] + [f[:, r] for f in b.outcome_factors]
        if cols:
            rank1 = reduce(np.multiply.outer, cols)
            cr = np.tensordot(xp, rank1, axes=L - 1)
        else:
            cr = xp
        blocks.append(np.moveaxis(cr, 1, 0).reshape(pl, -1, order="F").T)
    return np.hstack(blocks)


def build_design_outcome(x: DenseTensor, b: CpCoefficients) -> np.ndarray:
    """Explicit design matrix D (N * prod(Q_1..Q_{M-1}) x R) for the last outcome mode.

    Column r is the vectorization of the contraction of X with the rank-1
    term of component r taken over all predictor modes and all outcome
    modes but the last; the last outcome factor solves R separate
    regressions of the correspondingly unfolded response on D.
    """
    if not b.outcome_factors:
        raise ValueError("the outcome design needs at least one outcome mode")
    if x.dims[1:] != b.in_dims:
        raise ValueError(f"x trailing dims {x.dims[1:]} do not match coefficients {b.in_dims}")
    L = len(b.predictor_factors)
    cols = []
    for r in range(b.rank):
        parts = [f[:, r] for f in b.predictor_factors] + [
            f[:, r] for f in b.outcome_factors[:-1]
        ]
        rank1 = reduce(np.multiply.outer, parts)
        dr = np.tensordot(x.array, rank1, axes=L)
        cols.append(np.asarray(dr).ravel(order="F"))
    return np.column_stack(cols)


def update_predictor_factor(
    x: DenseTensor, y: DenseTensor, b: CpCoefficients, mode: int, lam: float = 0.0
) -> np.ndarray:
    """Exact ridge update of one predictor factor, all others held fixed."""
    _check_pair(x, y, b)
    if not 0 <= mode < len(b.predictor_factors):
        raise ValueError(f"predictor mode {mode} out of range")
    ws = _Workspace(x.array, y.array)
    return _update_predictor(ws, list(b.predictor_factors), list(b.outcome_factors), mode, lam)


def update_outcome_factor(
    x: DenseTensor, y: DenseTensor, b: CpCoefficients, mode: int, lam: float = 0.0
) -> np.ndarray:
    """Exact ridge update of one outcome factor, all others held fixed."""
    _check_pair(x, y, b)
    if not 0 <= mode < len(b.outcome_factors):
        raise ValueError(f"outcome mode {mode} out of range")
    ws = _Workspace(x.array, y.array)
    return _update_outcome(ws, list(b.predictor_factors), list(b.outcome_factors), mode, lam)


# =====================================================================
# the full fit
# =====================================================================


def _validate_data(x: DenseTensor, y: DenseTensor) -> None:
    if x.order < 2:
        raise ValueError("x must have an observation mode plus at least one predictor mode")
    if x.dims[0] != y.dims[0]:
        raise ValueError(f"x has {x.dims[0]} observations but y has {y.dims[0]}")


def _lambda_schedule(cfg: FitConfig):
    steps = cfg.anneal_steps
    if steps == 0:
        return []
    if cfg.lam > 0.0:
        start = cfg.anneal_start_factor * max(cfg.lam, 1.0)
        end = cfg.lam
    else:
        # unpenalized target: decay from absolute 1.0, then drop to 0
        start = 1.0
        end = 1.0 / cfg.anneal_start_factor
    if start <= end:
        return [cfg.lam] * steps
    ratio = (end / start) ** (1.0 / steps)
    return [start * ratio ** (i + 1) for i in range(steps)]


def _init_factors(cfg: FitConfig, in_dims, out_dims, start: int):
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _FIT_STREAM, start)))
    pred = [cfg.init_scale * rng.standard_normal((d, cfg.rank)) for d in in_dims]
    out = [cfg.init_scale * rng.standard_normal((d, cfg.rank)) for d in out_dims]
    return pred, out


class _AlsState:
    __slots__ = ("pred", "out", "trace", "subtrace", "converged", "iterations")

    def __init__(self, pred, out, trace, subtrace, converged, iterations):
        self.pred = pred
        self.out = out
        self.trace = trace
        self.subtrace = subtrace
        self.converged = converged
        self.iterations = iterations


def _als(ws: _Workspace, cfg: FitConfig, start: int, augment: bool) -> _AlsState:
    pred, out = _init_factors(cfg, ws.in_dims, ws.out_dims, start)
    schedule = _lambda_schedule(cfg)
    trace, subtrace = [], []
    converged = False
    prev = None
    sweeps = 0
    aws, aws_lam = None, None
    for it in range(cfg.max_iters):
        annealing = it < len(schedule)
        lam_t = schedule[it] if annealing else cfg.lam
        if augment:
            # same sweep on lambda_t-augmented data with no penalty
            if lam_t == 0.0:
                uws = ws
            else:
                if aws_lam != lam_t:
                    aws = _Workspace(*_augment_arrays(ws.xarr, ws.yarr, lam_t))
                    aws_lam = lam_t
                uws = aws
            ulam = 0.0
        else:
            uws, ulam = ws, lam_t
        for l in range(len(pred)):
            pred[l] = _update_predictor(uws, pred, out, l, ulam)
            if not annealing:
                subtrace.append(_objective_arrays(ws, pred, out, cfg.lam))
        for m in range(len(out)):
            out[m] = _update_outcome(uws, pred, out, m, ulam)
            if not annealing:
                subtrace.append(_objective_arrays(ws, pred, out, cfg.lam))
        obj = _objective_arrays(ws, pred, out, cfg.lam)
        trace.append(obj)
        sweeps = it + 1
        if not annealing:
            if prev is not None and prev - obj <= cfg.rel_tol * max(1.0, abs(prev)):
                converged = True
                break
            prev = obj
    return _AlsState(pred, out, trace, subtrace, converged, sweeps)


def _prepare(x: DenseTensor, y: DenseTensor, cfg: FitConfig):
    _validate_data(x, y)
    if cfg.center_data:
        xc, yc, (x_off, y_off) = center(x, y)
        return _Workspace(xc.array, yc.array), x_off, y_off
    return _Workspace(x.array, y.array), None, None


def fit(x: DenseTensor, y: DenseTensor, cfg: FitConfig) -> FitResult:
    """Fit the rank-R ridge-penalized coefficient array by mode-wise sweeps.

    Identical data and config give a bit-identical result.  Raises
    SingularSystemError when a lambda=0 subproblem is rank deficient
    instead of silently pseudo-inverting.
    """
    ws, x_off, y_off = _prepare(x, y, cfg)
    best = None
    for start in range(cfg.n_starts):
        state = _als(ws, cfg, start, augment=False)
        if best is None or state.trace[-1] < best.trace[-1]:
            best = state
    return FitResult(
        coefficients=CpCoefficients(best.pred, best.out),
        objective_trace=best.trace,
        substep_trace=best.subtrace,
        converged=best.converged,
        iterations=best.iterations,
        x_offsets=x_off,
        y_offsets=y_off,
    )


def _augment_arrays(xarr: np.ndarray, yarr: np.ndarray, lam: float):
    in_dims = xarr.shape[1:]
    p = prod(in_dims)
    slices = np.sqrt(lam) * np.eye(p).reshape((p,) + in_dims, order="F")
    xa = np.concatenate([xarr, slices], axis=0)
    ya = np.concatenate([yarr, np.zeros((p,) + yarr.shape[1:])], axis=0)
    return xa, ya


_ORACLE_LIMIT = 2_000_000


def fit_augmented_oracle(x: DenseTensor, y: DenseTensor, cfg: FitConfig) -> FitResult:
    """Reference fit that realizes the ridge penalty by data augmentation.

    Appends sqrt(lambda) times identity slices to X and zero slices to Y
    and runs plain least-squares sweeps on the augmented data, which is
    algebraically the same update as `fit`; initialization, annealing and
    the reported objective trace mirror `fit` exactly, so paired runs agree
    sweep by sweep.  With lam=0 the augmentation is skipped and the run is
    identical to `fit`.  Small instances only.
    """
    ws, x_off, y_off = _prepare(x, y, cfg)
    if (ws.n + ws.p) * max(ws.p, ws.q) > _ORACLE_LIMIT:
        raise ValueError("augmented oracle is limited to small instances")
    best = None
    # lam=0 slices are all zero, so the plain path is the same problem
    for start in range(cfg.n_starts):
        state = _als(ws, cfg, start, augment=cfg.lam > 0.0)
        if best is None or state.trace[-1] < best.trace[-1]:
            best = state
    return FitResult(
        coefficients=CpCoefficients(best.pred, best.out),
        objective_trace=best.trace,
        substep_trace=best.subtrace,
        converged=best.converged,
        iterations=best.iterations,
        x_offsets=x_off,
        y_offsets=y_off,
    )


def predict(x_new: DenseTensor, result: FitResult) -> DenseTensor:
    """Predicted response <X_new, B> with the fit's centering offsets reapplied."""
    b = result.coefficients
    if x_new.dims[1:] != b.in_dims:
        raise ValueError(
            f"x trailing dims {x_new.dims[1:]} do not match coefficients {b.in_dims}"
        )
    xa = x_new.array
    if result.x_offsets is not None:
        xa = xa - result.x_offsets
    n = x_new.dims[0]
    x1 = xa.reshape(n, -1, order="F")
    pred = _prediction_matrix(x1, b.predictor_factors, b.outcome_factors, b.rank)
    arr = pred.reshape((n,) + b.out_dims, order="F")
    if result.y_offsets is not None:
        arr = arr + result.y_offsets
    return DenseTensor(arr)
