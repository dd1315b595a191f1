"""Gibbs sampling for the posterior over factors and noise variance.

The likelihood is Y = <X, B>_L + E with iid N(0, sigma^2) errors, the
prior on each factor is the Gaussian implied by the ridge penalty at the
given lambda (flat when lambda = 0), and sigma^2 carries the scale prior
1/sigma^2.  Conditioned on the other factors and sigma^2, each factor is
multivariate normal with mean equal to the corresponding penalized
least-squares update, so the sampler reuses the exact system builders of
the fitting module; sigma^2 given everything else is inverse gamma.  The
chain starts at the penalized least-squares solution, which is the
posterior mode, so no burn-in is needed by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .coefficients import CpCoefficients, normalize
from .fitting import (
    FitConfig,
    FitResult,
    _objective_arrays,
    _outcome_system,
    _prediction_matrix,
    _predictor_system,
    _spd_solve,
    _Workspace,
    fit,
)
from .tensors import DenseTensor

__all__ = [
    "GibbsConfig",
    "PosteriorDraws",
    "FactorConditional",
    "DegeneratePosteriorError",
    "draw_sigma2",
    "conditional_factor_params",
    "gibbs",
    "posterior_predictive",
    "credible_intervals",
    "dic",
]

_CHAIN_STREAM = 1


class DegeneratePosteriorError(RuntimeError):
    """A full conditional has collapsed to a point or lost propriety."""


@dataclass(frozen=True)
class GibbsConfig:
    """Sampler settings.

    n_samples is the number of retained draws after burn_in, keeping every
    thin-th iteration.  rank and lam describe the model whose posterior is
    sampled; the chain initializes at the matching penalized least-squares
    solution, so the burn_in default is 0.  normalize_draws applies the
    balancing, ordering and sign transform to each retained draw; it
    changes factor summaries but no prediction, and is off by default
    because predictive quantities do not need identified components.
    """

    rank: int
    n_samples: int = 1000
    lam: float = 0.0
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    credible_level: float = 0.95
    center_data: bool = True
    normalize_draws: bool = False

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if not (np.isfinite(self.lam) and self.lam >= 0.0):
            raise ValueError("lam must be finite and non-negative")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not 0.0 < self.credible_level < 1.0:
            raise ValueError("credible_level must be in (0, 1)")


@dataclass
class PosteriorDraws:
    """Retained chain states plus the mode the chain started from.

    coefficients[t] and sigma2s[t] form one joint draw.  The mode fit also
    carries the centering offsets, which predictions from the draws must
    reuse.
    """

    coefficients: list
    sigma2s: np.ndarray
    mode: FitResult

    def __len__(self) -> int:
        return len(self.coefficients)


@dataclass(frozen=True)
class FactorConditional:
    """Gaussian full conditional of one factor matrix.

    mean is factor-shaped.  For a predictor mode the covariance of the
    stacked factor (column-major, entries of each component contiguous) is
    sigma2 * S^{-1} with S = system_chol @ system_chol.T; for an outcome
    mode the rows of the factor are independent with shared row covariance
    sigma2 * A^{-1}, A likewise held by its Cholesky factor.
    """

    mean: np.ndarray
    system_chol: np.ndarray
    sigma2: float
    is_outcome: bool

    def covariance(self) -> np.ndarray:
        """Dense covariance of the stacked factor entries (tests only)."""
        low = self.system_chol
        inv = scipy.linalg.cho_solve((low, True), np.eye(low.shape[0]), check_finite=False)
        if self.is_outcome:
            return self.sigma2 * np.kron(inv, np.eye(self.mean.shape[0]))
        return self.sigma2 * inv

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """One factor draw: mean plus sigma * L^{-T} z."""
        sd = float(np.sqrt(self.sigma2))
        if self.is_outcome:
            z = rng.standard_normal(self.mean.shape)
            pert = scipy.linalg.solve_triangular(
                self.system_chol, z.T, lower=True, trans="T", check_finite=False
            ).T
            return self.mean + sd * pert
        z = rng.standard_normal(self.mean.size)
        pert = scipy.linalg.solve_triangular(
            self.system_chol, z, lower=True, trans="T", check_finite=False
        )
        return self.mean + sd * pert.reshape(self.mean.shape, order="F")


def draw_sigma2(x: DenseTensor, y: DenseTensor, b: CpCoefficients, rng) -> float:
    """One draw of the noise variance given the coefficients.

    The full conditional under the 1/sigma^2 scale prior is inverse gamma
    with shape N*Q/2 and rate ||Y - <X,B>||_F^2 / 2.
    """
    ws = _Workspace(x.array, y.array)
    rss = _objective_arrays(ws, list(b.predictor_factors), list(b.outcome_factors), 0.0)
    return _draw_sigma2_rss(rss, ws.n * ws.q, rng)


def _draw_sigma2_rss(rss: float, nq: int, rng: np.random.Generator) -> float:
    if not rss > 0.0:
        raise DegeneratePosteriorError(
            "residual sum of squares is zero; the variance conditional is degenerate"
        )
    return float(1.0 / rng.gamma(0.5 * nq, 2.0 / rss))


def conditional_factor_params(
    x: DenseTensor,
    y: DenseTensor,
    b: CpCoefficients,
    mode: int,
    lam: float,
    sigma2: float,
) -> FactorConditional:
    """Mean and covariance factorization of one factor's full conditional.

    mode indexes the concatenated factor list (predictor modes first).
    The mean equals the penalized least-squares update of that factor; the
    covariance is sigma2 times the inverse of the update's system matrix
    (Kronecker-expanded over rows for outcome modes).
    """
    if not 0 <= mode < b.order:
        raise ValueError(f"mode {mode} out of range for order {b.order}")
    if not (np.isfinite(sigma2) and sigma2 >= 0.0):
        raise ValueError("sigma2 must be finite and non-negative")
    ws = _Workspace(x.array, y.array)
    pred, out = list(b.predictor_factors), list(b.outcome_factors)
    return _conditional_ws(ws, pred, out, mode, lam, sigma2)


def _conditional_ws(ws, pred, out, mode, lam, sigma2) -> FactorConditional:
    if mode < len(pred):
        s, rhs = _predictor_system(ws, pred, out, mode, lam)
        sol, low = _spd_solve(s, rhs, lam)
        mean = sol.reshape(ws.in_dims[mode], pred[0].shape[1], order="F")
        return FactorConditional(mean, low, float(sigma2), False)
    m = mode - len(pred)
    a, rhs = _outcome_system(ws, pred, out, m, lam)
    sol, low = _spd_solve(a, rhs, lam)
    return FactorConditional(sol.T, low, float(sigma2), True)


def gibbs(
    x: DenseTensor,
    y: DenseTensor,
    cfg: GibbsConfig,
    mode_fit: FitResult | None = None,
) -> PosteriorDraws:
    """Run one chain and return the retained draws.

    The chain starts at the penalized least-squares solution (computed
    here unless a matching mode_fit is supplied) and per iteration draws
    sigma^2, then each predictor factor, then each outcome factor from
    their full conditionals.  Fixed seeds give identical draw sequences.
    """
    if mode_fit is None:
        mode_fit = fit(x, y, FitConfig(rank=cfg.rank, lam=cfg.lam, seed=cfg.seed,
                                       center_data=cfg.center_data))
    b0 = mode_fit.coefficients
    if b0.rank != cfg.rank:
        raise ValueError(f"mode fit has rank {b0.rank} but cfg.rank is {cfg.rank}")
    xa, ya = x.array, y.array
    if mode_fit.x_offsets is not None:
        xa = xa - mode_fit.x_offsets
        ya = ya - mode_fit.y_offsets
    ws = _Workspace(xa, ya)
    if ws.in_dims != b0.in_dims or ws.out_dims != b0.out_dims:
        raise ValueError("data dims do not match the mode fit's coefficients")
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, _CHAIN_STREAM)))
    pred = [f.copy() for f in b0.predictor_factors]
    out = [f.copy() for f in b0.outcome_factors]
    nq = ws.n * ws.q
    kept_b, kept_s2 = [], []
    total = cfg.burn_in + cfg.n_samples * cfg.thin
    for it in range(1, total + 1):
        rss = _objective_arrays(ws, pred, out, 0.0)
        sigma2 = _draw_sigma2_rss(rss, nq, rng)
        for mode in range(len(pred) + len(out)):
            cond = _conditional_ws(ws, pred, out, mode, cfg.lam, sigma2)
            drawn = cond.sample(rng)
            if mode < len(pred):
                pred[mode] = drawn
            else:
                out[mode - len(pred)] = drawn
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            drawn_b = CpCoefficients(pred, out)
            if cfg.normalize_draws:
                # transform only the retained copy; the chain state is untouched
                drawn_b = normalize(drawn_b).coefficients
            kept_b.append(drawn_b)
            kept_s2.append(sigma2)
    return PosteriorDraws(kept_b, np.array(kept_s2), mode_fit)


def _point_predictions(x_new: DenseTensor, draws: PosteriorDraws) -> np.ndarray:
    """Stack of noiseless predictions, shape (draws, N, *out_dims)."""
    b0 = draws.coefficients[0]
    if x_new.dims[1:] != b0.in_dims:
        raise ValueError(
            f"x trailing dims {x_new.dims[1:]} do not match coefficients {b0.in_dims}"
        )
    xa = x_new.array
    mode = draws.mode
    if mode.x_offsets is not None:
        xa = xa - mode.x_offsets
    n = xa.shape[0]
    x1 = xa.reshape(n, -1, order="F")
    out_dims = b0.out_dims
    stack = np.empty((len(draws.coefficients), n) + out_dims)
    for t, b in enumerate(draws.coefficients):
        pm = _prediction_matrix(x1, b.predictor_factors, b.outcome_factors, b.rank)
        arr = pm.reshape((n,) + out_dims, order="F")
        if mode.y_offsets is not None:
            arr = arr + mode.y_offsets
        stack[t] = arr
    return stack


def posterior_predictive(
    x_new: DenseTensor, draws: PosteriorDraws, rng
) -> list:
    """One response draw per retained sample, with fresh Gaussian noise.

    Each draw is the point prediction under that sample's coefficients
    (centering offsets reapplied) plus iid N(0, sigma2_t) noise.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    if not len(draws.coefficients):
        raise ValueError("draws are empty")
    stack = _point_predictions(x_new, draws)
    outs = []
    for t in range(stack.shape[0]):
        noise = np.sqrt(draws.sigma2s[t]) * rng.standard_normal(stack.shape[1:])
        outs.append(DenseTensor(stack[t] + noise))
    return outs


def credible_intervals(draws: list, level: float = 0.95):
    """Equal-tailed empirical interval per response cell.

    draws is a list of equally shaped DenseTensors (usually from
    posterior_predictive); returns (lo, hi) DenseTensors holding the
    (1-level)/2 and 1-(1-level)/2 sample quantiles cell-wise.
    """
    if len(draws) < 2:
        raise ValueError("need at least two draws for an interval")
    if not 0.0 <= level < 1.0:
        raise ValueError("level must be in [0, 1)")
    dims = draws[0].dims
    for d in draws:
        if d.dims != dims:
            raise ValueError("draws must share dims")
    stack = np.stack([d.array for d in draws])
    alpha = 0.5 * (1.0 - level)
    lo, hi = np.quantile(stack, [alpha, 1.0 - alpha], axis=0)
    return DenseTensor(lo), DenseTensor(hi)


def dic(x: DenseTensor, y: DenseTensor, draws: PosteriorDraws) -> float:
    """Deviance information criterion over the retained draws.

    Deviance is -2 log N(Y | prediction, sigma2 I).  Returns Dbar + pD
    where Dbar is the posterior mean deviance and pD = Dbar minus the
    deviance at the posterior mean prediction and posterior mean sigma2.
    """
    if len(draws.coefficients) < 2:
        raise ValueError("need at least two draws")
    stack = _point_predictions(x, draws)
    yarr = y.array
    if yarr.shape != stack.shape[1:]:
        raise ValueError(
            f"y dims {yarr.shape} do not match predictions {stack.shape[1:]}"
        )
    nq = yarr.size
    devs = np.empty(stack.shape[0])
    for t in range(stack.shape[0]):
        rss = float(np.sum((yarr - stack[t]) ** 2))
        s2 = draws.sigma2s[t]
        devs[t] = nq * np.log(2.0 * np.pi * s2) + rss / s2
    dbar = float(devs.mean())
    mean_pred = stack.mean(axis=0)
    mean_s2 = float(draws.sigma2s.mean())
    rss_hat = float(np.sum((yarr - mean_pred) ** 2))
    dhat = nq * np.log(2.0 * np.pi * mean_s2) + rss_hat / mean_s2
    return 2.0 * dbar - dhat
