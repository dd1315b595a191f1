"""File formats: text tensors, order-2 CSV, and JSON model/draw files.

The tensor format is line-oriented text: a magic line "mwt 1", the order
K, the K dims, then the values in first-index-fastest order, printed with
17 significant digits so every finite double round-trips bit-exactly.
CSV files are accepted for order-2 tensors (rows are mode 1).  Model and
draw files are JSON; Python's float repr is shortest-round-trip, so these
round-trip bit-exactly as well.
"""

from __future__ import annotations

import json
from math import prod

import numpy as np

from .coefficients import CpCoefficients
from .fitting import FitResult
from .posterior import PosteriorDraws
from .tensors import DenseTensor

__all__ = [
    "read_tensor",
    "write_tensor",
    "read_model",
    "write_model",
    "read_draws",
    "write_draws",
]

_MAGIC = "mwt 1"
_VALUES_PER_LINE = 8


def write_tensor(path: str, t: DenseTensor) -> None:
    """Write one tensor in the text format (or CSV when path ends .csv)."""
    if str(path).lower().endswith(".csv"):
        _write_csv(path, t)
        return
    vals = t.array.ravel(order="F")
    with open(path, "w") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"{t.order}\n")
        fh.write(" ".join(str(d) for d in t.dims) + "\n")
        for start in range(0, vals.size, _VALUES_PER_LINE):
            chunk = vals[start:start + _VALUES_PER_LINE]
            fh.write(" ".join(f"{v:.17g}" for v in chunk) + "\n")


def _write_csv(path: str, t: DenseTensor) -> None:
    if t.order != 2:
        raise ValueError("CSV output is limited to order-2 tensors")
    np.savetxt(path, t.array, delimiter=",", fmt="%.17g")


def read_tensor(path: str) -> DenseTensor:
    """Read a tensor file; CSV falls back to an order-2 read."""
    with open(path) as fh:
        first = fh.readline()
        if first.strip() != _MAGIC:
            return _read_csv(path)
        try:
            order = int(fh.readline())
            dims = tuple(int(v) for v in fh.readline().split())
            values = np.array(fh.read().split(), dtype=float)
        except ValueError as exc:
            raise ValueError(f"{path}: malformed tensor file: {exc}") from None
    if order < 1 or len(dims) != order:
        raise ValueError(f"{path}: dim count {len(dims)} does not match order {order}")
    if any(d < 1 for d in dims):
        raise ValueError(f"{path}: dims must be positive")
    if values.size != prod(dims):
        raise ValueError(
            f"{path}: expected {prod(dims)} values for dims {dims}, found {values.size}"
        )
    if not np.isfinite(values).all():
        raise ValueError(f"{path}: values must be finite")
    return DenseTensor.from_values(dims, values)


def _read_csv(path: str) -> DenseTensor:
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValueError(f"{path}: not a tensor file or numeric CSV: {exc}") from None
    if not np.isfinite(arr).all():
        raise ValueError(f"{path}: values must be finite")
    return DenseTensor(arr)


def _factor_list(factors) -> list:
    return [
        {"rows": int(f.shape[0]), "values": f.ravel(order="F").tolist()}
        for f in factors
    ]


def _factors_from(items, rank: int) -> list:
    return [
        np.asarray(d["values"], dtype=float).reshape(int(d["rows"]), rank, order="F")
        for d in items
    ]


def _coeff_dict(b: CpCoefficients) -> dict:
    return {
        "rank": b.rank,
        "predictor_factors": _factor_list(b.predictor_factors),
        "outcome_factors": _factor_list(b.outcome_factors),
    }


def _coeff_from(d: dict) -> CpCoefficients:
    rank = int(d["rank"])
    return CpCoefficients(
        _factors_from(d["predictor_factors"], rank),
        _factors_from(d["outcome_factors"], rank),
    )


def _offsets_dict(result: FitResult) -> dict:
    if result.x_offsets is None:
        return {"x_offsets": None, "y_offsets": None}
    return {
        "x_offsets": result.x_offsets.ravel(order="F").tolist(),
        "y_offsets": result.y_offsets.ravel(order="F").tolist(),
    }


def _offsets_from(d: dict, in_dims, out_dims):
    if d.get("x_offsets") is None:
        return None, None
    x_off = np.asarray(d["x_offsets"], dtype=float).reshape(in_dims, order="F")
    y_off = np.asarray(d["y_offsets"], dtype=float).reshape(out_dims, order="F")
    return x_off, y_off


def write_model(path: str, result: FitResult, lam: float, seed: int) -> None:
    """Serialize a fit: factors, centering offsets, and fit metadata."""
    payload = {
        "format": "mwreg-model",
        "version": 1,
        "lam": float(lam),
        "seed": int(seed),
        "coefficients": _coeff_dict(result.coefficients),
        **_offsets_dict(result),
        "objective": float(result.objective_trace[-1]),
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def read_model(path: str) -> tuple:
    """Load a model file; returns (FitResult, lam, seed)."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "mwreg-model":
        raise ValueError(f"{path}: not a model file")
    b = _coeff_from(payload["coefficients"])
    x_off, y_off = _offsets_from(payload, b.in_dims, b.out_dims)
    result = FitResult(
        coefficients=b,
        objective_trace=[float(payload["objective"])],
        substep_trace=[],
        converged=bool(payload["converged"]),
        iterations=int(payload["iterations"]),
        x_offsets=x_off,
        y_offsets=y_off,
    )
    return result, float(payload["lam"]), int(payload["seed"])


def write_draws(path: str, draws: PosteriorDraws, lam: float, seed: int) -> None:
    """Serialize a chain: every retained factor set, sigma2s, and the mode."""
    payload = {
        "format": "mwreg-draws",
        "version": 1,
        "lam": float(lam),
        "seed": int(seed),
        "sigma2": [float(v) for v in draws.sigma2s],
        "samples": [_coeff_dict(b) for b in draws.coefficients],
        "mode": {
            "coefficients": _coeff_dict(draws.mode.coefficients),
            **_offsets_dict(draws.mode),
            "objective": float(draws.mode.objective_trace[-1]),
            "iterations": int(draws.mode.iterations),
            "converged": bool(draws.mode.converged),
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def read_draws(path: str) -> tuple:
    """Load a draws file; returns (PosteriorDraws, lam, seed)."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "mwreg-draws":
        raise ValueError(f"{path}: not a draws file")
    md = payload["mode"]
    b = _coeff_from(md["coefficients"])
    x_off, y_off = _offsets_from(md, b.in_dims, b.out_dims)
    mode = FitResult(
        coefficients=b,
        objective_trace=[float(md["objective"])],
        substep_trace=[],
        converged=bool(md["converged"]),
        iterations=int(md["iterations"]),
        x_offsets=x_off,
        y_offsets=y_off,
    )
    draws = PosteriorDraws(
        coefficients=[_coeff_from(d) for d in payload["samples"]],
        sigma2s=np.asarray(payload["sigma2"], dtype=float),
        mode=mode,
    )
    return draws, float(payload["lam"]), int(payload["seed"])
