"""Curvature-based parameter uncertainty and stiff/sloppy parameter labels."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import BoundsBox, to_physical

STIFF, SLOPPY = "stiff", "sloppy"


@dataclass(frozen=True)
class UncertaintyReport:
    """Half-widths ``delta_theta`` (normalized units) of the region where the
    loss rises by at most ``delta_phi_threshold``, with a per-parameter label."""

    delta_theta: np.ndarray
    delta_phi_threshold: float
    classification: tuple[str, ...]
    singular: bool = False

    @property
    def n(self) -> int:
        return self.delta_theta.size


def inverse_diagonal(H: np.ndarray) -> tuple[np.ndarray, bool]:
    """Diagonal of ``H^{-1}`` via a Cholesky factorization.

    Returns ``(diag, singular)``. A matrix that is not numerically positive
    definite yields ``inf`` for every entry and ``singular=True``.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be a square matrix")
    n = H.shape[0]
    try:
        factor = cho_factor(0.5 * (H + H.T), lower=True)
        inv = cho_solve(factor, np.eye(n))
    except LinAlgError:
        return np.full(n, np.inf), True
    d = np.diag(inv).copy()
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        return np.full(n, np.inf), True
    return d, False


def parameter_uncertainty(
    H: np.ndarray,
    phi_final: float,
    fraction: float = 0.01,
    widths: np.ndarray | None = None,
    cutoff: float = 0.5,
) -> UncertaintyReport:
    """``delta_theta_i = sqrt(2 * fraction * phi_final * (H^{-1})_ii)``.

    A parameter is labelled stiff when its half-width is below ``cutoff``
    times its box width (``widths``; 1 in normalized coordinates).
    """
    if phi_final < 0 or not np.isfinite(phi_final):
        raise ValueError("phi_final must be finite and non-negative")
    if fraction <= 0:
        raise ValueError("fraction must be positive")
    diag, singular = inverse_diagonal(H)
    delta_phi = fraction * float(phi_final)
    dtheta = np.sqrt(2.0 * delta_phi * diag)
    widths = np.ones_like(dtheta) if widths is None else np.broadcast_to(np.asarray(widths, float), dtheta.shape)
    labels = tuple(STIFF if d < cutoff * w else SLOPPY for d, w in zip(dtheta, widths))
    return UncertaintyReport(dtheta, delta_phi, labels, singular)


def report_rows(report: UncertaintyReport, names: Sequence[str], default_theta, optimized_theta,
                box: BoundsBox | None = None) -> list[dict]:
    """Per-parameter records; with a box, values and half-widths are also given in physical units."""
    default_theta = np.asarray(default_theta, dtype=float)
    optimized_theta = np.asarray(optimized_theta, dtype=float)
    rows = []
    for i, name in enumerate(names):
        row = {
            "name": name,
            "default": float(default_theta[i]),
            "optimized": float(optimized_theta[i]),
            "delta_theta": float(report.delta_theta[i]),
            "class": report.classification[i],
        }
        if box is not None:
            row["default_physical"] = float(to_physical(default_theta, box)[i])
            row["optimized_physical"] = float(to_physical(optimized_theta, box)[i])
            row["delta_physical"] = float(report.delta_theta[i] * box.width[i])
        rows.append(row)
    return rows


def _finite_or_str(x: float):
    return x if np.isfinite(x) else "inf"


def save_report(path, report: UncertaintyReport, names, default_theta, optimized_theta,
                box: BoundsBox | None = None) -> Path:
    rows = report_rows(report, names, default_theta, optimized_theta, box)
    for row in rows:
        for key in ("delta_theta", "delta_physical"):
            if key in row:
                row[key] = _finite_or_str(row[key])
    doc = {
        "delta_phi_threshold": report.delta_phi_threshold,
        "singular": report.singular,
        "units": "normalized",
        "parameters": rows,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path
