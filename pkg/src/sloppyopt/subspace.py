"""Eigenspectrum partitioning into stiff and (pruned) sloppy subspaces."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class EmptySubspaceError(ValueError):
    pass


@dataclass(frozen=True)
class EigenSpectrum:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns match eigenvalues

    @property
    def d(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True)
class SubspacePartition:
    """Stiff basis ``V_s`` and pruned sloppy basis ``V_l`` in ambient coordinates."""

    V_s: np.ndarray
    V_l: np.ndarray
    lambdas: np.ndarray
    flags: tuple[str, ...] = field(default=())

    @property
    def k_s(self) -> int:
        return self.V_s.shape[1]

    @property
    def k_l(self) -> int:
        # k_l counts retained sloppy directions beyond the always-kept first one
        return max(self.V_l.shape[1] - 1, 0)

    @property
    def n_sloppy(self) -> int:
        return self.V_l.shape[1]


def _fix_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def eigendecompose(H, sym_tol: float = 1e-10) -> EigenSpectrum:
    """Symmetric eigendecomposition, eigenvalues descending.

    Each eigenvector is sign-normalized so its largest-magnitude entry is
    positive; this makes bases reproducible across LAPACK builds.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if np.max(np.abs(H - H.T), initial=0.0) > sym_tol * scale:
        raise ValueError("H is not symmetric")
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    order = np.argsort(w)[::-1]
    return EigenSpectrum(w[order], _fix_signs(V[:, order]))


def split_stiff(eigenvalues, gamma: float = 0.90) -> int:
    """Smallest ``k`` whose leading eigenvalues hold a fraction ``gamma`` of the total."""
    lam = np.asarray(getattr(eigenvalues, "eigenvalues", eigenvalues), dtype=float)
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    if np.any(lam < 0):
        raise ValueError("eigenvalues must be non-negative")
    total = lam.sum()
    if total <= 0:
        raise ValueError("all-zero spectrum has no stiff subspace")
    cum = np.cumsum(lam)
    # tolerance guards gamma = 1 against round-off in the cumulative sum
    k = int(np.argmax(cum >= gamma * total * (1 - 1e-12))) + 1
    return k


def prune_sloppy(eigenvalues, k_s: int, tau: float = 1e-4) -> np.ndarray:
    """Indices (0-based, into the descending spectrum) of retained sloppy directions.

    The largest sloppy eigenvalue is always kept; later ones survive only if
    ``lambda_i >= tau * lambda_{k_s+1}``. Returns an empty array when there
    are no sloppy directions at all.
    """
    lam = np.asarray(getattr(eigenvalues, "eigenvalues", eigenvalues), dtype=float)
    if tau <= 0:
        raise ValueError("tau must be positive")
    if k_s >= lam.size:
        return np.empty(0, dtype=int)
    lead = lam[k_s]
    rest = np.arange(k_s + 1, lam.size)
    keep = rest[lam[rest] >= tau * lead]
    return np.concatenate([[k_s], keep]).astype(int)


def lift(omega, U) -> np.ndarray:
    """Express sketch-space directions ``U`` in ambient coordinates: ``omega @ U``."""
    omega = np.asarray(omega, dtype=float)
    U = np.asarray(U, dtype=float)
    if omega.shape[1] != U.shape[0]:
        raise ValueError(f"cannot lift {U.shape} through a sketch of shape {omega.shape}")
    return omega @ U


def misalignment(V_prev, V_new) -> float:
    """``max_j (1 - sigma_j)`` over singular values of ``V_new.T @ V_prev``.

    Zero for identical subspaces, one when some direction of the smaller
    subspace is orthogonal to the other. With unequal dimensions only the top
    ``min(k, k')`` singular values exist, which is what SVD returns.
    """
    A = np.asarray(V_prev, dtype=float)
    B = np.asarray(V_new, dtype=float)
    if A.size == 0 or B.size == 0 or A.shape[1] == 0 or B.shape[1] == 0:
        raise EmptySubspaceError("misalignment of an empty basis is undefined")
    sigma = np.linalg.svd(B.T @ A, compute_uv=False)
    return float(np.clip(np.max(1.0 - sigma), 0.0, 1.0))


def partition(spectrum: EigenSpectrum, gamma: float = 0.90, tau: float = 1e-4, omega=None) -> SubspacePartition:
    """Split a spectrum into stiff and pruned sloppy bases, lifting through ``omega`` if given."""
    lam = np.clip(spectrum.eigenvalues, 0.0, None)
    k_s = split_stiff(lam, gamma)
    kept = prune_sloppy(lam, k_s, tau)
    U_s = spectrum.eigenvectors[:, :k_s]
    U_l = spectrum.eigenvectors[:, kept]
    flags = () if kept.size else ("no-sloppy-directions",)
    if omega is not None:
        U_s, U_l = lift(omega, U_s), lift(omega, U_l)
    return SubspacePartition(U_s, U_l, spectrum.eigenvalues.copy(), flags)


def spectrum_json(history) -> str:
    """Eigenvalues per iteration as a JSON array of arrays (for plotting)."""
    return json.dumps([[float(v) for v in lam] for lam in history])
