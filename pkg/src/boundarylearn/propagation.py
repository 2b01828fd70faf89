"""Harmonic extension of known labels over the affinity graph.

Solves the diagonally-dominant system that pins labeled values and minimizes
the weighted smoothness energy of the full labeling, using conjugate
gradients with optional Jacobi preconditioning.  Unlabeled datapoints with no
path to any labeled one are detected first and held at the neutral value 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True)
class SolverConfig:
    rel_tolerance: float = 1e-8
    max_iterations: Optional[int] = None  # None means 10 * n
    preconditioner: str = "jacobi"  # "jacobi" or "none"

    def __post_init__(self):
        if not 0 < self.rel_tolerance < 1:
            raise ValueError("rel_tolerance must be in (0, 1)")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.preconditioner not in ("jacobi", "none"):
            raise ValueError("preconditioner must be 'jacobi' or 'none'")


@dataclass(frozen=True)
class PropagationResult:
    """Solution aligned with the unlabeled ordering, plus solve diagnostics.

    ``residual_checkpoints`` records the residual norm each time the best
    iterate improves, so the sequence is non-increasing by construction.
    """

    y_u: np.ndarray
    residual_norm: float
    iterations: int
    isolated_ids: Tuple[int, ...]
    converged: bool
    residual_checkpoints: Tuple[float, ...]


def _isolated_mask(l_uu: sp.csr_matrix, w_ul: sp.csr_matrix) -> np.ndarray:
    """Unlabeled datapoints whose whole component touches no labeled one.

    Components are taken over the unlabeled-unlabeled coupling (off-diagonal
    structure of ``l_uu``); a component is isolated iff none of its members
    has any weight toward the labeled set.
    """
    n = l_uu.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    structure = l_uu.copy()
    structure.setdiag(0)
    structure.eliminate_zeros()
    _, comp = connected_components(structure, directed=False)
    touches_labeled = np.asarray(abs(w_ul).sum(axis=1)).ravel() > 0
    comp_touches = np.zeros(comp.max() + 1, dtype=bool)
    np.logical_or.at(comp_touches, comp, touches_labeled)
    return ~comp_touches[comp]


def _pcg(
    a: sp.csr_matrix,
    b: np.ndarray,
    rel_tolerance: float,
    max_iterations: int,
    use_jacobi: bool,
) -> Tuple[np.ndarray, float, int, bool, List[float]]:
    n = a.shape[0]
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n), 0.0, 0, True, [0.0]
    target = rel_tolerance * b_norm

    inv_diag = None
    if use_jacobi:
        diag = a.diagonal()
        inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)

    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r if inv_diag is not None else r
    p = z.copy()
    rz = float(r @ z)

    r_norm = float(np.linalg.norm(r))
    best_norm, best_x, best_it = r_norm, x.copy(), 0
    checkpoints = [r_norm]

    iterations = 0
    converged = r_norm <= target
    while not converged and iterations < max_iterations:
        ap = a @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            break  # numerical breakdown; fall back to best iterate
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        iterations += 1
        r_norm = float(np.linalg.norm(r))
        if r_norm < best_norm:
            best_norm, best_x, best_it = r_norm, x.copy(), iterations
            checkpoints.append(r_norm)
        if r_norm <= target:
            converged = True
            break
        z = inv_diag * r if inv_diag is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    return best_x, best_norm, iterations, converged, checkpoints


def solve_propagation(
    l_uu: sp.csr_matrix,
    w_ul: sp.csr_matrix,
    y_l: np.ndarray,
    config: SolverConfig = SolverConfig(),
    unlabeled_ids: Optional[Sequence[int]] = None,
) -> PropagationResult:
    """Solve the block system for the unlabeled values.

    ``unlabeled_ids`` maps row positions to edge ids for reporting isolated
    datapoints; positions are used when omitted.
    """
    l_uu = sp.csr_matrix(l_uu)
    w_ul = sp.csr_matrix(w_ul)
    y_l = np.asarray(y_l, dtype=np.float64).ravel()
    n_u = l_uu.shape[0]
    if l_uu.shape[1] != n_u:
        raise ValueError("L_uu must be square")
    if w_ul.shape[0] != n_u:
        raise ValueError("W_ul row count must match L_uu")
    if w_ul.shape[1] != y_l.shape[0]:
        raise ValueError("y_l length must match W_ul column count")
    if y_l.shape[0] == 0:
        raise ValueError("at least one labeled datapoint is required")

    if n_u == 0:
        return PropagationResult(
            y_u=np.zeros(0), residual_norm=0.0, iterations=0,
            isolated_ids=(), converged=True, residual_checkpoints=(0.0,),
        )

    ids = np.arange(n_u) if unlabeled_ids is None else np.asarray(unlabeled_ids)
    if ids.shape[0] != n_u:
        raise ValueError("unlabeled_ids length must match L_uu")

    isolated = _isolated_mask(l_uu, w_ul)
    keep = ~isolated
    b = np.asarray(w_ul @ y_l).ravel()

    a_sub = l_uu[keep][:, keep]
    b_sub = b[keep]
    max_iterations = config.max_iterations
    if max_iterations is None:
        max_iterations = max(1, 10 * int(keep.sum()))

    x, res, iters, converged, checkpoints = _pcg(
        a_sub, b_sub, config.rel_tolerance, max_iterations,
        use_jacobi=(config.preconditioner == "jacobi"),
    )

    y_u = np.zeros(n_u)
    y_u[keep] = x
    return PropagationResult(
        y_u=y_u,
        residual_norm=res,
        iterations=iters,
        isolated_ids=tuple(int(i) for i in ids[isolated]),
        converged=converged,
        residual_checkpoints=tuple(checkpoints),
    )
