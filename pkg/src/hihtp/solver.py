"""Hierarchical hard-thresholding pursuit.

Each iteration takes a gradient step on the measurement misfit, identifies
a candidate support by exact hierarchical projection, then solves the
least-squares problem restricted to that support with a matrix-free
conjugate-gradient method.  The loop stops when the support stalls (the
iterate cannot change anymore), when the residual target is met, or at the
iteration cap.
"""

from __future__ import annotations

import enum
import inspect
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .hier_sparse import (
    HiSparseVector,
    HiSupport,
    SparsityLevels,
    cached_mask,
    project_hisparse,
    project_three_level,
)

__all__ = [
    "SolverConfig",
    "SolveReport",
    "StopReason",
    "LstsqResult",
    "hihtp_solve",
    "restricted_least_squares",
    "relative_error",
]


class StopReason(enum.Enum):
    SUPPORT_STALLED = "support_stalled"
    MAX_ITERS = "max_iters"
    RESIDUAL_TARGET = "residual_target"


@dataclass
class SolverConfig:
    """Knobs of the pursuit loop and its least-squares inner solver."""

    step_size: float = 1.0
    max_iters: int = 10
    support_stall_stop: bool = True
    ls_tol: float = 1e-10
    ls_max_iters: int = 200
    rel_err_target: float | None = None

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.ls_tol <= 0:
            raise ValueError("ls_tol must be positive")
        if self.ls_max_iters < 1:
            raise ValueError("ls_max_iters must be >= 1")
        if self.rel_err_target is not None and self.rel_err_target <= 0:
            raise ValueError("rel_err_target must be positive")


@dataclass
class SolveReport:
    """Outcome of one pursuit run."""

    estimate: HiSparseVector
    support_history: list[HiSupport]
    residual_norms: list[float]
    iterations: int
    stop_reason: StopReason
    ls_converged: list[bool] = field(default_factory=list)

    def to_dict(self) -> dict:
        """JSON-ready summary (the dense estimate itself is left out)."""
        return {
            "iterations": self.iterations,
            "stop_reason": self.stop_reason.value,
            "residual_norms": [float(r) for r in self.residual_norms],
            "ls_converged": [bool(f) for f in self.ls_converged],
            "support": _support_to_jsonable(self.estimate.support),
        }


def _support_to_jsonable(support: HiSupport | None):
    if support is None:
        return None
    if support.users is not None:
        return {
            "users": [
                {"user": u, "blocks": [[k, list(e)] for k, e in sub.blocks]}
                for u, sub in support.users
            ]
        }
    return {"blocks": [[k, list(e)] for k, e in support.blocks]}


class LstsqResult(NamedTuple):
    vector: HiSparseVector
    converged: bool
    iterations: int
    residual_norms: list[float]


def _adjoint_takes_support(op) -> bool:
    try:
        return "support" in inspect.signature(op.adjoint).parameters
    except (TypeError, ValueError):
        return False


def restricted_least_squares(y, op, support: HiSupport, cfg: SolverConfig | None = None) -> LstsqResult:
    """Solve min_x ||y - A x||^2 over vectors supported on ``support``.

    Conjugate gradients on the normal equations, using only apply/adjoint
    composed with the support restriction; never materializes a matrix.
    Stops when the restricted gradient norm drops below ls_tol * ||y|| or at
    ls_max_iters (then ``converged`` is False).  The residual norms are
    non-increasing across inner iterations.
    """
    cfg = cfg or SolverConfig()
    if support.total < 1:
        raise ValueError("support must contain at least one entry")
    y = np.asarray(y, dtype=np.float64)
    shape = op.domain_shape
    mask = cached_mask(support, shape)
    restricted_adjoint = _adjoint_takes_support(op)

    def masked_adjoint(r):
        if restricted_adjoint:
            return op.adjoint(r, support=support)
        return np.asarray(op.adjoint(r), dtype=np.float64) * mask

    x = np.zeros(shape)
    r = y.copy()
    g = masked_adjoint(r)
    gamma = float(np.vdot(g, g))
    threshold_sq = (cfg.ls_tol * float(np.linalg.norm(y))) ** 2
    residual_norms = [float(np.linalg.norm(r))]
    p = g
    converged = gamma <= threshold_sq
    it = 0
    while not converged and it < cfg.ls_max_iters:
        q = np.asarray(op.apply(p), dtype=np.float64)
        delta = float(np.vdot(q, q))
        if delta == 0.0:
            break
        alpha = gamma / delta
        x = x + alpha * p
        r = r - alpha * q
        g = masked_adjoint(r)
        gamma_new = float(np.vdot(g, g))
        residual_norms.append(float(np.linalg.norm(r)))
        p = g + (gamma_new / gamma) * p
        gamma = gamma_new
        it += 1
        converged = gamma <= threshold_sq
    return LstsqResult(HiSparseVector(x, support), converged, it, residual_norms)


def hihtp_solve(y, op, levels: SparsityLevels, cfg: SolverConfig | None = None) -> SolveReport:
    """Recover a hierarchically sparse vector from measurements y = A(x).

    Parameters
    ----------
    y : array_like
        Measurements; shape must match the operator's codomain.
    op : operator
        Exposes ``domain_shape``, ``apply(w)`` and ``adjoint(y)``; an
        optional ``support=`` keyword on the adjoint enables the restricted
        fast path.
    levels : SparsityLevels
        Two-level (s, sigma) or three-level (S, s, sigma) budget; must match
        the operator's domain.
    cfg : SolverConfig, optional

    Returns
    -------
    SolveReport
        Last iterate (always exactly on-budget), per-iteration supports and
        residual norms, and the stop reason.
    """
    cfg = cfg or SolverConfig()
    shape = op.domain_shape
    levels.check_shape(shape)
    project = project_three_level if levels.S is not None else project_hisparse
    y = np.asarray(y, dtype=np.float64)
    codomain = getattr(op, "codomain_shape", None)
    if codomain is not None and y.shape != tuple(codomain):
        raise ValueError(f"expected measurements of shape {tuple(codomain)}, got {y.shape}")
    norm_y = float(np.linalg.norm(y))

    x = np.zeros(shape)
    prev_support: HiSupport | None = None
    estimate: HiSparseVector | None = None
    support_history: list[HiSupport] = []
    residual_norms: list[float] = []
    ls_converged: list[bool] = []
    stop = StopReason.MAX_ITERS

    for _ in range(cfg.max_iters):
        residual = y - np.asarray(op.apply(x if estimate is None else estimate), dtype=np.float64)
        xbar = x + cfg.step_size * np.asarray(op.adjoint(residual), dtype=np.float64)
        _, support = project(xbar, levels)
        if cfg.support_stall_stop and support == prev_support:
            stop = StopReason.SUPPORT_STALLED
            break
        ls = restricted_least_squares(y, op, support, cfg)
        estimate = ls.vector
        x = estimate.data
        support_history.append(support)
        ls_converged.append(ls.converged)
        res = float(np.linalg.norm(y - np.asarray(op.apply(estimate), dtype=np.float64)))
        residual_norms.append(res)
        if res == 0.0 or (cfg.rel_err_target is not None and res <= cfg.rel_err_target * norm_y):
            stop = StopReason.RESIDUAL_TARGET
            break
        prev_support = support

    if estimate is None:  # max_iters >= 1, so at least one iteration ran
        raise AssertionError("solver loop did not run")
    return SolveReport(
        estimate=estimate,
        support_history=support_history,
        residual_norms=residual_norms,
        iterations=len(residual_norms),
        stop_reason=stop,
        ls_converged=ls_converged,
    )


def relative_error(estimate, truth) -> float:
    """Euclidean relative error ||estimate - truth|| / ||truth|| on the
    lifted block vector."""
    e = np.asarray(estimate, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if e.shape != t.shape:
        raise ValueError(f"shape mismatch: {e.shape} vs {t.shape}")
    norm_t = float(np.linalg.norm(t))
    if norm_t == 0.0:
        raise ValueError("truth must be nonzero")
    return float(np.linalg.norm(e - t)) / norm_t
