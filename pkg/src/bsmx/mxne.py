"""Convex mixed-norm solver.

Minimizes ``0.5 * ||M - G X||_Fro^2 + lam * sum_s ||X_s||_Fro`` over
block-partitioned coefficients. The workhorse is cyclic block coordinate
descent with closed-form per-block updates (:func:`solve_bcd`), wrapped in
a forward active-set strategy (:func:`solve_active_set`) that certifies
optimality on the full problem through the duality gap.

``lam`` may be a scalar or a per-location vector; the vector form solves
the weighted-penalty problem ``... + sum_s lam[s] * ||X_s||_Fro``.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .model import (
    BlockDesign,
    BlockSparseEstimate,
    Measurements,
    SolverConfig,
    _check_paired,
    residual,
)
from .prox import BlockStepSizes, block_lipschitz_all

__all__ = [
    "GapReport",
    "ConvergenceTrace",
    "IterationLimitError",
    "primal_objective",
    "dual_map",
    "dual_objective",
    "duality_gap",
    "lambda_max",
    "resolve_lambda",
    "solve_bcd",
    "solve_active_set",
]

# maintained residuals are rebuilt from scratch this often to bound drift
_RESYNC_EVERY = 50


class IterationLimitError(RuntimeError):
    """An iteration cap was exceeded before reaching the gap tolerance.

    Carries the last iterate and its gap so callers can inspect or resume.
    """

    def __init__(self, message: str, estimate: Optional[BlockSparseEstimate] = None,
                 gap: Optional[float] = None):
        super().__init__(message)
        self.estimate = estimate
        self.gap = gap


@dataclass(frozen=True, repr=False)
class GapReport:
    """Primal/dual objective pair with the feasible dual point used."""

    primal: float
    dual: float
    gap: float
    feasible_dual: np.ndarray

    def __repr__(self):
        return (
            f"GapReport(primal={self.primal:.6g}, dual={self.dual:.6g}, "
            f"gap={self.gap:.3g})"
        )


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    gap: float
    active_size: int
    primal: float
    seconds: float


@dataclass
class ConvergenceTrace:
    """Per-iteration solver progress; serializes to CSV."""

    rows: List[TraceRow] = field(default_factory=list)

    def add(self, gap: float, active_size: int, primal: float, seconds: float):
        self.rows.append(
            TraceRow(len(self.rows), float(gap), int(active_size),
                     float(primal), float(seconds))
        )

    @property
    def final(self) -> TraceRow:
        if not self.rows:
            raise ValueError("trace is empty")
        return self.rows[-1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "gap", "active_size", "primal", "seconds"])
            for row in self.rows:
                writer.writerow([
                    row.iteration,
                    f"{row.gap:.17g}",
                    row.active_size,
                    f"{row.primal:.17g}",
                    f"{row.seconds:.6f}",
                ])

    def __len__(self):
        return len(self.rows)


def _lam_vector(lam: Union[float, np.ndarray], n_locations: int) -> np.ndarray:
    arr = np.asarray(lam, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n_locations, float(arr))
    elif arr.shape != (n_locations,):
        raise ValueError(
            f"lam must be a scalar or a vector of length {n_locations}"
        )
    if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
        raise ValueError("lam must be positive and finite")
    return arr


def _location_norms(flat: np.ndarray, n_orient: int) -> np.ndarray:
    """Frobenius norm per location block of a (S*O, T) matrix."""
    n_loc = flat.shape[0] // n_orient
    return np.linalg.norm(flat.reshape(n_loc, -1), axis=1)


def _penalty(est: BlockSparseEstimate, lam_vec: np.ndarray) -> float:
    return float(
        sum(lam_vec[s] * np.linalg.norm(b)
            for s, b in zip(est.active_set, est.blocks))
    )


def primal_objective(m: Measurements, g: BlockDesign, est: BlockSparseEstimate,
                     lam: Union[float, np.ndarray]) -> float:
    """Value of ``0.5 * ||M - G X||_Fro^2 + sum_s lam_s ||X_s||_Fro``."""
    lam_vec = _lam_vector(lam, g.n_locations)
    r = residual(m, g, est)
    return 0.5 * float((r * r).sum()) + _penalty(est, lam_vec)


def dual_map(residual_tilde: np.ndarray, g: BlockDesign,
             lam: Union[float, np.ndarray]) -> np.ndarray:
    """Scale a residual onto the dual-feasible set.

    Returns ``Y = R / max(max_s ||G_s^T R||_Fro / lam_s, 1)``, the natural
    feasible dual point associated with a primal iterate: it satisfies
    ``||G_s^T Y||_Fro <= lam_s`` for every location and leaves an already
    feasible residual untouched.
    """
    lam_vec = _lam_vector(lam, g.n_locations)
    corr = g.entries.T @ residual_tilde
    norms = _location_norms(corr, g.n_orient)
    scale = max(float((norms / lam_vec).max()), 1.0)
    return residual_tilde / scale


def dual_objective(m: Measurements, y: np.ndarray) -> float:
    """Dual objective ``-0.5 * ||Y||_Fro^2 + Tr(Y^T M)``.

    Feasibility of ``y`` is the caller's contract; use :func:`dual_map`
    to produce a feasible point.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != m.entries.shape:
        raise ValueError(
            f"dual variable has shape {y.shape}, expected {m.entries.shape}"
        )
    return float((y * m.entries).sum() - 0.5 * (y * y).sum())


def _gap_and_scores(
    m: Measurements, g: BlockDesign, est: BlockSparseEstimate,
    lam_vec: np.ndarray,
) -> Tuple[GapReport, np.ndarray]:
    """Full-problem duality gap plus the per-location correlation norms.

    The correlation norms ``||G_s^T R||_Fro`` double as the active-set
    violation scores, so they are returned to avoid a second scan.
    """
    r = residual(m, g, est)
    corr = g.entries.T @ r
    norms = _location_norms(corr, g.n_orient)
    scale = max(float((norms / lam_vec).max()), 1.0)
    y = r / scale
    primal = 0.5 * float((r * r).sum()) + _penalty(est, lam_vec)
    dual = dual_objective(m, y)
    report = GapReport(primal=primal, dual=dual, gap=primal - dual,
                       feasible_dual=y)
    return report, norms


def duality_gap(m: Measurements, g: BlockDesign, est: BlockSparseEstimate,
                lam: Union[float, np.ndarray]) -> GapReport:
    """Duality gap of an estimate on the full problem.

    Nonnegative up to roundoff, zero exactly at the optimum, and an upper
    bound on the primal suboptimality of ``est``.
    """
    _check_paired(m, g, est)
    lam_vec = _lam_vector(lam, g.n_locations)
    report, _ = _gap_and_scores(m, g, est, lam_vec)
    return report


def lambda_max(m: Measurements, g: BlockDesign) -> float:
    """Smallest regularization weight for which the zero estimate is optimal.

    From the optimality condition at zero: ``max_s ||G_s^T M||_Fro``. Any
    weight at or above this value yields an empty support.
    """
    _check_paired(m, g)
    corr = g.entries.T @ m.entries
    return float(_location_norms(corr, g.n_orient).max())


def resolve_lambda(config: SolverConfig, m: Measurements, g: BlockDesign) -> float:
    """Absolute regularization weight for a config (resolving fractions)."""
    if config.lam_is_fraction:
        return config.lam * lambda_max(m, g)
    return config.lam


def _mu_array(mu: Union[BlockStepSizes, np.ndarray], n_locations: int) -> np.ndarray:
    arr = np.asarray(mu.mu if isinstance(mu, BlockStepSizes) else mu, dtype=float)
    if arr.shape != (n_locations,):
        raise ValueError(f"mu must have length {n_locations}")
    return arr


def solve_bcd(
    m: Measurements,
    g: BlockDesign,
    init: Optional[BlockSparseEstimate],
    mu: Union[BlockStepSizes, np.ndarray],
    lam: Union[float, np.ndarray],
    gap_tol: float,
    *,
    candidates: Optional[Sequence[int]] = None,
    max_iter: int = 100_000,
    trace: Optional[ConvergenceTrace] = None,
    time_origin: Optional[float] = None,
) -> Tuple[BlockSparseEstimate, ConvergenceTrace]:
    """Cyclic block coordinate descent over a fixed candidate set.

    Each sweep visits the candidate locations in ascending order and
    applies the closed-form update: a gradient step with the per-block
    step length followed by group soft-thresholding. The duality gap of
    the restricted problem is evaluated once per full sweep; iteration
    stops when it drops below ``gap_tol``.

    The residual is updated incrementally after each block change and
    rebuilt from scratch every 50 sweeps to bound drift.

    Parameters
    ----------
    init : BlockSparseEstimate or None
        Warm-start values. Its support must lie within ``candidates``.
    candidates : sequence of int, optional
        Locations the sweep may update. Defaults to all locations.

    Returns
    -------
    estimate, trace
        The estimate is gap-certified on the problem restricted to the
        candidate set; exact-zero blocks are dropped.

    Raises
    ------
    IterationLimitError
        If ``max_iter`` sweeps pass without reaching the tolerance. The
        error carries the last iterate and its gap.
    """
    if not gap_tol > 0:
        raise ValueError("gap_tol must be positive")
    _check_paired(m, g, init)
    n_loc, n_orient, n_times = g.n_locations, g.n_orient, m.n_times
    lam_vec = _lam_vector(lam, n_loc)
    mu_arr = _mu_array(mu, n_loc)

    if candidates is None:
        cand = list(range(n_loc))
    else:
        cand = sorted(set(int(s) for s in candidates))
        if cand and (cand[0] < 0 or cand[-1] >= n_loc):
            raise ValueError("candidate index out of range")
    if trace is None:
        trace = ConvergenceTrace()
    t0 = time.perf_counter() if time_origin is None else time_origin

    def build(blocks_dict):
        return BlockSparseEstimate.from_blocks(
            blocks_dict.items(), n_loc, n_orient, n_times
        )

    if not cand:
        # restricted to nothing, the zero estimate is trivially optimal
        est = BlockSparseEstimate.empty(n_loc, n_orient, n_times)
        primal = 0.5 * float((m.entries * m.entries).sum())
        trace.add(0.0, 0, primal, time.perf_counter() - t0)
        return est, trace

    if not np.all(np.isfinite(mu_arr[cand])) or not np.all(mu_arr[cand] > 0):
        raise ValueError("step sizes must be positive and finite on candidates")

    blocks = {}
    if init is not None:
        cand_set = set(cand)
        for s, blk in zip(init.active_set, init.blocks):
            if s not in cand_set:
                raise ValueError(
                    f"warm-start location {s} is outside the candidate set"
                )
            blocks[s] = blk.copy()

    cand_cols = g.column_indices(cand)
    g_cand_t = g.entries[:, cand_cols].T.copy()
    lam_cand = lam_vec[cand]

    def rebuild_residual():
        r = m.entries.copy()
        for s, blk in blocks.items():
            r -= g.block(s) @ blk
        return r

    def restricted_gap(r):
        pen = sum(
            lam_vec[s] * np.sqrt((b * b).sum()) for s, b in blocks.items()
        )
        primal = 0.5 * float((r * r).sum()) + float(pen)
        corr = g_cand_t @ r
        norms = _location_norms(corr, n_orient)
        scale = max(float((norms / lam_cand).max()), 1.0)
        y = r / scale
        dual = float((y * m.entries).sum() - 0.5 * (y * y).sum())
        return primal, primal - dual

    r = rebuild_residual()
    sweeps = 0
    while True:
        primal, gap = restricted_gap(r)
        trace.add(gap, len(blocks), primal, time.perf_counter() - t0)
        if gap < gap_tol:
            break
        if sweeps >= max_iter:
            est = build(blocks)
            raise IterationLimitError(
                f"coordinate descent did not reach gap {gap_tol:g} within "
                f"{max_iter} sweeps (gap={gap:.3e})",
                estimate=est,
                gap=gap,
            )
        for s in cand:
            g_s = g.block(s)
            x_s = blocks.get(s)
            step = mu_arr[s]
            x_bar = step * (g_s.T @ r)
            if x_s is not None:
                x_bar += x_s
            thr = step * lam_vec[s]
            norm = np.sqrt((x_bar * x_bar).sum())
            if norm <= thr:
                if x_s is not None:
                    r += g_s @ x_s
                    del blocks[s]
            else:
                x_new = x_bar * (1.0 - thr / norm)
                if x_s is not None:
                    r += g_s @ (x_s - x_new)
                else:
                    r -= g_s @ x_new
                blocks[s] = x_new
        sweeps += 1
        if sweeps % _RESYNC_EVERY == 0:
            r = rebuild_residual()

    return build(blocks), trace


def _top_violators(norms: np.ndarray, lam_vec: np.ndarray, exclude: set,
                   batch: int, valid: np.ndarray) -> List[int]:
    """At most ``batch`` new locations with the largest positive violation.

    Scores are ``||G_s^T R||_Fro - lam_s``; ties break toward the lower
    index (stable sort on descending score).
    """
    excess = norms - lam_vec
    excess[~valid] = -np.inf
    order = np.argsort(-excess, kind="stable")
    picked = []
    for s in order:
        if excess[s] <= 0:
            break
        if int(s) in exclude:
            continue
        picked.append(int(s))
        if len(picked) == batch:
            break
    return picked


def solve_active_set(
    m: Measurements,
    g: BlockDesign,
    warm: Optional[BlockSparseEstimate],
    lam: Union[float, np.ndarray],
    config: SolverConfig,
    *,
    inner: str = "bcd",
    trace: Optional[ConvergenceTrace] = None,
    time_origin: Optional[float] = None,
) -> Tuple[BlockSparseEstimate, ConvergenceTrace]:
    """Solve the full problem with a forward active-set strategy.

    Starting from the warm-start support (or the largest correlation
    scores when there is none), the driver alternates between solving the
    problem restricted to the current candidate set and certifying the
    result on the full problem via the duality gap, expanding the set with
    the top violating locations until the full gap passes ``gap_tol``.

    The candidate set only grows within one call; all-zero design blocks
    are excluded from candidacy with a warning. Determinism: sweeps run in
    ascending location order and ties in violator selection break toward
    the lower index.

    Parameters
    ----------
    inner : {"bcd", "pgd"}
        Inner solver for the restricted subproblems: block coordinate
        descent (default) or the accelerated proximal-gradient reference
        solver (used for benchmarking).

    Raises
    ------
    IterationLimitError
        If the outer loop exceeds ``n_locations / active_batch + 10``
        expansions, or an inner solve exceeds its own cap.
    """
    _check_paired(m, g, warm)
    if inner not in ("bcd", "pgd"):
        raise ValueError(f"unknown inner solver {inner!r}")
    n_loc, n_orient, n_times = g.n_locations, g.n_orient, m.n_times
    lam_vec = _lam_vector(lam, n_loc)

    lips = block_lipschitz_all(g)
    valid = lips > 0
    if not valid.all():
        warnings.warn(
            f"excluding {int((~valid).sum())} all-zero design blocks from "
            "the candidate set",
            RuntimeWarning,
            stacklevel=2,
        )
    mu_arr = np.zeros(n_loc)
    mu_arr[valid] = 1.0 / lips[valid]

    if warm is None:
        est = BlockSparseEstimate.empty(n_loc, n_orient, n_times)
    else:
        kept = [
            (s, b) for s, b in zip(warm.active_set, warm.blocks) if valid[s]
        ]
        est = BlockSparseEstimate.from_blocks(kept, n_loc, n_orient, n_times)

    if trace is None:
        trace = ConvergenceTrace()
    t0 = time.perf_counter() if time_origin is None else time_origin

    active = set(est.active_set)
    outer_cap = n_loc // config.active_batch + 10
    for outer in range(outer_cap + 1):
        report, norms = _gap_and_scores(m, g, est, lam_vec)
        trace.add(report.gap, est.n_active, report.primal,
                  time.perf_counter() - t0)
        if report.gap < config.gap_tol:
            return est, trace
        if outer == outer_cap:
            raise IterationLimitError(
                f"active-set strategy did not converge within {outer_cap} "
                f"expansions (gap={report.gap:.3e})",
                estimate=est,
                gap=report.gap,
            )
        new = _top_violators(norms, lam_vec, active, config.active_batch, valid)
        active.update(new)
        cand = sorted(active)
        if inner == "bcd":
            est, _ = solve_bcd(
                m, g, est, mu_arr, lam_vec, config.gap_tol,
                candidates=cand, max_iter=config.max_bcd_iter,
                trace=trace, time_origin=t0,
            )
        else:
            from .oracle import solve_proximal_gradient

            est = solve_proximal_gradient(
                m, g, lam_vec, config.gap_tol,
                candidates=cand, init=est,
            )
    raise AssertionError("unreachable")
