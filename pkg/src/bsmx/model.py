"""Core data types for block-sparse multiple-measurement-vector regression.

A problem couples a sensor-by-source design matrix with a block-column
structure (one block of ``n_orient`` adjacent columns per source location)
and a sensor-by-time data matrix, assumed spatially whitened. Estimates
store only their nonzero blocks, so memory scales with the recovered
support rather than with the full source space.

All types are immutable after construction; arrays are copied and marked
read-only, so instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np

__all__ = [
    "BlockDesign",
    "Measurements",
    "BlockSparseEstimate",
    "SolverConfig",
    "densify",
    "sparsify",
    "residual",
]


def _readonly_matrix(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float, order="C")
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, repr=False)
class BlockDesign:
    """Design (gain) matrix with block-column structure.

    Parameters
    ----------
    entries : ndarray, shape (n_sensors, n_locations * n_orient)
        Dense design matrix. Block ``s`` occupies the contiguous columns
        ``[s * n_orient, (s + 1) * n_orient)``.
    n_locations : int
        Number of source locations (column blocks).
    n_orient : int
        Columns per block, typically 1 (fixed orientation) or 3 (free).
    """

    entries: np.ndarray
    n_locations: int
    n_orient: int

    def __post_init__(self):
        if self.n_locations < 1 or self.n_orient < 1:
            raise ValueError("n_locations and n_orient must be positive")
        arr = _readonly_matrix(self.entries, "design matrix")
        expected = self.n_locations * self.n_orient
        if arr.shape[1] != expected:
            raise ValueError(
                f"design matrix has {arr.shape[1]} columns, expected "
                f"n_locations * n_orient = {expected}"
            )
        object.__setattr__(self, "entries", arr)

    @property
    def n_sensors(self) -> int:
        return self.entries.shape[0]

    def block(self, s: int) -> np.ndarray:
        """Columns of location ``s`` as an ``(n_sensors, n_orient)`` view."""
        o = self.n_orient
        return self.entries[:, s * o:(s + 1) * o]

    def column_indices(self, locations: Iterable[int]) -> np.ndarray:
        """Flat column indices covering the given locations, in order."""
        o = self.n_orient
        locs = np.asarray(list(locations), dtype=int)
        return (locs[:, None] * o + np.arange(o)[None, :]).ravel()

    def __repr__(self):
        return (
            f"BlockDesign(n_sensors={self.n_sensors}, "
            f"n_locations={self.n_locations}, n_orient={self.n_orient})"
        )


@dataclass(frozen=True, repr=False)
class Measurements:
    """Whitened sensor data matrix of shape (n_sensors, n_times)."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "entries", _readonly_matrix(self.entries, "data matrix")
        )

    @property
    def n_sensors(self) -> int:
        return self.entries.shape[0]

    @property
    def n_times(self) -> int:
        return self.entries.shape[1]

    def __repr__(self):
        return f"Measurements(n_sensors={self.n_sensors}, n_times={self.n_times})"


@dataclass(frozen=True, repr=False)
class BlockSparseEstimate:
    """Source coefficients stored as per-location blocks over the support.

    ``active_set`` lists the locations with a nonzero block, strictly
    increasing. ``blocks`` is parallel to ``active_set``; each entry is the
    ``(n_orient, n_times)`` coefficient block of that location. Blocks that
    are exactly zero are never stored, so the support size is well defined.
    Use :func:`densify` / :func:`sparsify` to convert to and from the full
    coefficient matrix.
    """

    active_set: Tuple[int, ...]
    blocks: Tuple[np.ndarray, ...]
    n_locations: int
    n_orient: int
    n_times: int

    def __post_init__(self):
        if self.n_locations < 1 or self.n_orient < 1 or self.n_times < 1:
            raise ValueError("estimate dimensions must be positive")
        active = tuple(int(s) for s in self.active_set)
        if len(active) != len(self.blocks):
            raise ValueError("active_set and blocks must have equal length")
        if any(b - a <= 0 for a, b in zip(active, active[1:])):
            raise ValueError("active_set must be strictly increasing")
        if active and (active[0] < 0 or active[-1] >= self.n_locations):
            raise ValueError("active_set indices out of range")
        frozen = []
        for s, blk in zip(active, self.blocks):
            arr = _readonly_matrix(blk, f"block {s}")
            if arr.shape != (self.n_orient, self.n_times):
                raise ValueError(
                    f"block {s} has shape {arr.shape}, expected "
                    f"({self.n_orient}, {self.n_times})"
                )
            if not arr.any():
                raise ValueError(
                    f"block {s} is exactly zero; zero blocks must be dropped "
                    "(use from_blocks)"
                )
            frozen.append(arr)
        object.__setattr__(self, "active_set", active)
        object.__setattr__(self, "blocks", tuple(frozen))
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(active)})

    @classmethod
    def empty(cls, n_locations: int, n_orient: int, n_times: int) -> "BlockSparseEstimate":
        return cls((), (), n_locations, n_orient, n_times)

    @classmethod
    def from_blocks(cls, items, n_locations: int, n_orient: int,
                    n_times: int) -> "BlockSparseEstimate":
        """Build an estimate from ``(location, block)`` pairs.

        Pairs may come in any order; exactly-zero blocks are dropped.
        """
        pairs = sorted((int(s), np.asarray(b, dtype=float)) for s, b in items)
        kept = [(s, b) for s, b in pairs if b.any()]
        return cls(
            tuple(s for s, _ in kept),
            tuple(b for _, b in kept),
            n_locations,
            n_orient,
            n_times,
        )

    @property
    def n_active(self) -> int:
        return len(self.active_set)

    def block_for(self, s: int) -> Optional[np.ndarray]:
        """Block of location ``s``, or None if inactive."""
        i = self._index.get(s)
        return None if i is None else self.blocks[i]

    def block_norms(self) -> np.ndarray:
        """Frobenius norm of each stored block, aligned with active_set."""
        return np.array([np.linalg.norm(b) for b in self.blocks])

    def __repr__(self):
        return (
            f"BlockSparseEstimate(n_active={self.n_active}, "
            f"n_locations={self.n_locations}, n_orient={self.n_orient}, "
            f"n_times={self.n_times})"
        )


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters shared by the convex and reweighted drivers.

    Parameters
    ----------
    lam : float
        Regularization weight. Interpreted as an absolute value, or as a
        fraction of the data-dependent zero-solution threshold when
        ``lam_is_fraction`` is set.
    lam_is_fraction : bool
        If True, ``lam`` is resolved against ``lambda_max(M, G)`` at solve
        time.
    gap_tol : float
        Duality-gap threshold declaring a convex solve optimal.
    reweight_tol : float
        Entrywise max-abs change between consecutive reweighted estimates
        below which the outer loop stops.
    max_reweight : int
        Cap on reweighting iterations. Exhausting it is not an error; the
        last iterate is returned with ``converged=False``.
    active_batch : int
        Number of candidate locations added per active-set expansion.
    max_bcd_iter : int
        Safety cap on inner coordinate-descent sweeps per subproblem.
    """

    lam: float
    lam_is_fraction: bool = False
    gap_tol: float = 1e-6
    reweight_tol: float = 1e-6
    max_reweight: int = 30
    active_batch: int = 10
    max_bcd_iter: int = 100_000

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")
        if not self.reweight_tol > 0:
            raise ValueError("reweight_tol must be positive")
        if self.max_reweight < 1:
            raise ValueError("max_reweight must be at least 1")
        if self.active_batch < 1:
            raise ValueError("active_batch must be at least 1")
        if self.max_bcd_iter < 1:
            raise ValueError("max_bcd_iter must be at least 1")


def densify(est: BlockSparseEstimate) -> np.ndarray:
    """Expand an estimate to the full (n_locations * n_orient, n_times) matrix."""
    out = np.zeros((est.n_locations * est.n_orient, est.n_times))
    o = est.n_orient
    for s, blk in zip(est.active_set, est.blocks):
        out[s * o:(s + 1) * o] = blk
    return out


def sparsify(x: np.ndarray, n_orient: int) -> BlockSparseEstimate:
    """Build an estimate from a dense coefficient matrix, dropping zero blocks.

    The inverse of :func:`densify`: only blocks that are exactly zero are
    removed, so ``densify(sparsify(x, o)) == x`` holds bitwise.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("coefficient matrix must be 2-D")
    if x.shape[0] % n_orient != 0:
        raise ValueError(
            f"row count {x.shape[0]} is not a multiple of n_orient={n_orient}"
        )
    n_locations = x.shape[0] // n_orient
    items = []
    for s in range(n_locations):
        blk = x[s * n_orient:(s + 1) * n_orient]
        if blk.any():
            items.append((s, blk))
    return BlockSparseEstimate.from_blocks(items, n_locations, n_orient, x.shape[1])


def _check_paired(m: Measurements, g: BlockDesign, est: Optional[BlockSparseEstimate] = None):
    if m.n_sensors != g.n_sensors:
        raise ValueError(
            f"data has {m.n_sensors} rows but design has {g.n_sensors} rows"
        )
    if est is not None:
        if est.n_locations != g.n_locations or est.n_orient != g.n_orient:
            raise ValueError(
                f"estimate is over {est.n_locations} locations x "
                f"{est.n_orient} orientations, design has {g.n_locations} x "
                f"{g.n_orient}"
            )
        if est.n_times != m.n_times:
            raise ValueError(
                f"estimate has {est.n_times} time points, data has {m.n_times}"
            )


def residual(m: Measurements, g: BlockDesign, est: BlockSparseEstimate) -> np.ndarray:
    """Data-fit residual, accumulated over active blocks only.

    Equals the dense residual of the densified estimate to machine
    precision, at a cost proportional to the support size rather than to
    the number of locations.
    """
    _check_paired(m, g, est)
    out = m.entries.copy()
    for s, blk in zip(est.active_set, est.blocks):
        out -= g.block(s) @ blk
    return out
