"""Proximal operator and per-block curvature constants for the BCD solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import BlockDesign

__all__ = [
    "BlockStepSizes",
    "block_lipschitz",
    "block_lipschitz_all",
    "group_soft_threshold",
]


def block_lipschitz(block: np.ndarray) -> float:
    """Curvature constant of the data fit restricted to one block.

    Returns the spectral norm of ``block.T @ block``, i.e. the squared
    largest singular value of the block. Computed by exact symmetric
    eigendecomposition of the tiny Gram matrix rather than iteration;
    with at most a handful of columns per block, exactness is cheap.

    Raises
    ------
    ValueError
        If the block is all-zero ("degenerate design block"): the
        coordinate step size would be undefined.
    """
    block = np.asarray(block, dtype=float)
    if block.ndim != 2:
        raise ValueError("design block must be 2-D")
    if not block.any():
        raise ValueError("degenerate design block: all entries are zero")
    gram = block.T @ block
    return float(np.linalg.eigvalsh(gram)[-1])


def block_lipschitz_all(design: BlockDesign) -> np.ndarray:
    """Per-location curvature constants for a whole design.

    Vectorized over locations; all-zero blocks yield 0.0 instead of an
    error so callers can mask them out of the candidate set.
    """
    n, o = design.n_sensors, design.n_orient
    s = design.n_locations
    if o == 1:
        return np.einsum("ns,ns->s", design.entries.reshape(n, s),
                         design.entries.reshape(n, s))
    stacked = design.entries.reshape(n, s, o)
    grams = np.einsum("nsi,nsj->sij", stacked, stacked)
    return np.linalg.eigvalsh(grams)[:, -1]


@dataclass(frozen=True, repr=False)
class BlockStepSizes:
    """Per-location step lengths ``mu[s] = 1 / L_s`` for coordinate updates.

    ``L_s`` is the spectral norm of the block Gram matrix; the step is the
    largest one for which the per-block update is a descent step.
    """

    mu: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.mu, dtype=float)
        if arr.ndim != 1:
            raise ValueError("mu must be a vector")
        if not np.all(np.isfinite(arr)) or not np.all(arr > 0):
            raise ValueError("step sizes must be strictly positive and finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "mu", arr)

    @classmethod
    def from_design(cls, design: BlockDesign) -> "BlockStepSizes":
        lips = block_lipschitz_all(design)
        if np.any(lips <= 0):
            bad = int(np.flatnonzero(lips <= 0)[0])
            raise ValueError(
                f"degenerate design block at location {bad}: all entries are zero"
            )
        return cls(1.0 / lips)

    def __len__(self):
        return self.mu.shape[0]

    def __repr__(self):
        return f"BlockStepSizes(n_locations={len(self)})"


def group_soft_threshold(block: np.ndarray, threshold: float) -> np.ndarray:
    """Shrink a block radially, zeroing it inside the threshold ball.

    Proximal operator of ``threshold * ||.||_Fro``: the input is scaled by
    ``max(1 - threshold / ||block||_Fro, 0)``. When the block's Frobenius
    norm is at most ``threshold`` the result is exactly zero (bitwise, not
    merely small); otherwise the output keeps the input's direction and
    satisfies the stationarity identity
    ``block - out = threshold * out / ||out||_Fro``.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    block = np.asarray(block, dtype=float)
    norm = np.sqrt((block * block).sum())
    if norm <= threshold:
        return np.zeros_like(block)
    return block * (1.0 - threshold / norm)
