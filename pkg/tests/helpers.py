"""Shared fixtures-in-spirit: instance generators and independent oracles.

The oracles here deliberately avoid the library's own code paths: dense
objectives are recomputed with raw numpy expressions, the prox is checked
against golden-section search, and debiasing against projected gradient
descent.
"""

import numpy as np

from bsmx.model import BlockDesign, BlockSparseEstimate, Measurements, densify
from bsmx.sim import random_instance


def make_instance(rng, n_sensors=20, n_locations=40, n_orient=3, n_times=10,
                  n_active=3, noise=0.1):
    m, g, truth = random_instance(
        rng, n_sensors, n_locations, n_orient, n_times,
        n_active=n_active, noise=noise,
    )
    return m, g, truth


def dense_primal(m, g, est, lam):
    """Mixed-norm objective recomputed with dense arithmetic only."""
    x = densify(est)
    r = m.entries - g.entries @ x
    o = g.n_orient
    pen = 0.0
    for s in range(g.n_locations):
        pen += np.sqrt((x[s * o:(s + 1) * o] ** 2).sum())
    return 0.5 * (r ** 2).sum() + lam * pen


def dense_sqrt_objective(m, g, est, lam):
    x = densify(est)
    r = m.entries - g.entries @ x
    o = g.n_orient
    pen = 0.0
    for s in range(g.n_locations):
        pen += np.sqrt(np.sqrt((x[s * o:(s + 1) * o] ** 2).sum()))
    return 0.5 * (r ** 2).sum() + lam * pen


def golden_section_prox_scale(block, threshold, tol=1e-14):
    """Minimize 0.5*||c*B - B||_F^2 + threshold*||c*B||_F over c >= 0."""
    norm = np.linalg.norm(block)

    def objective(c):
        return 0.5 * (c - 1.0) ** 2 * norm ** 2 + threshold * c * norm

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 0.0, 2.0
    c1 = hi - invphi * (hi - lo)
    c2 = lo + invphi * (hi - lo)
    f1, f2 = objective(c1), objective(c2)
    while hi - lo > tol:
        if f1 < f2:
            hi, c2, f2 = c2, c1, f1
            c1 = hi - invphi * (hi - lo)
            f1 = objective(c1)
        else:
            lo, c1, f1 = c1, c2, f2
            c2 = lo + invphi * (hi - lo)
            f2 = objective(c2)
    return 0.5 * (lo + hi)


def projected_gradient_debias(m, g, est, n_iter=20000, tol=1e-12):
    """Box-constrained least squares on the scales by projected gradient."""
    footprints = [g.block(s) @ b for s, b in zip(est.active_set, est.blocks)]
    k = len(footprints)
    gram = np.array([[ (a * b).sum() for b in footprints] for a in footprints])
    rhs = np.array([(m.entries * a).sum() for a in footprints])
    lip = np.linalg.eigvalsh(gram)[-1]
    step = 1.0 / (lip if lip > 0 else 1.0)
    d = np.ones(k)
    for _ in range(n_iter):
        grad = gram @ d - rhs
        d_new = np.maximum(d - step * grad, 1.0)
        if np.abs(d_new - d).max() < tol:
            d = d_new
            break
        d = d_new
    resid = m.entries - sum(di * a for di, a in zip(d, footprints))
    return d, float((resid ** 2).sum())


def orthonormal_design(rng, n_locations, n_orient, n_sensors=None):
    """Design whose Gram matrix is the identity (blocks mutually orthogonal)."""
    cols = n_locations * n_orient
    n = n_sensors or cols
    assert n >= cols
    q, _ = np.linalg.qr(rng.standard_normal((n, cols)))
    return BlockDesign(q[:, :cols], n_locations, n_orient)


def estimate_from(blocks_by_loc, n_locations, n_orient, n_times):
    return BlockSparseEstimate.from_blocks(
        blocks_by_loc.items(), n_locations, n_orient, n_times
    )


def measurements_like(arr):
    return Measurements(np.asarray(arr, dtype=float))
