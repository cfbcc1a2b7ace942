"""Seeded Brownian increments on nested time grids.

Increments are produced by a counter-based generator (Philox) keyed per
step block, so any (step, component, path) entry is reproducible in
isolation and path blocks can be generated in parallel. Coarse grids are
built by summing fine increments; every coarse increment is computed as
a flat left-to-right sum over the original finest grid's blocks, which
makes repeated coarsening exactly associative.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import GridMismatch

# shifts uniforms from [0, 1) into (0, 1) so ndtri never sees 0
_OPEN_INTERVAL_SHIFT = 2.0 ** -54


@dataclass(frozen=True)
class BrownianGrid:
    """Brownian increments on a uniform grid over [t0, t1].

    increments[n, c, j] is the increment of component c for path j over
    step n, distributed N(0, dt) with dt = (t1 - t0) / n_steps.
    coarsen_factor records how many finest-grid steps one step here
    spans (1 for a freshly generated grid).
    """

    seed: int
    t0: float
    t1: float
    n_steps: int
    m: int
    m_paths: int
    increments: np.ndarray
    coarsen_factor: int = 1
    # finest-grid increments this grid was derived from, kept so further
    # coarsening can always sum root blocks in one fixed order
    root_increments: np.ndarray = field(default=None, repr=False)

    @property
    def dt(self):
        return (self.t1 - self.t0) / self.n_steps

    def times(self):
        """Grid nodes t_0 .. t_N, length n_steps + 1."""
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


def _standard_normal_block(seed, step, m, m_paths):
    # fresh Philox stream per step block; (component, path) indexes the
    # counter positions of that stream in row-major order
    gen = np.random.Generator(np.random.Philox(key=[seed, step]))
    uniforms = gen.random((m, m_paths))
    return ndtri(uniforms + _OPEN_INTERVAL_SHIFT)


def generate(seed, t0, t1, n_steps, m, m_paths):
    """Generate a Brownian increment grid.

    Each scalar increment is sqrt(dt) times an inverse-CDF standard
    normal from a Philox stream keyed [seed, step]. Identical arguments
    give bit-identical arrays.
    """
    if n_steps < 1:
        raise GridMismatch("n_steps must be >= 1, got %d" % n_steps)
    if not t1 > t0:
        raise GridMismatch("need t1 > t0, got [%r, %r]" % (t0, t1))
    if m < 1 or m_paths < 1:
        raise GridMismatch("need m >= 1 and m_paths >= 1")
    dt = (t1 - t0) / n_steps
    scale = np.sqrt(dt)
    increments = np.empty((n_steps, m, m_paths))
    for step in range(n_steps):
        increments[step] = scale * _standard_normal_block(seed, step, m, m_paths)
    grid = BrownianGrid(
        seed=int(seed),
        t0=float(t0),
        t1=float(t1),
        n_steps=int(n_steps),
        m=int(m),
        m_paths=int(m_paths),
        increments=increments,
    )
    object.__setattr__(grid, "root_increments", increments)
    return grid


def coarsen(fine, factor):
    """Sum consecutive increments into a coarser grid.

    factor must divide fine.n_steps. Each coarse increment is the exact
    left-to-right sum of the corresponding finest-grid blocks, so
    coarsen(coarsen(g, a), b) equals coarsen(g, a*b) bit for bit.
    """
    factor = int(factor)
    if factor < 1:
        raise GridMismatch("factor must be >= 1, got %d" % factor)
    if fine.n_steps % factor != 0:
        raise GridMismatch(
            "factor %d does not divide n_steps %d" % (factor, fine.n_steps)
        )
    if factor == 1:
        return fine
    root = fine.root_increments
    total = fine.coarsen_factor * factor
    n_coarse = fine.n_steps // factor
    out = np.empty((n_coarse, fine.m, fine.m_paths))
    for i in range(n_coarse):
        block = root[i * total]
        acc = block.copy()
        for j in range(i * total + 1, (i + 1) * total):
            acc += root[j]
        out[i] = acc
    grid = BrownianGrid(
        seed=fine.seed,
        t0=fine.t0,
        t1=fine.t1,
        n_steps=n_coarse,
        m=fine.m,
        m_paths=fine.m_paths,
        increments=out,
        coarsen_factor=total,
    )
    object.__setattr__(grid, "root_increments", root)
    return grid
