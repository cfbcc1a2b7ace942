import numpy as np
import pytest
from numpy.testing import assert_allclose

from lowrank_sde.errors import GridMismatch
from lowrank_sde.noise import BrownianGrid, coarsen, generate


class TestGenerate:
    def test_deterministic_bit_identical(self):
        g1 = generate(123, 0.0, 1.0, 10, 3, 7)
        g2 = generate(123, 0.0, 1.0, 10, 3, 7)
        assert np.array_equal(g1.increments, g2.increments)

    def test_different_seeds_differ(self):
        g1 = generate(123, 0.0, 1.0, 4, 2, 5)
        g2 = generate(124, 0.0, 1.0, 4, 2, 5)
        assert not np.array_equal(g1.increments, g2.increments)

    def test_shape_and_dt(self):
        g = generate(1, 0.5, 2.5, 8, 2, 3)
        assert g.increments.shape == (8, 2, 3)
        assert g.dt == 0.25
        assert_allclose(g.times()[0], 0.5)
        assert_allclose(g.times()[-1], 2.5)

    def test_sample_variance_matches_dt(self):
        # 10^5 draws: sample variance within 3% of dt (99% confidence band)
        g = generate(7, 0.0, 1.0, 10, 10, 1000)
        draws = g.increments.ravel()
        assert draws.size == 100000
        assert abs(np.var(draws) / g.dt - 1.0) < 0.03

    def test_sample_mean_clt_bound(self):
        g = generate(8, 0.0, 1.0, 10, 10, 1000)
        draws = g.increments.ravel()
        assert abs(np.mean(draws)) < 4.0 * np.sqrt(g.dt / draws.size)

    def test_all_finite(self):
        g = generate(9, 0.0, 1.0, 5, 4, 50)
        assert np.all(np.isfinite(g.increments))

    def test_cross_path_independence(self):
        # empirical correlation between distinct paths over 10^4 paths
        g = generate(10, 0.0, 1.0, 2, 1, 10000)
        a = g.increments[0, 0]
        b = g.increments[1, 0]
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 4.0 / np.sqrt(10000)

    def test_invalid_arguments(self):
        with pytest.raises(GridMismatch):
            generate(1, 0.0, 1.0, 0, 1, 1)
        with pytest.raises(GridMismatch):
            generate(1, 1.0, 1.0, 3, 1, 1)


class TestCoarsen:
    def test_factor_one_identity(self):
        g = generate(11, 0.0, 1.0, 6, 2, 4)
        assert coarsen(g, 1) is g

    def test_factor_full_telescopes(self):
        g = generate(12, 0.0, 1.0, 8, 2, 4)
        c = coarsen(g, 8)
        assert c.n_steps == 1
        assert_allclose(c.increments[0], g.increments.sum(axis=0), rtol=1e-12)

    def test_sums_of_fine_blocks(self):
        g = generate(13, 0.0, 2.0, 12, 3, 5)
        c = coarsen(g, 3)
        assert c.n_steps == 4
        assert c.dt == 0.5
        assert c.coarsen_factor == 3
        for i in range(4):
            acc = g.increments[3 * i].copy()
            acc += g.increments[3 * i + 1]
            acc += g.increments[3 * i + 2]
            assert np.array_equal(c.increments[i], acc)

    def test_nested_coarsening_exactly_associative(self):
        g = generate(14, 0.0, 1.0, 24, 2, 6)
        ab = coarsen(coarsen(g, 2), 3)
        direct = coarsen(g, 6)
        assert np.array_equal(ab.increments, direct.increments)
        ba = coarsen(coarsen(g, 3), 2)
        assert np.array_equal(ba.increments, direct.increments)
        assert ab.coarsen_factor == 6

    def test_metadata_inherited(self):
        g = generate(15, 0.0, 1.0, 10, 2, 3)
        c = coarsen(g, 5)
        assert c.seed == g.seed
        assert (c.t0, c.t1, c.m, c.m_paths) == (g.t0, g.t1, g.m, g.m_paths)

    def test_variance_scales_with_factor(self):
        g = generate(16, 0.0, 1.0, 20, 5, 1000)
        c = coarsen(g, 4)
        draws = c.increments.ravel()
        assert draws.size >= 10000
        assert abs(np.var(draws) / (4 * g.dt) - 1.0) < 0.05

    def test_non_divisor_rejected(self):
        g = generate(17, 0.0, 1.0, 10, 1, 2)
        with pytest.raises(GridMismatch):
            coarsen(g, 3)


def test_grid_rederivable_from_tuple():
    # only (seed, t0, t1, n_steps, m, m_paths) need persisting
    meta = dict(seed=99, t0=0.0, t1=3.0, n_steps=6, m=2, m_paths=4)
    g1 = generate(**meta)
    g2 = generate(**meta)
    assert np.array_equal(g1.increments, g2.increments)
    c1 = coarsen(g1, 2)
    c2 = coarsen(g2, 2)
    assert np.array_equal(c1.increments, c2.increments)
