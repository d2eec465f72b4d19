import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chebfsai.pum import (
    AnisotropySpec,
    Cover,
    PuSpace,
    assemble,
    build_prolongation,
    estimate_penalties,
    evaluate,
    evaluate_pu,
    l2_error,
    local_projection,
    manufactured,
    nitsche_form,
    polynomial_solution,
)
from chebfsai.pum.cover import BSplineWeight, local_dim
from chebfsai.pum.operators import LAPLACE, compose, directional

PI = np.pi


@pytest.fixture(scope="module")
def space3():
    return PuSpace(Cover(3), q=3, p=2)


class TestCover:
    def test_sizes(self):
        c = Cover(2)
        assert (c.n_side, c.n, c.h) == (4, 16, 0.25)
        assert c.radius == pytest.approx(0.5 * c.stretch * c.h)
        assert len(c.boundary_patches) == 12

    def test_overlaps_only_neighbours(self):
        c = Cover(3)
        for i, j in c.overlap_pairs:
            (ix, iy), (jx, jy) = c.cell(i), c.cell(j)
            assert max(abs(ix - jx), abs(iy - jy)) <= 1

    def test_covers_closed_square(self):
        c = Cover(3)
        g = np.linspace(0, 1, 41)
        X, Y = np.meshgrid(g, g)
        _, mask = c.patches_at(X.ravel(), Y.ravel())
        assert mask.any(axis=1).all()

    def test_stretch_range(self):
        with pytest.raises(ValueError):
            Cover(2, stretch=2.0)


class TestWeight:
    @pytest.mark.parametrize("q", [2, 3, 4])
    def test_peak_and_support(self, q):
        w = BSplineWeight(q)
        xi = np.linspace(-1.2, 1.2, 241)
        v = w(xi)
        assert w(np.array([0.0]))[0] == pytest.approx(1.0, rel=1e-14)
        assert np.all(v >= -1e-15) and np.all(v <= 1.0 + 1e-14)
        assert np.all(v[np.abs(xi) >= 1.0] == 0.0)


class TestEvaluatePu:
    @settings(max_examples=40, deadline=None)
    @given(x=st.floats(0.0, 1.0), y=st.floats(0.0, 1.0))
    def test_partition_of_unity(self, x, y):
        space = PuSpace(Cover(2), q=3)
        vals = evaluate_pu(space, (x, y), order=1)
        D = sum(vals.values())
        assert D[0, 0] == pytest.approx(1.0, abs=1e-13)
        assert abs(D[1, 0]) < 1e-10 and abs(D[0, 1]) < 1e-10
        for v in vals.values():
            assert -1e-14 <= v[0, 0] <= 1.0 + 1e-14

    def test_single_patch_region(self):
        space = PuSpace(Cover(2), q=3)
        vals = evaluate_pu(space, (0.375, 0.625), order=2)
        assert list(vals) == [2 * 4 + 1]
        D = vals[9]
        assert D[0, 0] == pytest.approx(1.0, rel=1e-14)
        assert np.abs(D[1:, :]).max() < 1e-10 and np.abs(D[:, 1:]).max() < 1e-10

    @pytest.mark.parametrize("pt", [(0.31, 0.47), (0.52, 0.2), (0.05, 0.93)])
    def test_derivatives_match_finite_differences(self, pt):
        space = PuSpace(Cover(2), q=3)
        h = 1e-5
        base = evaluate_pu(space, pt, order=1)
        xp = evaluate_pu(space, (pt[0] + h, pt[1]), 0)
        xm = evaluate_pu(space, (pt[0] - h, pt[1]), 0)
        yp = evaluate_pu(space, (pt[0], pt[1] + h), 0)
        ym = evaluate_pu(space, (pt[0], pt[1] - h), 0)
        for i, D in base.items():
            fx = (xp.get(i, np.zeros((1, 1)))[0, 0] - xm.get(i, np.zeros((1, 1)))[0, 0]) / (2 * h)
            fy = (yp.get(i, np.zeros((1, 1)))[0, 0] - ym.get(i, np.zeros((1, 1)))[0, 0]) / (2 * h)
            scale = max(abs(D[1, 0]), abs(D[0, 1]), 1.0)
            assert abs(D[1, 0] - fx) <= 1e-5 * scale
            assert abs(D[0, 1] - fy) <= 1e-5 * scale

    def test_outside(self):
        with pytest.raises(ValueError):
            evaluate_pu(PuSpace(Cover(1)), (1.5, 0.2))


class TestSpace:
    def test_local_dims(self):
        space = PuSpace(Cover(2), p=2, boundary_refine=True)
        assert local_dim(2) == 6
        assert space.dims[5] == 6 and space.dims[0] == 10
        assert space.layout.N == 4 * 6 + 12 * 10


class TestManufactured:
    def test_biharmonic_source(self):
        u = manufactured("biharmonic")
        x, y = np.array([0.1, 0.7]), np.array([0.3, 0.9])
        np.testing.assert_allclose(u.f(x, y), 64 * PI**4 * u.value(x, y), rtol=1e-12)

    def test_triharmonic_source(self):
        u = manufactured("triharmonic")
        x, y = np.array([0.1, 0.7]), np.array([0.3, 0.9])
        np.testing.assert_allclose(u.f(x, y), (8 * PI**2) ** 3 * u.value(x, y), rtol=1e-12)

    def test_boundary_data(self):
        u = manufactured("biharmonic")
        s = np.linspace(0, 1, 9)
        np.testing.assert_allclose(u.g(0, (0.0, -1.0), s, 0 * s), u.value(s, 0 * s), atol=0)
        np.testing.assert_allclose(u.g(0, (0.0, -1.0), s, 0 * s), 0.0, atol=1e-15)
        np.testing.assert_allclose(u.g(1, (-1.0, 0.0), 0 * s, s), 0.0, atol=1e-12)
        np.testing.assert_allclose(u.g(2, (1.0, 0.0), 1 + 0 * s, s), -8 * PI**2 * np.sin(2 * PI * s), rtol=1e-12, atol=1e-12)

    def test_anisotropy(self):
        a = AnisotropySpec(np.radians(60), 10.0)
        S = a.matrix
        assert np.allclose(S, S.T) and np.linalg.eigvalsh(S).min() > 0
        v = np.array([np.cos(np.radians(60)), np.sin(np.radians(60))])
        np.testing.assert_allclose(S @ v, 10 * v, rtol=1e-14)
        np.testing.assert_allclose(AnisotropySpec(0.7, 1.0).matrix, np.eye(2), atol=1e-15)
        with pytest.raises(ValueError):
            AnisotropySpec(0.0, 0.5)

    def test_polynomial_derivatives(self):
        u = polynomial_solution({(3, 1): 2.0})
        assert u.deriv(1, 1, 0.5, 2.0) == pytest.approx(2.0 * 3 * 0.25)

    def test_operator_algebra(self):
        L2 = compose(LAPLACE, LAPLACE)
        assert L2 == {(4, 0): 1.0, (2, 2): 2.0, (0, 4): 1.0}
        assert directional((0.0, -1.0)) == {(0, 1): -1.0}


class TestAssembly:
    def test_zero_data_gives_zero(self, space3):
        sys = assemble(space3, solution=polynomial_solution({}))
        assert np.all(sys.b == 0.0)
        assert np.all(sys.solve_reference() == 0.0)

    def test_symmetric_and_definite(self, space3):
        sys = assemble(space3)
        A = sys.A.to_scipy()
        assert abs(A - A.T).max() <= 1e-12 * np.sqrt((A.multiply(A)).sum())
        np.linalg.cholesky(sys.mass.to_dense())
        np.linalg.cholesky(sys.A.to_dense())

    @pytest.mark.parametrize("problem", ["biharmonic", "anisotropic"])
    def test_quadratic_reproduction(self, space3, problem):
        aniso = AnisotropySpec(np.radians(30), 4.0) if problem == "anisotropic" else None
        u = polynomial_solution({(2, 0): 1.0, (0, 2): 1.0}, problem, aniso)
        sys = assemble(space3, problem, solution=u, aniso=aniso)
        c = sys.solve_reference()
        rng = np.random.default_rng(0)
        x, y = rng.uniform(0, 1, (2, 50))
        np.testing.assert_allclose(evaluate(space3, c, x, y), x**2 + y**2, atol=1e-8)

    def test_triharmonic_cubic_reproduction(self):
        space = PuSpace(Cover(2), q=4, p=3)
        u = polynomial_solution({(3, 0): 1.0, (1, 2): -0.5, (0, 1): 2.0}, "triharmonic")
        sys = assemble(space, "triharmonic", solution=u)
        c = sys.solve_reference()
        f = lambda x, y: x**3 - 0.5 * x * y**2 + 2 * y
        assert l2_error(space, c, f) < 1e-8

    def test_trig_solution_converges(self):
        errs = []
        for lvl in (2, 3):
            space = PuSpace(Cover(lvl), p=3)
            sys = assemble(space)
            errs.append(l2_error(space, sys.solve_reference(), sys.solution.value))
        assert errs[1] < 0.5 * errs[0]


class TestPenalties:
    def test_interior_patches_have_none(self, space3):
        params = estimate_penalties(space3, nitsche_form("biharmonic"))
        interior = np.setdiff1d(np.arange(space3.n), space3.cover.boundary_patches)
        assert np.all(params.gamma[interior] == 0.0)
        assert np.all(params.gamma[space3.cover.boundary_patches] > 0.0)

    def test_fallback_scaling(self):
        form = nitsche_form("biharmonic")
        g2 = estimate_penalties(PuSpace(Cover(2)), form, "power").gamma
        g3 = estimate_penalties(PuSpace(Cover(3)), form, "power").gamma
        assert g3.max(axis=0)[1] == pytest.approx(2 * g2.max(axis=0)[1], rel=1e-14)
        assert g3.max(axis=0)[0] == pytest.approx(8 * g2.max(axis=0)[0], rel=1e-14)

    def test_eigen_mode_coercive(self, space3):
        sys = assemble(space3, penalty="eigen")
        np.linalg.cholesky(sys.A.to_dense())


@pytest.fixture(scope="module")
def pair():
    coarse = PuSpace(Cover(2), p=2, boundary_refine=True)
    fine = PuSpace(Cover(3), p=2, boundary_refine=True)
    return coarse, fine, build_prolongation(coarse, fine)


class TestProlongation:
    def test_constants(self, pair):
        coarse, fine, P = pair
        c = local_projection(coarse, lambda x, y: np.ones_like(x))
        assert l2_error(fine, P @ c, lambda x, y: np.ones_like(x)) <= 1e-10

    def test_polynomials(self, pair):
        coarse, fine, P = pair
        f = lambda x, y: 1 + x - 2 * y + 3 * x * y - x**2 + 0.5 * y**2
        c = local_projection(coarse, f)
        assert l2_error(coarse, c, f) <= 1e-10
        assert l2_error(fine, P @ c, f) <= 1e-9

    def test_block_pattern_is_local(self, pair):
        coarse, fine, P = pair
        r = coarse.cover.radius
        rf = fine.cover.radius
        for i, j in P.pattern():
            d = np.abs(fine.cover.centers[i] - coarse.cover.centers[j])
            assert np.all(d < r + rf)

    def test_wrong_levels(self):
        with pytest.raises(ValueError):
            build_prolongation(PuSpace(Cover(1)), PuSpace(Cover(3)))
