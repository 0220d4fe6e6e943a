import numpy as np
import pytest

from glassland import dyson as dy
from glassland import mixture as mx
from glassland.errors import DegenerateU, ValidationError, ZeroComponent
from glassland.presets import get_preset

SC = mx.stats(get_preset("one-species-quadratic"))
P3 = mx.stats(get_preset("pure3"))
FB = mx.stats(get_preset("symmetric-pair"))
FC = mx.stats(get_preset("skew-pair"))
TC = mx.stats(get_preset("cubic-pair"))


def test_boundary_semicircle_center():
    u = dy.boundary_u(SC, np.zeros(1))
    assert abs(u[0] - 1j) < 1e-6


def test_boundary_inside_support():
    u = dy.boundary_u(SC, np.array([1.0]))
    assert abs(u[0] - (-1 + 1j * np.sqrt(3)) / 2) < 1e-6


def test_boundary_fig1a_maximizer_is_real():
    u = dy.boundary_u(SC, np.array([4 / np.sqrt(3)]))
    assert u[0].imag == 0.0
    assert abs(u[0].real + 1 / np.sqrt(3)) < 1e-10


def test_boundary_pure3():
    u0 = dy.boundary_u(P3, np.zeros(1))
    assert abs(u0[0] - 1j / np.sqrt(6)) < 1e-6
    ue = dy.boundary_u(P3, np.array([2 * np.sqrt(6)]))
    assert ue[0].imag == 0.0
    assert abs(ue[0].real + 1 / np.sqrt(6)) < 1e-5


def test_solve_dyson_at_i():
    sol = dy.solve_dyson(SC, np.zeros(1), 1j)
    assert abs(sol.m[0] - 1j * (np.sqrt(5) - 1) / 2) < 1e-10
    assert sol.residual <= 1e-12
    assert sol.m[0].imag > 0


def test_solve_dyson_invariants_random():
    rng = np.random.default_rng(21)
    for stats in (FB, TC):
        for _ in range(10):
            x = rng.uniform(-4, 4, size=stats.r)
            z = complex(rng.uniform(-3, 3), rng.uniform(0.05, 2.0))
            sol = dy.solve_dyson(stats, x, z)
            assert sol.residual <= 1e-12
            assert np.all(sol.m.imag > 0)
            # resolvent-type lower bound on |m_s|
            bound = abs(z) + np.abs(x / np.sqrt(stats.lam)).max() \
                + stats.xi_dprime.sum() / stats.lam.min()
            assert np.abs(sol.m).min() > 1.0 / (bound + 1.0)


def test_solve_dyson_validation():
    with pytest.raises(ValidationError):
        dy.solve_dyson(SC, np.zeros(1), 1.0 - 1j)
    with pytest.raises(ValidationError):
        dy.solve_dyson(SC, np.zeros(1), 1.0)
    warm = dy.solve_dyson(SC, np.zeros(1), 1e-7j).m
    sol = dy.solve_dyson(SC, np.zeros(1), 1e-12j, warm=warm)
    assert sol.residual <= 1e-12


def test_warm_start_continuation_agrees():
    z = 0.4 + 1e-6j
    cold = dy.solve_dyson(FB, np.array([1.0, -0.5]), z)
    warm0 = dy.solve_dyson(FB, np.array([1.0, -0.5]), 0.4 + 1e-4j).m
    hot = dy.solve_dyson(FB, np.array([1.0, -0.5]), z, warm=warm0)
    assert np.abs(cold.m - hot.m).max() < 1e-9


def test_stieltjes_transform_consistency():
    x = np.array([0.7, -0.4])
    meas = dy.spectral_measure(FB, x)
    for z in (0.3 + 0.7j, -1.1 + 0.5j):
        direct = dy.solve_dyson(FB, x, z).m
        for s in range(2):
            via_int = np.trapezoid(meas.density_s[s] / (meas.grid - z), meas.grid)
            assert abs(via_int - direct[s]) < 1e-3


def test_hoelder_ratio_bounded():
    rng = np.random.default_rng(5)
    a = rng.uniform(-5, 5, size=(1000, 2))
    b = rng.uniform(-5, 5, size=(1000, 2))
    K = FB.xi_dprime / FB.lam[:, None]
    ua = dy._boundary_batch(a / FB.lam, K, FB.lam, polish=False)
    ub = dy._boundary_batch(b / FB.lam, K, FB.lam, polish=False)
    dist = np.linalg.norm(a - b, axis=1)
    keep = dist > 1e-9
    ratio = np.linalg.norm(ua - ub, axis=1)[keep] / dist[keep] ** (1 / 3)
    assert ratio.max() < 10.0


def test_boundary_jacobian_is_inverse_stability_matrix():
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(40):
        v = rng.uniform(-5, 5, size=2)
        u = dy.boundary_u(FB, v)
        M = np.diag(FB.lam / u ** 2) - FB.xi_dprime.astype(complex)
        if np.abs(np.linalg.eigvals(M)).min() <= 1e-3:
            continue
        h = 1e-4
        J = np.zeros((2, 2), complex)
        for t in range(2):
            e = np.zeros(2)
            e[t] = h
            J[:, t] = (dy.boundary_u(FB, v + e) - dy.boundary_u(FB, v - e)) / (2 * h)
        Minv = np.linalg.inv(M)
        assert np.linalg.norm(J - Minv) / np.linalg.norm(Minv) < 1e-4
        checked += 1
    assert checked >= 20


def test_measure_semicircle():
    meas = dy.spectral_measure(SC, np.zeros(1))
    i0 = np.argmin(np.abs(meas.grid))
    assert abs(meas.density[i0] - 1 / np.pi) < 1e-3
    assert len(meas.support) == 1
    lo, hi = meas.support[0]
    assert abs(lo + 2) < 1e-3 and abs(hi - 2) < 1e-3
    assert np.all(np.abs(meas.mass_s - 1) < 1e-4)


def test_measure_fig1a_shifted():
    x1 = 4 / np.sqrt(3)
    meas = dy.spectral_measure(SC, np.array([x1]))
    lo, hi = meas.support[0]
    assert abs(lo - (-x1 - 2)) < 1e-3
    assert abs(hi - (-x1 + 2)) < 1e-3
    # spectral gap at zero
    assert hi < -0.3


def test_measure_pure3_top_edge_at_zero():
    meas = dy.spectral_measure(P3, np.array([2 * np.sqrt(6)]))
    top = max(hi for _, hi in meas.support)
    assert abs(top) < 1e-3


def test_measure_species_supports_coincide():
    meas = dy.spectral_measure(FB, np.array([0.9, -0.3]))
    step = meas.grid[1] - meas.grid[0]
    ends = []
    for s in range(2):
        above = np.where(meas.density_s[s] > dy.TAU_SUPP)[0]
        ends.append((meas.grid[above[0]], meas.grid[above[-1]]))
    assert abs(ends[0][0] - ends[1][0]) <= step + 1e-12
    assert abs(ends[0][1] - ends[1][1]) <= step + 1e-12


def test_measure_narrow_grid_expands():
    meas = dy.spectral_measure(SC, np.zeros(1), grid_spec=(-1.0, 1.0, 601))
    assert np.all(meas.mass_s >= 1 - 1e-4)
    lo, hi = meas.support[0]
    assert abs(lo + 2) < 2e-2 and abs(hi - 2) < 2e-2


def test_measure_finite_size_weights():
    sizes = np.array([100, 100])
    meas = dy.spectral_measure(TC, np.zeros(2), sizes=sizes)
    assert np.all(np.abs(meas.mass_s - 1) < 1e-4)
    inf = dy.spectral_measure(TC, np.zeros(2))
    # at large equal sizes the finite-size measure is close to the limit
    assert abs(meas.support[0][0] - inf.support[0][0]) < 0.1


def test_psi_oracles():
    assert abs(dy.psi(SC, np.zeros(1)) + 0.5) < 1e-6
    x1 = 4 / np.sqrt(3)
    assert abs(dy.psi(SC, np.array([x1])) - (1 / 6 + 0.5 * np.log(3))) < 1e-6
    assert abs(dy.psi(P3, np.zeros(1)) - (-0.5 + 0.5 * np.log(6))) < 1e-6


def test_psi_modes_agree():
    rng = np.random.default_rng(11)
    for stats in (SC, FB, TC):
        for _ in range(4):
            x = rng.uniform(-2, 2, size=stats.r)
            a = dy.psi(stats, x, mode="closed_form")
            b = dy.psi(stats, x, mode="quadrature")
            assert abs(a - b) < 1e-4


def test_psi_degenerate_u():
    with pytest.raises(DegenerateU):
        dy.psi(SC, np.array([1e9]))
    with pytest.raises(ValidationError):
        dy.psi(SC, np.zeros(1), mode="nope")


def test_stability_matrices_oracles():
    m = dy.stability_matrices(SC, np.array([-1 / np.sqrt(3) + 0j]))
    assert abs(m.M[0, 0] - 2.0) < 1e-12
    m3 = dy.stability_matrices(P3, np.array([1j / np.sqrt(6)]))
    assert abs(m3.Mbar[0, 0]) < 1e-9
    assert abs(m3.Mhat[0, 0] - 12.0) < 1e-9
    mi = dy.stability_matrices(SC, np.array([0.5j]))
    assert abs(mi.Mbar[0, 0] - 3.0) < 1e-12
    with pytest.raises(ZeroComponent):
        dy.stability_matrices(SC, np.array([0.0j]))


def test_feasibility_cases():
    assert dy.feasibility(SC, np.array([-1 / np.sqrt(3) + 0j])).case == "boundary_real"
    assert dy.feasibility(P3, np.array([1j / np.sqrt(6)])).case == "boundary_imag"
    rep = dy.feasibility(SC, np.array([0.5j]))
    assert rep.case == "interior"
    assert abs(rep.min_eig_Mbar - 3.0) < 1e-12
    assert abs(rep.Mbar_times_Im_u[0] - 1.5) < 1e-12
    # sub-solvable sign-pattern point is not attainable
    assert dy.feasibility(P3, np.array([-1 / np.sqrt(3) + 0j])).case == "infeasible"


def test_classify_edges_one_species():
    chi = np.array([1.0])
    assert dy.classify_boundary_point(SC, np.array([2.0]), chi) == "right_edge"
    assert dy.classify_boundary_point(SC, np.array([-2.0]), chi) == "left_edge"
    assert dy.classify_boundary_point(SC, np.array([3.0]), chi) == "nonsingular"
    assert dy.classify_boundary_point(SC, np.array([-3.0]), chi) == "nonsingular"
    assert dy.classify_boundary_point(SC, np.array([2.0]), chi, chi2=chi) == "right_edge"


def test_classify_chi_validation():
    with pytest.raises(ValidationError):
        dy.classify_boundary_point(SC, np.array([2.0]), np.array([-1.0]))
    with pytest.raises(ValidationError):
        dy.classify_boundary_point(FB, np.zeros(2), np.array([0.9, 0.9]))


def _track_real_root(stats, x, w0):
    # follow the real algebraic branch of the z=0 system by plain Newton
    K = stats.xi_dprime / stats.lam[:, None]
    shift = np.sqrt(stats.lam) * x / stats.lam
    w = np.array(w0, dtype=float)
    for _ in range(60):
        F = 1.0 + (shift + K @ w) * w
        if np.abs(F).max() <= 1e-13:
            break
        J = np.diag(shift + K @ w) + w[:, None] * K
        w = w + np.linalg.solve(J, -F)
    return w


def _fig1b_pinch_point():
    def is_real(t):
        u = dy.boundary_u(FB, np.sqrt(FB.lam) * np.array([t, -t]))
        return np.abs(u.imag).max() <= dy.REAL_TOL

    lo, hi = 0.5, 6.0
    assert not is_real(lo) and is_real(hi)
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if is_real(mid):
            hi = mid
        else:
            lo = mid
    # refine on the smallest |eigenvalue| of M along the real branch
    w = dy.boundary_u(FB, np.sqrt(FB.lam) * np.array([hi, -hi])).real

    def min_eig(t):
        nonlocal w
        w = _track_real_root(FB, np.array([t, -t]), w)
        return np.linalg.eigvalsh(np.diag(FB.lam / w ** 2) - FB.xi_dprime)[0]

    t0, t1 = hi, hi + 1e-4
    s0, s1 = min_eig(t0), min_eig(t1)
    for _ in range(40):
        if abs(s1 - s0) < 1e-18:
            break
        t2 = t1 - s1 * (t1 - t0) / (s1 - s0)
        t0, s0 = t1, s1
        t1, s1 = t2, min_eig(t2)
        if abs(s1) < 1e-10:
            break
    return np.array([t1, -t1])


def test_classify_fig1b_pinch_is_cusp():
    xk = _fig1b_pinch_point()
    u = dy.boundary_u(FB, np.sqrt(FB.lam) * xk)
    assert np.abs(u.imag).max() <= dy.REAL_TOL
    M = np.diag(FB.lam / u.real ** 2) - FB.xi_dprime
    assert np.abs(np.linalg.eigvals(M)).min() < 1e-6
    for chi in (np.array([0.5, 0.5]), np.array([0.25, 0.75])):
        assert dy.classify_boundary_point(FB, xk, chi) == "cusp"


def test_species_sizes():
    sizes = mx.species_sizes(np.array([0.3, 0.7]), 10)
    assert sizes.sum() == 10 and tuple(sizes) == (3, 7)
    sizes = mx.species_sizes(np.array([0.5, 0.5]), 11)
    assert sizes.sum() == 11
    with pytest.raises(ValidationError):
        mx.species_sizes(np.array([0.01, 0.99]), 20)


def test_block_matrix_shape_and_shift():
    x = np.array([1.0, -2.0])
    W = dy.sample_block_matrix(FB, x, 100, 7)
    assert W.shape == (98, 98)
    assert np.abs(W - W.T).max() == 0.0
    W0 = dy.sample_block_matrix(FB, np.zeros(2), 100, 7)
    d = np.diag(W0 - W)
    shift = x / np.sqrt(FB.lam)
    assert np.allclose(d[:49], shift[0]) and np.allclose(d[49:], shift[1])
    again = dy.sample_block_matrix(FB, x, 100, 7)
    assert np.array_equal(W, again)
    with pytest.raises(ValidationError):
        dy.sample_block_matrix(FB, x, 15, 0)


def test_block_matrix_semicircle_w2():
    W = dy.sample_block_matrix(SC, np.zeros(1), 1000, 11)
    ev = np.sort(np.linalg.eigvalsh(W))
    meas = dy.spectral_measure(SC, np.zeros(1))
    dg = meas.grid[1] - meas.grid[0]
    cdf = np.cumsum(meas.density) * dg
    cdf /= cdf[-1]
    qs = (np.arange(len(ev)) + 0.5) / len(ev)
    quant = np.interp(qs, cdf, meas.grid)
    w2 = np.sqrt(np.mean((ev - quant) ** 2))
    assert w2 < 0.05
