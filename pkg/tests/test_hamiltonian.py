import os

import numpy as np
import pytest

from glassland import hamiltonian as ham
from glassland import mixture as mx
from glassland.errors import (DegreeTooHigh, OffManifold, TooLarge,
                              ValidationError)
from glassland.presets import get_preset

CUBIC = get_preset("cubic-pair")


@pytest.fixture(scope="module")
def inst():
    return ham.sample(CUBIC, 60, seed=11)


@pytest.fixture(scope="module")
def selftest_report():
    return ham.covariance_selftest(CUBIC, 30, 10000, seed=42)


def random_tangent(partition, sigma, seed):
    rng = np.random.default_rng(seed)
    t = rng.standard_normal(partition.N)
    for s, sl in enumerate(partition.slices()):
        t[sl] -= (sigma[sl] @ t[sl]) / partition.sizes[s] * sigma[sl]
    return t / np.linalg.norm(t)


def test_partition_layout():
    part = ham.make_partition(get_preset("three-species"), 47)
    assert part.sizes.sum() == 47
    assert np.array_equal(part.offsets, np.concatenate([[0], np.cumsum(part.sizes)]))
    assert np.allclose(part.lam_circ, (part.sizes - 1) / (47 - 3))
    labels = part.labels
    for s, sl in enumerate(part.slices()):
        assert np.all(labels[sl] == s)


def test_sample_deterministic():
    a = ham.sample(CUBIC, 24, seed=3)
    b = ham.sample(CUBIC, 24, seed=3)
    c = ham.sample(CUBIC, 24, seed=4)
    for k in a.tensors:
        assert np.array_equal(a.tensors[k], b.tensors[k])
    assert any(not np.array_equal(a.tensors[k], c.tensors[k]) for k in a.tensors)


def test_sample_tensors_frozen():
    a = ham.sample(CUBIC, 20, seed=0)
    with pytest.raises(ValueError):
        a.tensors[2][0, 0] = 1.0


def test_zero_mixture_is_flat():
    zero = mx.MixtureSpec(r=2, lam=np.array([0.5, 0.5]),
                          coeffs=((2, (0, 0), 0.0),), max_degree=2)
    inst0 = ham.sample(zero, 16, seed=1)
    assert inst0.tensors == {}
    sig = ham.random_state(inst0.partition, 2)
    d = ham.local_data(inst0, sig, want_hessian=True)
    assert d.value == 0.0
    assert np.all(d.egrad == 0.0)
    assert np.all(d.rhess == 0.0)
    assert np.all(ham.g1_overlap(inst0, sig) == 0.0)


def test_degree_and_size_caps():
    with pytest.raises(DegreeTooHigh):
        ham.sample(get_preset("pure4"), 20, seed=0)
    with pytest.raises(TooLarge):
        ham.sample(CUBIC, 401, seed=0)
    with pytest.raises(TooLarge):
        ham.sample(get_preset("symmetric-pair"), 4001, seed=0)
    ham.sample(get_preset("symmetric-pair"), 500, seed=0)


def test_manifold_checks(inst):
    part = inst.partition
    with pytest.raises(OffManifold):
        ham.local_data(inst, 2.0 * np.ones(part.N))
    with pytest.raises(OffManifold):
        ham.check_on_manifold(part, np.zeros(part.N - 1))
    ham.check_on_manifold(part, ham.retract(part, np.ones(part.N)))


def test_covariance_identity():
    # E[H(sigma)H(rho)] = N xi_{lam_N}(R(sigma, rho)) at fixed points
    N = 40
    inst0 = ham.sample(CUBIC, N, seed=7)
    part = inst0.partition
    sig = ham.random_state(part, 1)
    rho = ham.random_state(part, 2)
    spec_N = mx.MixtureSpec(r=2, lam=part.lam_N, coeffs=CUBIC.coeffs,
                            max_degree=CUBIC.max_degree)
    target = N * mx.eval_xi(spec_N, ham.overlap(sig, rho, part), order=0)[0]
    prods = np.empty(400)
    for t in range(prods.shape[0]):
        it = ham.sample(CUBIC, N, seed=(123, t))
        prods[t] = ham.energy(it, sig) * ham.energy(it, rho)
    se = prods.std(ddof=1) / np.sqrt(prods.shape[0])
    assert abs(prods.mean() - target) <= 3 * se


def test_energy_matches_local_data(inst):
    sig = ham.random_state(inst.partition, 5)
    d = ham.local_data(inst, sig)
    assert np.isclose(ham.energy(inst, sig), d.value, rtol=1e-12, atol=0)
    assert d.rhess is None


def test_gradient_taylor_order(inst):
    part = inst.partition
    for k in range(3):
        sig = ham.random_state(part, (11, k))
        d = ham.local_data(inst, sig)
        t = random_tangent(part, sig.sigma, k)
        errs = []
        for h in (1e-3, 1e-4):
            moved = ham.retract(part, sig.sigma + h * t)
            errs.append(abs(ham.energy(inst, moved) - d.value
                            - h * float(d.rgrad @ t)))
        order = np.log10(errs[0] / errs[1])
        assert order >= 1.9


def test_rgrad_tangential_and_curvature(inst):
    part = inst.partition
    sig = ham.random_state(part, 9)
    d = ham.local_data(inst, sig)
    x0 = sig.sigma
    for s, sl in enumerate(part.slices()):
        assert abs(float(d.rgrad[sl] @ x0[sl])) <= 1e-8 * np.linalg.norm(d.rgrad)
        inner = float(x0[sl] @ d.egrad[sl])
        assert abs(d.curvature[s] * part.sizes[s] - inner) <= 1e-13 * max(1.0, abs(inner))
        assert np.isclose(d.radial[s],
                          inner / (np.sqrt(part.sizes[s]) * np.sqrt(part.N)),
                          rtol=1e-12)


def test_hessian_symmetry_and_fd(inst):
    part = inst.partition
    sig = ham.random_state(part, 13)
    d = ham.local_data(inst, sig, want_hessian=True)
    assert np.array_equal(d.rhess, d.rhess.T)
    dim = part.N - part.r
    assert d.rhess.shape == (dim, dim)
    blocks = ham.tangent_basis(part, sig)
    roff = np.concatenate([[0], np.cumsum(part.sizes - 1)])
    rng = np.random.default_rng(100)
    h = 1e-4
    for _ in range(3):
        w = rng.standard_normal(dim)
        w /= np.linalg.norm(w)
        amb = np.zeros(part.N)
        for s, sl in enumerate(part.slices()):
            amb[sl] = blocks[s] @ w[roff[s]:roff[s + 1]]
        plus = ham.energy(inst, ham.retract(part, sig.sigma + h * amb))
        minus = ham.energy(inst, ham.retract(part, sig.sigma - h * amb))
        fd2 = (plus - 2 * d.value + minus) / h ** 2
        quad = float(w @ d.rhess @ w)
        assert abs(fd2 - quad) <= 1e-4 * max(1.0, abs(fd2))


def test_tangent_basis_properties(inst):
    part = inst.partition
    sig = ham.random_state(part, 21)
    blocks = ham.tangent_basis(part, sig)
    for s, sl in enumerate(part.slices()):
        Q = blocks[s]
        n = part.sizes[s]
        assert Q.shape == (n, n - 1)
        assert np.abs(Q.T @ Q - np.eye(n - 1)).max() <= 1e-12
        assert np.abs(Q.T @ sig.sigma[sl]).max() <= 1e-10
        unit = sig.sigma[sl] / np.linalg.norm(sig.sigma[sl])
        proj = np.eye(n) - np.outer(unit, unit)
        assert np.abs(Q @ Q.T - proj).max() <= 1e-10


def test_tangent_basis_at_pole(inst):
    # the pole direction is the first coordinate of each block, so the
    # basis reduces to the remaining standard coordinates
    part = inst.partition
    blocks = ham.tangent_basis(part, ham.north_pole(part))
    for s in range(part.r):
        n = part.sizes[s]
        expect = np.zeros((n, n - 1))
        expect[1:, :] = np.eye(n - 1)
        assert np.array_equal(blocks[s], expect)


def test_overlap_trivials(inst):
    part = inst.partition
    sig = ham.random_state(part, 31).sigma
    assert np.allclose(ham.overlap(sig, sig, part), 1.0, atol=1e-12)
    assert np.allclose(ham.overlap(sig, -sig, part), -1.0, atol=1e-12)
    flipped = sig.copy()
    flipped[part.slices()[1]] *= -1.0
    got = ham.overlap(sig, flipped, part)
    assert np.allclose(got, [1.0, -1.0], atol=1e-12)


def test_g1_overlap_scaling(inst):
    part = inst.partition
    sig = ham.random_state(part, 33)
    raw = ham.overlap(inst.tensors[1], sig, part)
    assert np.allclose(ham.g1_overlap(inst, sig),
                       raw / np.sqrt(part.lam_N), atol=0, rtol=1e-14)


def test_linear_model_critical_stats():
    # a degree-1-only mixture has closed-form critical points, pinning the
    # overlap and radial predictions without any solver in the loop
    lin = mx.MixtureSpec(r=2, lam=np.array([0.3, 0.7]),
                         coeffs=((1, (0,), 1.0), (1, (1,), 1.0)),
                         max_degree=1)
    pred = mx.ideal_stats(lin, np.array([1.0, 1.0]))
    overlaps, radials = [], []
    for t in range(60):
        it = ham.sample(lin, 100, seed=(9, t))
        part = it.partition
        g1 = it.tensors[1]
        sig = np.zeros(100)
        for s, sl in enumerate(part.slices()):
            sig[sl] = np.sqrt(part.sizes[s]) * g1[sl] / np.linalg.norm(g1[sl])
        d = ham.local_data(it, sig)
        assert np.linalg.norm(d.rgrad) <= 1e-10
        overlaps.append(ham.g1_overlap(it, sig))
        radials.append(d.radial)
    assert np.abs(np.mean(overlaps, axis=0) - pred.overlap).max() <= 0.05
    assert np.abs(np.mean(radials, axis=0) - pred.radial).max() <= 0.05


def test_covariance_selftest_passes(selftest_report):
    rep = selftest_report
    assert rep.passed
    assert rep.max_abs_z <= 4.0
    assert rep.trials == 10000
    # the report carries every family, including the degree-1 rows
    assert any(k.startswith("g1_cov") for k in rep.zscores)
    assert any(k.startswith("indep_tang") for k in rep.zscores)


def test_selftest_tangential_variance(selftest_report):
    rep = selftest_report
    for name, emp in rep.empirical.items():
        if name.startswith("tangential_var"):
            assert abs(emp / rep.analytic[name] - 1.0) <= 0.05


def test_selftest_rejects_small_trials():
    with pytest.raises(ValidationError):
        ham.covariance_selftest(CUBIC, 20, 100, seed=0)


def test_scale_bounds():
    # empirical surrogate constants pinned from pilot runs at N=100
    gmax = hmax = 0.0
    for i in range(3):
        it = ham.sample(CUBIC, 100, seed=(77, i))
        for j in range(10):
            sig = ham.random_state(it.partition, (i, j))
            d = ham.local_data(it, sig, want_hessian=True)
            gmax = max(gmax, np.linalg.norm(d.egrad) / 10.0)
            hmax = max(hmax, float(np.abs(np.linalg.eigvalsh(d.rhess)).max()))
    assert gmax <= 4.0
    assert hmax <= 6.0


def test_spectrum_perturbation():
    # sorted-eigenvalue distance grows at most linearly in the step, with
    # the constant pinned from pilot runs
    it = ham.sample(CUBIC, 80, seed=5)
    part = it.partition
    rng = np.random.default_rng(0)
    for trial in range(3):
        sig = ham.random_state(part, (5, trial))
        e0 = np.linalg.eigvalsh(ham.local_data(it, sig, want_hessian=True).rhess)
        for eps in (1e-2, 1e-1):
            pert = rng.standard_normal(part.N)
            moved = ham.retract(part, sig.sigma + eps * np.sqrt(part.N)
                                * pert / np.linalg.norm(pert))
            e1 = np.linalg.eigvalsh(ham.local_data(it, moved,
                                                   want_hessian=True).rhess)
            dist = np.linalg.norm(moved.sigma - sig.sigma) / np.sqrt(part.N)
            assert np.abs(e0 - e1).max() <= 3.0 * dist


def test_instance_round_trip(tmp_path, inst):
    path = tmp_path / "instance.bin"
    ham.save_instance(inst, path)
    back = ham.load_instance(path)
    assert back.N == inst.N
    assert np.array_equal(back.partition.sizes, inst.partition.sizes)
    for k in inst.tensors:
        assert np.array_equal(back.tensors[k], inst.tensors[k])
    sig = ham.random_state(inst.partition, 50)
    assert ham.local_data(back, sig).value == ham.local_data(inst, sig).value


def test_instance_rejects_bad_file(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not an instance")
    with pytest.raises(ValidationError):
        ham.load_instance(path)


def test_state_round_trip(tmp_path, inst):
    sig = ham.random_state(inst.partition, 51)
    path = os.path.join(tmp_path, "state.npy")
    ham.save_state(sig, path)
    assert np.array_equal(ham.load_state(path).sigma, sig.sigma)
