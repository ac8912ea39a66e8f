import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equiburst import InvalidArgument
from equiburst.filters import (
    FilterBank,
    SteerableFilter,
    bank_bounds,
    compute_constants,
    eval_filter,
    field_bounds,
    filter_bounds,
    kernel_offsets,
    read_bank,
    layer_constant,
    sample_filter_grid,
    write_bank,
)
from equiburst.grid import LatentField


def _oracle(f, x):
    """Term-by-term scalar summation of the windowed Fourier series."""
    R = (f.p + 1) * f.h / 2
    rho2 = x[0] ** 2 + x[1] ** 2
    if rho2 >= R * R:
        return 0.0
    w = (1 - rho2 / (R * R)) ** 3
    omega = math.pi / (f.M * f.h)
    total = 0.0
    for m in range(f.M + 1):
        for n in range(-f.M, f.M + 1):
            ph = omega * (m * x[0] + n * x[1])
            total += f.coef[0, m, n + f.M] * math.cos(ph) + f.coef[1, m, n + f.M] * math.sin(ph)
    return w * total


def test_compact_support():
    f = SteerableFilter.random(0, 3, 0.1)
    R = f.radius
    for ang in np.linspace(0, 2 * np.pi, 7):
        assert eval_filter(f, np.array([np.cos(ang), np.sin(ang)]) * 2 * R) == 0.0
    assert eval_filter(f, np.array([R, 0.0])) == 0.0


def test_constant_filter_at_origin():
    f = SteerableFilter.constant(1.0, 3, 0.1)
    assert eval_filter(f, np.zeros(2)) == 1.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_term_by_term_oracle(seed):
    f = SteerableFilter.random(seed, 5, 1 / 32)
    pts = np.random.default_rng(seed).uniform(-f.radius, f.radius, (40, 2))
    got = f(pts)
    for x, g in zip(pts, got):
        want = _oracle(f, x)
        assert abs(g - want) <= 1e-12 * max(1.0, abs(want))


def test_derivatives_match_finite_differences():
    f = SteerableFilter.random(4, 3, 0.1)
    x = np.array([[0.03, -0.05], [-0.1, 0.02], [0.0, 0.0]])
    eps = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = eps
        assert np.allclose(f.gradient(x)[:, d], (f(x + e) - f(x - e)) / (2 * eps), rtol=1e-5, atol=1e-6)
        fd = (f.gradient(x + e) - f.gradient(x - e)) / (2 * eps)
        assert np.allclose(f.hessian(x)[:, :, d], fd, rtol=1e-5, atol=1e-4)


def test_sample_identity_is_grid_evaluation():
    f = SteerableFilter.random(1, 3, 0.25)
    K = sample_filter_grid(f, 0.0, 3)
    offs = kernel_offsets(3, 0.25)
    for i in range(3):
        for j in range(3):
            assert K[i, j] == pytest.approx(_oracle(f, offs[i, j]), rel=1e-12, abs=1e-14)


def test_radial_filter_quarter_turn_invariant():
    f = SteerableFilter.constant(2.0, 5, 0.1)
    assert np.array_equal(sample_filter_grid(f, np.pi / 2, 5), sample_filter_grid(f, 0.0, 5))


@pytest.mark.parametrize("p", [3, 5])
def test_quarter_turn_is_index_rotation(p):
    f = SteerableFilter.random(7, p, 0.1)
    K0 = sample_filter_grid(f, 0.0, p)
    K1 = sample_filter_grid(f, np.pi / 2, p)
    # phi(A^{-1} delta_ij) with A a quarter turn reads delta_{j, p-1-i}
    for i in range(p):
        for j in range(p):
            assert K1[i, j] == K0[j, p - 1 - i]


def test_sample_rejects_mismatched_size():
    f = SteerableFilter.random(0, 3, 0.1)
    with pytest.raises(InvalidArgument):
        sample_filter_grid(f, 0.0, 5)


def test_zero_filter_bounds():
    assert filter_bounds(SteerableFilter.zeros(3, 0.1)) == (0.0, 0.0, 0.0)


def test_constant_filter_sup_bound():
    f = SteerableFilter.constant(1.0, 3, 0.1)
    F, G, H = filter_bounds(f)
    assert F <= 1.0
    assert F == 1.0


def _dense_sup(fn, R, n=512):
    u = np.linspace(-R, R, n)
    X = np.stack(np.meshgrid(u, u, indexing="ij"), axis=-1)
    return fn(X)


@pytest.mark.parametrize("seed", [0, 5])
def test_filter_bounds_dominate_dense_sampling(seed):
    f = SteerableFilter.random(seed, 3, 0.1)
    F, G, H = filter_bounds(f)
    R = f.radius
    vals = _dense_sup(f, R)
    assert np.abs(vals).max() <= F
    step = 2 * R / 511
    gi, gj = np.gradient(vals, step)
    assert np.hypot(gi, gj).max() <= G
    hii, hij = np.gradient(gi, step)
    hji, hjj = np.gradient(gj, step)
    hess = np.stack([np.stack([hii, hij], -1), np.stack([hji, hjj], -1)], -2)
    assert np.linalg.norm(hess, ord=2, axis=(-2, -1)).max() <= H


def test_zero_field_bounds():
    assert field_bounds(LatentField.constant(0.0)) == (0.0, 0.0, 0.0)


def test_single_cosine_bounds():
    k = np.array([3.0, 4.0])
    field = LatentField.cosine([k], [-2.0])
    assert field_bounds(field) == (2.0, 10.0, 50.0)


def test_mixture_bounds_dominate_dense_sampling():
    field = LatentField.gaussian_mixture([[0.1, 0.0], [-0.2, 0.3], [0.0, -0.4]], [1.0, -0.5, 0.7], [0.2, 0.3, 0.25])
    F0, G0, H0 = field_bounds(field)
    u = np.linspace(-1.5, 1.5, 512)
    X = np.stack(np.meshgrid(u, u, indexing="ij"), axis=-1)
    assert np.abs(field(X)).max() <= F0
    assert np.linalg.norm(field.gradient(X), axis=-1).max() <= G0
    assert np.linalg.norm(field.hessian(X), ord=2, axis=(-2, -1)).max() <= H0


def test_constants_c1_example():
    c = compute_constants((1,), (1.0, 0.0, 0.0), [(2.0, 0.0, 0.0)], 32, 32, 3)
    assert c.F_script == 18.0
    assert c.C1 == 0.0


@pytest.mark.parametrize("F1, script", [(1.0, 9.0), (2.0, 18.0)])
def test_constants_c2_example(F1, script):
    c = compute_constants((1,), (1.0, 1.0, 0.0), [(F1, 0.0, 0.0)], 32, 32, 3)
    assert c.F_script == script
    assert c.C2 == pytest.approx(2 * math.pi * script * (64 / 3 + 2), rel=1e-14)


def test_layer_constant_example():
    assert layer_constant((1.0, 1.0, 1.0), (1.0, 1.0, 1.0)) == 4.0


def _c1_oracle(n, p, fb, lb):
    F0, G0, H0 = fb
    N = len(lb)
    script = np.prod([n[i] * p * p * lb[i][0] for i in range(N)])
    total = 0.0
    for i in range(N):
        Fi, Gi, Hi = lb[i]
        inner = sum(lb[m][1] * F0 / lb[m][0] for m in range(i))
        total += Hi * F0 / Fi + 2 * Gi / Fi * inner + 2 * Gi * G0 / Fi + H0
    return 2 * N * script * total


@settings(max_examples=40, deadline=None)
@given(
    N=st.integers(1, 4),
    seed=st.integers(0, 10**6),
)
def test_constants_match_formula(N, seed):
    rng = np.random.default_rng(seed)
    lb = [tuple(rng.uniform(0.1, 3.0, 3)) for _ in range(N)]
    fb = tuple(rng.uniform(0.0, 2.0, 3))
    n = tuple(int(v) for v in rng.integers(1, 5, N))
    c = compute_constants(n, fb, lb, 16, 20, 3)
    assert c.C1 == pytest.approx(_c1_oracle(n, 3, fb, lb), rel=1e-12)
    assert c.C2 == pytest.approx(2 * math.pi * fb[1] * c.F_script * (2 * 20 / 3 + 2 * N), rel=1e-12)
    assert c.C == pytest.approx(fb[0] * lb[0][2] + lb[0][0] * fb[2] + 2 * fb[1] * lb[0][1], rel=1e-12)


def test_constants_reject_zero_f_with_slope():
    with pytest.raises(InvalidArgument):
        compute_constants((1,), (1.0, 1.0, 1.0), [(0.0, 1.0, 0.0)], 8, 8, 3)


def test_bank_shapes():
    lift = FilterBank.random("lifting", 1, 2, 4, 3, 0.1, seed=0)
    mid = FilterBank.random("intermediate", 2, 3, 4, 3, 0.1, seed=1)
    assert lift.kernels(0.0).shape == (1, 1, 2, 3, 3)
    assert mid.kernel_stack().shape == (4, 4, 2, 3, 3, 3)
    with pytest.raises(InvalidArgument):
        FilterBank("intermediate", lift.coef, 3, 0.1, 4)


def test_bank_kernels_match_single_filters():
    bank = FilterBank.random("intermediate", 2, 2, 4, 3, 0.1, seed=3)
    K = bank.kernels(0.7)
    for (g, c, d), f in bank.filters():
        assert np.allclose(K[g, c, d], sample_filter_grid(f, 0.7, 3), rtol=0, atol=1e-14)


def test_bank_bounds_is_max(rng):
    bank = FilterBank.random("lifting", 2, 2, 4, 3, 0.1, seed=9)
    per = np.array([filter_bounds(f) for _, f in bank.filters()])
    assert bank_bounds(bank) == tuple(per.max(axis=0))


def test_bank_round_trip(tmp_path):
    bank = FilterBank.random("intermediate", 1, 2, 4, 3, 0.1, seed=5)
    write_bank(tmp_path / "b.eqt", bank)
    back = read_bank(tmp_path / "b.eqt")
    assert back.layer_kind == "intermediate"
    assert (back.p, back.h, back.t, back.seed) == (3, 0.1, 4, 5)
    assert np.array_equal(back.coef, bank.coef)
