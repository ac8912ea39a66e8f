import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from equiburst import InvalidArgument
from equiburst.conv import (
    EquivNetSpec,
    group_conv,
    lift_conv,
    project_conv,
    read_network,
    relu,
    run_network,
    write_network,
)
from equiburst.filters import FilterBank, SteerableFilter
from equiburst.grid import GroupFeatureMap, Image


def _img(rng, n, c, h=0.1):
    return Image(rng.standard_normal((n, n, c)), h)


def test_lift_zero_image():
    bank = FilterBank.random("lifting", 1, 2, 4, 3, 0.1, seed=0)
    out = lift_conv(Image(np.zeros((6, 6, 1)), 0.1), bank)
    assert out.data.shape == (6, 6, 4, 2)
    assert not out.data.any()


def test_lift_constant_image():
    bank = FilterBank.random("lifting", 1, 1, 4, 3, 0.1, seed=1)
    v = 0.7
    out = lift_conv(Image(np.full((8, 8, 1), v), 0.1), bank)
    K = bank.kernel_stack()[:, 0, 0, 0]
    for k in range(4):
        want = v * K[k].sum()
        assert np.allclose(out.data[1:-1, 1:-1, k, 0], want, rtol=1e-13, atol=1e-15)


def test_lift_matches_oracle(rng):
    bank = FilterBank.random("lifting", 1, 2, 4, 3, 0.1, seed=2)
    img = _img(rng, 6, 1)
    assert oracles.rel_inf(lift_conv(img, bank).data, oracles.lift(img, bank)) <= 1e-12


def test_group_zero_input():
    bank = FilterBank.random("intermediate", 1, 2, 4, 3, 0.1, seed=0)
    out = group_conv(GroupFeatureMap(np.zeros((5, 5, 4, 1)), 0.1), bank)
    assert not out.data.any()


def test_group_trivial_group_is_plain_conv(rng):
    mid = FilterBank.random("intermediate", 2, 3, 1, 3, 0.1, seed=4)
    lift = FilterBank("lifting", mid.coef, 3, 0.1, 1)
    x = _img(rng, 6, 2)
    a = group_conv(GroupFeatureMap(x.data[:, :, None, :], 0.1), mid).data
    b = lift_conv(x, lift).data
    assert np.array_equal(a, b)


def test_group_matches_oracle(rng):
    bank = FilterBank.random("intermediate", 1, 2, 4, 3, 0.1, seed=5)
    x = GroupFeatureMap(rng.standard_normal((6, 6, 4, 1)), 0.1)
    assert oracles.rel_inf(group_conv(x, bank).data, oracles.group(x, bank)) <= 1e-12


def test_project_zero_input():
    bank = FilterBank.random("projection", 2, 1, 4, 3, 0.1, seed=0)
    assert not project_conv(GroupFeatureMap(np.zeros((5, 5, 4, 2)), 0.1), bank).data.any()


def test_project_radial_filters_sum_over_group(rng):
    t = 4
    f = SteerableFilter.constant(1.3, 3, 0.1)
    coef = f.coef[None, None, None]
    bank = FilterBank("projection", coef, 3, 0.1, t)
    single = FilterBank("projection", coef, 3, 0.1, 1)
    slice_ = rng.standard_normal((6, 6, 1, 1))
    x = GroupFeatureMap(np.repeat(slice_, t, axis=2), 0.1)
    one = project_conv(GroupFeatureMap(slice_, 0.1), single).data
    assert np.allclose(project_conv(x, bank).data, t * one, rtol=1e-14, atol=1e-15)


def test_project_matches_oracle(rng):
    bank = FilterBank.random("projection", 2, 1, 2, 3, 0.1, seed=6)
    x = GroupFeatureMap(rng.standard_normal((4, 4, 2, 2)), 0.1)
    assert oracles.rel_inf(project_conv(x, bank).data, oracles.project(x, bank)) <= 1e-12


def test_conv_rejects_wrong_bank(rng):
    lift = FilterBank.random("lifting", 1, 1, 4, 3, 0.1, seed=0)
    with pytest.raises(InvalidArgument):
        group_conv(GroupFeatureMap(np.zeros((4, 4, 4, 1)), 0.1), lift)
    with pytest.raises(InvalidArgument):
        lift_conv(_img(rng, 4, 2), lift)
    mid = FilterBank.random("intermediate", 1, 1, 2, 3, 0.1, seed=0)
    with pytest.raises(InvalidArgument):
        group_conv(GroupFeatureMap(np.zeros((4, 4, 4, 1)), 0.1), mid)


def test_relu_cases(rng):
    neg = Image(-np.abs(rng.standard_normal((3, 3, 1))) - 0.1, 1.0)
    pos = Image(np.abs(rng.standard_normal((3, 3, 1))), 1.0)
    assert not relu(neg).data.any()
    assert np.array_equal(relu(pos).data, pos.data)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_relu_is_1_lipschitz(seed):
    rng = np.random.default_rng(seed)
    a = GroupFeatureMap(rng.standard_normal((3, 3, 2, 1)), 1.0)
    b = GroupFeatureMap(rng.standard_normal((3, 3, 2, 1)), 1.0)
    assert np.abs(relu(a).data - relu(b).data).max() <= np.abs(a.data - b.data).max()


def test_two_layer_zero_filters():
    spec = EquivNetSpec(
        (FilterBank.zeros("lifting", 1, 2, 4, 3, 0.1), FilterBank.zeros("projection", 2, 1, 4, 3, 0.1)),
        ("none", "none"),
    )
    out = run_network(spec, Image(np.ones((6, 6, 1)), 0.1))
    assert not out.output.data.any()


def test_trivial_group_network_is_composed_convolution(rng):
    spec = EquivNetSpec.random(1, 3, 0.1, channels=(1, 2, 2, 1), seed=3)
    spec = EquivNetSpec(spec.banks, ("none", "none", "none"))
    x = _img(rng, 6, 1)
    y = oracles.lift(x, spec.banks[0])
    y = oracles.group(GroupFeatureMap(y, 0.1), spec.banks[1])
    y = oracles.project(GroupFeatureMap(y, 0.1), spec.banks[2])
    assert oracles.rel_inf(run_network(spec, x).output.data, y) <= 1e-12


def test_network_keeps_spatial_size(rng):
    spec = EquivNetSpec.random(4, 3, 1 / 16, seed=0)
    out = run_network(spec, _img(rng, 16, 1, 1 / 16))
    assert out.output.shape == (16, 16, 1)
    assert out.features.data.shape == (16, 16, 4, 2)


def test_network_validation():
    lift = FilterBank.random("lifting", 1, 2, 4, 3, 0.1, seed=0)
    proj = FilterBank.random("projection", 2, 1, 4, 3, 0.1, seed=0)
    bad = FilterBank.random("projection", 3, 1, 4, 3, 0.1, seed=0)
    other_t = FilterBank.random("projection", 2, 1, 8, 3, 0.1, seed=0)
    with pytest.raises(InvalidArgument):
        EquivNetSpec((proj, lift), ("none", "none"))
    with pytest.raises(InvalidArgument):
        EquivNetSpec((lift, bad), ("none", "none"))
    with pytest.raises(InvalidArgument):
        EquivNetSpec((lift, other_t), ("none", "none"))
    with pytest.raises(InvalidArgument):
        EquivNetSpec((lift, proj), ("none", "tanh"))


def test_effective_channels():
    spec = EquivNetSpec.random(4, 3, 0.1, channels=(3, 2, 5, 1), seed=0)
    assert spec.effective_channels() == (3, 8, 20)


def test_quarter_turn_equivariance_is_exact(rng):
    # with t = 4 a quarter turn permutes the grid and the group exactly
    spec = EquivNetSpec.random(4, 3, 0.1, seed=1)
    spec = EquivNetSpec(spec.banks, ("none", "none", "none"))
    x = _img(rng, 9, 1)
    rotated = Image(np.rot90(x.data, 1), 0.1)
    a = run_network(spec, rotated).output.data
    b = np.rot90(run_network(spec, x).output.data, 1)
    assert np.abs(a - b).max() <= 1e-12 * np.abs(b).max()


def test_network_round_trip(tmp_path, rng):
    spec = EquivNetSpec.random(4, 3, 0.1, seed=2)
    write_network(tmp_path / "net", spec)
    back = read_network(tmp_path / "net")
    assert back.activations == spec.activations
    x = _img(rng, 6, 1)
    assert np.array_equal(run_network(back, x).output.data, run_network(spec, x).output.data)
