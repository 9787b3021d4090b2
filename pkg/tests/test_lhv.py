import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellcav.errors import ValidationError
from bellcav.lhv import (
    ApparatusModel,
    JointDistribution,
    Kernel,
    LhvModel,
    ResponseFunction,
    apparatus_behavior_direct,
    apply_kernel,
    behavior_from_lhv,
    model_from_dict,
    model_to_dict,
    product_kernel_joint,
    random_apparatus_model,
    random_joint,
    random_kernel,
    random_lhv_model,
    random_response,
    reduce_apparatus_model,
    tilded_response,
)
from bellcav.polytope import chsh_value

from oracles import apparatus_behavior_loops, kernel_apply_loops, lhv_behavior_loops, product_kernel_loops

sizes = st.integers(1, 6)
seeds = st.integers(0, 2**32 - 1)


def _identity_apparatus(base: LhvModel) -> ApparatusModel:
    na, nb = base.joint.rho.shape
    return ApparatusModel(
        base.alice_response,
        base.bob_response,
        base.joint,
        (Kernel.identity(na), Kernel.identity(na)),
        (Kernel.identity(nb), Kernel.identity(nb)),
    )


# -- behavior_from_lhv -------------------------------------------------------


def test_deterministic_model_gives_indicator_table():
    model = LhvModel(
        ResponseFunction.deterministic((1, 0)),
        ResponseFunction.deterministic((0, 0)),
        JointDistribution.point_mass(1, 1),
    )
    p = behavior_from_lhv(model).p
    for a, b, x, y in np.ndindex(2, 2, 2, 2):
        assert p[a, b, x, y] == float(a == (1, 0)[x] and b == 0)


def test_constant_half_responses_give_uniform(rng):
    half = ResponseFunction(np.full((2, 2, 3), 0.5))
    model = LhvModel(half, ResponseFunction(np.full((2, 2, 2), 0.5)), random_joint(3, 2, rng))
    np.testing.assert_allclose(behavior_from_lhv(model).p, 0.25, atol=1e-15)


def test_three_by_two_model_matches_loop_oracle(rng):
    for _ in range(20):
        model = random_lhv_model(3, 2, rng)
        ref = lhv_behavior_loops(model.joint.rho.tolist(), model.alice_response.values.tolist(), model.bob_response.values.tolist())
        np.testing.assert_allclose(behavior_from_lhv(model).p, ref, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(sizes, sizes, seeds)
def test_lhv_behaviors_obey_local_bound(na, nb, seed):
    table = behavior_from_lhv(random_lhv_model(na, nb, np.random.default_rng(seed)))
    assert table.signaling_gap() < 1e-12
    assert abs(chsh_value(table)) <= 2 + 1e-9


def test_dimension_mismatch_rejected(rng):
    with pytest.raises(ValidationError, match="does not match"):
        LhvModel(random_response(3, rng), random_response(2, rng), random_joint(2, 2, rng))


# -- kernels -----------------------------------------------------------------


def test_identity_kernel_is_noop(rng):
    dist = rng.dirichlet(np.ones(5))
    np.testing.assert_array_equal(apply_kernel(Kernel.identity(5), dist), dist)


def test_collapse_kernel_gives_point_mass(rng):
    out = apply_kernel(Kernel.collapse(4, 2), rng.dirichlet(np.ones(4)))
    np.testing.assert_allclose(out, [0, 0, 1, 0], atol=1e-15)


def test_random_kernel_matches_loop_oracle(rng):
    for _ in range(20):
        k = random_kernel(4, rng)
        dist = rng.dirichlet(np.ones(4))
        np.testing.assert_allclose(apply_kernel(k, dist), kernel_apply_loops(k.t.tolist(), dist.tolist()), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(sizes, seeds)
def test_apply_kernel_preserves_mass(n, seed):
    r = np.random.default_rng(seed)
    out = apply_kernel(random_kernel(n, r), r.dirichlet(np.ones(n)))
    assert abs(out.sum() - 1) < 1e-12 and out.min() >= 0


def test_kernel_validation():
    with pytest.raises(ValidationError, match="columns must sum"):
        Kernel([[0.5, 0.5], [0.4, 0.5]])
    with pytest.raises(ValidationError):
        apply_kernel(Kernel.identity(3), [0.5, 0.5])


def test_product_kernel_identity_and_independence(rng):
    joint = random_joint(2, 3, rng)
    same = product_kernel_joint(Kernel.identity(2), Kernel.identity(3), joint)
    np.testing.assert_array_equal(same.rho, joint.rho)

    pa, pb = rng.dirichlet(np.ones(2)), rng.dirichlet(np.ones(3))
    ka, kb = random_kernel(2, rng), random_kernel(3, rng)
    out = product_kernel_joint(ka, kb, JointDistribution.product(pa, pb))
    np.testing.assert_allclose(out.rho, np.outer(ka.t @ pa, kb.t @ pb), atol=1e-15)


def test_product_kernel_matches_loop_oracle(rng):
    for _ in range(20):
        joint = random_joint(2, 3, rng)
        ka, kb = random_kernel(2, rng), random_kernel(3, rng)
        ref = product_kernel_loops(ka.t.tolist(), kb.t.tolist(), joint.rho.tolist())
        np.testing.assert_allclose(product_kernel_joint(ka, kb, joint).rho, ref, atol=1e-15)


def test_product_kernel_dimension_mismatch(rng):
    with pytest.raises(ValidationError):
        product_kernel_joint(Kernel.identity(3), Kernel.identity(3), random_joint(2, 3, rng))


# -- tilded responses --------------------------------------------------------


def test_tilded_identity_is_exact(rng):
    f = random_response(4, rng)
    np.testing.assert_array_equal(tilded_response(f, (Kernel.identity(4), Kernel.identity(4))).values, f.values)


def test_tilded_collapse_is_constant(rng):
    f = random_response(3, rng)
    ft = tilded_response(f, (Kernel.collapse(3, 1), Kernel.collapse(3, 1))).values
    np.testing.assert_allclose(ft, np.repeat(f.values[:, :, 1:2], 3, axis=2), atol=1e-15)


def test_tilded_closure_sweep():
    r = np.random.default_rng(7)
    for _ in range(100):
        n = int(r.integers(1, 7))
        ft = tilded_response(random_response(n, r), (random_kernel(n, r), random_kernel(n, r))).values
        assert ft.min() >= 0 and ft.max() <= 1
        assert np.abs(ft.sum(axis=0) - 1).max() < 1e-12


def test_tilded_permutation_of_indicators():
    # Enumerated by hand on a two-state space: f gives outcome 1 only at state 1
    # (setting 0) and only at state 0 (setting 1). The swap kernel moves
    # state i to 1 - i before the response is read, so the folded response
    # reads f at the swapped state.
    f = ResponseFunction([[[1, 0], [0, 1]], [[0, 1], [1, 0]]])
    swap = Kernel.permutation([1, 0])
    ft = tilded_response(f, (swap, Kernel.identity(2))).values
    np.testing.assert_array_equal(ft[:, 0, :], [[0, 1], [1, 0]])
    np.testing.assert_array_equal(ft[:, 1, :], f.values[:, 1, :])


# -- apparatus model and reduction -------------------------------------------


def test_identity_apparatus_equals_base(rng):
    base = random_lhv_model(3, 4, rng)
    app = _identity_apparatus(base)
    np.testing.assert_allclose(apparatus_behavior_direct(app).p, behavior_from_lhv(base).p, atol=1e-15)
    red = reduce_apparatus_model(app)
    np.testing.assert_array_equal(red.alice_response.values, base.alice_response.values)
    np.testing.assert_array_equal(red.bob_response.values, base.bob_response.values)


def test_collapsing_kernels_give_deterministic_strategy():
    r = np.random.default_rng(3)
    # responses that differ by state so the collapse target matters
    fv = np.zeros((2, 2, 3))
    fv[0, :, 0] = 1
    fv[1, :, 1:] = 1
    f = ResponseFunction(fv)
    g = ResponseFunction.deterministic((1, 0), n_states=2)
    app = ApparatusModel(
        f, g, random_joint(3, 2, r),
        (Kernel.collapse(3, 2), Kernel.collapse(3, 0)),
        (Kernel.collapse(2, 1), Kernel.collapse(2, 1)),
    )
    p = apparatus_behavior_direct(app).p
    alice_out = (1, 0)  # state 2 -> outcome 1 under x=0, state 0 -> outcome 0 under x=1
    bob_out = (1, 0)
    for a, b, x, y in np.ndindex(2, 2, 2, 2):
        assert p[a, b, x, y] == pytest.approx(float(a == alice_out[x] and b == bob_out[y]), abs=1e-15)


def test_apparatus_matches_sextuple_loop(rng):
    for _ in range(10):
        app = random_apparatus_model(3, 2, rng)
        ref = apparatus_behavior_loops(
            app.joint.rho.tolist(),
            app.alice_response.values.tolist(),
            app.bob_response.values.tolist(),
            [k.t.tolist() for k in app.alice_kernels],
            [k.t.tolist() for k in app.bob_kernels],
        )
        np.testing.assert_allclose(apparatus_behavior_direct(app).p, ref, atol=1e-14)


def test_reduction_with_permutation_kernels_on_deterministic_base():
    # Base: Alice outputs the hidden state's index for both settings, Bob the
    # complement. Under x=1 Alice's state is swapped first, so her folded
    # response becomes the complement there.
    f = ResponseFunction([[[1, 0], [1, 0]], [[0, 1], [0, 1]]])
    g = ResponseFunction([[[0, 1], [0, 1]], [[1, 0], [1, 0]]])
    joint = JointDistribution([[0.5, 0.0], [0.0, 0.5]])
    app = ApparatusModel(
        f, g, joint,
        (Kernel.identity(2), Kernel.permutation([1, 0])),
        (Kernel.identity(2), Kernel.identity(2)),
    )
    red = reduce_apparatus_model(app)
    np.testing.assert_array_equal(red.alice_response.values[:, 0, :], [[1, 0], [0, 1]])
    np.testing.assert_array_equal(red.alice_response.values[:, 1, :], [[0, 1], [1, 0]])
    np.testing.assert_array_equal(red.bob_response.values, g.values)
    np.testing.assert_array_equal(red.joint.rho, joint.rho)
    # x=0: a = state, b = 1 - state -> always anticorrelated; x=1: correlated.
    p = behavior_from_lhv(red).p
    assert p[0, 1, 0, 0] == p[1, 0, 0, 0] == 0.5
    assert p[0, 0, 1, 0] == p[1, 1, 1, 0] == 0.5
    np.testing.assert_array_equal(p, apparatus_behavior_direct(app).p)


@settings(max_examples=200, deadline=None)
@given(sizes, sizes, seeds)
def test_reduction_equivalence_property(na, nb, seed):
    app = random_apparatus_model(na, nb, np.random.default_rng(seed))
    direct = apparatus_behavior_direct(app)
    folded = behavior_from_lhv(reduce_apparatus_model(app))
    assert direct.max_abs_diff(folded) < 1e-12


def test_apparatus_kernel_shape_checked(rng):
    base = random_lhv_model(2, 2, rng)
    with pytest.raises(ValidationError, match="kernel"):
        ApparatusModel(
            base.alice_response, base.bob_response, base.joint,
            (Kernel.identity(3), Kernel.identity(2)),
            (Kernel.identity(2), Kernel.identity(2)),
        )


# -- validation and serialization --------------------------------------------


@pytest.mark.parametrize(
    "values",
    [
        [[[1.2], [0.5]], [[-0.2], [0.5]]],
        [[[0.6], [0.5]], [[0.6], [0.5]]],
        [[[np.nan], [0.5]], [[0.5], [0.5]]],
    ],
)
def test_response_validation(values):
    with pytest.raises(ValidationError):
        ResponseFunction(values)


def test_joint_validation():
    with pytest.raises(ValidationError):
        JointDistribution([[0.5, 0.6]])
    with pytest.raises(ValidationError):
        JointDistribution([[1.5, -0.5]])


def test_model_round_trip(rng):
    for model in (random_lhv_model(2, 3, rng), random_apparatus_model(3, 1, rng)):
        d = json.loads(json.dumps(model_to_dict(model)))
        back = model_from_dict(d)
        assert type(back) is type(model)
        assert model_to_dict(back) == model_to_dict(model)


def test_model_from_dict_missing_field():
    with pytest.raises(ValidationError, match="joint"):
        model_from_dict({"alice_response": [[[1], [1]], [[0], [0]]], "bob_response": [[[1], [1]], [[0], [0]]]})
