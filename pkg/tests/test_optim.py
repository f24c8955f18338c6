import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tanloss.network import ModelSizes, init_params, zero_grads
from tanloss.optim import RmsPropState, rmsprop_step

mp.mp.dps = 40

SIZES = ModelSizes(input_dim=5, verb_dim=2, state_dim=2, gru1_hidden=3, gru2_hidden=2,
                   head_hidden=3)


def fresh():
    params = init_params(SIZES, seed=0)
    return params, RmsPropState.fresh(params)


def test_zero_gradient_leaves_params_and_decays_cache():
    params, state = fresh()
    state.cache["gru1.W_z"][:] = 1.0
    before = {k: v.copy() for k, v in params.flat().items()}
    rmsprop_step(params, zero_grads(params), state)
    for name, arr in params.flat().items():
        assert np.array_equal(arr, before[name])
    assert np.allclose(state.cache["gru1.W_z"], 0.9)


def test_first_step_magnitude_matches_hand_evaluation():
    # theta=0, g=1: cache becomes 0.1 and the update is lr / (sqrt(0.1) + eps).
    params, state = fresh()
    params.gru1.b_z[:] = 0.0
    grads = zero_grads(params)
    grads["gru1.b_z"][:] = 1.0
    rmsprop_step(params, grads, state)
    expected = float(mp.mpf("1e-4") / (mp.sqrt(mp.mpf("0.1")) + mp.mpf("1e-8")))
    assert abs(abs(params.gru1.b_z[0]) - expected) < 1e-12
    assert state.cache["gru1.b_z"][0] == pytest.approx(0.1)


def test_second_identical_step_is_smaller():
    params, state = fresh()
    grads = zero_grads(params)
    grads["gru1.b_z"][:] = 1.0
    rmsprop_step(params, grads, state)
    first = abs(params.gru1.b_z[0])
    rmsprop_step(params, grads, state)
    second = abs(params.gru1.b_z[0] + first)  # net movement of the second step
    assert second < first
    assert state.cache["gru1.b_z"][0] == pytest.approx(0.19)


@given(st.floats(min_value=1e-6, max_value=1e6, allow_nan=False),
       st.sampled_from([-1.0, 1.0]))
def test_update_opposes_gradient_and_respects_first_step_bound(magnitude, sign):
    params, state = fresh()
    g = sign * magnitude
    grads = zero_grads(params)
    grads["verb_head.b2"][:] = g
    rmsprop_step(params, grads, state)
    delta = params.verb_head.b2[0]
    assert np.sign(delta) == -np.sign(g)
    assert abs(delta) <= state.lr / np.sqrt(1.0 - state.rho)


def test_deterministic():
    results = []
    for _ in range(2):
        params, state = fresh()
        grads = {k: np.full_like(v, 0.3) for k, v in params.flat().items()}
        rmsprop_step(params, grads, state)
        results.append({k: v.copy() for k, v in params.flat().items()})
    for name in results[0]:
        assert np.array_equal(results[0][name], results[1][name])


def test_non_finite_gradient_names_coordinate():
    params, state = fresh()
    grads = zero_grads(params)
    grads["gru2.U_h"][1, 0] = np.nan
    with pytest.raises(ValueError, match=r"gru2\.U_h\[1, 0\]"):
        rmsprop_step(params, grads, state)


def test_shape_mismatch_rejected():
    params, state = fresh()
    grads = zero_grads(params)
    grads["gru1.W_z"] = np.zeros((1, 1))
    with pytest.raises(ValueError, match="shape"):
        rmsprop_step(params, grads, state)


def test_clip_bounds_effective_gradient():
    params, state = fresh()
    grads = zero_grads(params)
    grads["gru1.b_z"][:] = 100.0
    rmsprop_step(params, grads, state, clip=1.0)
    expected = state.lr / (np.sqrt(0.1) + state.eps)
    assert abs(params.gru1.b_z[0]) == pytest.approx(expected)
