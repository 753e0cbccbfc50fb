"""Update-rule checks against a straight-line scalar reimplementation."""

import numpy as np
import pytest

from ipsdm.errors import NonFiniteGradient, ShapeMismatch
from ipsdm.optim import (
    OptimizerHyperparams,
    OptimizerState,
    adamw_step,
    clip_by_global_norm,
    global_norm,
    init_state,
    lr_at,
)

from oracles import scalar_adamw_trace


def _run_scalar_steps(z0, grads, hyper):
    tensors = {"z": np.array([z0], dtype=np.float64)}
    state = init_state(tensors)
    trace = []
    for g in grads:
        adamw_step(tensors, {"z": np.array([g], dtype=np.float64)}, state, hyper)
        trace.append(float(tensors["z"][0]))
    return trace


def test_first_step_from_zero_with_unit_gradient():
    # m1 = 0.1, v1 = 0.001, bias corrections give m_hat = 1, v_hat = 1,
    # and with z0 = 0 the decay term vanishes: z1 = -lr / (1 + eps)
    hyper = OptimizerHyperparams(variant="paper")
    tensors = {"z": np.zeros(1)}
    state = init_state(tensors)
    adamw_step(tensors, {"z": np.ones(1)}, state, hyper)
    np.testing.assert_allclose(state.m["z"][0], 0.1, rtol=1e-15)
    np.testing.assert_allclose(state.v["z"][0], 0.001, rtol=1e-15)
    np.testing.assert_allclose(tensors["z"][0], -2e-5 / (1.0 + 1e-8), rtol=1e-12)


@pytest.mark.parametrize("variant", ["paper", "decoupled"])
def test_three_step_trace_matches_scalar_oracle(variant):
    grads = [1.0, -1.0, 0.5]
    hyper = OptimizerHyperparams(variant=variant)
    got = _run_scalar_steps(0.3, grads, hyper)
    want, _, _ = scalar_adamw_trace(0.3, grads, variant=variant)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-18)


@pytest.mark.parametrize("variant", ["paper", "decoupled"])
def test_trace_with_nondefault_hyperparams(variant):
    grads = [0.2, 0.9, -1.4, 0.0, 3.0]
    hyper = OptimizerHyperparams(
        learning_rate=1e-3, beta1=0.8, beta2=0.95, epsilon=1e-6,
        weight_decay=0.1, variant=variant,
    )
    got = _run_scalar_steps(-0.7, grads, hyper)
    want, _, _ = scalar_adamw_trace(
        -0.7, grads, lr=1e-3, beta1=0.8, beta2=0.95, eps=1e-6, wd=0.1, variant=variant
    )
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-18)


def test_bias_correction_identity_constant_gradient():
    # With a constant gradient g: m_i = g*(1 - beta1^i) so m_hat == g exactly,
    # and likewise v_hat == g^2, at every step.
    g = 0.37
    _, m_hats, v_hats = scalar_adamw_trace(0.0, [g] * 6)
    np.testing.assert_allclose(m_hats, [g] * 6, rtol=1e-12)
    np.testing.assert_allclose(v_hats, [g * g] * 6, rtol=1e-12)

    tensors = {"z": np.zeros(1)}
    state = init_state(tensors)
    hyper = OptimizerHyperparams()
    for i in range(1, 7):
        adamw_step(tensors, {"z": np.full(1, g)}, state, hyper)
        np.testing.assert_allclose(state.m["z"][0] / (1 - 0.9**i), g, rtol=1e-12)
        np.testing.assert_allclose(state.v["z"][0] / (1 - 0.999**i), g * g, rtol=1e-12)


def test_zero_gradient_identity_decoupled():
    # g == 0 shrinks every parameter by exactly (1 - lr*wd) per step
    hyper = OptimizerHyperparams(learning_rate=1e-2, weight_decay=0.1, variant="decoupled")
    z = np.array([0.5, -2.0, 1e-3])
    tensors = {"z": z.copy()}
    state = init_state(tensors)
    for i in range(1, 4):
        adamw_step(tensors, {"z": np.zeros(3)}, state, hyper)
        np.testing.assert_allclose(
            np.abs(tensors["z"]), np.abs(z) * (1 - 1e-2 * 0.1) ** i, rtol=1e-12
        )


def test_zero_gradient_identity_paper():
    # g == 0 gives m_hat = v_hat = 0, so |dz| = lr*wd*|z|/eps per the printed
    # rule — enormous at the defaults, which is exactly what it prints.
    hyper = OptimizerHyperparams(
        learning_rate=1e-2, weight_decay=0.1, epsilon=1e-4, variant="paper"
    )
    z_prev = np.array([0.5, -2.0])
    tensors = {"z": z_prev.copy()}
    state = init_state(tensors)
    adamw_step(tensors, {"z": np.zeros(2)}, state, hyper)
    dz = tensors["z"] - z_prev
    np.testing.assert_allclose(np.abs(dz), 1e-2 * 0.1 * np.abs(z_prev) / 1e-4, rtol=1e-12)


def test_variants_agree_when_weight_decay_is_zero():
    grads = [0.4, -0.2, 1.0]
    paper = _run_scalar_steps(1.0, grads, OptimizerHyperparams(weight_decay=0.0, variant="paper"))
    dec = _run_scalar_steps(1.0, grads, OptimizerHyperparams(weight_decay=0.0, variant="decoupled"))
    np.testing.assert_allclose(paper, dec, rtol=1e-15)


def test_elementwise_independence_matches_scalar_traces():
    # A tensor step must treat each element independently — cross-check four
    # elements against four separate scalar traces.
    rng = np.random.default_rng(0)
    grad_steps = [rng.normal(size=4) for _ in range(5)]
    z0 = rng.normal(size=4)
    tensors = {"w": z0.copy()}
    state = init_state(tensors)
    hyper = OptimizerHyperparams(variant="decoupled", learning_rate=3e-4)
    for g in grad_steps:
        adamw_step(tensors, {"w": g}, state, hyper)
    for e in range(4):
        want, _, _ = scalar_adamw_trace(
            float(z0[e]), [float(g[e]) for g in grad_steps],
            lr=3e-4, variant="decoupled",
        )
        np.testing.assert_allclose(tensors["w"][e], want[-1], rtol=1e-12)


def test_step_counter_and_multi_tensor_state():
    tensors = {"a": np.ones(2), "b": np.zeros((2, 2))}
    state = init_state(tensors)
    hyper = OptimizerHyperparams()
    grads = {"a": np.ones(2), "b": np.ones((2, 2))}
    adamw_step(tensors, grads, state, hyper)
    adamw_step(tensors, grads, state, hyper)
    assert state.step == 2
    assert set(state.m) == {"a", "b"}


def test_non_finite_gradient_leaves_everything_untouched():
    tensors = {"a": np.ones(3), "b": np.full(2, 2.0)}
    state = init_state(tensors)
    adamw_step(tensors, {"a": np.ones(3), "b": np.ones(2)}, state, OptimizerHyperparams())
    snap_t = {k: v.copy() for k, v in tensors.items()}
    snap_m = {k: v.copy() for k, v in state.m.items()}
    bad = {"a": np.ones(3), "b": np.array([1.0, np.nan])}
    with pytest.raises(NonFiniteGradient) as err:
        adamw_step(tensors, bad, state, OptimizerHyperparams())
    assert err.value.parameter_name == "b"
    assert state.step == 1
    for k in tensors:
        assert (tensors[k] == snap_t[k]).all()
        assert (state.m[k] == snap_m[k]).all()


def test_gradient_key_and_shape_mismatches():
    tensors = {"a": np.ones(3)}
    state = init_state(tensors)
    with pytest.raises(ShapeMismatch):
        adamw_step(tensors, {"a": np.ones(4)}, state, OptimizerHyperparams())
    with pytest.raises(ShapeMismatch):
        adamw_step(tensors, {"b": np.ones(3)}, state, OptimizerHyperparams())


def test_learning_rate_override_argument():
    base = {"z": np.zeros(1)}
    override = {"z": np.zeros(1)}
    s1, s2 = init_state(base), init_state(override)
    hyper = OptimizerHyperparams(learning_rate=1.0, weight_decay=0.0)
    adamw_step(base, {"z": np.ones(1)}, s1, OptimizerHyperparams(learning_rate=0.5, weight_decay=0.0))
    adamw_step(override, {"z": np.ones(1)}, s2, hyper, learning_rate=0.5)
    np.testing.assert_allclose(base["z"], override["z"], rtol=1e-15)


# ---------------------------------------------------------------------------
# schedules and clipping


def test_lr_constant_schedule():
    assert lr_at(0, "constant", 2e-5) == 2e-5
    assert lr_at(10_000, "constant", 2e-5) == 2e-5


def test_lr_linear_decay_endpoints_and_midpoint():
    assert lr_at(0, "linear_decay", 1.0, total_steps=100) == 1.0
    np.testing.assert_allclose(lr_at(50, "linear_decay", 1.0, total_steps=100), 0.5)
    assert lr_at(100, "linear_decay", 1.0, total_steps=100) == 0.0
    assert lr_at(150, "linear_decay", 1.0, total_steps=100) == 0.0  # clamped


def test_lr_at_input_validation():
    with pytest.raises(ValueError):
        lr_at(-1, "constant", 1.0)
    with pytest.raises(ValueError):
        lr_at(0, "linear_decay", 1.0)  # needs total_steps
    with pytest.raises(ValueError):
        lr_at(0, "cosine", 1.0)


def test_global_norm_and_clipping():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert global_norm(grads) == 5.0
    clipped = clip_by_global_norm(grads, 1.0)
    np.testing.assert_allclose(global_norm(clipped), 1.0, rtol=1e-12)
    np.testing.assert_allclose(clipped["a"], [0.6])
    # under the threshold nothing changes
    same = clip_by_global_norm(grads, 10.0)
    assert same is grads


def test_clip_max_norm_wired_into_step():
    hyper_clip = OptimizerHyperparams(variant="decoupled", clip_max_norm=1.0)
    hyper_plain = OptimizerHyperparams(variant="decoupled")
    grads = {"z": np.array([30.0, 40.0])}
    pre_clipped = clip_by_global_norm(grads, 1.0)

    a = {"z": np.ones(2)}
    b = {"z": np.ones(2)}
    adamw_step(a, grads, init_state(a), hyper_clip)
    adamw_step(b, pre_clipped, init_state(b), hyper_plain)
    np.testing.assert_allclose(a["z"], b["z"], rtol=1e-15)


def test_hyperparam_validation():
    for bad in (
        dict(beta1=1.0),
        dict(beta2=-0.1),
        dict(epsilon=0.0),
        dict(learning_rate=-1e-5),
        dict(weight_decay=-0.01),
        dict(variant="nesterov"),
        dict(clip_max_norm=0.0),
    ):
        with pytest.raises(ValueError):
            OptimizerHyperparams(**bad).validate()
    OptimizerHyperparams(learning_rate=0.0).validate()  # zero step size is allowed
