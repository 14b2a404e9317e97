"""Single-path flow: RK4 accuracy, jump updates, left limits, mark law."""

import math

import numpy as np
import pytest

import oracles
from levygrad import (
    BlowUpError,
    CoefficientField,
    FlowState,
    JumpPath,
    PathRealization,
    catalog,
    sample_increments,
    simulate_flow,
    substream,
)
from levygrad.flow import apply_jump, evolve_drift


def _empty_realization(d, horizon=1.0):
    path = JumpPath(horizon=horizon, times=np.array([]), sizes=np.array([]))
    return PathRealization(path, np.zeros((0, d)), np.zeros((0, d)))


def test_zero_drift_is_exact_identity():
    F = catalog("additive_identity", 3)
    x0 = np.array([0.3, -1.0, 2.0])
    v = np.array([1.0, 0.5, 0.0])
    out = simulate_flow(x0, v, F, _empty_realization(3), 1.0)
    assert len(out) == 1
    assert np.array_equal(out[0].X, x0)
    assert np.array_equal(out[0].J, v)


def test_linear_drift_matches_exponential():
    F = catalog("ou_additive", 2)
    x0 = np.array([1.0, -2.0])
    v = np.array([0.5, 1.0])
    out = simulate_flow(x0, v, F, _empty_realization(2), 1.0, substeps_per_unit=100)
    target = oracles.ou_terminal(x0, 1.0)
    assert np.abs(out[-1].X - target).max() <= 1e-8
    assert np.abs(out[-1].J - math.exp(-1.0) * v).max() <= 1e-8


def test_rk4_error_is_fourth_order():
    F = catalog("ou_additive", 1)
    x0 = np.array([1.0])
    target = math.exp(-1.0)
    errs = []
    for substeps in (4, 8, 16):
        st = evolve_drift(FlowState.initial(x0, np.array([1.0])), F, 0.0, 1.0, substeps)
        errs.append(abs(st.X[0] - target))
    r1 = errs[0] / errs[1]
    r2 = errs[1] / errs[2]
    assert 12.0 < r1 < 20.0
    assert 12.0 < r2 < 20.0


def test_apply_jump_hand_values():
    # sigma(1) = sqrt(2) and the directional slope there is 2^{-1/2}; with
    # mark 0.5 the state moves to 1 + sqrt(2)/2 and the derivative to 1 + 1/(2 sqrt 2).
    F = catalog("pythagoras_1d", 1)
    st = FlowState(0.4, np.array([1.0]), np.array([1.0]))
    out = apply_jump(st, F, 0.4, np.array([0.5]))
    assert out.X[0] == pytest.approx(1.0 + math.sqrt(2.0) / 2.0, rel=1e-14)
    assert out.J[0] == pytest.approx(1.0 + 0.5 / math.sqrt(2.0), rel=1e-14)
    assert out.s == 0.4


def test_snapshot_layout_and_left_limit_discipline():
    F = catalog("pythagoras_1d", 1)
    w = 0.7
    path = JumpPath(horizon=1.0, times=np.array([0.4]), sizes=np.array([0.9]))
    real = PathRealization(path, np.array([[w]]), np.array([[0.1]]))
    x0 = np.array([1.0])
    out = simulate_flow(x0, np.array([1.0]), F, real, 1.0)
    assert len(out) == 3  # pre, post, final
    pre, post, final = out
    # No drift: nothing moves before the jump or after it.
    assert np.array_equal(pre.X, x0)
    assert post.X[0] == pre.X[0] + math.sqrt(1.0 + pre.X[0] ** 2) * w
    assert np.array_equal(final.X, post.X)
    assert pre.s == 0.4 and post.s == 0.4 and final.s == 1.0


def test_jump_at_evaluation_time_is_included():
    F = catalog("additive_identity", 1)
    path = JumpPath(horizon=1.0, times=np.array([1.0]), sizes=np.array([0.5]))
    real = PathRealization(path, np.array([[2.0]]), np.array([[0.0]]))
    out = simulate_flow(np.zeros(1), np.ones(1), F, real, 1.0)
    assert len(out) == 3
    assert out[-1].X[0] == 2.0

    out_before = simulate_flow(np.zeros(1), np.ones(1), F, real, 0.999)
    assert len(out_before) == 1
    assert out_before[0].X[0] == 0.0


def test_full_jacobian_consistent_with_directional():
    F = catalog("bounded_multiplicative", 2)
    path = JumpPath(horizon=1.0, times=np.array([0.3, 0.8]), sizes=np.array([0.6, 0.2]))
    rng = substream(31, 9)
    real = sample_increments(path, 2, rng)
    x0 = np.array([0.4, -0.2])
    v = np.array([0.3, -0.7])
    full = simulate_flow(x0, None, F, real, 1.0)[-1]
    direc = simulate_flow(x0, v, F, real, 1.0)[-1]
    assert full.mode == "full" and direc.mode == "directional"
    assert np.abs(full.J @ v - direc.J).max() <= 1e-12
    assert np.abs(full.X - direc.X).max() == 0.0


def test_mark_law_moments_and_reproducibility():
    path = JumpPath(horizon=1.0, times=np.array([0.2, 0.5, 0.9]),
                    sizes=np.array([4.0, 1.0, 0.25]))
    rng = substream(77, 0)
    z_all, aux_all = [], []
    for _ in range(3000):
        real = sample_increments(path, 2, rng)
        z_all.append(real.increments / np.sqrt(path.sizes)[:, None])
        aux_all.append(real.aux_normals)
    z = np.concatenate(z_all).ravel()
    aux = np.concatenate(aux_all).ravel()
    n = z.size
    assert abs(z.mean()) <= 3.0 / math.sqrt(n)
    assert abs(z.var() - 1.0) <= 3.0 * math.sqrt(2.0 / n)
    assert abs(aux.var() - 1.0) <= 3.0 * math.sqrt(2.0 / n)
    assert abs(np.mean(z * aux)) <= 3.0 / math.sqrt(n)

    a = sample_increments(path, 2, substream(5, 1, 2))
    b = sample_increments(path, 2, substream(5, 1, 2))
    assert np.array_equal(a.increments, b.increments)
    assert np.array_equal(a.aux_normals, b.aux_normals)


def test_marks_require_pure_jump_path():
    path = JumpPath(horizon=1.0, times=np.array([0.5]), sizes=np.array([1.0]),
                    compensation_drift=0.01)
    with pytest.raises(ValueError):
        sample_increments(path, 1, substream(1, 1))


def _cubic_field():
    def b(t, x):
        with np.errstate(over="ignore"):
            return x ** 3

    def grad_b(t, x):
        with np.errstate(over="ignore"):
            return (3.0 * x ** 2)[..., None] * np.eye(1)

    def sigma(t, x):
        return np.ones(x.shape + (1,))

    def grad_sigma(t, x):
        return np.zeros(x.shape + (1, 1))

    return CoefficientField(
        dimension=1, b=b, grad_b=grad_b, sigma=sigma,
        grad_sigma=grad_sigma, sigma_inv=sigma,
        drift_is_zero=False, sigma_is_constant=True, name="cubic",
    )


def test_explosive_drift_raises_blow_up():
    F = _cubic_field()
    with pytest.raises(BlowUpError):
        simulate_flow(np.array([3.0]), np.array([1.0]), F, _empty_realization(1), 1.0)


def test_evolve_drift_validation():
    F = catalog("additive_identity", 1)
    st = FlowState.initial(np.zeros(1), np.ones(1))
    with pytest.raises(ValueError):
        evolve_drift(st, F, 1.0, 0.5, 4)
    with pytest.raises(ValueError):
        evolve_drift(st, F, 0.0, 1.0, 0)


def test_simulate_flow_validation():
    F = catalog("additive_identity", 1)
    with pytest.raises(ValueError):
        simulate_flow(np.zeros(1), np.ones(1), F, _empty_realization(1, horizon=0.5), 1.0)
    with pytest.raises(ValueError):
        PathRealization(
            JumpPath(horizon=1.0, times=np.array([0.5]), sizes=np.array([1.0])),
            np.zeros((2, 1)), np.zeros((2, 1)),
        )
    with pytest.raises(ValueError):
        FlowState(0.0, np.zeros(2), np.zeros((2, 2)), "directional")
