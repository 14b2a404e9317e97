"""One path of the state and its derivative flow along a given jump clock.

Between jumps the clock is flat, so the state follows the deterministic ODE
dX/ds = b(s, X) and the derivative flow follows dJ/ds = grad_b(s, X) J; both
are integrated with classical fourth-order Runge-Kutta. At a clock jump of
size delta the driving noise moves by a Gaussian increment dW ~ N(0, delta I)
and the state updates discretely, with every coefficient evaluated at the
left limit (the pre-jump state):

    X <- X- + sigma(s, X-) dW
    Jv <- Jv- + (grad_{Jv-} sigma)(s, X-) dW

Jumps at times exactly equal to the evaluation time t are included (cadlag
convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientField, directional_sigma_derivative
from .subordinator import JumpPath

__all__ = [
    "FlowState",
    "PathRealization",
    "BlowUpError",
    "sample_increments",
    "evolve_drift",
    "apply_jump",
    "simulate_flow",
]


class BlowUpError(RuntimeError):
    """The ODE integration produced a non-finite state."""

    def __init__(self, s: float):
        super().__init__(f"non-finite state at s = {s}")
        self.s = float(s)


@dataclass(frozen=True, eq=False)
class FlowState:
    """(time, X, derivative flow) at one instant along a path.

    mode "directional" carries Jv = grad_v X (a d-vector for one fixed initial
    direction v); mode "full" carries the complete Jacobian J = grad X (d x d).
    """

    s: float
    X: np.ndarray
    J: np.ndarray
    mode: str = "directional"

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        J = np.asarray(self.J, dtype=float)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "J", J)
        d = X.shape[0]
        if self.mode == "directional":
            if J.shape != (d,):
                raise ValueError("directional mode needs J of shape (d,)")
        elif self.mode == "full":
            if J.shape != (d, d):
                raise ValueError("full mode needs J of shape (d, d)")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def initial(cls, x0, v=None) -> "FlowState":
        """State at s = 0: X = x0 with Jv = v, or J = identity when v is None."""
        x0 = np.asarray(x0, dtype=float)
        if v is None:
            return cls(0.0, x0, np.eye(x0.shape[0]), "full")
        return cls(0.0, x0, np.asarray(v, dtype=float), "directional")


@dataclass(frozen=True, eq=False)
class PathRealization:
    """A jump path together with its Gaussian marks.

    increments[i] ~ N(0, sizes[i] * I_d) drives the i-th jump; the atoms
    (times[i], increments[i]) form the random jump measure of the driving
    noise. aux_normals[i] ~ N(0, I_d) supplies the extra coordinate needed to
    realize the joint law of (dW, dW^beta) when a clock piece covers only part
    of a jump's variance interval; it is ignored by clocks with 0/1 slopes.
    """

    path: JumpPath
    increments: np.ndarray
    aux_normals: np.ndarray

    def __post_init__(self) -> None:
        inc = np.asarray(self.increments, dtype=float)
        aux = np.asarray(self.aux_normals, dtype=float)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "aux_normals", aux)
        k = self.path.jump_count
        if inc.ndim != 2 or inc.shape[0] != k:
            raise ValueError("increments must have one row per jump")
        if aux.shape != inc.shape:
            raise ValueError("aux_normals must match increments in shape")


def sample_increments(path: JumpPath, d: int, rng: np.random.Generator) -> PathRealization:
    """Draw the Gaussian marks of a pure-jump path: one N(0, size * I_d) per jump.

    Draw order is fixed (one block of standard normals for the increments,
    then one block for the auxiliary coordinates), so a given stream always
    reproduces the same realization bit for bit.
    """
    if path.compensation_drift != 0.0:
        raise ValueError("Gaussian marks are defined for pure-jump paths (drift 0)")
    if d < 1:
        raise ValueError("dimension must be at least 1")
    k = path.jump_count
    z = rng.standard_normal((k, d))
    aux = rng.standard_normal((k, d))
    increments = z * np.sqrt(path.sizes)[:, None]
    return PathRealization(path, increments, aux)


def evolve_drift(
    state: FlowState,
    field: CoefficientField,
    s0: float,
    s1: float,
    substeps: int,
) -> FlowState:
    """Integrate dX = b dt and dJ = grad_b J dt from s0 to s1 with RK4."""
    if s1 < s0:
        raise ValueError("s1 must not precede s0")
    if s1 == s0:
        return FlowState(s1, state.X, state.J, state.mode)
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    h = (s1 - s0) / substeps
    X = state.X.copy()
    J = state.J.copy()

    def rhs(s, X, J):
        dX = np.asarray(field.b(s, X), dtype=float)
        G = np.asarray(field.grad_b(s, X), dtype=float)
        return dX, G @ J

    s = s0
    for k in range(substeps):
        s = s0 + k * h
        k1x, k1j = rhs(s, X, J)
        k2x, k2j = rhs(s + 0.5 * h, X + 0.5 * h * k1x, J + 0.5 * h * k1j)
        k3x, k3j = rhs(s + 0.5 * h, X + 0.5 * h * k2x, J + 0.5 * h * k2j)
        k4x, k4j = rhs(s + h, X + h * k3x, J + h * k3j)
        X = X + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        J = J + (h / 6.0) * (k1j + 2.0 * k2j + 2.0 * k3j + k4j)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(J))):
            raise BlowUpError(s + h)
    return FlowState(float(s1), X, J, state.mode)


def apply_jump(state: FlowState, field: CoefficientField, s: float, dW) -> FlowState:
    """Discrete update at a clock jump; coefficients use the pre-jump state only."""
    dW = np.asarray(dW, dtype=float)
    X_pre = state.X
    if dW.shape != X_pre.shape:
        raise ValueError("dW must have the state dimension")
    S = np.asarray(field.sigma(s, X_pre), dtype=float)
    X_new = X_pre + S @ dW
    if state.mode == "directional":
        D = directional_sigma_derivative(field, state.J, s, X_pre)
        J_new = state.J + D @ dW
    else:
        gs = np.asarray(field.grad_sigma(s, X_pre), dtype=float)
        # column c of J is an initial direction; update each column in place
        D_cols = np.einsum("ijk,kc->ijc", gs, state.J)
        J_new = state.J + np.einsum("ijc,j->ic", D_cols, dW)
    return FlowState(float(s), X_new, J_new, state.mode)


def _substeps_for(gap: float, substeps_per_unit: int) -> int:
    return max(1, math.ceil(gap * substeps_per_unit))


def simulate_flow(
    x0,
    v,
    field: CoefficientField,
    realization: PathRealization,
    t: float,
    substeps_per_unit: int = 100,
) -> list[FlowState]:
    """Evolve (X, grad X) through every jump with time <= t, then up to t.

    Returns snapshots [pre_1, post_1, ..., pre_m, post_m, final]: the pre- and
    post-jump states at each of the m jumps with time <= t, then the state at
    time t. Pass v = None to carry the full Jacobian instead of one direction.
    Intermediate ODE states are not stored.
    """
    path = realization.path
    if t > path.horizon:
        raise ValueError("t must not exceed the path horizon")
    if substeps_per_unit < 1:
        raise ValueError("substeps_per_unit must be at least 1")
    state = FlowState.initial(x0, v)
    snapshots: list[FlowState] = []
    s_cur = 0.0
    for i in range(path.jump_count):
        s_i = float(path.times[i])
        if s_i > t:
            break
        gap = s_i - s_cur
        if gap > 0:
            state = evolve_drift(state, field, s_cur, s_i, _substeps_for(gap, substeps_per_unit))
        else:
            state = FlowState(s_i, state.X, state.J, state.mode)
        snapshots.append(state)  # pre-jump
        state = apply_jump(state, field, s_i, realization.increments[i])
        snapshots.append(state)  # post-jump
        s_cur = s_i
    gap = t - s_cur
    if gap > 0:
        state = evolve_drift(state, field, s_cur, t, _substeps_for(gap, substeps_per_unit))
    else:
        state = FlowState(float(t), state.X, state.J, state.mode)
    snapshots.append(state)
    return snapshots
