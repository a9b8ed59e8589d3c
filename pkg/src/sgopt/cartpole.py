"""Chains of spring-damper coupled cart-poles and their optimal-control graphs.

A chain has ``n`` carts on a line, each carrying an inverted pendulum, with
spring/damper links between adjacent carts and force actuators on a subset of
the carts.  The packed state vector is body-major: slots ``4j .. 4j+3`` hold
cart position, cart velocity, pendulum angle and pendulum rate of body ``j``.
Angles are measured so that a positive force on a cart at rest tips its own
pendulum in the positive direction; upright is zero, hanging is pi.

The continuous dynamics per body, with ``s_j`` the net spring-damper force
and ``u_j`` the actuator force (zero on unactuated carts)::

    (m_c + m_p sin^2 th) xdd = u + s + m_p g sin th cos th - m_p L om^2 sin th
    L thdd = g sin th + xdd cos th

Discretization uses a half-step Taylor rule: position rows advance by
``dt * vel + dt^2/2 * acc`` and velocity rows by ``dt * acc``, which keeps
every transition one-hop on the chain.  ``nonlinear_step`` integrates the
true dynamics with a Runge-Kutta step instead and is the reference the
iterative solver scores candidates against.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionMismatch
from .graph import Factor, FactorGraph, Solution, VariableInfo, VariableKey, cart, control, pend
from .linalg import CONSTRAINT, FloatArray, RowWeight


@dataclass(frozen=True)
class CartPoleParams:
    """Physical parameters shared by every body in the chain."""

    cart_mass: float = 1.0
    pendulum_mass: float = 0.2
    length: float = 0.5
    spring: float = 1000.0
    damping: float = 1.0
    gravity: float = 9.81
    dt: float = 0.05

    def __post_init__(self) -> None:
        for name in ("cart_mass", "pendulum_mass", "length", "dt"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("spring", "damping", "gravity"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")


DEFAULT_PARAMS = CartPoleParams()


@dataclass(frozen=True)
class CostWeights:
    """Quadratic stage weights: running cart/pendulum/control terms plus the
    terminal cart/pendulum terms applied at the last step."""

    cart: float = 10.0
    pendulum: float = 10.0
    control: float = 0.01
    terminal_cart: float = 3000.0
    terminal_pendulum: float = 3000.0

    def __post_init__(self) -> None:
        for name in ("cart", "pendulum", "control", "terminal_cart", "terminal_pendulum"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"weight {name} must be positive")


def actuator_layout(n: int, m: int | None = None, rho: float | None = None) -> Tuple[int, ...]:
    """Cart indices carrying an actuator, spread evenly along the chain.

    Exactly one of ``m`` (actuator count) and ``rho`` (actuator density) may
    be given; with neither, every cart is actuated.  The count is clamped to
    ``[1, n]``.
    """
    if n < 1:
        raise ConfigError(f"chain needs at least one cart, got n={n}")
    if m is not None and rho is not None:
        raise ConfigError("give either an actuator count or a density, not both")
    if m is None:
        m = n if rho is None else int(math.floor(rho * n + 0.5))
    m = max(1, min(int(m), n))
    return tuple(int(math.floor(a * n / m)) for a in range(m))


@dataclass(frozen=True, eq=False)
class ProblemConfig:
    """One optimal-control problem: chain size, horizon, parameters, weights,
    actuated cart indices (ascending) and the initial state."""

    n: int
    horizon: int
    params: CartPoleParams
    weights: CostWeights
    actuated: Tuple[int, ...]
    x0: FloatArray

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigError(f"n must be at least 1, got {self.n}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be at least 1, got {self.horizon}")
        if not self.actuated:
            raise ConfigError("at least one cart must be actuated")
        if list(self.actuated) != sorted(set(self.actuated)):
            raise ConfigError(f"actuated indices must be ascending and distinct: {self.actuated}")
        if self.actuated[0] < 0 or self.actuated[-1] >= self.n:
            raise ConfigError(f"actuated indices out of range for n={self.n}: {self.actuated}")
        x0 = np.array(self.x0, dtype=float)
        if x0.shape != (4 * self.n,):
            raise ConfigError(f"x0 must have shape ({4 * self.n},), got {x0.shape}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)

    @property
    def m(self) -> int:
        return len(self.actuated)

    @classmethod
    def create(
        cls,
        n: int,
        horizon: int,
        *,
        m: int | None = None,
        rho: float | None = None,
        actuated: Sequence[int] | None = None,
        params: CartPoleParams | None = None,
        weights: CostWeights | None = None,
        x0: Sequence[float] | None = None,
    ) -> "ProblemConfig":
        if actuated is not None and (m is not None or rho is not None):
            raise ConfigError("explicit actuated indices exclude m and rho")
        layout = tuple(actuated) if actuated is not None else actuator_layout(n, m=m, rho=rho)
        return cls(
            n=n,
            horizon=horizon,
            params=params if params is not None else DEFAULT_PARAMS,
            weights=weights if weights is not None else CostWeights(),
            actuated=layout,
            x0=np.zeros(4 * n) if x0 is None else np.asarray(x0, dtype=float),
        )


def upright_state(n: int, tilt: float = 0.0) -> FloatArray:
    """All carts at rest at the origin, pendulums tilted ``tilt`` radians."""
    state = np.zeros(4 * n)
    state[2::4] = tilt
    return state


def hanging_state(n: int) -> FloatArray:
    state = np.zeros(4 * n)
    state[2::4] = math.pi
    return state


# ---------------------------------------------------------------------------
# Continuous dynamics
# ---------------------------------------------------------------------------


def _expand_controls(controls: Sequence[float], config: ProblemConfig) -> FloatArray:
    u = np.zeros(config.n)
    ctrl = np.asarray(controls, dtype=float)
    if ctrl.shape != (config.m,):
        raise DimensionMismatch(f"expected {config.m} controls, got shape {ctrl.shape}")
    u[list(config.actuated)] = ctrl
    return u


def chain_accelerations(
    state: FloatArray, controls: Sequence[float], config: ProblemConfig
) -> Tuple[FloatArray, FloatArray]:
    """Cart and pendulum accelerations for the whole chain at one instant."""
    p = config.params
    x, v = state[0::4], state[1::4]
    th, om = state[2::4], state[3::4]
    u = _expand_controls(controls, config)
    s = np.zeros(config.n)
    if config.n > 1:
        pull = p.spring * (x[1:] - x[:-1]) + p.damping * (v[1:] - v[:-1])
        s[:-1] += pull
        s[1:] -= pull
    sin, cos = np.sin(th), np.cos(th)
    denom = p.cart_mass + p.pendulum_mass * sin**2
    num = u + s + p.pendulum_mass * (p.gravity * sin * cos - p.length * om**2 * sin)
    xddot = num / denom
    thddot = (p.gravity * sin + xddot * cos) / p.length
    return xddot, thddot


def _state_derivative(
    state: FloatArray, controls: Sequence[float], config: ProblemConfig
) -> FloatArray:
    xddot, thddot = chain_accelerations(state, controls, config)
    d = np.empty_like(state)
    d[0::4] = state[1::4]
    d[1::4] = xddot
    d[2::4] = state[3::4]
    d[3::4] = thddot
    return d


def stiff_substeps(params: CartPoleParams) -> int:
    """Internal Runge-Kutta substeps needed to advance one dt.

    The spring chain oscillates at up to 2*sqrt(k/m_c) regardless of length,
    the pendulums at sqrt(g(m_c+m_p)/(m_c L)).  One explicit stage per 0.8
    radians of the fastest mode keeps the integration stable and accurate;
    soft problems resolve to a single step.
    """
    p = params
    omega = 2.0 * np.sqrt(p.spring / p.cart_mass) + np.sqrt(
        p.gravity * (p.cart_mass + p.pendulum_mass) / (p.cart_mass * p.length)
    )
    return max(1, int(np.ceil(omega * p.dt / 0.8)))


def _rk4_substep(
    state: FloatArray, controls: Sequence[float], config: ProblemConfig, h: float
) -> FloatArray:
    k1 = _state_derivative(state, controls, config)
    k2 = _state_derivative(state + 0.5 * h * k1, controls, config)
    k3 = _state_derivative(state + 0.5 * h * k2, controls, config)
    k4 = _state_derivative(state + h * k3, controls, config)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def nonlinear_step(
    state: FloatArray, controls: Sequence[float], config: ProblemConfig
) -> FloatArray:
    """One zero-order-hold dt step of the true chain dynamics.

    Integrates with fourth-order Runge-Kutta, substepping when the spring
    coupling is too stiff for a single explicit stage at dt.
    """
    sub = stiff_substeps(config.params)
    h = config.params.dt / sub
    out = np.asarray(state, dtype=float)
    for _ in range(sub):
        out = _rk4_substep(out, controls, config, h)
    return out


def simulate(
    x0: FloatArray,
    controls: FloatArray,
    config: ProblemConfig,
    *,
    dynamics: "LocalDynamics | Sequence[Sequence[LocalDynamics]] | None" = None,
) -> FloatArray:
    """Roll the dynamics for ``horizon`` steps; returns (horizon, 4n).

    Default is the true nonlinear model.  Passing block dynamics rolls the
    linear block state-transition instead (per step when a sequence).
    """
    t_len = config.horizon
    ctrl = np.asarray(controls, dtype=float).reshape(max(t_len - 1, 0), config.m)
    states = np.zeros((t_len, 4 * config.n))
    states[0] = x0
    if dynamics is None:
        for t in range(t_len - 1):
            states[t + 1] = nonlinear_step(states[t], ctrl[t], config)
        return states
    steps = _resolve_dynamics(config, dynamics)
    for t in range(t_len - 1):
        a_mat, b_mat = dense_step_matrices(config, steps[t])
        states[t + 1] = a_mat @ states[t] + b_mat @ ctrl[t]
    return states


def _continuous_jacobian(
    state: FloatArray, controls: Sequence[float], config: ProblemConfig
) -> Tuple[FloatArray, FloatArray]:
    """Exact Jacobians of the state derivative w.r.t. state and controls."""
    p = config.params
    n = config.n
    th, om = state[2::4], state[3::4]
    u = _expand_controls(controls, config)
    x, v = state[0::4], state[1::4]
    s = np.zeros(n)
    if n > 1:
        pull = p.spring * (x[1:] - x[:-1]) + p.damping * (v[1:] - v[:-1])
        s[:-1] += pull
        s[1:] -= pull
    sin, cos = np.sin(th), np.cos(th)
    denom = p.cart_mass + p.pendulum_mass * sin**2
    num = u + s + p.pendulum_mass * (p.gravity * sin * cos - p.length * om**2 * sin)
    xddot = num / denom

    deg = np.zeros(n)
    if n > 1:
        deg[:] = 2.0
        deg[0] = deg[-1] = 1.0
    dn_dth = p.pendulum_mass * (p.gravity * np.cos(2.0 * th) - p.length * om**2 * cos)
    dd_dth = p.pendulum_mass * np.sin(2.0 * th)
    da_dth = (dn_dth * denom - num * dd_dth) / denom**2
    da_dom = -2.0 * p.pendulum_mass * p.length * om * sin / denom

    idx = np.arange(n)
    jac = np.zeros((4 * n, 4 * n))
    jac[4 * idx, 4 * idx + 1] = 1.0
    jac[4 * idx + 2, 4 * idx + 3] = 1.0
    acc = 4 * idx + 1
    jac[acc, 4 * idx] = -deg * p.spring / denom
    jac[acc, 4 * idx + 1] = -deg * p.damping / denom
    jac[acc, 4 * idx + 2] = da_dth
    jac[acc, 4 * idx + 3] = da_dom
    if n > 1:
        left, right = idx[:-1], idx[1:]
        jac[4 * left + 1, 4 * right] = p.spring / denom[left]
        jac[4 * left + 1, 4 * right + 1] = p.damping / denom[left]
        jac[4 * right + 1, 4 * left] = p.spring / denom[right]
        jac[4 * right + 1, 4 * left + 1] = p.damping / denom[right]
    jac[4 * idx + 3, :] = jac[acc, :] * (cos / p.length)[:, None]
    jac[4 * idx + 3, 4 * idx + 2] += (p.gravity * cos - xddot * sin) / p.length

    gmat = np.zeros((4 * n, config.m))
    for a, body in enumerate(config.actuated):
        gmat[4 * body + 1, a] = 1.0 / denom[body]
        gmat[4 * body + 3, a] = cos[body] / (p.length * denom[body])
    return jac, gmat


def _substep_jacobian(
    state: FloatArray, controls: Sequence[float], config: ProblemConfig, h: float
) -> Tuple[FloatArray, FloatArray]:
    eye = np.eye(4 * config.n)
    y1 = state
    k1 = _state_derivative(y1, controls, config)
    y2 = y1 + 0.5 * h * k1
    k2 = _state_derivative(y2, controls, config)
    y3 = y1 + 0.5 * h * k2
    k3 = _state_derivative(y3, controls, config)
    y4 = y1 + h * k3
    j1, g1 = _continuous_jacobian(y1, controls, config)
    j2, g2 = _continuous_jacobian(y2, controls, config)
    j3, g3 = _continuous_jacobian(y3, controls, config)
    j4, g4 = _continuous_jacobian(y4, controls, config)
    a1, b1 = j1, g1
    a2 = j2 @ (eye + 0.5 * h * a1)
    b2 = j2 @ (0.5 * h * b1) + g2
    a3 = j3 @ (eye + 0.5 * h * a2)
    b3 = j3 @ (0.5 * h * b2) + g3
    a4 = j4 @ (eye + h * a3)
    b4 = j4 @ (h * b3) + g4
    a_step = eye + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    b_step = (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return a_step, b_step


def step_jacobian(
    state: FloatArray, controls: Sequence[float], config: ProblemConfig
) -> Tuple[FloatArray, FloatArray]:
    """Exact Jacobians of ``nonlinear_step`` w.r.t. state and controls.

    Differentiates the Runge-Kutta stages with the chain rule, composing
    across substeps, so the result matches a finite-difference probe of
    ``nonlinear_step`` to rounding.
    """
    sub = stiff_substeps(config.params)
    h = config.params.dt / sub
    y = np.asarray(state, dtype=float)
    a_step = np.eye(4 * config.n)
    b_step = np.zeros((4 * config.n, config.m))
    for _ in range(sub):
        a_sub, b_sub = _substep_jacobian(y, controls, config, h)
        a_step = a_sub @ a_step
        b_step = a_sub @ b_step + b_sub
        y = _rk4_substep(y, controls, config, h)
    return a_step, b_step


# ---------------------------------------------------------------------------
# Per-body transition blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LocalDynamics:
    """Discrete one-step transition blocks of a single body.

    Self blocks depend on the body's chain degree; ``cart_self`` and
    ``pend_from_own_cart`` fold that in, so the stored ``cart_from_cart`` is
    degree-free.  ``pend_from_cart`` overrides the folded pendulum block when
    the linearization point breaks the upright symmetry.  The neighbor
    pendulum block is reported for completeness but the instantaneous
    accelerations do not depend on neighbor angles, so transitions never
    use it.
    """

    cart_from_cart: FloatArray
    cart_from_nb_cart: FloatArray
    cart_from_pend: FloatArray
    cart_from_nb_pend: FloatArray
    pend_from_pend: FloatArray
    pend_from_nb_cart: FloatArray
    cart_from_control: FloatArray
    pend_from_control: FloatArray
    pend_from_cart: FloatArray | None = None

    def cart_self(self, degree: int) -> FloatArray:
        return self.cart_from_cart - degree * self.cart_from_nb_cart

    def pend_from_own_cart(self, degree: int) -> FloatArray:
        if self.pend_from_cart is not None:
            return self.pend_from_cart
        return -degree * self.pend_from_nb_cart


def _kinematic_pair(dt: float) -> FloatArray:
    return np.array([[1.0, dt], [0.0, 1.0]])


def local_linear_dynamics(params: CartPoleParams) -> LocalDynamics:
    """Closed-form transition blocks at the upright equilibrium.

    Written out directly from the linearized model rather than through
    ``linearize_about`` so the two construction routes check each other.
    """
    mc, mp = params.cart_mass, params.pendulum_mass
    length, grav = params.length, params.gravity
    k, c, dt = params.spring, params.damping, params.dt
    half = 0.5 * dt * dt
    cart_nb = np.array([[half * k / mc, half * c / mc], [dt * k / mc, dt * c / mc]])
    cart_pend = np.array([[half * mp * grav / mc, 0.0], [dt * mp * grav / mc, 0.0]])
    lam = grav * (mc + mp) / (mc * length)
    pend_pend = np.array([[1.0 + half * lam, dt], [dt * lam, 1.0]])
    pend_nb = np.array(
        [[half * k / (mc * length), half * c / (mc * length)],
         [dt * k / (mc * length), dt * c / (mc * length)]]
    )
    return LocalDynamics(
        cart_from_cart=_kinematic_pair(dt),
        cart_from_nb_cart=cart_nb,
        cart_from_pend=cart_pend,
        cart_from_nb_pend=cart_pend.copy(),
        pend_from_pend=pend_pend,
        pend_from_nb_cart=pend_nb,
        cart_from_control=np.array([[half / mc], [dt / mc]]),
        pend_from_control=np.array([[half / (mc * length)], [dt / (mc * length)]]),
    )


def _blocks_from_step_jacobian(
    a_step: FloatArray, b_step: FloatArray, config: ProblemConfig
) -> List[LocalDynamics]:
    """Cut per-body one-hop blocks out of a full step Jacobian.

    The one-step map couples bodies two or more hops apart through the
    intermediate integration stages; those entries fall outside the one-hop
    stencil and are dropped.  Self blocks are kept exact (``cart_from_cart``
    re-folds the degree, ``pend_from_cart`` is stored directly); the shared
    neighbor block averages the left/right couplings, which coincide whenever
    the two neighbors sit at the same operating point.
    """
    n = config.n
    column = {body: a for a, body in enumerate(config.actuated)}
    out: List[LocalDynamics] = []
    for j in range(n):
        cart = slice(4 * j, 4 * j + 2)
        pend = slice(4 * j + 2, 4 * j + 4)
        nbs = [i for i in (j - 1, j + 1) if 0 <= i < n]
        degree = len(nbs)
        cart_nb = np.zeros((2, 2))
        pend_nb = np.zeros((2, 2))
        cart_nb_pend = np.zeros((2, 2))
        for i in nbs:
            cart_nb += a_step[cart, 4 * i : 4 * i + 2] / degree
            pend_nb += a_step[pend, 4 * i : 4 * i + 2] / degree
            cart_nb_pend += a_step[cart, 4 * i + 2 : 4 * i + 4] / degree
        if j in column:
            col = slice(column[j], column[j] + 1)
            cart_control = b_step[cart, col].copy()
            pend_control = b_step[pend, col].copy()
        else:
            cart_control = np.zeros((2, 1))
            pend_control = np.zeros((2, 1))
        out.append(
            LocalDynamics(
                cart_from_cart=a_step[cart, cart] + degree * cart_nb,
                cart_from_nb_cart=cart_nb,
                cart_from_pend=a_step[cart, pend].copy(),
                cart_from_nb_pend=cart_nb_pend,
                pend_from_pend=a_step[pend, pend].copy(),
                pend_from_nb_cart=pend_nb,
                cart_from_control=cart_control,
                pend_from_control=pend_control,
                pend_from_cart=a_step[pend, cart].copy(),
            )
        )
    return out


def linearize_about(
    states: FloatArray, controls: FloatArray, config: ProblemConfig
) -> List[List[LocalDynamics]]:
    """Transition blocks along a trajectory: entry ``[t][j]`` holds the
    one-hop blocks of the step Jacobian from ``t`` to ``t+1`` at body ``j``."""
    t_len = config.horizon
    states = np.asarray(states, dtype=float).reshape(t_len, 4 * config.n)
    ctrl = np.asarray(controls, dtype=float).reshape(max(t_len - 1, 0), config.m)
    out: List[List[LocalDynamics]] = []
    for t in range(t_len - 1):
        a_step, b_step = step_jacobian(states[t], ctrl[t], config)
        out.append(_blocks_from_step_jacobian(a_step, b_step, config))
    return out


def dense_step_matrices(
    config: ProblemConfig,
    dynamics: LocalDynamics | Sequence[LocalDynamics] | None = None,
) -> Tuple[FloatArray, FloatArray]:
    """Assemble the full (4n, 4n) transition and (4n, m) input matrices from
    per-body blocks.  ``dynamics`` may be one shared block set or one per
    body; the default is the upright linearization."""
    n = config.n
    if dynamics is None:
        dynamics = local_linear_dynamics(config.params)
    per_body = [dynamics] * n if isinstance(dynamics, LocalDynamics) else list(dynamics)
    if len(per_body) != n:
        raise DimensionMismatch(f"expected {n} block sets, got {len(per_body)}")
    a_mat = np.zeros((4 * n, 4 * n))
    b_mat = np.zeros((4 * n, config.m))
    for j in range(n):
        d = per_body[j]
        degree = (1 if j > 0 else 0) + (1 if j < n - 1 else 0)
        a_mat[4 * j : 4 * j + 2, 4 * j : 4 * j + 2] = d.cart_self(degree)
        a_mat[4 * j : 4 * j + 2, 4 * j + 2 : 4 * j + 4] = d.cart_from_pend
        a_mat[4 * j + 2 : 4 * j + 4, 4 * j : 4 * j + 2] = d.pend_from_own_cart(degree)
        a_mat[4 * j + 2 : 4 * j + 4, 4 * j + 2 : 4 * j + 4] = d.pend_from_pend
        for i in (j - 1, j + 1):
            if 0 <= i < n:
                a_mat[4 * j : 4 * j + 2, 4 * i : 4 * i + 2] = d.cart_from_nb_cart
                a_mat[4 * j + 2 : 4 * j + 4, 4 * i : 4 * i + 2] = d.pend_from_nb_cart
    for a, body in enumerate(config.actuated):
        d = per_body[body]
        b_mat[4 * body : 4 * body + 2, a : a + 1] = d.cart_from_control
        b_mat[4 * body + 2 : 4 * body + 4, a : a + 1] = d.pend_from_control
    return a_mat, b_mat


# ---------------------------------------------------------------------------
# Graph construction
# ---------------------------------------------------------------------------


def _resolve_dynamics(
    config: ProblemConfig,
    dynamics: LocalDynamics | Sequence[Sequence[LocalDynamics]] | None,
) -> List[List[LocalDynamics]]:
    steps = max(config.horizon - 1, 0)
    if dynamics is None:
        dynamics = local_linear_dynamics(config.params)
    if isinstance(dynamics, LocalDynamics):
        row = [dynamics] * config.n
        return [row] * steps
    per_step = [list(row) for row in dynamics]
    if len(per_step) != steps or any(len(row) != config.n for row in per_step):
        raise DimensionMismatch(
            f"dynamics must be {steps} steps of {config.n} bodies"
        )
    return per_step


def build_ocp_graph(
    config: ProblemConfig,
    *,
    dynamics: LocalDynamics | Sequence[Sequence[LocalDynamics]] | None = None,
    cost_reference: Tuple[FloatArray, FloatArray] | None = None,
    constraint_rhs: FloatArray | None = None,
    damping: float = 0.0,
    prior_state: FloatArray | None = None,
) -> FactorGraph:
    """Encode the finite-horizon problem as a constrained factor graph.

    Soft factors carry the stage costs; hard factors carry the transition
    constraints between consecutive steps and the initial-state prior.
    Factors are inserted backward in time: each step's costs, then the
    constraints arriving from the previous step, with the prior last.

    The optional pieces serve the iterative solver, whose variables are
    deviations from a reference trajectory: ``cost_reference = (states,
    controls)`` shifts the cost rows so the absolute trajectory is penalized,
    ``constraint_rhs`` holds per-step transition defects (horizon-1, 4n),
    ``damping`` adds a zero-pull soft factor of that weight on every
    variable, and ``prior_state`` overrides the pinned initial state.
    """
    n, t_len = config.n, config.horizon
    w = config.weights
    per_step = _resolve_dynamics(config, dynamics)
    ref_states: FloatArray | None = None
    ref_controls: FloatArray | None = None
    if cost_reference is not None:
        ref_states = np.asarray(cost_reference[0], dtype=float).reshape(t_len, 4 * n)
        ref_controls = np.asarray(cost_reference[1], dtype=float).reshape(
            max(t_len - 1, 0), config.m
        )
    defects: FloatArray | None = None
    if constraint_rhs is not None:
        defects = np.asarray(constraint_rhs, dtype=float).reshape(
            max(t_len - 1, 0), 4 * n
        )

    graph = FactorGraph()
    for t in range(t_len):
        for j in range(n):
            graph.add_variable(VariableInfo(cart(j, t), 2))
            graph.add_variable(VariableInfo(pend(j, t), 2))
    for t in range(t_len - 1):
        for b in config.actuated:
            graph.add_variable(VariableInfo(control(b, t), 1))

    eye2 = np.eye(2)
    one = np.array([[1.0]])
    actuated = set(config.actuated)

    def state_cost(key: VariableKey, weight: float, ref: FloatArray | None) -> None:
        rhs = np.zeros(2) if ref is None else -ref
        graph.add_factor(Factor([key], [eye2], rhs, RowWeight.finite(weight)))

    for t in range(t_len - 1, -1, -1):
        w_cart = w.terminal_cart if t == t_len - 1 else w.cart
        w_pend = w.terminal_pendulum if t == t_len - 1 else w.pendulum
        for j in range(n):
            ref = None if ref_states is None else ref_states[t, 4 * j + 2 : 4 * j + 4]
            state_cost(pend(j, t), w_pend, ref)
        for j in range(n):
            ref = None if ref_states is None else ref_states[t, 4 * j : 4 * j + 2]
            state_cost(cart(j, t), w_cart, ref)
        if t == 0:
            continue
        for a, b in enumerate(config.actuated):
            rhs = np.zeros(1) if ref_controls is None else -ref_controls[t - 1, a : a + 1]
            graph.add_factor(Factor([control(b, t - 1)], [one], rhs, RowWeight.finite(w.control)))
        dyn = per_step[t - 1]
        step_defect = None if defects is None else defects[t - 1]
        for j in range(n):
            d = dyn[j]
            degree = (1 if j > 0 else 0) + (1 if j < n - 1 else 0)
            keys = [pend(j, t), pend(j, t - 1), cart(j, t - 1)]
            blocks = [eye2, -d.pend_from_pend, -d.pend_from_own_cart(degree)]
            for i in (j - 1, j + 1):
                if 0 <= i < n and np.any(d.pend_from_nb_cart):
                    keys.append(cart(i, t - 1))
                    blocks.append(-d.pend_from_nb_cart)
            if j in actuated:
                keys.append(control(j, t - 1))
                blocks.append(-d.pend_from_control)
            rhs = np.zeros(2) if step_defect is None else step_defect[4 * j + 2 : 4 * j + 4]
            graph.add_factor(Factor(keys, blocks, rhs, CONSTRAINT))
        for j in range(n):
            d = dyn[j]
            degree = (1 if j > 0 else 0) + (1 if j < n - 1 else 0)
            keys = [cart(j, t), cart(j, t - 1), pend(j, t - 1)]
            blocks = [eye2, -d.cart_self(degree), -d.cart_from_pend]
            for i in (j - 1, j + 1):
                if 0 <= i < n and np.any(d.cart_from_nb_cart):
                    keys.append(cart(i, t - 1))
                    blocks.append(-d.cart_from_nb_cart)
            if j in actuated:
                keys.append(control(j, t - 1))
                blocks.append(-d.cart_from_control)
            rhs = np.zeros(2) if step_defect is None else step_defect[4 * j : 4 * j + 2]
            graph.add_factor(Factor(keys, blocks, rhs, CONSTRAINT))

    pinned = config.x0 if prior_state is None else np.asarray(prior_state, dtype=float)
    if pinned.shape != (4 * n,):
        raise DimensionMismatch(f"prior state must have shape ({4 * n},)")
    for j in range(n):
        graph.add_factor(
            Factor([pend(j, 0)], [eye2], pinned[4 * j + 2 : 4 * j + 4], CONSTRAINT)
        )
    for j in range(n):
        graph.add_factor(
            Factor([cart(j, 0)], [eye2], pinned[4 * j : 4 * j + 2], CONSTRAINT)
        )

    if damping > 0.0:
        lam = RowWeight.finite(damping)
        for key, info in graph.variables.items():
            graph.add_factor(
                Factor([key], [np.eye(info.dim)], np.zeros(info.dim), lam)
            )
    return graph


# ---------------------------------------------------------------------------
# Trajectories and costs
# ---------------------------------------------------------------------------


def unpack_solution(
    solution: Solution | Mapping[VariableKey, FloatArray], config: ProblemConfig
) -> Tuple[FloatArray, FloatArray]:
    """Solution values to packed arrays: states (horizon, 4n) and controls
    (horizon-1, m) in actuator order."""
    values = solution.values if isinstance(solution, Solution) else solution
    t_len = config.horizon
    states = np.zeros((t_len, 4 * config.n))
    controls = np.zeros((max(t_len - 1, 0), config.m))
    for t in range(t_len):
        for j in range(config.n):
            states[t, 4 * j : 4 * j + 2] = values[cart(j, t)]
            states[t, 4 * j + 2 : 4 * j + 4] = values[pend(j, t)]
    for t in range(t_len - 1):
        for a, b in enumerate(config.actuated):
            controls[t, a] = values[control(b, t)][0]
    return states, controls


def trajectory_cost(
    states: FloatArray, controls: FloatArray, config: ProblemConfig
) -> float:
    """Quadratic objective of a packed trajectory; matches the graph cost of
    the same trajectory when the transitions hold."""
    t_len = config.horizon
    states = np.asarray(states, dtype=float).reshape(t_len, 4 * config.n)
    ctrl = np.asarray(controls, dtype=float).reshape(max(t_len - 1, 0), config.m)
    w = config.weights
    cost = 0.0
    for t in range(t_len):
        w_cart = w.terminal_cart if t == t_len - 1 else w.cart
        w_pend = w.terminal_pendulum if t == t_len - 1 else w.pendulum
        row = states[t]
        cart_part = float(row[0::4] @ row[0::4] + row[1::4] @ row[1::4])
        pend_part = float(row[2::4] @ row[2::4] + row[3::4] @ row[3::4])
        cost += w_cart * cart_part + w_pend * pend_part
    cost += w.control * float(np.sum(ctrl * ctrl))
    return cost


def dense_cost_matrices(config: ProblemConfig) -> Tuple[FloatArray, FloatArray, FloatArray]:
    """Stage, control and terminal cost matrices for the packed state."""
    w = config.weights
    body = np.array([w.cart, w.cart, w.pendulum, w.pendulum])
    body_f = np.array([w.terminal_cart, w.terminal_cart, w.terminal_pendulum, w.terminal_pendulum])
    q = np.diag(np.tile(body, config.n))
    qf = np.diag(np.tile(body_f, config.n))
    r = w.control * np.eye(config.m)
    return q, r, qf


# ---------------------------------------------------------------------------
# Configuration files
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "n", "horizon", "dt", "actuation", "actuated", "masses", "length",
    "spring", "damping", "gravity", "weights", "x0", "preset",
}
_WEIGHT_KEYS = {"qx": "cart", "qtheta": "pendulum", "qu": "control",
                "qxf": "terminal_cart", "qthetaf": "terminal_pendulum"}


def load_config(source: str | Path | Mapping) -> ProblemConfig:
    """Build a problem from a JSON file or an equivalent mapping.

    Only ``n`` and ``horizon`` are required; everything else falls back to
    the stock chain parameters.  ``actuation`` selects actuators by count
    (``{"m": 2}``) or density (``{"rho": 0.25}``); ``actuated`` pins explicit
    cart indices instead.  The initial state is either a flat ``x0`` list or
    a ``preset``: ``"hanging"`` or ``{"upright_perturbed": degrees}``.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        data = dict(source)
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for req in ("n", "horizon"):
        if req not in data:
            raise ConfigError(f"missing required key {req!r}")
    n = int(data["n"])
    horizon = int(data["horizon"])

    masses = data.get("masses", {})
    if not isinstance(masses, dict) or set(masses) - {"cart", "pendulum"}:
        raise ConfigError("masses must be an object with keys cart, pendulum")
    params = CartPoleParams(
        cart_mass=float(masses.get("cart", DEFAULT_PARAMS.cart_mass)),
        pendulum_mass=float(masses.get("pendulum", DEFAULT_PARAMS.pendulum_mass)),
        length=float(data.get("length", DEFAULT_PARAMS.length)),
        spring=float(data.get("spring", DEFAULT_PARAMS.spring)),
        damping=float(data.get("damping", DEFAULT_PARAMS.damping)),
        gravity=float(data.get("gravity", DEFAULT_PARAMS.gravity)),
        dt=float(data.get("dt", DEFAULT_PARAMS.dt)),
    )

    weight_data = data.get("weights", {})
    if not isinstance(weight_data, dict) or set(weight_data) - set(_WEIGHT_KEYS):
        raise ConfigError(f"weights accepts keys {sorted(_WEIGHT_KEYS)}")
    weights = CostWeights(
        **{field_name: float(weight_data[k]) for k, field_name in _WEIGHT_KEYS.items() if k in weight_data}
    )

    m = rho = None
    actuation = data.get("actuation")
    if actuation is not None:
        if not isinstance(actuation, dict) or set(actuation) - {"m", "rho"}:
            raise ConfigError('actuation must be {"m": count} or {"rho": density}')
        if "m" in actuation and "rho" in actuation:
            raise ConfigError("actuation takes m or rho, not both")
        m = int(actuation["m"]) if "m" in actuation else None
        rho = float(actuation["rho"]) if "rho" in actuation else None
    actuated = data.get("actuated")
    if actuated is not None and actuation is not None:
        raise ConfigError("explicit actuated indices exclude the actuation block")

    if "x0" in data and "preset" in data:
        raise ConfigError("give x0 or preset, not both")
    if "x0" in data:
        x0 = np.asarray(data["x0"], dtype=float)
    elif "preset" in data:
        preset = data["preset"]
        if preset == "hanging":
            x0 = hanging_state(n)
        elif isinstance(preset, dict) and set(preset) == {"upright_perturbed"}:
            x0 = upright_state(n, math.radians(float(preset["upright_perturbed"])))
        else:
            raise ConfigError(f"unknown preset {preset!r}")
    else:
        x0 = None

    return ProblemConfig.create(
        n, horizon, m=m, rho=rho, actuated=actuated,
        params=params, weights=weights, x0=x0,
    )
