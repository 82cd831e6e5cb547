"""Coordinated-flight fixed-wing simulator.

Point-mass kinematics on (position, airspeed, velocity-frame rotation)
with a lift/drag/thrust acceleration model, kinematic wind advection,
quasi-static angle of attack, and a first-order stand-in for the autopilot
attitude inner loop. The translational velocity is x_dot = V_a R e1 + w,
so the coordinated-flight constraint (zero lateral velocity in the frame)
holds on the air-relative velocity by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .flatness import GRAVITY, V_EPS, CommandedInput, euler_zyx

RHO_SEA_LEVEL = 1.225
DENSITY_SCALE_HEIGHT = 8500.0
ALPHA_LIMIT = 0.3
RATE_LIMIT = 2.0


class IntegrationFault(RuntimeError):
    """State became non-finite or lost orthonormality during a step."""


@dataclass
class AeroParams:
    """Airframe constants for a small powered glider."""

    mass: float = 1.1  # kg
    wing_area: float = 0.3  # m^2
    c_l0: float = 0.28
    c_l_alpha: float = 4.5  # per rad
    c_d0: float = 0.04
    k_induced: float = 0.05
    a_l0: float = 0.0  # m/s^2 baseline lift acceleration
    thrust_max: float = 8.0  # N
    phi_limit: float = 1.0  # rad

    def __post_init__(self):
        for name in ("mass", "wing_area", "c_l_alpha", "thrust_max", "phi_limit"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.a_l0 < 0:
            raise ValueError("a_l0 must be non-negative")

    @property
    def a_T_max(self) -> float:
        return self.thrust_max / self.mass


@dataclass
class WindField:
    """Mean wind plus a deterministic sinusoidal horizontal gust."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gust_amplitude: float = 0.0
    gust_period: float = 60.0
    seed: int = 0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        if self.gust_amplitude < 0:
            raise ValueError("gust_amplitude must be non-negative")
        rng = np.random.default_rng(self.seed)
        self._phases = tuple(rng.uniform(0.0, 2.0 * math.pi, size=2))


def wind_at(wind: WindField, t: float) -> np.ndarray:
    w = wind.mean.copy()
    if wind.gust_amplitude > 0.0:
        arg = 2.0 * math.pi * t / wind.gust_period
        w[0] += wind.gust_amplitude * math.sin(arg + wind._phases[0])
        w[1] += wind.gust_amplitude * math.sin(arg + wind._phases[1])
    return w


@dataclass
class AircraftState:
    """Inertial position/velocity, velocity-frame rotation, and air data."""

    x: np.ndarray
    v: np.ndarray
    R: np.ndarray
    alpha: float
    V_a: float


def air_density(x_z: float) -> float:
    """Exponential-atmosphere density at altitude x_z meters."""
    if not -500.0 <= x_z <= 10000.0:
        raise ValueError(f"altitude {x_z} m outside supported range [-500, 10000]")
    return RHO_SEA_LEVEL * math.exp(-x_z / DENSITY_SCALE_HEIGHT)


def aero_accels(state: AircraftState, params: AeroParams, wind_vec=None):
    """Lift and drag accelerations (a_L, a_D) at the state's angle of attack."""
    v_air = state.v if wind_vec is None else state.v - wind_vec
    V_a = float(np.linalg.norm(v_air))
    if V_a < 0.0:
        raise ValueError("airspeed must be non-negative")
    k_dyn = air_density(float(state.x[2])) * V_a**2 * params.wing_area / (2.0 * params.mass)
    c_l = params.c_l0 + params.c_l_alpha * state.alpha
    c_d = params.c_d0 + params.k_induced * c_l**2
    return k_dyn * c_l + params.a_l0, k_dyn * c_d


def input_accels(a_T: float, a_D: float, a_L: float, alpha: float):
    """Axial and normal acceleration inputs from thrust, drag, lift."""
    return a_T * math.cos(alpha) - a_D, -a_T * math.sin(alpha) - a_L


def solve_alpha(params: AeroParams, V_a: float, x_z: float, a_T: float,
                a_vz_req: float) -> float:
    """Quasi-static angle of attack producing the required normal acceleration.

    Solves -a_T*alpha - (k_dyn*(c_l0 + c_l_alpha*alpha) + a_l0) = a_vz_req
    in the small-angle approximation, clamped to +/- ALPHA_LIMIT.
    """
    k_dyn = air_density(x_z) * V_a**2 * params.wing_area / (2.0 * params.mass)
    denom = a_T + k_dyn * params.c_l_alpha
    if abs(denom) < 1e-9:
        return 0.0
    alpha = (-a_vz_req - k_dyn * params.c_l0 - params.a_l0) / denom
    return min(max(alpha, -ALPHA_LIMIT), ALPHA_LIMIT)


def coordinated_trim(params: AeroParams, V_a: float, a_n_mag: float = 9.81,
                     x_z: float = 0.0):
    """Trim (alpha, a_T) holding airspeed against a normal load of a_n_mag.

    Fixed-point iteration over the drag polar: thrust cancels drag along
    the axis, lift plus the thrust normal component carries the load.
    """
    alpha, a_T = 0.0, 0.0
    for _ in range(6):
        alpha = solve_alpha(params, V_a, x_z, a_T, -a_n_mag)
        k_dyn = air_density(x_z) * V_a**2 * params.wing_area / (2.0 * params.mass)
        c_l = params.c_l0 + params.c_l_alpha * alpha
        a_D = k_dyn * (params.c_d0 + params.k_induced * c_l**2)
        a_T = min(max(a_D / math.cos(alpha), 0.0), params.a_T_max)
    return alpha, a_T


def _skew(w):
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def _orthonormalize(R):
    """Two Newton iterations of the polar projection R(3I - R'R)/2."""
    for _ in range(2):
        R = R @ (1.5 * np.eye(3) - 0.5 * (R.T @ R))
    return R


def _rotation_step(R, omega_v, dt):
    """RK4 step of R_dot = R*skew(omega) followed by re-orthonormalization.

    Returns the new rotation and the four stage rotations (used by the
    full state step to evaluate translational derivatives).
    """
    Om = _skew(omega_v)
    k1 = R @ Om
    R2 = R + (0.5 * dt) * k1
    k2 = R2 @ Om
    R3 = R + (0.5 * dt) * k2
    k3 = R3 @ Om
    R4 = R + dt * k3
    k4 = R4 @ Om
    Rn = R + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return _orthonormalize(Rn), (R, R2, R3, R4)


def step(state: AircraftState, omega_v, a_vx: float, a_vz: float,
         wind_vec, dt: float) -> AircraftState:
    """One RK4 integration step of the coordinated kinematics.

    Integrates x_dot = V_a R e1 + w, V_a_dot = a_vx + (R'g)_x, and
    R_dot = R*skew(omega_v); the normal channel a_vz is realized through
    the pitch rate omega_v[1] under the coordinated constraint, so it is
    accepted for bookkeeping but does not enter the quadrature directly.
    """
    if not 0.0 < dt <= 0.02:
        raise ValueError(f"dt={dt} outside (0, 0.02]")
    if state.V_a <= 1e-9:
        raise ValueError("coordinated model requires positive airspeed")
    w = np.zeros(3) if wind_vec is None else np.asarray(wind_vec, dtype=float)
    gz = GRAVITY[2]

    Rn, (S1, S2, S3, S4) = _rotation_step(state.R, omega_v, dt)

    # Airspeed stages (V_a_dot depends only on the rotation stage).
    vd1 = a_vx + gz * S1[2, 0]
    vd2 = a_vx + gz * S2[2, 0]
    vd3 = a_vx + gz * S3[2, 0]
    vd4 = a_vx + gz * S4[2, 0]
    V = state.V_a
    V1 = V
    V2 = V + 0.5 * dt * vd1
    V3 = V + 0.5 * dt * vd2
    V4 = V + dt * vd3
    Vn = V + (dt / 6.0) * (vd1 + 2.0 * vd2 + 2.0 * vd3 + vd4)

    xd1 = V1 * S1[:, 0] + w
    xd2 = V2 * S2[:, 0] + w
    xd3 = V3 * S3[:, 0] + w
    xd4 = V4 * S4[:, 0] + w
    xn = state.x + (dt / 6.0) * (xd1 + 2.0 * xd2 + 2.0 * xd3 + xd4)

    if not (math.isfinite(Vn) and np.isfinite(xn).all()):
        raise IntegrationFault("non-finite state after integration step")
    vn = Vn * Rn[:, 0] + w
    return AircraftState(x=xn, v=vn, R=Rn, alpha=state.alpha, V_a=Vn)


def attitude_inner_loop(state: AircraftState, cmd: CommandedInput,
                        tau_att: float = 0.1, dt: float = 0.01,
                        g=GRAVITY) -> np.ndarray:
    """First-order attitude tracking: commanded rates plus error feedback.

    The yaw-axis rate is not commanded; it follows the coordinated-flight
    constraint at the current state. All rates clamp to +/- RATE_LIMIT.
    """
    if tau_att <= 0.0:
        raise ValueError("tau_att must be positive")
    phi, theta_frame, _ = euler_zyx(state.R)
    theta_body = theta_frame + state.alpha
    tau = max(tau_att, dt)
    p = cmd.omega_vx + (cmd.phi_c - phi) / tau
    q = cmd.omega_vy + (cmd.theta_c - theta_body) / tau
    g_v = state.R.T @ g
    r = g_v[1] / max(state.V_a, V_EPS)
    return np.clip(np.array([p, q, r]), -RATE_LIMIT, RATE_LIMIT)


# ---------------------------------------------------------------------------
# Reduced flat model: the open-loop plant matching the flatness inversion.


@dataclass
class ReducedState:
    """State of the reduced coordinated model driven by flat inputs."""

    x: np.ndarray
    v: np.ndarray
    R: np.ndarray
    a_vx: float
    a_vz: float


def reduced_derivs(rs: ReducedState, a_vx_dot: float, omega_vx: float,
                   a_vz_dot: float, g=GRAVITY):
    V = float(np.linalg.norm(rs.v))
    g_v = rs.R.T @ g
    omega_vy = -(rs.a_vz + g_v[2]) / V
    omega_vz = g_v[1] / V
    omega = np.array([omega_vx, omega_vy, omega_vz])
    a_v = np.array([rs.a_vx, 0.0, rs.a_vz])
    return rs.v, g + rs.R @ a_v, rs.R @ _skew(omega), a_vx_dot, a_vz_dot


def reduced_step(rs: ReducedState, inputs, dt: float, g=GRAVITY) -> ReducedState:
    """RK4 step of the reduced model under constant flat inputs."""
    a_vx_dot, omega_vx, a_vz_dot = inputs

    def add(s, k, h):
        return ReducedState(s.x + h * k[0], s.v + h * k[1], s.R + h * k[2],
                            s.a_vx + h * k[3], s.a_vz + h * k[4])

    k1 = reduced_derivs(rs, a_vx_dot, omega_vx, a_vz_dot, g)
    k2 = reduced_derivs(add(rs, k1, 0.5 * dt), a_vx_dot, omega_vx, a_vz_dot, g)
    k3 = reduced_derivs(add(rs, k2, 0.5 * dt), a_vx_dot, omega_vx, a_vz_dot, g)
    k4 = reduced_derivs(add(rs, k3, dt), a_vx_dot, omega_vx, a_vz_dot, g)
    out = ReducedState(
        rs.x + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        rs.v + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        rs.R + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        rs.a_vx + dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]),
        rs.a_vz + dt / 6.0 * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4]),
    )
    out.R = _orthonormalize(out.R)
    return out
