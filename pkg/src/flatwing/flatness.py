"""Differential-flatness maps for coordinated fixed-wing flight.

Everything here is a pure algebraic function of the flat output (position
and its derivatives): velocity-frame reconstruction, inversion from
commanded jerk to the model inputs, the cascade feedback jerk law, the
coordinated-turn rate constraints, and the arc-length-parameterized
inversion through the 3x3 decoupling matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRAVITY = np.array([0.0, 0.0, -9.81])

# Singularity guards: minimum speed, minimum normal acceleration magnitude,
# and minimum axial component of the path tangent in the velocity frame.
V_EPS = 1.0
A_EPS = 0.5
M_EPS = 0.1

# ENU <-> NED axis exchange; symmetric and involutory. Used so that Euler
# angles come out in the conventional aircraft sense (z-down, roll sign
# matching turn direction).
_ENU_TO_NED = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])


class FlatnessSingularityError(RuntimeError):
    """The flat map is not invertible at this state (slow flight or zero normal load)."""


@dataclass(frozen=True)
class FlatState:
    """Flat output sample: position and its first three time derivatives."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    jerk: np.ndarray


@dataclass(frozen=True)
class CoordinatedFrame:
    """Velocity-frame rotation and the accelerations/rates fixed by coordination."""

    R: np.ndarray  # columns r_x, r_y, r_z: velocity frame -> inertial
    a_vx: float
    a_vz: float
    V: float
    omega_vy: float
    omega_vz: float


@dataclass(frozen=True)
class CommandedInput:
    theta_c: float
    phi_c: float
    omega_vx: float
    omega_vy: float
    a_T: float
    phi_clamped: bool = False


@dataclass(frozen=True)
class PathParamState:
    s: float
    s_dot: float
    s_ddot: float

    def __post_init__(self):
        if self.s_dot <= 0.0:
            raise ValueError("path parameterization requires forward progress (s_dot > 0)")


@dataclass
class ControlConfig:
    gains: tuple = (8.0, 12.0, 6.0)  # k0, k1, k2 on (e, e_dot, e_ddot)
    phi_limit: float = 1.0
    leak: float = 0.5  # 1/s pull of the acceleration integrators toward trim


@dataclass
class CommandState:
    """Integrated axial/normal acceleration commands carried between ticks."""

    a_vx: float
    a_vz: float


def frame_from_flat(velocity, acceleration, g=GRAVITY) -> CoordinatedFrame:
    """Reconstruct the coordinated velocity frame from flat derivatives.

    r_x is the unit velocity; the normal acceleration a_n = xdd - g - a_vx r_x
    must be bounded away from zero for the aircraft to be controllable, and
    its direction fixes r_z through a_vz = -|a_n|.
    """
    v = np.asarray(velocity, dtype=float)
    a = np.asarray(acceleration, dtype=float)
    V = float(np.linalg.norm(v))
    if V < V_EPS:
        raise FlatnessSingularityError(f"speed {V:.3f} m/s below {V_EPS} m/s")
    r_x = v / V
    a_vx = float(r_x @ (a - g))
    a_n = a - g - a_vx * r_x
    n = float(np.linalg.norm(a_n))
    if n < A_EPS:
        raise FlatnessSingularityError(f"normal acceleration {n:.3f} m/s^2 below {A_EPS}")
    a_vz = -n
    r_z = a_n / a_vz
    r_y = np.cross(r_z, r_x)
    R = np.column_stack([r_x, r_y, r_z])
    g_v = R.T @ g
    omega_vy = -(a_vz + g_v[2]) / V
    omega_vz = g_v[1] / V
    return CoordinatedFrame(R=R, a_vx=a_vx, a_vz=a_vz, V=V,
                            omega_vy=float(omega_vy), omega_vz=float(omega_vz))


def coordinated_rates(frame: CoordinatedFrame, g=GRAVITY):
    """Pitch/yaw rates that keep the lateral velocity-frame dynamics consistent."""
    if frame.V < V_EPS:
        raise FlatnessSingularityError(f"speed {frame.V:.3f} m/s below {V_EPS} m/s")
    g_v = frame.R.T @ g
    return -(frame.a_vz + g_v[2]) / frame.V, g_v[1] / frame.V


def flat_inputs(flat: FlatState, frame: CoordinatedFrame):
    """Invert the jerk map: returns (a_vx_dot, omega_vx, a_vz_dot).

    The affine part depends only on the frame; the jerk enters through
    diag(1, -1/a_vz, 1) applied to the frame-resolved jerk, so the
    inversion is exact wherever a_vz stays away from zero.
    """
    if abs(frame.a_vz) < A_EPS:
        raise FlatnessSingularityError(f"normal acceleration {frame.a_vz:.3f} too small")
    w = frame.R.T @ np.asarray(flat.jerk, dtype=float)
    a_vx_dot = -frame.omega_vy * frame.a_vz + w[0]
    omega_vx = frame.omega_vz * frame.a_vx / frame.a_vz - w[1] / frame.a_vz
    a_vz_dot = frame.omega_vy * frame.a_vx + w[2]
    return float(a_vx_dot), float(omega_vx), float(a_vz_dot)


def forward_jerk(frame: CoordinatedFrame, a_vx_dot, omega_vx, a_vz_dot):
    """Forward jerk map x''' = R (omega_v x a_v + a_v_dot); inverse of flat_inputs."""
    omega = np.array([omega_vx, frame.omega_vy, frame.omega_vz])
    a_v = np.array([frame.a_vx, 0.0, frame.a_vz])
    return frame.R @ (np.cross(omega, a_v) + np.array([a_vx_dot, 0.0, a_vz_dot]))


def tracking_jerk(ref: FlatState, position, velocity, acceleration, gains=(8.0, 12.0, 6.0)):
    """Cascade feedback jerk: x_c''' = x_r''' + k2*e_dd + k1*e_d + k0*e."""
    k0, k1, k2 = gains
    e = ref.position - np.asarray(position, dtype=float)
    ed = ref.velocity - np.asarray(velocity, dtype=float)
    edd = ref.acceleration - np.asarray(acceleration, dtype=float)
    return ref.jerk + k2 * edd + k1 * ed + k0 * e


def euler_zyx(R) -> tuple:
    """Roll, pitch, yaw of a velocity/body frame given in ENU axes.

    The frame is re-expressed in north-east-down axes first, so yaw is a
    compass heading, pitch is positive nose-up, and roll is positive
    right-wing-down.
    """
    Rn = _ENU_TO_NED @ np.asarray(R, dtype=float)
    s_pitch = np.clip(-Rn[2, 0], -1.0, 1.0)
    theta = math.asin(s_pitch)
    if abs(s_pitch) > 1.0 - 1e-9:
        # Gimbal-degenerate; fold everything into yaw.
        return 0.0, theta, math.atan2(-Rn[0, 1], Rn[1, 1])
    phi = math.atan2(Rn[2, 1], Rn[2, 2])
    psi = math.atan2(Rn[1, 0], Rn[0, 0])
    return phi, theta, psi


def command_from_flat(ref: FlatState, position, velocity, acceleration,
                      cfg: ControlConfig, state: CommandState | None = None,
                      dt: float = 0.01, drag_accel: float = 0.0,
                      alpha_est: float = 0.0, a_T_max: float = math.inf,
                      g=GRAVITY):
    """Full command synthesis: returns (CommandedInput, CommandState).

    The commanded frame is built from the reference flat derivatives, the
    feedback enters through the commanded jerk, and the axial/normal
    acceleration channels are integrated (with a slow leak toward the
    reference trim values) to produce thrust and pitch-rate commands.
    """
    frame_c = frame_from_flat(ref.velocity, ref.acceleration, g)
    jerk_c = tracking_jerk(ref, position, velocity, acceleration, cfg.gains)
    cmd_flat = FlatState(ref.position, ref.velocity, ref.acceleration, jerk_c)
    a_vx_dot, omega_vx, a_vz_dot = flat_inputs(cmd_flat, frame_c)

    if state is None:
        state = CommandState(frame_c.a_vx, frame_c.a_vz)
    a_vx_i = state.a_vx + dt * (a_vx_dot + cfg.leak * (frame_c.a_vx - state.a_vx))
    a_vz_i = state.a_vz + dt * (a_vz_dot + cfg.leak * (frame_c.a_vz - state.a_vz))

    g_v = frame_c.R.T @ g
    omega_vy = -(a_vz_i + g_v[2]) / frame_c.V
    a_T = (a_vx_i + drag_accel) / math.cos(alpha_est)
    a_T = min(max(a_T, 0.0), a_T_max)

    phi, theta_frame, _ = euler_zyx(frame_c.R)
    phi_c = phi
    clamped = False
    if abs(phi_c) > cfg.phi_limit:
        phi_c = math.copysign(cfg.phi_limit, phi_c)
        clamped = True
    theta_c = theta_frame + alpha_est

    cmd = CommandedInput(theta_c=theta_c, phi_c=phi_c, omega_vx=omega_vx,
                         omega_vy=float(omega_vy), a_T=a_T, phi_clamped=clamped)
    return cmd, CommandState(a_vx_i, a_vz_i)


def path_param_inputs(pp: PathParamState, dx_ds, d2x_ds2, d3x_ds3,
                      x_ref, position, velocity, acceleration,
                      frame: CoordinatedFrame, gains=(8.0, 12.0, 6.0),
                      a_vx_dot: float = 0.0):
    """Arc-length-parameterized inversion: returns (s_dddot, omega_vx, a_vz_dot).

    Solves the lower-triangular decoupling system whose columns are
    R' dx/ds, (0, a_vz, 0), and (0, 0, -1). The axial acceleration rate
    a_vx_dot is treated as a known input (zero for constant-thrust cruise).
    """
    tangent = frame.R.T @ np.asarray(dx_ds, dtype=float)
    if abs(tangent[0]) < M_EPS:
        raise FlatnessSingularityError(
            f"path tangent nearly perpendicular to the vehicle axis ({tangent[0]:.3f})"
        )
    if frame.a_vz > -A_EPS:
        raise FlatnessSingularityError(f"normal acceleration {frame.a_vz:.3f} too small")

    k0, k1, k2 = gains
    d1 = np.asarray(dx_ds, dtype=float)
    d2 = np.asarray(d2x_ds2, dtype=float)
    d3 = np.asarray(d3x_ds3, dtype=float)
    e = np.asarray(x_ref, dtype=float) - np.asarray(position, dtype=float)
    ed = d1 * pp.s_dot - np.asarray(velocity, dtype=float)
    edd = d2 * pp.s_dot**2 + d1 * pp.s_ddot - np.asarray(acceleration, dtype=float)

    known = 3.0 * d2 * pp.s_dot * pp.s_ddot + d3 * pp.s_dot**3 + k2 * edd + k1 * ed + k0 * e
    rhs = np.array([
        a_vx_dot + frame.omega_vy * frame.a_vz,
        frame.omega_vz * frame.a_vx,
        -frame.omega_vy * frame.a_vx,
    ]) - frame.R.T @ known

    s_dddot = rhs[0] / tangent[0]
    omega_vx = (rhs[1] - tangent[1] * s_dddot) / frame.a_vz
    a_vz_dot = -(rhs[2] - tangent[2] * s_dddot)
    return float(s_dddot), float(omega_vx), float(a_vz_dot)


def decoupling_matrix(frame: CoordinatedFrame, dx_ds) -> np.ndarray:
    """The 3x3 matrix relating (s_dddot, omega_vx, a_vz_dot) to the frame jerk."""
    tangent = frame.R.T @ np.asarray(dx_ds, dtype=float)
    M = np.zeros((3, 3))
    M[:, 0] = tangent
    M[1, 1] = frame.a_vz
    M[2, 2] = -1.0
    return M
