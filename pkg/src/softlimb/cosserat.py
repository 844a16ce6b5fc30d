"""Steady-state mechanics of a tapered, tendon-driven soft limb.

The limb is a solid frustum clamped at the base, actuated by four tendons
anchored at the base plate and at a single rigid disc at the distal end.
Each tendon is modeled as a straight chord between its two anchors, so the
tendon loads reduce to a concentrated force/moment pair at the tip.

Conventions
-----------
* Inertial frame: the undeformed centerline lies along +x; the cross-section
  plane at rest is y-z.  The base is clamped: r(0) = 0, R(0) = I.
* Local frame per cross-section: axis 0 is the tangent, axes 1 and 2 are the
  principal axes of the cross-section (aligned with y, z at rest).
* Curvature vector is expressed in the local frame with components
  (twist about tangent, bending about axis 1, bending about axis 2).

The equilibrium is found by fixed-point iteration: evaluate tendon loads on
the current shape, update strain/curvature from the linear-elastic
constitutive relations, rebuild the shape by integrating the frame equations,
and repeat until the tip stops moving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency normally
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


WATER_DENSITY = 1000.0  # kg/m^3
GRAVITY = 9.81  # m/s^2

_STRAIN_FLOOR = -0.9  # iteration clamp; beyond this the material model is invalid


class DegenerateGeometryError(ValueError):
    """A tendon's anchors coincide; chord direction undefined."""


class MaterialLimitError(RuntimeError):
    """Axial strain reached -1 (cross-section inversion)."""


class ConvergenceError(RuntimeError):
    """Fixed-point iteration did not converge; carries the last iterate."""

    def __init__(self, message, configuration=None, residual=None):
        super().__init__(message)
        self.configuration = configuration
        self.residual = residual


@dataclass(frozen=True)
class LimbGeometry:
    length: float = 0.600  # m
    base_radius: float = 0.030  # m
    tip_radius: float = 0.010  # m
    tendon_offset_base: float = 0.020  # m
    tendon_offset_tip: float = 0.00325  # m
    tendon_count: int = 4
    tendon_angles: tuple = (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)
    node_count: int = 101

    def __post_init__(self):
        if self.length <= 0 or self.base_radius <= 0 or self.tip_radius <= 0:
            raise ValueError("length and radii must be positive")
        if self.tip_radius > self.base_radius:
            raise ValueError("tip radius must not exceed base radius")
        if self.tendon_offset_tip >= self.tip_radius:
            raise ValueError("tip tendon offset exceeds tip radius")
        if self.tendon_offset_base >= self.base_radius:
            raise ValueError("base tendon offset exceeds base radius")
        if len(self.tendon_angles) != self.tendon_count:
            raise ValueError("tendon_angles length must equal tendon_count")
        if self.node_count < 2:
            raise ValueError("need at least 2 nodes")

    def arc_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.node_count)

    def cross_section_radius(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        return self.base_radius + (self.tip_radius - self.base_radius) * s / self.length

    def cross_section_area(self, s) -> np.ndarray:
        return np.pi * self.cross_section_radius(s) ** 2

    def bending_inertia(self, s) -> np.ndarray:
        return np.pi * self.cross_section_radius(s) ** 4 / 4.0

    def torsion_inertia(self, s) -> np.ndarray:
        return np.pi * self.cross_section_radius(s) ** 4 / 2.0


@dataclass(frozen=True)
class MaterialProperties:
    youngs_modulus: float = 70_000.0  # Pa
    shear_modulus: float = None  # Pa; defaults to E/3 (incompressible rubber)
    mass_density: float = 1070.0  # kg/m^3

    def __post_init__(self):
        if self.shear_modulus is None:
            object.__setattr__(self, "shear_modulus", self.youngs_modulus / 3.0)
        if self.youngs_modulus <= 0 or self.shear_modulus <= 0 or self.mass_density <= 0:
            raise ValueError("material constants must be positive")


MAX_TENDON_FORCE = 10.0  # N


@dataclass(frozen=True)
class TendonForces:
    tensions: np.ndarray  # (4,), N
    max_force: float = MAX_TENDON_FORCE

    def __post_init__(self):
        t = np.asarray(self.tensions, dtype=np.float64)
        object.__setattr__(self, "tensions", t)
        if t.shape != (4,):
            raise ValueError("expected 4 tendon tensions")
        if np.any(t < 0) or np.any(t > self.max_force):
            raise ValueError(
                "tensions must lie in [0, %g] N, got %r" % (self.max_force, t)
            )


@dataclass(frozen=True)
class TipLoads:
    force: np.ndarray  # (3,), N, inertial frame
    moment: np.ndarray  # (3,), N*m, inertial frame


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-6  # m, tip motion between iterates
    max_iterations: int = 100
    include_gravity: bool = False
    water_density: float = WATER_DENSITY


@dataclass
class RodConfiguration:
    arc: np.ndarray  # (N,)
    strain: np.ndarray  # (N,), axial strain
    curvature: np.ndarray  # (N,3), local frame (twist, bend1, bend2)
    position: np.ndarray  # (N,3), inertial
    orientation: np.ndarray  # (N,3,3), local->inertial, columns are local axes
    internal_force: np.ndarray  # (N,3), inertial
    internal_moment: np.ndarray  # (N,3), inertial
    iterations: int = 0
    converged: bool = True
    tip_pose: np.ndarray = None  # (6,) tip position + rotation vector

    @property
    def tip_position(self) -> np.ndarray:
        return self.position[-1]

    @property
    def tip_orientation(self) -> np.ndarray:
        return self.orientation[-1]


def rest_configuration(geometry: LimbGeometry) -> RodConfiguration:
    """Straight, unstrained limb along the inertial x axis."""
    n = geometry.node_count
    s = geometry.arc_nodes()
    pos = np.zeros((n, 3))
    pos[:, 0] = s
    rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    return RodConfiguration(
        arc=s,
        strain=np.zeros(n),
        curvature=np.zeros((n, 3)),
        position=pos,
        orientation=rot,
        internal_force=np.zeros((n, 3)),
        internal_moment=np.zeros((n, 3)),
    )


def _tendon_anchor_frames(geometry: LimbGeometry):
    """Base anchors (inertial) and tip anchor offsets (local frame)."""
    angles = np.asarray(geometry.tendon_angles)
    radial = np.stack(
        [np.zeros_like(angles), np.cos(angles), np.sin(angles)], axis=1
    )  # tendon 0 points along +y
    base = geometry.tendon_offset_base * radial
    tip_local = geometry.tendon_offset_tip * radial
    return base, tip_local


def tendon_tip_loads(
    geometry: LimbGeometry, configuration: RodConfiguration, forces: TendonForces
) -> TipLoads:
    """Concentrated tip force/moment from straight tendon chords."""
    base, tip_local = _tendon_anchor_frames(geometry)
    r_tip = configuration.tip_position
    rot_tip = configuration.tip_orientation
    force = np.zeros(3)
    moment = np.zeros(3)
    for i in range(geometry.tendon_count):
        anchor = r_tip + rot_tip @ tip_local[i]
        chord = base[i] - anchor
        dist = np.linalg.norm(chord)
        if dist < 1e-9:
            raise DegenerateGeometryError(
                "tendon %d anchors coincide (distance %.3e m)" % (i, dist)
            )
        pull = forces.tensions[i] * chord / dist
        force += pull
        moment += np.cross(anchor - r_tip, pull)
    return TipLoads(force=force, moment=moment)


# ----------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _rodrigues_step(phi, out_rot, out_vmat):
    """Rotation matrix exp([phi]x) and its translation companion V(phi)."""
    t2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]
    theta = np.sqrt(t2)
    px, py, pz = phi[0], phi[1], phi[2]
    # [phi]x and [phi]x^2
    if theta < 1e-8:
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
        c = 1.0 / 6.0 - t2 / 120.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / t2
        c = (theta - np.sin(theta)) / (t2 * theta)
    # K = skew(phi); K2 = K @ K
    k00, k01, k02 = 0.0, -pz, py
    k10, k11, k12 = pz, 0.0, -px
    k20, k21, k22 = -py, px, 0.0
    s00 = -(py * py + pz * pz)
    s11 = -(px * px + pz * pz)
    s22 = -(px * px + py * py)
    s01 = px * py
    s02 = px * pz
    s12 = py * pz
    out_rot[0, 0] = 1.0 + a * k00 + b * s00
    out_rot[0, 1] = a * k01 + b * s01
    out_rot[0, 2] = a * k02 + b * s02
    out_rot[1, 0] = a * k10 + b * s01
    out_rot[1, 1] = 1.0 + a * k11 + b * s11
    out_rot[1, 2] = a * k12 + b * s12
    out_rot[2, 0] = a * k20 + b * s02
    out_rot[2, 1] = a * k21 + b * s12
    out_rot[2, 2] = 1.0 + a * k22 + b * s22
    out_vmat[0, 0] = 1.0 + b * k00 + c * s00
    out_vmat[0, 1] = b * k01 + c * s01
    out_vmat[0, 2] = b * k02 + c * s02
    out_vmat[1, 0] = b * k10 + c * s01
    out_vmat[1, 1] = 1.0 + b * k11 + c * s11
    out_vmat[1, 2] = b * k12 + c * s12
    out_vmat[2, 0] = b * k20 + c * s02
    out_vmat[2, 1] = b * k21 + c * s12
    out_vmat[2, 2] = 1.0 + b * k22 + c * s22


@njit(cache=True)
def _integrate_kernel(h, strain, curvature, position, orientation):
    """Advance r, R node-to-node with a helix (constant-twist) step.

    Within each interval the curvature and strain are frozen at their
    midpoint values, for which the frame equations integrate in closed form;
    the step is exact for constant curvature.
    """
    n = strain.shape[0]
    position[0, 0] = 0.0
    position[0, 1] = 0.0
    position[0, 2] = 0.0
    orientation[0] = np.eye(3)
    rot_step = np.empty((3, 3))
    vmat = np.empty((3, 3))
    phi = np.empty(3)
    for k in range(n - 1):
        em = 0.5 * (strain[k] + strain[k + 1])
        for j in range(3):
            phi[j] = h * 0.5 * (
                (1.0 + strain[k]) * curvature[k, j]
                + (1.0 + strain[k + 1]) * curvature[k + 1, j]
            )
        _rodrigues_step(phi, rot_step, vmat)
        scale = h * (1.0 + em)
        rk = orientation[k]
        for i in range(3):
            # displacement = R_k @ V @ e_tangent, tangent is local axis 0
            d = rk[i, 0] * vmat[0, 0] + rk[i, 1] * vmat[1, 0] + rk[i, 2] * vmat[2, 0]
            position[k + 1, i] = position[k, i] + scale * d
        for i in range(3):
            for j in range(3):
                acc = 0.0
                for l in range(3):
                    acc += rk[i, l] * rot_step[l, j]
                orientation[k + 1, i, j] = acc


@njit(cache=True)
def _exp_so3(phi):
    rot = np.empty((3, 3))
    v = np.empty((3, 3))
    _rodrigues_step(phi, rot, v)
    return rot


@njit(cache=True)
def _log_so3(rot):
    """Rotation vector of a rotation matrix."""
    tr = rot[0, 0] + rot[1, 1] + rot[2, 2]
    c = 0.5 * (tr - 1.0)
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    theta = np.arccos(c)
    v = np.empty(3)
    v[0] = rot[2, 1] - rot[1, 2]
    v[1] = rot[0, 2] - rot[2, 0]
    v[2] = rot[1, 0] - rot[0, 1]
    if theta < 1e-8:
        return 0.5 * v
    s = np.sin(theta)
    if np.abs(s) < 1e-12:
        # theta ~ pi: extract axis from the symmetric part
        axis = np.empty(3)
        for i in range(3):
            d = 0.5 * (rot[i, i] + 1.0)
            axis[i] = np.sqrt(d) if d > 0.0 else 0.0
        # fix signs from off-diagonal terms
        if rot[0, 1] + rot[1, 0] < 0.0:
            axis[1] = -axis[1]
        if rot[0, 2] + rot[2, 0] < 0.0:
            axis[2] = -axis[2]
        nrm = np.sqrt(axis[0] ** 2 + axis[1] ** 2 + axis[2] ** 2)
        if nrm > 0.0:
            return theta * axis / nrm
        return 0.5 * v
    return (theta / (2.0 * s)) * v


@njit(cache=True)
def _chord_loads(r_tip, rot_tip, tensions, base_anchors, tip_local, out_force, out_moment):
    """Tendon chord resultants at the tip; returns False on coincident anchors."""
    out_force[:] = 0.0
    out_moment[:] = 0.0
    for i in range(tensions.shape[0]):
        ox = (
            rot_tip[0, 0] * tip_local[i, 0]
            + rot_tip[0, 1] * tip_local[i, 1]
            + rot_tip[0, 2] * tip_local[i, 2]
        )
        oy = (
            rot_tip[1, 0] * tip_local[i, 0]
            + rot_tip[1, 1] * tip_local[i, 1]
            + rot_tip[1, 2] * tip_local[i, 2]
        )
        oz = (
            rot_tip[2, 0] * tip_local[i, 0]
            + rot_tip[2, 1] * tip_local[i, 1]
            + rot_tip[2, 2] * tip_local[i, 2]
        )
        ax = r_tip[0] + ox
        ay = r_tip[1] + oy
        az = r_tip[2] + oz
        cx = base_anchors[i, 0] - ax
        cy = base_anchors[i, 1] - ay
        cz = base_anchors[i, 2] - az
        dist = np.sqrt(cx * cx + cy * cy + cz * cz)
        if dist < 1e-9:
            return False
        scale = tensions[i] / dist
        fx, fy, fz = scale * cx, scale * cy, scale * cz
        out_force[0] += fx
        out_force[1] += fy
        out_force[2] += fz
        out_moment[0] += oy * fz - oz * fy
        out_moment[1] += oz * fx - ox * fz
        out_moment[2] += ox * fy - oy * fx
    return True


@njit(cache=True)
def _constitutive(r, rot, r_tip, tip_force, tip_moment, dfv, dtv,
                  ea, eib, git, kap, out_nm):
    """Strain and local curvature at a material point from the load balance.

    dfv/dtv are the distributed-load resultants and ea/eib/git the section
    stiffnesses, all already evaluated at the point.  Returns
    (strain, clamped); out_nm receives the inertial-frame internal force
    (row 0) and moment (row 1).
    """
    nx = tip_force[0] + dfv[0]
    ny = tip_force[1] + dfv[1]
    nz = tip_force[2] + dfv[2]
    dx = r_tip[0] - r[0]
    dy = r_tip[1] - r[1]
    dz = r_tip[2] - r[2]
    mx = tip_moment[0] + dy * tip_force[2] - dz * tip_force[1]
    my = tip_moment[1] + dz * tip_force[0] - dx * tip_force[2]
    mz = tip_moment[2] + dx * tip_force[1] - dy * tip_force[0]
    mx += dtv[0] - (r[1] * dfv[2] - r[2] * dfv[1])
    my += dtv[1] - (r[2] * dfv[0] - r[0] * dfv[2])
    mz += dtv[2] - (r[0] * dfv[1] - r[1] * dfv[0])
    out_nm[0, 0], out_nm[0, 1], out_nm[0, 2] = nx, ny, nz
    out_nm[1, 0], out_nm[1, 1], out_nm[1, 2] = mx, my, mz
    m0 = rot[0, 0] * mx + rot[1, 0] * my + rot[2, 0] * mz
    m1 = rot[0, 1] * mx + rot[1, 1] * my + rot[2, 1] * mz
    m2 = rot[0, 2] * mx + rot[1, 2] * my + rot[2, 2] * mz
    kap[0] = m0 / git
    kap[1] = m1 / eib
    kap[2] = m2 / eib
    n0 = rot[0, 0] * nx + rot[1, 0] * ny + rot[2, 0] * nz
    eps = n0 / ea
    clamped = False
    if eps < _STRAIN_FLOOR:
        eps = _STRAIN_FLOOR
        clamped = True
    return eps, clamped


_MAX_SUBSTEPS = 24
_TARGET_STEP_ANGLE = 0.25  # rad of frame rotation per integration substep


@njit(cache=True)
def _se3_bracket(a, b, out):
    """se(3) Lie bracket of body twists a = (omega, v) and b."""
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    out[3] = a[1] * b[5] - a[2] * b[4] - (b[1] * a[5] - b[2] * a[4])
    out[4] = a[2] * b[3] - a[0] * b[5] - (b[2] * a[3] - b[0] * a[5])
    out[5] = a[0] * b[4] - a[1] * b[3] - (b[0] * a[4] - b[1] * a[3])


@njit(cache=True)
def _dexpinv(u, f, out, tmp1, tmp2):
    """Inverse right differential of the se(3) exponential, truncated at
    the second bracket (sufficient for a fourth-order Munthe-Kaas step).

    For the right-multiplication flow X' = X*hat(f) with X = X0*exp(u) the
    update rate is u' = dexpinv_{-u}(f) = f + [u,f]/2 + [u,[u,f]]/12."""
    _se3_bracket(u, f, tmp1)
    _se3_bracket(u, tmp1, tmp2)
    for i in range(6):
        out[i] = f[i] + 0.5 * tmp1[i] + tmp2[i] / 12.0


@njit(cache=True)
def _twist_at(r, rot, w, k, rho, youngs, shear,
              dist_force, dist_torque, r_tip, tip_force, tip_moment,
              kap, nm, dfv, dtv, out6):
    """Body twist (frame rotation/translation rate per unit arc length) at a
    fraction w into interval k; section stiffnesses are exact there because
    the radius is linear in arc length.  Returns (strain, clamped)."""
    pi = np.pi
    rw = (1.0 - w) * rho[k] + w * rho[k + 1]
    ea = youngs * pi * rw * rw
    eib = youngs * pi * rw ** 4 / 4.0
    git = shear * pi * rw ** 4 / 2.0
    for j in range(3):
        dfv[j] = (1.0 - w) * dist_force[k, j] + w * dist_force[k + 1, j]
        dtv[j] = (1.0 - w) * dist_torque[k, j] + w * dist_torque[k + 1, j]
    eps, cl = _constitutive(r, rot, r_tip, tip_force, tip_moment, dfv, dtv,
                            ea, eib, git, kap, nm)
    g = 1.0 + eps
    out6[0] = g * kap[0]
    out6[1] = g * kap[1]
    out6[2] = g * kap[2]
    out6[3] = g
    out6[4] = 0.0
    out6[5] = 0.0
    return eps, cl


@njit(cache=True)
def _pose_advance(r, rot, u, rot_u, vmat, r_out, rot_out):
    """(r_out, rot_out) = (r, rot) composed with exp(u) on SE(3)."""
    _rodrigues_step(u[:3], rot_u, vmat)
    for i in range(3):
        px = vmat[i, 0] * u[3] + vmat[i, 1] * u[4] + vmat[i, 2] * u[5]
        r_out[i] = px
    for i in range(3):
        acc = r[i]
        for l in range(3):
            acc += rot[i, l] * r_out[l]
        vmat[i, 2] = acc  # stash; r_out still needed as local displacement
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for l in range(3):
                acc += rot[i, l] * rot_u[l, j]
            rot_out[i, j] = acc
    for i in range(3):
        r_out[i] = vmat[i, 2]


@njit(cache=True)
def _shoot(
    z,
    tensions,
    h,
    youngs,
    shear,
    rho,
    base_anchors,
    tip_local,
    dist_force,
    dist_torque,
    strain,
    curvature,
    position,
    orientation,
    force_nodes,
    moment_nodes,
):
    """One self-consistency pass: loads from the guessed tip pose, then a
    single base-to-tip integration of the strain/curvature field they induce.

    Each interval is integrated with a fourth-order Munthe-Kaas step on
    SE(3); intervals where the frame rotates quickly (tight curl near the
    tapered tip) are subdivided so one substep covers at most
    `_TARGET_STEP_ANGLE` radians of rotation.

    Fills all per-node arrays.  Returns (geometry_ok, strain_clamped).
    The achieved tip pose lands in position[-1] / orientation[-1].
    """
    n = strain.shape[0]
    r_tip = z[:3]
    rot_tip = _exp_so3(z[3:])
    tip_force = np.empty(3)
    tip_moment = np.empty(3)
    if not _chord_loads(r_tip, rot_tip, tensions, base_anchors, tip_local, tip_force, tip_moment):
        return False, False

    clamped = False
    r = np.zeros(3)
    rot = np.eye(3)
    kap = np.empty(3)
    kapt = np.empty(3)
    nm = np.empty((2, 3))
    nmt = np.empty((2, 3))
    dfv = np.empty(3)
    dtv = np.empty(3)
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    kt = np.empty(6)
    u = np.empty(6)
    tb1 = np.empty(6)
    tb2 = np.empty(6)
    rot_u = np.empty((3, 3))
    vmat = np.empty((3, 3))
    r2 = np.empty(3)
    rot2 = np.empty((3, 3))

    for k in range(n - 1):
        eps0, cl = _twist_at(
            r, rot, 0.0, k, rho, youngs, shear, dist_force, dist_torque,
            r_tip, tip_force, tip_moment, kap, nm, dfv, dtv, k1,
        )
        clamped = clamped or cl
        strain[k] = eps0
        for j in range(3):
            curvature[k, j] = kap[j]
            force_nodes[k, j] = nm[0, j]
            moment_nodes[k, j] = nm[1, j]
            position[k, j] = r[j]
        orientation[k] = rot

        wmag = np.sqrt(k1[0] ** 2 + k1[1] ** 2 + k1[2] ** 2)
        m = 1 + int(h * wmag / _TARGET_STEP_ANGLE)
        if m > _MAX_SUBSTEPS:
            m = _MAX_SUBSTEPS
        hs = h / m
        for sub in range(m):
            wb = sub / m
            wm = wb + 0.5 / m
            we = wb + 1.0 / m
            if sub > 0:
                _, cl = _twist_at(
                    r, rot, wb, k, rho, youngs, shear, dist_force, dist_torque,
                    r_tip, tip_force, tip_moment, kapt, nmt, dfv, dtv, k1,
                )
                clamped = clamped or cl
            for i in range(6):
                u[i] = 0.5 * hs * k1[i]
            _pose_advance(r, rot, u, rot_u, vmat, r2, rot2)
            _, cl = _twist_at(
                r2, rot2, wm, k, rho, youngs, shear, dist_force, dist_torque,
                r_tip, tip_force, tip_moment, kapt, nmt, dfv, dtv, kt,
            )
            clamped = clamped or cl
            _dexpinv(u, kt, k2, tb1, tb2)
            for i in range(6):
                u[i] = 0.5 * hs * k2[i]
            _pose_advance(r, rot, u, rot_u, vmat, r2, rot2)
            _, cl = _twist_at(
                r2, rot2, wm, k, rho, youngs, shear, dist_force, dist_torque,
                r_tip, tip_force, tip_moment, kapt, nmt, dfv, dtv, kt,
            )
            clamped = clamped or cl
            _dexpinv(u, kt, k3, tb1, tb2)
            for i in range(6):
                u[i] = hs * k3[i]
            _pose_advance(r, rot, u, rot_u, vmat, r2, rot2)
            _, cl = _twist_at(
                r2, rot2, we, k, rho, youngs, shear, dist_force, dist_torque,
                r_tip, tip_force, tip_moment, kapt, nmt, dfv, dtv, kt,
            )
            clamped = clamped or cl
            _dexpinv(u, kt, k4, tb1, tb2)
            for i in range(6):
                u[i] = hs * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
            _pose_advance(r, rot, u, rot_u, vmat, r2, rot2)
            for i in range(3):
                r[i] = r2[i]
                for j in range(3):
                    rot[i, j] = rot2[i, j]

    epsN, cl = _twist_at(
        r, rot, 1.0, n - 2, rho, youngs, shear, dist_force, dist_torque,
        r_tip, tip_force, tip_moment, kap, nm, dfv, dtv, k1,
    )
    clamped = clamped or cl
    strain[n - 1] = epsN
    for j in range(3):
        curvature[n - 1, j] = kap[j]
        force_nodes[n - 1, j] = nm[0, j]
        moment_nodes[n - 1, j] = nm[1, j]
        position[n - 1, j] = r[j]
    orientation[n - 1] = rot
    return True, clamped


@njit(cache=True)
def _residual(z, length, position, orientation):
    """Tip-pose mismatch between the guess z and the shot shape (meters)."""
    res = np.empty(6)
    res[0] = position[-1, 0] - z[0]
    res[1] = position[-1, 1] - z[1]
    res[2] = position[-1, 2] - z[2]
    rot_guess = _exp_so3(z[3:])
    # relative rotation achieved vs guessed, as a rotation vector
    rel = orientation[-1] @ rot_guess.T
    rv = _log_so3(rel)
    res[3] = length * rv[0]
    res[4] = length * rv[1]
    res[5] = length * rv[2]
    return res


@njit(cache=True)
def _shoot_residual(
    z, tensions, h, youngs, shear, rho, base_anchors, tip_local,
    dist_force, dist_torque, strain, curvature, position, orientation,
    force_nodes, moment_nodes, length, out,
):
    """Fused shoot + tip-pose residual; returns False on degenerate chords."""
    ok, _ = _shoot(
        z, tensions, h, youngs, shear, rho, base_anchors, tip_local,
        dist_force, dist_torque, strain, curvature, position, orientation,
        force_nodes, moment_nodes,
    )
    if not ok:
        for i in range(6):
            out[i] = 1e6
        return False
    res = _residual(z, length, position, orientation)
    for i in range(6):
        out[i] = res[i]
    return True


def integrate_frames(
    geometry: LimbGeometry, strain: np.ndarray, curvature: np.ndarray
) -> tuple:
    """Rebuild centerline positions and frames from strain and curvature."""
    strain = np.ascontiguousarray(strain, dtype=np.float64)
    curvature = np.ascontiguousarray(curvature, dtype=np.float64)
    n = strain.shape[0]
    if curvature.shape != (n, 3):
        raise ValueError("curvature must be (N,3) matching strain length")
    h = geometry.length / (n - 1)
    position = np.zeros((n, 3))
    orientation = np.zeros((n, 3, 3))
    _integrate_kernel(h, strain, curvature, position, orientation)
    return position, orientation


def solve_statics(
    geometry: LimbGeometry,
    material: MaterialProperties,
    forces: TendonForces,
    options: SolverOptions = SolverOptions(),
    initial_guess: np.ndarray = None,
) -> RodConfiguration:
    """Equilibrium configuration under the given tendon tensions.

    The self-consistency loop (loads from the current shape -> constitutive
    update -> frame reconstruction) is driven by a root iteration on the tip
    pose; when the full load does not converge directly, the tensions are
    ramped up in stages with warm starts.  `initial_guess` is an optional
    starting tip pose (position + rotation vector, 6 numbers), e.g. from a
    previously solved nearby force vector; it only accelerates the solve and
    never changes which equilibrium is reported unusable.

    Raises ConvergenceError if the iteration stalls, MaterialLimitError if
    the axial strain collapses past the valid range, and
    DegenerateGeometryError if a tendon chord length vanishes.
    """
    s = geometry.arc_nodes()
    n = geometry.node_count
    h = s[1] - s[0]
    area = geometry.cross_section_area(s)
    youngs = float(material.youngs_modulus)
    shear = float(material.shear_modulus)
    rho = np.ascontiguousarray(geometry.cross_section_radius(s))
    base_anchors, tip_local = _tendon_anchor_frames(geometry)
    base_anchors = np.ascontiguousarray(base_anchors)
    tip_local = np.ascontiguousarray(tip_local)
    tensions = np.ascontiguousarray(forces.tensions)

    strain = np.zeros(n)
    curvature = np.zeros((n, 3))
    position = np.zeros((n, 3))
    orientation = np.zeros((n, 3, 3))
    force_nodes = np.zeros((n, 3))
    moment_nodes = np.zeros((n, 3))
    dist_force = np.zeros((n, 3))
    dist_torque = np.zeros((n, 3))

    z_rest = np.array([geometry.length, 0.0, 0.0, 0.0, 0.0, 0.0])

    def newton(t_vec, z_start, eval_cap):
        """Root-find the tip pose with MINPACK's Powell hybrid method.

        Returns (z, evaluations, status): 0 converged below the position
        tolerance, 1 stalled, 3 degenerate geometry.
        """
        t_vec = np.ascontiguousarray(t_vec)
        bad = {"degenerate": False}
        out = np.empty(6)

        def residual_of(z):
            if not _shoot_residual(
                np.ascontiguousarray(z), t_vec, h, youngs, shear, rho,
                base_anchors, tip_local, dist_force, dist_torque,
                strain, curvature, position, orientation,
                force_nodes, moment_nodes, geometry.length, out,
            ):
                bad["degenerate"] = True
            return out.copy()

        sol = optimize.root(
            residual_of, z_start, method="hybr",
            options={"xtol": 1e-14, "maxfev": eval_cap},
        )
        nfev = int(sol.nfev)
        if bad["degenerate"]:
            return sol.x, nfev, 3
        if np.linalg.norm(residual_of(sol.x)) < options.tolerance:
            return sol.x, nfev + 1, 0
        return sol.x, nfev + 1, 1

    def stage_clamped(z, t_vec):
        """Whether the converged stage already sits on the strain floor."""
        ok, clamped = _shoot(
            np.ascontiguousarray(z), np.ascontiguousarray(t_vec),
            h, youngs, shear, rho, base_anchors, tip_local,
            dist_force, dist_torque, strain, curvature, position,
            orientation, force_nodes, moment_nodes,
        )
        return (not ok) or clamped

    def solve_tensions():
        """Adaptive load continuation with warm starts.

        The load fraction expands after every converged stage and bisects
        toward the last converged fraction after a failed one.  A converged
        stage whose axial strain already sits on the clamp floor means the
        material limit is reached below the requested load, so larger loads
        cannot be equilibria of the valid model: report status 2 at once.
        """
        eval_cap = 100 * max(options.max_iterations // 100, 1)
        stage_budget = 8 * eval_cap
        min_step = 1.0 / 64.0
        if initial_guess is not None:
            z0 = np.asarray(initial_guess, dtype=np.float64)
            if z0.shape != (6,):
                raise ValueError("initial_guess must have 6 entries")
            zt, its, status = newton(tensions, z0.copy(), eval_cap)
            if status == 0:
                if stage_clamped(zt, tensions):
                    return zt, its, 2
                return zt, its, 0
            if status == 3:
                return zt, its, 3
        # Always ramp the load from a small first stage instead of attempting
        # the full load at once: the shooting residual has multiple roots
        # (the thin tip can curl into spurious equilibria), and a small first
        # stage keeps the iteration on the branch continuously connected to
        # the rest shape, which the doubling stages then track.
        z = z_rest.copy()
        alpha_done = 0.0
        alpha = 0.25
        total = 0
        while True:
            zt, its, status = newton(alpha * tensions, z, eval_cap)
            total += its
            if status == 3:
                return zt, total, 3
            if status == 0:
                if stage_clamped(zt, alpha * tensions):
                    return zt, total, 2
                z = zt
                step = alpha - alpha_done
                alpha_done = alpha
                if alpha_done >= 1.0:
                    return z, total, 0
                alpha = min(1.0, alpha_done + 2.0 * step)
            else:
                alpha = 0.5 * (alpha_done + alpha)
                if alpha - alpha_done < min_step:
                    return z, total, 1
            if total > stage_budget:
                return z, total, 1

    def refresh_distributed_loads():
        """Buoyancy-corrected weight resultants integrated tip-to-base."""
        weight = (material.mass_density - options.water_density) * area * GRAVITY
        f = np.zeros((n, 3))
        f[:, 2] = -weight
        torque = np.cross(position, f)
        dist_force[:] = 0.0
        dist_torque[:] = 0.0
        for k in range(n - 2, -1, -1):
            dist_force[k] = dist_force[k + 1] + 0.5 * h * (f[k] + f[k + 1])
            dist_torque[k] = dist_torque[k + 1] + 0.5 * h * (torque[k] + torque[k + 1])

    z, iterations, status = solve_tensions()
    if options.include_gravity and status == 0:
        for _ in range(10):
            old_tip = position[-1].copy()
            refresh_distributed_loads()
            z, its, status = solve_tensions()
            iterations += its
            if status != 0:
                break
            if np.linalg.norm(position[-1] - old_tip) < options.tolerance:
                break

    clamped = False
    if status == 0:
        # final pass at the converged pose so every array is consistent
        ok, clamped = _shoot(
            z, tensions, h, youngs, shear, rho,
            base_anchors, tip_local, dist_force, dist_torque,
            strain, curvature, position, orientation, force_nodes, moment_nodes,
        )
        if not ok:
            status = 3

    config = RodConfiguration(
        arc=s,
        strain=strain,
        curvature=curvature,
        position=position,
        orientation=orientation,
        internal_force=force_nodes,
        internal_moment=moment_nodes,
        iterations=iterations,
        converged=status == 0,
        tip_pose=np.asarray(z, dtype=np.float64),
    )
    if status == 3:
        raise DegenerateGeometryError("tendon anchors coincide during iteration")
    if status == 2 or (status == 0 and clamped):
        raise MaterialLimitError(
            "axial strain reached the material limit (min strain %.3f)"
            % float(strain.min())
        )
    if status != 0:
        residual = float(
            np.linalg.norm(_residual(z, geometry.length, position, orientation))
        )
        raise ConvergenceError(
            "no convergence after %d iterations (tip-pose residual %.3e m)"
            % (iterations, residual),
            configuration=config,
            residual=residual,
        )
    return config
