"""Billiard flow and boundary map on flat tables with disk scatterers.

Trajectories are straight lines between elastic reflections; on a torus the
tracer walks the ray through fundamental cells and tests the finitely many
obstacle translates near each cell, so flat geodesics stay exact to roundoff.
Boundary phase points are (component, arclength s, tangential momentum eta)
with |eta| < 1; sqrt(1 - eta^2) is the normal momentum, i.e. sin of the angle
the direction makes with the boundary tangent.

On top of the map sit the linearized (Jacobi) transport and the dynamical
diagnostics: monodromy matrices, Lyapunov exponents, conjugate-point scans,
Birkhoff averages against the ds deta invariant measure, and loop-return
statistics.  All operations are pure functions of an immutable SurfaceSpec;
the Monte Carlo estimators are deterministic given their seed and accumulate
with compensated (exact) summation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .geometry import (
    SurfaceSpec,
    boundary_eval,
    boundary_length,
    component_count,
    component_length,
)

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

#: Impacts with sin(angle to tangent) below this are treated as grazing.
TANGENT_TOL = 1e-8
#: A single flight longer than this means the geometry is broken.
MAX_FLIGHT = 1e4


class TangentialImpact(RuntimeError):
    pass


class MaxWrapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class PhasePoint:
    component: int
    s: float
    eta: float


@dataclass(frozen=True)
class TrajectorySegment:
    start: tuple[float, float]
    end: tuple[float, float]
    direction: tuple[float, float]
    length: float
    end_component: int | None
    end_s: float | None


@dataclass(frozen=True)
class Impact:
    t: float
    x: float
    y: float
    component: int
    s: float
    eta: float


@dataclass(frozen=True)
class JacobiState:
    j: float
    jp: float


class _Hit(NamedTuple):
    t: float
    component: int
    s: float
    point: tuple[float, float]
    tangent: tuple[float, float]
    normal: tuple[float, float]
    curvature: float
    sin_phi: float


class _Table:
    """Precomputed scatterer layout for the hot tracing loop."""

    __slots__ = ("torus", "w", "h", "circles", "circles_ext", "n_obs", "wall_component")

    def __init__(self, spec: SurfaceSpec):
        self.torus = spec.is_torus
        self.w = spec.width
        self.h = spec.height
        self.n_obs = len(spec.obstacles)
        self.circles = tuple((o.center[0], o.center[1], o.radius, k)
                             for k, o in enumerate(spec.obstacles))
        if self.torus:
            self.circles_ext = tuple(
                (cx + ox * self.w, cy + oy * self.h, r, k)
                for (cx, cy, r, k) in self.circles
                for ox in (-1, 0, 1) for oy in (-1, 0, 1))
            self.wall_component = None
        else:
            self.circles_ext = self.circles
            self.wall_component = self.n_obs


@lru_cache(maxsize=64)
def _table(spec: SurfaceSpec) -> _Table:
    return _Table(spec)


def reflect(direction, normal, tol: float = TANGENT_TOL):
    """Mirror law: keep the tangential component, negate the normal one.

    Raises TangentialImpact when the incidence is within ``tol`` of grazing.
    """
    dn = direction[0] * normal[0] + direction[1] * normal[1]
    if abs(dn) < tol:
        raise TangentialImpact(f"grazing incidence (|d.n| = {abs(dn):.3e})")
    return (direction[0] - 2.0 * dn * normal[0],
            direction[1] - 2.0 * dn * normal[1])


def _circle_hit(tab: _Table, px, py, dx, dy, hi):
    """Earliest entry into any scatterer within ray window (0, hi]."""
    best = hi
    best_k = -1
    best_c = (0.0, 0.0)
    for cx, cy, r, k in tab.circles_ext:
        mx = cx - px
        my = cy - py
        b = mx * dx + my * dy
        if b <= 0.0:
            continue  # center behind, or departing the launch circle
        c0 = mx * mx + my * my - r * r
        disc = b * b - c0
        if disc <= 0.0:
            continue
        t_hit = c0 / (b + math.sqrt(disc))
        if 0.0 < t_hit <= best:
            best = t_hit
            best_k = k
            best_c = (cx, cy)
    return best, best_k, best_c


def _hit_record(tab, spec, t, k, hx, hy, cx, cy, dx, dy):
    r = spec.obstacles[k].radius
    nx = (hx - cx) / r
    ny = (hy - cy) / r
    sin_phi = -(dx * nx + dy * ny)
    if sin_phi < TANGENT_TOL:
        raise TangentialImpact(f"grazing impact on obstacle {k} (sin phi = {sin_phi:.3e})")
    theta = math.atan2(ny, nx) % TWO_PI
    if tab.torus:
        hx %= tab.w
        hy %= tab.h
    return _Hit(t=t, component=k, s=theta * r, point=(hx, hy),
                tangent=(-ny, nx), normal=(nx, ny), curvature=1.0 / r,
                sin_phi=sin_phi)


_WALL_FRAMES = (
    ((1.0, 0.0), (0.0, 1.0)),    # bottom
    ((0.0, 1.0), (-1.0, 0.0)),   # right
    ((-1.0, 0.0), (0.0, -1.0)),  # top
    ((0.0, -1.0), (1.0, 0.0)),   # left
)


def _trace(spec: SurfaceSpec, px, py, dx, dy, cap=MAX_FLIGHT, visitor=None) -> _Hit:
    """Trace a unit-speed ray to its first boundary impact.

    ``visitor(x, y, dx, dy, length)`` is called for every straight
    sub-segment the ray covers (one per fundamental cell on a torus),
    with (x, y) reduced into the base rectangle.
    """
    tab = _table(spec)
    if not tab.torus:
        return _trace_rect(tab, spec, px, py, dx, dy, cap, visitor)

    w, h = tab.w, tab.h
    px %= w
    if px >= w:
        px -= w
    py %= h
    if py >= h:
        py -= h
    t_accum = 0.0
    while t_accum <= cap:
        if px == 0.0 and dx < 0.0:
            px = w
        if py == 0.0 and dy < 0.0:
            py = h
        tx = math.inf if dx == 0.0 else ((w - px) / dx if dx > 0.0 else -px / dx)
        ty = math.inf if dy == 0.0 else ((h - py) / dy if dy > 0.0 else -py / dy)
        t_exit = tx if tx <= ty else ty
        t_hit, k, (cx, cy) = _circle_hit(tab, px, py, dx, dy, t_exit + 1e-9)
        if k >= 0:
            if visitor is not None:
                visitor(px, py, dx, dy, t_hit)
            return _hit_record(tab, spec, t_accum + t_hit, k,
                               px + t_hit * dx, py + t_hit * dy, cx, cy, dx, dy)
        if visitor is not None:
            visitor(px, py, dx, dy, t_exit)
        t_accum += t_exit
        px += t_exit * dx
        py += t_exit * dy
        px %= w
        if px >= w:
            px -= w
        py %= h
        if py >= h:
            py -= h
    raise MaxWrapExceeded(f"no impact within flight cap {cap}")


def _trace_rect(tab, spec, px, py, dx, dy, cap, visitor):
    w, h = tab.w, tab.h
    t_wall = math.inf
    wall = -1
    if dy < 0.0 and -py / dy > 1e-12 and -py / dy < t_wall:
        t_wall, wall = -py / dy, 0
    if dx > 0.0 and (w - px) / dx > 1e-12 and (w - px) / dx < t_wall:
        t_wall, wall = (w - px) / dx, 1
    if dy > 0.0 and (h - py) / dy > 1e-12 and (h - py) / dy < t_wall:
        t_wall, wall = (h - py) / dy, 2
    if dx < 0.0 and -px / dx > 1e-12 and -px / dx < t_wall:
        t_wall, wall = -px / dx, 3

    t_hit, k, (cx, cy) = _circle_hit(tab, px, py, dx, dy, min(t_wall, cap))
    if k >= 0:
        if visitor is not None:
            visitor(px, py, dx, dy, t_hit)
        return _hit_record(tab, spec, t_hit, k, px + t_hit * dx, py + t_hit * dy,
                           cx, cy, dx, dy)
    if wall < 0 or t_wall > cap:
        raise MaxWrapExceeded(f"no impact within flight cap {cap}")
    if visitor is not None:
        visitor(px, py, dx, dy, t_wall)
    hx, hy = px + t_wall * dx, py + t_wall * dy
    tangent, normal = _WALL_FRAMES[wall]
    sin_phi = -(dx * normal[0] + dy * normal[1])
    if sin_phi < TANGENT_TOL:
        raise TangentialImpact(f"grazing impact on outer wall (sin phi = {sin_phi:.3e})")
    if wall == 0:
        s = hx
    elif wall == 1:
        s = w + hy
    elif wall == 2:
        s = w + h + (w - hx)
    else:
        s = 2 * w + h + (h - hy)
    return _Hit(t=t_wall, component=tab.wall_component, s=s, point=(hx, hy),
                tangent=tangent, normal=normal, curvature=0.0, sin_phi=sin_phi)


def _lift(spec: SurfaceSpec, p: PhasePoint):
    """Inward unit direction over a boundary phase point."""
    nu_sq = 1.0 - p.eta * p.eta
    if nu_sq < TANGENT_TOL * TANGENT_TOL:
        raise TangentialImpact(f"phase point is tangential (eta = {p.eta})")
    nu = math.sqrt(nu_sq)
    fr = boundary_eval(spec, p.component, p.s)
    d = (p.eta * fr.tangent[0] + nu * fr.normal[0],
         p.eta * fr.tangent[1] + nu * fr.normal[1])
    return fr.point, d


def _step(spec: SurfaceSpec, p: PhasePoint, cap=MAX_FLIGHT):
    """One bounce: returns (next phase point, hit record)."""
    (px, py), (dx, dy) = _lift(spec, p)
    hit = _trace(spec, px, py, dx, dy, cap)
    rdx, rdy = reflect((dx, dy), hit.normal)
    eta = rdx * hit.tangent[0] + rdy * hit.tangent[1]
    return PhasePoint(hit.component, hit.s, eta), hit


def billiard_map(spec: SurfaceSpec, p: PhasePoint) -> tuple[PhasePoint, float]:
    """First-return map of the flow to the boundary, with the flight length."""
    q, hit = _step(spec, p)
    return q, hit.t


def map_jacobian_det(spec: SurfaceSpec, p: PhasePoint,
                     delta: float = 1e-6) -> float | None:
    """Jacobian determinant of the boundary map at ``p`` by fourth-order
    central finite differences (the map preserves ds deta, so this is an
    independent symplecticity probe).

    Returns None when the perturbed evaluations straddle a discontinuity of
    the map (different impact component or a jump in the image), in which
    case the determinant is meaningless and the caller should resample.
    """
    length = component_length(spec, p.component)

    def wrap(ds):
        ds = math.fmod(ds, length)
        if ds > 0.5 * length:
            ds -= length
        elif ds < -0.5 * length:
            ds += length
        return ds

    base, _ = billiard_map(spec, p)

    def derivs(unit):
        images = []
        for step in (2, 1, -1, -2):
            q, _ = billiard_map(spec, PhasePoint(
                p.component, p.s + unit[0] * step * delta,
                p.eta + unit[1] * step * delta))
            if q.component != base.component or abs(q.eta - base.eta) > 0.01 \
                    or abs(wrap(q.s - base.s)) > 0.01 * length:
                return None
            images.append(q)
        qp2, qp1, qm1, qm2 = images
        ds = (-wrap(qp2.s - qm2.s) + 8.0 * wrap(qp1.s - qm1.s)) / (12.0 * delta)
        de = (-(qp2.eta - qm2.eta) + 8.0 * (qp1.eta - qm1.eta)) / (12.0 * delta)
        return ds, de

    col_s = derivs((1.0, 0.0))
    col_e = derivs((0.0, 1.0))
    if col_s is None or col_e is None:
        return None
    return col_s[0] * col_e[1] - col_e[0] * col_s[1]


def flow(spec: SurfaceSpec, point, direction, t: float):
    """Unit-speed broken-geodesic motion for time ``t`` from an interior point.

    Returns (point, direction, impacts, segments); the impact log records
    every reflection with its time and outgoing tangential momentum.
    """
    if t < 0.0:
        raise ValueError("flow time must be nonnegative")
    norm = math.hypot(*direction)
    dx, dy = direction[0] / norm, direction[1] / norm
    px, py = point
    elapsed = 0.0
    impacts: list[Impact] = []
    segments: list[TrajectorySegment] = []
    while True:
        remaining = t - elapsed
        try:
            hit = _trace(spec, px, py, dx, dy)
        except MaxWrapExceeded:
            hit = None
        if hit is None or hit.t > remaining:
            end = (px + remaining * dx, py + remaining * dy)
            tab = _table(spec)
            if tab.torus:
                end = (end[0] % tab.w, end[1] % tab.h)
            segments.append(TrajectorySegment((px, py), end, (dx, dy),
                                              remaining, None, None))
            return end, (dx, dy), impacts, segments
        segments.append(TrajectorySegment((px, py), hit.point, (dx, dy),
                                          hit.t, hit.component, hit.s))
        dx, dy = reflect((dx, dy), hit.normal)
        eta = dx * hit.tangent[0] + dy * hit.tangent[1]
        elapsed += hit.t
        px, py = hit.point
        impacts.append(Impact(elapsed, px, py, hit.component, hit.s, eta))


def write_orbit_csv(path, impacts) -> None:
    """Dump an impact log as CSV rows (t, x, y, component, s, eta)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "component", "s", "eta"])
        for imp in impacts:
            writer.writerow([repr(imp.t), repr(imp.x), repr(imp.y),
                             imp.component, repr(imp.s), repr(imp.eta)])


# ---------------------------------------------------------------------------
# Jacobi transport.  Free flight is the shear [[1, L], [0, 1]]; a reflection
# applies [[-1, 0], [2*kappa/sin_phi, -1]].  Note the sign convention:
# the obstacle boundary curves *away* from the table, so transporting an
# actual wavefront uses the signed curvature -kappa(s) (kappa being the
# unsigned atlas value 1/radius), which makes reflections defocusing.
# The monodromy/Lyapunov bookkeeping below plugs in the unsigned value.

def jacobi_propagate(state: JacobiState, flight_length: float) -> JacobiState:
    """Free transport of a transverse deviation over a straight flight."""
    if flight_length < 0.0:
        raise ValueError("flight length must be nonnegative")
    return JacobiState(state.j + flight_length * state.jp, state.jp)


def jacobi_reflect(state: JacobiState, kappa: float, sin_phi: float) -> JacobiState:
    """Reflection jump (J, J') -> (-J, (2*kappa/sin_phi) J - J')."""
    if sin_phi <= TANGENT_TOL:
        raise TangentialImpact(f"sin phi = {sin_phi:.3e} too close to grazing")
    return JacobiState(-state.j, (2.0 * kappa / sin_phi) * state.j - state.jp)


def flight_matrix(flight_length: float) -> np.ndarray:
    return np.array([[1.0, flight_length], [0.0, 1.0]])


def reflection_matrix(kappa: float, sin_phi: float) -> np.ndarray:
    return np.array([[-1.0, 0.0], [2.0 * kappa / sin_phi, -1.0]])


def jacobi_monodromy(spec: SurfaceSpec, p: PhasePoint, bounces: int) -> np.ndarray:
    """Product of reflection*flight matrices along ``bounces`` steps of the orbit,
    using the unsigned atlas curvature."""
    m = np.eye(2)
    for _ in range(bounces):
        p, hit = _step(spec, p)
        m = reflection_matrix(hit.curvature, hit.sin_phi) @ flight_matrix(hit.t) @ m
    return m


def periodic_orbit_rate(spec: SurfaceSpec, p: PhasePoint, period_bounces: int) -> float:
    """Expansion rate per unit time of a periodic orbit, from the leading
    eigenvalue of its transport monodromy over one period.

    Unstable periodic orbits cannot be followed numerically for long (roundoff
    is amplified by the orbit's own expansion factor every bounce), so the
    rate comes from one exact period rather than a long-orbit estimate.
    """
    m = np.eye(2)
    t_period = 0.0
    for _ in range(period_bounces):
        p, hit = _step(spec, p)
        m = reflection_matrix(hit.curvature, hit.sin_phi) @ flight_matrix(hit.t) @ m
        t_period += hit.t
    eigs = np.linalg.eigvals(m)
    return float(math.log(max(abs(eigs))) / t_period)


def conjugate_point_scan(spec: SurfaceSpec, p: PhasePoint, horizon: float,
                         curvature_override: Callable[[int, float], float] | None = None,
                         ) -> float | None:
    """First time a transverse deviation started as (J, J') = (0, 1) vanishes.

    Transport uses the signed boundary curvature (negative on obstacle
    circles, which curve away from the table), so dispersing tables return
    None.  ``curvature_override(component, s)`` substitutes the atlas
    curvature at impacts; injecting a negative value models a focusing
    mirror and produces a finite conjugate time.
    """
    j, jp = 0.0, 1.0
    t = 0.0
    while t < horizon:
        try:
            p, hit = _step(spec, p)
        except TangentialImpact:
            log.info("conjugate scan truncated by a grazing impact at t=%.6g", t)
            return None
        leg = min(hit.t, horizon - t)
        if jp != 0.0:
            tau = -j / jp
            if 0.0 < tau <= leg and t + tau > 1e-9:
                return t + tau
        if hit.t > horizon - t:
            return None
        t += hit.t
        j += hit.t * jp
        kappa = hit.curvature
        if curvature_override is not None:
            kappa = curvature_override(hit.component, hit.s)
        # signed curvature with respect to the inward normal
        j, jp = -j, (2.0 * -kappa / hit.sin_phi) * j - jp
    return None


def _spectral_norm_2x2(a, b, c, d):
    p = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = max(p * p - 4.0 * det * det, 0.0)
    return math.sqrt(0.5 * (p + math.sqrt(disc)))


@dataclass(frozen=True)
class LyapunovEstimate:
    value: float
    stderr: float
    bounces: int
    time: float
    discarded: int


def lyapunov_estimate(spec: SurfaceSpec, p: PhasePoint, bounces: int,
                      seed: int = 0, renorm_every: int = 32,
                      blocks: int = 8) -> LyapunovEstimate:
    """Exponential growth rate per unit time of the Jacobi transport product.

    The running matrix product is renormalized every ``renorm_every`` bounces
    to avoid overflow; the standard error comes from exponents over
    ``blocks`` consecutive orbit blocks.  Orbits that reach a grazing impact
    are discarded and relaunched from a fresh random phase point.
    """
    if bounces < 100:
        raise ValueError("need at least 100 bounces for a Lyapunov estimate")
    rng = np.random.default_rng(seed)
    discarded = 0
    while True:
        try:
            return _lyapunov_run(spec, p, bounces, renorm_every, blocks, discarded)
        except TangentialImpact:
            discarded += 1
            log.info("lyapunov orbit discarded after grazing impact (%d so far)", discarded)
            if discarded > 16:
                raise
            p = random_phase_point(spec, rng)


def _lyapunov_run(spec, p, bounces, renorm_every, blocks, discarded):
    a, b, c, d = 1.0, 0.0, 0.0, 1.0
    log_scale = 0.0
    t_total = 0.0
    marks = []
    block_len = max(1, bounces // blocks)
    for i in range(1, bounces + 1):
        p, hit = _step(spec, p)
        leg, g = hit.t, 2.0 * hit.curvature / hit.sin_phi
        # accumulate M <- R(kappa, sin_phi) @ T(leg) @ M
        a, b, c, d = (-a - leg * c, -b - leg * d,
                      g * a + (g * leg - 1.0) * c, g * b + (g * leg - 1.0) * d)
        t_total += leg
        if i % renorm_every == 0:
            nrm = math.sqrt(a * a + b * b + c * c + d * d)
            a, b, c, d = a / nrm, b / nrm, c / nrm, d / nrm
            log_scale += math.log(nrm)
        if i % block_len == 0:
            marks.append((log_scale + math.log(_spectral_norm_2x2(a, b, c, d)), t_total))
    total_log = log_scale + math.log(_spectral_norm_2x2(a, b, c, d))
    value = total_log / t_total
    exps = []
    prev = (0.0, 0.0)
    for mark in marks:
        dt = mark[1] - prev[1]
        if dt > 0.0:
            exps.append((mark[0] - prev[0]) / dt)
        prev = mark
    stderr = float(np.std(exps, ddof=1) / math.sqrt(len(exps))) if len(exps) > 1 else 0.0
    return LyapunovEstimate(value=value, stderr=stderr, bounces=bounces,
                            time=t_total, discarded=discarded)


@dataclass(frozen=True)
class BirkhoffAverage:
    empirical: float
    liouville: float
    gap: float
    bounces: int
    discarded: int


def liouville_mean(spec: SurfaceSpec, observable, s_points: int = 1024,
                   eta_points: int = 64) -> float:
    """Mean of an observable on boundary phase space against ds deta / (2 |bd M|)."""
    nodes, weights = np.polynomial.legendre.leggauss(eta_points)
    total = 0.0
    for comp in range(component_count(spec)):
        length = component_length(spec, comp)
        n_s = max(64, int(round(s_points * length / boundary_length(spec))))
        ds = length / n_s
        for i in range(n_s):
            s = (i + 0.5) * ds
            row = math.fsum(w * observable(comp, s, eta)
                            for eta, w in zip(nodes, weights))
            total += row * ds
    return total / (2.0 * boundary_length(spec))


def birkhoff_average(spec: SurfaceSpec, p: PhasePoint, observable,
                     bounces: int, seed: int = 0) -> BirkhoffAverage:
    """Empirical orbit mean of an observable vs its invariant-measure mean."""
    if bounces < 1:
        raise ValueError("need at least one bounce")
    rng = np.random.default_rng(seed)
    discarded = 0
    while True:
        try:
            values = []
            q = p
            for _ in range(bounces):
                values.append(observable(q.component, q.s, q.eta))
                q, _hit = _step(spec, q)
            break
        except TangentialImpact:
            discarded += 1
            log.info("birkhoff orbit discarded after grazing impact (%d so far)", discarded)
            if discarded > 16:
                raise
            p = random_phase_point(spec, rng)
    empirical = math.fsum(values) / bounces
    liou = liouville_mean(spec, observable)
    return BirkhoffAverage(empirical=empirical, liouville=liou,
                           gap=abs(empirical - liou), bounces=bounces,
                           discarded=discarded)


def orbit_means(spec: SurfaceSpec, p: PhasePoint, observable, bounces: int):
    """Running empirical means after 1..bounces bounces (single orbit pass)."""
    means = np.empty(bounces)
    acc = 0.0
    q = p
    for i in range(bounces):
        acc += observable(q.component, q.s, q.eta)
        means[i] = acc / (i + 1)
        q, _hit = _step(spec, q)
    return means


def loop_set_measure(spec: SurfaceSpec, q, samples: int, length_cap: float,
                     epsilon: float, seed: int = 0) -> float:
    """Fraction of random launch directions from boundary point ``q`` whose
    trajectory passes within ``epsilon`` of ``q`` again before ``length_cap``.

    The departure leg is excluded: a return only counts from the first
    reflection onward.  With a fixed seed the counted set is nested across
    epsilon, so fractions are monotone in epsilon by construction.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    component, s = (q.component, q.s) if isinstance(q, PhasePoint) else q
    fr = boundary_eval(spec, component, s)
    qx, qy = fr.point
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(samples):
        eta = rng.uniform(-1.0, 1.0)
        try:
            if _returns_within(spec, PhasePoint(component, s, eta),
                               qx, qy, length_cap, epsilon):
                hits += 1
        except TangentialImpact:
            log.info("loop sample hit a grazing impact; counted as non-returning")
    return hits / samples


def _returns_within(spec, p, qx, qy, cap, eps) -> bool:
    tab = _table(spec)
    if tab.torus:
        q_images = [(qx + ox * tab.w, qy + oy * tab.h)
                    for ox in (-1, 0, 1) for oy in (-1, 0, 1)]
    else:
        q_images = [(qx, qy)]
    eps_sq = eps * eps
    found = False
    budget = 0.0  # trajectory length still eligible for a return

    def visitor(x, y, dx, dy, seg_len):
        nonlocal found, budget
        if found or budget <= 0.0:
            budget -= seg_len
            return
        reach = seg_len if seg_len <= budget else budget
        budget -= seg_len
        for ix, iy in q_images:
            mx, my = ix - x, iy - y
            proj = mx * dx + my * dy
            if proj < 0.0:
                proj = 0.0
            elif proj > reach:
                proj = reach
            ex, ey = mx - proj * dx, my - proj * dy
            if ex * ex + ey * ey <= eps_sq:
                found = True
                return

    (px, py), (dx, dy) = _lift(spec, p)
    try:
        hit = _trace(spec, px, py, dx, dy)  # departure leg: never counts
    except MaxWrapExceeded:
        return False
    if hit.t >= cap:
        return False
    budget = cap - hit.t
    while budget > 0.0 and not found:
        dx, dy = reflect((dx, dy), hit.normal)
        px, py = hit.point
        try:
            hit = _trace(spec, px, py, dx, dy, visitor=visitor)
        except MaxWrapExceeded:
            break
    return found


def random_phase_point(spec: SurfaceSpec, rng) -> PhasePoint:
    """Uniform draw from boundary phase space (components weighted by length)."""
    lengths = [component_length(spec, c) for c in range(component_count(spec))]
    u = rng.uniform(0.0, sum(lengths))
    comp = 0
    while comp < len(lengths) - 1 and u > lengths[comp]:
        u -= lengths[comp]
        comp += 1
    return PhasePoint(comp, min(u, lengths[comp]), rng.uniform(-1.0, 1.0))
