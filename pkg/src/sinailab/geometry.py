"""Flat billiard tables: a torus or rectangle minus disjoint disk obstacles.

Every removed disk presents a boundary that curves away from the remaining
domain, which is what makes these tables dispersing.  All geometry here is
exact closed form: arclength frames along the boundary, component
bookkeeping, obstacle-layout validation, and the embedding counts
(genus of the closed surface the table sits in, number of capping disks)
that the nodal topology checks consume.

A built :class:`SurfaceSpec` is immutable and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

DIRICHLET = "dirichlet"
NEUMANN = "neumann"

# Clearance between boundary pieces is anchored to the default eigensolver
# grid: anything closer than CLEARANCE_CELLS cells at DEFAULT_RESOLUTION
# risks fusing under the staircase mask.
DEFAULT_RESOLUTION = 128
CLEARANCE_CELLS = 10

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    """Invalid table configuration."""


class OverlappingObstacles(GeometryError):
    def __init__(self, message, clearance=None):
        super().__init__(message)
        self.clearance = clearance


class ObstacleOutsideDomain(GeometryError):
    pass


class TorusWithoutObstacle(GeometryError):
    pass


class UnknownComponent(LookupError):
    pass


@dataclass(frozen=True)
class Torus:
    width: float
    height: float


@dataclass(frozen=True)
class Rectangle:
    width: float
    height: float


@dataclass(frozen=True)
class Obstacle:
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class SurfaceSpec:
    """A validated billiard table.

    ``genus_tilde`` and ``holes`` describe the closed surface the table embeds
    in: a torus base keeps genus 1 and needs one capping disk per obstacle;
    a rectangle base caps to a sphere, so the outer boundary adds one hole.
    """

    base: Torus | Rectangle
    obstacles: tuple[Obstacle, ...]
    bc: str
    genus_tilde: int
    holes: int

    @property
    def is_torus(self) -> bool:
        return isinstance(self.base, Torus)

    @property
    def width(self) -> float:
        return self.base.width

    @property
    def height(self) -> float:
        return self.base.height

    def base_area(self) -> float:
        return self.base.width * self.base.height

    def area(self) -> float:
        """Exact flat area of the table (base minus obstacle disks)."""
        return self.base_area() - sum(math.pi * o.radius**2 for o in self.obstacles)

    @property
    def euler_defect(self) -> int:
        """Lower-bound offset 2 - 2*genus_tilde - holes used by the nodal checks."""
        return 2 - 2 * self.genus_tilde - self.holes


class Frame(NamedTuple):
    """Arclength frame on the boundary: point, unit tangent, inward unit normal,
    and the (unsigned) geodesic curvature of the component."""

    point: tuple[float, float]
    tangent: tuple[float, float]
    normal: tuple[float, float]
    curvature: float


def clearance_threshold(width: float) -> float:
    return CLEARANCE_CELLS * width / DEFAULT_RESOLUTION


def _validate_obstacles(base, obstacles):
    w, hgt = base.width, base.height
    thr = clearance_threshold(w)
    torus = isinstance(base, Torus)

    for i, ob in enumerate(obstacles):
        if ob.radius <= 0.0:
            raise GeometryError(f"obstacle {i}: radius must be positive, got {ob.radius}")
        if not torus:
            cx, cy = ob.center
            margin = min(cx - ob.radius, w - cx - ob.radius,
                         cy - ob.radius, hgt - cy - ob.radius)
            if margin < 0.0:
                raise ObstacleOutsideDomain(
                    f"obstacle {i} sticks out of the rectangle (margin = {margin:.6g})")
            if margin < thr:
                raise ObstacleOutsideDomain(
                    f"obstacle {i} too close to the outer walls "
                    f"(margin = {margin:.6g} < clearance {thr:.6g})")

    offsets = [(0.0, 0.0)]
    if torus:
        offsets = [(dx * w, dy * hgt) for dx in (-1, 0, 1) for dy in (-1, 0, 1)]
    for i in range(len(obstacles)):
        for j in range(i, len(obstacles)):
            ci, cj = obstacles[i], obstacles[j]
            for ox, oy in offsets:
                if i == j and ox == 0.0 and oy == 0.0:
                    continue
                d = math.hypot(ci.center[0] - cj.center[0] + ox,
                               ci.center[1] - cj.center[1] + oy)
                clearance = d - ci.radius - cj.radius
                if clearance < thr:
                    what = (f"obstacle {i} overlaps its own periodic image"
                            if i == j else f"obstacles {i} and {j} too close")
                    raise OverlappingObstacles(
                        f"{what} (clearance = {clearance:.6g}, required {thr:.6g})",
                        clearance=clearance)


def build_surface(draft: dict) -> SurfaceSpec:
    """Validate a raw configuration dict and return an immutable SurfaceSpec.

    Expected keys: ``base`` ("torus" | "rectangle"), ``width``, ``height``,
    ``bc`` ("dirichlet" | "neumann"), ``obstacles`` (list of (cx, cy, radius)),
    and optionally ``outer_bc`` (rectangle only; must match ``bc``).
    """
    base_kind = str(draft.get("base", "")).lower()
    if base_kind not in ("torus", "rectangle"):
        raise GeometryError(f"unknown base type {draft.get('base')!r}")
    width = float(draft.get("width", 1.0))
    height = float(draft.get("height", 1.0))
    if width <= 0 or height <= 0:
        raise GeometryError("width and height must be positive")

    bc = str(draft.get("bc", DIRICHLET)).lower()
    if bc not in (DIRICHLET, NEUMANN):
        raise GeometryError(f"unknown boundary condition {draft.get('bc')!r}")
    outer_bc = draft.get("outer_bc")
    if outer_bc is not None and str(outer_bc).lower() != bc:
        raise GeometryError("mixed boundary conditions (outer_bc != bc) are not supported")

    raw = draft.get("obstacles", [])
    obstacles = []
    for item in raw:
        if isinstance(item, Obstacle):
            cx, cy, rad = item.center[0], item.center[1], item.radius
        else:
            cx, cy, rad = (float(v) for v in item)
        if base_kind == "torus":
            cx, cy = cx % width, cy % height
        obstacles.append(Obstacle(center=(cx, cy), radius=float(rad)))
    obstacles = tuple(obstacles)

    if base_kind == "torus":
        if not obstacles:
            raise TorusWithoutObstacle("a torus table needs at least one obstacle")
        base = Torus(width, height)
        genus_tilde, holes = 1, len(obstacles)
    else:
        base = Rectangle(width, height)
        genus_tilde, holes = 0, len(obstacles) + 1

    _validate_obstacles(base, obstacles)
    return SurfaceSpec(base=base, obstacles=obstacles, bc=bc,
                       genus_tilde=genus_tilde, holes=holes)


def parse_surface_config(path: str | Path) -> dict:
    """Parse a plain-text key=value table description.

    Lines are ``key = value``; ``#`` starts a comment; the ``obstacle`` key
    repeats, one ``cx cy radius`` triple per line.
    """
    draft: dict = {"obstacles": []}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise GeometryError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if key == "obstacle":
            parts = value.replace(",", " ").split()
            if len(parts) != 3:
                raise GeometryError(f"{path}:{lineno}: obstacle needs 'cx cy radius'")
            draft["obstacles"].append(tuple(float(p) for p in parts))
        elif key in ("width", "height"):
            draft[key] = float(value)
        elif key in ("base", "bc", "outer_bc"):
            draft[key] = value
        else:
            raise GeometryError(f"{path}:{lineno}: unknown key {key!r}")
    return draft


def load_surface(path: str | Path) -> SurfaceSpec:
    return build_surface(parse_surface_config(path))


# ---------------------------------------------------------------------------
# Boundary atlas: component ids are obstacles in input order; a rectangle
# base appends one closed outer component (bottom, right, top, left walls,
# counterclockwise from the origin corner).

def component_count(spec: SurfaceSpec) -> int:
    return len(spec.obstacles) + (0 if spec.is_torus else 1)


def component_length(spec: SurfaceSpec, component: int) -> float:
    n_obs = len(spec.obstacles)
    if 0 <= component < n_obs:
        return TWO_PI * spec.obstacles[component].radius
    if component == n_obs and not spec.is_torus:
        return 2.0 * (spec.width + spec.height)
    raise UnknownComponent(f"component {component} not on this table")


def boundary_length(spec: SurfaceSpec) -> float:
    return sum(component_length(spec, c) for c in range(component_count(spec)))


def boundary_eval(spec: SurfaceSpec, component: int, s: float) -> Frame:
    """Arclength frame at position ``s`` on a boundary component.

    ``s`` wraps modulo the component length.  Obstacle circles are
    parametrized counterclockwise from angle 0, with the normal pointing
    out of the disk (into the table).
    """
    length = component_length(spec, component)
    s = math.fmod(s, length)
    if s < 0.0:
        s += length

    n_obs = len(spec.obstacles)
    if component < n_obs:
        ob = spec.obstacles[component]
        theta = s / ob.radius
        ct, st = math.cos(theta), math.sin(theta)
        point = (ob.center[0] + ob.radius * ct, ob.center[1] + ob.radius * st)
        return Frame(point=point, tangent=(-st, ct), normal=(ct, st),
                     curvature=1.0 / ob.radius)

    w, hgt = spec.width, spec.height
    if s < w:                       # bottom wall, left to right
        return Frame((s, 0.0), (1.0, 0.0), (0.0, 1.0), 0.0)
    s -= w
    if s < hgt:                     # right wall, upward
        return Frame((w, s), (0.0, 1.0), (-1.0, 0.0), 0.0)
    s -= hgt
    if s < w:                       # top wall, right to left
        return Frame((w - s, hgt), (-1.0, 0.0), (0.0, -1.0), 0.0)
    s -= w
    return Frame((0.0, hgt - s), (0.0, -1.0), (1.0, 0.0), 0.0)


def wall_position(spec: SurfaceSpec, x: float, y: float) -> float:
    """Arclength of a point on the rectangle's outer boundary."""
    w, hgt = spec.width, spec.height
    if abs(y) <= abs(y - hgt) and abs(y) <= min(abs(x), abs(x - w)):
        return x % (2 * (w + hgt))
    if abs(x - w) <= min(abs(y - hgt), abs(x)):
        return w + y
    if abs(y - hgt) <= abs(x):
        return w + hgt + (w - x)
    return 2 * w + hgt + (hgt - y)


def torus_delta(spec: SurfaceSpec, dx: float, dy: float) -> tuple[float, float]:
    """Shortest displacement vector on the base (periodic reduction on a torus)."""
    if not spec.is_torus:
        return dx, dy
    w, hgt = spec.width, spec.height
    dx -= w * round(dx / w)
    dy -= hgt * round(dy / hgt)
    return dx, dy


def distance(spec: SurfaceSpec, p: tuple[float, float], q: tuple[float, float]) -> float:
    dx, dy = torus_delta(spec, p[0] - q[0], p[1] - q[1])
    return math.hypot(dx, dy)


def diameter(spec: SurfaceSpec) -> float:
    """Upper bound on the distance between points of the table."""
    if spec.is_torus:
        return 0.5 * math.hypot(spec.width, spec.height)
    return math.hypot(spec.width, spec.height)
