"""Nodal domains, boundary sign changes, and the embedded nodal graph.

The sign field of an eigenpair partitions active grid cells into +, -, and
(rare) near-zero cells.  Nodal domains are 4-connected same-sign components,
counted twice by independent means: a hand-rolled union-find here, and a
flood-fill label pass inside the graph construction.  The nodal graph itself
lives on the dual lattice of cell corners: interfaces between opposite-sign
cells form curves, corners where four alternating signs meet are crossing
vertices, curve ends at the mask staircase are boundary touch points, and
closed curves that meet nothing get one marker vertex each.  Faces of the
resulting graph are the nodal domains, which is what the Euler-characteristic
lower bound

    N  >=  n/2 + 2 - 2*genus - holes

(checked per mode by ``euler_check``) consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import SurfaceSpec, component_count, wall_position
from .eigensolver import BoundaryTrace, EigenPair, extract_trace

ZERO_RTOL = 1e-10
DEGENERATE_FRACTION = 0.05

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


class DegenerateField(RuntimeError):
    pass


class AllZeroTrace(RuntimeError):
    pass


@dataclass
class SignField:
    signs: np.ndarray          # int8 (npy, npx): +1 / -1 / 0 on active cells
    active: np.ndarray
    tau: float
    zero_fraction: float


@dataclass
class NodalGraph:
    v: int
    e: int
    f: int
    m: int
    n: int
    genus_tilde: int
    holes: int
    defect: int
    crossings: int = 0
    loops: int = 0
    touch_points: int = 0
    interior_degrees: tuple = ()


@dataclass
class CauchySupRecord:
    lam: float
    sup: float
    ratio: float


@dataclass
class EulerCheck:
    lhs: int
    rhs: float
    passed: bool
    raw_lhs: int
    raw_rhs: int
    raw_ok: bool


def sign_field(pair: EigenPair, zero_rtol: float = ZERO_RTOL) -> SignField:
    """Per-cell sign of the field; raises DegenerateField when too much of the
    mode sits below the zero threshold (an unresolved mode)."""
    active = pair.grid.active
    tau = zero_rtol * np.abs(pair.field).max()
    signs = np.zeros(pair.field.shape, dtype=np.int8)
    signs[active & (pair.field > tau)] = 1
    signs[active & (pair.field < -tau)] = -1
    n_active = int(active.sum())
    zero_fraction = float((signs[active] == 0).sum()) / n_active
    if zero_fraction > DEGENERATE_FRACTION:
        raise DegenerateField(
            f"{zero_fraction:.1%} of cells below the zero threshold")
    return SignField(signs=signs, active=active, tau=tau,
                     zero_fraction=zero_fraction)


class UnionFind:
    __slots__ = ("parent", "count")

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.count = n

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra
            self.count -= 1


def count_nodal_domains(pair: EigenPair) -> int:
    """Number of 4-connected same-sign components of the sign field."""
    sf = sign_field(pair)
    signs = sf.signs
    npy, npx = signs.shape
    periodic = pair.grid.periodic
    flat = signs.ravel()
    uf = UnionFind(flat.size)
    zero_cells = int((flat == 0).sum()) - int((~sf.active).sum() - (signs[~sf.active] != 0).sum())

    for j in range(npy):
        row = j * npx
        nxt_row = ((j + 1) % npy) * npx if (periodic or j + 1 < npy) else None
        for i in range(npx):
            s = flat[row + i]
            if s == 0:
                continue
            if i + 1 < npx or periodic:
                right = row + (i + 1) % npx
                if flat[right] == s:
                    uf.union(row + i, right)
            if nxt_row is not None:
                down = nxt_row + i
                if flat[down] == s:
                    uf.union(row + i, down)

    roots = set()
    nz = np.flatnonzero(flat)
    for idx in nz:
        roots.add(uf.find(int(idx)))
    return len(roots)


def _label_domains(signs: np.ndarray, periodic: bool) -> int:
    """Independent face counter: flood-fill labels plus a periodic seam merge."""
    total = 0
    for sign in (1, -1):
        labels, n = ndimage.label(signs == sign, structure=_FOUR_CONN)
        if periodic and n > 0:
            uf = UnionFind(n + 1)
            for a, b in ((labels[:, 0], labels[:, -1]), (labels[0, :], labels[-1, :])):
                pairs = (a > 0) & (b > 0)
                for la, lb in zip(a[pairs], b[pairs]):
                    uf.union(int(la), int(lb))
            total += len({uf.find(li) for li in range(1, n + 1)})
        else:
            total += n
    return total


def count_boundary_sign_changes(traces) -> int:
    """Sign flips of the boundary data, cyclically per component, summed.

    Zero samples are bridged by carrying the last nonzero sign, so a zero
    without an actual crossing contributes nothing.
    """
    if isinstance(traces, BoundaryTrace):
        traces = [traces]
    global_max = max(np.abs(tr.values).max(initial=0.0) for tr in traces)
    if global_max == 0.0:
        raise AllZeroTrace("boundary data vanishes on every component")
    tau = ZERO_RTOL * global_max
    total = 0
    for tr in traces:
        sgn = np.sign(tr.values)
        sgn[np.abs(tr.values) <= tau] = 0
        nz = sgn[sgn != 0]
        if len(nz) == 0:
            continue
        total += int(np.count_nonzero(nz != np.roll(nz, 1)))
    return total


def sign_changes_on_arc(trace: BoundaryTrace, s_start: float, arc_length: float) -> int:
    """Sign flips among the samples inside one arc (not cyclically closed)."""
    rel = np.mod(trace.s - s_start, trace.length)
    inside = rel < arc_length
    order = np.argsort(rel[inside])
    vals = trace.values[inside][order]
    tau = ZERO_RTOL * max(np.abs(trace.values).max(), 1e-300)
    sgn = np.sign(vals)
    sgn[np.abs(vals) <= tau] = 0
    nz = sgn[sgn != 0]
    if len(nz) < 2:
        return 0
    return int(np.count_nonzero(nz[1:] != nz[:-1]))


# ---------------------------------------------------------------------------
# Nodal graph on the dual corner lattice.

def _corner_cells(ci, cj, npx, npy, periodic):
    """The four cell indices around corner (ci, cj); None for exterior cells."""
    out = []
    for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1)):
        i, j = ci + di, cj + dj
        if periodic:
            out.append(((j % npy), (i % npx)))
        elif 0 <= i < npx and 0 <= j < npy:
            out.append((j, i))
        else:
            out.append(None)
    return out


def build_nodal_graph(spec: SurfaceSpec, pair: EigenPair,
                      traces: list[BoundaryTrace] | None = None) -> NodalGraph:
    """Embedded graph of the nodal set together with the boundary.

    Counts are discrete proxies: crossings are corners where the four
    surrounding cells alternate in sign, touch points are interface curves
    ending at the mask staircase (or the outer walls), and every closed curve
    that meets no vertex carries one marker vertex and one loop edge.  The
    face count comes from an independent flood-fill labeling and must agree
    with ``count_nodal_domains``.
    """
    grid = pair.grid
    sf = sign_field(pair)
    signs = sf.signs
    npy, npx = signs.shape
    periodic = grid.periodic

    # obstacle id for masked cells (staircase ownership of curve endpoints)
    owner = np.full((npy, npx), -1, dtype=np.int32)
    if spec.obstacles:
        xs, ys = grid.points()
        X, Y = np.meshgrid(xs, ys)
        for k, ob in enumerate(spec.obstacles):
            dx, dy = X - ob.center[0], Y - ob.center[1]
            if periodic:
                dx -= spec.width * np.round(dx / spec.width)
                dy -= spec.height * np.round(dy / spec.height)
            owner[dx * dx + dy * dy < ob.radius**2] = k
    outer_component = None if periodic else len(spec.obstacles)

    # interface segments between opposite-sign 4-neighbors
    adjacency: dict[tuple, list] = {}
    segments = []

    def add_segment(ca, cb):
        sid = len(segments)
        segments.append((ca, cb))
        adjacency.setdefault(ca, []).append((sid, cb))
        adjacency.setdefault(cb, []).append((sid, ca))

    def wrap_corner(ci, cj):
        if periodic:
            return (ci % npx, cj % npy)
        return (ci, cj)

    i_max = npx if periodic else npx - 1
    j_max = npy if periodic else npy - 1
    for j in range(npy):
        for i in range(i_max):
            if signs[j, i] * signs[j, (i + 1) % npx] == -1:
                add_segment(wrap_corner(i, j - 1), wrap_corner(i, j))
    for j in range(j_max):
        for i in range(npx):
            if signs[j, i] * signs[(j + 1) % npy, i] == -1:
                add_segment(wrap_corner(i - 1, j), wrap_corner(i, j))

    degree = {c: len(lst) for c, lst in adjacency.items()}
    vertex_corners = [c for c, d in degree.items() if d != 2]
    vertex_set = set(vertex_corners)
    crossings = sum(1 for c in vertex_corners if degree[c] >= 4)
    interior_degrees = tuple(sorted(degree[c] for c in vertex_corners if degree[c] >= 3))

    used = [False] * len(segments)
    edges = []

    def other_end(sid, corner):
        a, b = segments[sid]
        return b if corner == a else a

    for start in vertex_corners:
        for sid, nxt in adjacency[start]:
            if used[sid]:
                continue
            used[sid] = True
            cur = nxt
            prev_sid = sid
            while cur not in vertex_set:
                (s1, _), (s2, _) = adjacency[cur]
                prev_sid = s2 if s1 == prev_sid else s1
                used[prev_sid] = True
                cur = other_end(prev_sid, cur)
            edges.append((start, cur))

    loops = []
    for sid0 in range(len(segments)):
        if used[sid0]:
            continue
        used[sid0] = True
        a, b = segments[sid0]
        loop_corners = [a]
        cur, prev_sid = b, sid0
        while cur != a:
            loop_corners.append(cur)
            (s1, _), (s2, _) = adjacency[cur]
            prev_sid = s2 if s1 == prev_sid else s1
            used[prev_sid] = True
            cur = other_end(prev_sid, cur)
        loops.append(min(loop_corners))

    # assign curve endpoints (degree != 2 corners of odd degree 1/3) to
    # boundary components via the masked or exterior cell they lean on
    touch: dict[int, list] = {}
    unattached = 0
    xs0, ys0 = grid.x0 - grid.hx / 2, grid.y0 - grid.hy / 2
    for c in vertex_corners:
        if degree[c] % 2 == 0:
            continue
        comp = None
        for cell in _corner_cells(c[0], c[1], npx, npy, periodic):
            if cell is None:
                comp = outer_component
                break
            if owner[cell] >= 0:
                comp = int(owner[cell])
                break
        if comp is None:
            unattached += 1
            continue
        cx = xs0 + (c[0] + 1) * grid.hx
        cy = ys0 + (c[1] + 1) * grid.hy
        if comp == outer_component:
            pos = wall_position(spec, cx, cy)
        else:
            ob = spec.obstacles[comp]
            dx, dy = cx - ob.center[0], cy - ob.center[1]
            if periodic:
                dx -= spec.width * round(dx / spec.width)
                dy -= spec.height * round(dy / spec.height)
            pos = math.atan2(dy, dx)
        touch.setdefault(comp, []).append((pos, c))

    uf_ids = {c: i for i, c in enumerate(vertex_corners)}
    for lo in loops:
        uf_ids[("loop", lo)] = len(uf_ids)
    empty_components = []
    for comp in range(component_count(spec)):
        if comp not in touch or not touch[comp]:
            empty_components.append(comp)
            uf_ids[("boundary", comp)] = len(uf_ids)

    uf = UnionFind(len(uf_ids))
    for a, b in edges:
        uf.union(uf_ids[a], uf_ids[b])
    boundary_arcs = 0
    for comp, pts in touch.items():
        pts.sort()
        boundary_arcs += len(pts)
        for (_, ca), (_, cb) in zip(pts, pts[1:]):
            uf.union(uf_ids[ca], uf_ids[cb])
        uf.union(uf_ids[pts[-1][1]], uf_ids[pts[0][1]])

    v = len(vertex_corners) + len(loops) + len(empty_components)
    e = len(edges) + len(loops) + boundary_arcs + len(empty_components)
    m = len({uf.find(i) for i in range(len(uf_ids))}) if uf_ids else 0
    f = _label_domains(signs, periodic)

    if traces is None:
        traces = extract_trace(spec, pair)
    n = count_boundary_sign_changes(traces)

    return NodalGraph(v=v, e=e, f=f, m=m, n=n,
                      genus_tilde=spec.genus_tilde, holes=spec.holes,
                      defect=spec.euler_defect,
                      crossings=crossings, loops=len(loops),
                      touch_points=sum(len(p) for p in touch.values()),
                      interior_degrees=interior_degrees)


def euler_check(graph: NodalGraph) -> EulerCheck:
    """The nodal-count lower bound N >= n/2 + defect, plus the raw
    Euler-characteristic inequality v - e + f - m + holes >= 1 - 2*genus."""
    rhs = 0.5 * graph.n + graph.defect
    raw_lhs = graph.v - graph.e + graph.f - graph.m + graph.holes
    raw_rhs = 1 - 2 * graph.genus_tilde
    return EulerCheck(lhs=graph.f, rhs=rhs, passed=graph.f >= rhs,
                      raw_lhs=raw_lhs, raw_rhs=raw_rhs,
                      raw_ok=raw_lhs >= raw_rhs)


# ---------------------------------------------------------------------------
# Cauchy-data sup norms.

def cauchy_supnorms(lam_traces) -> list[CauchySupRecord]:
    """Per-mode sup of the boundary data and its ratio to sqrt(lambda).

    ``lam_traces``: iterable of (lambda, traces); the zero mode is excluded.
    """
    records = []
    for lam, traces in lam_traces:
        if lam <= 0.0:
            continue
        sup = max(np.abs(tr.values).max(initial=0.0) for tr in traces)
        records.append(CauchySupRecord(lam=lam, sup=sup, ratio=sup / math.sqrt(lam)))
    if len(records) < 20:
        raise ValueError("need at least 20 positive-frequency modes")
    return records


def median_ratio_by_window(records: list[CauchySupRecord], n_windows: int = 3):
    """Median sup ratio over dyadic frequency windows (ascending)."""
    lam_top = max(r.lam for r in records)
    medians = []
    for k in range(n_windows - 1, -1, -1):
        lo, hi = lam_top / 2 ** (k + 1), lam_top / 2 ** k
        vals = [r.ratio for r in records if lo < r.lam <= hi]
        medians.append(float(np.median(vals)) if vals else math.nan)
    return medians


def mode_report_row(spec, pair, traces=None) -> dict:
    """One summary row per mode: counts, flags, sup ratio."""
    graph = build_nodal_graph(spec, pair, traces)
    check = euler_check(graph)
    n_uf = count_nodal_domains(pair)
    sup = 0.0
    if traces is not None:
        sup = max(np.abs(tr.values).max(initial=0.0) for tr in traces)
    return {
        "lambda": pair.lam, "N": graph.f, "n": graph.n,
        "v": graph.v, "e": graph.e, "f": graph.f, "m": graph.m,
        "euler_pass": check.passed, "euler_raw_ok": check.raw_ok,
        "count_consistent": n_uf == graph.f,
        "courant_bound": pair.index + 1,
        "courant_pass": graph.f <= pair.index + 1,
        "sup": sup,
        "sup_ratio": sup / math.sqrt(pair.lam) if pair.lam > 0 else 0.0,
    }


def render_mode_svg(spec, pair, path, traces=None) -> None:
    """Sign field with the zero contour and boundary sign-change markers."""
    import matplotlib
    from matplotlib.backends.backend_svg import FigureCanvasSVG
    from matplotlib.figure import Figure

    grid = pair.grid
    xs, ys = grid.points()
    fig = Figure(figsize=(5, 5))
    FigureCanvasSVG(fig)
    ax = fig.add_subplot(111)
    masked = np.ma.masked_where(~grid.active, pair.field)
    ax.pcolormesh(xs, ys, np.sign(masked), cmap="RdBu", vmin=-1.3, vmax=1.3)
    try:
        ax.contour(xs, ys, np.where(grid.active, pair.field, 0.0),
                   levels=[0.0], colors="k", linewidths=0.6)
    except ValueError:
        pass
    theta = np.linspace(0, 2 * math.pi, 128)
    for ob in spec.obstacles:
        ax.plot(ob.center[0] + ob.radius * np.cos(theta),
                ob.center[1] + ob.radius * np.sin(theta), "k-", lw=1.0)
    if traces is not None:
        from .eigensolver import component_frames
        for tr in traces:
            sgn = np.sign(tr.values)
            flips = np.flatnonzero(sgn * np.roll(sgn, 1) < 0)
            if len(flips):
                pts, _ = component_frames(spec, tr.component, tr.s[flips])
                ax.plot(pts[:, 0], pts[:, 1], "go", ms=3)
    ax.set_aspect("equal")
    ax.set_title(f"mode {pair.index}, frequency {pair.lam:.3f}")
    fig.savefig(path, format="svg")
