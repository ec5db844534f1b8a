"""Laplace eigenpairs on a masked finite-difference grid, with boundary traces.

The table is discretized with the 5-point stencil on a staircase-masked
grid: node-centered for periodic (torus) and rectangle-Dirichlet problems,
cell-centered for rectangle-Neumann (mirror ghosts).  Obstacle cells are
eliminated by zero extension under Dirichlet conditions and by one-sided
mirroring under Neumann conditions; either way the operator is symmetric by
construction.

``solve_lowest`` wraps a shift-invert Lanczos solve (ARPACK) and returns
grid-normalized eigenpairs with residual checks, deterministic handling of
degenerate clusters, and a fixed sign convention, so repeated runs are
reproducible bit for bit on one machine.  ``extract_trace`` produces the
boundary data: the restriction of the field for Neumann problems, and the
normal derivative scaled by 1/lambda for Dirichlet problems.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .geometry import (
    DIRICHLET,
    NEUMANN,
    SurfaceSpec,
    boundary_eval,
    component_count,
    component_length,
)


class ResolutionTooCoarse(ValueError):
    pass


class ConvergenceFailure(RuntimeError):
    pass


#: Residual bound relative to the operator eigenvalue (floored at 1 so the
#: Neumann zero mode has a meaningful bound).
RESIDUAL_RTOL = 1e-8
#: Relative eigenvalue gap below which modes are treated as one degenerate cluster.
CLUSTER_GAP = 1e-6

MASK_INTERIOR = 0
MASK_OBSTACLE = 1
MASK_EDGE = 2

# Fixed probe positions (relative coordinates) used to order degenerate
# clusters and fix signs deterministically.
_PROBES = ((0.37, 0.41), (0.11, 0.73), (0.59, 0.13), (0.83, 0.67),
           (0.29, 0.89), (0.47, 0.53), (0.71, 0.31), (0.05, 0.17))


@dataclass
class Grid:
    nx: int
    ny: int
    hx: float
    hy: float
    x0: float
    y0: float
    npx: int
    npy: int
    periodic: bool
    mask: np.ndarray
    active: np.ndarray
    index: np.ndarray
    n_active: int

    @property
    def h(self) -> float:
        return self.hx

    def points(self):
        xs = self.x0 + self.hx * np.arange(self.npx)
        ys = self.y0 + self.hy * np.arange(self.npy)
        return xs, ys

    def quadrature_area(self) -> float:
        return self.n_active * self.hx * self.hy

    def mask_hash(self) -> str:
        return hashlib.sha256(self.mask.tobytes()).hexdigest()[:16]


@dataclass
class MaskedLaplacian:
    matrix: sparse.csr_matrix
    grid: Grid
    bc: str
    spec: SurfaceSpec

    @property
    def shape(self):
        return self.matrix.shape


@dataclass
class EigenPair:
    lam: float
    field: np.ndarray
    residual: float
    index: int
    grid: Grid

    @property
    def eigenvalue(self) -> float:
        return self.lam * self.lam


@dataclass
class BoundaryTrace:
    component: int
    s: np.ndarray
    values: np.ndarray
    bc: str
    ds: float
    length: float


def build_grid(spec: SurfaceSpec, resolution: int) -> Grid:
    if resolution < 64:
        raise ValueError(f"resolution must be at least 64, got {resolution}")
    w, hgt = spec.width, spec.height
    hx = w / resolution
    ny = max(4, round(hgt / hx))
    hy = hgt / ny
    for i, ob in enumerate(spec.obstacles):
        if 2 * ob.radius / max(hx, hy) < 10:
            raise ResolutionTooCoarse(
                f"obstacle {i} spans under 10 cells at resolution {resolution}")

    periodic = spec.is_torus
    if periodic:
        x0, y0, npx, npy = 0.0, 0.0, resolution, ny
    elif spec.bc == DIRICHLET:
        x0, y0, npx, npy = hx, hy, resolution - 1, ny - 1
    else:
        x0, y0, npx, npy = hx / 2, hy / 2, resolution, ny

    xs = x0 + hx * np.arange(npx)
    ys = y0 + hy * np.arange(npy)
    X, Y = np.meshgrid(xs, ys)
    inside = np.zeros((npy, npx), dtype=bool)
    for ob in spec.obstacles:
        dx = X - ob.center[0]
        dy = Y - ob.center[1]
        if periodic:
            dx -= w * np.round(dx / w)
            dy -= hgt * np.round(dy / hgt)
        inside |= dx * dx + dy * dy < ob.radius * ob.radius

    active = ~inside
    mask = np.full((npy, npx), MASK_INTERIOR, dtype=np.int8)
    mask[inside] = MASK_OBSTACLE
    edge = np.zeros_like(active)
    for dj, di in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        if periodic:
            nb_inactive = ~np.roll(active, shift=(-dj, -di), axis=(0, 1))
        else:
            nb_inactive = np.ones_like(active)
            src = active[max(dj, 0):npy + min(dj, 0), max(di, 0):npx + min(di, 0)]
            nb_inactive[max(-dj, 0):npy + min(-dj, 0), max(-di, 0):npx + min(-di, 0)] = ~src
        edge |= active & nb_inactive
    mask[edge & active] = MASK_EDGE

    index = np.full((npy, npx), -1, dtype=np.int64)
    index[active] = np.arange(int(active.sum()))
    return Grid(nx=resolution, ny=ny, hx=hx, hy=hy, x0=x0, y0=y0,
                npx=npx, npy=npy, periodic=periodic, mask=mask,
                active=active, index=index, n_active=int(active.sum()))


def assemble_laplacian(spec: SurfaceSpec, resolution: int) -> MaskedLaplacian:
    """Sparse symmetric 5-point Laplacian on the masked grid (positive semidefinite)."""
    grid = build_grid(spec, resolution)
    npy, npx = grid.npy, grid.npx
    active, index = grid.active, grid.index
    inv_hx2, inv_hy2 = 1.0 / grid.hx**2, 1.0 / grid.hy**2

    J, I = np.nonzero(active)
    own = index[J, I]
    n = grid.n_active
    diag = np.zeros(n)
    rows, cols, vals = [], [], []
    for dj, di, w in ((0, 1, inv_hx2), (0, -1, inv_hx2), (1, 0, inv_hy2), (-1, 0, inv_hy2)):
        Jn, In = J + dj, I + di
        if grid.periodic:
            Jn %= npy
            In %= npx
            exists = np.ones(len(J), dtype=bool)
        else:
            exists = (Jn >= 0) & (Jn < npy) & (In >= 0) & (In < npx)
            Jn = np.clip(Jn, 0, npy - 1)
            In = np.clip(In, 0, npx - 1)
        nb_act = exists & active[Jn, In]
        if spec.bc == DIRICHLET:
            diag[own] += w          # zero extension: full diagonal regardless
        else:
            diag[own[nb_act]] += w  # mirror ghost: only live neighbors couple
        rows.append(own[nb_act])
        cols.append(index[Jn, In][nb_act])
        vals.append(np.full(int(nb_act.sum()), -w))

    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    return MaskedLaplacian(matrix=mat, grid=grid, bc=spec.bc, spec=spec)


def _deterministic_start(n: int) -> np.ndarray:
    v = 1.0 + ((np.arange(n) * 2654435761) % 1000) / 1e4
    return v / np.linalg.norm(v)


def _probe_indices(grid: Grid) -> list[int]:
    idx = []
    flat_active = np.flatnonzero(grid.active.ravel())
    for rx, ry in _PROBES:
        i = min(grid.npx - 1, int(rx * grid.npx))
        j = min(grid.npy - 1, int(ry * grid.npy))
        flat = j * grid.npx + i
        if grid.active.ravel()[flat]:
            idx.append(int(grid.index.ravel()[flat]))
        else:
            # nearest active cell in flat order
            pos = np.searchsorted(flat_active, flat)
            pos = min(pos, len(flat_active) - 1)
            idx.append(int(grid.index.ravel()[flat_active[pos]]))
    return idx


def _fix_sign(v: np.ndarray, probes: list[int]) -> np.ndarray:
    scale = np.abs(v).max()
    for pi in probes:
        if abs(v[pi]) > 1e-7 * scale:
            return -v if v[pi] < 0 else v
    return -v if v[np.argmax(np.abs(v))] < 0 else v


def solve_lowest(op: MaskedLaplacian, k: int) -> list[EigenPair]:
    """Lowest ``k`` eigenpairs, ascending, residual-checked, grid-normalized.

    Degenerate clusters (relative gap < 1e-6) are re-orthonormalized in a
    deterministic order (lexicographic field values at fixed probe cells)
    so repeated runs return the same basis.
    """
    a = op.matrix
    n = a.shape[0]
    if k > 0.1 * n:
        raise ValueError(f"k = {k} exceeds a tenth of the {n} unknowns")
    try:
        mu, vecs = spla.eigsh(a, k=k, sigma=-1.0, which="LM",
                              v0=_deterministic_start(n))
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceFailure(str(exc)) from exc
    order = np.argsort(mu)
    mu, vecs = mu[order], vecs[:, order]
    mu = np.maximum(mu, 0.0)  # clip roundoff negatives on the Neumann zero mode

    probes = _probe_indices(op.grid)
    clusters = []
    start = 0
    for i in range(1, k + 1):
        if i == k or mu[i] - mu[i - 1] > CLUSTER_GAP * max(mu[i - 1], 1.0):
            clusters.append((start, i))
            start = i
    for lo, hi in clusters:
        if hi - lo > 1:
            # ARPACK resolves a near-degenerate cluster only as a subspace;
            # a Rayleigh-Ritz pass pins each vector to its own eigenvalue
            block = vecs[:, lo:hi]
            ritz_vals, rot = np.linalg.eigh(block.T @ (a @ block))
            block = block @ rot
            keys = [tuple(block[probes, c]) for c in range(hi - lo)]
            perm = sorted(range(hi - lo), key=lambda c: keys[c])
            vecs[:, lo:hi] = block[:, perm]
            mu[lo:hi] = np.maximum(ritz_vals[perm], 0.0)
        for c in range(lo, hi):
            vecs[:, c] = _fix_sign(vecs[:, c], probes)

    grid = op.grid
    weight = math.sqrt(grid.hx * grid.hy)
    pairs = []
    for i in range(k):
        v = vecs[:, i]
        residual = float(np.linalg.norm(a @ v - mu[i] * v))
        if residual > RESIDUAL_RTOL * max(mu[i], 1.0):
            raise ConvergenceFailure(
                f"mode {i}: residual {residual:.3e} above tolerance for mu = {mu[i]:.6g}")
        field = np.zeros((grid.npy, grid.npx))
        field[grid.active] = v / weight
        pairs.append(EigenPair(lam=math.sqrt(mu[i]), field=field,
                               residual=residual * weight, index=i, grid=grid))
    return pairs


# ---------------------------------------------------------------------------
# Boundary traces.

def interpolate(grid: Grid, field: np.ndarray, x, y):
    """Bilinear interpolation at points (x, y), renormalizing away masked corners."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fx = (x - grid.x0) / grid.hx
    fy = (y - grid.y0) / grid.hy
    if grid.periodic:
        i0 = np.floor(fx).astype(int)
        j0 = np.floor(fy).astype(int)
        wx = fx - i0
        wy = fy - j0
    else:
        fx = np.clip(fx, 0.0, grid.npx - 1.0)
        fy = np.clip(fy, 0.0, grid.npy - 1.0)
        i0 = np.minimum(np.floor(fx).astype(int), grid.npx - 2) if grid.npx > 1 else np.zeros_like(fx, int)
        j0 = np.minimum(np.floor(fy).astype(int), grid.npy - 2) if grid.npy > 1 else np.zeros_like(fy, int)
        wx = fx - i0
        wy = fy - j0
    num = np.zeros_like(fx, dtype=float)
    den = np.zeros_like(fx, dtype=float)
    for di, dj, w in ((0, 0, (1 - wx) * (1 - wy)), (1, 0, wx * (1 - wy)),
                      (0, 1, (1 - wx) * wy), (1, 1, wx * wy)):
        ii = (i0 + di) % grid.npx if grid.periodic else np.minimum(i0 + di, grid.npx - 1)
        jj = (j0 + dj) % grid.npy if grid.periodic else np.minimum(j0 + dj, grid.npy - 1)
        act = grid.active[jj, ii]
        num += w * act * field[jj, ii]
        den += w * act
    return num / np.maximum(den, 1e-12)


def component_frames(spec: SurfaceSpec, component: int, s: np.ndarray):
    """Vectorized boundary frames: points and inward normals at arclengths s."""
    n_obs = len(spec.obstacles)
    if component < n_obs:
        ob = spec.obstacles[component]
        theta = s / ob.radius
        nx, ny = np.cos(theta), np.sin(theta)
        px = ob.center[0] + ob.radius * nx
        py = ob.center[1] + ob.radius * ny
        return np.stack([px, py], axis=-1), np.stack([nx, ny], axis=-1)
    pts = np.empty((len(s), 2))
    nrm = np.empty((len(s), 2))
    for i, si in enumerate(s):
        fr = boundary_eval(spec, component, float(si))
        pts[i] = fr.point
        nrm[i] = fr.normal
    return pts, nrm


#: Step (in units of the grid spacing) of the one-sided normal difference
#: used for Dirichlet traces; calibrated on the analytic square wall trace.
NORMAL_DIFF_STEP = 1.5

#: Trace samples per grid spacing of arclength.
TRACE_DENSITY = 4


def extract_trace(spec: SurfaceSpec, pair: EigenPair) -> list[BoundaryTrace]:
    """Boundary data of an eigenpair on every component.

    Neumann: bilinear interpolation of the field at the boundary samples.
    Dirichlet: one-sided second-order normal difference, scaled by 1/lambda.
    Samples are uniform in arclength, at least TRACE_DENSITY per grid spacing.
    """
    grid = pair.grid
    h = max(grid.hx, grid.hy)
    traces = []
    for comp in range(component_count(spec)):
        length = component_length(spec, comp)
        n_s = max(16, int(math.ceil(TRACE_DENSITY * length / h)))
        s = np.arange(n_s) * (length / n_s)
        pts, nrm = component_frames(spec, comp, s)
        if spec.bc == NEUMANN:
            vals = interpolate(grid, pair.field, pts[:, 0], pts[:, 1])
        else:
            if pair.lam <= 0.0:
                raise ValueError("Dirichlet trace needs a positive frequency")
            delta = NORMAL_DIFF_STEP * h
            v1 = interpolate(grid, pair.field,
                             pts[:, 0] + delta * nrm[:, 0], pts[:, 1] + delta * nrm[:, 1])
            v2 = interpolate(grid, pair.field,
                             pts[:, 0] + 2 * delta * nrm[:, 0], pts[:, 1] + 2 * delta * nrm[:, 1])
            vals = (4.0 * v1 - v2) / (2.0 * delta) / pair.lam
        traces.append(BoundaryTrace(component=comp, s=s, values=vals, bc=spec.bc,
                                    ds=length / n_s, length=length))
    return traces


# ---------------------------------------------------------------------------
# Archive: one CSV for the (lambda, residual) table, one npz for the fields.

def save_eigen_archive(dirpath, op: MaskedLaplacian, pairs: list[EigenPair],
                       traces: list[list[BoundaryTrace]] | None = None) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    grid = op.grid
    header = {
        "nx": grid.nx, "ny": grid.ny, "hx": grid.hx, "hy": grid.hy,
        "x0": grid.x0, "y0": grid.y0, "npx": grid.npx, "npy": grid.npy,
        "periodic": grid.periodic, "bc": op.bc, "mask_hash": grid.mask_hash(),
        "layout": "row-major (npy, npx)",
    }
    (dirpath / "header.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    with open(dirpath / "eigenvalues.csv", "w") as fh:
        fh.write("index,lambda,residual\n")
        for p in pairs:
            fh.write(f"{p.index},{p.lam!r},{p.residual!r}\n")
    np.savez_compressed(dirpath / "fields.npz",
                        fields=np.stack([p.field for p in pairs]),
                        lambdas=np.array([p.lam for p in pairs]),
                        residuals=np.array([p.residual for p in pairs]),
                        mask=grid.mask)
    if traces is not None:
        with open(dirpath / "traces.csv", "w") as fh:
            fh.write("mode,component,s,value\n")
            for m, tlist in enumerate(traces):
                for tr in tlist:
                    for si, vi in zip(tr.s, tr.values):
                        fh.write(f"{m},{tr.component},{si!r},{vi!r}\n")


def load_eigen_archive(dirpath) -> tuple[dict, list[EigenPair]]:
    dirpath = Path(dirpath)
    header = json.loads((dirpath / "header.json").read_text())
    data = np.load(dirpath / "fields.npz")
    mask = data["mask"]
    active = mask != MASK_OBSTACLE
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[active] = np.arange(int(active.sum()))
    grid = Grid(nx=header["nx"], ny=header["ny"], hx=header["hx"], hy=header["hy"],
                x0=header["x0"], y0=header["y0"], npx=header["npx"], npy=header["npy"],
                periodic=header["periodic"], mask=mask, active=active,
                index=index, n_active=int(active.sum()))
    if grid.mask_hash() != header["mask_hash"]:
        raise ValueError("mask hash mismatch in eigenpair archive")
    pairs = [EigenPair(lam=float(lam), field=field, residual=float(res),
                       index=i, grid=grid)
             for i, (lam, field, res) in enumerate(
                 zip(data["lambdas"], data["fields"], data["residuals"]))]
    return header, pairs
