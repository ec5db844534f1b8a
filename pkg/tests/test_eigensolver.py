import math

import numpy as np
import pytest
import scipy.linalg

from sinailab import eigensolver as es
from sinailab.eigensolver import (
    ConvergenceFailure,
    EigenPair,
    ResolutionTooCoarse,
    assemble_laplacian,
    build_grid,
    extract_trace,
    interpolate,
    load_eigen_archive,
    save_eigen_archive,
    solve_lowest,
)
from sinailab.geometry import build_surface

from conftest import square_spec, torus_spec


def analytic_square_dirichlet(count=300):
    vals = sorted(math.pi**2 * (m * m + n * n)
                  for m in range(1, 40) for n in range(1, 40))
    return vals[:count]


def synthetic_pair(spec, resolution, func, lam):
    grid = build_grid(spec, resolution)
    xs, ys = grid.points()
    X, Y = np.meshgrid(xs, ys)
    field = func(X, Y)
    field[~grid.active] = 0.0
    return EigenPair(lam=lam, field=field, residual=0.0, index=0, grid=grid)


# --- assembly ----------------------------------------------------------------

def test_classical_five_point_row_sums():
    op = assemble_laplacian(square_spec("dirichlet"), 64)
    grid = op.grid
    h2 = 1.0 / grid.hx**2
    sums = np.asarray(op.matrix.sum(axis=1)).ravel()
    sums2d = np.zeros((grid.npy, grid.npx))
    sums2d[grid.active] = sums
    # interior rows sum to zero, wall-adjacent rows to 1/h^2 per missing neighbor
    assert abs(sums2d[5, 5]) < 1e-9
    assert sums2d[0, 5] == pytest.approx(h2, rel=1e-12)
    assert sums2d[0, 0] == pytest.approx(2 * h2, rel=1e-12)


def test_neumann_torus_annihilates_constants():
    op = assemble_laplacian(torus_spec("neumann"), 64)
    ones = np.ones(op.shape[0])
    assert np.abs(op.matrix @ ones).max() < 1e-12 / op.grid.hx**2


def test_operator_symmetry():
    op = assemble_laplacian(torus_spec("dirichlet"), 64)
    rng = np.random.default_rng(0)
    scale = abs(op.matrix).max()
    for _ in range(10):
        u = rng.standard_normal(op.shape[0])
        v = rng.standard_normal(op.shape[0])
        left = np.dot(op.matrix @ u, v)
        right = np.dot(u, op.matrix @ v)
        assert abs(left - right) <= 1e-12 * scale * np.linalg.norm(u) * np.linalg.norm(v)


def test_resolution_floor():
    with pytest.raises(ValueError):
        assemble_laplacian(square_spec(), 32)


def test_obstacle_needs_ten_cells():
    spec = build_surface({"base": "torus", "width": 1.0, "height": 1.0,
                          "bc": "dirichlet", "obstacles": [(0.5, 0.5, 0.03)]})
    with pytest.raises(ResolutionTooCoarse):
        assemble_laplacian(spec, 64)


# --- solving -----------------------------------------------------------------

def test_square_spectrum_matches_analytic(square_d):
    exact = analytic_square_dirichlet(20)
    for pair, target in zip(square_d.pairs[:20], exact):
        assert abs(pair.lam**2 - target) / target < 0.01


def test_degenerate_cluster_detected(square_d):
    # modes (1,2)/(2,1) share 5 pi^2
    lams_sq = [p.lam**2 for p in square_d.pairs[1:3]]
    assert lams_sq[0] == pytest.approx(lams_sq[1], rel=1e-9)
    assert lams_sq[0] == pytest.approx(5 * math.pi**2, rel=0.01)


def test_weyl_count_against_direct_enumeration(square_d):
    threshold = 500.0
    analytic = sum(1 for v in analytic_square_dirichlet() if v < threshold)
    computed = sum(1 for p in square_d.pairs if p.lam**2 < threshold)
    assert abs(computed - analytic) <= 0.1 * analytic


def test_modes_orthonormal_under_grid_quadrature(square_d):
    grid = square_d.op.grid
    v = np.stack([p.field[grid.active] for p in square_d.pairs[:30]])
    gram = (v @ v.T) * grid.hx * grid.hy
    assert np.abs(gram - np.eye(30)).max() < 1e-8


def test_residuals_within_tolerance(square_d):
    for p in square_d.pairs:
        assert p.residual <= 1e-8 * max(p.lam**2, 1.0)


def test_dense_oracle_cross_check():
    op = assemble_laplacian(square_spec("dirichlet"), 64)
    sparse_pairs = solve_lowest(op, 15)
    dense_vals = scipy.linalg.eigh(op.matrix.toarray(), eigvals_only=True,
                                   subset_by_index=[0, 14])
    for pair, mu in zip(sparse_pairs, dense_vals):
        assert pair.lam**2 == pytest.approx(mu, rel=1e-10, abs=1e-9)


def test_k_precondition():
    op = assemble_laplacian(square_spec("dirichlet"), 64)
    with pytest.raises(ValueError):
        solve_lowest(op, op.shape[0] // 2)


def test_dirichlet_monotone_under_obstacle_inclusion():
    plain = solve_lowest(assemble_laplacian(square_spec("dirichlet"), 96), 20)
    blocked = solve_lowest(assemble_laplacian(build_surface(
        {"base": "rectangle", "width": 1.0, "height": 1.0, "bc": "dirichlet",
         "obstacles": [(0.5, 0.5, 0.2)]}), 96), 20)
    for a, b in zip(plain, blocked):
        assert b.lam >= a.lam - 1e-10


def test_refinement_is_second_order():
    exact = 2 * math.pi**2
    errs = []
    for nx in (64, 128):
        pairs = solve_lowest(assemble_laplacian(square_spec("dirichlet"), nx), 1)
        errs.append(abs(pairs[0].lam**2 - exact))
    ratio = errs[0] / errs[1]
    assert 2.5 <= ratio <= 6.0


def test_green_identity_discrete():
    # lambda^2 * int phi^2 equals the discrete gradient energy: the quadratic
    # form of the operator is exactly the edge sum with zero extension
    op = assemble_laplacian(torus_spec("dirichlet"), 96)
    pairs = solve_lowest(op, 5)
    grid = op.grid
    for p in pairs:
        f = p.field
        energy = 0.0
        for axis, inv_h2 in ((1, 1 / grid.hx**2), (0, 1 / grid.hy**2)):
            diff = f - np.roll(f, -1, axis=axis)
            both = grid.active & np.roll(grid.active, -1, axis=axis)
            one = grid.active ^ np.roll(grid.active, -1, axis=axis)
            fwd = np.where(both, diff, np.where(one, np.where(grid.active, f, np.roll(f, -1, axis=axis)), 0.0))
            energy += np.sum(fwd**2) * inv_h2
        energy *= grid.hx * grid.hy
        assert energy == pytest.approx(p.lam**2, rel=0.01)


def test_deterministic_rerun():
    op = assemble_laplacian(torus_spec("dirichlet"), 64)
    a = solve_lowest(op, 12)
    b = solve_lowest(op, 12)
    for pa, pb in zip(a, b):
        assert pa.lam == pb.lam
        assert np.array_equal(pa.field, pb.field)


# --- traces ------------------------------------------------------------------

def test_dirichlet_wall_trace_matches_analytic():
    spec = square_spec("dirichlet")
    lam = math.sqrt(2) * math.pi
    pair = synthetic_pair(spec, 201,
                          lambda X, Y: 2 * np.sin(math.pi * X) * np.sin(math.pi * Y),
                          lam)
    tr = extract_trace(spec, pair)[0]
    bottom = tr.s < 1.0
    expected = 2 * math.pi / lam * np.sin(math.pi * tr.s[bottom])
    strong = expected > 0.1 * expected.max()
    rel = np.abs(tr.values[bottom][strong] - expected[strong]) / expected[strong]
    assert rel.max() < 0.02


def test_neumann_wall_trace_matches_analytic():
    spec = square_spec("neumann")
    pair = synthetic_pair(spec, 201,
                          lambda X, Y: math.sqrt(2) * np.cos(math.pi * X) + 0 * Y,
                          math.pi)
    tr = extract_trace(spec, pair)[0]
    left = tr.s >= 3.0
    assert np.abs(tr.values[left] - math.sqrt(2)).max() < 0.01


def test_zero_field_trace_is_zero():
    spec = square_spec("dirichlet")
    pair = synthetic_pair(spec, 201, lambda X, Y: 0.0 * X, math.pi)
    for tr in extract_trace(spec, pair):
        assert np.all(tr.values == 0.0)


def test_trace_density_and_spacing(torus_d):
    tr = torus_d.traces[0][0]
    grid = torus_d.op.grid
    assert tr.ds <= grid.h / 2
    assert len(tr.s) >= 4 * tr.length / grid.h - 1


def test_neumann_trace_consistent_with_interior(torus_n):
    grid = torus_n.op.grid
    for pair, traces in zip(torus_n.pairs[1:6], torus_n.traces[1:6]):
        gx, gy = np.gradient(pair.field, grid.hy, grid.hx)
        grad_max = np.sqrt(gx**2 + gy**2)[grid.active].max()
        tr = traces[0]
        from sinailab.eigensolver import component_frames
        pts, nrm = component_frames(torus_n.spec, 0, tr.s)
        inner = interpolate(grid, pair.field,
                            pts[:, 0] + grid.h * nrm[:, 0],
                            pts[:, 1] + grid.h * nrm[:, 1])
        assert np.abs(tr.values - inner).max() <= 10 * grid.h * grad_max


# --- archive -----------------------------------------------------------------

def test_archive_roundtrip(tmp_path):
    spec = torus_spec("dirichlet")
    op = assemble_laplacian(spec, 64)
    pairs = solve_lowest(op, 8)
    traces = [extract_trace(spec, p) for p in pairs]
    save_eigen_archive(tmp_path / "arch", op, pairs, traces)
    header, loaded = load_eigen_archive(tmp_path / "arch")
    assert header["bc"] == "dirichlet"
    assert len(loaded) == 8
    for a, b in zip(pairs, loaded):
        assert a.lam == b.lam
        assert np.array_equal(a.field, b.field)
    assert (tmp_path / "arch" / "traces.csv").exists()
