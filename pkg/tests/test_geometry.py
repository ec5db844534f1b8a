import math

import numpy as np
import pytest

from sinailab import geometry
from sinailab.geometry import (
    ObstacleOutsideDomain,
    OverlappingObstacles,
    TorusWithoutObstacle,
    UnknownComponent,
    boundary_eval,
    build_surface,
    component_count,
    component_length,
    load_surface,
)


def torus_one_disk(bc="dirichlet"):
    return build_surface({
        "base": "torus", "width": 1.0, "height": 1.0, "bc": bc,
        "obstacles": [(0.5, 0.5, 0.2)],
    })


def test_torus_embedding_counts():
    spec = torus_one_disk()
    assert spec.genus_tilde == 1
    assert spec.holes == 1
    assert spec.euler_defect == -1


def test_rectangle_embedding_counts():
    spec = build_surface({"base": "rectangle", "width": 1.0, "height": 1.0,
                          "bc": "dirichlet", "obstacles": []})
    assert spec.genus_tilde == 0
    assert spec.holes == 1
    assert spec.euler_defect == 1


def test_overlapping_obstacles_reports_clearance():
    with pytest.raises(OverlappingObstacles) as exc:
        build_surface({"base": "torus", "width": 1.0, "height": 1.0, "bc": "dirichlet",
                       "obstacles": [(0.3, 0.5, 0.25), (0.7, 0.5, 0.25)]})
    assert exc.value.clearance == pytest.approx(-0.1, abs=1e-12)


def test_torus_periodic_image_overlap_detected():
    # one disk of radius 0.48 on the unit torus leaves only a 0.04 gap with
    # its own periodic images, below the masked-grid clearance rule
    with pytest.raises(OverlappingObstacles):
        build_surface({"base": "torus", "width": 1.0, "height": 1.0, "bc": "dirichlet",
                       "obstacles": [(0.5, 0.5, 0.48)]})


def test_torus_without_obstacle_rejected():
    with pytest.raises(TorusWithoutObstacle):
        build_surface({"base": "torus", "width": 1.0, "height": 1.0,
                       "bc": "dirichlet", "obstacles": []})


def test_obstacle_outside_rectangle_rejected():
    with pytest.raises(ObstacleOutsideDomain):
        build_surface({"base": "rectangle", "width": 1.0, "height": 1.0,
                       "bc": "dirichlet", "obstacles": [(0.95, 0.5, 0.2)]})


def test_circle_frame_values():
    spec = torus_one_disk()
    fr = boundary_eval(spec, 0, 0.0)
    assert fr.point == pytest.approx((0.7, 0.5), abs=1e-14)
    assert fr.normal == pytest.approx((1.0, 0.0), abs=1e-14)
    assert fr.curvature == pytest.approx(5.0)

    fr = boundary_eval(spec, 0, math.pi * 0.2)
    assert fr.point == pytest.approx((0.3, 0.5), abs=1e-12)
    assert fr.normal == pytest.approx((-1.0, 0.0), abs=1e-12)


def test_boundary_eval_wraps():
    spec = torus_one_disk()
    length = component_length(spec, 0)
    a = boundary_eval(spec, 0, 0.1)
    b = boundary_eval(spec, 0, length + 0.1)
    assert a.point == pytest.approx(b.point, abs=1e-12)
    assert a.tangent == pytest.approx(b.tangent, abs=1e-12)


def test_unknown_component():
    spec = torus_one_disk()
    with pytest.raises(UnknownComponent):
        component_length(spec, 3)


def test_frames_orthonormal_everywhere():
    specs = [
        torus_one_disk(),
        build_surface({"base": "rectangle", "width": 1.5, "height": 1.0,
                       "bc": "neumann", "obstacles": [(0.7, 0.5, 0.2)]}),
    ]
    for spec in specs:
        for comp in range(component_count(spec)):
            length = component_length(spec, comp)
            for s in np.linspace(0.0, length, 257):
                fr = boundary_eval(spec, comp, s)
                tx, ty = fr.tangent
                nx, ny = fr.normal
                assert abs(tx * nx + ty * ny) < 1e-12
                assert abs(math.hypot(tx, ty) - 1.0) < 1e-12
                assert abs(math.hypot(nx, ny) - 1.0) < 1e-12


def test_component_lengths_sum():
    spec = build_surface({"base": "rectangle", "width": 1.5, "height": 1.0,
                          "bc": "neumann", "obstacles": [(0.7, 0.5, 0.2)]})
    total = sum(component_length(spec, c) for c in range(component_count(spec)))
    expected = 2 * math.pi * 0.2 + 2 * (1.5 + 1.0)
    assert abs(total - expected) < 1e-12


def test_rectangle_wall_frames_point_inward():
    spec = build_surface({"base": "rectangle", "width": 1.0, "height": 1.0,
                          "bc": "dirichlet", "obstacles": []})
    bottom = boundary_eval(spec, 0, 0.25)
    assert bottom.point == pytest.approx((0.25, 0.0))
    assert bottom.normal == pytest.approx((0.0, 1.0))
    right = boundary_eval(spec, 0, 1.0 + 0.25)
    assert right.point == pytest.approx((1.0, 0.25))
    assert right.normal == pytest.approx((-1.0, 0.0))
    top = boundary_eval(spec, 0, 2.0 + 0.25)
    assert top.point == pytest.approx((0.75, 1.0))
    assert top.normal == pytest.approx((0.0, -1.0))
    left = boundary_eval(spec, 0, 3.0 + 0.25)
    assert left.point == pytest.approx((0.0, 0.75))
    assert left.normal == pytest.approx((1.0, 0.0))
    assert all(boundary_eval(spec, 0, s).curvature == 0.0
               for s in (0.25, 1.25, 2.25, 3.25))


def test_area_formula():
    spec = torus_one_disk()
    assert spec.area() == pytest.approx(1.0 - math.pi * 0.04, rel=1e-14)


def test_config_file_roundtrip(tmp_path):
    cfg = tmp_path / "table.cfg"
    cfg.write_text(
        "# one-disk torus\n"
        "base = torus\n"
        "width = 1.0\n"
        "height = 1.0\n"
        "bc = neumann\n"
        "obstacle = 0.5 0.5 0.2\n"
    )
    spec = load_surface(cfg)
    assert spec.is_torus
    assert spec.bc == "neumann"
    assert spec.obstacles[0].radius == pytest.approx(0.2)


def test_mixed_outer_bc_rejected(tmp_path):
    cfg = tmp_path / "table.cfg"
    cfg.write_text("base = rectangle\nbc = dirichlet\nouter_bc = neumann\n")
    with pytest.raises(geometry.GeometryError):
        load_surface(cfg)


def test_torus_distance_uses_shortest_image():
    spec = torus_one_disk()
    assert geometry.distance(spec, (0.05, 0.5), (0.95, 0.5)) == pytest.approx(0.1)
