import math

import numpy as np
import pytest

import mixdim as mx
from mixdim.geom import (
    Dirichlet,
    GeometryError,
    Junction,
    JunctionBC,
    MeshFormatError,
    MeshValidationError,
    NeumannZero,
    Segment,
    SegmentNetwork,
    infer_junctions,
    make_mesh,
)


def test_box_mesh_n1_counts():
    mesh = mx.build_box_mesh(1)
    assert mesh.num_vertices == 8
    assert mesh.num_tets == 6
    assert math.isclose(mesh.h, 2.0 * math.sqrt(3.0), rel_tol=1e-15)


def test_box_mesh_n2_counts():
    mesh = mx.build_box_mesh(2)
    assert mesh.num_vertices == 27
    assert mesh.num_tets == 48


@pytest.mark.parametrize("n", [1, 2, 3])
def test_volume_partition(n):
    mesh = mx.build_box_mesh(n)
    assert math.isclose(mesh.tet_volumes().sum(), 8.0, rel_tol=1e-12)


def test_all_tets_positively_oriented():
    mesh = mx.build_box_mesh(3)
    assert np.all(mesh.tet_volumes() > 0)


def test_refinement_halves_h():
    h2 = mx.build_box_mesh(2).h
    h4 = mx.build_box_mesh(4).h
    assert math.isclose(h2, 2.0 * h4, rel_tol=1e-14)


def test_invalid_subdivisions():
    with pytest.raises(ValueError):
        mx.build_box_mesh(0)
    with pytest.raises(ValueError):
        mx.build_box_mesh(2, lo=(0, 0, 0), hi=(0, 1, 1))


def test_boundary_face_tags():
    n = 3
    mesh = mx.build_box_mesh(n)
    assert len(mesh.boundary_faces) == 12 * n**2
    counts = {t: int((mesh.boundary_tags == t).sum()) for t in ("top", "bottom", "lateral")}
    assert counts["top"] == 2 * n**2
    assert counts["bottom"] == 2 * n**2
    assert counts["lateral"] == 8 * n**2


def test_interior_faces_shared_by_two_tets():
    mesh = mx.build_box_mesh(2)
    faces = mesh.tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3)
    _, counts = np.unique(np.sort(faces, axis=1), axis=0, return_counts=True)
    assert set(counts.tolist()) <= {1, 2}
    assert int((counts == 1).sum()) == len(mesh.boundary_faces)


def test_mesh_roundtrip(tmp_path):
    mesh = mx.build_box_mesh(2, lo=(-0.3, -1.7, 0.1), hi=(1.1, 0.4, 2.9))
    path = tmp_path / "mesh.txt"
    mx.save_mesh(mesh, path)
    back = mx.load_mesh(path)
    assert np.array_equal(mesh.vertices, back.vertices)
    assert np.array_equal(mesh.tets, back.tets)
    assert np.array_equal(np.sort(mesh.boundary_faces, axis=1),
                          np.sort(back.boundary_faces, axis=1))
    assert np.array_equal(mesh.boundary_tags, back.boundary_tags)


def test_mesh_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 1 0\n0 0 zero\n0 1 2 3\n")
    with pytest.raises(MeshFormatError) as err:
        mx.load_mesh(path)
    assert err.value.line == 2


def test_mesh_vertex_out_of_range(tmp_path):
    mesh = mx.build_box_mesh(1)
    path = tmp_path / "mesh.txt"
    mx.save_mesh(mesh, path)
    lines = path.read_text().splitlines()
    first_tet = 1 + mesh.num_vertices
    lines[first_tet] = "0 1 2 99"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MeshFormatError, match="out of range"):
        mx.load_mesh(path)


def test_face_shared_by_three_tets_rejected():
    verts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, -1], [1, 1, 1]],
        dtype=float,
    )
    tets = np.array([[0, 1, 2, 3], [0, 1, 2, 4], [0, 1, 2, 5]])
    with pytest.raises(MeshValidationError, match="more than two"):
        make_mesh(verts, tets)


def test_split_crossing_segments():
    s0 = Segment(id=0, a=(-1, 0, 0), b=(1, 0, 0), radius=0.1, beta=1.0)
    s1 = Segment(id=1, a=(0, -1, 0), b=(0, 1, 0), radius=0.1, beta=1.0)
    net = SegmentNetwork([s0, s1], [Junction(point=(0, 0, 0))])
    out = mx.split_at_junctions(net)
    assert len(out.segments) == 4
    assert len(out.junctions) == 1
    assert out.junctions[0].arity == 4
    assert math.isclose(out.total_length(), net.total_length(), rel_tol=1e-12)
    for seg_id, flag in out.junctions[0].incidences:
        seg = out.segments[seg_id]
        bc = seg.bc_a if flag == 0 else seg.bc_b
        assert isinstance(bc, JunctionBC)


def test_split_without_junctions_is_identity():
    s0 = Segment(id=0, a=(0, 0, 0), b=(1, 0, 0), radius=0.1, beta=1.0)
    net = SegmentNetwork([s0])
    assert mx.split_at_junctions(net) is net


def test_split_star_of_three():
    p = (0.0, 0.0, 0.0)
    segs = [
        Segment(id=0, a=p, b=(1, 0, 0), radius=0.1, beta=1.0),
        Segment(id=1, a=p, b=(0, 1, 0), radius=0.1, beta=1.0),
        Segment(id=2, a=p, b=(0, 0, 1), radius=0.1, beta=1.0),
    ]
    out = mx.split_at_junctions(SegmentNetwork(segs, [Junction(point=p)]))
    assert len(out.segments) == 3
    assert len(out.junctions) == 1
    assert out.junctions[0].arity == 3


def test_split_inherits_shifted_coefficients():
    seg = Segment(
        id=0, a=(0, 0, 0), b=(2, 0, 0), radius=0.25, beta=3.0,
        conductivity=lambda s: s**2, source=lambda s: 10.0 * s,
    )
    net = SegmentNetwork([seg], [Junction(point=(0.5, 0, 0))])
    out = mx.split_at_junctions(net)
    assert len(out.segments) == 2
    child = out.segments[1]
    assert math.isclose(child.length, 1.5, rel_tol=1e-12)
    assert child.radius == seg.radius and child.beta == seg.beta
    s = np.array([0.0, 0.3, 1.2])
    assert np.allclose(child.conductivity_at(s), (s + 0.5) ** 2)
    assert np.allclose(child.source_at(s), 10.0 * (s + 0.5))


def test_junction_far_from_segments_raises():
    seg = Segment(id=0, a=(0, 0, 0), b=(1, 0, 0), radius=0.1, beta=1.0)
    net = SegmentNetwork([seg], [Junction(point=(0.5, 0.5, 0.0))])
    with pytest.raises(GeometryError, match="farther"):
        mx.split_at_junctions(net)


def test_dirichlet_endpoint_in_junction_rejected():
    segs = [
        Segment(id=0, a=(0, 0, 0), b=(1, 0, 0), radius=0.1, beta=1.0,
                bc_b=Dirichlet(2.0)),
        Segment(id=1, a=(1, 0, 0), b=(1, 1, 0), radius=0.1, beta=1.0),
    ]
    with pytest.raises(GeometryError, match="Dirichlet"):
        mx.split_at_junctions(SegmentNetwork(segs, [Junction(point=(1, 0, 0))]))


def test_segment_validation():
    with pytest.raises(GeometryError):
        Segment(id=0, a=(0, 0, 0), b=(0, 0, 0), radius=0.1, beta=1.0)
    with pytest.raises(GeometryError):
        Segment(id=0, a=(0, 0, 0), b=(1, 0, 0), radius=0.0, beta=1.0)
    with pytest.raises(GeometryError):
        Segment(id=0, a=(0, 0, 0), b=(1, 0, 0), radius=0.1, beta=-1.0)


def test_section_functions_positive():
    seg = Segment(id=0, a=(0, 0, 0), b=(0, 0, 2), radius=0.01, beta=1.0)
    s = np.linspace(0, seg.length, 7)
    assert np.all(seg.perimeter(s) > 0)
    assert np.all(seg.area(s) > 0)
    assert np.allclose(seg.perimeter(s), 2 * math.pi * 0.01)
    assert np.allclose(seg.area(s), math.pi * 0.01**2)


def test_random_network_deterministic():
    a = mx.generate_random_network(5, min_length=0.3, seed=1)
    b = mx.generate_random_network(5, min_length=0.3, seed=1)
    assert len(a.segments) == len(b.segments)
    for sa, sb in zip(a.segments, b.segments):
        assert np.array_equal(sa.a, sb.a)
        assert np.array_equal(sa.b, sb.b)
        assert sa.bc_a == sb.bc_a and sa.bc_b == sb.bc_b
    assert len(a.junctions) == len(b.junctions)


def test_random_network_single_segment():
    net = mx.generate_random_network(1, min_length=0.3, seed=4)
    assert len(net.segments) == 1
    assert not net.junctions


def test_random_network_endpoints_inside_closed_box():
    net = mx.generate_random_network(100, min_length=0.25, seed=1)
    lo = np.array([-1.0, -1.0, -1.0])
    hi = np.array([1.0, 1.0, 1.0])
    for seg in net.segments:
        for p in (seg.a, seg.b):
            assert np.all(p >= lo - 1e-12) and np.all(p <= hi + 1e-12)


def test_random_network_box_too_small():
    with pytest.raises(ValueError, match="too small"):
        mx.generate_random_network(3, box=((0, 0, 0), (0.1, 0.1, 0.1)), min_length=0.5, seed=0)


def test_random_network_total_length_preserved_by_split():
    # Splitting happens inside the generator; rebuild by hand to check.
    net = mx.generate_random_network(12, min_length=0.3, seed=2)
    assert all(isinstance(s.bc_a, (Dirichlet, NeumannZero, JunctionBC)) for s in net.segments)
    net.validate()


def test_network_roundtrip(tmp_path):
    segs = [
        Segment(id=0, a=(0, 0, -1), b=(0, 0, 0.2), radius=0.02, beta=0.5,
                conductivity=3.0, source=1.5, bc_a=Dirichlet(2.5)),
        Segment(id=1, a=(0, 0, 0.2), b=(0.4, 0.1, 0.8), radius=0.02, beta=0.5,
                conductivity=3.0, source=1.5),
    ]
    net = infer_junctions(segs)
    assert len(net.junctions) == 1
    path = tmp_path / "net.txt"
    mx.save_network(net, path)
    back = mx.load_network(path)
    assert len(back.segments) == 2
    assert len(back.junctions) == 1
    for sa, sb in zip(net.segments, back.segments):
        assert np.array_equal(sa.a, sb.a) and np.array_equal(sa.b, sb.b)
        assert sa.radius == sb.radius and sa.beta == sb.beta
        assert sa.conductivity == sb.conductivity and sa.source == sb.source
    assert isinstance(back.segments[0].bc_a, Dirichlet)
    assert back.segments[0].bc_a.value == 2.5


def test_network_parse_error(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 0 0 1 0 0 0.1 1.0 1.0 0.0 N\n")
    with pytest.raises(MeshFormatError, match="12 fields"):
        mx.load_network(path)
