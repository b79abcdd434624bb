use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use tetrapod::balloon::{
    build_shape, export_obj, extract_mesh, BalloonShape, BodyPartConfig, MeshGrid, SdfPrimitive, TriMesh,
};
use tetrapod::geometry::Vec3;
use tetrapod::skeleton::default_skeleton;

fn no_persistence(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

/// Minimal OBJ reader: `v` and triangular `f` records with 1-based indices.
fn read_obj(text: &str) -> TriMesh {
    let mut mesh = TriMesh::default();
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let c: Vec<f64> = parts.map(|s| s.parse().unwrap()).collect();
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = parts.map(|s| s.split('/').next().unwrap().parse::<u32>().unwrap() - 1).collect();
                mesh.triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    mesh
}

fn default_shape() -> BalloonShape {
    build_shape(&default_skeleton(), &BodyPartConfig::default()).unwrap()
}

#[test]
fn meshes_are_closed_and_oriented_at_every_resolution() {
    let sphere = BalloonShape::new(vec![SdfPrimitive::sphere(Vec3::zeros(), 0.5)]);
    let animal = default_shape();
    for res in [16, 32, 64] {
        for shape in [&sphere, &animal] {
            let mesh = extract_mesh(shape, res).unwrap();
            mesh.validate().unwrap();
            assert!(mesh.is_watertight(), "resolution {res}");
            assert!(mesh.is_consistently_oriented(), "resolution {res}");
            assert!(mesh.signed_volume() > 0.0, "normals point inward at {res}");
            let diag = MeshGrid::around(&shape.bounds(), res).cell_diagonal();
            assert!(mesh.vertices.iter().all(|v| shape.sdf(v).abs() < diag));
        }
    }
}

#[test]
fn default_animal_is_one_piece() {
    for res in [32, 48, 64, 96] {
        let mesh = extract_mesh(&default_shape(), res).unwrap();
        assert_eq!(mesh.connected_components(), 1, "resolution {res}");
        assert!(mesh.is_watertight());
    }
}

#[test]
fn sphere_meshes_converge_across_resolutions() {
    let sphere = BalloonShape::new(vec![SdfPrimitive::sphere(Vec3::new(0.1, -0.2, 0.05), 0.5)]);
    let coarse = extract_mesh(&sphere, 32).unwrap();
    let fine = extract_mesh(&sphere, 64).unwrap();
    let cell = MeshGrid::around(&sphere.bounds(), 32).cell.max();
    // vertex-to-nearest-vertex distance in both directions
    let one_way = |a: &TriMesh, b: &TriMesh| {
        a.vertices
            .iter()
            .map(|p| b.vertices.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    let d = one_way(&coarse, &fine).max(one_way(&fine, &coarse));
    assert!(d < 2.0 * cell, "sample distance {d} vs cell {cell}");
    let expected = 4.0 * std::f64::consts::PI * 0.25;
    assert!((fine.surface_area() - expected).abs() / expected < 0.03);
}

#[test]
fn sphere_union_topology() {
    let overlap = BalloonShape::new(vec![
        SdfPrimitive::sphere(Vec3::zeros(), 0.4),
        SdfPrimitive::sphere(Vec3::new(0.5, 0.0, 0.0), 0.4),
    ]);
    let apart = BalloonShape::new(vec![
        SdfPrimitive::sphere(Vec3::zeros(), 0.3),
        SdfPrimitive::sphere(Vec3::new(1.2, 0.0, 0.0), 0.3),
    ]);
    assert_eq!(extract_mesh(&overlap, 40).unwrap().connected_components(), 1);
    let mesh = extract_mesh(&apart, 40).unwrap();
    assert_eq!(mesh.connected_components(), 2);
    assert_eq!(mesh.euler_characteristic(), 4);
}

#[test]
fn obj_round_trip_keeps_connectivity() {
    let mesh = extract_mesh(&default_shape(), 32).unwrap();
    let back = read_obj(&export_obj(&mesh));
    assert_eq!(back.triangles, mesh.triangles);
    assert_eq!(back.vertices.len(), mesh.vertices.len());
    for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
        assert!((a - b).norm() < 1e-7);
    }
    assert!(back.is_watertight());
}

#[test]
fn extraction_is_deterministic() {
    let a = export_obj(&extract_mesh(&default_shape(), 40).unwrap());
    let b = export_obj(&extract_mesh(&default_shape(), 40).unwrap());
    assert_eq!(a, b);
}

fn arb_point() -> impl Strategy<Value = Vec3> {
    (-0.8f64..0.8, -0.5f64..0.5, -0.3f64..1.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn arb_iso() -> impl Strategy<Value = Isometry3<f64>> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0).prop_map(|(x, y, z, a, b, c)| {
        Isometry3::from_parts(Translation3::new(x, y, z), UnitQuaternion::from_scaled_axis(Vector3::new(a, b, c)))
    })
}

proptest! {
    #![proptest_config(no_persistence(64))]

    #[test]
    fn culled_distance_matches_brute_force(p in arb_point()) {
        let shape = default_shape();
        let brute = shape.primitives().iter().map(|q| q.sdf(&p)).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(shape.sdf(&p), brute);
    }

    #[test]
    fn adding_a_primitive_never_increases_distance(p in arb_point(), c in arb_point(), r in 0.01f64..0.3) {
        let shape = default_shape();
        let mut prims = shape.primitives().to_vec();
        prims.push(SdfPrimitive::sphere(c, r));
        prop_assert!(BalloonShape::new(prims).sdf(&p) <= shape.sdf(&p));
    }

    #[test]
    fn shape_follows_rigid_motion_of_the_skeleton(iso in arb_iso(), p in arb_point()) {
        let sk = default_skeleton();
        let cfg = BodyPartConfig::default();
        let moved = build_shape(&sk.transformed(&iso), &cfg).unwrap();
        let expected = build_shape(&sk, &cfg).unwrap().transformed(&iso);
        prop_assert_eq!(moved.primitives().len(), expected.primitives().len());
        for (a, b) in moved.primitives().iter().zip(expected.primitives()) {
            prop_assert_eq!(a.part, b.part);
            prop_assert!((a.center() - b.center()).norm() < 1e-9);
            prop_assert!(a.axis().cross(&b.axis()).norm() < 1e-9);
        }
        let q = iso * nalgebra::Point3::from(p);
        prop_assert!((moved.sdf(&q.coords) - expected.sdf(&q.coords)).abs() < 1e-9);
    }
}
