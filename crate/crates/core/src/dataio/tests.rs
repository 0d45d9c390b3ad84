use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const CUBE_OFF: &str = "OFF
# unit cube
8 12 0
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
3 0 2 1
3 0 3 2
3 4 5 6
3 4 6 7
3 0 1 5
3 0 5 4
3 2 3 7
3 2 7 6
3 1 2 6
3 1 6 5
3 0 4 7
3 0 7 3
";

fn p() -> &'static Path {
    Path::new("fixture")
}

#[test]
fn off_cube_fixture() {
    let m = parse_off(CUBE_OFF, p()).unwrap();
    assert_eq!((m.vertices.len(), m.faces.len()), (8, 12));
    let area: f64 = (0..12).map(|f| m.face_area(f)).sum();
    assert!((area - 6.0).abs() < 1e-12);
}

#[test]
fn off_quads_are_triangulated_and_inline_counts_accepted() {
    let m = parse_off("OFF 4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n", p()).unwrap();
    assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
}

fn parse_line(r: Result<Mesh>) -> usize {
    match r {
        Err(crate::Error::Parse { line, .. }) => line,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn off_errors_carry_line_numbers() {
    assert_eq!(parse_line(parse_off("", p())), 1);
    assert_eq!(parse_line(parse_off("PLY\n", p())), 1);
    assert_eq!(parse_line(parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n", p())), 5);
    assert_eq!(parse_line(parse_off("OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n", p())), 4);
    assert_eq!(parse_line(parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n", p())), 6);
    assert_eq!(parse_line(parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n3 0 1 2\n", p())), 7);
}

const PLY_POINTS: [[f32; 3]; 5] = [[0.1, 0.2, 0.3], [-1.5, 2.25, 0.0], [3.0e-3, -7.0, 1.0], [0.5, 0.5, 0.5], [1e6, -1e-6, 42.0]];

#[test]
fn ply_ascii_points() {
    let mut text = String::from(
        "ply\nformat ascii 1.0\ncomment test\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
    );
    for q in PLY_POINTS {
        text.push_str(&format!("{} {} {}\n", q[0], q[1], q[2]));
    }
    let Geometry::Points(c) = parse_ply(text.as_bytes(), p()).unwrap() else { panic!("expected points") };
    assert_eq!(c.len(), 5);
    for (a, q) in c.points.iter().zip(PLY_POINTS) {
        let want: [f64; 3] = q.map(|v| format!("{v}").parse().unwrap());
        assert_eq!(*a, want);
    }
}

#[test]
fn ply_binary_points_and_mesh() {
    let mut b = b"ply\nformat binary_little_endian 1.0\nelement vertex 5\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n".to_vec();
    for q in PLY_POINTS {
        for v in q {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&[255, 0, 51]);
    }
    let Geometry::Points(c) = parse_ply(&b, p()).unwrap() else { panic!("expected points") };
    for (a, q) in c.points.iter().zip(PLY_POINTS) {
        assert_eq!(*a, q.map(f64::from));
    }
    let col = c.colors.as_ref().unwrap()[0];
    assert!((col[0] - 1.0).abs() < 1e-12 && col[1] == 0.0 && (col[2] - 0.2).abs() < 1e-12);
    assert!(parse_ply(&b[..b.len() - 1], p()).is_err());

    let mut m = b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
    for v in [0.0f64, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0] {
        m.extend_from_slice(&v.to_le_bytes());
    }
    m.push(3);
    for i in [0i32, 1, 2] {
        m.extend_from_slice(&i.to_le_bytes());
    }
    let Geometry::Mesh(mesh) = parse_ply(&m, p()).unwrap() else { panic!("expected mesh") };
    assert_eq!(mesh.faces, vec![[0, 1, 2]]);
}

#[test]
fn ply_rejects_bad_input() {
    assert!(parse_ply(b"", p()).is_err());
    assert!(parse_ply(
        b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n",
        p()
    )
    .is_err());
    assert!(parse_ply(
        b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n4 5 6\n",
        p()
    )
    .is_err());
    assert!(parse_ply(b"ply\nformat binary_big_endian 1.0\nend_header\n", p()).is_err());
}

fn contains(tri: [[f64; 3]; 3], q: [f64; 3]) -> bool {
    // Barycentric coordinates in the triangle's plane.
    let [a, b, c] = tri;
    let (v0, v1, v2) = (crate::geomcam::sub(b, a), crate::geomcam::sub(c, a), crate::geomcam::sub(q, a));
    let d = crate::geomcam::dot;
    let (d00, d01, d11, d20, d21) = (d(v0, v0), d(v0, v1), d(v1, v1), d(v2, v0), d(v2, v1));
    let den = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    let n = crate::geomcam::cross(v0, v1);
    let off = d(v2, n) / crate::geomcam::norm(n);
    v >= -1e-12 && w >= -1e-12 && v + w <= 1.0 + 1e-12 && off.abs() < 1e-12
}

#[test]
fn samples_lie_on_the_triangle() {
    let tri = [[0.2, -1.0, 0.5], [1.5, 0.3, -0.2], [-0.4, 0.9, 1.1]];
    let m = Mesh::new(tri.to_vec(), vec![[0, 1, 2]]).unwrap();
    let c = sample_points(&m, 2000, 3).unwrap();
    assert!(c.points.iter().all(|q| contains(tri, *q)));
    assert_eq!(c, sample_points(&m, 2000, 3).unwrap());
    assert_ne!(c, sample_points(&m, 2000, 4).unwrap());
}

#[test]
fn face_hits_follow_area() {
    // Areas 1 and 3.
    let m = Mesh::new(
        vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 5.0], [2.0, 0.0, 5.0], [0.0, 3.0, 5.0]],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    let c = sample_points(&m, 10_000, 5).unwrap();
    let big = c.points.iter().filter(|q| q[2] > 2.5).count() as f64 / 1e4;
    assert!((big - 0.75).abs() < 0.02);
    assert!(sample_points(&Mesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 2]]).unwrap(), 10, 0).is_err());
}

#[test]
fn sample_density_passes_chi_square() {
    // Four faces of areas 1, 2, 3, 4 laid out on separate z planes.
    let mut verts = vec![];
    let mut faces = vec![];
    for (i, a) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
        let z = i as f64;
        verts.extend([[0.0, 0.0, z], [2.0 * a, 0.0, z], [0.0, 1.0, z]]);
        faces.push([3 * i, 3 * i + 1, 3 * i + 2]);
    }
    let m = Mesh::new(verts, faces).unwrap();
    let n = 10_000;
    let c = sample_points(&m, n, 11).unwrap();
    let mut hits = [0.0; 4];
    for q in &c.points {
        hits[q[2].round() as usize] += 1.0;
    }
    let chi2: f64 = (0..4)
        .map(|i| {
            let e = n as f64 * (i + 1) as f64 / 10.0;
            (hits[i] - e).powi(2) / e
        })
        .sum();
    // Critical value of chi-square with 3 degrees of freedom at p = 0.001.
    assert!(chi2 < 16.266, "chi2 = {chi2}");
}

#[test]
fn unit_normalize_examples() {
    let c = unit_normalize(&PointCloud::new(vec![[0.0; 3], [2.0, 0.0, 0.0]])).unwrap();
    assert_eq!(c.points, vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let raw = PointCloud::new((0..50).map(|_| [rng.gen_range(-5.0..9.0), rng.gen_range(-1.0..1.0), rng.gen_range(3.0..4.0)]).collect());
        let once = unit_normalize(&raw).unwrap();
        let cen = once.centroid();
        assert!(cen.iter().all(|v| v.abs() < 1e-12));
        let r = once.points.iter().map(|q| crate::geomcam::norm(*q)).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-12);
        let twice = unit_normalize(&once).unwrap();
        for (a, b) in once.points.iter().zip(&twice.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }
    let same = unit_normalize(&PointCloud::new(vec![[1.0, 2.0, 3.0]; 4])).unwrap();
    assert_eq!(same.points, vec![[0.0; 3]; 4]);
    assert!(unit_normalize(&PointCloud::new(vec![])).is_err());
}

fn spec(pairs: &[(ShapeClass, usize, usize)], points: usize) -> SyntheticSpec {
    SyntheticSpec { classes: pairs.iter().map(|&(class, train, test)| ClassCount { class, train, test }).collect(), points }
}

#[test]
fn synthetic_dataset_is_reproducible() {
    let s = spec(&[(ShapeClass::Sphere, 10, 0), (ShapeClass::Cube, 10, 0)], 64);
    let (recs, clouds) = make_synthetic_dataset(&s, 9).unwrap();
    assert_eq!(recs.len(), 20);
    assert_eq!(clouds.len(), 20);
    let labels: std::collections::BTreeSet<usize> = recs.iter().map(|r| r.label).collect();
    assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(make_synthetic_dataset(&s, 9).unwrap(), (recs, clouds.clone()));
    assert_ne!(make_synthetic_dataset(&s, 10).unwrap().1, clouds);
    assert!(ShapeClass::from_name("dodecahedron").is_err());
    assert!(serde_json::from_str::<SyntheticSpec>(r#"{"classes":[{"class":"blob","train":1}],"points":4}"#).is_err());
    let dup = spec(&[(ShapeClass::Cube, 1, 0), (ShapeClass::Cube, 1, 0)], 8);
    assert!(make_synthetic_dataset(&dup, 0).is_err());
}

#[test]
fn marked_cube_has_a_stud_and_plain_cube_does_not() {
    for seed in 0..10 {
        let marked = generate_shape(ShapeClass::CubeBottomMarked, 2048, seed).unwrap();
        let plain = generate_shape(ShapeClass::Cube, 2048, seed).unwrap();
        // Same seed gives the same scale; recover it from the top face.
        let top = plain.points.iter().map(|q| q[1]).fold(f64::MIN, f64::max);
        let half = top;
        assert!(marked.points.iter().any(|q| q[1] < -1.05 * half));
        assert!(plain.points.iter().all(|q| q[1] >= -half - 1e-12));
    }
}

#[test]
fn sphere_points_lie_on_the_sphere() {
    for seed in 0..10 {
        let s = generate_shape(ShapeClass::Sphere, 500, seed).unwrap();
        let norms: Vec<f64> = s.points.iter().map(|q| crate::geomcam::norm(*q)).collect();
        let r = norms[0];
        assert!((0.9 * 0.6 - 1e-12..=1.1 * 0.6 + 1e-12).contains(&r));
        assert!(norms.iter().all(|n| (n / r - 1.0).abs() < 0.01));
    }
}

#[test]
fn every_class_generates() {
    for class in ShapeClass::ALL {
        let c = generate_shape(class, 300, 1).unwrap();
        assert_eq!(c.len(), 300);
        assert!(c.points.iter().all(|q| q.iter().all(|v| v.is_finite() && v.abs() < 1.2)));
    }
}

#[test]
fn manifest_and_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(&[(ShapeClass::Torus, 2, 1), (ShapeClass::Cone, 2, 1)], 32);
    let (mut recs, _) = make_synthetic_dataset(&s, 1).unwrap();
    std::fs::write(dir.path().join("cube.off"), CUBE_OFF).unwrap();
    recs.push(ManifestRecord { id: "file-cube".into(), path: Some("cube.off".into()), generator: None, label: 1, split: Split::Test });
    let mpath = dir.path().join("manifest.json");
    write_manifest(&mpath, &recs).unwrap();
    assert_eq!(read_manifest(&mpath).unwrap(), recs);

    let fresh = load_dataset(&mpath, 32, None).unwrap();
    assert_eq!(fresh.len(), 7);
    assert_eq!(fresh.classes, 2);
    assert_eq!(fresh.split(Split::Test).len(), 3);
    let file_cube = &fresh.samples[6].cloud;
    let r = file_cube.points.iter().map(|q| crate::geomcam::norm(*q)).fold(0.0, f64::max);
    assert!((r - 1.0).abs() < 1e-12);

    let cache = dir.path().join("cache");
    let a = load_dataset(&mpath, 32, Some(&cache)).unwrap();
    let b = load_dataset(&mpath, 32, Some(&cache)).unwrap();
    assert_eq!(a, b);
    for (x, y) in a.samples.iter().zip(&fresh.samples) {
        for (p, q) in x.cloud.points.iter().zip(&y.cloud.points) {
            for k in 0..3 {
                assert_eq!(p[k], q[k] as f32 as f64);
            }
        }
    }

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"[{"id":"a","generator":{"class":"cube","seed":1},"label":1,"split":"train"}]"#).unwrap();
    assert!(read_manifest(&bad).is_err());
    std::fs::write(&bad, r#"[{"id":"a","generator":{"class":"cube","seed":1},"label":0,"split":"train","extra":1}]"#).unwrap();
    assert!(read_manifest(&bad).is_err());
}

#[test]
fn point_cache_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("x.mvpc");
    write_point_cache(&f, &PointCloud::new(vec![[1.0, 2.0, 3.0], [0.5, 0.25, -1.0]])).unwrap();
    assert_eq!(read_point_cache(&f).unwrap().points, vec![[1.0, 2.0, 3.0], [0.5, 0.25, -1.0]]);
    let mut b = std::fs::read(&f).unwrap();
    b.pop();
    std::fs::write(&f, &b).unwrap();
    assert!(read_point_cache(&f).is_err());
}
