use proptest::prelude::*;

use super::*;
use crate::dataio::{generate_shape, Sample, ShapeClass, Split};
use crate::mvrender::{ColorMode, LightMode, RenderOptions};
use crate::netblocks::NetConfig;
use crate::trainer::TrainConfig;

fn xs(v: &[f64]) -> PointCloud {
    PointCloud::new(v.iter().map(|&x| [x, 0.0, 0.0]).collect())
}

#[test]
fn occlusion_examples() {
    let c = xs(&[1.0, 2.0, 3.0, 4.0]);
    let spec = |direction, ratio| OcclusionSpec { direction, ratio };
    assert_eq!(occlude(&c, spec(CropDirection::PosX, 0.5)).unwrap(), xs(&[1.0, 2.0]));
    assert_eq!(occlude(&c, spec(CropDirection::NegX, 0.5)).unwrap(), xs(&[3.0, 4.0]));
    assert_eq!(occlude(&c, spec(CropDirection::PosX, 0.0)).unwrap(), c);
    assert_eq!(occlude(&c, spec(CropDirection::PosX, 0.75)).unwrap(), xs(&[1.0]));
    // Survivors keep their order; ties drop the later point.
    let d = xs(&[2.0, 0.0, 2.0, 1.0]);
    assert_eq!(occlude(&d, spec(CropDirection::PosX, 0.25)).unwrap(), xs(&[2.0, 0.0, 1.0]));

    assert!(occlude(&c, spec(CropDirection::PosY, 1.0)).is_err());
    assert!(occlude_allow_empty(&c, spec(CropDirection::PosY, 1.0)).unwrap().is_empty());
    assert!(occlude(&c, spec(CropDirection::PosX, 1.5)).is_err());
    assert!(occlude(&xs(&[]), spec(CropDirection::PosX, 0.0)).is_err());
}

#[test]
fn occlusion_keeps_colors() {
    let c = PointCloud::with_colors(vec![[0.0, 1.0, 0.0], [0.0, -1.0, 0.0]], vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let out = occlude(&c, OcclusionSpec { direction: CropDirection::PosY, ratio: 0.5 }).unwrap();
    assert_eq!(out.colors.unwrap(), vec![[0.0, 0.0, 1.0]]);
}

#[test]
fn occlusion_counts_follow_floor_rule() {
    let cloud = generate_shape(ShapeClass::Torus, 1000, 3).unwrap();
    for p in [1usize, 7, 10, 999, 1000] {
        let c = PointCloud::new(cloud.points[..p].to_vec());
        for ratio in [0.0, 0.1, 0.2, 0.3, 0.5, 0.75] {
            for d in CropDirection::ALL {
                let out = occlude_allow_empty(&c, OcclusionSpec { direction: d, ratio }).unwrap();
                assert_eq!(out.len(), p - (ratio * p as f64).floor() as usize);
            }
        }
    }
}

fn mirror(c: &PointCloud, axis: usize) -> PointCloud {
    PointCloud::new(
        c.points
            .iter()
            .map(|p| {
                let mut q = *p;
                q[axis] = -q[axis];
                q
            })
            .collect(),
    )
}

proptest! {
    #[test]
    fn opposite_crops_are_mirror_images(
        pts in prop::collection::vec(prop::array::uniform3(-3i32..3), 1..40),
        ratio in 0.0f64..0.99,
        axis in 0usize..3,
    ) {
        // Small integer grids make ties common.
        let cloud = PointCloud::new(pts.iter().map(|p| p.map(|v| v as f64 * 0.5)).collect());
        let before = cloud.clone();
        let (pos, neg) = [(CropDirection::PosX, CropDirection::NegX), (CropDirection::PosY, CropDirection::NegY), (CropDirection::PosZ, CropDirection::NegZ)][axis];
        let a = occlude_allow_empty(&cloud, OcclusionSpec { direction: pos, ratio }).unwrap();
        let b = mirror(&occlude_allow_empty(&mirror(&cloud, axis), OcclusionSpec { direction: neg, ratio }).unwrap(), axis);
        prop_assert_eq!(a, b);
        prop_assert_eq!(cloud, before);
    }

    #[test]
    fn survivors_never_exceed_dropped_points(
        pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..50),
        ratio in 0.0f64..1.0,
        d in 0usize..6,
    ) {
        let cloud = PointCloud::new(pts);
        let dir = CropDirection::ALL[d];
        let (axis, sign) = (dir.axis(), dir.sign());
        let out = occlude_allow_empty(&cloud, OcclusionSpec { direction: dir, ratio }).unwrap();
        let kept_max = out.points.iter().map(|p| sign * p[axis]).fold(f64::NEG_INFINITY, f64::max);
        let dropped = cloud.points.iter().filter(|p| !out.points.contains(p));
        for p in dropped {
            prop_assert!(sign * p[axis] >= kept_max);
        }
    }
}

fn model_and_data() -> (Model, Dataset) {
    let cfg = TrainConfig {
        views: 2,
        points: 64,
        render: RenderOptions {
            width: 16,
            height: 16,
            radius: 0.15,
            light: LightMode::Relative,
            color: ColorMode::White,
            ..RenderOptions::default()
        },
        net: NetConfig { channels: vec![4, 8], mid: 8, dim: 8, point_hidden: vec![8], point_dim: 8 },
        ..TrainConfig::default()
    };
    let model = Model::new(&cfg, 3).unwrap();
    let classes = [ShapeClass::Cube, ShapeClass::Sphere, ShapeClass::Cone];
    let samples = (0..9)
        .map(|i| Sample {
            id: format!("s{i}"),
            label: i % 3,
            split: Split::Test,
            cloud: generate_shape(classes[i % 3], 64, i as u64).unwrap(),
        })
        .collect();
    (model, Dataset::new(samples, 3).unwrap())
}

#[test]
fn zero_rotation_matches_evaluate() {
    let (model, data) = model_and_data();
    let plain = evaluate(&model, &data).unwrap().overall;
    let spec = RotationSpec { max_angle: 0.0, repeats: 10, seed: 4 };
    let r = rotation_robustness_eval(&model, &data, &spec).unwrap();
    assert_eq!(r.accuracies.len(), 10);
    assert_eq!(r.mean, plain);
    assert_eq!(r.std, 0.0);
}

#[test]
fn rotation_is_seeded() {
    let (model, data) = model_and_data();
    let spec = RotationSpec { max_angle: 180.0, repeats: 3, seed: 9 };
    let a = rotation_robustness_eval(&model, &data, &spec).unwrap();
    assert_eq!(a, rotation_robustness_eval(&model, &data, &spec).unwrap());
    let one = RotationSpec { repeats: 1, ..spec };
    assert_eq!(rotation_robustness_eval(&model, &data, &one).unwrap().accuracies[0], a.accuracies[0]);
    assert!(rotation_robustness_eval(&model, &data, &RotationSpec { repeats: 0, ..spec }).is_err());

    let angles: Vec<f64> = (0..200).map(|i| rotation_angle(&spec, 1, i)).collect();
    assert!(angles.iter().all(|a| a.abs() <= 180.0));
    assert!(angles.iter().any(|a| *a > 90.0) && angles.iter().any(|a| *a < -90.0));
    assert_ne!(rotation_angle(&spec, 0, 5), rotation_angle(&spec, 1, 5));
}

#[test]
fn occlusion_table_shape() {
    let (model, data) = model_and_data();
    let plain = evaluate(&model, &data).unwrap().overall;
    let rows = occlusion_robustness_eval(&model, &data, &[0.0, 0.3, 0.75]).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].per_direction, [plain; 6]);
    assert_eq!(rows[0].mean, plain);
    for r in &rows {
        assert!((r.mean - r.per_direction.iter().sum::<f64>() / 6.0).abs() < 1e-15);
    }
    assert!(occlusion_robustness_eval(&model, &data, &[1.0]).is_err());
}

#[test]
fn robustness_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("robustness.csv");
    let spec = RotationSpec::default();
    let rows = vec![
        RobustnessRow::rotation(&spec, &RotationReport { mean: 0.625, std: 0.1, accuracies: vec![] }),
        RobustnessRow::occlusion(&OcclusionRow { ratio: 0.3, mean: 1.0 / 3.0, std: 0.0, per_direction: [1.0 / 3.0; 6] }),
    ];
    write_robustness_csv(&path, &rows).unwrap();
    assert_eq!(read_robustness_csv(&path).unwrap(), rows);
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("perturbation,parameter,mean_acc,std_acc,repeats\n"));
}
