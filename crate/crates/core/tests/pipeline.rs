use mvtn::dataio::{synthetic_dataset, ClassCount, Dataset, ShapeClass, Split, SyntheticSpec};
use mvtn::mvrender::RenderOptions;
use mvtn::netblocks::NetConfig;
use mvtn::retrieval::{extract_signatures, lfda_fit, mean_ap, project_all};
use mvtn::robustness::{occlusion_robustness_eval, rotation_robustness_eval, RotationSpec};
use mvtn::trainer::{evaluate, train, Model, TrainConfig, ViewMode};

fn tiny_data() -> Dataset {
    let spec = SyntheticSpec {
        classes: [ShapeClass::Sphere, ShapeClass::Cube, ShapeClass::Torus]
            .into_iter()
            .map(|class| ClassCount { class, train: 3, test: 2 })
            .collect(),
        points: 96,
    };
    synthetic_dataset(&spec, 5).unwrap()
}

fn tiny_config(mode: ViewMode) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 3,
        views: 3,
        points: 96,
        view_mode: mode,
        render: RenderOptions { width: 12, height: 12, radius: 0.15, ..RenderOptions::default() },
        net: NetConfig { channels: vec![4, 4], mid: 4, dim: 6, point_hidden: vec![6], point_dim: 6 },
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_round_trip_keeps_predictions() {
    let data = tiny_data();
    let cfg = tiny_config(ViewMode::MvtnSpherical);
    let out = train(&data, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    out.model.save(&path).unwrap();
    let loaded = Model::load(&cfg, data.classes, &path).unwrap();

    let test = data.split(Split::Test);
    let a = evaluate(&out.model, &test).unwrap();
    let b = evaluate(&loaded, &test).unwrap();
    assert_eq!(a, b);
    for s in &test.samples {
        assert_eq!(out.model.infer(&s.cloud).unwrap(), loaded.infer(&s.cloud).unwrap());
    }
}

#[test]
fn trained_model_feeds_retrieval_and_robustness() {
    let data = tiny_data();
    let out = train(&data, &tiny_config(ViewMode::Circular)).unwrap();
    let gallery = extract_signatures(&out.model, &data.split(Split::Train)).unwrap();
    let queries = extract_signatures(&out.model, &data.split(Split::Test)).unwrap();
    assert_eq!(gallery.len(), 9);
    assert!(gallery.iter().all(|s| s.vector.len() == 6));

    let map = mean_ap(&queries, &gallery, false).unwrap();
    assert!((0.0..=1.0).contains(&map));

    let features: Vec<Vec<f64>> = gallery.iter().map(|s| s.vector.clone()).collect();
    let labels: Vec<usize> = gallery.iter().map(|s| s.label).collect();
    let lfda = lfda_fit(&features, &labels, 2, Some(2)).unwrap();
    let projected = project_all(&lfda, &queries).unwrap();
    assert!(projected.iter().all(|s| s.vector.len() == 2 && s.vector.iter().all(|v| v.is_finite())));

    let test = data.split(Split::Test);
    let plain = evaluate(&out.model, &test).unwrap().overall;
    let still = rotation_robustness_eval(&out.model, &test, &RotationSpec { max_angle: 0.0, repeats: 2, seed: 0 }).unwrap();
    assert_eq!(still.mean, plain);
    assert_eq!(still.std, 0.0);

    let rows = occlusion_robustness_eval(&out.model, &test, &[0.0, 0.5]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].per_direction.iter().all(|&a| a == plain));
}

#[test]
fn learned_views_stay_canonical_after_training() {
    let data = tiny_data();
    let cfg = TrainConfig { regressor_lr: 0.5, ..tiny_config(ViewMode::MvtnDirect) };
    let out = train(&data, &cfg).unwrap();
    for s in &data.samples {
        let v = out.model.views_for(&s.cloud).unwrap();
        assert!(v.azimuth.iter().all(|a| *a > -180.0 && *a <= 180.0));
        assert!(v.elevation.iter().all(|e| (-90.0..=90.0).contains(e)));
    }
}
