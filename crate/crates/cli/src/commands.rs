use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use mvtn::cloud::PointCloud;
use mvtn::dataio::{
    generate_shape, load_off, load_ply, make_synthetic_dataset, sample_points, unit_normalize, write_manifest, write_point_cache, Dataset,
    Geometry, ShapeClass, Split, SyntheticSpec,
};
use mvtn::geomcam::{circular_config, random_config, spherical_config};
use mvtn::mvrender::{render_views, save_view_grid, Augmentation, ColorMode, LightMode, RenderOptions};
use mvtn::retrieval::{extract_signatures, lfda_fit, project_all, report_rows, run_queries, write_retrieval_csv, write_signatures};
use mvtn::robustness::{occlusion_robustness_eval, rotation_robustness_eval, write_robustness_csv, RobustnessRow, RotationSpec};
use mvtn::selfcheck::{network_check, renderer_check, NET_TOL, RENDER_PASS_FRACTION, RENDER_TOL};
use mvtn::trainer::{evaluate, optimize_scene_params, write_metrics_csv, EpochMetrics, Model, ParamOptConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ModelFile, RunConfig, CHECKPOINT, MODEL_FILE, RESOLVED_CONFIG};
use crate::output::{csv_field, prepare, write_checksums, write_json};
use crate::{
    ConfigFlags, GenDataArgs, GradCheckArgs, OptimizeArgs, RenderArgs, RetrieveArgs, RobustnessArgs, RunArgs, TrainArgs, UsageError,
    ViewsArg,
};

/// Shapes drawn in `views/` by commands that render a few test shapes.
const PREVIEW_SHAPES: usize = 4;

pub fn gen_data(a: GenDataArgs) -> anyhow::Result<u8> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| UsageError(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| UsageError(format!("bad spec {}: {e}", p.display())))?
        }
        None => SyntheticSpec::seven_class(),
    };
    spec.points = a.points;
    let inputs: Vec<&Path> = a.spec.iter().map(|p| p.as_path()).collect();
    prepare(&a.out, &inputs)?;
    let (records, clouds) = make_synthetic_dataset(&spec, a.seed).map_err(|e| UsageError(e.to_string()))?;
    write_manifest(&a.out.join("manifest.json"), &records)?;
    // Named the way `load_dataset` looks up its cache.
    let shapes = a.out.join("shapes");
    std::fs::create_dir_all(&shapes)?;
    for (r, c) in records.iter().zip(&clouds) {
        write_point_cache(&shapes.join(format!("{}-{}.mvpc", r.id, spec.points)), c)?;
    }
    let mut cfg = RunConfig { synthetic: spec.clone(), data_seed: a.seed, ..RunConfig::default() };
    cfg.train.points = spec.points;
    cfg.write(&a.out.join(RESOLVED_CONFIG))?;
    write_checksums(&a.out)?;
    println!("wrote {} shapes in {} classes to {}", records.len(), spec.classes.len(), a.out.display());
    Ok(0)
}

fn apply_flags(cfg: &mut RunConfig, f: &ConfigFlags) {
    if let Some(m) = &f.manifest {
        cfg.manifest = Some(m.clone());
    }
    let t = &mut cfg.train;
    if let Some(v) = f.seed {
        t.seed = v;
    }
    if let Some(v) = f.epochs {
        t.epochs = v;
    }
    if let Some(v) = f.view_mode {
        t.view_mode = v.into();
    }
    if let Some(v) = f.views {
        t.views = v;
    }
    if let Some(v) = f.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = f.lr {
        t.lr = v;
    }
    if let Some(v) = f.points {
        t.points = v;
    }
    if let Some(v) = f.image_size {
        t.render.width = v;
        t.render.height = v;
    }
}

fn render_previews(model: &Model, data: &Dataset, dir: &Path) -> anyhow::Result<()> {
    let views = dir.join("views");
    std::fs::create_dir_all(&views)?;
    for s in data.samples.iter().take(PREVIEW_SHAPES) {
        let v = model.views_for(&s.cloud)?;
        let img = render_views(&s.cloud, &v, &model.config.render, &Augmentation::test_default())?;
        save_view_grid(views.join(format!("{}.png", s.id)), &[img])?;
    }
    Ok(())
}

/// First test shape of each class, in label order.
fn one_per_class(data: &Dataset) -> Dataset {
    let test = data.split(Split::Test);
    let mut samples = Vec::new();
    for c in 0..data.classes {
        samples.extend(test.samples.iter().find(|s| s.label == c).cloned());
    }
    Dataset { samples, classes: data.classes }
}

pub fn train(a: TrainArgs) -> anyhow::Result<u8> {
    let mut cfg = RunConfig::load(a.flags.config.as_deref())?;
    apply_flags(&mut cfg, &a.flags);
    if a.out.is_some() {
        cfg.out = a.out;
    }
    let out = cfg.out.clone().ok_or_else(|| UsageError("an output directory is required (--out or \"out\")".into()))?;
    cfg.validate()?;
    let inputs: Vec<&Path> = cfg.manifest.iter().chain(&cfg.cache).map(|p| p.as_path()).collect();
    prepare(&out, &inputs)?;
    let data = cfg.dataset()?;
    cfg.write(&out.join(RESOLVED_CONFIG))?;

    let outcome = mvtn::trainer::train(&data, &cfg.train)?;
    outcome.model.save(&out.join(CHECKPOINT))?;
    write_json(&out.join(MODEL_FILE), &ModelFile { classes: data.classes, config: cfg.train.clone() })?;
    write_metrics_csv(&out.join("metrics.csv"), &outcome.metrics)?;
    render_previews(&outcome.model, &one_per_class(&data), &out)?;
    write_checksums(&out)?;
    for m in outcome.metrics.iter().rev().take(2).rev() {
        println!("epoch {} {}: loss {:.4} overall {:.4} per-class {:.4}", m.epoch, m.split.name(), m.loss, m.overall_acc, m.per_class_acc);
    }
    Ok(0)
}

/// Config, frozen model and full dataset of a training run.
fn load_run(dir: &Path) -> anyhow::Result<(RunConfig, Model, Dataset)> {
    let cfg = RunConfig::from_file(&dir.join(RESOLVED_CONFIG))?;
    let text = std::fs::read_to_string(dir.join(MODEL_FILE)).with_context(|| format!("reading {}", dir.join(MODEL_FILE).display()))?;
    let mf: ModelFile = serde_json::from_str(&text).map_err(|e| UsageError(format!("bad {MODEL_FILE}: {e}")))?;
    let model = Model::load(&mf.config, mf.classes, &dir.join(CHECKPOINT))?;
    let data = cfg.dataset()?;
    if data.classes != mf.classes {
        anyhow::bail!("dataset has {} classes but the model was trained on {}", data.classes, mf.classes);
    }
    Ok((cfg, model, data))
}

fn start_from_run(a: &RunArgs) -> anyhow::Result<(RunConfig, Model, Dataset)> {
    prepare(&a.out, &[&a.run])?;
    let loaded = load_run(&a.run)?;
    loaded.0.write(&a.out.join(RESOLVED_CONFIG))?;
    Ok(loaded)
}

pub fn eval(a: RunArgs) -> anyhow::Result<u8> {
    let (cfg, model, data) = start_from_run(&a)?;
    let test = data.split(Split::Test);
    let r = evaluate(&model, &test)?;
    let row = EpochMetrics {
        epoch: cfg.train.epochs,
        split: Split::Test,
        loss: r.loss,
        overall_acc: r.overall,
        per_class_acc: r.per_class,
        wall_ms: 0,
    };
    write_metrics_csv(&a.out.join("metrics.csv"), &[row])?;
    let mut text = String::from("id,label,predicted\n");
    for (s, p) in test.samples.iter().zip(&r.predictions) {
        let _ = writeln!(text, "{},{},{p}", csv_field(&s.id)?, s.label);
    }
    std::fs::write(a.out.join("predictions.csv"), text)?;
    write_checksums(&a.out)?;
    println!("test: loss {:.4} overall {:.4} per-class {:.4}", r.loss, r.overall, r.per_class);
    Ok(0)
}

fn load_shape(name: &str, points: usize, seed: u64) -> anyhow::Result<PointCloud> {
    let path = Path::new(name);
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("off") => Ok(unit_normalize(&sample_points(&load_off(path)?, points, seed)?)?),
        Some("ply") => match load_ply(path)? {
            Geometry::Mesh(m) => Ok(unit_normalize(&sample_points(&m, points, seed)?)?),
            Geometry::Points(c) => Ok(unit_normalize(&c)?),
        },
        _ => {
            let class = ShapeClass::from_name(name).map_err(|e| UsageError(format!("{e}; expected a class name or an .off/.ply file")))?;
            Ok(generate_shape(class, points, seed)?)
        }
    }
}

#[derive(Serialize)]
struct RenderRecord<'a> {
    shape: &'a str,
    views: &'a mvtn::geomcam::ViewSet,
    points: usize,
    seed: u64,
    render: &'a RenderOptions,
}

pub fn render(a: RenderArgs) -> anyhow::Result<u8> {
    let opts = RenderOptions {
        width: a.size,
        height: a.size,
        radius: a.radius,
        light: LightMode::Relative,
        color: ColorMode::White,
        ..RenderOptions::default()
    };
    opts.validate().map_err(|e| UsageError(e.to_string()))?;
    let views = match a.views {
        ViewsArg::Circular => circular_config(a.m, a.elevation, a.distance),
        ViewsArg::Spherical => spherical_config(a.m, a.distance),
        ViewsArg::Random => random_config(a.m, a.seed, a.distance),
    }
    .map_err(|e| UsageError(e.to_string()))?;
    prepare(&a.out, &[])?;
    let cloud = load_shape(&a.shape, a.points, a.seed)?;
    let img = render_views(&cloud, &views, &opts, &Augmentation::test_default())?;
    std::fs::create_dir_all(a.out.join("views"))?;
    let stem = Path::new(&a.shape).file_stem().map_or("shape".into(), |s| s.to_string_lossy().into_owned());
    let file = a.out.join("views").join(format!("{stem}.png"));
    save_view_grid(&file, &[img])?;
    let record = RenderRecord { shape: &a.shape, views: &views, points: a.points, seed: a.seed, render: &opts };
    write_json(&a.out.join("render.json"), &record)?;
    write_checksums(&a.out)?;
    println!("wrote {} ({} views)", file.display(), views.len());
    Ok(0)
}

#[derive(Serialize)]
struct RetrievalSummary {
    mean_ap: f64,
    queries: usize,
    gallery: usize,
    lfda_dim: Option<usize>,
    literal_ap: bool,
}

pub fn retrieve(a: RetrieveArgs) -> anyhow::Result<u8> {
    let (_, model, data) = start_from_run(&a.run)?;
    let out = &a.run.out;
    let gallery = extract_signatures(&model, &data.split(Split::Train))?;
    let queries = extract_signatures(&model, &data.split(Split::Test))?;
    write_signatures(&out.join("gallery.bin"), &gallery)?;
    write_signatures(&out.join("queries.bin"), &queries)?;
    let (gallery, queries) = match a.lfda_dim {
        Some(r) => {
            let feats: Vec<Vec<f64>> = gallery.iter().map(|s| s.vector.clone()).collect();
            let labels: Vec<usize> = gallery.iter().map(|s| s.label).collect();
            let proj = lfda_fit(&feats, &labels, r, Some(a.neighbors)).map_err(|e| UsageError(e.to_string()))?;
            (project_all(&proj, &gallery)?, project_all(&proj, &queries)?)
        }
        None => (gallery, queries),
    };
    let results = run_queries(&queries, &gallery, a.paper_literal_ap)?;
    let mean_ap = results.iter().map(|r| r.ap).sum::<f64>() / results.len() as f64;
    write_retrieval_csv(&out.join("retrieval.csv"), &report_rows(&queries, &gallery, &results, a.top))?;
    let summary =
        RetrievalSummary { mean_ap, queries: queries.len(), gallery: gallery.len(), lfda_dim: a.lfda_dim, literal_ap: a.paper_literal_ap };
    write_json(&out.join("retrieval_summary.json"), &summary)?;
    write_checksums(out)?;
    println!("mAP {mean_ap:.4} over {} queries against {} gallery shapes", queries.len(), gallery.len());
    Ok(0)
}

pub fn robustness(a: RobustnessArgs) -> anyhow::Result<u8> {
    if a.repeats == 0 {
        return Err(UsageError("--repeats must be at least 1".into()).into());
    }
    if let Some(r) = a.occlusion.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(UsageError(format!("occlusion ratio {r} must lie in [0, 1)")).into());
    }
    if let Some(r) = a.rotation.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(UsageError(format!("rotation angle {r} must be non-negative")).into());
    }
    let (_, model, data) = start_from_run(&a.run)?;
    let test = data.split(Split::Test);
    let mut rows = Vec::new();
    for &max_angle in &a.rotation {
        let spec = RotationSpec { max_angle, repeats: a.repeats, seed: a.seed };
        let r = rotation_robustness_eval(&model, &test, &spec)?;
        println!("rotation ±{max_angle}°: {:.4} ± {:.4}", r.mean, r.std);
        rows.push(RobustnessRow::rotation(&spec, &r));
    }
    for r in occlusion_robustness_eval(&model, &test, &a.occlusion)? {
        println!("occlusion {}: {:.4}", r.ratio, r.mean);
        rows.push(RobustnessRow::occlusion(&r));
    }
    write_robustness_csv(&a.run.out.join("robustness.csv"), &rows)?;
    write_checksums(&a.run.out)?;
    Ok(0)
}

#[derive(Serialize)]
struct OptimizeSummary {
    shapes: usize,
    accuracy_before: f64,
    accuracy_after: f64,
    param_opt: ParamOptConfig,
}

pub fn optimize_views(a: OptimizeArgs) -> anyhow::Result<u8> {
    let po = ParamOptConfig {
        loss: a.loss.into(),
        direction: a.direction.into(),
        iterations: a.iterations,
        lr: a.lr,
        ..ParamOptConfig::default()
    };
    po.validate().map_err(|e| UsageError(e.to_string()))?;
    let (_, model, data) = start_from_run(&a.run)?;
    let out = &a.run.out;
    let mut test = data.split(Split::Test);
    if let Some(n) = a.limit {
        test.samples.truncate(n);
    }
    if test.is_empty() {
        anyhow::bail!("no test shapes to optimize");
    }
    let u0 = model.base_views()?;
    let aug = Augmentation::test_default();
    let runs = test
        .samples
        .par_iter()
        .map(|s| {
            let r = optimize_scene_params(&model, &[&s.cloud], &[s.label], std::slice::from_ref(&u0), &po, &[aug])?;
            let views = r.views.into_iter().next().expect("one shape");
            let before = model.infer_with(&s.cloud, &u0)?.predicted() == s.label;
            let after = model.infer_with(&s.cloud, &views)?.predicted() == s.label;
            Ok((views, r.objective, before, after))
        })
        .collect::<mvtn::Result<Vec<_>>>()?;

    let (mut views_csv, mut obj_csv) = (String::from("id,view,azimuth,elevation\n"), String::from("id,iteration,objective\n"));
    for (s, (v, obj, _, _)) in test.samples.iter().zip(&runs) {
        let id = csv_field(&s.id)?;
        for (i, (az, el)) in v.azimuth.iter().zip(&v.elevation).enumerate() {
            let _ = writeln!(views_csv, "{id},{i},{az},{el}");
        }
        for (i, o) in obj.iter().enumerate() {
            let _ = writeln!(obj_csv, "{id},{i},{o}");
        }
    }
    std::fs::write(out.join("optimized_views.csv"), views_csv)?;
    std::fs::write(out.join("objective.csv"), obj_csv)?;
    std::fs::create_dir_all(out.join("views"))?;
    for (s, (v, _, _, _)) in test.samples.iter().zip(&runs).take(PREVIEW_SHAPES) {
        let opts = &model.config.render;
        let rows = [render_views(&s.cloud, &u0, opts, &aug)?, render_views(&s.cloud, v, opts, &aug)?];
        save_view_grid(out.join("views").join(format!("{}.png", s.id)), &rows)?;
    }
    let n = runs.len() as f64;
    let summary = OptimizeSummary {
        shapes: runs.len(),
        accuracy_before: runs.iter().filter(|r| r.2).count() as f64 / n,
        accuracy_after: runs.iter().filter(|r| r.3).count() as f64 / n,
        param_opt: po,
    };
    write_json(&out.join("optimize_summary.json"), &summary)?;
    write_checksums(out)?;
    println!("accuracy {:.4} -> {:.4} over {} shapes", summary.accuracy_before, summary.accuracy_after, summary.shapes);
    Ok(0)
}

pub fn grad_check(a: GradCheckArgs) -> anyhow::Result<u8> {
    let r = renderer_check(a.scenes, a.seed)?;
    let render_ok = r.pass_fraction() >= RENDER_PASS_FRACTION;
    println!(
        "renderer: {} of {} pixel gradients within {RENDER_TOL} relative error ({:.4}); max relative error {:.3e} [{}]",
        r.passed,
        r.checked,
        r.pass_fraction(),
        r.max_rel_error,
        if render_ok { "ok" } else { "FAIL" }
    );
    let n = network_check(a.configs, a.seed)?;
    let net_ok = n.max_rel_error < NET_TOL;
    println!(
        "networks: {} parameter gradients, {} skipped as non-smooth, max relative error {:.3e} [{}]",
        n.checked,
        n.nonsmooth,
        n.max_rel_error,
        if net_ok { "ok" } else { "FAIL" }
    );
    Ok(if render_ok && net_ok { 0 } else { 1 })
}
