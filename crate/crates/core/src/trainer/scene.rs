use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{argmax, Direction, Model, ParamOptConfig, SceneLoss, ShapeViews};
use crate::cloud::PointCloud;
use crate::diffmath::{Tape, Tensor, Value};
use crate::error::{Error, Result};
use crate::geomcam::{canonicalize, ViewSet};
use crate::mvrender::{render_views_on, Augmentation};

/// Gaussian jitter on every angle (standard deviations in degrees), then
/// canonicalized. Zero deviations return the canonical form of `u0`.
pub fn add_view_noise(u0: &ViewSet, seed: u64, sigma_azimuth: f64, sigma_elevation: f64) -> Result<ViewSet> {
    let bad = |s: f64| !(s >= 0.0 && s.is_finite());
    if bad(sigma_azimuth) || bad(sigma_elevation) {
        return Err(Error::InvalidArgument("noise deviations must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let na = Normal::new(0.0, sigma_azimuth).expect("checked");
    let ne = Normal::new(0.0, sigma_elevation).expect("checked");
    let (mut az, mut el) = (Vec::with_capacity(u0.len()), Vec::with_capacity(u0.len()));
    for i in 0..u0.len() {
        let (a, e) = canonicalize(u0.azimuth[i] + na.sample(&mut rng), u0.elevation[i] + ne.sample(&mut rng));
        az.push(a);
        el.push(e);
    }
    ViewSet::new(az, el, u0.distance.clone())
}

/// Refined views and the objective before each step and after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneOptimization {
    pub views: Vec<ViewSet>,
    pub objective: Vec<f64>,
}

fn objective<'t>(
    model: &Model,
    tape: &'t Tape,
    shapes: &[&PointCloud],
    labels: &[usize],
    views: &[ShapeViews<'t>],
    augs: &[Augmentation],
    loss: SceneLoss,
) -> Result<Value<'t>> {
    let p = model.params.bind_frozen(tape);
    let opts = &model.config.render;
    if loss == SceneLoss::Coverage {
        let images = shapes
            .iter()
            .zip(views)
            .zip(augs)
            .map(|((s, v), a)| Ok(render_views_on(s, v.azimuth, v.elevation, &v.distance, opts, a)?.images))
            .collect::<Result<Vec<_>>>()?;
        return Ok(Value::concat(&images).l2_norm());
    }
    let (logits, _) = model.forward_batch(&p, shapes, views, augs, opts)?;
    let k = model.classes;
    let b = shapes.len();
    let mut terms = Vec::with_capacity(b);
    for i in 0..b {
        let row = logits.slice(i * k, k);
        match loss {
            SceneLoss::Ce => terms.push(row.cross_entropy(labels[i])?),
            SceneLoss::Adversarial => {
                let vals = row.to_tensor().into_data();
                if k < 2 {
                    terms.push(tape.constant(Tensor::scalar(0.0)));
                    continue;
                }
                let top = argmax(&vals);
                let mut rest = vals.clone();
                rest[top] = f64::NEG_INFINITY;
                let second = argmax(&rest);
                terms.push(row.slice(top, 1).sub(row.slice(second, 1)).sum());
            }
            SceneLoss::Coverage => unreachable!(),
        }
    }
    Ok(Value::concat(&terms).mean())
}

/// Plain gradient steps on the angles of every shape under frozen weights,
/// canonicalizing after each step. `labels` are only read by the
/// cross-entropy objective.
pub fn optimize_scene_params(
    model: &Model,
    shapes: &[&PointCloud],
    labels: &[usize],
    init: &[ViewSet],
    cfg: &ParamOptConfig,
    augs: &[Augmentation],
) -> Result<SceneOptimization> {
    let b = shapes.len();
    if b == 0 || init.len() != b || augs.len() != b || (cfg.loss == SceneLoss::Ce && labels.len() != b) {
        return Err(Error::InvalidArgument(format!(
            "{b} shapes with {} view sets, {} augmentations and {} labels",
            init.len(),
            augs.len(),
            labels.len()
        )));
    }
    cfg.validate()?;
    let sign = match cfg.direction {
        Direction::Maximize => 1.0,
        Direction::Minimize => -1.0,
    };
    let step = cfg.step_size();
    let mut current: Vec<ViewSet> = init.to_vec();
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    for it in 0..=cfg.iterations {
        let tape = Tape::new();
        let views: Vec<ShapeViews> = current
            .iter()
            .map(|v| ShapeViews {
                azimuth: tape.param(Tensor::vector(v.azimuth.clone())),
                elevation: tape.param(Tensor::vector(v.elevation.clone())),
                distance: v.distance.clone(),
            })
            .collect();
        let obj = objective(model, &tape, shapes, labels, &views, augs, cfg.loss)?;
        trace.push(obj.item());
        if it == cfg.iterations {
            break;
        }
        let grads = obj.backward()?;
        for (v, sv) in current.iter_mut().zip(&views) {
            let (ga, ge) = (grads.get(sv.azimuth), grads.get(sv.elevation));
            let mut az = Vec::with_capacity(v.len());
            let mut el = Vec::with_capacity(v.len());
            for i in 0..v.len() {
                let (a, e) = canonicalize(v.azimuth[i] + sign * step * ga.data()[i], v.elevation[i] + sign * step * ge.data()[i]);
                az.push(a);
                el.push(e);
            }
            *v = ViewSet::new(az, el, v.distance.clone())?;
        }
    }
    Ok(SceneOptimization { views: current, objective: trace })
}
