//! Finite-difference checks of the analytic gradients, runnable outside the
//! test harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::diffmath::{relative_error, GradCheckReport, Tape, Tensor, Value};
use crate::error::Result;
use crate::geomcam::{circular_config, spherical_config, ViewSet, DEFAULT_DISTANCE};
use crate::mvrender::{render_gradient, render_views, Augmentation, ColorMode, LightMode, PixelRef, RenderOptions};
use crate::netblocks::{Bound, MultiViewClassifier, NetConfig, ParamStore};
use crate::regressor::{Variant, ViewRegressor};
use crate::seed;
use crate::trainer::LateFusion;

/// Angle step of the renderer check, degrees.
pub const RENDER_STEP: f64 = 0.05;
/// Pixels whose analytic gradient is at most this are not compared.
pub const RENDER_FLOOR: f64 = 1e-4;
pub const RENDER_TOL: f64 = 0.01;
/// Fraction of compared renderer entries that must meet `RENDER_TOL`.
pub const RENDER_PASS_FRACTION: f64 = 0.95;

/// Parameter step of the network check.
pub const NET_STEP: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-4;
/// Entries where both gradients are below this are skipped; central
/// differences carry roughly `1e-16 / NET_STEP` of rounding noise.
pub const NET_FLOOR: f64 = 1e-7;

fn random_cloud(rng: &mut ChaCha8Rng) -> PointCloud {
    let n = rng.gen_range(40..150);
    PointCloud::new((0..n).map(|_| [0; 3].map(|_: i32| rng.gen_range(-0.8..0.8))).collect())
}

/// Compares `∂pixel/∂azimuth` and `∂pixel/∂elevation` with central
/// differences over `scenes` random single-view scenes.
pub fn renderer_check(scenes: usize, seed: u64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let size = 24;
    let opts = RenderOptions {
        width: size,
        height: size,
        radius: 0.12,
        light: LightMode::Relative,
        color: ColorMode::White,
        ..RenderOptions::default()
    };
    let aug = Augmentation::test_default();
    for s in 0..scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "selfcheck.render", s as u64));
        let cloud = random_cloud(&mut rng);
        let (az, el) = (rng.gen_range(-180.0..180.0), rng.gen_range(-60.0..60.0));
        let view = |a: f64, e: f64| ViewSet::with_distance(vec![a], vec![e], DEFAULT_DISTANCE);
        let pixels: Vec<PixelRef> = (0..size * size).map(|i| PixelRef { view: 0, row: i / size, col: i % size, channel: 0 }).collect();
        let analytic = render_gradient(&cloud, &view(az, el)?, &opts, &aug, &pixels)?;
        let fd = |plus: ViewSet, minus: ViewSet| -> Result<Vec<f64>> {
            let p = render_views(&cloud, &plus, &opts, &aug)?;
            let m = render_views(&cloud, &minus, &opts, &aug)?;
            Ok(p.data().iter().zip(m.data()).step_by(3).map(|(a, b)| (a - b) / (2.0 * RENDER_STEP)).collect())
        };
        let d_az = fd(view(az + RENDER_STEP, el)?, view(az - RENDER_STEP, el)?)?;
        let d_el = fd(view(az, el + RENDER_STEP)?, view(az, el - RENDER_STEP)?)?;
        for (i, g) in analytic.iter().enumerate() {
            for (a, n) in [(g[0], d_az[i]), (g[1], d_el[i])] {
                if a.abs() > RENDER_FLOOR {
                    let e = relative_error(a, n);
                    report.checked += 1;
                    report.passed += usize::from(e < RENDER_TOL);
                    report.max_rel_error = report.max_rel_error.max(e);
                }
            }
        }
    }
    Ok(report)
}

fn random_net(rng: &mut ChaCha8Rng) -> NetConfig {
    let depth = rng.gen_range(1..=3);
    NetConfig {
        channels: (0..depth).map(|_| rng.gen_range(2..=4)).collect(),
        mid: rng.gen_range(2..=5),
        dim: rng.gen_range(3..=6),
        point_hidden: (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(3..=6)).collect(),
        point_dim: rng.gen_range(3..=6),
    }
}

/// Moves every entry off its initial value. Zero-initialized biases behind
/// a dead ReLU layer otherwise sit exactly on the kink.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for t in store.as_map_mut().values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
    }
}

/// Compares the analytic gradient of `loss` with respect to every entry of
/// every parameter against central differences.
fn check_params(
    store: &ParamStore,
    loss: impl for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Value<'t>>,
    report: &mut GradCheckReport,
) -> Result<()> {
    let eval = |s: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        let p = s.bind_frozen(&tape);
        Ok(loss(&tape, &p)?.item())
    };
    let tape = Tape::new();
    let p = store.bind(&tape, |_| true);
    let grads = p.gradients(&loss(&tape, &p)?.backward()?, "");
    let mut probe = store.clone();
    let mut at = |name: &str, i: usize, v: f64| -> Result<f64> {
        probe.get_mut(name)?.data_mut()[i] = v;
        eval(&probe)
    };
    for (name, t) in store.iter() {
        let g = &grads[name];
        for i in 0..t.numel() {
            let v = t.data()[i];
            let central = |h: f64, at: &mut dyn FnMut(f64) -> Result<f64>| -> Result<f64> { Ok((at(v + h)? - at(v - h)?) / (2.0 * h)) };
            let mut f = |x: f64| at(name, i, x);
            let numeric = central(NET_STEP, &mut f)?;
            // On a smooth stretch the two steps agree to O(h²); a kink inside
            // the stencil makes them disagree at first order.
            let half = central(NET_STEP / 2.0, &mut f)?;
            f(v)?;
            let big = numeric.abs().max(half.abs()) > NET_FLOOR;
            if big && relative_error(numeric, half) >= NET_TOL {
                report.nonsmooth += 1;
                continue;
            }
            report.record(g.data()[i], numeric, NET_FLOOR, NET_TOL);
        }
    }
    Ok(())
}

/// Finite-difference check of every classifier, view-regressor and
/// point-branch parameter over `configs` random architectures.
pub fn network_check(configs: usize, seed: u64) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    for c in 0..configs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "selfcheck.net", c as u64));
        let cfg = random_net(&mut rng);
        let (m, b, classes) = (rng.gen_range(1..=3), 2, rng.gen_range(2..=4));
        let size = 8;

        let clf = MultiViewClassifier::new(&cfg, classes, size, size);
        let mut store = ParamStore::new();
        clf.init(&mut store, &mut rng, false);
        jitter(&mut store, &mut rng);
        let images: Vec<f64> = (0..b * m * size * size * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..classes)).collect();
        check_params(
            &store,
            |tape, p| {
                let x = tape.constant(Tensor::new(&[b * m, size, size, 3], images.clone()));
                let logits = clf.logits(p, clf.signatures(p, x, m)?)?;
                let terms = labels
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| logits.slice(i * classes, classes).cross_entropy(y))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Value::concat(&terms).mean())
            },
            &mut report,
        )?;

        let variant = [Variant::Direct, Variant::Circular, Variant::Spherical][rng.gen_range(0..3)];
        let reg = ViewRegressor::new(variant, m, &cfg)?;
        let mut store = ParamStore::new();
        reg.init(&mut store, &mut rng, false);
        jitter(&mut store, &mut rng);
        let shape = random_cloud(&mut rng);
        let u0 = match variant {
            Variant::Spherical => spherical_config(m, DEFAULT_DISTANCE)?,
            _ => circular_config(m, 30.0, DEFAULT_DISTANCE)?,
        };
        let w: Vec<f64> = (0..2 * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        check_params(
            &store,
            |_, p| {
                let out = reg.forward(p, &shape, &u0)?;
                let angles = Value::concat(&[out.azimuth, out.elevation]);
                Ok(angles.mul_const(&Tensor::vector(w.clone())).sum())
            },
            &mut report,
        )?;

        let fusion = LateFusion::new(&cfg);
        let mut store = ParamStore::new();
        fusion.encoder.init(&mut store, &mut rng);
        fusion.proj.init(&mut store, &mut rng, false);
        jitter(&mut store, &mut rng);
        let w: Vec<f64> = (0..cfg.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        check_params(&store, |_, p| Ok(fusion.forward(p, &shape)?.mul_const(&Tensor::vector(w.clone())).sum()), &mut report)?;
    }
    Ok(report)
}
