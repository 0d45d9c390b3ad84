//! Training and evaluation: fixed-view and learned-view multi-view
//! classification, the late-fusion variant, and direct per-batch
//! optimization of the camera angles.

mod scene;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::diffmath::{Tape, Tensor, Value};
use crate::error::{Error, Result};
use crate::geomcam::{circular_config, random_config, spherical_config, ViewSet, CIRCULAR_ELEVATION, DEFAULT_DISTANCE};
use crate::mvrender::{render_views_on, Augmentation, RenderOptions};
use crate::netblocks::{load_checkpoint, save_checkpoint, Bound, Linear, MultiViewClassifier, NetConfig, ParamStore, PointEncoder};
use crate::regressor::{Variant, ViewRegressor};
use crate::seed;

pub use scene::{add_view_noise, optimize_scene_params, SceneOptimization};
pub use train::{accuracy, evaluate, read_metrics_csv, train, write_metrics_csv, EpochMetrics, EvalReport, TrainOutcome};

/// How the camera angles of each shape are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewMode {
    Circular,
    Spherical,
    /// One random set of views shared by the whole dataset.
    Random,
    MvtnDirect,
    MvtnCircular,
    MvtnSpherical,
    /// Fixed views refined per batch by gradient steps on the angles.
    ParamOpt,
}

impl ViewMode {
    pub fn variant(self) -> Option<Variant> {
        match self {
            ViewMode::MvtnDirect => Some(Variant::Direct),
            ViewMode::MvtnCircular => Some(Variant::Circular),
            ViewMode::MvtnSpherical => Some(Variant::Spherical),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneLoss {
    /// Batch cross-entropy.
    Ce,
    /// l2 norm over every pixel of every rendered view in the batch.
    Coverage,
    /// Gap between the two largest logits.
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseViews {
    Circular,
    Spherical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamOptConfig {
    pub loss: SceneLoss,
    pub direction: Direction,
    pub iterations: usize,
    /// Step size in degrees per unit gradient; 50 for `ce`, 25 otherwise
    /// when unset.
    pub lr: Option<f64>,
    /// Standard deviations (degrees) of the view-noise baseline.
    pub noise_azimuth: f64,
    pub noise_elevation: f64,
    /// Starting views of the inner loop.
    pub initial: BaseViews,
    /// Also optimize at evaluation time. Unset means yes for `coverage`
    /// and `adversarial`, no for `ce`. With `ce` the predicted class stands
    /// in for the label.
    pub test_time: Option<bool>,
}

impl Default for ParamOptConfig {
    fn default() -> Self {
        ParamOptConfig {
            loss: SceneLoss::Ce,
            direction: Direction::Minimize,
            iterations: 10,
            lr: None,
            noise_azimuth: 18.0,
            noise_elevation: 9.0,
            initial: BaseViews::Spherical,
            test_time: None,
        }
    }
}

impl ParamOptConfig {
    pub fn step_size(&self) -> f64 {
        self.lr.unwrap_or(match self.loss {
            SceneLoss::Ce => 50.0,
            SceneLoss::Coverage | SceneLoss::Adversarial => 25.0,
        })
    }

    pub fn at_test(&self) -> bool {
        self.test_time.unwrap_or(self.loss != SceneLoss::Ce)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size() > 0.0) {
            return Err(Error::Config(format!("scene step size must be positive, got {}", self.step_size())));
        }
        if !(self.noise_azimuth >= 0.0 && self.noise_elevation >= 0.0) {
            return Err(Error::Config("view noise deviations must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Views per shape.
    pub views: usize,
    pub view_mode: ViewMode,
    /// Classifier learning rate.
    pub lr: f64,
    pub regressor_lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap on the view regressor.
    pub clip: f64,
    pub seed: u64,
    /// Points per shape.
    pub points: usize,
    pub distance: f64,
    /// Elevation of the circular ring.
    pub elevation: f64,
    pub render: RenderOptions,
    pub net: NetConfig,
    /// Max-fuse a point-encoder feature into the view signature.
    pub late_fusion: bool,
    /// Start the regressor's last layer at zero (identity views).
    pub regressor_zero_init: bool,
    /// Keep the regressor fixed during training.
    pub regressor_frozen: bool,
    /// Add the noise of `param_opt` to fixed views during training.
    pub view_noise: bool,
    pub param_opt: ParamOptConfig,
    /// Evaluate the test split every this many epochs (and always after
    /// the last); 0 evaluates only after the last.
    pub eval_every: usize,
    /// Record wall-clock time in the metrics; off keeps them reproducible.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 20,
            views: 12,
            view_mode: ViewMode::Circular,
            lr: 3e-4,
            regressor_lr: 1e-3,
            weight_decay: 0.01,
            clip: 30.0,
            seed: 0,
            points: 2048,
            distance: DEFAULT_DISTANCE,
            elevation: CIRCULAR_ELEVATION,
            render: RenderOptions::default(),
            net: NetConfig::default(),
            late_fusion: false,
            regressor_zero_init: false,
            regressor_frozen: false,
            view_noise: false,
            param_opt: ParamOptConfig::default(),
            eval_every: 1,
            timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr", self.lr), ("regressor_lr", self.regressor_lr), ("clip", self.clip), ("distance", self.distance)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.views == 0 || self.points == 0 {
            return Err(Error::Config("epochs, batch_size, views and points must be at least 1".into()));
        }
        if !(-90.0..=90.0).contains(&self.elevation) {
            return Err(Error::Config(format!("ring elevation {} outside [-90, 90]", self.elevation)));
        }
        self.render.validate()?;
        self.net.validate()?;
        self.param_opt.validate()
    }

    /// Views every shape starts from before any learning or refinement.
    pub fn base_views(&self) -> Result<ViewSet> {
        let (m, d) = (self.views, self.distance);
        match self.view_mode {
            ViewMode::Circular | ViewMode::MvtnCircular | ViewMode::MvtnDirect => circular_config(m, self.elevation, d),
            ViewMode::Spherical | ViewMode::MvtnSpherical => spherical_config(m, d),
            ViewMode::Random => random_config(m, seed::derive(self.seed, "random-views", 0), d),
            ViewMode::ParamOpt => match self.param_opt.initial {
                BaseViews::Circular => circular_config(m, self.elevation, d),
                BaseViews::Spherical => spherical_config(m, d),
            },
        }
    }
}

/// Point branch of the late-fusion model.
#[derive(Clone, Debug)]
pub struct LateFusion {
    pub encoder: PointEncoder,
    pub proj: Linear,
}

impl LateFusion {
    pub fn new(cfg: &NetConfig) -> Self {
        LateFusion { encoder: PointEncoder::new("fusion.encoder", cfg), proj: Linear::new("fusion.proj", cfg.point_dim, cfg.dim) }
    }

    /// `[d]` projected point feature.
    pub fn forward<'t>(&self, p: &Bound<'t>, shape: &PointCloud) -> Result<Value<'t>> {
        let f = self.encoder.encode(p, shape)?;
        self.proj.forward(p, f)
    }
}

/// Angles of one shape on a tape.
pub(crate) struct ShapeViews<'t> {
    pub azimuth: Value<'t>,
    pub elevation: Value<'t>,
    pub distance: Vec<f64>,
}

impl<'t> ShapeViews<'t> {
    pub fn constant(tape: &'t Tape, v: &ViewSet) -> Self {
        ShapeViews {
            azimuth: tape.constant(Tensor::vector(v.azimuth.clone())),
            elevation: tape.constant(Tensor::vector(v.elevation.clone())),
            distance: v.distance.clone(),
        }
    }
}

/// Result of running one shape through a frozen model.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub views: ViewSet,
    /// Aggregated view feature (max-fused with the point branch when
    /// late fusion is on).
    pub signature: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Inference {
    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub classes: usize,
    pub classifier: MultiViewClassifier,
    pub regressor: Option<ViewRegressor>,
    pub fusion: Option<LateFusion>,
    pub params: ParamStore,
}

impl Model {
    /// Fresh weights. Each component draws from its own seed stream, so the
    /// classifier starts identical with or without a regressor.
    pub fn new(config: &TrainConfig, classes: usize) -> Result<Self> {
        let mut model = Model::skeleton(config, classes)?;
        let init = |tag: &str| ChaCha8Rng::seed_from_u64(seed::derive(config.seed, tag, 0));
        model.classifier.init(&mut model.params, &mut init("init.classifier"), false);
        if let Some(r) = &model.regressor {
            r.init(&mut model.params, &mut init("init.regressor"), config.regressor_zero_init);
        }
        if let Some(f) = &model.fusion {
            let mut rng = init("init.fusion");
            f.encoder.init(&mut model.params, &mut rng);
            f.proj.init(&mut model.params, &mut rng, false);
        }
        Ok(model)
    }

    fn skeleton(config: &TrainConfig, classes: usize) -> Result<Self> {
        config.validate()?;
        if classes < 1 {
            return Err(Error::Config("need at least one class".into()));
        }
        let r = &config.render;
        Ok(Model {
            config: config.clone(),
            classes,
            classifier: MultiViewClassifier::new(&config.net, classes, r.height, r.width),
            regressor: config.view_mode.variant().map(|v| ViewRegressor::new(v, config.views, &config.net)).transpose()?,
            fusion: config.late_fusion.then(|| LateFusion::new(&config.net)),
            params: ParamStore::new(),
        })
    }

    /// Model with the given weights, which must match the architecture.
    pub fn with_params(config: &TrainConfig, classes: usize, params: ParamStore) -> Result<Self> {
        let fresh = Model::new(config, classes)?;
        let want: Vec<(&str, &[usize])> = fresh.params.iter().map(|(k, t)| (k, t.shape())).collect();
        let got: Vec<(&str, &[usize])> = params.iter().map(|(k, t)| (k, t.shape())).collect();
        if want != got {
            let missing: Vec<&str> = want.iter().filter(|w| !got.contains(w)).map(|w| w.0).collect();
            let extra: Vec<&str> = got.iter().filter(|g| !want.contains(g)).map(|g| g.0).collect();
            return Err(Error::Format(format!(
                "checkpoint does not match the model: missing or reshaped {missing:?}, unexpected {extra:?}"
            )));
        }
        Ok(Model { params, ..fresh })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.params, path)
    }

    pub fn load(config: &TrainConfig, classes: usize, path: &Path) -> Result<Self> {
        Model::with_params(config, classes, load_checkpoint(path)?)
    }

    pub fn base_views(&self) -> Result<ViewSet> {
        self.config.base_views()
    }

    /// Angles for one shape: regressed when the model has a regressor,
    /// otherwise the given views as constants.
    pub(crate) fn shape_views<'t>(&self, p: &Bound<'t>, tape: &'t Tape, shape: &PointCloud, u0: &ViewSet) -> Result<ShapeViews<'t>> {
        match &self.regressor {
            Some(r) => {
                let out = r.forward(p, shape, u0)?;
                Ok(ShapeViews { azimuth: out.azimuth, elevation: out.elevation, distance: u0.distance.clone() })
            }
            None => Ok(ShapeViews::constant(tape, u0)),
        }
    }

    /// Renders every shape and returns `([B, K]` logits, `[B, d]` signatures).
    pub(crate) fn forward_batch<'t>(
        &self,
        p: &Bound<'t>,
        shapes: &[&PointCloud],
        views: &[ShapeViews<'t>],
        augs: &[Augmentation],
        opts: &RenderOptions,
    ) -> Result<(Value<'t>, Value<'t>)> {
        let b = shapes.len();
        if b == 0 || views.len() != b || augs.len() != b {
            return Err(Error::InvalidArgument(format!(
                "batch of {b} shapes with {} view sets and {} augmentations",
                views.len(),
                augs.len()
            )));
        }
        let m = views[0].distance.len();
        let mut images = Vec::with_capacity(b);
        for ((shape, v), aug) in shapes.iter().zip(views).zip(augs) {
            if v.distance.len() != m {
                return Err(Error::ShapeMismatch("all shapes in a batch need the same number of views".into()));
            }
            images.push(render_views_on(shape, v.azimuth, v.elevation, &v.distance, opts, aug)?.images);
        }
        let stacked = Value::concat(&images).reshape(&[b * m, opts.height, opts.width, 3]);
        let mut sig = self.classifier.signatures(p, stacked, m)?;
        if let Some(f) = &self.fusion {
            let pts = shapes.iter().map(|s| f.forward(p, s)).collect::<Result<Vec<_>>>()?;
            let d = self.config.net.dim;
            sig = sig.maximum(Value::concat(&pts).reshape(&[b, d]));
        }
        Ok((self.classifier.logits(p, sig)?, sig))
    }

    /// Views the frozen model uses for one shape at evaluation time.
    pub fn views_for(&self, shape: &PointCloud) -> Result<ViewSet> {
        let u0 = self.base_views()?;
        if let Some(r) = &self.regressor {
            return r.regress_views(&self.params, shape, &u0);
        }
        if self.config.view_mode == ViewMode::ParamOpt && self.config.param_opt.at_test() {
            let aug = Augmentation::test_default();
            let label = match self.config.param_opt.loss {
                SceneLoss::Ce => self.infer_with(shape, &u0)?.predicted(),
                _ => 0,
            };
            let out = optimize_scene_params(self, &[shape], &[label], &[u0], &self.config.param_opt, &[aug])?;
            return Ok(out.views.into_iter().next().expect("one shape"));
        }
        Ok(u0)
    }

    /// Frozen forward pass with test-time rendering.
    pub fn infer(&self, shape: &PointCloud) -> Result<Inference> {
        let views = self.views_for(shape)?;
        self.infer_with(shape, &views)
    }

    /// Frozen forward pass from the given views (no regression).
    pub fn infer_with(&self, shape: &PointCloud, views: &ViewSet) -> Result<Inference> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let v = ShapeViews::constant(&tape, views);
        let (logits, sig) = self.forward_batch(&p, &[shape], &[v], &[Augmentation::test_default()], &self.config.render)?;
        Ok(Inference { views: views.clone(), signature: sig.to_tensor().into_data(), logits: logits.to_tensor().into_data() })
    }

    /// Logits of the late-fusion path for given views; errors when the
    /// model has no point branch.
    pub fn late_fusion_forward(&self, shape: &PointCloud, views: &ViewSet, opts: &RenderOptions) -> Result<Vec<f64>> {
        if self.fusion.is_none() {
            return Err(Error::Config("model was built without late fusion".into()));
        }
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let v = ShapeViews::constant(&tape, views);
        let (logits, _) = self.forward_batch(&p, &[shape], &[v], &[Augmentation::test_default()], opts)?;
        Ok(logits.to_tensor().into_data())
    }
}
