//! Network building blocks: a shared-MLP point encoder, a small per-view
//! CNN, max aggregation across views, and the classifier head.
//!
//! Layers are stateless descriptions; their weights live in a
//! [`ParamStore`] and are placed on a tape with [`ParamStore::bind`] for each
//! forward pass.

mod checkpoint;
mod params;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::diffmath::{Tensor, Value};
use crate::error::{Error, Result};
use crate::mvrender::{render_views_on, Augmentation, RenderOptions};

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint};
pub(crate) use params::init_weight;
pub use params::{Bound, ParamStore};

/// Widths of the networks. Image size comes from the render options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Output channels of the first three stride-2 conv blocks.
    pub channels: Vec<usize>,
    /// Output channels of the last conv block.
    pub mid: usize,
    /// Per-view feature size.
    pub dim: usize,
    /// Hidden widths of the per-point MLP.
    pub point_hidden: Vec<usize>,
    /// Point feature size.
    pub point_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { channels: vec![16, 32, 64], mid: 64, dim: 128, point_hidden: vec![32, 64], point_dim: 40 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.iter().chain([&self.mid, &self.dim, &self.point_dim]).any(|&c| c == 0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("feature size must be at least 2".into()));
        }
        Ok(())
    }
}

fn expect_shape(what: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch(format!("{what}: expected {want:?}, got {got:?}")));
    }
    Ok(())
}

/// Fully connected layer `x W + b` with `W: [input, output]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Linear { name: name.into(), input, output }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, zero: bool) {
        store.insert(self.weight_name(), init_weight(rng, &[self.input, self.output], self.input, zero));
        store.insert(self.bias_name(), Tensor::zeros(&[self.output]));
    }

    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }

    /// `[N, input] -> [N, output]`, or `[input] -> [output]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Value<'t>) -> Result<Value<'t>> {
        let shape = x.shape();
        let flat = shape.len() == 1;
        let x = if flat { x.reshape(&[1, shape[0]]) } else { x };
        let s = x.shape();
        if s.len() != 2 || s[1] != self.input {
            return Err(Error::ShapeMismatch(format!("{}: expected [_, {}], got {shape:?}", self.name, self.input)));
        }
        let y = x.matmul(p.get(&self.weight_name())?).add_row(p.get(&self.bias_name())?);
        Ok(if flat { y.reshape(&[self.output]) } else { y })
    }
}

/// Stack of linear layers with ReLU between them (not after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(prefix: &str, widths: &[usize]) -> Self {
        let layers = widths.windows(2).enumerate().map(|(i, w)| Linear::new(format!("{prefix}.{i}"), w[0], w[1])).collect();
        Mlp { layers }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, zero_last: bool) {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            l.init(store, rng, zero_last && i + 1 == n);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has at least one layer")
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, mut x: Value<'t>) -> Result<Value<'t>> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(p, x)?;
            if i + 1 < self.layers.len() {
                x = x.relu();
            }
        }
        Ok(x)
    }
}

/// Shared per-point MLP followed by a max over points.
#[derive(Clone, Debug)]
pub struct PointEncoder {
    pub mlp: Mlp,
}

impl PointEncoder {
    pub fn new(prefix: &str, cfg: &NetConfig) -> Self {
        let mut widths = vec![3];
        widths.extend(&cfg.point_hidden);
        widths.push(cfg.point_dim);
        PointEncoder { mlp: Mlp::new(prefix, &widths) }
    }

    pub fn dim(&self) -> usize {
        self.mlp.output()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.mlp.init(store, rng, false);
    }

    /// `[P, 3]` points to a `[b]` feature.
    pub fn forward<'t>(&self, p: &Bound<'t>, points: Value<'t>) -> Result<Value<'t>> {
        let s = points.shape();
        if s.len() != 2 || s[1] != 3 {
            return Err(Error::ShapeMismatch(format!("point encoder expects [P, 3], got {s:?}")));
        }
        if s[0] == 0 {
            return Err(Error::InvalidArgument("cannot encode an empty point set".into()));
        }
        Ok(self.mlp.forward(p, points)?.max_rows())
    }

    pub fn encode<'t>(&self, p: &Bound<'t>, cloud: &PointCloud) -> Result<Value<'t>> {
        if cloud.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty point set".into()));
        }
        let tape = p.get(&self.mlp.layers[0].weight_name())?.tape();
        self.forward(p, tape.constant(Tensor::new(&[cloud.len(), 3], cloud.flat())))
    }
}

/// Per-view CNN: stride-2 3x3 conv blocks with ReLU, global average pool,
/// then a linear map to the feature size.
#[derive(Clone, Debug)]
pub struct ViewBackbone {
    pub prefix: String,
    pub convs: Vec<(usize, usize)>,
    pub proj: Linear,
    pub height: usize,
    pub width: usize,
}

impl ViewBackbone {
    pub fn new(prefix: &str, cfg: &NetConfig, height: usize, width: usize) -> Self {
        let mut chans = vec![3];
        chans.extend(&cfg.channels);
        chans.push(cfg.mid);
        let convs = chans.windows(2).map(|w| (w[0], w[1])).collect();
        ViewBackbone { prefix: prefix.to_string(), convs, proj: Linear::new(format!("{prefix}.proj"), cfg.mid, cfg.dim), height, width }
    }

    fn conv_names(&self, i: usize) -> (String, String) {
        (format!("{}.conv{i}.weight", self.prefix), format!("{}.conv{i}.bias", self.prefix))
    }

    pub fn dim(&self) -> usize {
        self.proj.output
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for (i, &(ci, co)) in self.convs.iter().enumerate() {
            let (w, b) = self.conv_names(i);
            store.insert(w, init_weight(rng, &[3, 3, ci, co], 9 * ci, false));
            store.insert(b, Tensor::zeros(&[co]));
        }
        self.proj.init(store, rng, false);
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|(ci, co)| 9 * ci * co + co).sum::<usize>() + self.proj.param_count()
    }

    /// `[N, H, W, 3]` images to `[N, d]` features.
    pub fn forward<'t>(&self, p: &Bound<'t>, images: Value<'t>) -> Result<Value<'t>> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!("backbone expects [N, H, W, 3], got {s:?}")));
        }
        expect_shape("backbone input", &s[1..], &[self.height, self.width, 3])?;
        let mut x = images;
        for i in 0..self.convs.len() {
            let (w, b) = self.conv_names(i);
            x = x.conv2d(p.get(&w)?, p.get(&b)?, 2, 1).relu();
        }
        self.proj.forward(p, x.mean_spatial())
    }
}

/// MLP `d -> d/2 -> K`.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub mlp: Mlp,
}

impl ClassifierHead {
    pub fn new(prefix: &str, dim: usize, classes: usize) -> Self {
        ClassifierHead { mlp: Mlp::new(prefix, &[dim, dim / 2, classes]) }
    }

    pub fn classes(&self) -> usize {
        self.mlp.output()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, zero_last: bool) {
        self.mlp.init(store, rng, zero_last);
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, features: Value<'t>) -> Result<Value<'t>> {
        self.mlp.forward(p, features)
    }
}

/// Element-wise maximum over the rows of `[M, d]` view features. Gradient
/// goes to the first view attaining the maximum.
pub fn aggregate_max<'t>(features: Value<'t>) -> Result<Value<'t>> {
    let s = features.shape();
    if s.len() != 2 || s[0] == 0 {
        return Err(Error::ShapeMismatch(format!("aggregate_max expects [M >= 1, d], got {s:?}")));
    }
    Ok(features.max_rows())
}

/// Max-aggregates consecutive groups of `m` rows: `[B*m, d] -> [B, d]`.
pub fn aggregate_groups<'t>(features: Value<'t>, m: usize) -> Result<Value<'t>> {
    let s = features.shape();
    if s.len() != 2 || m == 0 || !s[0].is_multiple_of(m) || s[0] == 0 {
        return Err(Error::ShapeMismatch(format!("cannot split {s:?} into groups of {m} views")));
    }
    let (b, d) = (s[0] / m, s[1]);
    if b == 1 {
        return Ok(features.max_rows().reshape(&[1, d]));
    }
    let rows: Vec<Value<'t>> = (0..b).map(|i| features.slice(i * m * d, m * d).reshape(&[m, d]).max_rows()).collect();
    Ok(Value::concat(&rows).reshape(&[b, d]))
}

/// Multi-view classifier: backbone per view, max over views, head.
#[derive(Clone, Debug)]
pub struct MultiViewClassifier {
    pub backbone: ViewBackbone,
    pub head: ClassifierHead,
}

impl MultiViewClassifier {
    pub fn new(cfg: &NetConfig, classes: usize, height: usize, width: usize) -> Self {
        MultiViewClassifier {
            backbone: ViewBackbone::new("backbone", cfg, height, width),
            head: ClassifierHead::new("head", cfg.dim, classes),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, zero_head: bool) {
        self.backbone.init(store, rng);
        self.head.init(store, rng, zero_head);
    }

    /// `[B*m, H, W, 3]` images to `[B, d]` aggregated signatures.
    pub fn signatures<'t>(&self, p: &Bound<'t>, images: Value<'t>, m: usize) -> Result<Value<'t>> {
        aggregate_groups(self.backbone.forward(p, images)?, m)
    }

    pub fn logits<'t>(&self, p: &Bound<'t>, signatures: Value<'t>) -> Result<Value<'t>> {
        self.head.forward(p, signatures)
    }

    /// Renders one shape from the given angles and returns its `[K]` logits.
    #[allow(clippy::too_many_arguments)]
    pub fn classify_on<'t>(
        &self,
        p: &Bound<'t>,
        shape: &PointCloud,
        azimuth: Value<'t>,
        elevation: Value<'t>,
        distances: &[f64],
        opts: &RenderOptions,
        aug: &Augmentation,
    ) -> Result<Value<'t>> {
        let m = distances.len();
        let r = render_views_on(shape, azimuth, elevation, distances, opts, aug)?;
        let sig = self.signatures(p, r.images, m)?;
        Ok(self.logits(p, sig)?.reshape(&[self.head.classes()]))
    }
}

/// Logits of one shape under fixed weights and test-time rendering.
pub fn classify(
    clf: &MultiViewClassifier,
    store: &ParamStore,
    shape: &PointCloud,
    views: &crate::geomcam::ViewSet,
    opts: &RenderOptions,
) -> Result<Vec<f64>> {
    let tape = crate::diffmath::Tape::new();
    let p = store.bind_frozen(&tape);
    let az = tape.constant(Tensor::vector(views.azimuth.clone()));
    let el = tape.constant(Tensor::vector(views.elevation.clone()));
    let logits = clf.classify_on(&p, shape, az, el, &views.distance, opts, &Augmentation::test_default())?;
    let out = logits.to_tensor().into_data();
    Ok(out)
}
