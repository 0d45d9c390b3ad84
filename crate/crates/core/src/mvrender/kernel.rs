use super::{Augmentation, Light, RenderOptions};
use crate::cloud::PointCloud;
use crate::diffmath::Tensor;
use crate::geomcam::{dot, frame_jet, sub, Frame, FrameJet, V3};

/// Minimum view-space depth for a point to be drawn.
const NEAR: f64 = 1e-6;

/// Shape-dependent state shared by every view of one render call.
pub struct RenderKernel {
    points: Vec<V3>,
    normals: Vec<V3>,
    base: Vec<[f64; 3]>,
    light: Light,
    opts: RenderOptions,
}

/// Per-point projection of one view.
#[derive(Clone, Copy, Default)]
struct Projected {
    u: f64,
    v: f64,
    depth: f64,
    rel: V3,
    view: V3,
    shade: f64,
    visible: bool,
}

#[derive(Clone, Copy)]
struct Fragment {
    point: u32,
    alpha: f64,
}

/// Everything the backward pass needs for one view.
struct ViewCache {
    jet: FrameJet,
    distance: f64,
    proj: Vec<Projected>,
    /// Fragments grouped by pixel, depth-ordered, truncated where
    /// compositing stopped.
    frags: Vec<Fragment>,
    offsets: Vec<u32>,
}

/// Saved forward state of a multi-view render.
pub struct RenderCache {
    kernel: RenderKernel,
    views: Vec<ViewCache>,
}

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scaled(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn to_world(f: &Frame, l: V3) -> V3 {
    add(add(scaled(f.right, l[0]), scaled(f.up, l[1])), scaled(f.back, l[2]))
}

impl RenderKernel {
    pub fn new(shape: &PointCloud, opts: &RenderOptions, aug: &Augmentation) -> Self {
        let c = shape.centroid();
        let normals = shape
            .points
            .iter()
            .map(|p| {
                let d = sub(*p, c);
                let n = dot(d, d).sqrt();
                if n > 0.0 {
                    scaled(d, 1.0 / n)
                } else {
                    [0.0; 3]
                }
            })
            .collect();
        let base = match &shape.colors {
            Some(cols) => cols.clone(),
            None => vec![aug.color; shape.len()],
        };
        RenderKernel { points: shape.points.clone(), normals, base, light: aug.light, opts: opts.clone() }
    }

    fn light_dir(&self, frame: &Frame) -> V3 {
        match self.light {
            Light::World(l) => l,
            Light::Camera(l) => to_world(frame, l),
        }
    }

    /// Renders every view. Returns `[M, H, W, 3]` and, when `keep` is set,
    /// the cache needed for [`RenderCache::backward`].
    pub fn forward(self, az: &[f64], el: &[f64], dist: &[f64], keep: bool) -> (Tensor, Option<RenderCache>) {
        let (h, w) = (self.opts.height, self.opts.width);
        let m = az.len();
        let mut out = vec![0.0; m * h * w * 3];
        let mut caches = Vec::with_capacity(if keep { m } else { 0 });
        for v in 0..m {
            let img = &mut out[v * h * w * 3..(v + 1) * h * w * 3];
            let cache = self.render_one(az[v], el[v], dist[v], img);
            if keep {
                caches.push(cache);
            }
        }
        let t = Tensor::new(&[m, h, w, 3], out);
        let cache = keep.then_some(RenderCache { kernel: self, views: caches });
        (t, cache)
    }

    fn render_one(&self, az: f64, el: f64, distance: f64, img: &mut [f64]) -> ViewCache {
        let o = &self.opts;
        let (h, w) = (o.height, o.width);
        let jet = frame_jet(az, el);
        let fr = jet.frame;
        let cam = scaled(fr.back, distance);
        let light = self.light_dir(&fr);
        let f = (w as f64 / 2.0) / (o.fov.to_radians() / 2.0).tan();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let r = o.radius_px();
        let r2 = r * r;

        let proj: Vec<Projected> = self
            .points
            .iter()
            .zip(&self.normals)
            .map(|(p, n)| {
                let rel = sub(*p, cam);
                let view = [dot(fr.right, rel), dot(fr.up, rel), dot(fr.back, rel)];
                let depth = -view[2];
                if depth <= NEAR {
                    return Projected { depth, rel, view, ..Default::default() };
                }
                Projected {
                    u: cx + f * view[0] / depth,
                    v: cy - f * view[1] / depth,
                    depth,
                    rel,
                    view,
                    shade: if *n == [0.0; 3] { 1.0 } else { dot(*n, light).max(0.0) },
                    visible: true,
                }
            })
            .collect();

        // Bucket covering splats by pixel (counting sort), then keep the K
        // nearest in depth, front to back.
        let pixel_range = |pr: &Projected| {
            let c0 = (pr.u - r).ceil().max(0.0) as i64;
            let c1 = ((pr.u + r).floor() as i64).min(w as i64 - 1);
            let r0 = (pr.v - r).ceil().max(0.0) as i64;
            let r1 = ((pr.v + r).floor() as i64).min(h as i64 - 1);
            (r0, r1, c0, c1)
        };
        let mut counts = vec![0u32; h * w + 1];
        let each = |visit: &mut dyn FnMut(usize, usize, f64)| {
            for (i, pr) in proj.iter().enumerate() {
                if !pr.visible || !pr.u.is_finite() || !pr.v.is_finite() {
                    continue;
                }
                if pr.u + r < 0.0 || pr.u - r > w as f64 || pr.v + r < 0.0 || pr.v - r > h as f64 {
                    continue;
                }
                let (r0, r1, c0, c1) = pixel_range(pr);
                for row in r0..=r1 {
                    let dy = row as f64 - pr.v;
                    for col in c0..=c1 {
                        let dx = col as f64 - pr.u;
                        let d2 = dx * dx + dy * dy;
                        if d2 < r2 {
                            visit(row as usize * w + col as usize, i, d2);
                        }
                    }
                }
            }
        };
        each(&mut |pix, _, _| counts[pix + 1] += 1);
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let total = counts[h * w] as usize;
        let mut cand: Vec<(f64, u32)> = vec![(0.0, 0); total];
        let mut fill = counts.clone();
        each(&mut |pix, i, d2| {
            cand[fill[pix] as usize] = (d2, i as u32);
            fill[pix] += 1;
        });

        let k = o.points_per_pixel;
        let mut frags = Vec::with_capacity(total.min(h * w * k));
        let mut offsets = Vec::with_capacity(h * w + 1);
        let mut chosen: Vec<(f64, u32, f64)> = Vec::with_capacity(k);
        for pix in 0..h * w {
            offsets.push(frags.len() as u32);
            let list = &cand[counts[pix] as usize..counts[pix + 1] as usize];
            let px = &mut img[pix * 3..pix * 3 + 3];
            chosen.clear();
            chosen.extend(list.iter().map(|&(d2, i)| (proj[i as usize].depth, i, 1.0 - d2 / r2)));
            let by_depth = |a: &(f64, u32, f64), b: &(f64, u32, f64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if chosen.len() > k {
                chosen.select_nth_unstable_by(k - 1, by_depth);
                chosen.truncate(k);
            }
            chosen.sort_unstable_by(by_depth);
            let mut t = 1.0;
            let mut rgb = [0.0; 3];
            for &(_, i, alpha) in &chosen {
                let c = self.base[i as usize];
                let s = proj[i as usize].shade;
                for ch in 0..3 {
                    rgb[ch] += c[ch] * s * alpha * t;
                }
                t *= 1.0 - alpha;
                frags.push(Fragment { point: i, alpha });
                if t < o.gamma {
                    break;
                }
            }
            for ch in 0..3 {
                px[ch] = (rgb[ch] + o.background[ch] * t).clamp(0.0, 1.0);
            }
        }
        offsets.push(frags.len() as u32);
        ViewCache { jet, distance, proj, frags, offsets }
    }
}

impl RenderCache {
    /// Given `∂L/∂images` (`[M, H, W, 3]`), returns `∂L/∂azimuth` and
    /// `∂L/∂elevation` per view, in degrees⁻¹.
    pub fn backward(&self, grad: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let o = &self.kernel.opts;
        let (h, w) = (o.height, o.width);
        let f = (w as f64 / 2.0) / (o.fov.to_radians() / 2.0).tan();
        let r = o.radius_px();
        let r2 = r * r;
        let mut ga = vec![0.0; self.views.len()];
        let mut ge = vec![0.0; self.views.len()];
        let n = self.kernel.points.len();
        let mut gu = vec![0.0; n];
        let mut gv = vec![0.0; n];
        let mut gs = vec![0.0; n];
        let mut colors: Vec<[f64; 3]> = Vec::new();
        let mut trans: Vec<f64> = Vec::new();
        for (vi, vc) in self.views.iter().enumerate() {
            let g = &grad.data()[vi * h * w * 3..(vi + 1) * h * w * 3];
            gu.iter_mut().for_each(|x| *x = 0.0);
            gv.iter_mut().for_each(|x| *x = 0.0);
            gs.iter_mut().for_each(|x| *x = 0.0);
            for pix in 0..h * w {
                let frs = &vc.frags[vc.offsets[pix] as usize..vc.offsets[pix + 1] as usize];
                if frs.is_empty() {
                    continue;
                }
                let gp = &g[pix * 3..pix * 3 + 3];
                if gp.iter().all(|x| *x == 0.0) {
                    continue;
                }
                colors.clear();
                trans.clear();
                let mut t = 1.0;
                for fr in frs {
                    let pi = fr.point as usize;
                    let s = vc.proj[pi].shade;
                    let b = self.kernel.base[pi];
                    colors.push([b[0] * s, b[1] * s, b[2] * s]);
                    trans.push(t);
                    t *= 1.0 - fr.alpha;
                }
                // `behind` is the color seen through everything after fragment j.
                let mut behind = o.background;
                let (row, col) = ((pix / w) as f64, (pix % w) as f64);
                for j in (0..frs.len()).rev() {
                    let fr = frs[j];
                    let pi = fr.point as usize;
                    let c = colors[j];
                    let tj = trans[j];
                    let mut d_alpha = 0.0;
                    let mut d_shade = 0.0;
                    let b = self.kernel.base[pi];
                    for ch in 0..3 {
                        d_alpha += gp[ch] * tj * (c[ch] - behind[ch]);
                        d_shade += gp[ch] * fr.alpha * tj * b[ch];
                    }
                    let pr = &vc.proj[pi];
                    // α = 1 − ((col − u)² + (row − v)²) / r²
                    gu[pi] += d_alpha * 2.0 * (col - pr.u) / r2;
                    gv[pi] += d_alpha * 2.0 * (row - pr.v) / r2;
                    gs[pi] += d_shade;
                    for ch in 0..3 {
                        behind[ch] = c[ch] * fr.alpha + (1.0 - fr.alpha) * behind[ch];
                    }
                }
            }
            let jet = &vc.jet;
            let dlight = |d: &Frame| match self.kernel.light {
                Light::World(_) => [0.0; 3],
                Light::Camera(l) => to_world(d, l),
            };
            let dl = [dlight(&jet.d_azimuth), dlight(&jet.d_elevation)];
            let frames = [&jet.d_azimuth, &jet.d_elevation];
            let mut acc = [0.0; 2];
            for pi in 0..n {
                let pr = &vc.proj[pi];
                if !pr.visible || (gu[pi] == 0.0 && gv[pi] == 0.0 && gs[pi] == 0.0) {
                    continue;
                }
                let fr = &jet.frame;
                let (x, y, depth) = (pr.view[0], pr.view[1], pr.depth);
                for (k, d) in frames.iter().enumerate() {
                    let dcam = scaled(d.back, vc.distance);
                    let dview = [
                        dot(d.right, pr.rel) - dot(fr.right, dcam),
                        dot(d.up, pr.rel) - dot(fr.up, dcam),
                        dot(d.back, pr.rel) - dot(fr.back, dcam),
                    ];
                    let du = f * (dview[0] / depth + x * dview[2] / (depth * depth));
                    let dv = -f * (dview[1] / depth + y * dview[2] / (depth * depth));
                    let dshade =
                        if pr.shade > 0.0 && self.kernel.normals[pi] != [0.0; 3] { dot(self.kernel.normals[pi], dl[k]) } else { 0.0 };
                    acc[k] += gu[pi] * du + gv[pi] * dv + gs[pi] * dshade;
                }
            }
            ga[vi] = acc[0];
            ge[vi] = acc[1];
        }
        (ga, ge)
    }
}
