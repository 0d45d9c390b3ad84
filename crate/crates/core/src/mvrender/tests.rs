use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffmath::{central_difference, relative_error};
use crate::geomcam::{rotate_y, ViewSet};

fn opts(size: usize, radius: f64) -> RenderOptions {
    RenderOptions { width: size, height: size, radius, light: LightMode::Relative, color: ColorMode::White, ..Default::default() }
}

fn pixel(img: &Tensor, size: usize, v: usize, r: usize, c: usize) -> [f64; 3] {
    let b = ((v * size + r) * size + c) * 3;
    [img.data()[b], img.data()[b + 1], img.data()[b + 2]]
}

fn one_view(az: f64, el: f64) -> ViewSet {
    ViewSet::with_distance(vec![az], vec![el], 2.2).unwrap()
}

#[test]
fn single_point_on_axis() {
    let o = opts(32, 0.1);
    let cloud = PointCloud::new(vec![[0.0; 3]]);
    let img = render_views(&cloud, &one_view(0.0, 0.0), &o, &Augmentation::test_default()).unwrap();
    assert_eq!(pixel(&img, 32, 0, 16, 16), [1.0; 3]);
    assert_eq!(pixel(&img, 32, 0, 0, 0), [0.0; 3]);
    assert_eq!(pixel(&img, 32, 0, 31, 31), [0.0; 3]);
}

#[test]
fn nothing_in_front_of_camera_gives_background() {
    let mut o = opts(16, 0.2);
    o.background = [0.2, 0.3, 0.4];
    let cloud = PointCloud::new(vec![[0.0, 0.0, 3.0], [0.5, 0.1, 2.5]]);
    let img = render_views(&cloud, &one_view(0.0, 0.0), &o, &Augmentation::test_default()).unwrap();
    for px in img.data().chunks(3) {
        assert_eq!(px, &[0.2, 0.3, 0.4]);
    }
}

#[test]
fn nearer_opaque_splat_wins() {
    let o = opts(16, 0.1);
    let cloud = PointCloud::with_colors(vec![[0.0, 0.0, -0.5], [0.0, 0.0, 0.5]], vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]).unwrap();
    let img = render_views(&cloud, &one_view(0.0, 0.0), &o, &Augmentation::test_default()).unwrap();
    assert_eq!(pixel(&img, 16, 0, 8, 8), [1.0, 0.0, 0.0]);
}

#[test]
fn empty_cloud_is_rejected() {
    let o = opts(8, 0.1);
    let err = render_views(&PointCloud::new(vec![]), &one_view(0.0, 0.0), &o, &Augmentation::test_default());
    assert!(err.is_err());
}

fn fd_pixel(cloud: &PointCloud, o: &RenderOptions, az: f64, el: f64, p: PixelRef, wrt_az: bool) -> f64 {
    let aug = Augmentation::test_default();
    let size = o.width;
    let f = |x: f64| {
        let v = if wrt_az { one_view(x, el) } else { one_view(az, x) };
        let img = render_views(cloud, &v, o, &aug).unwrap();
        pixel(&img, size, 0, p.row, p.col)[p.channel]
    };
    central_difference(f, if wrt_az { az } else { el }, 0.05)
}

#[test]
fn off_center_point_gradient_matches_finite_difference() {
    let o = opts(32, 0.15);
    let cloud = PointCloud::new(vec![[0.03, 0.02, 0.05]]);
    let (az, el) = (10.0, 15.0);
    let p = PixelRef { view: 0, row: 16, col: 16, channel: 0 };
    let g = render_gradient(&cloud, &one_view(az, el), &o, &Augmentation::test_default(), &[p]).unwrap()[0];
    let na = fd_pixel(&cloud, &o, az, el, p, true);
    let ne = fd_pixel(&cloud, &o, az, el, p, false);
    assert!(g[0].abs() > 1e-4);
    assert!(relative_error(g[0], na) < 0.01, "{} vs {na}", g[0]);
    assert!(relative_error(g[1], ne) < 0.01, "{} vs {ne}", g[1]);
}

#[test]
fn symmetric_scene_has_zero_elevation_gradient_at_center() {
    let o = opts(32, 0.15);
    let cloud = PointCloud::new(vec![[0.0; 3]]);
    let p = PixelRef { view: 0, row: 16, col: 16, channel: 1 };
    let g = render_gradient(&cloud, &one_view(0.0, 0.0), &o, &Augmentation::test_default(), &[p]).unwrap()[0];
    assert!(g[1].abs() < 1e-6);
    let corner = PixelRef { view: 0, row: 0, col: 0, channel: 0 };
    let g = render_gradient(&cloud, &one_view(0.0, 0.0), &o, &Augmentation::test_default(), &[corner]).unwrap()[0];
    assert_eq!(g, [0.0, 0.0]);
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)]).collect())
}

#[test]
fn augmentation_modes() {
    let o = RenderOptions::default();
    let a = sample_augmentation(&o, Mode::Test, 3);
    assert_eq!(a.color, [1.0; 3]);
    assert_eq!(a.light, Light::Camera([0.0, 0.0, 1.0]));
    assert_eq!(sample_augmentation(&o, Mode::Train, 11), sample_augmentation(&o, Mode::Train, 11));
    let mut sums = [0.0; 3];
    let n = 10_000;
    for s in 0..n {
        let a = sample_augmentation(&o, Mode::Train, s);
        for k in 0..3 {
            sums[k] += a.color[k];
        }
        let Light::Camera(l) = a.light else { panic!("random light is camera-relative") };
        assert!(l[2] >= 0.0);
        assert!((l[0] * l[0] + l[1] * l[1] + l[2] * l[2] - 1.0).abs() < 1e-12);
    }
    for s in sums {
        assert!((s / n as f64 - 0.5).abs() < 0.02);
    }
}

#[test]
fn relative_light_is_anti_parallel_to_view_direction() {
    // The point nearest the camera faces it and is fully lit from either side.
    let o = opts(32, 0.2);
    let cloud = PointCloud::new(vec![[0.0, 0.0, 0.5], [0.0, 0.0, -0.5]]);
    for (az, lit) in [(0.0, true), (180.0, true)] {
        let img = render_views(&cloud, &one_view(az, 0.0), &o, &Augmentation::test_default()).unwrap();
        assert_eq!(pixel(&img, 32, 0, 16, 16)[0] == 1.0, lit);
    }
}

#[test]
fn rotating_shape_matches_rotating_cameras() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let o = opts(32, 0.08);
    for _ in 0..5 {
        let cloud = random_cloud(&mut rng, 300);
        let theta = rng.gen_range(-180.0..180.0);
        let views = ViewSet::with_distance(vec![10.0, 100.0, -70.0], vec![20.0, -10.0, 45.0], 2.2).unwrap();
        let shifted = ViewSet::with_distance(views.azimuth.iter().map(|a| a + theta).collect(), views.elevation.clone(), 2.2).unwrap();
        let a = render_views(&cloud, &views, &o, &Augmentation::test_default()).unwrap();
        let b = render_views(&rotate_y(&cloud, theta), &shifted, &o, &Augmentation::test_default()).unwrap();
        let max = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max < 1e-9, "max pixel difference {max}");
    }
}

#[test]
fn pixels_stay_in_unit_range_and_weights_sum_below_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let o = opts(32, 0.1);
    let cloud = random_cloud(&mut rng, 2000);
    let views = ViewSet::with_distance(vec![0.0, 45.0], vec![30.0, -60.0], 2.2).unwrap();
    let aug = sample_augmentation(&RenderOptions::default(), Mode::Train, 1);
    let img = render_views(&cloud, &views, &o, &aug).unwrap();
    assert!(img.data().iter().all(|x| (0.0..=1.0).contains(x)));
    // With a white, unshaded light-independent setup and a black background
    // the pixel value equals the total compositing weight.
    let flat = PointCloud::with_colors(cloud.points.clone(), vec![[1.0; 3]; 2000]).unwrap();
    let aug = Augmentation { light: Light::World([0.0, 1.0, 0.0]), color: [1.0; 3] };
    let img = render_views(&flat, &views, &o, &aug).unwrap();
    assert!(img.data().iter().all(|x| *x <= 1.0));
}

#[test]
fn gradients_reach_azimuth_through_tape() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cloud = random_cloud(&mut rng, 400);
    let o = opts(32, 0.08);
    let tape = Tape::new();
    let az = tape.param(Tensor::vector(vec![15.0, 120.0]));
    let el = tape.param(Tensor::vector(vec![30.0, -20.0]));
    let out = render_views_on(&cloud, az, el, &[2.2, 2.2], &o, &Augmentation::test_default()).unwrap();
    assert_eq!(out.images.shape(), vec![2, 32, 32, 3]);
    let loss = out.images.l2_norm();
    let g = loss.backward().unwrap();
    assert!(g.get(az).data().iter().any(|x| x.abs() > 0.0));
    assert!(g.get(el).data().iter().any(|x| x.abs() > 0.0));
}

#[test]
fn random_scene_gradients_mostly_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let o = RenderOptions { light: LightMode::Relative, color: ColorMode::White, radius: 0.12, ..opts(24, 0.12) };
    let cloud = random_cloud(&mut rng, 60);
    let (az, el) = (25.0, 20.0);
    let pixels: Vec<PixelRef> = (0..24 * 24).map(|i| PixelRef { view: 0, row: i / 24, col: i % 24, channel: 0 }).collect();
    let g = render_gradient(&cloud, &one_view(az, el), &o, &Augmentation::test_default(), &pixels).unwrap();
    let fa: Vec<f64> = {
        let aug = Augmentation::test_default();
        let p = render_views(&cloud, &one_view(az + 0.05, el), &o, &aug).unwrap();
        let m = render_views(&cloud, &one_view(az - 0.05, el), &o, &aug).unwrap();
        p.data().iter().zip(m.data()).step_by(3).map(|(a, b)| (a - b) / 0.1).collect()
    };
    let (mut checked, mut ok) = (0, 0);
    for (gi, ni) in g.iter().zip(&fa) {
        if gi[0].abs() > 1e-4 {
            checked += 1;
            if relative_error(gi[0], *ni) < 0.01 {
                ok += 1;
            }
        }
    }
    assert!(checked > 20);
    assert!(ok as f64 >= 0.95 * checked as f64, "{ok}/{checked}");
}

#[test]
fn doubling_views_roughly_doubles_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = random_cloud(&mut rng, 2048);
    let o = opts(64, 0.04);
    let aug = Augmentation::test_default();
    let time = |m: usize| {
        let views = crate::geomcam::circular_config(m, 30.0, 2.2).unwrap();
        (0..7)
            .map(|_| {
                let t = Instant::now();
                render_views(&cloud, &views, &o, &aug).unwrap();
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let (t4, t8) = (time(4), time(8));
    let ratio = t8 / t4;
    assert!(ratio > 2.0 / 1.3 && ratio < 2.0 * 1.3, "ratio {ratio}");
}
