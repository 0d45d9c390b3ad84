use std::path::Path;

use image::{Rgb, RgbImage};

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// Tiles rendered stacks into one image: one row per stack, one column per
/// view. Every stack must be `[M, H, W, 3]` with the same dimensions.
pub fn view_grid_image(stacks: &[Tensor]) -> Result<RgbImage> {
    let first = stacks.first().ok_or_else(|| Error::InvalidArgument("no images to tile".into()))?;
    let s = first.shape().to_vec();
    if s.len() != 4 || s[3] != 3 {
        return Err(Error::ShapeMismatch(format!("expected [M, H, W, 3], got {s:?}")));
    }
    let (m, h, w) = (s[0], s[1], s[2]);
    if let Some(bad) = stacks.iter().find(|t| t.shape() != s.as_slice()) {
        return Err(Error::ShapeMismatch(format!("stack {:?} differs from {s:?}", bad.shape())));
    }
    let mut img = RgbImage::new((m * w) as u32, (stacks.len() * h) as u32);
    for (si, t) in stacks.iter().enumerate() {
        for v in 0..m {
            for r in 0..h {
                for c in 0..w {
                    let base = ((v * h + r) * w + c) * 3;
                    let px = &t.data()[base..base + 3];
                    let q = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
                    img.put_pixel((v * w + c) as u32, (si * h + r) as u32, Rgb([q(px[0]), q(px[1]), q(px[2])]));
                }
            }
        }
    }
    Ok(img)
}

/// Writes [`view_grid_image`] as a PNG file.
pub fn save_view_grid(path: impl AsRef<Path>, stacks: &[Tensor]) -> Result<()> {
    view_grid_image(stacks)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
