use std::borrow::Cow;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::autograd::Tensor;
use crate::dataset::{ImageRef, PixelGrid};
use crate::error::{Error, Result};

/// Decodes an image file into RGB or grayscale pixels (alpha is dropped).
pub fn load_image(path: &Path) -> std::result::Result<PixelGrid, String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let grid = match img.color().channel_count() {
        1 | 2 => PixelGrid::new(width, height, 1, img.into_luma8().into_raw()),
        _ => PixelGrid::new(width, height, 3, img.into_rgb8().into_raw()),
    };
    grid.map_err(|e| e.to_string())
}

/// Encodes `image` as PNG.
pub fn save_png(image: &PixelGrid, path: &Path) -> Result<()> {
    let color = if image.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &image.data,
        image.width as u32,
        image.height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    })
}

/// Borrows in-memory pixels or decodes the referenced file.
pub fn resolve_image<'a>(id: &str, image: &'a ImageRef) -> Result<Cow<'a, PixelGrid>> {
    match image {
        ImageRef::Pixels(p) => Ok(Cow::Borrowed(p.as_ref())),
        ImageRef::Path(path) => load_image(path).map(Cow::Owned).map_err(|message| Error::Image {
            id: id.to_string(),
            path: path.clone(),
            message,
        }),
    }
}

/// Bilinear resize (half-pixel centres) to `target × target`, grayscale
/// replicated to three channels, output `3 × target × target`. With
/// `rescale`, values are divided by 255.
pub fn preprocess_image(image: &PixelGrid, target: usize, rescale: bool) -> Result<Tensor> {
    if image.width == 0 || image.height == 0 {
        return Err(Error::invalid("image has a zero dimension"));
    }
    if target == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    let scale = if rescale { 1.0 / 255.0 } else { 1.0 };
    let xs = sample_positions(image.width, target);
    let ys = sample_positions(image.height, target);
    let mut out = ArrayD::zeros(IxDyn(&[3, target, target]));
    for c in 0..3 {
        let src_c = if image.channels == 1 { 0 } else { c };
        for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
                let px = |x, y| image.get(x, y, src_c) as f64;
                let top = px(x0, y0) * (1.0 - wx) + px(x1, y0) * wx;
                let bottom = px(x0, y1) * (1.0 - wx) + px(x1, y1) * wx;
                out[[c, oy, ox]] = (top * (1.0 - wy) + bottom * wy) * scale;
            }
        }
    }
    Ok(out)
}

/// For each output coordinate: the two source indices and the weight of the second.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}
