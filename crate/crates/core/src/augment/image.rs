//! RGB image samples and the individual augmentation primitives.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Three-channel image, channel-major pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageSample {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<ImageSample> {
        if height == 0 || width == 0 {
            return Err(Error::shape("image extents must be positive"));
        }
        if pixels.len() != Self::CHANNELS * height * width {
            return Err(Error::shape(format!(
                "image {height}x{width} wants {} pixels, got {}",
                Self::CHANNELS * height * width,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::domain("pixel values must lie in [0, 1]"));
        }
        Ok(ImageSample { height, width, pixels })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<ImageSample> {
        ImageSample::new(height, width, vec![value; Self::CHANNELS * height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    fn rgb(&self, y: usize, x: usize) -> (f64, f64, f64) {
        (self.get(0, y, x), self.get(1, y, x), self.get(2, y, x))
    }
}

/// Rec. 601 luma.
fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Concrete jitter factors for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue rotation as a fraction of the hue circle, in [-0.5, 0.5].
    pub hue: f64,
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors =
        JitterFactors { brightness: 1.0, contrast: 1.0, saturation: 1.0, hue: 0.0 };
}

/// Apply brightness, contrast, saturation and hue in that fixed order,
/// clamping to `[0, 1]` after each step. Identity factors are skipped so
/// a no-op jitter leaves the image bitwise unchanged.
pub fn color_jitter(img: &ImageSample, factors: JitterFactors) -> ImageSample {
    let mut out = img.clone();
    if factors.brightness != 1.0 {
        for p in out.pixels.iter_mut() {
            *p = clamp01(*p * factors.brightness);
        }
    }
    if factors.contrast != 1.0 {
        let n = (out.height * out.width) as f64;
        let mut mean_gray = 0.0;
        for y in 0..out.height {
            for x in 0..out.width {
                let (r, g, b) = out.rgb(y, x);
                mean_gray += luma(r, g, b);
            }
        }
        mean_gray /= n;
        for p in out.pixels.iter_mut() {
            *p = clamp01(mean_gray + factors.contrast * (*p - mean_gray));
        }
    }
    if factors.saturation != 1.0 {
        for y in 0..out.height {
            for x in 0..out.width {
                let (r, g, b) = out.rgb(y, x);
                let l = luma(r, g, b);
                out.set(0, y, x, clamp01(l + factors.saturation * (r - l)));
                out.set(1, y, x, clamp01(l + factors.saturation * (g - l)));
                out.set(2, y, x, clamp01(l + factors.saturation * (b - l)));
            }
        }
    }
    if factors.hue != 0.0 {
        for y in 0..out.height {
            for x in 0..out.width {
                let (r, g, b) = out.rgb(y, x);
                let (h, s, v) = rgb_to_hsv(r, g, b);
                let (r2, g2, b2) = hsv_to_rgb((h + factors.hue).rem_euclid(1.0), s, v);
                out.set(0, y, x, clamp01(r2));
                out.set(1, y, x, clamp01(g2));
                out.set(2, y, x, clamp01(b2));
            }
        }
    }
    out
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let h6 = h * 6.0;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Replace every channel with Rec. 601 luma.
pub fn to_grayscale(img: &ImageSample) -> ImageSample {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let (r, g, b) = img.rgb(y, x);
            let l = luma(r, g, b);
            out.set(0, y, x, l);
            out.set(1, y, x, l);
            out.set(2, y, x, l);
        }
    }
    out
}

/// Mirror columns within each row of each channel.
pub fn hflip(img: &ImageSample) -> ImageSample {
    let mut out = img.clone();
    for c in 0..ImageSample::CHANNELS {
        for y in 0..img.height {
            for x in 0..img.width {
                out.set(c, y, x, img.get(c, y, img.width - 1 - x));
            }
        }
    }
    out
}

/// Isotropic Gaussian kernel weights, normalized to sum to one.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::config(format!("blur kernel size {size} must be odd")));
    }
    if sigma <= 0.0 {
        return Err(Error::config(format!("blur sigma {sigma} must be positive")));
    }
    let radius = (size / 2) as isize;
    let mut weights = Vec::with_capacity(size * size);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            weights.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(weights)
}

/// Per-channel 2-D convolution with a normalized Gaussian kernel.
/// Borders are handled by edge replication.
pub fn gaussian_blur(img: &ImageSample, kernel_size: usize, sigma: f64) -> Result<ImageSample> {
    let weights = gaussian_kernel(kernel_size, sigma)?;
    let radius = (kernel_size / 2) as isize;
    let (h, w) = (img.height as isize, img.width as isize);
    let mut out = img.clone();
    for c in 0..ImageSample::CHANNELS {
        for y in 0..img.height {
            for x in 0..img.width {
                let mut acc = 0.0;
                let mut wi = 0;
                for dy in -radius..=radius {
                    let sy = (y as isize + dy).clamp(0, h - 1) as usize;
                    for dx in -radius..=radius {
                        let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                        acc += weights[wi] * img.get(c, sy, sx);
                        wi += 1;
                    }
                }
                out.set(c, y, x, clamp01(acc));
            }
        }
    }
    Ok(out)
}

/// Bilinear resample to new extents, sampling at pixel centers. A resize
/// to identical extents reproduces the input bitwise.
pub fn bilinear_resize(img: &ImageSample, out_h: usize, out_w: usize) -> ImageSample {
    let (src_h, src_w) = (img.height, img.width);
    let mut pixels = vec![0.0; ImageSample::CHANNELS * out_h * out_w];
    let sy_scale = src_h as f64 / out_h as f64;
    let sx_scale = src_w as f64 / out_w as f64;
    for c in 0..ImageSample::CHANNELS {
        for y in 0..out_h {
            let sy = ((y as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (src_h - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(src_h - 1);
            let fy = sy - y0 as f64;
            for x in 0..out_w {
                let sx = ((x as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (src_w - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(src_w - 1);
                let fx = sx - x0 as f64;
                let v = (1.0 - fy) * (1.0 - fx) * img.get(c, y0, x0)
                    + (1.0 - fy) * fx * img.get(c, y0, x1)
                    + fy * (1.0 - fx) * img.get(c, y1, x0)
                    + fy * fx * img.get(c, y1, x1);
                pixels[(c * out_h + y) * out_w + x] = clamp01(v);
            }
        }
    }
    ImageSample { height: out_h, width: out_w, pixels }
}

/// Crop a square-scaled region (aspect ratio preserved, area = scale times
/// the original) placed uniformly at random, then resize back to the
/// original extents. Consumes exactly three draws.
pub fn random_resized_crop(
    img: &ImageSample,
    scale_range: (f64, f64),
    rng: &mut RngStream,
) -> ImageSample {
    let scale = rng.uniform(scale_range.0, scale_range.1);
    let side = scale.sqrt();
    let crop_h = ((img.height as f64 * side).round() as usize).clamp(1, img.height);
    let crop_w = ((img.width as f64 * side).round() as usize).clamp(1, img.width);
    let top = rng.below(img.height - crop_h + 1);
    let left = rng.below(img.width - crop_w + 1);
    if crop_h == img.height && crop_w == img.width {
        return img.clone();
    }
    let mut pixels = vec![0.0; ImageSample::CHANNELS * crop_h * crop_w];
    for c in 0..ImageSample::CHANNELS {
        for y in 0..crop_h {
            for x in 0..crop_w {
                pixels[(c * crop_h + y) * crop_w + x] = img.get(c, top + y, left + x);
            }
        }
    }
    let crop = ImageSample { height: crop_h, width: crop_w, pixels };
    bilinear_resize(&crop, img.height, img.width)
}

/// Standardize channels: `(pixel - mean_c) / std_c`. Output is a
/// `[3, H, W]` tensor with no clamping.
pub fn normalize_channels(img: &ImageSample, mean: &[f64; 3], std: &[f64; 3]) -> Result<Tensor> {
    if std.iter().any(|&s| s <= 0.0) {
        return Err(Error::config(format!("non-positive channel std in {std:?}")));
    }
    let hw = img.height * img.width;
    let mut values = Vec::with_capacity(3 * hw);
    for c in 0..ImageSample::CHANNELS {
        for i in 0..hw {
            values.push((img.pixels[c * hw + i] - mean[c]) / std[c]);
        }
    }
    Tensor::new(values, vec![3, img.height, img.width])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> ImageSample {
        let mut pixels = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    pixels.push(((c + 1) * (y * w + x)) as f64 / (3 * h * w) as f64);
                }
            }
        }
        ImageSample::new(h, w, pixels).unwrap()
    }

    #[test]
    fn identity_factors_leave_image_bitwise_unchanged() {
        let img = gradient_image(5, 7);
        let out = color_jitter(&img, JitterFactors::IDENTITY);
        assert_eq!(out, img);
    }

    #[test]
    fn zero_brightness_blacks_out() {
        let img = gradient_image(4, 4);
        let out = color_jitter(
            &img,
            JitterFactors { brightness: 0.0, ..JitterFactors::IDENTITY },
        );
        assert!(out.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn half_brightness_on_constant_image() {
        let img = ImageSample::constant(3, 3, 0.8).unwrap();
        let out = color_jitter(
            &img,
            JitterFactors { brightness: 0.5, ..JitterFactors::IDENTITY },
        );
        assert!(out.pixels().iter().all(|&p| (p - 0.4).abs() < 1e-15));
    }

    #[test]
    fn hue_rotation_preserves_range_and_roundtrips() {
        let img = gradient_image(6, 6);
        let spun = color_jitter(&img, JitterFactors { hue: 0.2, ..JitterFactors::IDENTITY });
        assert!(spun.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
        // full-circle rotation returns close to the original
        let back = color_jitter(&spun, JitterFactors { hue: 0.8, ..JitterFactors::IDENTITY });
        let back2 = color_jitter(&img, JitterFactors { hue: 1.0, ..JitterFactors::IDENTITY });
        let _ = back2;
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn grayscale_luma_and_idempotence() {
        // pure red goes to constant 0.299
        let mut pixels = vec![0.0; 3 * 2 * 2];
        for i in 0..4 {
            pixels[i] = 1.0;
        }
        let red = ImageSample::new(2, 2, pixels).unwrap();
        let gray = to_grayscale(&red);
        assert!(gray.pixels().iter().all(|&p| (p - 0.299).abs() < 1e-12));

        // idempotent up to luma-weight roundoff
        let img = gradient_image(4, 5);
        let once = to_grayscale(&img);
        let twice = to_grayscale(&once);
        for (a, b) in once.pixels().iter().zip(twice.pixels()) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }

        // already-equal channels are a fixed point
        let flat = ImageSample::constant(3, 3, 0.6).unwrap();
        for (a, b) in to_grayscale(&flat).pixels().iter().zip(flat.pixels()) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn hflip_is_involution_and_reverses_columns() {
        let img = gradient_image(3, 4);
        assert_eq!(hflip(&hflip(&img)), img);

        let two_col = ImageSample::new(1, 2, vec![0.1, 0.9, 0.2, 0.8, 0.3, 0.7]).unwrap();
        let flipped = hflip(&two_col);
        assert_eq!(flipped.pixels(), &[0.9, 0.1, 0.8, 0.2, 0.7, 0.3]);

        let thin = gradient_image(4, 1);
        assert_eq!(hflip(&thin), thin);
    }

    #[test]
    fn gaussian_kernel_is_normalized() {
        let k = gaussian_kernel(3, 1.5).unwrap();
        assert_eq!(k.len(), 9);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(gaussian_kernel(4, 1.5).is_err());
        assert!(gaussian_kernel(3, 0.0).is_err());
    }

    #[test]
    fn blur_keeps_constant_images_fixed() {
        let img = ImageSample::constant(5, 5, 0.42).unwrap();
        let out = gaussian_blur(&img, 3, 1.5).unwrap();
        for &p in out.pixels() {
            assert!((p - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_spreads_point_by_kernel_weights() {
        let mut pixels = vec![0.0; 3 * 5 * 5];
        pixels[2 * 5 + 2] = 1.0; // channel 0 center
        let img = ImageSample::new(5, 5, pixels).unwrap();
        let out = gaussian_blur(&img, 3, 1.5).unwrap();
        let k = gaussian_kernel(3, 1.5).unwrap();
        for dy in 0..3 {
            for dx in 0..3 {
                let got = out.get(0, 1 + dy, 1 + dx);
                assert!((got - k[dy * 3 + dx]).abs() < 1e-12, "{got} vs {}", k[dy * 3 + dx]);
            }
        }
    }

    #[test]
    fn full_frame_crop_is_bitwise_identity() {
        let img = gradient_image(8, 8);
        let mut rng = RngStream::new(5);
        let out = random_resized_crop(&img, (1.0, 1.0), &mut rng);
        assert_eq!(out, img);
    }

    #[test]
    fn crop_preserves_extents_and_is_seed_deterministic() {
        let img = gradient_image(9, 13);
        let a = random_resized_crop(&img, (0.8, 1.0), &mut RngStream::new(71));
        let b = random_resized_crop(&img, (0.8, 1.0), &mut RngStream::new(71));
        assert_eq!(a.height(), 9);
        assert_eq!(a.width(), 13);
        assert_eq!(a, b);
    }

    #[test]
    fn normalize_channels_hand_values() {
        let mean = [0.485, 0.456, 0.406];
        let std = [0.229, 0.224, 0.225];
        let img = ImageSample::constant(2, 2, 0.485).unwrap();
        let t = normalize_channels(&img, &mean, &std).unwrap();
        assert_eq!(t.shape(), &[3, 2, 2]);
        assert!(t.values()[0].abs() < 1e-12);

        let img2 = ImageSample::constant(1, 1, 0.714).unwrap();
        let t2 = normalize_channels(&img2, &mean, &std).unwrap();
        assert!((t2.values()[0] - 1.0).abs() < 1e-12);

        let zero_mean = [0.0; 3];
        let unit_std = [1.0; 3];
        let t3 = normalize_channels(&img, &zero_mean, &unit_std).unwrap();
        assert_eq!(&t3.values()[0..4], &img.pixels()[0..4]);

        assert!(normalize_channels(&img, &mean, &[0.0, 1.0, 1.0]).is_err());
    }
}
