//! `hnpm augment-preview`: run the pipeline up to the pre-normalization
//! stage on a PNG, for visual inspection and golden-file tests.

use std::path::{Path, PathBuf};

use clap::Args;

use hnpm_core::augment::{augment_view, AugmentConfig, ImageSample};
use hnpm_core::rng::RngStream;
use hnpm_core::{Error, Result};

#[derive(Args)]
pub struct PreviewArgs {
    /// Input PNG.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disable every probabilistic step and crop the full frame.
    #[arg(long)]
    pub disabled: bool,
}

fn read_png(path: &Path) -> Result<ImageSample> {
    let img = image::open(path)
        .map_err(|e| Error::config(format!("cannot read image {}: {e}", path.display())))?
        .to_rgb8();
    let (width, height) = (img.width() as usize, img.height() as usize);
    let mut pixels = vec![0.0; 3 * height * width];
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[(c * height + y as usize) * width + x as usize] =
                pixel.0[c] as f64 / 255.0;
        }
    }
    ImageSample::new(height, width, pixels)
}

fn write_png(path: &Path, img: &ImageSample) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [
                (img.get(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                (img.get(1, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
                (img.get(2, y, x).clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| Error::format(format!("cannot write image {}: {e}", path.display())))
}

pub fn run(args: PreviewArgs) -> Result<i32> {
    let input = read_png(&args.input)?;
    let cfg = if args.disabled { AugmentConfig::disabled() } else { AugmentConfig::default() };
    let mut rng = RngStream::new(args.seed);
    let (view, trace) = augment_view(&input, &cfg, &mut rng)?;
    write_png(&args.out, &view)?;
    println!(
        "jitter {} grayscale {} hflip {} blur {} crop_scale {:.4}",
        trace.jitter, trace.grayscale, trace.hflip, trace.blur, trace.crop_scale
    );
    println!("wrote {}", args.out.display());
    Ok(0)
}
