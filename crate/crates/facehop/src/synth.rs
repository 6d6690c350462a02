//! Synthetic two-class face-like images with eye landmarks.
//!
//! Every image renders a smooth face template (oval, eyes, brows, mouth)
//! under a random similarity transform, brightness, contrast and pixel
//! noise. The classes differ in local shape only: class 1 has higher
//! brows, smaller eyes and a wider mouth, each with per-image jitter.
//! With `cue_dropout` a cue may be rendered halfway between the classes,
//! so no single facial region is decisive on its own.

use std::path::Path;

use facehop_core::preprocess::{CropGeometry, Landmarks, Point, RawImage, SIDE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifest::Row;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub side: usize,
    /// Images per class.
    pub counts: [usize; 2],
    /// Pixel noise amplitude (uniform, ±).
    pub noise: f64,
    /// Maximum eye-line tilt in radians.
    pub max_tilt: f64,
    /// Scale of the class-dependent template differences.
    pub separation: f64,
    /// Probability that a cue is rendered class-neutral in an image.
    pub cue_dropout: f64,
    /// Render directly in the aligned 32×32 frame (no pose variation, no
    /// landmarks); `side` and `max_tilt` are ignored.
    pub aligned: bool,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { side: 64, counts: [240, 160], noise: 30.0, max_tilt: 0.2, separation: 1.0, cue_dropout: 0.0, aligned: false, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: RawImage,
    /// `None` for aligned samples.
    pub landmarks: Option<Landmarks>,
    pub label: u8,
}

fn blob(u: f64, v: f64, cu: f64, cv: f64, su: f64, sv: f64) -> f64 {
    (-((u - cu) / su).powi(2) - ((v - cv) / sv).powi(2)).exp()
}

/// Intensity of the canonical face at `(u, v)`; eyes sit at `(±1, 0)`.
/// `c` holds the class shape change of each cue (eyes, brows, mouth);
/// `jitter` entries lie in `[-1, 1]`.
fn template(u: f64, v: f64, c: [f64; 3], jitter: &[f64; 3]) -> f64 {
    let oval = ((u / 1.9).powi(2) + ((v - 0.7) / 2.5).powi(2)).sqrt();
    let mut f = if oval < 1.0 { 150.0 } else { 70.0 };
    let eye = 0.3 - 0.07 * c[0] + 0.035 * jitter[2];
    f -= 90.0 * (blob(u, v, -1.0, 0.0, eye, 0.22) + blob(u, v, 1.0, 0.0, eye, 0.22));
    f -= 40.0 * blob(u, v, 0.0, 1.2, 0.18, 0.5);
    let brow = -0.5 - 0.15 * c[1] + 0.075 * jitter[0];
    f -= 70.0 * (blob(u, v, -1.0, brow, 0.5, 0.12) + blob(u, v, 1.0, brow, 0.5, 0.12));
    let mouth = 0.5 + 0.25 * c[2] + 0.125 * jitter[1];
    f -= 70.0 * blob(u, v, 0.0, 2.0, mouth, 0.15);
    f
}

pub fn generate(opts: &SynthOptions) -> Vec<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = if opts.aligned { SIDE } else { opts.side };
    let side = n as f64;
    let geom = CropGeometry::default();
    let labels: Vec<u8> = (0..2u8).flat_map(|c| std::iter::repeat_n(c, opts.counts[c as usize])).collect();
    labels
        .into_iter()
        .map(|label| {
            let (half_eye, tilt, center) = if opts.aligned {
                (side / (2.0 * geom.side_factor), 0.0, Point::new(side * 0.5, side * geom.eye_height))
            } else {
                let center = Point::new(
                    side * 0.5 + rng.random_range(-0.05..0.05) * side,
                    side * 0.4 + rng.random_range(-0.05..0.05) * side,
                );
                (side * rng.random_range(0.13..0.17), rng.random_range(-opts.max_tilt..=opts.max_tilt), center)
            };
            let gain = rng.random_range(0.75..1.15);
            let offset = rng.random_range(-20.0..20.0);
            let jitter = [(); 3].map(|_| rng.random_range(-1.0..=1.0));
            let class = opts.separation * f64::from(label);
            let cues = [(); 3].map(|_| if rng.random_bool(opts.cue_dropout) { 0.5 * opts.separation } else { class });
            let (s, c) = tilt.sin_cos();
            let mut data = Vec::with_capacity(n * n);
            for y in 0..n {
                for x in 0..n {
                    let (dx, dy) = (x as f64 - center.x, y as f64 - center.y);
                    // Inverse similarity: image → canonical face frame.
                    let u = (c * dx + s * dy) / half_eye;
                    let v = (-s * dx + c * dy) / half_eye;
                    let noise = rng.random_range(-opts.noise..=opts.noise);
                    data.push((gain * template(u, v, cues, &jitter) + offset + noise).clamp(0.0, 255.0));
                }
            }
            let eye = |sign: f64| Point::new(center.x + sign * half_eye * c, center.y + sign * half_eye * s);
            SynthSample {
                image: RawImage::new(n, n, data).expect("valid synthetic image"),
                landmarks: (!opts.aligned).then(|| Landmarks::new(eye(-1.0), eye(1.0))),
                label,
            }
        })
        .collect()
}

/// Write the samples as PGM files plus `manifest.csv` into `dir`.
pub fn write_dataset(dir: &Path, samples: &[SynthSample]) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let path = dir.join(format!("img_{i:04}.pgm"));
        let pixels: Vec<u8> = s.image.data().iter().map(|v| v.round() as u8).collect();
        crate::image_io::write_gray(&path, s.image.width(), s.image.height(), pixels)?;
        rows.push(Row { path, label: s.label, landmarks: s.landmarks, provenance: "synthetic".into() });
    }
    let manifest = dir.join("manifest.csv");
    crate::manifest::write(&manifest, &rows)?;
    Ok(manifest)
}
