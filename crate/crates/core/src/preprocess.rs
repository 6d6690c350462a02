//! Raw face image → aligned, equalized 32×32 input.
//!
//! The chain is [`align`] → [`crop`] → [`equalize_hist`] → [`resize_to_32`],
//! wrapped by [`preprocess`]. Eye landmarks come from outside (the dataset
//! manifest); no detector runs here.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Error, Result};
use crate::math::{atan2, floor, hypot, round, sin_cos};

/// Side of the network input.
pub const SIDE: usize = 32;
pub const PIXELS: usize = SIDE * SIDE;

/// Grayscale image, row-major, intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(width > 0 && height > 0, "image must be non-empty");
        ensure!(
            data.len() == width * height,
            "image data has {} values, expected {}",
            data.len(),
            width * height
        );
        ensure!(
            data.iter().all(|v| (0.0..=255.0).contains(v)),
            "image intensities must lie in [0, 255]"
        );
        Ok(Self { width, height, data })
    }

    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::new(width, height, data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel value with zero outside the frame.
    #[inline]
    fn get_or_zero(&self, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            self.get(x as usize, y as usize)
        }
    }

    /// Bilinear sample; neighbors outside the frame contribute zero.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = floor(x);
        let y0 = floor(y);
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let mut v = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wx * wy;
                if w != 0.0 {
                    v += w * self.get_or_zero(xi + dx, yi + dy);
                }
            }
        }
        v
    }
}

/// A 32×32 network input.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedImage {
    data: Vec<f64>,
}

impl AlignedImage {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        ensure!(data.len() == PIXELS, "aligned image needs {PIXELS} values, got {}", data.len());
        ensure!(
            data.iter().all(|v| (0.0..=255.0).contains(v)),
            "image intensities must lie in [0, 255]"
        );
        Ok(Self { data })
    }

    pub fn zeros() -> Self {
        Self { data: vec![0.0; PIXELS] }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * SIDE + col]
    }
}

impl From<AlignedImage> for RawImage {
    fn from(img: AlignedImage) -> Self {
        RawImage { width: SIDE, height: SIDE, data: img.data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Eye centers in image coordinates (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmarks {
    pub left_eye: Point,
    pub right_eye: Point,
    /// `(x, y, w, h)`; carried through but unused by the geometry.
    pub face_box: Option<[f64; 4]>,
}

impl Landmarks {
    pub fn new(left_eye: Point, right_eye: Point) -> Self {
        Self { left_eye, right_eye, face_box: None }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let (l, r) = (self.left_eye, self.right_eye);
        ensure!(
            [l.x, l.y, r.x, r.y].iter().all(|v| v.is_finite()),
            "landmarks must be finite"
        );
        ensure!(l != r, "degenerate landmarks: both eyes at ({}, {})", l.x, l.y);
        ensure!(l.x < r.x, "left eye x ({}) must be left of right eye x ({})", l.x, r.x);
        for p in [l, r] {
            ensure!(
                p.x >= 0.0 && p.y >= 0.0 && p.x < width as f64 && p.y < height as f64,
                "landmark ({}, {}) outside {width}×{height} image",
                p.x,
                p.y
            );
        }
        Ok(())
    }

    pub fn midpoint(&self) -> Point {
        Point::new(
            0.5 * (self.left_eye.x + self.right_eye.x),
            0.5 * (self.left_eye.y + self.right_eye.y),
        )
    }

    pub fn eye_distance(&self) -> f64 {
        hypot(self.right_eye.x - self.left_eye.x, self.right_eye.y - self.left_eye.y)
    }

    /// Angle of the left→right eye segment; [`align`] rotates the image by
    /// its negative.
    pub fn eye_line_angle(&self) -> f64 {
        atan2(self.right_eye.y - self.left_eye.y, self.right_eye.x - self.left_eye.x)
    }

    /// Eye positions after [`align`]: same midpoint and distance, level.
    pub fn aligned(&self) -> Self {
        let m = self.midpoint();
        let half = 0.5 * self.eye_distance();
        Self {
            left_eye: Point::new(m.x - half, m.y),
            right_eye: Point::new(m.x + half, m.y),
            face_box: self.face_box,
        }
    }
}

/// Rotate about the eye midpoint so the eye line is horizontal. Output has
/// the input's size; samples falling outside the source are zero.
pub fn align(img: &RawImage, lm: &Landmarks) -> Result<RawImage> {
    lm.validate(img.width, img.height)?;
    let theta = lm.eye_line_angle();
    if theta == 0.0 {
        return Ok(img.clone());
    }
    let (s, c) = sin_cos(theta);
    let m = lm.midpoint();
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        for x in 0..img.width {
            let dx = x as f64 - m.x;
            let dy = y as f64 - m.y;
            let sx = m.x + c * dx - s * dy;
            let sy = m.y + s * dx + c * dy;
            data.push(img.sample_bilinear(sx, sy).clamp(0.0, 255.0));
        }
    }
    Ok(RawImage { width: img.width, height: img.height, data })
}

/// Crop geometry relative to the (aligned) eye pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropGeometry {
    /// Crop side as a multiple of the inter-eye distance.
    pub side_factor: f64,
    /// Eye line position as a fraction of the crop height from the top.
    pub eye_height: f64,
}

impl Default for CropGeometry {
    fn default() -> Self {
        Self { side_factor: 2.2, eye_height: 0.4 }
    }
}

/// Square crop window in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
}

pub const MIN_CROP: usize = 8;

pub fn crop_window(
    width: usize,
    height: usize,
    lm: &Landmarks,
    geom: &CropGeometry,
) -> Result<CropWindow> {
    lm.validate(width, height)?;
    let wanted = round(geom.side_factor * lm.eye_distance());
    let side = (wanted.max(0.0) as usize).min(width).min(height);
    ensure!(side >= MIN_CROP, "crop window {side}×{side} is smaller than {MIN_CROP}×{MIN_CROP}");
    let m = lm.midpoint();
    let place = |start: f64, limit: usize| -> usize {
        let max = (limit - side) as f64;
        round(start).clamp(0.0, max) as usize
    };
    Ok(CropWindow {
        x0: place(m.x - 0.5 * side as f64, width),
        y0: place(m.y - geom.eye_height * side as f64, height),
        side,
    })
}

/// Square crop centered horizontally on the eyes, translated into bounds.
pub fn crop(img: &RawImage, lm: &Landmarks, geom: &CropGeometry) -> Result<RawImage> {
    let w = crop_window(img.width, img.height, lm, geom)?;
    let mut data = Vec::with_capacity(w.side * w.side);
    for y in w.y0..w.y0 + w.side {
        let row = y * img.width;
        data.extend_from_slice(&img.data[row + w.x0..row + w.x0 + w.side]);
    }
    Ok(RawImage { width: w.side, height: w.side, data })
}

/// CDF histogram equalization over 256 bins:
/// `v → round(255 · (cdf(v) − cdf_min) / (N − cdf_min))`.
/// Values are binned by rounding. A constant image maps to all zeros.
pub fn equalize_hist(img: &RawImage) -> RawImage {
    let bin = |v: f64| round(v.clamp(0.0, 255.0)) as usize;
    let mut hist = [0usize; 256];
    for &v in &img.data {
        hist[bin(v)] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let n = img.data.len();
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    let denom = (n - cdf_min) as f64;
    let mut lut = [0.0; 256];
    if denom > 0.0 {
        for (l, &c) in lut.iter_mut().zip(&cdf) {
            *l = round(255.0 * (c.saturating_sub(cdf_min)) as f64 / denom);
        }
    }
    RawImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| lut[bin(v)]).collect(),
    }
}

/// Bilinear resampling of a square image to `out × out`, pixel centers
/// aligned, edges replicated.
pub fn resize_square(img: &RawImage, out: usize) -> Result<RawImage> {
    ensure!(
        img.width == img.height,
        "resize expects a square image, got {}×{}",
        img.width,
        img.height
    );
    ensure!(out > 0, "output size must be positive");
    let n = img.width;
    if n == out {
        return Ok(img.clone());
    }
    let scale = n as f64 / out as f64;
    let max = (n - 1) as f64;
    let coords: Vec<(usize, usize, f64)> = (0..out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = floor(s) as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect();
    let mut data = Vec::with_capacity(out * out);
    for &(y0, y1, fy) in &coords {
        for &(x0, x1, fx) in &coords {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 255.0));
        }
    }
    Ok(RawImage { width: out, height: out, data })
}

pub fn resize_to_32(img: &RawImage) -> Result<AlignedImage> {
    let r = resize_square(img, SIDE)?;
    Ok(AlignedImage { data: r.data })
}

/// Full chain: align, crop, equalize, resize.
pub fn preprocess(img: &RawImage, lm: &Landmarks, geom: &CropGeometry) -> Result<AlignedImage> {
    if img.width < SIDE || img.height < SIDE {
        return Err(Error::validation(alloc::format!(
            "input image {}×{} is smaller than {SIDE}×{SIDE}",
            img.width,
            img.height
        )));
    }
    let aligned = align(img, lm)?;
    let cropped = crop(&aligned, &lm.aligned(), geom)?;
    resize_to_32(&equalize_hist(&cropped))
}
