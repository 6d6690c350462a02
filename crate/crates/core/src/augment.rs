//! Minority-class rebalancing: horizontal flips, then averages of each
//! image with its nearest neighbor in a 90%-energy PCA subspace.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::linalg::{components_for_energy, CovAccumulator, Pca, SymmetricEigen};
use crate::math::{ceil, sqrt};
use crate::preprocess::{AlignedImage, PIXELS, SIDE};

/// Energy fraction kept by the neighbor-search PCA.
pub const NN_ENERGY: f64 = 0.9;
/// Default minority/majority ratio `balance` stops at.
pub const DEFAULT_RATIO: f64 = 0.9;

/// Mirror left and right.
pub fn flip_h(img: &AlignedImage) -> AlignedImage {
    let src = img.data();
    let mut out = vec![0.0; PIXELS];
    for r in 0..SIDE {
        for c in 0..SIDE {
            out[r * SIDE + c] = src[r * SIDE + SIDE - 1 - c];
        }
    }
    AlignedImage::new(out).expect("flip preserves shape and range")
}

/// Coordinates of every image in the leading PCA subspace holding
/// `fraction` of the total variance. Row `i` belongs to image `i`.
pub fn reduced_coordinates(images: &[AlignedImage], fraction: f64) -> Result<Vec<Vec<f64>>> {
    ensure!(fraction > 0.0 && fraction <= 1.0, "energy fraction must lie in (0, 1]");
    let n = images.len();
    ensure!(n > 0, "no images");
    if n <= PIXELS {
        // Eigenvectors of the centered Gram matrix give the scores directly:
        // score_k(i) = sqrt(λ_k) · u_k(i).
        let mut mean = vec![0.0; PIXELS];
        for img in images {
            mean.iter_mut().zip(img.data()).for_each(|(m, v)| *m += v / n as f64);
        }
        let centered: Vec<Vec<f64>> =
            images.iter().map(|img| img.data().iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let g: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
                gram[i * n + j] = g;
                gram[j * n + i] = g;
            }
        }
        let eig = SymmetricEigen::new(&gram, n)?;
        let values: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
        let k = components_for_energy(&values, fraction);
        Ok((0..n).map(|i| (0..k).map(|c| sqrt(values[c]) * eig.vector(c)[i]).collect()).collect())
    } else {
        let mut acc = CovAccumulator::new(PIXELS);
        images.iter().for_each(|img| acc.push(img.data()));
        let full = Pca::from_accumulator(&acc, PIXELS)?;
        let k = components_for_energy(&full.eigenvalues, fraction);
        let pca = Pca { components: full.components[..k * PIXELS].to_vec(), ..full };
        Ok(images.iter().map(|img| pca.project(img.data())).collect())
    }
}

/// Euclidean nearest neighbor of each row, excluding itself; ties go to
/// the lowest index.
pub fn nearest_neighbors(points: &[Vec<f64>]) -> Result<Vec<usize>> {
    ensure!(points.len() >= 2, "nearest-neighbor search needs at least 2 points");
    Ok((0..points.len())
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for (j, p) in points.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d: f64 = points[i].iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect())
}

/// Distinct unordered `(i, nn(i))` pairs in order of `i`.
pub fn neighbor_pairs(images: &[AlignedImage]) -> Result<Vec<(usize, usize)>> {
    ensure!(images.len() >= 2, "nn_average needs at least 2 images, got {}", images.len());
    let nn = nearest_neighbors(&reduced_coordinates(images, NN_ENERGY)?)?;
    let mut pairs = Vec::new();
    for (i, &j) in nn.iter().enumerate() {
        // (j, i) was already emitted when j < i and nn(j) == i.
        if !(j < i && nn[j] == i) {
            pairs.push((i, j));
        }
    }
    Ok(pairs)
}

/// Pixel-wise mean of two images, clamped to the pixel range.
pub fn average(a: &AlignedImage, b: &AlignedImage) -> AlignedImage {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| (0.5 * (x + y)).clamp(0.0, 255.0)).collect();
    AlignedImage::new(data).expect("average preserves shape and range")
}

/// One synthesized image per distinct nearest-neighbor pair.
pub fn nn_average(images: &[AlignedImage]) -> Result<Vec<AlignedImage>> {
    Ok(neighbor_pairs(images)?.into_iter().map(|(i, j)| average(&images[i], &images[j])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Flip,
    NnAverage,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Flip => "flip",
            Method::NnAverage => "nn_average",
        }
    }
}

/// A generated image and the originals it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub image: AlignedImage,
    pub label: u8,
    pub method: Method,
    /// Indices into [`AugmentedSet::originals`].
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSet {
    pub originals: Vec<AlignedImage>,
    pub labels: Vec<u8>,
    pub synthesized: Vec<Synthesized>,
}

impl AugmentedSet {
    pub fn len(&self) -> usize {
        self.originals.len() + self.synthesized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Originals followed by synthesized images.
    pub fn iter(&self) -> impl Iterator<Item = (&AlignedImage, u8)> {
        self.originals
            .iter()
            .zip(self.labels.iter().copied())
            .chain(self.synthesized.iter().map(|s| (&s.image, s.label)))
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for (_, y) in self.iter() {
            counts[y as usize] += 1;
        }
        counts
    }
}

/// Grow the minority class toward `ratio` × majority with flips of its
/// originals first, then nearest-neighbor averages of its originals. Stops
/// at the target or when both generators run out; the majority class is
/// never touched.
pub fn balance(images: Vec<AlignedImage>, labels: Vec<u8>, ratio: f64) -> Result<AugmentedSet> {
    ensure!(images.len() == labels.len(), "{} images but {} labels", images.len(), labels.len());
    ensure!(labels.iter().all(|&y| y <= 1), "labels must be 0 or 1");
    ensure!(ratio > 0.0 && ratio <= 1.0, "target ratio must lie in (0, 1]");
    let mut set = AugmentedSet { originals: images, labels, synthesized: Vec::new() };
    let counts = set.class_counts();
    let minority = u8::from(counts[1] < counts[0]);
    let (have, majority) = (counts[minority as usize], counts[1 - minority as usize]);
    // The small slack keeps 0.9 × 100 from rounding up to 91.
    let target = ceil(ratio * majority as f64 - 1e-9) as usize;
    if have == 0 || have >= target {
        return Ok(set);
    }
    let mut need = target - have;

    let idx: Vec<usize> = (0..set.labels.len()).filter(|&i| set.labels[i] == minority).collect();
    for &i in idx.iter().take(need) {
        set.synthesized.push(Synthesized {
            image: flip_h(&set.originals[i]),
            label: minority,
            method: Method::Flip,
            sources: vec![i],
        });
    }
    need -= need.min(idx.len());

    if need > 0 && idx.len() >= 2 {
        let pool: Vec<AlignedImage> = idx.iter().map(|&i| set.originals[i].clone()).collect();
        for (a, b) in neighbor_pairs(&pool)?.into_iter().take(need) {
            set.synthesized.push(Synthesized {
                image: average(&pool[a], &pool[b]),
                label: minority,
                method: Method::NnAverage,
                sources: vec![idx[a], idx[b]],
            });
        }
    }
    Ok(set)
}
