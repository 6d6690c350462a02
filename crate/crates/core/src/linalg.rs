//! Dense symmetric eigendecomposition, mergeable covariance accumulation and
//! PCA with a deterministic sign convention.
//!
//! Matrices are row-major `Vec<f64>` with explicit dimensions.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::math::{hypot, sqrt};

/// Eigenpairs of a real symmetric matrix, sorted by non-increasing
/// eigenvalue. Ties keep the order produced by the QL iteration, so the
/// result is fully deterministic for a given input.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub dim: usize,
    pub values: Vec<f64>,
    /// Row `k` holds the unit eigenvector for `values[k]`.
    pub vectors: Vec<f64>,
}

impl SymmetricEigen {
    /// Decompose the symmetric `dim × dim` matrix `a` (only symmetry is
    /// assumed; the lower triangle is read).
    pub fn new(a: &[f64], dim: usize) -> Result<Self> {
        ensure!(a.len() == dim * dim, "matrix length {} is not {dim}²", a.len());
        ensure!(a.iter().all(|v| v.is_finite()), "matrix has non-finite entries");
        if dim == 0 {
            return Ok(Self { dim, values: Vec::new(), vectors: Vec::new() });
        }
        let mut v = a.to_vec();
        let mut d = vec![0.0; dim];
        let mut e = vec![0.0; dim];
        tred2(&mut v, &mut d, &mut e, dim);
        tql2(&mut v, &mut d, &mut e, dim);

        // Columns of `v` are eigenvectors. Stable sort keeps index order on ties.
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(core::cmp::Ordering::Equal));

        let mut values = Vec::with_capacity(dim);
        let mut vectors = Vec::with_capacity(dim * dim);
        for &col in &order {
            values.push(d[col]);
            let start = vectors.len();
            vectors.extend((0..dim).map(|row| v[row * dim + col]));
            fix_sign(&mut vectors[start..]);
        }
        Ok(Self { dim, values, vectors })
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }
}

/// Flip `v` so that its largest-magnitude entry (first one on ties) is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

// Householder reduction to tridiagonal form (EISPACK tred2).
fn tred2(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let idx = |r: usize, c: usize| r * n + c;
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = sqrt(h);
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in j + 1..i {
                    g += v[idx(k, j)] * d[k];
                    e[k] += v[idx(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit QL on the tridiagonal matrix (EISPACK tql2).
fn tql2(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let idx = |r: usize, c: usize| r * n + c;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            loop {
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = hypot(p, 1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[idx(k, i + 1)];
                        v[idx(k, i + 1)] = s * v[idx(k, i)] + c * h;
                        v[idx(k, i)] = c * v[idx(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

/// Streaming mean and co-moment accumulator. Partial accumulators over
/// disjoint shards can be merged, so fitting can be split across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct CovAccumulator {
    dim: usize,
    count: usize,
    mean: Vec<f64>,
    // Upper triangle (row ≤ col) of the centered co-moment matrix.
    comoment: Vec<f64>,
    delta: Vec<f64>,
}

impl CovAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
            delta: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for ((d, m), &xi) in self.delta.iter_mut().zip(self.mean.iter_mut()).zip(x) {
            *d = xi - *m;
            *m += *d * inv;
        }
        let n = self.dim;
        for i in 0..n {
            let di = self.delta[i];
            if di == 0.0 {
                continue;
            }
            let row = &mut self.comoment[i * n..(i + 1) * n];
            for j in i..n {
                row[j] += di * (x[j] - self.mean[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &CovAccumulator) {
        assert_eq!(self.dim, other.dim, "merging accumulators of different dimension");
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let n_a = self.count as f64;
        let n_b = other.count as f64;
        let total = n_a + n_b;
        let n = self.dim;
        for i in 0..n {
            self.delta[i] = other.mean[i] - self.mean[i];
        }
        let w = n_a * n_b / total;
        for i in 0..n {
            for j in i..n {
                self.comoment[i * n + j] +=
                    other.comoment[i * n + j] + self.delta[i] * self.delta[j] * w;
            }
        }
        for i in 0..n {
            self.mean[i] += self.delta[i] * n_b / total;
        }
        self.count += other.count;
    }

    /// Population covariance (divides by the sample count) as a full
    /// symmetric matrix.
    pub fn covariance(&self) -> Vec<f64> {
        let n = self.dim;
        let mut cov = vec![0.0; n * n];
        if self.count == 0 {
            return cov;
        }
        let inv = 1.0 / self.count as f64;
        for i in 0..n {
            for j in i..n {
                let c = self.comoment[i * n + j] * inv;
                cov[i * n + j] = c;
                cov[j * n + i] = c;
            }
        }
        cov
    }
}

/// Principal component basis with mean, orthonormal components (rows) and
/// the full eigenvalue spectrum of the sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub components: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Fit from an accumulator, keeping `n_comp` leading components.
    pub fn from_accumulator(acc: &CovAccumulator, n_comp: usize) -> Result<Self> {
        let dim = acc.dim();
        ensure!(n_comp <= dim, "n_comp {n_comp} exceeds dimension {dim}");
        ensure!(acc.count() > 0, "no samples to fit a PCA");
        let eig = SymmetricEigen::new(&acc.covariance(), dim)?;
        Ok(Self {
            dim,
            mean: acc.mean().to_vec(),
            components: eig.vectors[..n_comp * dim].to_vec(),
            eigenvalues: eig.values.iter().map(|v| v.max(0.0)).collect(),
        })
    }

    pub fn n_components(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.components.len() / self.dim
        }
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.dim..(k + 1) * self.dim]
    }

    /// Project a sample onto the components after removing the mean.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (k, o) in out.iter_mut().enumerate().take(self.n_components()) {
            let comp = self.component(k);
            *o = x.iter().zip(&self.mean).zip(comp).map(|((xi, mi), ci)| (xi - mi) * ci).sum();
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_components()];
        self.project_into(x, &mut out);
        out
    }
}

/// Smallest number of leading eigenvalues whose sum reaches `fraction` of
/// the total (at least one when any energy exists).
pub fn components_for_energy(eigenvalues: &[f64], fraction: f64) -> usize {
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (k, v) in eigenvalues.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= fraction * total * (1.0 - 1e-12) {
            return k + 1;
        }
    }
    eigenvalues.len()
}
