//! Saab transform for one hop: neighborhood extraction, DC/AC split, PCA on
//! the AC subspace, a shared positive bias, channel partitioning and 2×2
//! max pooling.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::linalg::{fix_sign, CovAccumulator, SymmetricEigen};
use crate::math::{norm, sqrt};

/// Window side used by every hop.
pub const WINDOW: usize = 5;

/// Relative eigenvalue floor below which an AC direction gets no kernel.
pub const RANK_TOL: f64 = 1e-12;

/// Bias = `(1 + BIAS_MARGIN) ×` the largest training-patch norm.
pub const BIAS_MARGIN: f64 = 1e-6;

/// `n_samples × patch_dim` matrix of flattened neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    n_samples: usize,
    patch_dim: usize,
    values: Vec<f64>,
}

impl PatchMatrix {
    pub fn new(n_samples: usize, patch_dim: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(patch_dim > 0, "patch dimension must be positive");
        ensure!(
            values.len() == n_samples * patch_dim,
            "patch matrix has {} values, expected {n_samples}×{patch_dim}",
            values.len()
        );
        ensure!(values.iter().all(|v| v.is_finite()), "patch values must be finite");
        Ok(Self { n_samples, patch_dim, values })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.patch_dim..(i + 1) * self.patch_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.patch_dim)
    }
}

/// Visit every `window × window` neighborhood of a `side × side` map
/// (stride 1, valid padding) in row-major order of the window origin.
pub(crate) fn for_each_patch(
    map: &[f64],
    side: usize,
    window: usize,
    buf: &mut [f64],
    mut f: impl FnMut(&[f64]),
) {
    debug_assert_eq!(buf.len(), window * window);
    let out = side + 1 - window;
    for r in 0..out {
        for c in 0..out {
            for wr in 0..window {
                let src = (r + wr) * side + c;
                buf[wr * window..(wr + 1) * window].copy_from_slice(&map[src..src + window]);
            }
            f(buf);
        }
    }
}

/// All `(side − window + 1)²` neighborhoods of a single-channel square map.
pub fn build_neighborhoods(map: &[f64], side: usize, window: usize) -> Result<PatchMatrix> {
    ensure!(window > 0, "window must be positive");
    ensure!(map.len() == side * side, "map has {} values, expected {side}×{side}", map.len());
    ensure!(side >= window, "map side {side} is smaller than the {window}×{window} window");
    let out = side + 1 - window;
    let dim = window * window;
    let mut values = Vec::with_capacity(out * out * dim);
    let mut buf = vec![0.0; dim];
    for_each_patch(map, side, window, &mut buf, |p| values.extend_from_slice(p));
    PatchMatrix::new(out * out, dim, values)
}

/// Role of a channel in the energy tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Kept and forwarded to the next hop.
    Intermediate,
    /// Kept as an output, not forwarded.
    Leaf,
    Discard,
}

impl NodeKind {
    pub fn is_kept(self) -> bool {
        self != NodeKind::Discard
    }
}

/// Fitted transform for one hop (or one parent channel at deeper hops).
///
/// Channel 0 is DC; channels `1..` are AC in non-increasing eigenvalue
/// order. `energies` covers every channel of the window, including AC
/// directions that received no kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SaabUnit {
    pub(crate) window: usize,
    pub(crate) dc_kernel: Vec<f64>,
    /// `n_kernels × patch_dim`, row-major.
    pub(crate) ac_kernels: Vec<f64>,
    pub(crate) bias: f64,
    pub(crate) energies: Vec<f64>,
    pub(crate) partition: Vec<NodeKind>,
}

impl SaabUnit {
    /// Reassemble a unit from stored parts (used by model loading).
    pub fn from_parts(
        window: usize,
        ac_kernels: Vec<f64>,
        bias: f64,
        energies: Vec<f64>,
        partition: Vec<NodeKind>,
    ) -> Result<Self> {
        let dim = window * window;
        ensure!(dim > 0, "window must be positive");
        ensure!(ac_kernels.len().is_multiple_of(dim), "kernel data is not a multiple of {dim}");
        ensure!(energies.len() == dim, "expected {dim} channel energies, got {}", energies.len());
        ensure!(partition.len() == dim, "expected {dim} channel kinds, got {}", partition.len());
        ensure!(bias.is_finite() && bias >= 0.0, "bias must be finite and non-negative");
        let n = ac_kernels.len() / dim;
        ensure!(
            partition[n + 1..].iter().all(|k| *k == NodeKind::Discard),
            "channels without kernels must be discarded"
        );
        Ok(Self { window, dc_kernel: dc_kernel(dim), ac_kernels, bias, energies, partition })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn patch_dim(&self) -> usize {
        self.window * self.window
    }

    pub fn dc_kernel(&self) -> &[f64] {
        &self.dc_kernel
    }

    pub fn n_ac_kernels(&self) -> usize {
        self.ac_kernels.len() / self.patch_dim()
    }

    pub fn ac_kernel(&self, k: usize) -> &[f64] {
        let d = self.patch_dim();
        &self.ac_kernels[k * d..(k + 1) * d]
    }

    pub fn ac_kernels(&self) -> &[f64] {
        &self.ac_kernels
    }

    /// Output channels: DC plus every stored AC kernel.
    pub fn n_channels(&self) -> usize {
        1 + self.n_ac_kernels()
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_bias(&mut self, bias: f64) {
        self.bias = bias;
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn total_energy(&self) -> f64 {
        self.energies.iter().sum()
    }

    pub fn partition(&self) -> &[NodeKind] {
        &self.partition
    }

    /// Kinds of the output channels, in output order.
    pub fn output_kinds(&self) -> &[NodeKind] {
        &self.partition[..self.n_channels()]
    }

    /// Full kernel matrix (DC row first, then AC rows).
    pub fn kernel_matrix(&self) -> Vec<f64> {
        let mut k = self.dc_kernel.clone();
        k.extend_from_slice(&self.ac_kernels);
        k
    }

    /// Record the channel partition and drop kernels of discarded channels.
    /// Kept channels must form a prefix (DC, then the leading AC channels).
    pub fn apply_partition(&mut self, kinds: &[NodeKind]) -> Result<()> {
        let dim = self.patch_dim();
        ensure!(kinds.len() == dim, "expected {dim} channel kinds, got {}", kinds.len());
        ensure!(kinds[0].is_kept(), "the DC channel cannot be discarded");
        let kept = kinds.iter().take_while(|k| k.is_kept()).count();
        ensure!(
            kinds[kept..].iter().all(|k| !k.is_kept()),
            "kept channels of a unit must be its leading channels"
        );
        ensure!(
            kept <= self.n_channels(),
            "cannot keep {kept} channels, only {} have kernels",
            self.n_channels()
        );
        self.ac_kernels.truncate((kept - 1) * dim);
        self.partition = kinds.to_vec();
        Ok(())
    }

    /// Responses of one patch for every output channel.
    pub fn respond_into(&self, patch: &[f64], out: &mut [f64]) {
        let d = self.patch_dim();
        debug_assert_eq!(patch.len(), d);
        debug_assert_eq!(out.len(), self.n_channels());
        let dc_coef: f64 = patch.iter().zip(&self.dc_kernel).map(|(x, k)| x * k).sum();
        out[0] = dc_coef + self.bias;
        // x − (dc·x)·dc; the DC kernel is constant so this removes the patch mean.
        let dc_part = dc_coef * self.dc_kernel[0];
        for (o, kernel) in out[1..].iter_mut().zip(self.ac_kernels.chunks_exact(d)) {
            let ac: f64 = patch.iter().zip(kernel).map(|(x, k)| (x - dc_part) * k).sum();
            *o = ac + self.bias;
        }
    }

    /// Single-channel response (`channel` 0 is DC).
    pub fn respond_channel(&self, patch: &[f64], channel: usize) -> f64 {
        let dc_coef: f64 = patch.iter().zip(&self.dc_kernel).map(|(x, k)| x * k).sum();
        if channel == 0 {
            return dc_coef + self.bias;
        }
        let dc_part = dc_coef * self.dc_kernel[0];
        let kernel = self.ac_kernel(channel - 1);
        patch.iter().zip(kernel).map(|(x, k)| (x - dc_part) * k).sum::<f64>() + self.bias
    }
}

/// The constant unit vector spanning the DC subspace.
pub fn dc_kernel(dim: usize) -> Vec<f64> {
    vec![1.0 / sqrt(dim as f64); dim]
}

// Orthonormal basis of the complement of the constant vector (Helmert rows).
fn ac_basis(dim: usize) -> Vec<f64> {
    let mut basis = vec![0.0; (dim - 1) * dim];
    for k in 1..dim {
        let s = 1.0 / sqrt((k * (k + 1)) as f64);
        let row = &mut basis[(k - 1) * dim..k * dim];
        row[..k].iter_mut().for_each(|v| *v = s);
        row[k] = -(k as f64) * s;
    }
    basis
}

/// Streaming statistics for fitting one unit; shards merge exactly.
#[derive(Debug, Clone)]
pub struct SaabAccumulator {
    window: usize,
    ac: CovAccumulator,
    dc_count: usize,
    dc_mean: f64,
    dc_m2: f64,
    max_norm: f64,
    scratch: Vec<f64>,
}

impl SaabAccumulator {
    pub fn new(window: usize) -> Self {
        let dim = window * window;
        Self {
            window,
            ac: CovAccumulator::new(dim),
            dc_count: 0,
            dc_mean: 0.0,
            dc_m2: 0.0,
            max_norm: 0.0,
            scratch: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> usize {
        self.dc_count
    }

    /// Track a patch for the bias only (used when fitting is subsampled).
    pub fn observe_norm(&mut self, patch: &[f64]) {
        self.max_norm = self.max_norm.max(norm(patch));
    }

    pub fn push(&mut self, patch: &[f64]) {
        let dim = self.scratch.len();
        debug_assert_eq!(patch.len(), dim);
        self.observe_norm(patch);
        let mean = patch.iter().sum::<f64>() / dim as f64;
        for (s, x) in self.scratch.iter_mut().zip(patch) {
            *s = x - mean;
        }
        self.ac.push(&self.scratch);
        let dc = mean * sqrt(dim as f64);
        self.dc_count += 1;
        let delta = dc - self.dc_mean;
        self.dc_mean += delta / self.dc_count as f64;
        self.dc_m2 += delta * (dc - self.dc_mean);
    }

    pub fn merge(&mut self, other: &SaabAccumulator) {
        assert_eq!(self.window, other.window, "merging accumulators of different windows");
        self.ac.merge(&other.ac);
        if other.dc_count > 0 {
            let n_a = self.dc_count as f64;
            let n_b = other.dc_count as f64;
            let total = n_a + n_b;
            let delta = other.dc_mean - self.dc_mean;
            self.dc_m2 += other.dc_m2 + delta * delta * n_a * n_b / total;
            self.dc_mean += delta * n_b / total;
            self.dc_count += other.dc_count;
        }
        self.max_norm = self.max_norm.max(other.max_norm);
    }

    /// Fit the unit, keeping at most `max_kept` AC kernels.
    pub fn finish(&self, max_kept: usize) -> Result<SaabUnit> {
        let dim = self.window * self.window;
        ensure!(
            self.dc_count >= dim,
            "need at least {dim} patches to fit a {0}×{0} Saab unit, got {1}",
            self.window,
            self.dc_count
        );
        let cov = self.ac.covariance();
        let basis = ac_basis(dim);
        let m = dim - 1;
        // Covariance restricted to the AC subspace: B C Bᵀ.
        let mut bc = vec![0.0; m * dim];
        for i in 0..m {
            let b = &basis[i * dim..(i + 1) * dim];
            for j in 0..dim {
                bc[i * dim + j] = (0..dim).map(|k| b[k] * cov[k * dim + j]).sum();
            }
        }
        let mut reduced = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                let b = &basis[j * dim..(j + 1) * dim];
                let v: f64 = bc[i * dim..(i + 1) * dim].iter().zip(b).map(|(x, y)| x * y).sum();
                reduced[i * m + j] = v;
                reduced[j * m + i] = v;
            }
        }
        let eig = SymmetricEigen::new(&reduced, m)?;

        let largest = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        let valid = eig.values.iter().take_while(|&&v| largest > 0.0 && v > RANK_TOL * largest).count();
        let n_kernels = valid.min(max_kept);

        let mut ac_kernels = Vec::with_capacity(n_kernels * dim);
        for k in 0..n_kernels {
            let u = eig.vector(k);
            let start = ac_kernels.len();
            ac_kernels.extend((0..dim).map(|j| (0..m).map(|i| u[i] * basis[i * dim + j]).sum::<f64>()));
            fix_sign(&mut ac_kernels[start..]);
        }

        let dc_var = if self.dc_count > 0 { self.dc_m2 / self.dc_count as f64 } else { 0.0 };
        let mut energies = Vec::with_capacity(dim);
        energies.push(dc_var.max(0.0));
        energies.extend(eig.values.iter().map(|v| v.max(0.0)));

        let mut partition = vec![NodeKind::Intermediate; 1 + n_kernels];
        partition.resize(dim, NodeKind::Discard);

        Ok(SaabUnit {
            window: self.window,
            dc_kernel: dc_kernel(dim),
            ac_kernels,
            bias: (1.0 + BIAS_MARGIN) * self.max_norm,
            energies,
            partition,
        })
    }
}

/// Fit a Saab unit on explicit patches. The patch dimension must be a
/// square window size.
pub fn fit_saab(patches: &PatchMatrix, max_kept: usize) -> Result<SaabUnit> {
    let dim = patches.patch_dim();
    let window = crate::math::round(sqrt(dim as f64)) as usize;
    ensure!(window * window == dim, "patch dimension {dim} is not a square window");
    ensure!(
        patches.n_samples() >= dim,
        "need n_samples ≥ patch_dim ({} < {dim})",
        patches.n_samples()
    );
    let mut acc = SaabAccumulator::new(window);
    patches.rows().for_each(|r| acc.push(r));
    acc.finish(max_kept)
}

/// Height × width × channels responses, stored channel-major
/// (`values[c][row][col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl ResponseMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, values: vec![0.0; height * width * channels] }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.values[(c * self.height + row) * self.width + col]
    }
}

/// Apply a unit to patches laid out on a `height × width` grid.
pub fn apply_saab(
    unit: &SaabUnit,
    patches: &PatchMatrix,
    height: usize,
    width: usize,
) -> Result<ResponseMap> {
    ensure!(
        patches.patch_dim() == unit.patch_dim(),
        "patch dimension {} does not match unit dimension {}",
        patches.patch_dim(),
        unit.patch_dim()
    );
    ensure!(
        patches.n_samples() == height * width,
        "{} patches cannot fill a {height}×{width} grid",
        patches.n_samples()
    );
    let channels = unit.n_channels();
    let mut map = ResponseMap::zeros(height, width, channels);
    let plane = height * width;
    let mut out = vec![0.0; channels];
    for (i, p) in patches.rows().enumerate() {
        unit.respond_into(p, &mut out);
        for (c, v) in out.iter().enumerate() {
            map.values[c * plane + i] = *v;
        }
    }
    Ok(map)
}

/// 2×2 → 1×1 max pooling over disjoint blocks.
pub fn max_pool(map: &ResponseMap) -> Result<ResponseMap> {
    ensure!(
        map.height.is_multiple_of(2) && map.width.is_multiple_of(2),
        "max pooling needs even dimensions, got {}×{}",
        map.height,
        map.width
    );
    let (h, w) = (map.height / 2, map.width / 2);
    let mut out = ResponseMap::zeros(h, w, map.channels);
    for c in 0..map.channels {
        pool_plane(map.channel(c), map.width, out.channel_mut(c), w);
    }
    Ok(out)
}

pub(crate) fn pool_plane(src: &[f64], src_w: usize, dst: &mut [f64], dst_w: usize) {
    for (i, d) in dst.iter_mut().enumerate() {
        let (r, c) = (2 * (i / dst_w), 2 * (i % dst_w));
        let a = src[r * src_w + c].max(src[r * src_w + c + 1]);
        let b = src[(r + 1) * src_w + c].max(src[(r + 1) * src_w + c + 1]);
        *d = a.max(b);
    }
}

/// One channel's energy as seen by the partitioner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelEnergy {
    /// Root-normalized energy.
    pub energy: f64,
    pub is_dc: bool,
    /// Whether a kernel exists (false for rank-deficient directions).
    pub available: bool,
}

impl ChannelEnergy {
    pub fn ac(energy: f64) -> Self {
        Self { energy, is_dc: false, available: true }
    }

    pub fn dc(energy: f64) -> Self {
        Self { energy, is_dc: true, available: true }
    }
}

/// How a hop's channels are split into kept and discarded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Keep channels with normalized energy ≥ the threshold.
    Threshold(f64),
    /// Keep the `keep` highest-energy channels and discard the rest;
    /// `keep + discard` must equal the hop's channel count.
    FixedCounts { keep: usize, discard: usize },
}

/// Two-group partition of a hop's channels. Kept channels become
/// intermediate, or leaf when `final_hop`. DC channels are always kept and
/// channels without kernels are always discarded.
pub fn partition_channels(
    channels: &[ChannelEnergy],
    mode: Selection,
    final_hop: bool,
) -> Result<Vec<NodeKind>> {
    ensure!(
        channels.iter().all(|c| c.energy >= 0.0 && c.energy.is_finite()),
        "channel energies must be finite and non-negative"
    );
    let kept_kind = if final_hop { NodeKind::Leaf } else { NodeKind::Intermediate };
    let mut kinds = vec![NodeKind::Discard; channels.len()];
    match mode {
        Selection::Threshold(t) => {
            ensure!(t.is_finite() && t >= 0.0, "energy threshold must be non-negative");
            for (k, c) in kinds.iter_mut().zip(channels) {
                if c.available && (c.is_dc || c.energy >= t) {
                    *k = kept_kind;
                }
            }
        }
        Selection::FixedCounts { keep, discard } => {
            ensure!(
                keep + discard == channels.len(),
                "fixed counts {keep} + {discard} do not match {} channels",
                channels.len()
            );
            let n_dc = channels.iter().filter(|c| c.is_dc && c.available).count();
            let n_avail = channels.iter().filter(|c| c.available).count();
            ensure!(keep >= n_dc, "keeping {keep} channels would drop some of the {n_dc} DC channels");
            ensure!(keep <= n_avail, "cannot keep {keep} channels, only {n_avail} have kernels");
            let mut order: Vec<usize> = (0..channels.len()).filter(|&i| channels[i].available).collect();
            // DC first, then energy descending; stable sort keeps index order on ties.
            order.sort_by(|&a, &b| {
                let (ca, cb) = (&channels[a], &channels[b]);
                cb.is_dc.cmp(&ca.is_dc).then(cb.energy.total_cmp(&ca.energy))
            });
            for &i in &order[..keep] {
                kinds[i] = kept_kind;
            }
        }
    }
    Ok(kinds)
}
