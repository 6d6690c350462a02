//! Hop/region feature vectors.
//!
//! Four hop-1 face regions and three hop-2 stripes are cropped from every
//! kept channel, reduced by one PCA per region (shared across channels) and
//! concatenated in channel order. The eighth vector is the raw hop-3
//! response of every kept channel.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};
use crate::hoptree::{HopModel, HopOutputs};
use crate::linalg::{CovAccumulator, Pca};
use crate::saab::ResponseMap;

/// Number of base feature vectors (7 regions + hop 3).
pub const N_BASE: usize = 8;

/// Display names of the base feature vectors, in extraction order.
pub const BASE_NAMES: [&str; N_BASE] = [
    "hop1/left_eye",
    "hop1/right_eye",
    "hop1/nose",
    "hop1/mouth",
    "hop2/upper_stripe",
    "hop2/lower_stripe",
    "hop2/vertical_stripe",
    "hop3",
];

/// One feature vector per base classifier, in [`BASE_NAMES`] order.
pub type FeatureSet = [Vec<f64>; N_BASE];

/// Rectangular window on a hop's response grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSpec {
    pub name: String,
    /// 1 or 2.
    pub hop: u8,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl RegionSpec {
    /// Region from inclusive row and column bounds.
    pub fn inclusive(name: &str, hop: u8, rows: (usize, usize), cols: (usize, usize)) -> Self {
        Self {
            name: name.to_string(),
            hop,
            top: rows.0,
            left: cols.0,
            height: rows.1 + 1 - rows.0,
            width: cols.1 + 1 - cols.0,
        }
    }

    pub fn spatial_dim(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self, grid: usize) -> Result<()> {
        ensure!(self.hop == 1 || self.hop == 2, "region {} must sit on hop 1 or 2", self.name);
        ensure!(self.height > 0 && self.width > 0, "region {} is empty", self.name);
        ensure!(
            self.top + self.height <= grid && self.left + self.width <= grid,
            "region {} does not fit the {grid}×{grid} hop-{} grid",
            self.name,
            self.hop
        );
        Ok(())
    }

    /// Copy this window from channel `c` of `map` into `out`.
    pub fn crop_into(&self, map: &ResponseMap, c: usize, out: &mut [f64]) {
        let plane = map.channel(c);
        for r in 0..self.height {
            let src = (self.top + r) * map.width + self.left;
            out[r * self.width..(r + 1) * self.width].copy_from_slice(&plane[src..src + self.width]);
        }
    }
}

/// Default placements on the 28×28 hop-1 and 10×10 hop-2 grids.
pub fn default_regions() -> Vec<RegionSpec> {
    vec![
        RegionSpec::inclusive("left_eye", 1, (6, 15), (1, 12)),
        RegionSpec::inclusive("right_eye", 1, (6, 15), (16, 27)),
        RegionSpec::inclusive("nose", 1, (9, 20), (9, 18)),
        RegionSpec::inclusive("mouth", 1, (19, 26), (5, 22)),
        RegionSpec::inclusive("upper_stripe", 2, (2, 4), (0, 9)),
        RegionSpec::inclusive("lower_stripe", 2, (6, 9), (0, 9)),
        RegionSpec::inclusive("vertical_stripe", 2, (0, 9), (3, 6)),
    ]
}

/// Components per region used for LFW and CMU Multi-PIE respectively.
pub const N_COMP_LFW: usize = 15;
pub const N_COMP_CMU: usize = 20;

/// PCA fitted on one region's crops, pooled over images and channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPca {
    pub spec: RegionSpec,
    /// Channel count of the hop when fitted.
    pub channels: usize,
    pub pca: Pca,
}

impl RegionPca {
    pub fn n_comp(&self) -> usize {
        self.pca.n_components()
    }

    pub fn feature_len(&self) -> usize {
        self.n_comp() * self.channels
    }
}

/// Streaming crop statistics for one region.
#[derive(Debug, Clone)]
pub struct RegionAccumulator {
    spec: RegionSpec,
    channels: Option<usize>,
    acc: CovAccumulator,
    buf: Vec<f64>,
}

impl RegionAccumulator {
    pub fn new(spec: RegionSpec) -> Self {
        let dim = spec.spatial_dim();
        Self { spec, channels: None, acc: CovAccumulator::new(dim), buf: vec![0.0; dim] }
    }

    pub fn push(&mut self, outputs: &HopOutputs) -> Result<()> {
        let map = outputs.hop(self.spec.hop as usize);
        self.spec.validate(map.height)?;
        match self.channels {
            None => self.channels = Some(map.channels),
            Some(c) => ensure!(c == map.channels, "channel count changed between images"),
        }
        for c in 0..map.channels {
            self.spec.crop_into(map, c, &mut self.buf);
            self.acc.push(&self.buf);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &RegionAccumulator) -> Result<()> {
        ensure!(self.spec == other.spec, "merging accumulators of different regions");
        match (self.channels, other.channels) {
            (Some(a), Some(b)) => ensure!(a == b, "channel count changed between shards"),
            (None, b) => self.channels = b,
            _ => {}
        }
        self.acc.merge(&other.acc);
        Ok(())
    }

    pub fn finish(&self, n_comp: usize) -> Result<RegionPca> {
        let dim = self.spec.spatial_dim();
        ensure!(n_comp <= dim, "region {}: n_comp {n_comp} exceeds spatial dim {dim}", self.spec.name);
        ensure!(
            self.acc.count() > n_comp,
            "region {}: {} samples cannot support {n_comp} components",
            self.spec.name,
            self.acc.count()
        );
        Ok(RegionPca {
            spec: self.spec.clone(),
            channels: self.channels.unwrap_or(0),
            pca: Pca::from_accumulator(&self.acc, n_comp)?,
        })
    }
}

/// Fit one region PCA on the hop outputs of a set of images.
pub fn fit_region_pca<'a>(
    outputs: impl IntoIterator<Item = &'a HopOutputs>,
    spec: &RegionSpec,
    n_comp: usize,
) -> Result<RegionPca> {
    let mut acc = RegionAccumulator::new(spec.clone());
    for o in outputs {
        acc.push(o)?;
    }
    acc.finish(n_comp)
}

/// Project every channel's crop and concatenate; append the hop-3 vector.
pub fn extract_features(outputs: &HopOutputs, pcas: &[RegionPca]) -> Result<FeatureSet> {
    ensure!(pcas.len() == N_BASE - 1, "expected {} region PCAs, got {}", N_BASE - 1, pcas.len());
    let mut set: FeatureSet = Default::default();
    for (slot, rp) in set.iter_mut().zip(pcas) {
        let map = outputs.hop(rp.spec.hop as usize);
        ensure!(
            map.channels == rp.channels,
            "region {} was fitted on {} channels, outputs have {}",
            rp.spec.name,
            rp.channels,
            map.channels
        );
        rp.spec.validate(map.height)?;
        let k = rp.n_comp();
        let mut crop = vec![0.0; rp.spec.spatial_dim()];
        let mut values = vec![0.0; k * map.channels];
        for c in 0..map.channels {
            rp.spec.crop_into(map, c, &mut crop);
            rp.pca.project_into(&crop, &mut values[c * k..(c + 1) * k]);
        }
        *slot = values;
    }
    set[N_BASE - 1] = outputs.hop(3).values.clone();
    Ok(set)
}

/// Feature lengths implied by kept channel counts per hop.
pub fn feature_lengths(kept: [usize; 3], regions: &[RegionSpec], n_comp: usize) -> [usize; N_BASE] {
    let mut out = [0; N_BASE];
    for (o, r) in out.iter_mut().zip(regions) {
        *o = n_comp * kept[r.hop as usize - 1];
    }
    out[N_BASE - 1] = kept[2];
    out
}

/// Fit all region PCAs for a model on a set of images' outputs.
pub fn fit_regions<'a>(
    model: &HopModel,
    outputs: impl IntoIterator<Item = &'a HopOutputs>,
    regions: &[RegionSpec],
    n_comp: usize,
) -> Result<Vec<RegionPca>> {
    for r in regions {
        r.validate(model.geometry().responses[r.hop as usize - 1])?;
    }
    let mut accs: Vec<RegionAccumulator> = regions.iter().cloned().map(RegionAccumulator::new).collect();
    for o in outputs {
        for acc in &mut accs {
            acc.push(o)?;
        }
    }
    accs.iter().map(|a| a.finish(n_comp)).collect()
}
