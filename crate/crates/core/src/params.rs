//! Model-size accounting.
//!
//! Counted: Saab kernels of every kept channel (DC included), one bias per
//! Saab unit, region-PCA projection matrices, and the weights plus
//! intercept of each logistic regression the variant uses. PCA means and
//! the classifiers' standardization statistics are not counted; both fold
//! into the following linear map at export time.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::classify::{EnsembleModel, Variant};
use crate::features::{feature_lengths, RegionPca, RegionSpec, BASE_NAMES, N_BASE};
use crate::hoptree::{HopCounts, HopModel, HOPS};

/// Saab units and kept kernels at one hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopShape {
    pub units: usize,
    pub kernels: usize,
    pub patch_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionShape {
    pub name: String,
    pub spatial_dim: usize,
    pub n_comp: usize,
}

/// Everything the parameter count depends on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelShape {
    pub hops: Vec<HopShape>,
    /// Region of base `i`, for the bases that use one.
    pub regions: Vec<RegionShape>,
    /// Input length of every base classifier; empty for no ensemble.
    pub base_dims: Vec<usize>,
}

impl ModelShape {
    /// Shape implied by node counts `(intermediate, leaf, discard)` per hop.
    pub fn from_counts(counts: HopCounts, window: usize, regions: &[RegionSpec], n_comp: usize) -> Self {
        let patch_dim = window * window;
        let mut units = [1; HOPS];
        for h in 1..HOPS {
            units[h] = counts[h - 1][0];
        }
        let kept = counts.map(|c| c[0] + c[1]);
        let hops = (0..HOPS).map(|h| HopShape { units: units[h], kernels: kept[h], patch_dim }).collect();
        Self {
            hops,
            regions: regions
                .iter()
                .map(|r| RegionShape { name: r.name.clone(), spatial_dim: r.spatial_dim(), n_comp })
                .collect(),
            base_dims: feature_lengths(kept, regions, n_comp).to_vec(),
        }
    }

    /// Shape of fitted parts.
    pub fn from_model(tree: &HopModel, regions: &[RegionPca], ensemble: Option<&EnsembleModel>) -> Self {
        let hops = tree
            .all_units()
            .iter()
            .map(|units| HopShape {
                units: units.len(),
                kernels: units.iter().map(|u| u.n_channels()).sum(),
                patch_dim: tree.config().window * tree.config().window,
            })
            .collect();
        Self {
            hops,
            regions: regions
                .iter()
                .map(|r| RegionShape { name: r.spec.name.clone(), spatial_dim: r.spec.spatial_dim(), n_comp: r.n_comp() })
                .collect(),
            base_dims: ensemble.map_or_else(Vec::new, |e| e.base.iter().map(|m| m.n_features()).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Kernels,
    Biases,
    RegionPca,
    BaseClassifier,
    MetaClassifier,
}

impl Section {
    pub fn name(self) -> &'static str {
        match self {
            Section::Kernels => "saab kernels",
            Section::Biases => "saab biases",
            Section::RegionPca => "region pca",
            Section::BaseClassifier => "base classifier",
            Section::MetaClassifier => "meta classifier",
        }
    }
}

/// One term of the count with the arithmetic that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterItem {
    pub section: Section,
    pub name: String,
    pub formula: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterReport {
    pub items: Vec<ParameterItem>,
    pub total: usize,
}

impl ParameterReport {
    pub fn section_total(&self, section: Section) -> usize {
        self.items.iter().filter(|i| i.section == section).map(|i| i.count).sum()
    }
}

fn base_name(b: usize) -> &'static str {
    BASE_NAMES.get(b).copied().unwrap_or("base")
}

/// Itemize the parameters of `shape`. With `variant = None` only the
/// transform (kernels, biases, every region PCA) is counted.
pub fn itemize(shape: &ModelShape, variant: Option<Variant>) -> ParameterReport {
    let mut items = Vec::new();
    for (h, hop) in shape.hops.iter().enumerate() {
        items.push(ParameterItem {
            section: Section::Kernels,
            name: format!("hop{}", h + 1),
            formula: format!("{} kernels × {}", hop.kernels, hop.patch_dim),
            count: hop.kernels * hop.patch_dim,
        });
    }
    for (h, hop) in shape.hops.iter().enumerate() {
        items.push(ParameterItem {
            section: Section::Biases,
            name: format!("hop{}", h + 1),
            formula: format!("{} units × 1", hop.units),
            count: hop.units,
        });
    }
    let all: Vec<usize> = (0..N_BASE).collect();
    let bases: &[usize] = match variant {
        Some(v) => v.bases(),
        None => &all,
    };
    for &b in bases {
        if let Some(r) = shape.regions.get(b) {
            items.push(ParameterItem {
                section: Section::RegionPca,
                name: String::from(base_name(b)),
                formula: format!("{} components × {}", r.n_comp, r.spatial_dim),
                count: r.n_comp * r.spatial_dim,
            });
        }
    }
    if let Some(v) = variant.filter(|_| !shape.base_dims.is_empty()) {
        for &b in v.bases() {
            let d = shape.base_dims[b];
            items.push(ParameterItem {
                section: Section::BaseClassifier,
                name: String::from(base_name(b)),
                formula: format!("{d} weights + 1"),
                count: d + 1,
            });
        }
        items.push(ParameterItem {
            section: Section::MetaClassifier,
            name: String::from("meta"),
            formula: format!("{} weights + 1", v.meta_width()),
            count: v.meta_width() + 1,
        });
    }
    let total = items.iter().map(|i| i.count).sum();
    ParameterReport { items, total }
}

pub fn count_parameters(shape: &ModelShape, variant: Variant) -> usize {
    itemize(shape, Some(variant)).total
}
