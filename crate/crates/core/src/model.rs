//! The assembled classifier: hop tree, region PCAs and ensemble.

use alloc::vec::Vec;

use crate::classify::{train_ensemble, EnsembleModel, EnsembleOptions, Variant};
use crate::error::{ensure, Result};
use crate::features::{default_regions, extract_features, fit_regions, FeatureSet, RegionPca, RegionSpec, N_BASE};
use crate::features::{N_COMP_CMU, N_COMP_LFW};
use crate::hoptree::{fit_tree, HopConfig, HopModel, HopOutputs};
use crate::params::{itemize, ModelShape, ParameterReport};
use crate::preprocess::AlignedImage;

/// Hyperparameters of everything after preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceHopConfig {
    pub hop: HopConfig,
    pub regions: Vec<RegionSpec>,
    pub n_comp: usize,
    pub variant: Variant,
    pub ensemble: EnsembleOptions,
}

impl Default for FaceHopConfig {
    fn default() -> Self {
        Self::lfw()
    }
}

impl FaceHopConfig {
    pub fn lfw() -> Self {
        Self {
            hop: HopConfig::lfw(),
            regions: default_regions(),
            n_comp: N_COMP_LFW,
            variant: Variant::FaceHopII,
            ensemble: EnsembleOptions::default(),
        }
    }

    pub fn cmu() -> Self {
        Self { hop: HopConfig::cmu(), n_comp: N_COMP_CMU, ..Self::lfw() }
    }

    pub fn validate(&self) -> Result<()> {
        let geometry = self.hop.geometry()?;
        ensure!(
            self.regions.len() == N_BASE - 1,
            "expected {} regions, got {}",
            N_BASE - 1,
            self.regions.len()
        );
        for r in &self.regions {
            r.validate(geometry.responses[r.hop as usize - 1])?;
            ensure!(self.n_comp <= r.spatial_dim(), "n_comp {} exceeds region {}", self.n_comp, r.name);
        }
        ensure!(self.n_comp >= 1, "n_comp must be positive");
        ensure!(self.ensemble.folds >= 2, "at least 2 folds are needed for stacking");
        ensure!(self.ensemble.lr.lambda >= 0.0, "lambda must be non-negative");
        Ok(())
    }
}

/// Classifier output for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub probability: f64,
    /// Probability from each base classifier.
    pub base: [f64; N_BASE],
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceHop {
    pub config: FaceHopConfig,
    pub tree: HopModel,
    pub regions: Vec<RegionPca>,
    pub ensemble: EnsembleModel,
}

impl FaceHop {
    /// Fit every stage on aligned training images.
    pub fn fit(images: &[AlignedImage], labels: &[u8], config: &FaceHopConfig) -> Result<Self> {
        config.validate()?;
        ensure!(images.len() == labels.len(), "{} images but {} labels", images.len(), labels.len());
        let tree = fit_tree(images, &config.hop)?;
        let outputs: Vec<HopOutputs> = images.iter().map(|i| tree.transform(i)).collect::<Result<_>>()?;
        let regions = fit_regions(&tree, &outputs, &config.regions, config.n_comp)?;
        let features: Vec<FeatureSet> =
            outputs.iter().map(|o| extract_features(o, &regions)).collect::<Result<_>>()?;
        let ensemble = train_ensemble(&features, labels, config.variant, &config.ensemble)?;
        Self::from_parts(config.clone(), tree, regions, ensemble)
    }

    /// Assemble fitted stages, checking that they fit together.
    pub fn from_parts(
        config: FaceHopConfig,
        tree: HopModel,
        regions: Vec<RegionPca>,
        ensemble: EnsembleModel,
    ) -> Result<Self> {
        ensure!(regions.len() == N_BASE - 1, "expected {} region PCAs, got {}", N_BASE - 1, regions.len());
        for r in &regions {
            let h = r.spec.hop as usize;
            ensure!(
                r.channels == tree.output_channels(h),
                "region {} expects {} hop-{h} channels, tree has {}",
                r.spec.name,
                r.channels,
                tree.output_channels(h)
            );
        }
        let mut dims: Vec<usize> = regions.iter().map(|r| r.feature_len()).collect();
        dims.push(tree.output_channels(3));
        for (b, (m, d)) in ensemble.base.iter().zip(&dims).enumerate() {
            ensure!(m.n_features() == *d, "base classifier {b} takes {} inputs, features have {d}", m.n_features());
        }
        Ok(Self { config, tree, regions, ensemble })
    }

    pub fn outputs(&self, img: &AlignedImage) -> Result<HopOutputs> {
        self.tree.transform(img)
    }

    pub fn features(&self, img: &AlignedImage) -> Result<FeatureSet> {
        extract_features(&self.outputs(img)?, &self.regions)
    }

    pub fn predict_features(&self, features: &FeatureSet) -> Result<Prediction> {
        let p = self.ensemble.predict(features)?;
        Ok(Prediction { label: p.label(), probability: p.probability, base: p.base })
    }

    pub fn predict(&self, img: &AlignedImage) -> Result<Prediction> {
        self.predict_features(&self.features(img)?)
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape::from_model(&self.tree, &self.regions, Some(&self.ensemble))
    }

    pub fn parameter_report(&self, variant: Variant) -> ParameterReport {
        itemize(&self.shape(), Some(variant))
    }
}
