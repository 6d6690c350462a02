//! Flat TOML run configuration.
//!
//! Every key is optional. `preset = "lfw"` (the default) or `"cmu"` picks
//! the base values; any other key in the file overrides its preset value.

use std::path::{Path, PathBuf};

use facehop_core::classify::{EnsembleOptions, LrOptions, Variant};
use facehop_core::features::{default_regions, RegionSpec};
use facehop_core::hoptree::HopConfig;
use facehop_core::preprocess::CropGeometry;
use facehop_core::saab::Selection;
use facehop_core::FaceHopConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariantName {
    #[serde(rename = "I")]
    One,
    #[serde(rename = "II")]
    Two,
}

impl VariantName {
    pub fn variant(self) -> Variant {
        match self {
            VariantName::One => Variant::FaceHopI,
            VariantName::Two => Variant::FaceHopII,
        }
    }
}

impl std::str::FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" | "facehop1" | "facehop-i" => Ok(VariantName::One),
            "ii" | "2" | "facehop2" | "facehop-ii" => Ok(VariantName::Two),
            _ => Err(Error::Config(format!("unknown variant {s:?}; use I or II"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Fixed,
    Threshold,
}

/// Inclusive `[row_start, row_end, col_start, col_end]` on a hop grid.
pub type RegionBounds = [usize; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub seed: u64,
    pub split: f64,
    pub repetitions: usize,
    pub variant: VariantName,
    /// Minority/majority ratio for training-split augmentation; 0 disables.
    pub augment_ratio: f64,

    pub crop_scale: f64,
    pub crop_eye_height: f64,

    pub selection: SelectionMode,
    pub hop1_keep: usize,
    pub hop1_discard: usize,
    pub hop2_keep: usize,
    pub hop2_discard: usize,
    pub hop3_keep: usize,
    pub hop3_discard: usize,
    pub hop1_threshold: f64,
    pub hop2_threshold: f64,
    pub hop3_threshold: f64,
    pub max_patches: usize,

    pub n_comp: usize,
    pub region_left_eye: RegionBounds,
    pub region_right_eye: RegionBounds,
    pub region_nose: RegionBounds,
    pub region_mouth: RegionBounds,
    pub region_upper_stripe: RegionBounds,
    pub region_lower_stripe: RegionBounds,
    pub region_vertical_stripe: RegionBounds,

    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub folds: usize,
}

fn bounds(r: &RegionSpec) -> RegionBounds {
    [r.top, r.top + r.height - 1, r.left, r.left + r.width - 1]
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::lfw()
    }
}

impl RunConfig {
    pub fn lfw() -> Self {
        let regions = default_regions();
        let crop = CropGeometry::default();
        let lr = LrOptions::default();
        Self {
            preset: "lfw".into(),
            manifest: None,
            seed: 0,
            split: 0.8,
            repetitions: 4,
            variant: VariantName::Two,
            augment_ratio: facehop_core::augment::DEFAULT_RATIO,
            crop_scale: crop.side_factor,
            crop_eye_height: crop.eye_height,
            selection: SelectionMode::Fixed,
            hop1_keep: 18,
            hop1_discard: 7,
            hop2_keep: 122,
            hop2_discard: 328,
            hop3_keep: 233,
            hop3_discard: 2817,
            hop1_threshold: 1e-3,
            hop2_threshold: 1e-3,
            hop3_threshold: 1e-4,
            max_patches: HopConfig::DEFAULT_MAX_PATCHES,
            n_comp: facehop_core::features::N_COMP_LFW,
            region_left_eye: bounds(&regions[0]),
            region_right_eye: bounds(&regions[1]),
            region_nose: bounds(&regions[2]),
            region_mouth: bounds(&regions[3]),
            region_upper_stripe: bounds(&regions[4]),
            region_lower_stripe: bounds(&regions[5]),
            region_vertical_stripe: bounds(&regions[6]),
            lambda: lr.lambda,
            tol: lr.tol,
            max_iter: lr.max_iter,
            folds: EnsembleOptions::default().folds,
        }
    }

    pub fn cmu() -> Self {
        Self {
            preset: "cmu".into(),
            hop2_keep: 117,
            hop2_discard: 333,
            hop3_keep: 186,
            hop3_discard: 2739,
            n_comp: facehop_core::features::N_COMP_CMU,
            ..Self::lfw()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "lfw" => Ok(Self::lfw()),
            "cmu" => Ok(Self::cmu()),
            _ => Err(Error::Config(format!("unknown preset {name:?}; use lfw or cmu"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match table.get("preset") {
            None => "lfw",
            Some(toml::Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::Config("preset must be a string".into())),
        };
        let base = Self::preset(preset)?;
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merged.extend(table);
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; a relative `manifest` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(m), Some(dir)) = (&cfg.manifest, path.parent()) {
            if m.is_relative() {
                cfg.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.split > 0.0 && self.split < 1.0) {
            return fail(format!("split must lie in (0, 1), got {}", self.split));
        }
        if self.repetitions == 0 {
            return fail("repetitions must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.augment_ratio) {
            return fail(format!("augment_ratio must lie in [0, 1], got {}", self.augment_ratio));
        }
        if !(self.crop_scale > 0.0 && self.crop_eye_height > 0.0 && self.crop_eye_height < 1.0) {
            return fail("crop_scale must be positive and crop_eye_height in (0, 1)".into());
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return fail("tol must be positive and max_iter at least 1".into());
        }
        let dim = HopConfig::lfw().window.pow(2);
        if self.selection == SelectionMode::Fixed && self.hop1_keep + self.hop1_discard != dim {
            return fail(format!("hop1_keep + hop1_discard must equal {dim}"));
        }
        for r in self.regions() {
            let [r0, r1, c0, c1] = self.region_bounds(&r.name);
            if r1 < r0 || c1 < c0 {
                return fail(format!("region_{} bounds are reversed", r.name));
            }
        }
        self.face_hop_config()?.validate()?;
        Ok(())
    }

    fn region_bounds(&self, name: &str) -> RegionBounds {
        match name {
            "left_eye" => self.region_left_eye,
            "right_eye" => self.region_right_eye,
            "nose" => self.region_nose,
            "mouth" => self.region_mouth,
            "upper_stripe" => self.region_upper_stripe,
            "lower_stripe" => self.region_lower_stripe,
            _ => self.region_vertical_stripe,
        }
    }

    pub fn regions(&self) -> Vec<RegionSpec> {
        default_regions()
            .into_iter()
            .map(|r| {
                let [r0, r1, c0, c1] = self.region_bounds(&r.name);
                RegionSpec::inclusive(&r.name, r.hop, (r0, r1.max(r0)), (c0, c1.max(c0)))
            })
            .collect()
    }

    pub fn hop_config(&self) -> HopConfig {
        let selection = match self.selection {
            SelectionMode::Fixed => [
                Selection::FixedCounts { keep: self.hop1_keep, discard: self.hop1_discard },
                Selection::FixedCounts { keep: self.hop2_keep, discard: self.hop2_discard },
                Selection::FixedCounts { keep: self.hop3_keep, discard: self.hop3_discard },
            ],
            SelectionMode::Threshold => [
                Selection::Threshold(self.hop1_threshold),
                Selection::Threshold(self.hop2_threshold),
                Selection::Threshold(self.hop3_threshold),
            ],
        };
        HopConfig { selection, max_patches: self.max_patches, ..HopConfig::lfw() }
    }

    pub fn crop_geometry(&self) -> CropGeometry {
        CropGeometry { side_factor: self.crop_scale, eye_height: self.crop_eye_height }
    }

    pub fn face_hop_config(&self) -> Result<FaceHopConfig> {
        let cfg = FaceHopConfig {
            hop: self.hop_config(),
            regions: self.regions(),
            n_comp: self.n_comp,
            variant: self.variant.variant(),
            ensemble: EnsembleOptions {
                lr: LrOptions { lambda: self.lambda, tol: self.tol, max_iter: self.max_iter, ..LrOptions::default() },
                folds: self.folds,
                seed: self.seed,
            },
        };
        Ok(cfg)
    }
}
