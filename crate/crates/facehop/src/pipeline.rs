//! Data loading, splitting and the parallel training/evaluation protocol.
//!
//! Parallel stages always combine results in a fixed order, so outputs do
//! not depend on the number of threads.

use facehop_core::augment::balance;
use facehop_core::classify::{
    effective_folds, evaluate, stratified_folds, train_base, train_meta, Metrics,
};
use facehop_core::features::{extract_features, FeatureSet, RegionAccumulator, N_BASE};
use facehop_core::hoptree::fit_tree;
use facehop_core::preprocess::{preprocess, AlignedImage, CropGeometry, SIDE};
use facehop_core::{FaceHop, FaceHopConfig, Prediction};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image_io::read_gray;
use crate::manifest::{Manifest, Record};

/// Images per work item when accumulating statistics in parallel.
const CHUNK: usize = 32;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<AlignedImage>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Read and preprocess one manifest entry. Entries without landmarks must
/// already be aligned 32×32 images and are used unchanged.
pub fn prepare(record: &Record, source: &std::path::Path, geom: &CropGeometry) -> Result<AlignedImage> {
    let raw = read_gray(&record.path)?;
    let at_line = |e: facehop_core::Error| {
        Error::manifest(source, record.line, format!("{}: {e}", record.path.display()))
    };
    match &record.landmarks {
        Some(lm) => preprocess(&raw, lm, geom).map_err(at_line),
        None if raw.width() == SIDE && raw.height() == SIDE => AlignedImage::new(raw.into_data()).map_err(at_line),
        None => Err(Error::manifest(
            source,
            record.line,
            format!(
                "{}: landmarks are required for a {}×{} image (only aligned {SIDE}×{SIDE} images may omit them)",
                record.path.display(),
                raw.width(),
                raw.height()
            ),
        )),
    }
}

pub fn load_dataset(manifest: &Manifest, geom: &CropGeometry) -> Result<Dataset> {
    let images = manifest
        .records
        .par_iter()
        .map(|r| prepare(r, &manifest.source, geom))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { images, labels: manifest.labels() })
}

/// Stratified train/test split. Each repetition draws from its own stream
/// of the seeded generator; index lists are returned in ascending order.
pub fn stratified_split(labels: &[u8], train_fraction: f64, seed: u64, repetition: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repetition);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::Usage(format!(
                "class {class} has {} samples; a stratified split needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Training set after minority-class augmentation (`ratio` 0 disables it).
pub fn augmented(train: &Dataset, ratio: f64) -> Result<(Dataset, usize)> {
    if ratio <= 0.0 {
        return Ok((train.clone(), 0));
    }
    let set = balance(train.images.clone(), train.labels.clone(), ratio)?;
    let added = set.synthesized.len();
    let (images, labels) = set.iter().map(|(img, y)| (img.clone(), y)).unzip();
    Ok((Dataset { images, labels }, added))
}

pub fn features(model: &FaceHop, images: &[AlignedImage]) -> Result<Vec<FeatureSet>> {
    Ok(images.par_iter().map(|img| model.features(img)).collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Fit every stage on an (already augmented) training set.
pub fn fit(data: &Dataset, config: &FaceHopConfig) -> Result<FaceHop> {
    config.validate()?;
    let tree = fit_tree(&data.images, &config.hop)?;

    let partials: Vec<Vec<RegionAccumulator>> = data
        .images
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut accs: Vec<RegionAccumulator> = config.regions.iter().cloned().map(RegionAccumulator::new).collect();
            for img in chunk {
                let out = tree.transform(img)?;
                for acc in &mut accs {
                    acc.push(&out)?;
                }
            }
            Ok(accs)
        })
        .collect::<std::result::Result<_, facehop_core::Error>>()?;
    let mut partials = partials.into_iter();
    let mut accs = partials.next().ok_or_else(|| Error::Usage("no training images".into()))?;
    for part in partials {
        for (a, b) in accs.iter_mut().zip(&part) {
            a.merge(b)?;
        }
    }
    let regions = accs.iter().map(|a| a.finish(config.n_comp)).collect::<std::result::Result<Vec<_>, _>>()?;

    let feats: Vec<FeatureSet> = data
        .images
        .par_iter()
        .map(|img| extract_features(&tree.transform(img)?, &regions))
        .collect::<std::result::Result<_, facehop_core::Error>>()?;

    let opts = &config.ensemble;
    let k = effective_folds(&data.labels, opts.folds)?;
    let folds = stratified_folds(&data.labels, k, opts.seed)?;
    let trained = (0..N_BASE)
        .into_par_iter()
        .map(|b| {
            let column: Vec<&[f64]> = feats.iter().map(|f| f[b].as_slice()).collect();
            train_base(&column, &data.labels, &folds, &opts.lr)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (base, oof): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    let meta = train_meta(&oof, &data.labels, config.variant, &opts.lr)?;
    let ensemble = facehop_core::classify::EnsembleModel::from_parts(base, meta, config.variant)?;
    Ok(FaceHop::from_parts(config.clone(), tree, regions, ensemble)?)
}

pub fn predict_all(model: &FaceHop, images: &[AlignedImage]) -> Result<Vec<Prediction>> {
    Ok(images.par_iter().map(|img| model.predict(img)).collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Accuracy of the ensemble and of every base classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub ensemble: Metrics,
    pub base: [Metrics; N_BASE],
}

pub fn score(model: &FaceHop, data: &Dataset) -> Result<Scores> {
    let preds = predict_all(model, &data.images)?;
    let hard = |f: &dyn Fn(&Prediction) -> u8| preds.iter().map(f).collect::<Vec<u8>>();
    let ensemble = evaluate(&data.labels, &hard(&|p| p.label))?;
    let mut base = [ensemble; N_BASE];
    for (b, slot) in base.iter_mut().enumerate() {
        *slot = evaluate(&data.labels, &hard(&|p| u8::from(p.base[b] >= 0.5)))?;
    }
    Ok(Scores { ensemble, base })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repetition {
    pub index: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub synthesized: usize,
    pub scores: Scores,
}

/// Split, augment, train and score one repetition.
pub fn run_repetition(data: &Dataset, run: &RunConfig, index: usize) -> Result<(FaceHop, Repetition)> {
    let (train_idx, test_idx) = stratified_split(&data.labels, run.split, run.seed, index as u64)?;
    let train = data.subset(&train_idx);
    let test = data.subset(&test_idx);
    let (train, synthesized) = augmented(&train, run.augment_ratio)?;
    let model = fit(&train, &run.face_hop_config()?)?;
    let scores = score(&model, &test)?;
    Ok((model, Repetition { index, n_train: train_idx.len(), n_test: test_idx.len(), synthesized, scores }))
}

/// The repeated-split protocol: `run.repetitions` independent runs.
pub fn run_protocol(data: &Dataset, run: &RunConfig) -> Result<Vec<Repetition>> {
    (0..run.repetitions).map(|i| run_repetition(data, run, i).map(|(_, r)| r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_seeded() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 4 == 0)).collect();
        let (train, test) = stratified_split(&labels, 0.8, 3, 0).unwrap();
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(train.iter().filter(|&&i| labels[i] == 1).count(), 20);
        assert_eq!(test.iter().filter(|&&i| labels[i] == 1).count(), 5);
        assert_eq!(stratified_split(&labels, 0.8, 3, 0).unwrap().0, train);
        assert_ne!(stratified_split(&labels, 0.8, 3, 1).unwrap().0, train);
        assert!(stratified_split(&[0, 0, 0, 1], 0.8, 0, 0).is_err());
    }
}
