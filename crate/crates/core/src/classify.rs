//! Binary logistic regression and the stacked hop/region ensemble.
//!
//! Each base classifier sees one feature vector; the meta classifier sees
//! base probabilities produced out-of-fold on the training split, so it is
//! never trained on predictions of samples a base model has fitted.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::features::{FeatureSet, N_BASE};
use crate::math::{dot, sigmoid, softplus, sqrt};

/// Columns with a standard deviation below this are frozen at zero weight.
pub const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrOptions {
    /// L2 strength on the (standardized) weights; the intercept is free.
    pub lambda: f64,
    /// Stop once the gradient's ∞-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// L-BFGS memory.
    pub history: usize,
}

impl Default for LrOptions {
    fn default() -> Self {
        Self { lambda: 1e-3, tol: 1e-6, max_iter: 1000, history: 10 }
    }
}

/// Fitted logistic regression with its z-score standardizer.
#[derive(Debug, Clone, PartialEq)]
pub struct LrModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub mean: Vec<f64>,
    /// Per-feature standard deviation; 0 marks a frozen column.
    pub std: Vec<f64>,
}

impl LrModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    /// Logit of one sample.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        ensure!(
            x.len() == self.weights.len(),
            "feature length {} does not match model length {}",
            x.len(),
            self.weights.len()
        );
        let mut z = self.intercept;
        for (((xi, w), m), s) in x.iter().zip(&self.weights).zip(&self.mean).zip(&self.std) {
            if *s > 0.0 {
                z += w * (xi - m) / s;
            }
        }
        Ok(z)
    }

    /// P(label = 1).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.decision(x).map(sigmoid)
    }
}

/// Per-run training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: f64,
    /// Objective value at the start and after every accepted step.
    pub objective: Vec<f64>,
}

/// Standardized design matrix: `n × d`, row-major.
#[derive(Debug, Clone)]
pub struct Design {
    pub n: usize,
    pub d: usize,
    pub z: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Design {
    pub fn new<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        ensure!(!rows.is_empty(), "no training samples");
        let d = rows[0].as_ref().len();
        ensure!(rows.iter().all(|r| r.as_ref().len() == d), "rows have different lengths");
        ensure!(
            rows.iter().all(|r| r.as_ref().iter().all(|v| v.is_finite())),
            "features must be finite"
        );
        let n = rows.len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.as_ref()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| {
                let s = sqrt(v / n as f64);
                if s < MIN_STD { 0.0 } else { s }
            })
            .collect();
        let mut z = Vec::with_capacity(n * d);
        for r in rows {
            z.extend(r.as_ref().iter().zip(&mean).zip(&std).map(|((x, m), s)| if *s > 0.0 { (x - m) / s } else { 0.0 }));
        }
        Ok(Self { n, d, z, mean, std })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }
}

/// Regularized mean negative log-likelihood and its gradient at
/// `theta = [w..., b]`.
pub fn objective_and_gradient(design: &Design, y: &[u8], lambda: f64, theta: &[f64], grad: &mut [f64]) -> f64 {
    let d = design.d;
    let (w, b) = (&theta[..d], theta[d]);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut loss = 0.0;
    for i in 0..design.n {
        let x = design.row(i);
        let z = b + x.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        let yi = f64::from(y[i]);
        loss += softplus(z) - yi * z;
        let r = sigmoid(z) - yi;
        for (g, xi) in grad[..d].iter_mut().zip(x) {
            *g += r * xi;
        }
        grad[d] += r;
    }
    let inv = 1.0 / design.n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    let mut reg = 0.0;
    for (j, (g, wj)) in grad[..d].iter_mut().zip(w).enumerate() {
        if design.std[j] > 0.0 {
            *g += lambda * wj;
            reg += wj * wj;
        }
    }
    loss * inv + 0.5 * lambda * reg
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L-BFGS with Armijo backtracking from a zero start. Every accepted step
/// strictly decreases the objective.
pub fn fit_design(design: &Design, y: &[u8], opts: &LrOptions) -> (Vec<f64>, TrainReport) {
    let p = design.d + 1;
    let mut theta = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut f = objective_and_gradient(design, y, opts.lambda, &theta, &mut grad);
    let mut trace = vec![f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut dir = vec![0.0; p];
    let mut trial = vec![0.0; p];
    let mut trial_grad = vec![0.0; p];
    let mut alpha_buf = vec![0.0; opts.history.max(1)];
    let mut iterations = 0;

    while iterations < opts.max_iter && inf_norm(&grad) >= opts.tol {
        // Two-loop recursion.
        dir.copy_from_slice(&grad);
        for (k, (s, yv, rho)) in memory.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[k] = a;
            dir.iter_mut().zip(yv).for_each(|(d, yi)| *d -= a * yi);
        }
        let gamma = memory.back().map_or_else(
            || 1.0 / inf_norm(&grad).max(1.0),
            |(s, yv, _)| dot(s, yv) / dot(yv, yv),
        );
        dir.iter_mut().for_each(|d| *d *= gamma);
        for (k, (s, yv, rho)) in memory.iter().enumerate() {
            let b = rho * dot(yv, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (alpha_buf[k] - b) * si);
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            memory.clear();
            dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g / inf_norm(&grad).max(1.0));
            slope = dot(&grad, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            trial.iter_mut().zip(&theta).zip(&dir).for_each(|((t, th), d)| *t = th + step * d);
            let ft = objective_and_gradient(design, y, opts.lambda, &trial, &mut trial_grad);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope && ft < f {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else { break };

        let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * sqrt(dot(&s, &s) * dot(&yv, &yv)) {
            if memory.len() == opts.history.max(1) {
                memory.pop_front();
            }
            memory.push_back((s, yv, 1.0 / sy));
        }
        theta.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        f = ft;
        trace.push(f);
        iterations += 1;
    }
    let g = inf_norm(&grad);
    (theta, TrainReport { iterations, converged: g < opts.tol, grad_inf_norm: g, objective: trace })
}

fn check_labels(y: &[u8]) -> Result<[usize; 2]> {
    ensure!(y.iter().all(|&v| v <= 1), "labels must be 0 or 1");
    let ones = y.iter().filter(|&&v| v == 1).count();
    Ok([y.len() - ones, ones])
}

/// Train a logistic regression and return its diagnostics.
pub fn train_lr_traced<R: AsRef<[f64]>>(x: &[R], y: &[u8], opts: &LrOptions) -> Result<(LrModel, TrainReport)> {
    ensure!(x.len() == y.len(), "{} samples but {} labels", x.len(), y.len());
    let counts = check_labels(y)?;
    ensure!(
        counts[0] >= 2 && counts[1] >= 2,
        "need at least 2 samples per class, got {} and {}",
        counts[0],
        counts[1]
    );
    let design = Design::new(x)?;
    let (theta, report) = fit_design(&design, y, opts);
    let d = design.d;
    Ok((
        LrModel { weights: theta[..d].to_vec(), intercept: theta[d], mean: design.mean, std: design.std },
        report,
    ))
}

pub fn train_lr<R: AsRef<[f64]>>(x: &[R], y: &[u8], opts: &LrOptions) -> Result<LrModel> {
    train_lr_traced(x, y, opts).map(|(m, _)| m)
}

/// Which base classifiers feed the meta classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// All eight hop/region classifiers.
    FaceHopI,
    /// The hop-2 stripes and hop 3 only.
    FaceHopII,
}

impl Variant {
    pub fn bases(self) -> &'static [usize] {
        match self {
            Variant::FaceHopI => &[0, 1, 2, 3, 4, 5, 6, 7],
            Variant::FaceHopII => &[4, 5, 6, 7],
        }
    }

    pub fn meta_width(self) -> usize {
        self.bases().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::FaceHopI => "FaceHop I",
            Variant::FaceHopII => "FaceHop II",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    pub lr: LrOptions,
    pub folds: usize,
    pub seed: u64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { lr: LrOptions::default(), folds: 5, seed: 0 }
    }
}

/// Eight base classifiers and the meta classifier over their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub base: Vec<LrModel>,
    pub meta: LrModel,
    pub variant: Variant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsemblePrediction {
    pub probability: f64,
    pub base: [f64; N_BASE],
}

impl EnsemblePrediction {
    pub fn label(&self) -> u8 {
        u8::from(self.probability >= 0.5)
    }
}

impl EnsembleModel {
    pub fn from_parts(base: Vec<LrModel>, meta: LrModel, variant: Variant) -> Result<Self> {
        ensure!(base.len() == N_BASE, "expected {N_BASE} base classifiers, got {}", base.len());
        ensure!(
            meta.n_features() == variant.meta_width(),
            "{} meta classifier must take {} inputs, has {}",
            variant.name(),
            variant.meta_width(),
            meta.n_features()
        );
        Ok(Self { base, meta, variant })
    }

    pub fn meta_input(&self, base: &[f64; N_BASE]) -> Vec<f64> {
        self.variant.bases().iter().map(|&b| base[b]).collect()
    }

    pub fn predict(&self, features: &FeatureSet) -> Result<EnsemblePrediction> {
        let mut base = [0.0; N_BASE];
        for ((p, m), x) in base.iter_mut().zip(&self.base).zip(features) {
            *p = m.predict_proba(x)?;
        }
        let probability = self.meta.predict_proba(&self.meta_input(&base))?;
        Ok(EnsemblePrediction { probability, base })
    }
}

/// Stratified fold id per sample; classes are shuffled with `seed` and
/// dealt round-robin so every fold sees both classes in proportion.
pub fn stratified_folds(y: &[u8], folds: usize, seed: u64) -> Result<Vec<usize>> {
    ensure!(folds >= 2, "need at least 2 folds");
    let counts = check_labels(y)?;
    ensure!(
        counts.iter().all(|&c| c >= folds),
        "each class needs at least {folds} samples for {folds}-fold stratification, got {counts:?}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0; y.len()];
    let mut next = 0;
    for class in 0..2u8 {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assign[i] = next % folds;
            next += 1;
        }
    }
    Ok(assign)
}

/// Fold count actually used: the requested count, capped so every class
/// keeps at least two training samples per fold.
pub fn effective_folds(y: &[u8], requested: usize) -> Result<usize> {
    let counts = check_labels(y)?;
    let min = counts[0].min(counts[1]);
    ensure!(min >= 3, "each class needs at least 3 training samples for stacking, got {counts:?}");
    Ok(requested.min(min).max(2))
}

/// Out-of-fold probabilities for one feature column, then a final model on
/// every sample.
pub fn train_base<R: AsRef<[f64]>>(
    x: &[R],
    y: &[u8],
    folds: &[usize],
    opts: &LrOptions,
) -> Result<(LrModel, Vec<f64>)> {
    let k = folds.iter().copied().max().map_or(0, |m| m + 1);
    let mut oof = vec![0.0; y.len()];
    for fold in 0..k {
        let train: Vec<&[f64]> = (0..y.len()).filter(|&i| folds[i] != fold).map(|i| x[i].as_ref()).collect();
        let labels: Vec<u8> = (0..y.len()).filter(|&i| folds[i] != fold).map(|i| y[i]).collect();
        let model = train_lr(&train, &labels, opts)?;
        for i in (0..y.len()).filter(|&i| folds[i] == fold) {
            oof[i] = model.predict_proba(x[i].as_ref())?;
        }
    }
    Ok((train_lr(x, y, opts)?, oof))
}

/// Train the meta classifier from out-of-fold base probabilities
/// (`oof[b][i]` for base `b`, sample `i`).
pub fn train_meta(oof: &[Vec<f64>], y: &[u8], variant: Variant, opts: &LrOptions) -> Result<LrModel> {
    ensure!(oof.len() == N_BASE, "expected {N_BASE} base probability columns");
    let rows: Vec<Vec<f64>> =
        (0..y.len()).map(|i| variant.bases().iter().map(|&b| oof[b][i]).collect()).collect();
    train_lr(&rows, y, opts)
}

/// Train all eight base classifiers and the variant's meta classifier.
pub fn train_ensemble(
    features: &[FeatureSet],
    y: &[u8],
    variant: Variant,
    opts: &EnsembleOptions,
) -> Result<EnsembleModel> {
    ensure!(features.len() == y.len(), "{} samples but {} labels", features.len(), y.len());
    let k = effective_folds(y, opts.folds)?;
    let folds = stratified_folds(y, k, opts.seed)?;
    let mut base = Vec::with_capacity(N_BASE);
    let mut oof = Vec::with_capacity(N_BASE);
    for b in 0..N_BASE {
        let column: Vec<&[f64]> = features.iter().map(|f| f[b].as_slice()).collect();
        let (m, p) = train_base(&column, y, &folds, &opts.lr)?;
        base.push(m);
        oof.push(p);
    }
    let meta = train_meta(&oof, y, variant, &opts.lr)?;
    EnsembleModel::from_parts(base, meta, variant)
}

/// Accuracy summary of hard predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Accuracy within each true class (NaN for an absent class).
    pub per_class: [f64; 2],
    /// `confusion[truth][predicted]`.
    pub confusion: [[usize; 2]; 2],
}

pub fn evaluate(truth: &[u8], predicted: &[u8]) -> Result<Metrics> {
    ensure!(!truth.is_empty(), "cannot evaluate an empty split");
    ensure!(truth.len() == predicted.len(), "{} labels but {} predictions", truth.len(), predicted.len());
    check_labels(truth)?;
    check_labels(predicted)?;
    let mut confusion = [[0usize; 2]; 2];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t as usize][p as usize] += 1;
    }
    let correct = confusion[0][0] + confusion[1][1];
    let per_class = [0, 1].map(|c| {
        let n = confusion[c][0] + confusion[c][1];
        if n == 0 { f64::NAN } else { confusion[c][c] as f64 / n as f64 }
    });
    Ok(Metrics { accuracy: correct as f64 / truth.len() as f64, per_class, confusion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn separable_toy_set() {
        let x: Vec<[f64; 2]> = vec![[0.0, 0.0], [1.0, 0.2], [0.3, 1.0], [3.0, 3.0], [4.0, 3.5], [3.2, 4.1]];
        let y = [0, 0, 0, 1, 1, 1];
        let m = train_lr(&x, &y, &LrOptions::default()).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert_eq!(u8::from(m.predict_proba(xi).unwrap() >= 0.5), yi);
        }
    }

    #[test]
    fn null_model_on_random_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<[f64; 2]> = (0..2000).map(|_| [rng.random(), rng.random()]).collect();
        let y: Vec<u8> = (0..2000).map(|i| (i % 2) as u8).collect();
        let m = train_lr(&x, &y, &LrOptions::default()).unwrap();
        assert!(m.intercept.abs() < 0.05);
        for xi in &x {
            assert!((m.predict_proba(xi).unwrap() - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![[1.0], [2.0], [3.0]];
        assert!(train_lr(&x, &[1, 1, 1], &LrOptions::default()).is_err());
        assert!(train_lr(&x, &[1, 0, 2], &LrOptions::default()).is_err());
    }

    #[test]
    fn predict_proba_hand_values() {
        let zero = LrModel { weights: vec![0.0; 3], intercept: 0.0, mean: vec![0.0; 3], std: vec![1.0; 3] };
        assert_eq!(zero.predict_proba(&[1.0, 2.0, 3.0]).unwrap(), 0.5);
        let sat = LrModel { intercept: 20.0, ..zero.clone() };
        assert!(sat.predict_proba(&[1.0, 2.0, 3.0]).unwrap() > 0.999);
        let m = LrModel { weights: vec![0.5, -1.0], intercept: 0.25, mean: vec![1.0, 2.0], std: vec![2.0, 0.5] };
        // z = 0.25 + 0.5·(3−1)/2 − 1·(1−2)/0.5 = 2.75
        let want = 1.0 / (1.0 + (-2.75f64).exp());
        assert!((m.predict_proba(&[3.0, 1.0]).unwrap() - want).abs() < 1e-12);
        assert!(m.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn frozen_columns_stay_zero() {
        let x: Vec<[f64; 2]> = (0..20).map(|i| [i as f64, 7.0]).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i >= 10)).collect();
        let m = train_lr(&x, &y, &LrOptions::default()).unwrap();
        assert_eq!(m.std[1], 0.0);
        assert_eq!(m.weights[1], 0.0);
    }

    #[test]
    fn objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<Vec<f64>> = (0..80).map(|_| (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<u8> = x.iter().map(|r| u8::from(r[0] + 0.5 * r[1] + rng.random_range(-0.5..0.5) > 0.0)).collect();
        let (_, rep) = train_lr_traced(&x, &y, &LrOptions::default()).unwrap();
        assert!(rep.converged);
        for w in rep.objective.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn folds_are_stratified() {
        let y: Vec<u8> = (0..53).map(|i| u8::from(i % 3 == 0)).collect();
        let f = stratified_folds(&y, 5, 9).unwrap();
        for fold in 0..5 {
            let pos = (0..53).filter(|&i| f[i] == fold && y[i] == 1).count();
            let neg = (0..53).filter(|&i| f[i] == fold && y[i] == 0).count();
            assert!((3..=4).contains(&pos), "{pos}");
            assert!((6..=8).contains(&neg), "{neg}");
        }
        assert_eq!(f, stratified_folds(&y, 5, 9).unwrap());
        assert_eq!(effective_folds(&[0, 0, 0, 1, 1, 1, 1], 5).unwrap(), 3);
        assert!(effective_folds(&[0, 0, 1, 1, 1], 5).is_err());
    }

    #[test]
    fn meta_learns_perfect_base_probabilities() {
        let y: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let oof: Vec<Vec<f64>> = (0..N_BASE).map(|_| y.iter().map(|&v| f64::from(v)).collect()).collect();
        for variant in [Variant::FaceHopI, Variant::FaceHopII] {
            let meta = train_meta(&oof, &y, variant, &LrOptions::default()).unwrap();
            assert_eq!(meta.n_features(), variant.meta_width());
            for (i, &yi) in y.iter().enumerate() {
                let row: Vec<f64> = variant.bases().iter().map(|&b| oof[b][i]).collect();
                assert_eq!(u8::from(meta.predict_proba(&row).unwrap() >= 0.5), yi);
            }
        }
    }

    #[test]
    fn metrics() {
        let m = evaluate(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        let m = evaluate(&[0, 1, 1, 1], &[1, 1, 0, 1]).unwrap();
        assert_eq!(m.confusion, [[0, 1], [1, 2]]);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.per_class[0], 0.0);
        assert!((m.per_class[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(evaluate(&[], &[]).is_err());
    }
}
