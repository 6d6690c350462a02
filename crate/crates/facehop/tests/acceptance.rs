//! Acceptance suite: one PASS/FAIL/SKIP line per criterion, followed by
//! indented detail lines. Exits nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use facehop::config::RunConfig;
use facehop::format::{FormatError, ModelFile};
use facehop::pipeline::{self, Dataset, Repetition};
use facehop::report::accuracy_rows;
use facehop::synth::{self, SynthOptions};
use facehop_core::augment::{flip_h, nearest_neighbors, neighbor_pairs, reduced_coordinates, NN_ENERGY};
use facehop_core::classify::{objective_and_gradient, Design, Variant};
use facehop_core::features::{
    default_regions, extract_features, feature_lengths, fit_regions, N_COMP_CMU, N_COMP_LFW,
};
use facehop_core::hoptree::{fit_tree, HopConfig, HopModel};
use facehop_core::params::{itemize, ModelShape};
use facehop_core::preprocess::{AlignedImage, PIXELS};
use facehop_core::saab::{fit_saab, PatchMatrix};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass,
    Fail(String),
    Skip(String),
}

/// Detail lines plus the outcome.
type Check = (Outcome, Vec<String>);

macro_rules! require {
    ($details:expr, $cond:expr, $($msg:tt)+) => {
        if !$cond {
            return (Outcome::Fail(format!($($msg)+)), $details);
        }
    };
}

fn noise_images(n: usize, seed: u64) -> Vec<AlignedImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| AlignedImage::new((0..PIXELS).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap()).collect()
}

fn secs(d: Duration) -> String {
    format!("{:.3} s", d.as_secs_f64())
}

fn shape_cascade() -> Check {
    let mut details = Vec::new();
    let start = Instant::now();
    let tree = fit_tree(&noise_images(40, 1), &HopConfig::lfw()).unwrap();
    let mut inputs = noise_images(3, 2);
    inputs.push(AlignedImage::zeros());
    inputs.push(AlignedImage::new(vec![255.0; PIXELS]).unwrap());
    inputs.push(AlignedImage::new((0..PIXELS).map(|p| (p % 32 * 8) as f64).collect()).unwrap());
    for img in &inputs {
        let out = tree.transform(img).unwrap();
        let got = [
            (out.hop(1).height, out.hop(1).width),
            (out.hop(2).height, out.hop(2).width),
            (out.hop(3).height, out.hop(3).width),
            {
                let p = tree.pooled(&out, 1).unwrap();
                (p.height, p.width)
            },
            {
                let p = tree.pooled(&out, 2).unwrap();
                (p.height, p.width)
            },
        ];
        require!(details, got == [(28, 28), (10, 10), (1, 1), (14, 14), (5, 5)], "shapes {got:?}");
    }
    let elapsed = start.elapsed();
    details.push(format!("hop maps 28×28, 10×10, 1×1; pooled 14×14, 5×5 on {} inputs", inputs.len()));
    details.push(format!("fit + transforms: {}", secs(elapsed)));
    require!(details, elapsed < Duration::from_secs(1), "took {}", secs(elapsed));
    (Outcome::Pass, details)
}

fn saab_oracle() -> Check {
    let mut details = Vec::new();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scales: Vec<f64> = (0..25).map(|i| 1.0 + 0.35 * i as f64).collect();
    let values: Vec<f64> = (0..500 * 25).map(|i| 50.0 + scales[i % 25] * rng.random_range(-1.0..1.0)).collect();
    let patches = PatchMatrix::new(500, 25, values).unwrap();
    let unit = fit_saab(&patches, 24).unwrap();

    let rows: Vec<Vec<f64>> = patches
        .rows()
        .map(|r| {
            let m = r.iter().sum::<f64>() / 25.0;
            r.iter().map(|x| x - m).collect()
        })
        .collect();
    let mean: Vec<f64> = (0..25).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 500.0).collect();
    let cov = DMatrix::from_fn(25, 25, |i, j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / 500.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..25).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    require!(details, unit.n_ac_kernels() == 24, "{} AC kernels", unit.n_ac_kernels());
    let (mut worst_sin, mut compared) = (0.0f64, 0);
    for k in 0..24 {
        let lambda = eig.eigenvalues[order[k]];
        let gap_prev = if k == 0 { f64::INFINITY } else { eig.eigenvalues[order[k - 1]] - lambda };
        let gap_next = lambda - eig.eigenvalues[order[k + 1]];
        if gap_prev.min(gap_next) <= 1e-6 {
            continue;
        }
        let v = eig.eigenvectors.column(order[k]);
        let kernel = unit.ac_kernel(k);
        let dot: f64 = kernel.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        let sin = v.iter().zip(kernel).map(|(a, b)| (a - dot * b).powi(2)).sum::<f64>().sqrt();
        worst_sin = worst_sin.max(sin);
        compared += 1;
    }
    let k = unit.kernel_matrix();
    let n_rows = k.len() / 25;
    let mut ortho = 0.0f64;
    for i in 0..n_rows {
        for j in 0..n_rows {
            let d: f64 = (0..25).map(|t| k[i * 25 + t] * k[j * 25 + t]).sum();
            ortho = ortho.max((d - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let trace: f64 = (0..25)
        .map(|j| {
            let m = patches.rows().map(|r| r[j]).sum::<f64>() / 500.0;
            patches.rows().map(|r| (r[j] - m).powi(2)).sum::<f64>() / 500.0
        })
        .sum();
    let energy_err = (unit.energies().iter().sum::<f64>() - trace).abs() / trace;
    let elapsed = start.elapsed();
    details.push(format!("max subspace sin over {compared} well-separated kernels: {worst_sin:.2e}"));
    details.push(format!("‖KKᵀ−I‖∞ = {ortho:.2e}; relative energy error {energy_err:.2e}; {}", secs(elapsed)));
    require!(details, compared > 0 && worst_sin < 1e-8, "subspace sin {worst_sin:e}");
    require!(details, ortho < 1e-10, "orthonormality {ortho:e}");
    require!(details, energy_err < 1e-8, "energy error {energy_err:e}");
    require!(details, elapsed < Duration::from_secs(5), "took {}", secs(elapsed));
    (Outcome::Pass, details)
}

fn nonnegativity() -> Check {
    let mut details = Vec::new();
    let samples = synth::generate(&SynthOptions { side: 48, counts: [40, 40], seed: 3, ..Default::default() });
    let geom = RunConfig::lfw().crop_geometry();
    let images: Vec<AlignedImage> = samples
        .iter()
        .map(|s| facehop_core::preprocess::preprocess(&s.image, s.landmarks.as_ref().unwrap(), &geom).unwrap())
        .collect();
    for (name, cfg) in [("LFW fixed counts", HopConfig::lfw()), ("thresholds", HopConfig::thresholds([1e-3, 1e-3, 1e-4]))] {
        let tree = fit_tree(&images, &cfg).unwrap();
        let mut checked = 0usize;
        let mut min = f64::INFINITY;
        for img in &images {
            let out = tree.transform(img).unwrap();
            for h in 1..=3 {
                for &v in &out.hop(h).values {
                    min = min.min(v);
                    checked += 1;
                }
            }
        }
        details.push(format!("{name}: {checked} responses over {} fitting images, minimum {min:.6}", images.len()));
        require!(details, min >= 0.0, "{name}: negative response {min}");
    }
    (Outcome::Pass, details)
}

fn fit_and_measure(cfg: &HopConfig, n_comp: usize) -> (HopModel, [usize; 8]) {
    let images = noise_images(40, 5);
    let tree = fit_tree(&images, cfg).unwrap();
    let outputs: Vec<_> = images.iter().map(|i| tree.transform(i).unwrap()).collect();
    let regions = fit_regions(&tree, &outputs, &default_regions(), n_comp).unwrap();
    let feats = extract_features(&outputs[0], &regions).unwrap();
    let mut lens = [0; 8];
    for (l, f) in lens.iter_mut().zip(&feats) {
        *l = f.len();
    }
    (tree, lens)
}

fn feature_dims() -> Check {
    let mut details = Vec::new();
    let cases = [
        ("LFW", HopConfig::lfw(), N_COMP_LFW, [[18, 0, 7], [122, 0, 328], [0, 233, 2817]], [270, 1830, 233]),
        ("CMU", HopConfig::cmu(), N_COMP_CMU, [[18, 0, 7], [117, 0, 333], [0, 186, 2739]], [360, 2340, 186]),
    ];
    for (name, cfg, n_comp, table1, table2) in cases {
        let (tree, lens) = fit_and_measure(&cfg, n_comp);
        let counts = tree.counts();
        let want = [table2[0], table2[0], table2[0], table2[0], table2[1], table2[1], table2[1], table2[2]];
        details.push(format!("{name}: node counts {counts:?}, feature lengths {lens:?}"));
        require!(details, counts == table1, "{name} node counts {counts:?}");
        require!(details, lens == want, "{name} feature lengths {lens:?}, expected {want:?}");
        let kept = [0, 1, 2].map(|h| table1[h][0] + table1[h][1]);
        let implied = feature_lengths(kept, &default_regions(), n_comp);
        require!(details, implied == want, "{name} lengths implied by counts {implied:?}");
    }
    (Outcome::Pass, details)
}

fn parameter_counts() -> Check {
    let mut details = Vec::new();
    let cases = [
        ("LFW", [[18, 0, 7], [122, 0, 328], [0, 233, 2817]], N_COMP_LFW, Variant::FaceHopII, 16_895usize),
        ("LFW", [[18, 0, 7], [122, 0, 328], [0, 233, 2817]], N_COMP_LFW, Variant::FaceHopI, 25_543),
        ("CMU", [[18, 0, 7], [117, 0, 333], [0, 186, 2739]], N_COMP_CMU, Variant::FaceHopII, 17_628),
    ];
    let mut failures = Vec::new();
    for (name, counts, n_comp, variant, reference) in cases {
        let shape = ModelShape::from_counts(counts, 5, &default_regions(), n_comp);
        let report = itemize(&shape, Some(variant));
        let rel = (report.total as f64 - reference as f64) / reference as f64;
        details.push(format!("{name} {}: {} (reference {reference}, {:+.2}%)", variant.name(), report.total, 100.0 * rel));
        for item in &report.items {
            details.push(format!("    {:<16} {:<22} {:<26} {:>7}", item.section.name(), item.name, item.formula, item.count));
        }
        if rel.abs() > 0.05 {
            failures.push(format!("{name} {} off by {:+.2}%", variant.name(), 100.0 * rel));
        }
    }
    require!(details, failures.is_empty(), "{}", failures.join("; "));
    (Outcome::Pass, details)
}

fn ensemble_mean(reps: &[Repetition]) -> f64 {
    reps.iter().map(|r| r.scores.ensemble.accuracy).sum::<f64>() / reps.len() as f64
}

fn full_data() -> Check {
    let mut details = Vec::new();
    let cases = [("FACEHOP_LFW_MANIFEST", RunConfig::lfw(), 0.93), ("FACEHOP_CMU_MANIFEST", RunConfig::cmu(), 0.935)];
    let mut ran = 0;
    for (var, mut run, floor) in cases {
        let Some(path) = std::env::var_os(var) else {
            details.push(format!("{var} not set"));
            continue;
        };
        ran += 1;
        let start = Instant::now();
        run.manifest = Some(path.into());
        run.repetitions = 4;
        let m = facehop::manifest::read(run.manifest.as_deref().unwrap()).unwrap();
        let data = pipeline::load_dataset(&m, &run.crop_geometry()).unwrap();
        let reps = pipeline::run_protocol(&data, &run).unwrap();
        let mean = ensemble_mean(&reps);
        details.push(format!("{var}: {} images, FaceHop II mean accuracy {:.2}% ({})", data.len(), 100.0 * mean, secs(start.elapsed())));
        require!(details, mean >= floor, "{var}: mean accuracy {:.2}% below {:.1}%", 100.0 * mean, 100.0 * floor);
    }
    if ran == 0 {
        return (Outcome::Skip("no aligned face dataset supplied".into()), details);
    }
    (Outcome::Pass, details)
}

fn synthetic_dataset(opts: SynthOptions) -> (tempfile::TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth::write_dataset(dir.path(), &synth::generate(&opts)).unwrap();
    let m = facehop::manifest::read(&manifest).unwrap();
    let data = pipeline::load_dataset(&m, &RunConfig::lfw().crop_geometry()).unwrap();
    (dir, data)
}

fn desk_scale() -> Check {
    let mut details = Vec::new();
    let start = Instant::now();
    let opts = SynthOptions {
        counts: [240, 160],
        noise: 30.0,
        separation: 2.0,
        cue_dropout: 0.2,
        aligned: true,
        seed: 7,
        ..Default::default()
    };
    let (_dir, data) = synthetic_dataset(opts);
    let mut run = RunConfig::lfw();
    run.repetitions = 4;
    run.seed = 7;
    let reps = pipeline::run_protocol(&data, &run).unwrap();
    let elapsed = start.elapsed();
    let rows = accuracy_rows(&reps, run.variant.variant());
    for r in &rows {
        let accs: Vec<String> = r.accuracies.iter().map(|a| format!("{:6.2}", 100.0 * a)).collect();
        details.push(format!("{:<22} {}  mean {:6.2}", r.classifier, accs.join(" "), 100.0 * r.mean));
    }
    let ens = rows.last().unwrap();
    let best_base = rows[..8].iter().map(|r| r.mean).fold(0.0, f64::max);
    let worst_rep = ens.accuracies.iter().copied().fold(1.0, f64::min);
    details.push(format!(
        "{} aligned 32×32 images, {} test and {} synthesized per repetition; worst repetition {:.2}%; {}",
        data.len(),
        reps[0].n_test,
        reps[0].synthesized,
        100.0 * worst_rep,
        secs(elapsed)
    ));
    require!(details, ens.mean >= 0.95, "mean accuracy {:.2}%", 100.0 * ens.mean);
    require!(details, ens.mean >= best_base, "ensemble {:.4} below best base {:.4}", ens.mean, best_base);
    require!(details, elapsed < Duration::from_secs(120), "took {}", secs(elapsed));
    (Outcome::Pass, details)
}

fn gradient_check() -> Check {
    let mut details = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let (n, d) = (20 + 3 * inst, 1 + inst % 9);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|j| rng.random_range(-5.0..5.0) * (1 + j) as f64).collect()).collect();
        let y: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let design = Design::new(&x).unwrap();
        let theta: Vec<f64> = (0..=d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lambda = [1e-3, 1e-2, 0.1][inst % 3];
        let mut grad = vec![0.0; d + 1];
        objective_and_gradient(&design, &y, lambda, &theta, &mut grad);
        let mut scratch = vec![0.0; d + 1];
        let h = 1e-5;
        let num: Vec<f64> = (0..=d)
            .map(|j| {
                let mut t = theta.clone();
                t[j] += h;
                let fp = objective_and_gradient(&design, &y, lambda, &t, &mut scratch);
                t[j] -= 2.0 * h;
                let fm = objective_and_gradient(&design, &y, lambda, &t, &mut scratch);
                (fp - fm) / (2.0 * h)
            })
            .collect();
        let diff = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
        worst = worst.max(diff / scale);
    }
    details.push(format!("20 instances, worst relative error {worst:.2e}"));
    require!(details, worst < 1e-6, "relative error {worst:e}");
    (Outcome::Pass, details)
}

/// Exhaustive nearest neighbour in the 90%-energy PCA subspace, computed
/// from an SVD of the centered data.
fn oracle_neighbors(imgs: &[AlignedImage]) -> Vec<usize> {
    let n = imgs.len();
    let mean: Vec<f64> = (0..PIXELS).map(|p| imgs.iter().map(|i| i.data()[p]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, PIXELS, |i, p| imgs[i].data()[p] - mean[p]);
    let svd = x.clone().svd(false, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let energy: Vec<f64> = order.iter().map(|&k| svd.singular_values[k].powi(2)).collect();
    let total: f64 = energy.iter().sum();
    let (mut acc, mut k) = (0.0, 0);
    while acc < NN_ENERGY * total * (1.0 - 1e-12) {
        acc += energy[k];
        k += 1;
    }
    let vt = svd.v_t.unwrap();
    let coords: Vec<Vec<f64>> = (0..n)
        .map(|i| order[..k].iter().map(|&c| (0..PIXELS).map(|p| x[(i, p)] * vt[(c, p)]).sum()).collect())
        .collect();
    let dist = |a: usize, b: usize| coords[a].iter().zip(&coords[b]).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    (0..n).map(|i| (0..n).filter(|&j| j != i).min_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b))).unwrap()).collect()
}

fn augmentation() -> Check {
    let mut details = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..5 {
        // Random images with a low-rank component so the 90% subspace is nontrivial.
        let basis: Vec<Vec<f64>> = (0..3).map(|_| (0..PIXELS).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let imgs: Vec<AlignedImage> = (0..10)
            .map(|_| {
                let a: Vec<f64> = (0..3).map(|_| rng.random_range(-40.0..40.0)).collect();
                let data = (0..PIXELS)
                    .map(|p| (128.0 + (0..3).map(|k| a[k] * basis[k][p]).sum::<f64>() + rng.random_range(-5.0..5.0)).clamp(0.0, 255.0))
                    .collect();
                AlignedImage::new(data).unwrap()
            })
            .collect();
        let expected = oracle_neighbors(&imgs);
        let got = nearest_neighbors(&reduced_coordinates(&imgs, NN_ENERGY).unwrap()).unwrap();
        require!(details, got == expected, "trial {trial}: neighbours {got:?}, exhaustive {expected:?}");
        let pairs = neighbor_pairs(&imgs).unwrap();
        let mut want: Vec<(usize, usize)> = expected.iter().enumerate().map(|(i, &j)| (i.min(j), i.max(j))).collect();
        want.sort_unstable();
        want.dedup();
        let mut sorted: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect();
        sorted.sort_unstable();
        require!(details, sorted == want, "trial {trial}: pairs {pairs:?}");
        for img in imgs.iter().chain(noise_images(5, trial).iter()) {
            require!(details, flip_h(&flip_h(img)) == *img, "flip is not an involution");
        }
    }
    details.push("5 trials of 10 images: neighbour indices and pairs match exhaustive search; flip∘flip = id".into());
    (Outcome::Pass, details)
}

fn serialization() -> Check {
    let mut details = Vec::new();
    let (_dir, data) = synthetic_dataset(SynthOptions { side: 40, counts: [40, 30], seed: 10, ..Default::default() });
    let run = RunConfig::lfw();
    let model = pipeline::fit(&data, &run.face_hop_config().unwrap()).unwrap();
    let file = ModelFile::new(run, model).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.fhop");
    file.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let loaded = ModelFile::load(&path).unwrap();
    require!(details, loaded == file, "loaded model differs");
    require!(details, loaded.to_bytes() == bytes, "re-serialized bytes differ");
    let img = &data.images[0];
    require!(details, loaded.model.predict(img).unwrap() == file.model.predict(img).unwrap(), "predictions differ");

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut positions: Vec<usize> = (16..bytes.len()).step_by(bytes.len() / 500 + 1).collect();
    positions.extend((0..200).map(|_| rng.random_range(16..bytes.len())));
    positions.extend(bytes.len() - 4..bytes.len());
    for &pos in &positions {
        let mut bad = bytes.clone();
        bad[pos] ^= 1 << rng.random_range(0..8);
        match ModelFile::from_bytes(&bad) {
            Err(FormatError::Checksum { .. }) => {}
            other => {
                return (Outcome::Fail(format!("corruption at byte {pos} gave {:?}", other.err())), details);
            }
        }
    }
    details.push(format!("{} byte file round-trips bit-exactly; {} single-byte corruptions rejected by checksum", bytes.len(), positions.len()));
    (Outcome::Pass, details)
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("shape cascade", shape_cascade),
        ("Saab oracle equivalence", saab_oracle),
        ("non-negativity", nonnegativity),
        ("feature dimensions", feature_dims),
        ("parameter counts", parameter_counts),
        ("end-to-end accuracy on supplied data", full_data),
        ("desk-scale synthetic accuracy", desk_scale),
        ("LR gradient check", gradient_check),
        ("augmentation correctness", augmentation),
        ("serialization", serialization),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (outcome, details) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(e) => {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                (Outcome::Fail(format!("panicked: {}", msg.unwrap_or_default())), Vec::new())
            }
        };
        let line = match &outcome {
            Outcome::Pass => format!("PASS {:>2}. {name}", i + 1),
            Outcome::Fail(why) => {
                failed += 1;
                format!("FAIL {:>2}. {name}: {why}", i + 1)
            }
            Outcome::Skip(why) => format!("SKIP {:>2}. {name}: {why}", i + 1),
        };
        println!("{line}");
        for d in details {
            println!("        {d}");
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
