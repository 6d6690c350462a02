use facehop_core::hoptree::{fit_tree_maps, HopConfig};
use facehop_core::saab::{fit_saab, NodeKind, PatchMatrix, Selection};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_patches(n: usize, seed: u64) -> PatchMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Anisotropic noise so the AC spectrum has clear gaps.
    let scales: Vec<f64> = (0..25).map(|i| 1.0 + 0.35 * i as f64).collect();
    let values = (0..n * 25).map(|i| 50.0 + scales[i % 25] * rng.random_range(-1.0..1.0)).collect();
    PatchMatrix::new(n, 25, values).unwrap()
}

#[test]
fn ac_kernels_match_brute_force_eigendecomposition() {
    let patches = random_patches(500, 11);
    let unit = fit_saab(&patches, 24).unwrap();

    // Oracle: covariance of mean-removed patches, eigendecomposed by nalgebra.
    let n = patches.n_samples();
    let rows: Vec<Vec<f64>> = patches
        .rows()
        .map(|r| {
            let m = r.iter().sum::<f64>() / 25.0;
            r.iter().map(|x| x - m).collect()
        })
        .collect();
    let mean: Vec<f64> = (0..25).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let cov = DMatrix::from_fn(25, 25, |i, j| {
        rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / n as f64
    });
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..25).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    assert_eq!(unit.n_ac_kernels(), 24);
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
        // ‖v − (v·k)k‖ avoids the cancellation in sqrt(1 − dot²).
        let sin = v.iter().zip(kernel).map(|(a, b)| (a - dot * b).powi(2)).sum::<f64>().sqrt();
        assert!(sin < 1e-8, "kernel {k}: subspace angle sin = {sin:e}");
        assert!((unit.energies()[k + 1] - lambda).abs() < 1e-8 * lambda.max(1.0));
    }
}

#[test]
fn kernels_orthonormal_and_energy_conserved() {
    let patches = random_patches(500, 12);
    let unit = fit_saab(&patches, 24).unwrap();
    let k = unit.kernel_matrix();
    let rows = k.len() / 25;
    let mut worst: f64 = 0.0;
    for i in 0..rows {
        for j in 0..rows {
            let d: f64 = (0..25).map(|t| k[i * 25 + t] * k[j * 25 + t]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((d - want).abs());
        }
    }
    assert!(worst < 1e-10, "‖KKᵀ−I‖∞ = {worst:e}");

    // Total patch variance equals the sum of channel energies.
    let n = patches.n_samples() as f64;
    let trace: f64 = (0..25)
        .map(|j| {
            let m = patches.rows().map(|r| r[j]).sum::<f64>() / n;
            patches.rows().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n
        })
        .sum();
    let total: f64 = unit.energies().iter().sum();
    assert!((total - trace).abs() < 1e-8 * trace);
}

#[test]
fn responses_nonnegative_on_fitting_patches() {
    let patches = random_patches(500, 13);
    let unit = fit_saab(&patches, 24).unwrap();
    let mut out = vec![0.0; unit.n_channels()];
    for p in patches.rows() {
        unit.respond_into(p, &mut out);
        assert!(out.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn transform_matches_nested_loop_oracle() {
    // 18×18 input with 3×3 windows: 16 → 8 → 6 → 3 → 1.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let maps: Vec<Vec<f64>> = (0..40).map(|_| (0..18 * 18).map(|_| rng.random_range(0.0..255.0)).collect()).collect();
    let cfg = HopConfig {
        input_size: 18,
        window: 3,
        selection: [Selection::Threshold(0.02), Selection::Threshold(0.002), Selection::Threshold(0.0)],
        max_patches: HopConfig::DEFAULT_MAX_PATCHES,
    };
    let model = fit_tree_maps(&maps, &cfg).unwrap();
    let img = &maps[7];
    let out = model.transform_map(img).unwrap();

    let respond = |kernel: &[f64], bias: f64, plane: &[f64], side: usize, r: usize, c: usize| -> f64 {
        let mut s = bias;
        for dr in 0..3 {
            for dc in 0..3 {
                s += kernel[dr * 3 + dc] * plane[(r + dr) * side + c + dc];
            }
        }
        s
    };
    let pool = |plane: &[f64], side: usize| -> Vec<f64> {
        let h = side / 2;
        let mut o = vec![0.0; h * h];
        for r in 0..h {
            for c in 0..h {
                o[r * h + c] = plane[2 * r * side + 2 * c]
                    .max(plane[2 * r * side + 2 * c + 1])
                    .max(plane[(2 * r + 1) * side + 2 * c])
                    .max(plane[(2 * r + 1) * side + 2 * c + 1]);
            }
        }
        o
    };

    let mut inputs = vec![img.clone()];
    let mut side = 18;
    for hop in 1..=3 {
        let out_side = side - 2;
        let mut next_inputs = Vec::new();
        let mut channel = 0;
        for (u, unit) in model.units(hop).iter().enumerate() {
            let kernels = unit.kernel_matrix();
            for (c, kind) in unit.output_kinds().iter().enumerate() {
                let mut plane = vec![0.0; out_side * out_side];
                for r in 0..out_side {
                    for col in 0..out_side {
                        plane[r * out_side + col] =
                            respond(&kernels[c * 9..(c + 1) * 9], unit.bias(), &inputs[u], side, r, col);
                    }
                }
                let got = out.hop(hop).channel(channel);
                for (a, b) in plane.iter().zip(got) {
                    assert!((a - b).abs() < 1e-9, "hop {hop} channel {channel}: {a} vs {b}");
                }
                if *kind == NodeKind::Intermediate {
                    next_inputs.push(pool(&plane, out_side));
                }
                channel += 1;
            }
        }
        assert_eq!(channel, out.hop(hop).channels);
        inputs = next_inputs;
        side = out_side / 2;
    }
}
