use facehop_core::classify::{objective_and_gradient, train_lr, train_lr_traced, Design, LrOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|j| rng.random_range(-3.0..3.0) * (1.0 + j as f64)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| {
            let z: f64 = r.iter().zip(&w).enumerate().map(|(j, (a, b))| a * b / (1.0 + j as f64)).sum();
            u8::from(1.0 / (1.0 + (-z).exp()) > rng.random::<f64>())
        })
        .collect();
    (x, y)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for inst in 0..20 {
        let d = 1 + inst % 7;
        let (x, y) = problem(30 + inst, d, 100 + inst as u64);
        let design = Design::new(&x).unwrap();
        let theta: Vec<f64> = (0..=d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut grad = vec![0.0; d + 1];
        objective_and_gradient(&design, &y, 1e-2, &theta, &mut grad);
        let h = 1e-5;
        let mut scratch = vec![0.0; d + 1];
        let mut num = vec![0.0; d + 1];
        for j in 0..=d {
            let mut t = theta.clone();
            t[j] += h;
            let fp = objective_and_gradient(&design, &y, 1e-2, &t, &mut scratch);
            t[j] -= 2.0 * h;
            let fm = objective_and_gradient(&design, &y, 1e-2, &t, &mut scratch);
            num[j] = (fp - fm) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
        assert!(diff / scale < 1e-6, "instance {inst}: relative error {:e}", diff / scale);
    }
}

/// Newton's method on the same objective, standardized independently.
fn newton_oracle(x: &[Vec<f64>], y: &[u8], lambda: f64) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| (x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
        .collect();
    let z = DMatrix::from_fn(n, d + 1, |i, j| if j == d { 1.0 } else { (x[i][j] - mean[j]) / std[j] });
    let yv = DVector::from_iterator(n, y.iter().map(|&v| f64::from(v)));
    let mut theta = DVector::zeros(d + 1);
    let mut reg = DMatrix::identity(d + 1, d + 1) * lambda;
    reg[(d, d)] = 0.0;
    for _ in 0..50 {
        let eta = &z * &theta;
        let p = eta.map(|e| 1.0 / (1.0 + (-e).exp()));
        let grad = z.transpose() * (&p - &yv) / n as f64 + &reg * &theta;
        let wdiag = p.map(|v| v * (1.0 - v));
        let hess = z.transpose() * DMatrix::from_diagonal(&wdiag) * &z / n as f64 + &reg;
        let step = hess.cholesky().unwrap().solve(&grad);
        theta -= &step;
        if step.amax() < 1e-13 {
            break;
        }
    }
    (theta.rows(0, d).iter().copied().collect(), theta[d], mean, std)
}

#[test]
fn lbfgs_agrees_with_newton_oracle() {
    for seed in 0..4 {
        let (x, y) = problem(300, 6, 40 + seed);
        let model = train_lr(&x, &y, &LrOptions::default()).unwrap();
        let (w, b, _, _) = newton_oracle(&x, &y, 1e-3);
        let dot: f64 = w.iter().zip(&model.weights).map(|(a, c)| a * c).sum();
        let na = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = model.weights.iter().map(|a| a * a).sum::<f64>().sqrt();
        let angle = (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 5.0, "direction differs by {angle}°");
        for (a, c) in w.iter().zip(&model.weights) {
            assert!((a - c).abs() < 1e-4 * (1.0 + a.abs()), "{a} vs {c}");
        }
        assert!((b - model.intercept).abs() < 1e-4 * (1.0 + b.abs()));
    }
}

#[test]
fn predictions_invariant_to_affine_feature_rescaling() {
    let (x, y) = problem(200, 5, 7);
    let scaled: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| v * (10.0f64).powi(j as i32 - 2) + 3.0 * j as f64).collect())
        .collect();
    let a = train_lr(&x, &y, &LrOptions::default()).unwrap();
    let b = train_lr(&scaled, &y, &LrOptions::default()).unwrap();
    for (ra, rb) in x.iter().zip(&scaled) {
        let pa = a.predict_proba(ra).unwrap();
        let pb = b.predict_proba(rb).unwrap();
        assert!((pa - pb).abs() < 1e-8, "{pa} vs {pb}");
    }
}

#[test]
fn objective_trace_never_increases() {
    for seed in 0..5 {
        let (x, y) = problem(150, 8, 70 + seed);
        let (_, report) = train_lr_traced(&x, &y, &LrOptions::default()).unwrap();
        assert!(report.converged);
        assert!(report.objective.windows(2).all(|w| w[1] <= w[0]));
    }
}
