//! Property tests against dense linear-algebra oracles (nalgebra inverse and
//! determinant, kernel written out by hand).

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rgp_mpc::chol::CholFactor;
use rgp_mpc::evolving::{evict_oldest, propose, with_point, EvolvingConfig};
use rgp_mpc::gp::{kernel, GpModel, Hyperparameters, TrainingSet};
use rgp_mpc::linalg::Matrix;

fn se(a: &[f64], b: &[f64], l: &[f64], sf2: f64) -> f64 {
    let q: f64 = a.iter().zip(b).zip(l).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    sf2 * (-0.5 * q).exp()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// `B Bᵀ + n I` from a flat seed vector.
fn spd(n: usize, seed: &[f64]) -> Matrix {
    let b = Matrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
    b.matmul(&b.transpose()).add(&Matrix::identity(n).scale(n as f64))
}

fn spd_strategy(max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2..=max_n).prop_flat_map(|n| (Just(n), prop::collection::vec(-1.0..1.0f64, n * n)))
}

#[derive(Debug, Clone)]
struct Model {
    theta: Hyperparameters,
    w: Vec<Vec<f64>>,
    z: Vec<f64>,
}

fn model_strategy(max_n: usize) -> impl Strategy<Value = Model> {
    (1..=max_n, 1..=4usize).prop_flat_map(|(n, d)| {
        (
            -1.0..1.0f64,
            prop::collection::vec(0.2..3.0f64, d),
            0.1..2.0f64,
            1e-4..0.1f64,
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), n),
            prop::collection::vec(-1.0..1.0f64, n),
        )
            .prop_map(|(c, l, sf2, sn2, w, z)| Model {
                theta: Hyperparameters::new(c, l, sf2, sn2).unwrap(),
                w,
                z,
            })
    })
}

fn fit(m: &Model) -> GpModel {
    GpModel::fit(TrainingSet::from_pairs(m.w.clone(), m.z.clone()).unwrap(), m.theta.clone()).unwrap()
}

fn dense_k(m: &Model) -> DMatrix<f64> {
    let n = m.w.len();
    let t = &m.theta;
    DMatrix::from_fn(n, n, |i, j| {
        se(&m.w[i], &m.w[j], &t.lengthscales, t.sigma_f2) + if i == j { t.sigma_n2 } else { 0.0 }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factor_reconstructs_and_solves((n, seed) in spd_strategy(12), rhs in prop::collection::vec(-1.0..1.0f64, 12)) {
        let a = spd(n, &seed);
        let f = CholFactor::factorize(&a).unwrap();
        prop_assert!(f.reconstruct().rel_frobenius_err(&a) < 1e-12);
        let x = f.solve(&rhs[..n]).unwrap();
        let oracle = to_na(&a).try_inverse().unwrap() * DVector::from_column_slice(&rhs[..n]);
        for (xi, oi) in x.iter().zip(oracle.iter()) {
            prop_assert!((xi - oi).abs() < 1e-10 * (1.0 + oi.abs()));
        }
        let det = to_na(&a).determinant();
        prop_assert!((f.log_det() - det.ln()).abs() < 1e-9 * (1.0 + det.ln().abs()));
    }

    #[test]
    fn insert_and_remove_match_refactorization((n, seed) in spd_strategy(12), pos in 0usize..12) {
        let a = spd(n, &seed);
        let k = pos % n;
        let small = a.without_row_col(k);
        let base = CholFactor::factorize(&small).unwrap();
        let col: Vec<f64> = (0..n).filter(|&i| i != k).map(|i| a[(i, k)]).collect();
        let inserted = base.insert(&col, a[(k, k)], k).unwrap();
        let full = CholFactor::factorize(&a).unwrap();
        prop_assert!(inserted.r().rel_frobenius_err(full.r()) < 1e-10);

        let removed = full.remove(k).unwrap();
        prop_assert!(removed.r().rel_frobenius_err(base.r()) < 1e-10);
    }

    #[test]
    fn kernel_is_symmetric_and_bounded(m in model_strategy(2)) {
        let a = &m.w[0];
        let b = m.w.last().unwrap();
        let kab = kernel(a, b, &m.theta, false).unwrap();
        prop_assert_eq!(kab, kernel(b, a, &m.theta, false).unwrap());
        prop_assert!(kab > 0.0 && kab <= m.theta.sigma_f2 * (1.0 + 1e-15));
        let kaa = kernel(a, a, &m.theta, true).unwrap();
        prop_assert!((kaa - m.theta.sigma_f2 - m.theta.sigma_n2).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_dense_oracle(m in model_strategy(10), q in prop::collection::vec(-2.0..2.0f64, 4)) {
        let gp = fit(&m);
        let t = &m.theta;
        let q = &q[..t.n_w()];
        let kinv = dense_k(&m).try_inverse().unwrap();
        let kq = DVector::from_iterator(m.w.len(), m.w.iter().map(|wi| se(q, wi, &t.lengthscales, t.sigma_f2)));
        let r = DVector::from_iterator(m.z.len(), m.z.iter().map(|z| z - t.c));
        let mean = t.c + kq.dot(&(&kinv * &r));
        let var = t.sigma_f2 - kq.dot(&(&kinv * &kq));
        let (pm, pv) = gp.posterior_unclamped(q).unwrap();
        prop_assert!((pm - mean).abs() < 1e-8, "{pm} vs {mean}");
        prop_assert!((pv - var).abs() < 1e-8, "{pv} vs {var}");
        prop_assert!(gp.posterior(q).unwrap().variance >= 0.0);

        let n = m.w.len() as f64;
        let lml = -0.5 * r.dot(&(&kinv * &r)) - 0.5 * dense_k(&m).determinant().ln()
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
        prop_assert!((gp.log_marginal_likelihood() - lml).abs() < 1e-8 * (1.0 + lml.abs()));
    }

    #[test]
    fn incremental_model_equals_refit(m in model_strategy(10), extra in prop::collection::vec(-2.0..2.0f64, 4), z in -1.0..1.0f64) {
        let gp = fit(&m);
        let w = extra[..m.theta.n_w()].to_vec();
        prop_assume!(m.w.iter().all(|wi| wi.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>() > 1e-6));
        let grown = with_point(&gp, &w, z).unwrap();
        let mut m2 = m.clone();
        m2.w.push(w.clone());
        m2.z.push(z);
        let refit = fit(&m2);
        prop_assert!(grown.factor().r().rel_frobenius_err(refit.factor().r()) < 1e-10);
        for (a, b) in grown.alpha().iter().zip(refit.alpha()) {
            prop_assert!((a - b).abs() < 1e-7 * (1.0 + b.abs()));
        }

        let shrunk = evict_oldest(&grown).unwrap();
        let mut m3 = m2.clone();
        m3.w.remove(0);
        m3.z.remove(0);
        let refit = fit(&m3);
        prop_assert!(shrunk.factor().r().rel_frobenius_err(refit.factor().r()) < 1e-10);
    }

    #[test]
    fn fifo_keeps_the_newest_points(m in model_strategy(6), cap in 1usize..6, stream in prop::collection::vec(prop::collection::vec(-2.0..2.0f64, 4), 1..10)) {
        let cfg = EvolvingConfig::new(0.0, 0.0, Some(cap)).unwrap();
        let d = m.theta.n_w();
        let mut gp = fit(&m);
        let mut expected: Vec<Vec<f64>> = m.w.clone();
        for (i, s) in stream.iter().enumerate() {
            let w = s[..d].to_vec();
            let p = propose(&gp, &w, 0.1 * i as f64, &cfg).unwrap();
            if let Some(c) = p.candidate {
                expected.push(w);
                if expected.len() > cap {
                    expected.remove(0);
                }
                gp = c;
            }
            prop_assert!(gp.n() <= cap.max(m.w.len()));
        }
        let tail = &expected[expected.len() - gp.n()..];
        prop_assert_eq!(gp.data().regressors(), tail);
    }

    #[test]
    fn mean_gradient_matches_finite_differences(m in model_strategy(8), q in prop::collection::vec(-2.0..2.0f64, 4)) {
        let gp = fit(&m);
        let q = &q[..m.theta.n_w()];
        let g = gp.posterior_mean_gradient(q).unwrap();
        let h = 1e-6;
        for i in 0..q.len() {
            let (mut a, mut b) = (q.to_vec(), q.to_vec());
            a[i] += h;
            b[i] -= h;
            let fd = (gp.posterior_mean(&a).unwrap() - gp.posterior_mean(&b).unwrap()) / (2.0 * h);
            prop_assert!((g[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{} vs {}", g[i], fd);
        }
    }
}
