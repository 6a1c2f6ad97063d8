//! Randomized invariants over the public API.

use disvm::bench::{outer_splits, Protocol};
use disvm::domain::{encode_domains, recode_labels, Dataset, Label, Role};
use disvm::kernel::{gram, KernelSpec};
use disvm::qp::{box_violation, kkt_residuals, solve_box_qp, solve_qp, BoxQp, QpProblem};
use disvm::{fit, fit_mida, fit_pca, fit_svm, simplified_hsic, DisvmParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Labeled two-class data over `domains` experiments with two subjects each,
/// plus `unlabeled` extra samples.
fn random_dataset(seed: u64, n: usize, unlabeled: usize, domains: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n + unlabeled;
    let mut x = normal(&mut rng, 3, total);
    let mut labels = Vec::with_capacity(total);
    let mut roles = Vec::with_capacity(total);
    for i in 0..total {
        let y = if i % 2 == 0 { Label::Positive } else { Label::Negative };
        x[(0, i)] += 0.7 * y.value();
        x[(1, i)] += (i % domains) as f64;
        if i < n {
            labels.push(y);
            roles.push(Role::Source);
        } else {
            labels.push(Label::Unlabeled);
            roles.push(Role::TargetTest);
        }
    }
    Dataset::new(
        x,
        (0..total).map(|i| format!("x{i}")).collect(),
        (0..total).map(|i| format!("e{}", i % domains)).collect(),
        (0..total).map(|i| format!("e{}-s{}", i % domains, (i / domains) % 2)).collect(),
        labels,
        roles,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn converged_qp_solutions_certify(seed in any::<u64>(), m in 2usize..12, rows in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = normal(&mut rng, m, m);
        let q = b.tr_mul(&b);
        let c = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = normal(&mut rng, rows, m);
        // A known interior point keeps the problem feasible.
        let x0 = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let h = &g * &x0 + DVector::from_fn(rows, |_, _| rng.random_range(0.1..1.0));
        let p = QpProblem::new(q, c, g, h).unwrap();
        let sol = solve_qp(&p, 1e-6, 500).unwrap();
        let kkt = kkt_residuals(&p, &sol.x, &sol.duals).unwrap();
        prop_assert!(kkt.max() <= 1e-6, "{:?}", kkt);
    }

    #[test]
    fn box_solutions_certify(seed in any::<u64>(), m in 1usize..25, upper in 0.01f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = rng.random_range(1..=m);
        let b = normal(&mut rng, rank, m);
        let p = BoxQp {
            q: b.tr_mul(&b),
            c: DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)),
            lower: DVector::zeros(m),
            upper: DVector::from_element(m, upper),
        };
        let sol = solve_box_qp(&p, 1e-6, 100_000).unwrap();
        let grad = &p.q * &sol.x + &p.c;
        prop_assert!(box_violation(&sol.x, &grad, &p.lower, &p.upper) <= 1e-6 * upper.max(1.0));
        prop_assert!(sol.x.iter().all(|&v| (0.0..=upper).contains(&v)));
    }

    #[test]
    fn objective_matches_its_terms(seed in any::<u64>(), c in 0.01f64..100.0, lambda in 0.0f64..50.0) {
        let ds = random_dataset(seed, 16, 4, 2);
        let params = DisvmParams { c, lambda, ..DisvmParams::default() };
        let model = fit(&ds, &params).unwrap();
        let k = gram(ds.features(), ds.features(), &KernelSpec::Linear).unwrap().into_entries();
        let ka = encode_domains(&ds).unwrap().kernel();
        let y = recode_labels(&ds);
        let f = &k * &model.beta;
        let slack: f64 = y.labeled_indices().iter().map(|&i| (1.0 - y.values()[i] * f[i]).max(0.0)).sum();
        let pen = simplified_hsic(&model.beta, &k, &ka).unwrap().value;
        let want = 0.5 * model.beta.dot(&f) + c * slack + 0.5 * lambda * pen;
        prop_assert!((model.diagnostics.objective - want).abs() <= 1e-8 * want.abs().max(1e-12));
        prop_assert!(model.diagnostics.kkt.max() <= params.tol);
        prop_assert!(pen >= -1e-10);
    }

    #[test]
    fn penalty_is_monotone_in_lambda(seed in any::<u64>(), c in 0.1f64..10.0) {
        let ds = random_dataset(seed, 20, 6, 3);
        let mut prev = f64::INFINITY;
        for lambda in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0] {
            let model = fit(&ds, &DisvmParams { c, lambda, ..DisvmParams::default() }).unwrap();
            prop_assert!(model.diagnostics.simplified_hsic <= prev + 1e-8,
                "lambda {}: {} after {}", lambda, model.diagnostics.simplified_hsic, prev);
            prev = model.diagnostics.simplified_hsic;
        }
    }

    #[test]
    fn unpenalized_model_matches_svm(seed in any::<u64>(), c in 0.05f64..20.0) {
        let ds = random_dataset(seed, 24, 0, 2);
        let model = fit(&ds, &DisvmParams { c, lambda: 0.0, ..DisvmParams::default() }).unwrap();
        let svm = fit_svm(ds.features(), ds.labels(), KernelSpec::Linear, c, 1e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let queries = normal(&mut rng, 3, 100);
        let a = model.predict(&queries).unwrap();
        let b = svm.predict(&queries).unwrap();
        let agree = a.iter().zip(&b).filter(|(p, q)| p == q).count();
        prop_assert!(agree >= 99);
    }

    #[test]
    fn projections_are_orthonormal(seed in any::<u64>(), h in 1usize..6) {
        let ds = random_dataset(seed, 18, 0, 3);
        let domains = encode_domains(&ds).unwrap();
        let eye = DMatrix::<f64>::identity(h, h);
        let mida = fit_mida(ds.features(), &domains, h, 1.0, KernelSpec::Rbf { gamma: 0.5 }).unwrap();
        prop_assert!((mida.w.tr_mul(&mida.w) - &eye).amax() <= 1e-8);
        let pca = fit_pca(ds.features(), h.min(3)).unwrap();
        let eye = DMatrix::<f64>::identity(h.min(3), h.min(3));
        prop_assert!((pca.w.tr_mul(&pca.w) - eye).amax() <= 1e-8);
    }

    #[test]
    fn outer_folds_partition_every_repeat(seed in any::<u64>(), n in 10usize..60, folds in 2usize..6) {
        let labels: Vec<Label> = (0..n).map(|i| if i % 3 == 0 { Label::Negative } else { Label::Positive }).collect();
        let protocol = Protocol { outer_repeats: 3, outer_folds: folds, seed, ..Protocol::default() };
        let splits = outer_splits(&labels, &protocol).unwrap();
        prop_assert_eq!(splits.len(), 3 * folds);
        for repeat in 0..3 {
            let mut seen = vec![0usize; n];
            for s in splits.iter().filter(|s| s.repeat == repeat) {
                for &i in &s.test {
                    seen[i] += 1;
                }
                prop_assert_eq!(s.train.len() + s.test.len(), n);
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
