use cotprobe::probe::{
    balanced_class_weights, fit_logistic, loss_and_gradient, predict_scores, standardization, stratified_split,
    train_probe, ClassWeights, SplitSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Instance {
    z: DMatrix<f64>,
    y: Vec<bool>,
}

/// Noisy labels from a random linear rule, guaranteed to contain both classes.
fn instance(seed: u64, n: usize, k: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
    let z = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
    let mut y: Vec<bool> = (0..n)
        .map(|r| {
            let m: f64 = (0..k).map(|c| z[(r, c)] * beta[c]).sum();
            let noise: f64 = StandardNormal.sample(&mut rng);
            m + noise > 0.0
        })
        .collect();
    y[0] = true;
    y[1] = false;
    Instance { z, y }
}

fn rel_inf_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-12);
    diff / scale
}

#[test]
fn gradient_matches_central_differences_on_fifty_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        let n = rng.random_range(5..60);
        let k = rng.random_range(1..8);
        let inst = instance(case, n, k);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b = rng.random_range(-1.0..1.0);
        let cw = ClassWeights {
            w_pos: rng.random_range(0.2..3.0),
            w_neg: rng.random_range(0.2..3.0),
        };
        let lambda = rng.random_range(0.01..5.0);
        let (_, grad) = loss_and_gradient(&w, b, &inst.z, &inst.y, cw, lambda);
        let h = 1e-5;
        let mut fd = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let eval = |delta: f64| {
                let mut w2 = w.clone();
                let mut b2 = b;
                if j < k {
                    w2[j] += delta;
                } else {
                    b2 += delta;
                }
                loss_and_gradient(&w2, b2, &inst.z, &inst.y, cw, lambda).0
            };
            fd.push((eval(h) - eval(-h)) / (2.0 * h));
        }
        worst = worst.max(rel_inf_error(&grad, &fd));
    }
    assert!(worst <= 1e-5, "worst relative error {worst:e}");
}

#[test]
fn separable_toy_set_is_fit_perfectly() {
    let pts = [
        (2.0, 1.0, true),
        (1.5, 2.5, true),
        (3.0, 0.5, true),
        (2.5, 2.0, true),
        (-1.0, -2.0, false),
        (-2.5, 0.5, false),
        (-0.5, -1.5, false),
        (-2.0, -1.0, false),
    ];
    let z = DMatrix::from_fn(pts.len(), 2, |r, c| if c == 0 { pts[r].0 } else { pts[r].1 });
    let y: Vec<bool> = pts.iter().map(|p| p.2).collect();
    let cw = balanced_class_weights(&y).unwrap();
    let model = train_probe(&z, &y, cw, 1.0, 1e-8, 500).unwrap();
    let s = model.scores_from_features(&z).unwrap();
    for (score, label) in s.iter().zip(&y) {
        assert_eq!(*score > 0.5, *label, "score {score} for label {label}");
    }
}

/// Balanced weights with n_pos = r·n_neg equal, up to a rescaled λ, unit weights
/// with every negative repeated r times.
fn duplication_gap(seed: u64, n_neg: usize, ratio: usize, minority_positive: bool, lambda: f64) -> f64 {
    let n_major = ratio * n_neg;
    let inst = instance(seed, n_major + n_neg, 4);
    let mut y = vec![!minority_positive; n_major];
    y.extend(std::iter::repeat_n(minority_positive, n_neg));
    let cw = balanced_class_weights(&y).unwrap();
    let weighted = fit_logistic(&inst.z, &y, cw, lambda, 1e-10, 500).unwrap();

    let mut rows: Vec<usize> = (0..n_major).collect();
    for i in n_major..n_major + n_neg {
        rows.extend(std::iter::repeat_n(i, ratio));
    }
    let z_dup = DMatrix::from_fn(rows.len(), 4, |r, c| inst.z[(rows[r], c)]);
    let y_dup: Vec<bool> = rows.iter().map(|&i| y[i]).collect();
    let majority_weight = cw.of(!minority_positive);
    let dup = fit_logistic(&z_dup, &y_dup, ClassWeights::UNIFORM, lambda / majority_weight, 1e-10, 500).unwrap();

    let mut a = weighted.weights.clone();
    a.push(weighted.intercept);
    let mut b = dup.weights.clone();
    b.push(dup.intercept);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn duplicate_minority_equivalence() {
    assert!(duplication_gap(1, 40, 2, false, 1.0) <= 1e-4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn duplication_equivalence_on_integer_ratios(
        seed in any::<u64>(), n_neg in 6usize..40, ratio in 2usize..5, minority_positive in any::<bool>(), lambda in 0.1f64..4.0,
    ) {
        prop_assert!(duplication_gap(seed, n_neg, ratio, minority_positive, lambda) <= 1e-4);
    }

    #[test]
    fn balanced_weights_preserve_total(labels in prop::collection::vec(any::<bool>(), 2..300)) {
        let pos = labels.iter().filter(|l| **l).count();
        let neg = labels.len() - pos;
        prop_assume!(pos > 0 && neg > 0);
        let cw = balanced_class_weights(&labels).unwrap();
        prop_assert!((cw.w_pos * pos as f64 + cw.w_neg * neg as f64 - labels.len() as f64).abs() <= 1e-9);
    }

    #[test]
    fn loss_is_below_chord(seed in any::<u64>(), s in 0.0f64..1.0) {
        let inst = instance(seed, 30, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let p: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let cw = ClassWeights { w_pos: 1.3, w_neg: 0.7 };
        let loss = |v: &[f64]| loss_and_gradient(&v[..3], v[3], &inst.z, &inst.y, cw, 0.8).0;
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (1.0 - s) * a + s * b).collect();
        let chord = (1.0 - s) * loss(&p) + s * loss(&q);
        prop_assert!(loss(&mid) <= chord + 1e-9 * chord.abs().max(1.0));
    }

    #[test]
    fn trained_probes_are_standardized_bounded_and_deterministic(seed in any::<u64>(), n in 20usize..120, k in 1usize..10, lambda in 0.05f64..5.0) {
        let inst = instance(seed, n, k);
        // shift and scale features so standardization has work to do
        let z = DMatrix::from_fn(n, k, |r, c| 3.0 * c as f64 + (1.0 + c as f64) * inst.z[(r, c)]);
        let (means, scales) = standardization(&z);
        for c in 0..k {
            let col: Vec<f64> = (0..n).map(|r| (z[(r, c)] - means[c]) / scales[c]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(m.abs() <= 1e-9);
            prop_assert!((v - 1.0).abs() <= 1e-6);
        }
        let cw = balanced_class_weights(&inst.y).unwrap();
        let a = train_probe(&z, &inst.y, cw, lambda, 1e-8, 500).unwrap();
        let b = train_probe(&z, &inst.y, cw, lambda, 1e-8, 500).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        prop_assert!(a.feature_scales.iter().all(|s| *s > 0.0));

        let n_eff: f64 = inst.y.iter().map(|&l| cw.of(l)).sum();
        let bound = (2.0 * n_eff * std::f64::consts::LN_2 / lambda).sqrt();
        let norm = a.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        prop_assert!(norm <= bound, "{} > {}", norm, bound);
    }

    #[test]
    fn split_is_stratified_partition(n_pos in 2usize..80, n_neg in 2usize..80, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let labels: Vec<bool> = (0..n_pos + n_neg).map(|i| i % (n_pos + n_neg) < n_pos).collect();
        let spec = SplitSpec { train_fraction: frac, seed };
        let split = stratified_split(&labels, &spec).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (class, count) in [(true, n_pos), (false, n_neg)] {
            let in_train = split.train.iter().filter(|&&i| labels[i] == class).count();
            let want = ((frac * count as f64).round() as usize).clamp(1, count - 1);
            prop_assert_eq!(in_train, want);
        }
        prop_assert_eq!(stratified_split(&labels, &spec).unwrap(), split);
    }
}

#[test]
fn fifteen_hundred_labels_keep_fold_priors_aligned() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for prior in [0.851, 0.586, 0.321] {
        let labels: Vec<bool> = (0..1500).map(|_| rng.random_bool(prior)).collect();
        let split = stratified_split(&labels, &SplitSpec { train_fraction: 0.8, seed: 3 }).unwrap();
        let prior_of = |idx: &[usize]| idx.iter().filter(|&&i| labels[i]).count() as f64 / idx.len() as f64;
        let gap_in_examples = (prior_of(&split.test) - prior_of(&split.train)).abs() * split.test.len() as f64;
        assert!(gap_in_examples <= 1.0, "prior {prior}: gap {gap_in_examples}");
    }
}

#[test]
fn five_and_five_gives_four_and_four() {
    let labels: Vec<bool> = (0..10).map(|i| i < 5).collect();
    let split = stratified_split(&labels, &SplitSpec { train_fraction: 0.8, seed: 9 }).unwrap();
    assert_eq!(split.train.iter().filter(|&&i| labels[i]).count(), 4);
    assert_eq!(split.train.iter().filter(|&&i| !labels[i]).count(), 4);
}

#[test]
fn raw_inputs_flow_through_pca_and_standardization() {
    use cotprobe::linalg_pca::fit_pca;
    let inst = instance(7, 80, 6);
    let x = DMatrix::from_fn(80, 12, |r, c| if c < 6 { inst.z[(r, c)] } else { 0.1 * inst.z[(r, c - 6)] + 1.0 });
    let pca = fit_pca(&x, 5).unwrap();
    let z = pca.project(&x).unwrap();
    let cw = balanced_class_weights(&inst.y).unwrap();
    let model = train_probe(&z, &inst.y, cw, 1.0, 1e-8, 500).unwrap().with_pca(pca);
    let direct = predict_scores(&model, &x).unwrap();
    assert!(direct.iter().all(|s| *s > 0.0 && *s < 1.0));
    assert!(predict_scores(&model, &DMatrix::zeros(2, 11)).is_err());
}
