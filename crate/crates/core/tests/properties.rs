use chrono::NaiveDate;
use proptest::prelude::*;

use hmdlf::baselines::{fit_linear, rmse};
use hmdlf::data::{read_csv, window, write_csv, Dataset, Schema, Windows};
use hmdlf::layers::{Attention, Gru, Layer};
use hmdlf::model::{Model, ModelConfig, ModelKind};
use hmdlf::training::{prepare, Adam, AdamConfig, Scaler};
use hmdlf::{Rng, Tensor};

fn dataset(columns: Vec<Vec<f64>>) -> Dataset {
    let len = columns[0].len();
    let t0 = NaiveDate::from_ymd_opt(2014, 1, 7).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let ts = (0..len).map(|i| t0 + chrono::Duration::minutes(15 * i as i64)).collect();
    let names = ["flow", "speed", "journey_time"][..columns.len()]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Dataset::new(ts, 15, names, columns).unwrap()
}

fn series(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(v in prop::collection::vec(-30.0..30.0f64, 1..12), c in -50.0..50.0f64) {
        let a = Tensor::vector(&v).softmax().unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = Tensor::vector(&shifted).softmax().unwrap();
        prop_assert!((a.sum() - 1.0).abs() <= 1e-12);
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let a = rng.uniform_tensor(&[3, 3], -1.0, 1.0);
        let b = rng.uniform_tensor(&[3, 3], -1.0, 1.0);
        let c = rng.uniform_tensor(&[3, 3], -1.0, 1.0);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn rmse_scales_with_affine_maps(
        pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..40),
        a in -10.0..10.0f64,
        b in -100.0..100.0f64,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let base = rmse(&x, &y).unwrap();
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let ay: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let scaled = rmse(&ax, &ay).unwrap();
        prop_assert!(scaled >= 0.0);
        // Absolute 1e-12 on values of order 1e3 is below the rounding of
        // a·x + b itself, so the bound is taken relative to the data scale.
        let scale = 1.0 + a.abs() * 100.0 + b.abs();
        prop_assert!((scaled - a.abs() * base).abs() <= 1e-12 * scale, "{} vs {}", scaled, a.abs() * base);
    }

    #[test]
    fn scaler_round_trips_in_range_values(v in series(2..50)) {
        let s = Scaler::fit_columns(&[("flow", &v)]).unwrap();
        let y = s.apply_slice("flow", &v).unwrap();
        prop_assert!(y.iter().all(|&u| (0.0..=1.0).contains(&u)));
        let back = s.invert_slice("flow", &y).unwrap();
        let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in v.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * span.max(1.0));
        }
    }

    #[test]
    fn windows_are_pure_and_targets_exact(f in series(3..60), w in 1usize..8) {
        prop_assume!(f.len() > w);
        let s: Vec<f64> = f.iter().map(|x| -x).collect();
        let d = dataset(vec![f.clone(), s]);
        let a = window(&d, w).unwrap();
        prop_assert_eq!(&a, &window(&d, w).unwrap());
        prop_assert_eq!(a.len(), f.len() - w);
        for k in 0..a.len() {
            prop_assert_eq!(a.targets[k].to_bits(), f[k + w].to_bits());
            prop_assert_eq!(a.input(0, k), &f[k..k + w]);
        }
    }

    #[test]
    fn linear_fit_ignores_sample_order(seed in any::<u64>(), lambda in prop::sample::select(vec![0.0, 0.1, 1.0])) {
        let mut rng = Rng::new(seed);
        let f: Vec<f64> = (0..40).map(|_| rng.uniform(0.0, 1.0)).collect();
        let s: Vec<f64> = (0..40).map(|_| rng.uniform(0.0, 1.0)).collect();
        let samples = window(&dataset(vec![f, s]), 3).unwrap();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        rng.shuffle(&mut order);
        let a = fit_linear(&samples, lambda).unwrap();
        let b = fit_linear(&samples.subset(&order), lambda).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn ridge_shrinks_coefficients(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let f: Vec<f64> = (0..30).map(|_| rng.uniform(0.0, 1.0)).collect();
        let samples = window(&dataset(vec![f]), 4).unwrap();
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0] {
            let m = fit_linear(&samples, lambda).unwrap();
            let norm: f64 = m.weights().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= last * (1.0 + 1e-9), "lambda {}: {} > {}", lambda, norm, last);
            last = norm;
        }
    }

    #[test]
    fn attention_weights_form_a_distribution(seed in any::<u64>(), t in 1usize..10, h in 1usize..6, a in 1usize..6) {
        let mut rng = Rng::new(seed);
        let mut layer = Attention::new(h, a, &mut rng).unwrap();
        let states = rng.uniform_tensor(&[2, t, h], -1.0, 1.0);
        let (r, alpha) = layer.attend(&states).unwrap();
        for b in 0..2 {
            let row = &alpha.data()[b * t..(b + 1) * t];
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for j in 0..h {
                let col: Vec<f64> = (0..t).map(|s| states.data()[(b * t + s) * h + j]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = r.data()[b * h + j];
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn gru_gates_and_states_stay_bounded(seed in any::<u64>(), t in 1usize..8, d in 1usize..4, h in 1usize..6, bias in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let mut gru = Gru::new(d, h, bias, &mut rng).unwrap();
        let x = rng.uniform_tensor(&[3, t, d], -5.0, 5.0);
        gru.forward(&x, false).unwrap();
        let tr = gru.trace().unwrap();
        prop_assert!(tr.update.data().iter().all(|&z| z > 0.0 && z < 1.0));
        prop_assert!(tr.reset.data().iter().all(|&r| r > 0.0 && r < 1.0));
        prop_assert!(tr.candidate.data().iter().all(|&n| n > -1.0 && n < 1.0));
        prop_assert!(tr.states.data().iter().all(|&s| s > -1.0 && s < 1.0));
        for b in 0..3 {
            for s in 0..t {
                for j in 0..h {
                    let z = tr.update.data()[(b * t + s) * h + j];
                    let n = tr.candidate.data()[(b * t + s) * h + j];
                    let prev = tr.states.data()[(b * (t + 1) + s) * h + j];
                    let next = tr.states.data()[(b * (t + 1) + s + 1) * h + j];
                    prop_assert!((next - ((1.0 - z) * prev + z * n)).abs() <= 1e-12);
                    prop_assert!(next >= prev.min(n) - 1e-15 && next <= prev.max(n) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn adam_moments_mirror_parameters(seed in any::<u64>(), steps in 1u64..6) {
        let mut rng = Rng::new(seed);
        let mut model = Model::new(toy(ModelKind::Gru, &["flow"], seed)).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &model.params());
        for k in 0..steps {
            for p in model.params_mut() {
                p.grad = rng.uniform_tensor(p.value.shape(), -1.0, 1.0);
            }
            adam.step(&mut model.params_mut()).unwrap();
            prop_assert_eq!(adam.steps(), k + 1);
        }
        let (m, v) = adam.moments();
        for ((p, m), v) in model.params().iter().zip(m).zip(v) {
            prop_assert_eq!(p.value.shape(), m.shape());
            prop_assert_eq!(p.value.shape(), v.shape());
            prop_assert!(v.data().iter().all(|&x| x >= 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn silent_second_branch_reduces_to_single_modality(seed in any::<u64>()) {
        let single_cfg = toy(ModelKind::CnnGruAttention, &["flow"], seed);
        let mut single = Model::new(single_cfg).unwrap();
        let mut multi = Model::new(toy(ModelKind::Hmdlf, &["flow", "speed"], seed ^ 0x5eed)).unwrap();
        let source: Vec<(String, Tensor)> =
            single.named_params().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
        let names: Vec<String> = multi.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(multi.params_mut()) {
            if name.starts_with("speed/") {
                p.value.fill(0.0);
                continue;
            }
            let (_, v) = source.iter().find(|(n, _)| n == name).unwrap();
            if v.shape() == p.value.shape() {
                p.value = v.clone();
            } else {
                // The first fusion layer sees both branches: copy the rows
                // fed by the flow branch and leave the rest as initialized.
                let n = v.len();
                p.value.data_mut()[..n].copy_from_slice(v.data());
            }
        }
        let mut rng = Rng::new(seed);
        let x = rng.uniform_tensor(&[4, 8], 0.0, 1.0);
        let a = single.predict(&[x.clone()]).unwrap();
        let b = multi.predict(&[x, Tensor::zeros(&[4, 8])]).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()), "{} vs {}", u, v);
        }
    }

    #[test]
    fn scaler_ignores_test_period_values(seed in any::<u64>(), bump in 1.0..1e4f64) {
        let mut rng = Rng::new(seed);
        let f: Vec<f64> = (0..60).map(|_| rng.uniform(0.0, 100.0)).collect();
        let s: Vec<f64> = (0..60).map(|_| rng.uniform(50.0, 120.0)).collect();
        let base = prepare(&dataset(vec![f.clone(), s.clone()]), 4, 48, 0.25).unwrap();
        let mut f2 = f;
        let mut s2 = s;
        for i in 48..60 {
            f2[i] += bump;
            s2[i] -= bump;
        }
        let mutated = prepare(&dataset(vec![f2, s2]), 4, 48, 0.25).unwrap();
        prop_assert_eq!(base.scaler, mutated.scaler);
    }

    #[test]
    fn csv_export_then_ingest_is_a_fixed_point(f in series(2..30), seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let s: Vec<f64> = f.iter().map(|_| rng.uniform(1.0, 120.0)).collect();
        let d = dataset(vec![f, s]);
        let names = d.names().to_vec();
        let mut first = Vec::new();
        write_csv(&d, &mut first, &["note".into()]).unwrap();
        let again = read_csv(first.as_slice(), "mem", &Schema::default(), &names).unwrap();
        prop_assert_eq!(&again, &d);
        let mut second = Vec::new();
        write_csv(&again, &mut second, &["note".into()]).unwrap();
        prop_assert_eq!(first, second);
    }
}

fn toy(kind: ModelKind, modalities: &[&str], seed: u64) -> ModelConfig {
    let mut c = ModelConfig::new(kind, modalities, 8);
    c.branch.conv_filters = 3;
    c.branch.hidden = 4;
    c.branch.attention_width = 4;
    c.head_hidden = 5;
    c.seed = seed;
    c
}

#[test]
fn ridge_limit_matches_least_squares() {
    let mut rng = Rng::new(17);
    let f: Vec<f64> = (0..50).map(|_| rng.uniform(0.0, 1.0)).collect();
    let samples = window(&dataset(vec![f]), 5).unwrap();
    let ols = fit_linear(&samples, 0.0).unwrap();
    let ridge = fit_linear(&samples, 1e-10).unwrap();
    for (a, b) in ols.coefficients.iter().zip(&ridge.coefficients) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

/// Minimizes the same objective by plain gradient descent.
fn gradient_descent(samples: &Windows, lambda: f64) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..samples.len())
        .map(|k| std::iter::once(1.0).chain(samples.features(k)).collect())
        .collect();
    let p = rows[0].len();
    // Step below 1/L with L bounded by the trace of XᵀX + λI.
    let trace: f64 = rows.iter().flatten().map(|x| x * x).sum::<f64>() + lambda * p as f64;
    let step = 1.0 / trace;
    let mut beta = vec![0.0; p];
    for _ in 0..2_000_000 {
        let mut grad = vec![0.0; p];
        for (row, y) in rows.iter().zip(&samples.targets) {
            let r: f64 = row.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() - y;
            for (g, x) in grad.iter_mut().zip(row) {
                *g += r * x;
            }
        }
        for j in 1..p {
            grad[j] += lambda * beta[j];
        }
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < 1e-13 {
            break;
        }
        for (b, g) in beta.iter_mut().zip(&grad) {
            *b -= step * g;
        }
    }
    beta
}

#[test]
fn linear_fit_agrees_with_gradient_descent() {
    let mut rng = Rng::new(3);
    let f: Vec<f64> = (0..12).map(|_| rng.uniform(0.0, 1.0)).collect();
    let samples = window(&dataset(vec![f]), 2).unwrap();
    assert_eq!(samples.len(), 10);
    for lambda in [0.0, 0.5] {
        let direct = fit_linear(&samples, lambda).unwrap();
        let oracle = gradient_descent(&samples, lambda);
        for (a, b) in direct.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-4, "lambda {lambda}: {a} vs {b}");
        }
    }
}

#[test]
fn evaluation_forward_is_deterministic() {
    let mut model = Model::new(toy(ModelKind::Hmdlf, &["flow", "speed"], 9)).unwrap();
    let mut rng = Rng::new(1);
    let x = vec![rng.uniform_tensor(&[3, 8], 0.0, 1.0), rng.uniform_tensor(&[3, 8], 0.0, 1.0)];
    let a = model.predict(&x).unwrap();
    let b = model.predict(&x).unwrap();
    assert_eq!(a, b);
}
