use patchslim::training::{gen_toy_dataset, Batch, ToyDatasetSpec};

/// Mean of the non-class tokens of each sample.
fn mean_tokens(data: &Batch) -> Vec<Vec<f64>> {
    data.inputs
        .iter()
        .map(|x| {
            (0..x.cols())
                .map(|c| (0..x.rows()).map(|r| x.get(r, c)).sum::<f64>() / x.rows() as f64)
                .collect()
        })
        .collect()
}

/// Multinomial logistic regression by full-batch gradient descent; returns held-out accuracy.
fn linear_probe(train: &Batch, test: &Batch, epochs: usize, lr: f64) -> (f64, f64) {
    let (xs, ys) = (mean_tokens(train), &train.labels);
    let k = train.num_classes;
    let d = xs[0].len();
    // Standardize with training statistics so one step size suits every feature.
    let mu: Vec<f64> = (0..d)
        .map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64)
        .collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            (xs.iter().map(|x| (x[j] - mu[j]).powi(2)).sum::<f64>() / xs.len() as f64)
                .sqrt()
                .max(1e-12)
        })
        .collect();
    let norm = |x: &[f64]| -> Vec<f64> { (0..d).map(|j| (x[j] - mu[j]) / sd[j]).collect() };
    let xs: Vec<Vec<f64>> = xs.iter().map(|x| norm(x)).collect();
    let mut w = vec![vec![0.0; d + 1]; k];
    let logits = |w: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
        w.iter()
            .map(|wc| wc[d] + (0..d).map(|j| wc[j] * x[j]).sum::<f64>())
            .collect()
    };
    for _ in 0..epochs {
        let mut grad = vec![vec![0.0; d + 1]; k];
        for (x, &y) in xs.iter().zip(ys) {
            let z = logits(&w, x);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let g = e[c] / s - if c == y { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[c][j] += g * x[j];
                }
                grad[c][d] += g;
            }
        }
        for c in 0..k {
            for j in 0..=d {
                w[c][j] -= lr * grad[c][j] / xs.len() as f64;
            }
        }
    }
    let accuracy = |data: &Batch, xs: &[Vec<f64>]| {
        let hits = xs
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| {
                let z = logits(&w, x);
                (0..k).max_by(|&a, &b| z[a].total_cmp(&z[b])) == Some(y)
            })
            .count();
        hits as f64 / data.len() as f64
    };
    let test_xs: Vec<Vec<f64>> = mean_tokens(test).iter().map(|x| norm(x)).collect();
    (accuracy(train, &xs), accuracy(test, &test_xs))
}

#[test]
fn mean_token_linear_probe_stays_below_sixty_percent() {
    let spec = ToyDatasetSpec::default();
    let train: Batch = gen_toy_dataset(&spec, 1).unwrap();
    let test: Batch = gen_toy_dataset(
        &ToyDatasetSpec {
            sample_count: 1000,
            ..spec
        },
        2,
    )
    .unwrap();
    let (train_acc, test_acc) = linear_probe(&train, &test, 300, 0.5);
    eprintln!("mean-token probe: train {train_acc:.4} held-out {test_acc:.4}");
    assert!(test_acc < 0.60, "held-out probe accuracy {test_acc}");
    assert!(train_acc < 0.60, "training probe accuracy {train_acc}");
}

#[test]
fn spec_round_trips_and_fills_missing_fields() {
    let spec = ToyDatasetSpec::default();
    let text = serde_json::to_string(&spec).unwrap();
    assert_eq!(serde_json::from_str::<ToyDatasetSpec>(&text).unwrap(), spec);
    let partial: ToyDatasetSpec = serde_json::from_str(r#"{"num_classes": 4}"#).unwrap();
    assert_eq!(
        partial,
        ToyDatasetSpec {
            num_classes: 4,
            ..ToyDatasetSpec::default()
        }
    );
}

mod data {
    use patchslim::training::{
        gen_toy_dataset, load_image_grid_csv, toy_prototypes, Batch, ToyDatasetSpec,
    };

    #[test]
    fn same_seed_identical() {
        let spec = ToyDatasetSpec {
            sample_count: 32,
            ..Default::default()
        };
        let a: Batch = gen_toy_dataset(&spec, 7).unwrap();
        let b: Batch = gen_toy_dataset(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c: Batch = gen_toy_dataset(&spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_too_many_informative_tokens() {
        let spec = ToyDatasetSpec {
            informative_tokens_per_sample: 16,
            ..Default::default()
        };
        assert!(gen_toy_dataset::<f64>(&spec, 1).is_err());
    }

    #[test]
    fn noiseless_single_token_is_separable() {
        let spec = ToyDatasetSpec {
            noise_scale: 0.0,
            marker_scale: 0.0,
            informative_tokens_per_sample: 1,
            sample_count: 200,
            ..Default::default()
        };
        let protos = toy_prototypes(&spec);
        let data: Batch = gen_toy_dataset(&spec, 3).unwrap();
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            let pos = (0..x.rows())
                .find(|&r| x.row(r).iter().any(|&v| v != 0.0))
                .expect("one informative token");
            let token = x.row(pos);
            let mut best = (f64::INFINITY, usize::MAX);
            for (c, variants) in protos.iter().enumerate() {
                for p in variants {
                    for sign in [1.0, -1.0] {
                        let dist: f64 = token
                            .iter()
                            .zip(p.row(0))
                            .map(|(a, b)| (a - sign * b).powi(2))
                            .sum();
                        if dist < best.0 {
                            best = (dist, c);
                        }
                    }
                }
            }
            assert_eq!(best.1, y);
        }
    }

    #[test]
    fn image_grid_tokenization() {
        let csv = "1, 1,2,3,4, 5,6,7,8, 9,10,11,12, 13,14,15,16\n";
        let b: Batch = load_image_grid_csv(csv.as_bytes(), 4, 4, 2, 3).unwrap();
        assert_eq!(b.labels, vec![1]);
        let x = &b.inputs[0];
        assert_eq!(x.shape(), (4, 4));
        assert_eq!(x.row(0), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(x.row(1), &[3.0, 4.0, 7.0, 8.0]);
        assert_eq!(x.row(3), &[11.0, 12.0, 15.0, 16.0]);
    }

    #[test]
    fn image_grid_rejects_bad_rows() {
        assert!(load_image_grid_csv::<f64, _>("0,1,2\n".as_bytes(), 2, 2, 1, 2).is_err());
        assert!(load_image_grid_csv::<f64, _>("5,1,2,3,4\n".as_bytes(), 2, 2, 1, 2).is_err());
        assert!(load_image_grid_csv::<f64, _>("0,1,2,3,4\n".as_bytes(), 2, 2, 3, 2).is_err());
    }
}
