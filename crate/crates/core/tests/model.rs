use patchslim::model::compact::compact_model_forward;
use patchslim::model::reference::dense_model_reference;
use patchslim::model::{model_forward, MaskSchedule, ModelConfig, ModelParams, PatchMask};
use patchslim::{Error, Matrix, Rng};
use proptest::prelude::*;

fn config(use_layernorm: bool) -> ModelConfig {
    ModelConfig {
        layers: 3,
        patches: 8,
        dim: 8,
        heads: 2,
        hidden_dim: 16,
        use_layernorm,
        token_dim: 5,
        num_classes: 4,
    }
}

fn raw(cfg: &ModelConfig, rng: &mut Rng) -> Matrix<f64> {
    Matrix::from_fn(cfg.patches - 1, cfg.token_dim, |_, _| rng.normal())
}

/// Nested schedule from per-layer drop draws; the class token always survives.
fn schedule_from(cfg: &ModelConfig, drops: &[Vec<bool>]) -> MaskSchedule {
    let mut prev = PatchMask::all(cfg.patches);
    let mut masks = Vec::new();
    for d in drops {
        let mut m = prev.clone();
        for i in 1..cfg.patches {
            if d[i] {
                m.set(i, false);
            }
        }
        masks.push(m.clone());
        prev = m;
    }
    MaskSchedule::new(masks, cfg.patches).unwrap()
}

fn active_diff(a: &Matrix<f64>, b: &Matrix<f64>, m: &PatchMask) -> f64 {
    let mut worst: f64 = 0.0;
    for r in m.indices() {
        for c in 0..a.cols() {
            worst = worst.max((a.get(r, c) - b.get(r, c)).abs());
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn masked_forward_matches_dense_oracle(
        seed in 0u64..10_000,
        ln in any::<bool>(),
        drops in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 8), 3),
    ) {
        let cfg = config(ln);
        let mut rng = Rng::new(seed);
        let params = ModelParams::init(&cfg, &mut rng).unwrap();
        let x = raw(&cfg, &mut rng);
        let s = schedule_from(&cfg, &drops);
        let fast = model_forward(&x, &params, Some(&s)).unwrap();
        let dense = dense_model_reference(&x, &params, &s).unwrap();
        for l in 1..=3 {
            let m = s.mask(l);
            prop_assert!(active_diff(&fast.features[l], &dense[l], &m) <= 1e-10);
            for r in 0..8 {
                if !m.get(r) {
                    prop_assert!(fast.features[l].row(r).iter().all(|&v| v == 0.0));
                }
            }
        }
        let compact = compact_model_forward(&x, &params, Some(&s)).unwrap();
        for l in 1..=3 {
            prop_assert!(active_diff(&fast.features[l], &compact.features[l], &s.mask(l)) <= 1e-10);
        }
        prop_assert!(fast.logits.max_abs_diff(&compact.logits).unwrap() <= 1e-10);
    }
}

#[test]
fn all_ones_schedule_is_the_unpruned_forward() {
    let cfg = config(true);
    let mut rng = Rng::new(1);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    for _ in 0..10 {
        let x = raw(&cfg, &mut rng);
        let full = model_forward(&x, &params, None).unwrap();
        let ones = model_forward(&x, &params, Some(&MaskSchedule::all_ones(3, 8))).unwrap();
        for (a, b) in full.features.iter().zip(&ones.features) {
            assert!(a.max_abs_diff(b).unwrap() <= 1e-12);
        }
        assert!(full.logits.max_abs_diff(&ones.logits).unwrap() <= 1e-12);
    }
}

#[test]
fn attention_rows_are_distributions_over_kept_keys() {
    let cfg = config(true);
    let mut rng = Rng::new(2);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let s = schedule_from(
        &cfg,
        &[
            vec![false, true, false, false, true, false, false, false],
            vec![false, false, true, false, false, false, true, false],
            vec![false; 8],
        ],
    );
    let trace = model_forward(&raw(&cfg, &mut rng), &params, Some(&s)).unwrap();
    for l in 1..=3 {
        let (m_in, m_out) = (
            if l == 1 {
                PatchMask::all(8)
            } else {
                s.mask(l - 1)
            },
            s.mask(l),
        );
        for h in 0..2 {
            let p = trace.attention_map(l, h);
            for r in 0..8 {
                let sum: f64 = p.row(r).iter().sum();
                if m_out.get(r) {
                    assert!((sum - 1.0).abs() < 1e-12);
                    for c in 0..8 {
                        assert!(m_in.get(c) || p.get(r, c) == 0.0);
                    }
                } else {
                    assert_eq!(sum, 0.0);
                }
            }
        }
    }
}

#[test]
fn single_block_row_locality() {
    // With one layer, enabling row i changes only row i.
    let cfg = ModelConfig {
        layers: 1,
        ..config(true)
    };
    let mut rng = Rng::new(3);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let x = raw(&cfg, &mut rng);
    let base = PatchMask::parse_bitstring("10100100").unwrap();
    let a = model_forward(
        &x,
        &params,
        Some(&MaskSchedule::new(vec![base.clone()], 8).unwrap()),
    )
    .unwrap();
    let mut more = base.clone();
    more.set(3, true);
    let b = model_forward(
        &x,
        &params,
        Some(&MaskSchedule::new(vec![more], 8).unwrap()),
    )
    .unwrap();
    for r in base.indices() {
        assert_eq!(a.features[1].row(r), b.features[1].row(r));
    }
    assert!(b.features[1].row(3).iter().any(|&v| v != 0.0));
}

#[test]
fn f32_tracks_f64() {
    let cfg = config(true);
    let mut rng = Rng::new(4);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let single: ModelParams<f32> = params.cast();
    let s = schedule_from(
        &cfg,
        &[
            vec![false, true, false, true, false, false, false, false],
            vec![false, false, false, false, false, true, false, false],
            vec![false, false, true, false, false, false, false, true],
        ],
    );
    for _ in 0..5 {
        let x = raw(&cfg, &mut rng);
        let a = model_forward(&x, &params, Some(&s)).unwrap();
        let b = model_forward(&x.cast::<f32>(), &single, Some(&s)).unwrap();
        for (u, v) in a.logits.data().iter().zip(b.logits.data()) {
            assert!((u - *v as f64).abs() < 1e-4 * (1.0 + u.abs()), "{u} vs {v}");
        }
    }
}

#[test]
fn forward_rejects_bad_inputs() {
    let cfg = config(false);
    let params = ModelParams::init(&cfg, &mut Rng::new(5)).unwrap();
    let bad_shape = Matrix::<f64>::zeros(8, 5);
    assert!(matches!(
        model_forward(&bad_shape, &params, None),
        Err(Error::Dimension { .. })
    ));
    let x = Matrix::<f64>::zeros(7, 5);
    let short = MaskSchedule::all_ones(2, 8);
    assert!(model_forward(&x, &params, Some(&short)).is_err());
    let mut too_big = Matrix::<f64>::zeros(7, 5);
    too_big.set(0, 0, f64::MAX);
    let mut loud = params.clone();
    loud.patch_projection.fill(1e300);
    assert!(model_forward(&too_big, &loud, None).is_err());
}

#[test]
fn zero_weight_model_is_residual_identity() {
    let cfg = config(false);
    let mut params = ModelParams::zeros(&cfg);
    params.patch_projection = Matrix::from_fn(5, 8, |r, c| ((r * 3 + c) % 7) as f64 - 3.0);
    let x = raw(&cfg, &mut Rng::new(6));
    let t = model_forward(&x, &params, None).unwrap();
    for l in 1..=3 {
        assert_eq!(t.features[l], t.features[0]);
    }
}

mod config_validation {
    use patchslim::ModelConfig;

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            heads: 3,
            ..ModelConfig::toy()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::toy().validate().is_ok());
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(ModelConfig {
            patches: 1,
            ..ModelConfig::toy()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            layers: 0,
            ..ModelConfig::toy()
        }
        .validate()
        .is_err());
    }
}

mod mask_files {
    use patchslim::{Error, MaskSchedule, PatchMask};

    #[test]
    fn bitstring_round_trip() {
        let m = PatchMask::parse_bitstring("10110").unwrap();
        assert_eq!(m.count(), 3);
        assert_eq!(m.to_bitstring(), "10110");
        assert!(PatchMask::parse_bitstring("10x").is_err());
    }

    #[test]
    fn nesting_violation_reports_layer() {
        let masks = vec![
            PatchMask::parse_bitstring("1110").unwrap(),
            PatchMask::parse_bitstring("1100").unwrap(),
            PatchMask::parse_bitstring("1001").unwrap(),
        ];
        match MaskSchedule::new(masks, 4) {
            Err(Error::MaskNesting { layer }) => assert_eq!(layer, 3),
            other => panic!("expected nesting error, got {other:?}"),
        }
    }

    #[test]
    fn empty_mask_rejected() {
        let masks = vec![PatchMask::all(3), PatchMask::none(3)];
        assert!(matches!(
            MaskSchedule::new(masks, 3),
            Err(Error::InvalidMask(_))
        ));
    }

    #[test]
    fn set_operations() {
        let a = PatchMask::from_indices(5, &[0, 2]);
        let b = PatchMask::from_indices(5, &[0, 3]);
        assert_eq!(a.union(&b).indices(), vec![0, 2, 3]);
        assert_eq!(a.intersection(&b).indices(), vec![0]);
        assert!(PatchMask::class_only(5).is_subset_of(&a));
    }
}
