//! Analytic cost formulas against reference model sizes and the instrumented gather path.

use patchslim::costmodel::{
    block_cost, gathered_block_cost, instrumented_mac_count, schedule_cost,
};
use patchslim::model::{MaskSchedule, ModelConfig, ModelParams, PatchMask};
use patchslim::{Matrix, Rng};

fn vit(dim: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        layers: 12,
        patches: 197,
        dim,
        heads,
        hidden_dim: 4 * dim,
        use_layernorm: true,
        token_dim: 768,
        num_classes: 1000,
    }
}

fn toy() -> ModelConfig {
    ModelConfig {
        layers: 3,
        patches: 8,
        dim: 4,
        heads: 2,
        hidden_dim: 8,
        use_layernorm: true,
        token_dim: 3,
        num_classes: 2,
    }
}

fn random_nested(n: usize, layers: usize, rng: &mut Rng) -> MaskSchedule {
    let mut masks = Vec::new();
    let mut prev = PatchMask::all(n);
    for _ in 0..layers {
        let mut m = prev.clone();
        for i in 1..n {
            if m.get(i) && rng.uniform() < 0.35 {
                m.set(i, false);
            }
        }
        masks.push(m.clone());
        prev = m;
    }
    MaskSchedule::new(masks, n).unwrap()
}

#[test]
fn tiny_reference_block() {
    let c = block_cost(197, 192, 768, 197, 197).unwrap();
    assert_eq!(c.msa_macs, 43_951_488);
    assert_eq!(c.mlp_macs, 58_097_664);
    let report = schedule_cost(&vit(192, 3), &MaskSchedule::all_ones(12, 197)).unwrap();
    assert_eq!(report.total_macs, 1_224_589_824);
    assert!((report.total_macs as f64 / 1.3e9 - 1.0).abs() <= 0.10);
    assert_eq!(report.reduction_percent, 0.0);
}

#[test]
fn small_reference_model() {
    let report = schedule_cost(&vit(384, 6), &MaskSchedule::all_ones(12, 197)).unwrap();
    assert_eq!(report.total_macs, 4_540_695_552);
    assert!((report.total_macs as f64 / 4.6e9 - 1.0).abs() <= 0.05);
}

#[test]
fn class_only_schedule_mlp() {
    let cfg = toy();
    let report = schedule_cost(&cfg, &MaskSchedule::class_only(3, 8)).unwrap();
    for layer in &report.layers {
        assert_eq!(layer.mlp_macs as usize, 2 * cfg.dim * cfg.hidden_dim);
    }
}

#[test]
fn instrumented_counts_match_formulas() {
    let cfg = toy();
    let mut rng = Rng::new(5);
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let raw = Matrix::from_fn(cfg.patches - 1, cfg.token_dim, |_, _| rng.normal());

    let full = MaskSchedule::all_ones(3, 8);
    let counted = instrumented_mac_count(&params, &full, &raw).unwrap();
    let report = schedule_cost(&cfg, &full).unwrap();
    for (c, l) in counted.iter().zip(&report.layers) {
        assert_eq!(*c, l.msa_macs + l.mlp_macs);
    }

    for _ in 0..50 {
        let s = random_nested(8, 3, &mut rng);
        let counted = instrumented_mac_count(&params, &s, &raw).unwrap();
        let report = schedule_cost(&cfg, &s).unwrap();
        for (c, l) in counted.iter().zip(&report.layers) {
            assert_eq!(*c, l.gathered_macs);
            assert!(*c <= l.msa_macs + l.mlp_macs);
        }
        let expect = (1.0 - report.total_macs as f64 / report.baseline_total_macs as f64) * 100.0;
        assert!((report.reduction_percent - expect).abs() <= 1e-9);
    }
}

#[test]
fn cost_is_monotone_in_kept_counts() {
    let (n, d, dh) = (12, 8, 16);
    for ki in 1..=n {
        for ko in 1..=ki {
            let c = block_cost(n, d, dh, ki, ko).unwrap();
            let g = gathered_block_cost(n, d, dh, ki, ko).unwrap();
            if ko < ki {
                let c2 = block_cost(n, d, dh, ki, ko + 1).unwrap();
                let g2 = gathered_block_cost(n, d, dh, ki, ko + 1).unwrap();
                assert!(c2.msa_macs >= c.msa_macs && c2.mlp_macs >= c.mlp_macs);
                assert!(g2.msa_macs >= g.msa_macs && g2.mlp_macs >= g.mlp_macs);
            }
            if ki < n {
                let g3 = gathered_block_cost(n, d, dh, ki + 1, ko).unwrap();
                assert!(g3.msa_macs >= g.msa_macs);
            }
        }
    }
}

mod block_formulas {
    use patchslim::costmodel::{block_cost, gathered_block_cost};

    #[test]
    fn baseline_formula() {
        let (n, d, dh) = (10usize, 6usize, 12usize);
        let c = block_cost(n, d, dh, n, n).unwrap();
        assert_eq!(c.msa_macs as usize, 2 * n * n * d + 4 * n * d * d);
        assert_eq!(c.mlp_macs as usize, 2 * n * d * dh);
        assert_eq!(gathered_block_cost(n, d, dh, n, n).unwrap(), c);
    }

    #[test]
    fn pruned_formula_matches_eta_form() {
        let (n, d, dh) = (197.0, 64.0, 256.0);
        for k in [1usize, 50, 120, 197] {
            let eta = 1.0 - k as f64 / n;
            let c = block_cost(197, 64, 256, 197, k).unwrap();
            let msa =
                (2.0 * n * n * d + 4.0 * n * d * d) - eta * (2.0 * n * n * d + 2.0 * n * d * d);
            assert!((c.msa_macs as f64 - msa).abs() < 1e-6);
            assert!((c.mlp_macs as f64 - (1.0 - eta) * 2.0 * n * d * dh).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(block_cost(8, 4, 8, 3, 4).is_err());
        assert!(block_cost(8, 4, 8, 9, 4).is_err());
        assert!(gathered_block_cost(8, 4, 8, 4, 0).is_err());
    }
}
