use dyngcn_core::flops::{count_conv_flops, count_graph_mult_flops, count_model_flops, overhead_report, CostReport};
use dyngcn_core::learners::LearnerKind;
use dyngcn_core::model::ModelConfig;

#[test]
fn conv_counts() {
    assert_eq!(count_conv_flops([64, 64, 25], [64, 64, 1, 1], 1, 0).unwrap(), 13_107_200);
    assert_eq!(count_conv_flops([5, 1, 1], [7, 5, 1, 1], 1, 0).unwrap(), 2 * 5 * 7);
    assert_eq!(count_conv_flops([5, 3, 2], [7, 5, 3, 2], 1, 0).unwrap(), 2 * 5 * 7 * 3 * 2);
    let s1 = count_conv_flops([16, 64, 25], [32, 16, 9, 1], 1, 4).unwrap();
    let s2 = count_conv_flops([16, 64, 25], [32, 16, 9, 1], 2, 4).unwrap();
    assert_eq!(s1, 2 * s2);
    assert!(count_conv_flops([3, 4, 5], [4, 2, 1, 1], 1, 0).is_err());
    assert!(count_conv_flops([3, 4, 5], [4, 3, 11, 1], 1, 0).is_err());
    assert!(count_conv_flops([3, 4, 5], [4, 3, 1, 1], 0, 0).is_err());
}

#[test]
fn graph_counts() {
    assert_eq!(count_graph_mult_flops(25, 64, 64, 1), 5_120_000);
    assert_eq!(count_graph_mult_flops(1, 8, 6, 1), 2 * 8 * 6);
    assert_eq!(count_graph_mult_flops(25, 64, 64, 3), 3 * 5_120_000);
}

#[test]
fn toy_matches_hand_sum() {
    let cfg = ModelConfig::toy();
    // K=3 graph products 3·2·9·3·4, static 1×1 over 3·3 → 4 channels 2·9·4·12,
    // TC 2·4·4·9·4·3, shortcut 2·3·4·12, classifier 2·4·2.
    let without = count_model_flops(&cfg, false).unwrap();
    assert_eq!(without.total, 648 + 864 + 3456 + 288 + 16);
    // Conv-C 2·3·12, Conv-T 2·4·3, Conv-N 2·3·9, dynamic product 2·9·3·4, W′ 2·3·4·12.
    let with = count_model_flops(&cfg, true).unwrap();
    assert_eq!(with.total, 5272 + 72 + 24 + 54 + 216 + 288);
    for r in [&without, &with] {
        assert_eq!(r.total, r.layers.iter().map(|l| l.flops).sum::<u64>());
        for l in &r.layers {
            assert_eq!(l.flops, l.parts.iter().map(|p| p.1).sum::<u64>());
        }
    }
}

#[test]
fn ntu_band_and_overhead() {
    let cfg = ModelConfig::ntu_like();
    let without = count_model_flops(&cfg, false).unwrap();
    let with = count_model_flops(&cfg, true).unwrap();
    let g = without.total as f64 / 1.86e9;
    assert!((0.75..=1.25).contains(&g), "without-CeN total {}", without.total);
    let rep = overhead_report(&without, &with).unwrap();
    assert!((0.04..=0.10).contains(&rep.total.ratio), "overhead {}", rep.total.ratio);
    assert_eq!(rep.total.delta as u64, with.total - without.total);
}

#[test]
fn learner_strictly_increases_every_layer() {
    for learner in [LearnerKind::Cen, LearnerKind::CenFeature, LearnerKind::CenTemporal, LearnerKind::NonLocal] {
        let cfg = ModelConfig { learner, ..ModelConfig::ntu_like() };
        let a = count_model_flops(&cfg, false).unwrap();
        let b = count_model_flops(&cfg, true).unwrap();
        assert!(b.total > a.total);
        for (x, y) in a.layers.iter().zip(&b.layers) {
            if x.name.starts_with("layer") {
                assert!(y.flops > x.flops, "{}", x.name);
            }
        }
    }
}

#[test]
fn temporal_variant_final_kernel_count() {
    let cfg = ModelConfig { learner: LearnerKind::CenTemporal, ..ModelConfig::ntu_like() };
    let r = count_model_flops(&cfg, true).unwrap();
    let l1 = &r.layers[1];
    // Final kernel T·N² weights applied once per sample.
    assert_eq!(l1.part("cen_conv_t"), 2 * 64 * 625);
    let j = count_model_flops(&ModelConfig::ntu_like(), true).unwrap();
    assert_eq!(j.layers[1].part("cen_conv_n"), 2 * 25 * 625);
}

#[test]
fn aggregation_reduces_downstream_layers() {
    let agg = ModelConfig::ntu_like();
    let flat = ModelConfig { aggregate_after: vec![], ..agg.clone() };
    for include in [false, true] {
        let a = count_model_flops(&agg, include).unwrap();
        let f = count_model_flops(&flat, include).unwrap();
        // Layers 6..10 and the classifier input follow the first projection.
        for i in 6..=10 {
            assert!(a.layers[i].flops < f.layers[i].flops, "layer{i}");
        }
        assert!(a.total < f.total);
    }
}

#[test]
fn counts_ignore_everything_but_shapes_and_scale_with_persons() {
    let one = count_model_flops(&ModelConfig::ntu_like(), true).unwrap();
    let again = count_model_flops(&ModelConfig::ntu_like(), true).unwrap();
    assert_eq!(one, again);
    let two = count_model_flops(&ModelConfig { persons: 2, ..ModelConfig::ntu_like() }, true).unwrap();
    assert_eq!(two.total, 2 * one.total);
}

fn scaled(r: &CostReport, f: f64) -> CostReport {
    let mut r = r.clone();
    for l in &mut r.layers {
        l.flops = (l.flops as f64 * f).round() as u64;
    }
    r.total = r.layers.iter().map(|l| l.flops).sum();
    r
}

#[test]
fn overhead_reports() {
    let a = count_model_flops(&ModelConfig::ntu_like(), false).unwrap();
    let same = overhead_report(&a, &a).unwrap();
    assert_eq!(same.total.ratio, 0.0);
    assert!(same.rows.iter().all(|r| r.ratio == 0.0));
    let b = scaled(&a, 1.07);
    let rep = overhead_report(&a, &b).unwrap();
    assert!((rep.total.ratio - 0.07).abs() < 1e-6);
    let shorter = count_model_flops(&ModelConfig::smoke(), false).unwrap();
    assert!(overhead_report(&a, &shorter).is_err());
}
