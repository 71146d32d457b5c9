use std::collections::HashSet;

use dyngcn_core::data::{normalize_coords, resize_sequence, synth_generate, train_test_split, SkeletonSequence, SynthSpec};
use dyngcn_core::graph::SkeletonLayout;

fn seq(frames: usize, joints: usize, f: impl Fn(usize, usize, usize) -> f32) -> SkeletonSequence {
    let mut data = Vec::new();
    for t in 0..frames {
        for n in 0..joints {
            for d in 0..3 {
                data.push(f(t, n, d));
            }
        }
    }
    SkeletonSequence::new("s", "chain3", 0, false, [frames, 1, joints, 3], data).unwrap()
}

#[test]
fn resize_ramp_matches_hand_interpolation() {
    let s = seq(3, 1, |t, _, _| (t + 1) as f32);
    let r = resize_sequence(&s, 5).unwrap();
    let xs: Vec<f32> = (0..5).map(|t| r.joint(t, 0, 0)[0]).collect();
    assert_eq!(xs, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
}

#[test]
fn resize_to_same_length_is_bit_exact() {
    let s = seq(7, 3, |t, n, d| ((t * 31 + n * 7 + d) as f32).sin());
    assert_eq!(resize_sequence(&s, 7).unwrap(), s);
}

#[test]
fn resize_constant_stays_constant() {
    let s = seq(4, 3, |_, n, d| 0.25 * (n + d) as f32);
    let r = resize_sequence(&s, 11).unwrap();
    assert_eq!(r.frames(), 11);
    for t in 0..11 {
        for n in 0..3 {
            assert_eq!(r.joint(t, 0, n), s.joint(0, 0, n));
        }
    }
}

#[test]
fn resize_is_idempotent() {
    let s = seq(9, 3, |t, n, d| ((t * 5 + n + 3 * d) as f32 * 0.37).cos());
    for target in [1, 4, 9, 16] {
        let once = resize_sequence(&s, target).unwrap();
        assert_eq!(resize_sequence(&once, target).unwrap(), once);
    }
    assert!(resize_sequence(&s, 0).is_err());
}

#[test]
fn resize_interpolates_confidence_like_coordinates() {
    let data: Vec<f32> = (0..2).flat_map(|t| [0.0, 0.0, 0.0, t as f32]).collect();
    let s = SkeletonSequence::new("c", "x", 0, true, [2, 1, 1, 4], data).unwrap();
    let r = resize_sequence(&s, 3).unwrap();
    assert_eq!(r.joint(1, 0, 0)[3], 0.5);
}

#[test]
fn normalize_moves_first_center_to_origin() {
    let layout = SkeletonLayout::builtin("chain3").unwrap();
    let s = seq(3, 3, |t, n, d| (t * 10 + n * 3 + d) as f32 + 0.5);
    let z = normalize_coords(&s, &layout).unwrap();
    assert_eq!(z.joint(0, 0, layout.center()), &[0.0, 0.0, 0.0]);
    assert_eq!(normalize_coords(&z, &layout).unwrap(), z);
}

#[test]
fn normalize_is_translation_invariant() {
    let layout = SkeletonLayout::builtin("chain3").unwrap();
    let s = seq(4, 3, |t, n, d| ((t + 2 * n + d) as f32 * 0.3).sin());
    let shifted = seq(4, 3, |t, n, d| ((t + 2 * n + d) as f32 * 0.3).sin() + [4.0, -2.0, 0.5][d]);
    let (a, b) = (normalize_coords(&s, &layout).unwrap(), normalize_coords(&shifted, &layout).unwrap());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn normalize_leaves_centered_input_and_confidence_alone() {
    let layout = SkeletonLayout::builtin("chain3").unwrap();
    let s = seq(2, 3, |t, n, d| if n == layout.center() && t == 0 { 0.0 } else { (t + n + d) as f32 });
    assert_eq!(normalize_coords(&s, &layout).unwrap(), s);
    let data: Vec<f32> = (0..3).flat_map(|n| [n as f32 + 1.0, 2.0, 3.0, 0.9]).collect();
    let c = SkeletonSequence::new("c", "chain3", 0, true, [1, 1, 3, 4], data).unwrap();
    let z = normalize_coords(&c, &layout).unwrap();
    assert!(z.data().chunks(4).all(|j| j[3] == 0.9));
    assert!(normalize_coords(&seq(1, 2, |_, _, _| 0.0), &layout).is_err());
}

#[test]
fn synth_is_reproducible() {
    let spec = SynthSpec { samples_per_class: 4, ..Default::default() };
    let a = synth_generate(&spec).unwrap();
    let b = synth_generate(&spec).unwrap();
    assert_eq!(a, b);
    let c = synth_generate(&SynthSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(a[0].data(), c[0].data());
}

#[test]
fn synth_without_noise_differs_only_by_phase() {
    let spec = SynthSpec { samples_per_class: 3, noise_sigma: 0.0, ..Default::default() };
    let samples = synth_generate(&spec).unwrap();
    let layout = SkeletonLayout::builtin("ntu25").unwrap();
    for class in samples.chunks(3) {
        // Joints outside the class program are frozen at the shared rest pose.
        let moving = |s: &SkeletonSequence| -> Vec<usize> {
            (0..layout.n_joints()).filter(|&n| (1..s.frames()).any(|t| s.joint(t, 0, n) != s.joint(0, 0, n))).collect()
        };
        let m0 = moving(&class[0]);
        assert!(!m0.is_empty());
        for s in &class[1..] {
            assert_eq!(moving(s), m0);
            for n in (0..layout.n_joints()).filter(|n| !m0.contains(n)) {
                assert_eq!(s.joint(0, 0, n), class[0].joint(0, 0, n));
            }
        }
    }
    assert!(synth_generate(&SynthSpec { n_classes: 1, ..Default::default() }).is_err());
    assert!(synth_generate(&SynthSpec { noise_sigma: -1.0, ..Default::default() }).is_err());
}

/// Per-joint motion energy: mean squared frame-to-frame displacement.
fn motion_energy(s: &SkeletonSequence) -> Vec<f64> {
    (0..s.joints())
        .map(|n| {
            let mut e = 0.0;
            for t in 1..s.frames() {
                for d in 0..3 {
                    let v = f64::from(s.joint(t, 0, n)[d] - s.joint(t - 1, 0, n)[d]);
                    e += v * v;
                }
            }
            e / (s.frames() - 1) as f64
        })
        .collect()
}

fn nearest_centroid_accuracy(seed: u64) -> f64 {
    let spec = SynthSpec { n_classes: 5, samples_per_class: 60, noise_sigma: 0.05, seed, ..Default::default() };
    let (train, test) = train_test_split(synth_generate(&spec).unwrap(), 1.0 / 3.0, seed).unwrap();
    let dims = train[0].joints();
    let mut centroids = vec![vec![0.0; dims]; 5];
    let mut counts = [0usize; 5];
    for s in &train {
        for (c, e) in centroids[s.label].iter_mut().zip(motion_energy(s)) {
            *c += e;
        }
        counts[s.label] += 1;
    }
    for (c, k) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= k as f64);
    }
    let correct = test
        .iter()
        .filter(|s| {
            let e = motion_energy(s);
            let dist = |c: &Vec<f64>| c.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..5).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            best == s.label
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn nearest_centroid_on_motion_energy_separates_classes() {
    for seed in 0..4 {
        let acc = nearest_centroid_accuracy(seed);
        assert!(acc >= 0.95, "seed {seed}: nearest-centroid accuracy {acc}");
    }
}

#[test]
fn split_is_disjoint_and_stratified() {
    let spec = SynthSpec { samples_per_class: 60, ..Default::default() };
    let (train, test) = train_test_split(synth_generate(&spec).unwrap(), 1.0 / 3.0, 11).unwrap();
    assert_eq!((train.len(), test.len()), (200, 100));
    let a: HashSet<&str> = train.iter().map(|s| s.id.as_str()).collect();
    let b: HashSet<&str> = test.iter().map(|s| s.id.as_str()).collect();
    assert!(a.is_disjoint(&b));
    for c in 0..5 {
        assert_eq!(test.iter().filter(|s| s.label == c).count(), 20);
    }
    let (train2, _) = train_test_split(synth_generate(&spec).unwrap(), 1.0 / 3.0, 11).unwrap();
    assert_eq!(train, train2);
}

#[test]
fn persons_padding_and_tensor_layout() {
    let s = seq(2, 3, |t, n, d| (100 * t + 10 * n + d) as f32);
    let p = s.with_persons(2).unwrap();
    assert_eq!(p.shape(), [2, 2, 3, 3]);
    assert_eq!(p.joint(1, 0, 2), s.joint(1, 0, 2));
    assert_eq!(p.joint(1, 1, 2), &[0.0, 0.0, 0.0]);
    assert!(p.with_persons(1).is_err());
    let x = s.to_tensor::<f64>();
    assert_eq!(x.shape(), &[1, 3, 2, 3]);
    assert_eq!(x.get(&[0, 2, 1, 0]), 102.0);
}

#[test]
fn sequence_constructor_validates() {
    assert!(SkeletonSequence::new("x", "l", 0, false, [2, 1, 3, 3], vec![0.0; 17]).is_err());
    assert!(SkeletonSequence::new("x", "l", 0, false, [0, 1, 3, 3], vec![]).is_err());
    assert!(SkeletonSequence::new("x", "l", 0, false, [1, 3, 1, 3], vec![0.0; 9]).is_err());
}

#[test]
fn synthetic_data_is_pinned() {
    let spec = SynthSpec { n_classes: 3, samples_per_class: 4, frames: 8, seed: 11, ..Default::default() };
    let mut h: u64 = 0xcbf29ce484222325;
    for s in synth_generate(&spec).unwrap() {
        for v in s.data() {
            h = (h ^ u64::from(v.to_bits())).wrapping_mul(0x100000001b3);
        }
    }
    assert_eq!(h, 0x89c042e58beb728d);
}
