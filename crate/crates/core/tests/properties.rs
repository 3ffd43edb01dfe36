mod common;

use candle_core::{DType, Device, Tensor};
use monet_lab::labrunner::{holm_bonferroni, Correction};
use monet_lab::losses::{mask_kl, mask_mse, mse_loss, mw_loss};
use monet_lab::metrics::{ari, binarization_index, LabelMap};
use monet_lab::model::{images_to_tensor, AttentionMaskSet, EpsMode, ModelConfig, Monet};
use monet_lab::synthgen::{generate_scene, standardize_image, SceneSpec};
use monet_lab::trainer::should_terminate;
use proptest::prelude::*;

use common::{ari_pairs, scalar, tensor};

fn masks_from(logits: &[f64], b: usize, k: usize, h: usize, w: usize) -> Tensor {
    let t = Tensor::from_vec(logits.to_vec(), (b, k, h, w), &Device::Cpu).unwrap();
    candle_nn::ops::softmax(&t, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn model_masks_lie_on_the_simplex(seed in 0u64..1_000, k in 2usize..5, pixels in prop::collection::vec(-1.0f32..1.0, 2 * 8 * 8 * 3)) {
        let model = Monet::new(ModelConfig::toy(k), seed).unwrap();
        let x = images_to_tensor(&pixels, 2, 8, 8, 3, DType::F32).unwrap();
        let dec = model.forward(&x, EpsMode::Zero, 0).unwrap();
        for m in [dec.masks.masks().unwrap(), dec.recon_masks().unwrap()] {
            let m = m.to_dtype(DType::F64).unwrap();
            let sums = m.sum(1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            prop_assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-5));
            let v = m.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            prop_assert!(v.iter().all(|x| *x >= -1e-6 && *x <= 1.0 + 1e-6));
        }
    }

    #[test]
    fn zero_noise_forward_is_deterministic(seed in 0u64..1_000, pixels in prop::collection::vec(-1.0f32..1.0, 8 * 8 * 3)) {
        let model = Monet::new(ModelConfig::toy(3), seed).unwrap();
        let x = images_to_tensor(&pixels, 1, 8, 8, 3, DType::F32).unwrap();
        let a = model.forward(&x, EpsMode::Zero, 1).unwrap().components.images.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = model.forward(&x, EpsMode::Zero, 2).unwrap().components.images.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ari_is_invariant_to_relabeling(
        pred in prop::collection::vec(0u32..5, 64),
        truth in prop::collection::vec(0u32..5, 64),
        perm in Just([0u32, 1, 2, 3, 4]).prop_shuffle(),
    ) {
        let p = LabelMap::new(8, 8, pred.clone()).unwrap();
        let t = LabelMap::new(8, 8, truth.clone()).unwrap();
        let base = ari(&p, &t, &[]).unwrap().value;
        let relabeled = LabelMap::new(8, 8, pred.iter().map(|l| perm[*l as usize]).collect()).unwrap();
        prop_assert!((ari(&relabeled, &t, &[]).unwrap().value - base).abs() < 1e-12);
        let truth_relabeled = LabelMap::new(8, 8, truth.iter().map(|l| perm[*l as usize] + 10).collect()).unwrap();
        prop_assert!((ari(&p, &truth_relabeled, &[]).unwrap().value - base).abs() < 1e-12);
        prop_assert!((ari(&t, &p, &[]).unwrap().value - base).abs() < 1e-12);
    }

    #[test]
    fn excluding_labels_equals_filtering_pixels(
        pred in prop::collection::vec(0u32..4, 64),
        truth in prop::collection::vec(0u32..4, 64),
    ) {
        let p = LabelMap::new(8, 8, pred.clone()).unwrap();
        let t = LabelMap::new(8, 8, truth.clone()).unwrap();
        let got = ari(&p, &t, &[0]);
        match ari_pairs(&pred, &truth, &[0]) {
            Some((want, _)) => prop_assert!((got.unwrap().value - want).abs() < 1e-12),
            None => prop_assert!(got.is_err()),
        }
    }

    #[test]
    fn sharpening_never_lowers_binarization(logits in prop::collection::vec(-4.0f64..4.0, 3 * 16), t in 0.0f64..1.0) {
        let m = masks_from(&logits, 1, 3, 4, 4);
        let v = m.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let mut sharp = v.clone();
        for p in 0..16 {
            let best = (0..3).max_by(|a, b| v[a * 16 + p].total_cmp(&v[b * 16 + p])).unwrap();
            for k in 0..3 {
                let target = if k == best { 1.0 } else { 0.0 };
                sharp[k * 16 + p] = (1.0 - t) * v[k * 16 + p] + t * target;
            }
        }
        let before = binarization_index(&m).unwrap()[0];
        let after = binarization_index(&tensor(&sharp, &[1, 3, 4, 4])).unwrap()[0];
        prop_assert!(after >= before - 1e-12);
    }

    #[test]
    fn holm_decisions_are_monotone(
        pvals in prop::collection::vec(0.0f64..0.2, 1..8),
        which in 0usize..8,
        factor in 0.0f64..1.0,
    ) {
        for mode in [Correction::Holm, Correction::FixedDivide] {
            let before = holm_bonferroni(&pvals, 0.05, mode);
            let mut lowered = pvals.clone();
            let i = which % pvals.len();
            lowered[i] *= factor;
            let after = holm_bonferroni(&lowered, 0.05, mode);
            for (b, a) in before.iter().zip(&after) {
                prop_assert!(!b || *a);
            }
        }
    }

    #[test]
    fn termination_rule_is_pure_and_respects_the_threshold(
        curr in 0.0f64..0.01,
        prev in prop::option::of(0.0f64..0.01),
        l in 1e-4f64..0.01,
    ) {
        let d = should_terminate(curr, prev, l, 0.99);
        prop_assert_eq!(d, should_terminate(curr, prev, l, 0.99));
        if d {
            prop_assert!(curr < l);
            prop_assert!(prev.is_some());
        }
    }

    #[test]
    fn standardized_pixels_stay_in_range(raw in prop::collection::vec(0i32..=255, 1..64)) {
        let v = standardize_image(&raw).unwrap();
        prop_assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn mask_terms_are_nonnegative_and_vanish_on_agreement(
        a in prop::collection::vec(-3.0f64..3.0, 2 * 3 * 16),
        b in prop::collection::vec(-3.0f64..3.0, 2 * 3 * 16),
    ) {
        let m = masks_from(&a, 2, 3, 4, 4);
        let r = masks_from(&b, 2, 3, 4, 4);
        let set = AttentionMaskSet::from_probabilities(&m).unwrap();
        prop_assert!(scalar(&mask_kl(&set, &r.log().unwrap()).unwrap()) >= -1e-12);
        prop_assert!(scalar(&mask_mse(&set, &r).unwrap()) >= 0.0);
        prop_assert!(scalar(&mask_kl(&set, &m.log().unwrap()).unwrap()).abs() < 1e-9);
        prop_assert!(scalar(&mask_mse(&set, &m).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_surrogates_are_nonnegative(
        x in prop::collection::vec(-1.0f64..1.0, 3 * 16),
        comp in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 16),
        logits in prop::collection::vec(-3.0f64..3.0, 2 * 16),
    ) {
        let x = tensor(&x, &[1, 3, 4, 4]);
        let comp = tensor(&comp, &[1, 2, 3, 4, 4]);
        let m = masks_from(&logits, 1, 2, 4, 4);
        let set = AttentionMaskSet::from_probabilities(&m).unwrap();
        let x_ir = (comp.broadcast_mul(&m.unsqueeze(2).unwrap()).unwrap()).sum(1).unwrap();
        prop_assert!(scalar(&mse_loss(&x, &x_ir).unwrap()) >= 0.0);
        prop_assert!(scalar(&mw_loss(&x, &set, &comp).unwrap()) >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn generated_scenes_stay_in_range(seed in any::<u64>()) {
        let s = generate_scene(&SceneSpec { image_size: 16, ..SceneSpec::default() }, seed).unwrap();
        prop_assert!(s.image.iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}
