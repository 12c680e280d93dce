use proptest::prelude::*;

use mghf::csc::{corr_loss, gram_loss, mse_content, pearson};
use mghf::dfe::{DfeConfig, DfeModel, FeatureStack};
use mghf::lip::{cost_matrix, sinkhorn, MonceConfig};
use mghf::mghf::mghf_n;
use mghf::numerics::{Rng, Tensor};
use mghf::pruning::{adaptive_weight, normalized_entropy, select_top_m, ImportanceProfile, PruningConfig};

fn stack(seed: u64, l: usize, h: usize, w: usize) -> FeatureStack {
    FeatureStack::from_channels(&Tensor::randn(l, h, w, &mut Rng::new(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coupling_cascade_round_trips(seed in any::<u64>(), half in 1usize..5, blocks in 1usize..4, scale in 0.1f64..10.0) {
        let mut rng = Rng::new(seed);
        let cfg = DfeConfig { n_blocks: blocks, ..DfeConfig::with_channels(2 * half) };
        let model = DfeModel::random(cfg, 1.0, &mut rng).unwrap();
        let x = Tensor::randn(2 * half, 6, 5, &mut rng).scale(scale);
        let back = model.invert_blocks(&model.forward_blocks(&x).unwrap()).unwrap();
        let err = back.zip_map(&x, |a, b| (a - b).abs()).max_abs();
        prop_assert!(err < 1e-5 * scale.max(1.0), "{}", err);
    }

    #[test]
    fn entropy_is_normalized(seed in any::<u64>(), bins in 2usize..128, h in 1usize..9, w in 1usize..9) {
        let t = Tensor::randn(1, h, w, &mut Rng::new(seed));
        let e = normalized_entropy(&t, bins);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&e));
        // Affine maps with positive scale do not change the histogram.
        let e2 = normalized_entropy(&t.map(|v| 3.0 * v - 1.0), bins);
        prop_assert!((e - e2).abs() < 1e-9);
    }

    #[test]
    fn selection_picks_largest(values in proptest::collection::vec(0.0f64..1.0, 1..20), m_frac in 0.0f64..1.0) {
        let m = ((values.len() as f64 * m_frac) as usize).max(1);
        let sel = select_top_m(&values, m).unwrap();
        prop_assert_eq!(sel.len(), m);
        let min_sel = sel.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
        for (i, v) in values.iter().enumerate() {
            if !sel.contains(&i) {
                prop_assert!(*v <= min_sel);
            }
        }
    }

    #[test]
    fn weights_at_least_one(i in 0.0f64..1.0, alpha in 0.0f64..10.0, gamma in 0.0f64..5.0) {
        prop_assert!(adaptive_weight(i, alpha, gamma) >= 1.0);
    }

    #[test]
    fn profile_is_symmetric_in_its_inputs(seed in any::<u64>(), l in 1usize..8) {
        let g = stack(seed, l, 5, 6);
        let s = stack(seed ^ 1, l, 5, 6);
        let cfg = PruningConfig::default();
        let a = ImportanceProfile::compute(&g, &s, &cfg).unwrap();
        let b = ImportanceProfile::compute(&s, &g, &cfg).unwrap();
        prop_assert_eq!(a.combined, b.combined);
        prop_assert_eq!(a.selected, b.selected);
    }

    #[test]
    fn losses_are_nonnegative_and_vanish_on_equal(seed in any::<u64>(), l in 1usize..5, h in 2usize..7, w in 2usize..7) {
        let g = stack(seed, l, h, w);
        let s = stack(seed.wrapping_add(1), l, h, w);
        for f in [mse_content, gram_loss, corr_loss, mghf_n] {
            prop_assert!(f(&g, &s).unwrap().0 >= 0.0);
            prop_assert_eq!(f(&g, &g).unwrap().0, 0.0);
        }
    }

    #[test]
    fn mghf_n_symmetry(seed in any::<u64>()) {
        let g = stack(seed, 3, 4, 4);
        let s = stack(!seed, 3, 4, 4);
        let (a, ga) = mghf_n(&g, &s).unwrap();
        let (b, gb) = mghf_n(&s, &g).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(ga.to_channels().zip_map(&gb.to_channels(), |x, y| x + y).max_abs() < 1e-15);
    }

    #[test]
    fn pearson_bounded(seed in any::<u64>(), h in 2usize..8) {
        let mut rng = Rng::new(seed);
        let a = Tensor::randn(1, h, h, &mut rng);
        let b = Tensor::randn(1, h, h, &mut rng);
        let r = pearson(&a, &b);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!((pearson(&a, &a.map(|v| 2.0 * v + 5.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_marginals(seed in any::<u64>(), n in 2usize..9, d in 2usize..12) {
        let mut rng = Rng::new(seed);
        let mut rows = || -> Vec<Vec<f64>> {
            (0..n).map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            }).collect()
        };
        let (a, b) = (rows(), rows());
        let cfg = MonceConfig::default();
        let plan = sinkhorn(&cost_matrix(&a, &b, cfg.beta_ot).unwrap(), &cfg).unwrap();
        prop_assert!(plan.converged);
        for i in 0..n {
            prop_assert_eq!(plan.at(i, i), 0.0);
        }
        for s in plan.row_sums().into_iter().chain(plan.col_sums()) {
            prop_assert!((s - 1.0).abs() < 1e-4);
        }
        prop_assert!(plan.a.iter().all(|&v| v >= 0.0));
    }
}
