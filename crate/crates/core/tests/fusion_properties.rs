mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use zsdst::backbone::EncoderOutput;
use zsdst::fusion::*;

fn instance(
    seed: u64,
    t: usize,
    n: usize,
    kl: usize,
    scale: f64,
) -> (ChoiceMatrix, EncoderOutput, EncoderOutput, FusionParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = random_fusion_params(&mut rng, t, 4);
    params.w_v.scale_assign(scale);
    let v = ChoiceMatrix { v: matrix(&random_rows(&mut rng, n, t, scale)) };
    let d = EncoderOutput { hidden: matrix(&random_rows(&mut rng, kl, t, 1.0)) };
    let dp = EncoderOutput { hidden: matrix(&random_rows(&mut rng, 2, t, 1.0)) };
    (v, d, dp, params)
}

proptest! {
    #[test]
    fn distributions_are_normalized(seed in any::<u64>(), t in 1usize..10, n in 1usize..9, kl in 1usize..8, scale in 0.01f64..20.0) {
        let (v, d, dp, params) = instance(seed, t, n, kl, scale);
        let prior = prior_distribution(&v, &d, &params).unwrap();
        let post = posterior_distribution(Mode::Train, &v, &d, Some(&dp), &params).unwrap();
        for dist in [&prior, &post] {
            prop_assert_eq!(dist.len(), n);
            prop_assert!((dist.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(dist.p.iter().all(|p| *p >= 0.0));
        }
        prop_assert!(kld_loss(&prior, &post).unwrap() >= 0.0);
    }

    #[test]
    fn prior_is_permutation_equivariant(seed in any::<u64>(), t in 1usize..8, n in 2usize..7, shift in 1usize..6) {
        let (v, d, _, params) = instance(seed, t, n, 3, 1.0);
        let rows_v = rows(&v.v);
        let order: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let permuted = ChoiceMatrix { v: matrix(&order.iter().map(|&i| rows_v[i].clone()).collect()) };
        let a = prior_distribution(&v, &d, &params).unwrap();
        let b = prior_distribution(&permuted, &d, &params).unwrap();
        for (j, &i) in order.iter().enumerate() {
            prop_assert!((b.p[j] - a.p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_memory_is_bounded(seed in any::<u64>(), t in 1usize..10, n in 1usize..6, kl in 1usize..12) {
        let (v, d, _, params) = instance(seed, t, n, kl, 1.0);
        let p = prior_distribution(&v, &d, &params).unwrap();
        let h = fuse_decoder_memory(&d, &v, &p, &params).unwrap().h;
        prop_assert_eq!(h.shape(), (kl + n, t));
        prop_assert!(h.data().iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn zero_probability_choices_contribute_zero_rows(seed in any::<u64>(), t in 1usize..8, kl in 1usize..5) {
        let (v, d, _, params) = instance(seed, t, 3, kl, 1.0);
        let p = ChoiceDistribution::new(vec![1.0, 0.0, 0.0], DistributionKind::Prior).unwrap();
        let h = fuse_decoder_memory(&d, &v, &p, &params).unwrap().h;
        for r in kl + 1..kl + 3 {
            prop_assert!(h.row(r).iter().all(|x| *x == 0.0));
        }
    }
}

#[test]
fn kld_of_point_masses_is_finite() {
    let p = ChoiceDistribution::new(vec![1.0, 0.0], DistributionKind::Prior).unwrap();
    let q = ChoiceDistribution::new(vec![0.0, 1.0], DistributionKind::Posterior).unwrap();
    let k = kld_loss(&p, &q).unwrap();
    assert!(k.is_finite() && k > 10.0);
    assert!((k - oracle_kld(&p.p, &q.p, KLD_EPS)).abs() < 1e-12);
}

#[test]
fn kld_rejects_swapped_or_mismatched_inputs() {
    let p = ChoiceDistribution::new(vec![0.5, 0.5], DistributionKind::Prior).unwrap();
    let q = ChoiceDistribution::new(vec![0.5, 0.5], DistributionKind::Posterior).unwrap();
    let r = ChoiceDistribution::new(vec![1.0], DistributionKind::Posterior).unwrap();
    assert!(kld_loss(&q, &p).is_err());
    assert!(kld_loss(&p, &r).is_err());
}
