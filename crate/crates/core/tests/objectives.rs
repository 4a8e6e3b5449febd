use adagraph_core::objectives::{
    contrastive_loss, graph_recon_loss, kl_cluster_loss, soft_assign, target_distribution, total_loss,
    total_loss_on_tape, zinb_nll, zinb_nll_scalar, zinb_pmf, LossRecord, LossTerms, LossWeights, Phase,
};
use adagraph_core::tensor::gradcheck::check_gradients;
use adagraph_core::{RngState, Tape, Tensor};
use proptest::prelude::*;
use statrs::distribution::{Discrete, NegativeBinomial};

fn random(rng: &mut RngState, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    rng.sample_uniform(&[r, c]).map(|u| lo + (hi - lo) * u)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() < tol
}

#[test]
fn graph_recon_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::ones(&[2, 2]));
    let same = graph_recon_loss(&mut tape, a, a).unwrap();
    assert_eq!(tape.value(same).item(), 0.0);
    let half = tape.constant(Tensor::full(&[2, 2], 0.5));
    let l = graph_recon_loss(&mut tape, a, half).unwrap();
    assert_eq!(tape.value(l).item(), 0.25);
    let wrong = tape.constant(Tensor::ones(&[3, 2]));
    assert!(graph_recon_loss(&mut tape, a, wrong).is_err());
}

#[test]
fn graph_recon_gradient() {
    let mut rng = RngState::new(1);
    let target = rng.sample_uniform(&[4, 4]).map(|u| if u < 0.5 { 1.0 } else { 0.0 });
    let pred = random(&mut rng, 4, 4, 0.0, 1.0);
    let mut tape = Tape::new();
    let t = tape.constant(target.clone());
    let p = tape.parameter(pred.clone());
    let l = graph_recon_loss(&mut tape, t, p).unwrap();
    let g = tape.backward(l).unwrap().get(p);
    for i in 0..16 {
        let expected = 2.0 * (pred.data()[i] - target.data()[i]) / 16.0;
        assert!(close(g.data()[i], expected, 1e-15));
    }
    let report = check_gradients(&[pred], 1e-5, |t, v| {
        let target = t.constant(target.clone());
        graph_recon_loss(t, target, v[0])
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn zinb_hand_values() {
    assert!(close(zinb_pmf(0, 0.5, 1.0, 1.0), 0.75, 1e-15));
    assert!(close(zinb_nll_scalar(0.0, 0.5, 1.0, 1.0), 0.287_682, 1e-6));
    assert!(close(zinb_pmf(1, 0.5, 1.0, 1.0), 0.125, 1e-14));
    assert!(close(zinb_nll_scalar(1.0, 0.5, 1.0, 1.0), 2.079_442, 1e-6));
}

#[test]
fn zinb_pmf_sums_to_one() {
    for &pi in &[0.0, 0.3, 0.7] {
        for &mu in &[0.5, 1.0, 5.0] {
            for &theta in &[0.5, 1.0, 5.0] {
                let total: f64 = (0..=500).map(|x| zinb_pmf(x, pi, mu, theta)).sum();
                assert!((1.0 - 1e-6..=1.0 + 1e-12).contains(&total), "π={pi} μ={mu} θ={theta}: {total}");
            }
        }
    }
}

#[test]
fn zero_inflation_off_matches_negative_binomial() {
    for &mu in &[0.3, 1.0, 4.5, 30.0] {
        for &theta in &[0.2, 1.0, 7.0, 100.0] {
            let nb = NegativeBinomial::new(theta, theta / (theta + mu)).unwrap();
            for x in 0..60u64 {
                let ours = zinb_nll_scalar(x as f64, 0.0, mu, theta);
                let oracle = -nb.ln_pmf(x);
                assert!((ours - oracle).abs() < 1e-10 * oracle.abs().max(1.0), "x={x} μ={mu} θ={theta}");
            }
        }
    }
}

#[test]
fn zinb_mean_over_entries() {
    let x = Tensor::from_nested(&[vec![0.0, 1.0]]).unwrap();
    let mut tape = Tape::new();
    let pi = tape.constant(Tensor::full(&[1, 2], 0.5));
    let mu = tape.constant(Tensor::ones(&[1, 2]));
    let theta = tape.constant(Tensor::ones(&[1, 2]));
    let l = zinb_nll(&mut tape, &x, pi, mu, theta).unwrap();
    assert!(close(tape.value(l).item(), 0.5 * (0.75f64.ln() + 0.125f64.ln()).abs(), 1e-12));

    let bad = Tensor::from_nested(&[vec![0.5, 1.0]]).unwrap();
    assert!(zinb_nll(&mut tape, &bad, pi, mu, theta).is_err());
    let neg = Tensor::from_nested(&[vec![-1.0, 1.0]]).unwrap();
    assert!(zinb_nll(&mut tape, &neg, pi, mu, theta).is_err());
}

#[test]
fn zinb_gradient_matches_finite_differences() {
    let mut rng = RngState::new(2);
    let x = rng.sample_uniform(&[4, 5]).map(|u| if u < 0.4 { 0.0 } else { (u * 12.0).floor() });
    let pi = random(&mut rng, 4, 5, 0.05, 0.9);
    let mu = random(&mut rng, 4, 5, 0.2, 8.0);
    let theta = random(&mut rng, 4, 5, 0.2, 6.0);
    let report = check_gradients(&[pi, mu, theta], 1e-6, |t, v| zinb_nll(t, &x, v[0], v[1], v[2])).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn contrastive_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::identity(2));
    let l = contrastive_loss(&mut tape, z, z, 1.0).unwrap();
    let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    assert!(close(tape.value(l).item(), expected, 1e-12));
    assert!(close(expected, 0.313_262, 1e-6));

    let z1 = tape.constant(Tensor::from_nested(&[vec![1.0, 0.2], vec![-0.3, 1.0]]).unwrap());
    let z2 = tape.constant(Tensor::from_nested(&[vec![0.4, 0.9], vec![0.4, 0.9]]).unwrap());
    let l = contrastive_loss(&mut tape, z1, z2, 0.7).unwrap();
    assert!(close(tape.value(l).item(), 2f64.ln(), 1e-12));

    let single = tape.constant(Tensor::ones(&[1, 3]));
    assert!(contrastive_loss(&mut tape, single, single, 1.0).is_err());
    assert!(contrastive_loss(&mut tape, z1, z2, 0.0).is_err());
}

#[test]
fn contrastive_zero_row_gives_zero_cosine() {
    let mut tape = Tape::new();
    let z1 = tape.constant(Tensor::from_nested(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap());
    let z2 = tape.constant(Tensor::identity(2));
    let l = contrastive_loss(&mut tape, z1, z2, 1.0).unwrap();
    assert!(tape.value(l).all_finite());
}

#[test]
fn contrastive_gradient() {
    let mut rng = RngState::new(3);
    let z1 = random(&mut rng, 5, 3, -1.0, 1.0);
    let z2 = random(&mut rng, 5, 3, -1.0, 1.0);
    let report = check_gradients(&[z1, z2], 1e-5, |t, v| contrastive_loss(t, v[0], v[1], 0.7)).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn soft_assign_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::from_nested(&[vec![0.0, 0.0]]).unwrap());
    let one = tape.constant(Tensor::from_nested(&[vec![3.0, -1.0]]).unwrap());
    let q = soft_assign(&mut tape, z, one).unwrap();
    assert_eq!(tape.value(q).data(), &[1.0]);

    let equidistant = tape.constant(Tensor::from_nested(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap());
    let q = soft_assign(&mut tape, z, equidistant).unwrap();
    assert!(tape.value(q).data().iter().all(|v| close(*v, 1.0 / 3.0, 1e-15)));

    let s3 = 3f64.sqrt();
    let two = tape.constant(Tensor::from_nested(&[vec![0.0, 0.0], vec![s3, 0.0]]).unwrap());
    let q = soft_assign(&mut tape, z, two).unwrap();
    let v = tape.value(q);
    assert!(close(v.get(0, 0), 0.8, 1e-12) && close(v.get(0, 1), 0.2, 1e-12));
}

#[test]
fn target_distribution_examples() {
    let uniform = Tensor::full(&[3, 2], 0.5);
    assert_eq!(target_distribution(&uniform), uniform);
    let onehot = Tensor::from_nested(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    assert_eq!(target_distribution(&onehot), onehot);
    let q = Tensor::from_nested(&[vec![0.9, 0.1], vec![0.6, 0.4]]).unwrap();
    let p = target_distribution(&q);
    for (got, want) in p.data().iter().zip([0.9643, 0.0357, 0.4286, 0.5714]) {
        assert!(close(*got, want, 1e-4), "{got} vs {want}");
    }
    // exact fractions: row 0 = [27/28, 1/28], row 1 = [3/7, 4/7]
    assert!(close(p.get(0, 0), 27.0 / 28.0, 1e-15));
    assert!(close(p.get(1, 1), 4.0 / 7.0, 1e-15));
}

#[test]
fn kl_examples() {
    let mut tape = Tape::new();
    let q = Tensor::from_nested(&[vec![0.3, 0.7], vec![0.5, 0.5]]).unwrap();
    let qv = tape.constant(q.clone());
    let l = kl_cluster_loss(&mut tape, &q, qv).unwrap();
    assert!(tape.value(l).item().abs() < 1e-15);

    let half = tape.constant(Tensor::full(&[1, 2], 0.5));
    let p = Tensor::from_nested(&[vec![1.0, 0.0]]).unwrap();
    let l = kl_cluster_loss(&mut tape, &p, half).unwrap();
    assert!(close(tape.value(l).item(), 2f64.ln(), 1e-15));
}

#[test]
fn clustering_loss_gradient() {
    let mut rng = RngState::new(4);
    let z = random(&mut rng, 6, 3, -1.0, 1.0);
    let centers = random(&mut rng, 3, 3, -1.0, 1.0);
    let p = {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let cv = tape.constant(centers.clone());
        let q = soft_assign(&mut tape, zv, cv).unwrap();
        target_distribution(tape.value(q))
    };
    let report = check_gradients(&[z, centers], 1e-5, |t, v| {
        let q = soft_assign(t, v[0], v[1])?;
        kl_cluster_loss(t, &p, q)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert!(close(total_loss(Phase::Pretrain, 1.0, 1.0, 1.0, 1.0, &w), 1.31, 1e-15));
    let zero = LossWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 0.0, lambda4: 0.0 };
    assert_eq!(total_loss(Phase::Cluster, 3.0, 2.0, 1.0, 5.0, &zero), 0.0);
    let pre = total_loss(Phase::Pretrain, 0.4, 2.2, 3.1, 0.9, &w);
    let clu = total_loss(Phase::Cluster, 0.4, 2.2, 3.1, 0.9, &w);
    assert!(close(clu - pre, 1.5 * 0.9, 1e-14));
}

#[test]
fn total_loss_gradient_composes_all_terms() {
    let mut rng = RngState::new(5);
    let n = 5;
    let z = random(&mut rng, n, 3, -1.0, 1.0);
    let z_prev = random(&mut rng, n, 3, -1.0, 1.0);
    let centers = random(&mut rng, 2, 3, -1.0, 1.0);
    let pi = random(&mut rng, n, 4, 0.1, 0.8);
    let mu = random(&mut rng, n, 4, 0.5, 4.0);
    let theta = random(&mut rng, n, 4, 0.5, 4.0);
    let x = rng.sample_uniform(&[n, 4]).map(|u| (u * 4.0).floor());
    let a = rng.sample_uniform(&[n, n]).map(|u| if u < 0.5 { 1.0 } else { 0.0 });
    let p = Tensor::full(&[n, 2], 0.5);
    let w = LossWeights::default();
    for phase in [Phase::Pretrain, Phase::Cluster] {
        let report = check_gradients(&[z.clone(), centers.clone(), pi.clone(), mu.clone(), theta.clone()], 1e-6, |t, v| {
            let target = t.constant(a.clone());
            let recon = adagraph_core::model::decode_adjacency(t, v[0])?;
            let zp = t.constant(z_prev.clone());
            let q = soft_assign(t, v[0], v[1])?;
            let terms = LossTerms {
                graph: Some(graph_recon_loss(t, target, recon)?),
                zinb: Some(zinb_nll(t, &x, v[2], v[3], v[4])?),
                contrastive: Some(contrastive_loss(t, zp, v[0], 0.7)?),
                kl: Some(kl_cluster_loss(t, &p, q)?),
            };
            total_loss_on_tape(t, phase, &terms, &w)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{phase}: {report:?}");
    }
}

#[test]
fn loss_record_json_keys() {
    let r = LossRecord { epoch: 3, phase: Phase::Cluster, l_g: 0.1, l_zinb: 1.0, l_cg: 2.0, l_kl: 0.3, total: 1.5 };
    let s = serde_json::to_string(&r).unwrap();
    assert!(s.contains("\"phase\":\"cluster\""));
    for k in ["epoch", "l_g", "l_zinb", "l_cg", "l_kl", "total"] {
        assert!(s.contains(&format!("\"{k}\"")));
    }
}

fn stochastic(rng: &mut RngState, n: usize, c: usize) -> Tensor {
    let mut t = random(rng, n, c, 0.01, 1.0);
    for i in 0..n {
        let s: f64 = t.row(i).iter().sum();
        t.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn soft_assign_rows_and_argmin(seed in 0u64..10_000, c in 1usize..6) {
        let mut rng = RngState::new(seed);
        let z = random(&mut rng, 7, 3, -2.0, 2.0);
        let centers = random(&mut rng, c, 3, -2.0, 2.0);
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let cv = tape.constant(centers.clone());
        let q = soft_assign(&mut tape, zv, cv).unwrap();
        let q = tape.value(q);
        let argmax = q.row_argmax();
        for i in 0..7 {
            prop_assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let dists: Vec<f64> = (0..c)
                .map(|k| z.row(i).iter().zip(centers.row(k)).map(|(a, b)| (a - b).powi(2)).sum())
                .collect();
            let best = dists[argmax[i]];
            prop_assert!(dists.iter().all(|&d| d >= best - 1e-12));
        }
    }

    #[test]
    fn kl_is_nonnegative(seed in 0u64..10_000) {
        let mut rng = RngState::new(seed);
        let p = stochastic(&mut rng, 5, 3);
        let q = stochastic(&mut rng, 5, 3);
        let mut tape = Tape::new();
        let qv = tape.constant(q);
        let l = kl_cluster_loss(&mut tape, &p, qv).unwrap();
        prop_assert!(tape.value(l).item() >= -1e-12);
    }

    #[test]
    fn target_rows_sum_to_one(seed in 0u64..10_000) {
        let mut rng = RngState::new(seed);
        let p = target_distribution(&stochastic(&mut rng, 6, 4));
        for i in 0..6 {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn contrastive_scale_invariant(seed in 0u64..10_000, row in 0usize..4, scale in 0.01f64..100.0) {
        let mut rng = RngState::new(seed);
        let z1 = random(&mut rng, 4, 3, -1.0, 1.0);
        let z2 = random(&mut rng, 4, 3, -1.0, 1.0);
        let mut z2s = z2.clone();
        z2s.row_mut(row).iter_mut().for_each(|v| *v *= scale);
        let eval = |a: &Tensor, b: &Tensor| {
            let mut tape = Tape::new();
            let av = tape.constant(a.clone());
            let bv = tape.constant(b.clone());
            let l = contrastive_loss(&mut tape, av, bv, 0.7).unwrap();
            tape.value(l).item()
        };
        prop_assert!((eval(&z1, &z2) - eval(&z1, &z2s)).abs() < 1e-12);
    }

    #[test]
    fn collinear_positive_never_increases_anchor_loss(seed in 0u64..10_000, i in 0usize..5) {
        let mut rng = RngState::new(seed);
        let z1 = random(&mut rng, 5, 3, -1.0, 1.0);
        let z2 = random(&mut rng, 5, 3, -1.0, 1.0);
        let anchor_loss = |z2: &Tensor| {
            let mut tape = Tape::new();
            let a = tape.constant(z1.select_rows(&[i]));
            let b = tape.constant(z2.clone());
            let n1 = tape.row_normalize(a, 1e-12);
            let n2 = tape.row_normalize(b, 1e-12);
            let cos = tape.value(n1).row(0).to_vec();
            let logits: Vec<f64> = (0..5)
                .map(|j| cos.iter().zip(tape.value(n2).row(j)).map(|(x, y)| x * y).sum::<f64>() / 0.7)
                .collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - logits[i]
        };
        let mut replaced = z2.clone();
        replaced.row_mut(i).copy_from_slice(z1.row(i));
        prop_assert!(anchor_loss(&replaced) <= anchor_loss(&z2) + 1e-12);
    }
}
