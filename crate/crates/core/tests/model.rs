#![allow(clippy::needless_range_loop)]

use adagraph_core::graph::{normalize_adjacency, BinaryAdjacency};
use adagraph_core::model::{
    decode_adjacency, encode, tagcn_layer, zinb_head, Activation, Architecture, ModelParams,
};
use adagraph_core::tensor::gradcheck::check_gradients;
use adagraph_core::tensor::special::softplus;
use adagraph_core::{RngState, Tape, Tensor};
use proptest::prelude::*;

fn random(rng: &mut RngState, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    rng.sample_uniform(&[r, c]).map(|u| lo + (hi - lo) * u)
}

fn toy_graph() -> BinaryAdjacency {
    BinaryAdjacency::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]).unwrap()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn tagcn_zero_order_is_plain_map() {
    let mut rng = RngState::new(1);
    let h = random(&mut rng, 5, 3, -1.0, 1.0);
    let w = random(&mut rng, 3, 2, -1.0, 1.0);
    let op = normalize_adjacency(&toy_graph(), 0);
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let wv = tape.constant(w.clone());
    let out = tagcn_layer(&mut tape, hv, &op, &[wv], Activation::Linear).unwrap();
    let expected = adagraph_core::tensor::matmul(&h, &w).unwrap();
    assert!(max_abs_diff(tape.value(out), &expected) < 1e-14);
}

#[test]
fn tagcn_edgeless_graph_sums_weights() {
    let mut rng = RngState::new(2);
    let h = random(&mut rng, 4, 3, -1.0, 1.0);
    let ws: Vec<Tensor> = (0..3).map(|_| random(&mut rng, 3, 5, -1.0, 1.0)).collect();
    let op = normalize_adjacency(&BinaryAdjacency::empty(4), 2);
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let wv: Vec<_> = ws.iter().map(|w| tape.constant(w.clone())).collect();
    let out = tagcn_layer(&mut tape, hv, &op, &wv, Activation::Relu).unwrap();
    let mut wsum = ws[0].clone();
    wsum.add_assign(&ws[1]);
    wsum.add_assign(&ws[2]);
    let expected = adagraph_core::tensor::matmul(&h, &wsum).unwrap().map(|v| v.max(0.0));
    assert!(max_abs_diff(tape.value(out), &expected) < 1e-12);
}

#[test]
fn tagcn_two_node_hand_computation() {
    let op = normalize_adjacency(&BinaryAdjacency::from_edges(2, &[(0, 1)]).unwrap(), 1);
    let h = Tensor::from_nested(&[vec![1.0, 2.0], vec![3.0, -4.0]]).unwrap();
    let w0 = Tensor::from_nested(&[vec![1.0], vec![0.5]]).unwrap();
    let w1 = Tensor::from_nested(&[vec![-2.0], vec![1.0]]).unwrap();
    // averaging gives [2, -1] for both nodes; that times w1 is -5
    let expected = [1.0 + 1.0 - 5.0, 3.0 - 2.0 - 5.0];
    for widen in [false, true] {
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let (a, b) = if widen {
            // same map padded to two outputs so the widening branch runs
            let pad = |w: &Tensor| Tensor::from_nested(&[vec![w.get(0, 0), 0.0, 0.0], vec![w.get(1, 0), 0.0, 0.0]]).unwrap();
            (tape.constant(pad(&w0)), tape.constant(pad(&w1)))
        } else {
            (tape.constant(w0.clone()), tape.constant(w1.clone()))
        };
        let out = tagcn_layer(&mut tape, hv, &op, &[a, b], Activation::Linear).unwrap();
        let v = tape.value(out);
        for i in 0..2 {
            assert!((v.get(i, 0) - expected[i]).abs() < 1e-12, "widen={widen}");
        }
    }
}

fn small_arch() -> Architecture {
    Architecture { n_genes: 6, widths: vec![8, 5, 4], k_order: 2 }
}

#[test]
fn encode_shape_and_zero_input() {
    let arch = Architecture { n_genes: 10, widths: vec![512, 256, 128], k_order: 3 };
    let params = ModelParams::init(&arch, &mut RngState::new(3)).unwrap();
    let op = normalize_adjacency(&toy_graph(), 3);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let x = tape.constant(Tensor::zeros(&[5, 10]));
    let z = encode(&mut tape, x, &op, &vars.encoder).unwrap();
    assert_eq!(tape.shape(z), &[5, 128]);
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
}

#[test]
fn encode_gradient_matches_finite_differences() {
    let arch = small_arch();
    let params = ModelParams::init(&arch, &mut RngState::new(4)).unwrap();
    let mut rng = RngState::new(5);
    let x = random(&mut rng, 5, 6, 0.0, 2.0);
    let op = normalize_adjacency(&toy_graph(), 2);
    let rest: Vec<Vec<Tensor>> = params.encoder.weights[1..].to_vec();
    let first = params.encoder.weights[0].clone();
    let report = check_gradients(&first, 1e-5, |t, v| {
        let xv = t.constant(x.clone());
        let mut layers = vec![v.to_vec()];
        for l in &rest {
            layers.push(l.iter().map(|w| t.constant(w.clone())).collect());
        }
        let z = encode(t, xv, &op, &layers)?;
        Ok(t.sum(z))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn decode_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::from_nested(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap());
    let a = decode_adjacency(&mut tape, z).unwrap();
    assert_eq!(tape.value(a).get(0, 1), 0.5);

    let r = 3f64.ln().sqrt();
    let z = tape.constant(Tensor::from_nested(&[vec![r, 0.0], vec![r, 0.0]]).unwrap());
    let a = decode_adjacency(&mut tape, z).unwrap();
    assert!((tape.value(a).get(0, 1) - 0.75).abs() < 1e-12);

    let mut rng = RngState::new(6);
    let z = tape.constant(random(&mut rng, 9, 4, -2.0, 2.0));
    let a = decode_adjacency(&mut tape, z).unwrap();
    let v = tape.value(a);
    for i in 0..9 {
        for j in 0..9 {
            assert_eq!(v.get(i, j), v.get(j, i));
            assert!(v.get(i, j) > 0.0 && v.get(i, j) < 1.0);
        }
    }
}

#[test]
fn zinb_head_at_zero() {
    let arch = small_arch();
    let mut params = ModelParams::init(&arch, &mut RngState::new(7)).unwrap();
    for d in [&mut params.zinb.pi, &mut params.zinb.mu, &mut params.zinb.theta] {
        d.weight = Tensor::zeros(d.weight.shape());
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let z = tape.constant(Tensor::zeros(&[3, 4]));
    let sf = [0.5, 1.0, 2.0];
    let out = zinb_head(&mut tape, z, &sf, &vars).unwrap();
    for i in 0..3 {
        for j in 0..6 {
            assert_eq!(tape.value(out.pi).get(i, j), 0.5);
            assert!((tape.value(out.mu).get(i, j) - sf[i]).abs() < 1e-15);
            let theta = tape.value(out.theta).get(i, j);
            assert!((theta - (softplus(0.0) + 1e-4)).abs() < 1e-15);
            assert!((theta - 0.6932).abs() < 1e-4);
        }
    }
}

#[test]
fn zinb_head_size_factor_scaling() {
    let arch = small_arch();
    let params = ModelParams::init(&arch, &mut RngState::new(8)).unwrap();
    let mut rng = RngState::new(9);
    let zt = random(&mut rng, 3, 4, -1.0, 1.0);
    let run = |sf: &[f64]| {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let z = tape.constant(zt.clone());
        let out = zinb_head(&mut tape, z, sf, &vars).unwrap();
        tape.value(out.mu).clone()
    };
    let base = run(&[1.0, 0.7, 1.3]);
    let doubled = run(&[1.0, 1.4, 1.3]);
    for j in 0..6 {
        assert_eq!(doubled.get(1, j), 2.0 * base.get(1, j));
        assert_eq!(doubled.get(0, j), base.get(0, j));
    }
}

#[test]
fn checkpoint_keys() {
    let arch = Architecture { n_genes: 4, widths: vec![512, 256, 128], k_order: 3 };
    let params = ModelParams::init(&arch, &mut RngState::new(10)).unwrap();
    let map = params.to_map();
    assert!(map.contains_key("layer1.order0") && map.contains_key("layer3.order3"));
    assert_eq!(map["layer1.order2"].shape(), &[4, 512]);
    assert_eq!(map["zinb.0.weight"].shape(), &[128, 256]);
    assert_eq!(map["zinb.1.weight"].shape(), &[256, 512]);
    assert_eq!(map["zinb.theta.weight"].shape(), &[512, 4]);
    let mut broken = map.clone();
    broken.remove("zinb.pi.bias");
    assert!(ModelParams::from_map(&arch, &broken).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encode_is_permutation_equivariant(seed in 0u64..10_000) {
        let arch = small_arch();
        let params = ModelParams::init(&arch, &mut RngState::new(seed)).unwrap();
        let mut rng = RngState::new(seed + 1);
        let x = random(&mut rng, 5, 6, 0.0, 2.0);
        let perm = [3usize, 0, 4, 1, 2];
        let mut inverse = [0usize; 5];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        // row p of the permuted input is row inverse[p] of the original
        let xp = x.select_rows(&inverse);
        let g = toy_graph();
        let run = |x: &Tensor, g: &BinaryAdjacency| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let xv = tape.constant(x.clone());
            let z = encode(&mut tape, xv, &normalize_adjacency(g, 2), &vars.encoder).unwrap();
            tape.value(z).clone()
        };
        let z = run(&x, &g);
        let zp = run(&xp, &g.permute(&perm));
        prop_assert!(max_abs_diff(&zp, &z.select_rows(&inverse)) < 1e-12);
    }

    #[test]
    fn decoder_depends_only_on_gram(seed in 0u64..10_000, angle in 0.0f64..std::f64::consts::TAU) {
        let mut rng = RngState::new(seed);
        let z = random(&mut rng, 6, 2, -2.0, 2.0);
        let (c, s) = (angle.cos(), angle.sin());
        let rot = Tensor::from_nested(&[vec![c, -s], vec![s, c]]).unwrap();
        let zr = adagraph_core::tensor::matmul(&z, &rot).unwrap();
        let run = |z: &Tensor| {
            let mut tape = Tape::new();
            let v = tape.constant(z.clone());
            let a = decode_adjacency(&mut tape, v).unwrap();
            tape.value(a).clone()
        };
        prop_assert!(max_abs_diff(&run(&z), &run(&zr)) < 1e-12);
    }

    #[test]
    fn zinb_head_outputs_finite_and_in_range(seed in 0u64..10_000, scale in 1.0f64..1e3) {
        let arch = small_arch();
        let params = ModelParams::init(&arch, &mut RngState::new(seed)).unwrap();
        let mut rng = RngState::new(seed + 7);
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let z = tape.constant(random(&mut rng, 4, 4, -scale, scale));
        let out = zinb_head(&mut tape, z, &[1.0, 0.5, 2.0, 1.2], &vars).unwrap();
        for v in tape.value(out.pi).data() {
            prop_assert!(*v >= 0.0 && *v <= 1.0);
        }
        prop_assert!(tape.value(out.mu).data().iter().all(|v| *v > 0.0 && v.is_finite()));
        prop_assert!(tape.value(out.theta).data().iter().all(|v| *v > 0.0 && v.is_finite()));
    }
}
