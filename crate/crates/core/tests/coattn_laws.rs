use dcn::coattn::{attend_question, attention_maps, dense_coattn_layer, CoAttnLayerParams, DirectionMode};
use dcn::nn::ParamLayout;
use dcn::{Graph, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn layer(d: usize, k: usize, seed: u64) -> (Vec<Tensor>, CoAttnLayerParams) {
    let mut layout = ParamLayout::default();
    let p = CoAttnLayerParams::register(&mut layout, 0, d, k);
    let mut params = layout.initialize(&mut ChaCha8Rng::seed_from_u64(seed));
    // Nonzero biases so the fusion path is fully exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    params[p.fuse_bq.0] = random(&[d, 1], &mut rng);
    params[p.fuse_bv.0] = random(&[d, 1], &mut rng);
    (params, p)
}

fn permute_cols(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(t.shape());
    for (dst, &src) in perm.iter().enumerate() {
        for r in 0..t.rows() {
            out.set(r, dst, t.at(r, src));
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Dims {
    heads: usize,
    d_h: usize,
    k: usize,
    n: usize,
    t: usize,
    seed: u64,
}

fn dims() -> impl Strategy<Value = Dims> {
    (1usize..=4, 1usize..=4, 0usize..=3, 1usize..=6, 1usize..=9, any::<u64>()).prop_map(|(heads, d_h, k, n, t, seed)| Dims {
        heads,
        d_h,
        k,
        n,
        t,
        seed,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn maps_are_row_stochastic(dm in dims(), mode in prop_oneof![
        Just(DirectionMode::Both), Just(DirectionMode::ImageGuided), Just(DirectionMode::QuestionGuided)
    ]) {
        let d = dm.heads * dm.d_h;
        let (params, p) = layer(d, dm.k, dm.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(dm.seed.wrapping_add(2));
        let mut g = Graph::with_params(&params);
        let q = g.constant(random(&[d, dm.n], &mut rng));
        let v = g.constant(random(&[d, dm.t], &mut rng));
        let out = dense_coattn_layer(&mut g, q, v, &p, dm.heads, mode).unwrap();
        prop_assert_eq!(g.value(out.a_q).shape(), &[dm.t + dm.k, dm.n + dm.k]);
        prop_assert_eq!(g.value(out.a_v).shape(), &[dm.n + dm.k, dm.t + dm.k]);
        for map in [out.a_q, out.a_v] {
            let m = g.value(map);
            for r in 0..m.rows() {
                let s: f64 = m.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-10, "row {} sums to {}", r, s);
                prop_assert!(m.row(r).iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn attending_with_the_mean_map_is_the_mean_of_attended(dm in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(dm.seed);
        let (tk, nk) = (dm.t + dm.k, dm.n + dm.k);
        let d = dm.heads * dm.d_h;
        let mut g = Graph::new();
        let q_aug = g.constant(random(&[d, nk], &mut rng));
        let heads: Vec<_> = (0..dm.heads).map(|_| g.constant(random(&[tk, nk], &mut rng))).collect();
        let (mean_map, _) = attention_maps(&mut g, &heads, dm.d_h).unwrap();
        let lhs = attend_question(&mut g, q_aug, mean_map, dm.t).unwrap();
        let mut acc = Tensor::zeros(&[d, dm.t]);
        for &h in &heads {
            let (single, _) = attention_maps(&mut g, &[h], dm.d_h).unwrap();
            let part = attend_question(&mut g, q_aug, single, dm.t).unwrap();
            for (a, x) in acc.data_mut().iter_mut().zip(g.value(part).data()) {
                *a += x / dm.heads as f64;
            }
        }
        prop_assert!(g.value(lhs).max_abs_diff(&acc) < 1e-12);
    }

    #[test]
    fn region_and_word_permutations_commute_with_the_layer(dm in dims()) {
        let d = dm.heads * dm.d_h;
        let (params, p) = layer(d, dm.k, dm.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(dm.seed.wrapping_add(3));
        let qt = random(&[d, dm.n], &mut rng);
        let vt = random(&[d, dm.t], &mut rng);
        let mut perm_v: Vec<usize> = (0..dm.t).collect();
        perm_v.shuffle(&mut rng);
        let mut perm_q: Vec<usize> = (0..dm.n).collect();
        perm_q.shuffle(&mut rng);

        let mut g = Graph::with_params(&params);
        let q = g.constant(qt.clone());
        let v = g.constant(vt.clone());
        let base = dense_coattn_layer(&mut g, q, v, &p, dm.heads, DirectionMode::Both).unwrap();

        let vp = g.constant(permute_cols(&vt, &perm_v));
        let by_region = dense_coattn_layer(&mut g, q, vp, &p, dm.heads, DirectionMode::Both).unwrap();
        prop_assert!(g.value(by_region.q).max_abs_diff(g.value(base.q)) < 1e-10);
        prop_assert!(g.value(by_region.v).max_abs_diff(&permute_cols(g.value(base.v), &perm_v)) < 1e-10);

        let qp = g.constant(permute_cols(&qt, &perm_q));
        let by_word = dense_coattn_layer(&mut g, qp, v, &p, dm.heads, DirectionMode::Both).unwrap();
        prop_assert!(g.value(by_word.v).max_abs_diff(g.value(base.v)) < 1e-10);
        prop_assert!(g.value(by_word.q).max_abs_diff(&permute_cols(g.value(base.q), &perm_q)) < 1e-10);
    }

    #[test]
    fn swapping_question_and_image_swaps_the_outputs(dm in dims()) {
        let d = dm.heads * dm.d_h;
        let (params, p) = layer(d, dm.k, dm.seed);
        let swapped = CoAttnLayerParams {
            wv: p.wq,
            wq: p.wv,
            mem_q: p.mem_v,
            mem_v: p.mem_q,
            fuse_wq: p.fuse_wv,
            fuse_bq: p.fuse_bv,
            fuse_wv: p.fuse_wq,
            fuse_bv: p.fuse_bq,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(dm.seed.wrapping_add(4));
        let mut g = Graph::with_params(&params);
        let q = g.constant(random(&[d, dm.n], &mut rng));
        let v = g.constant(random(&[d, dm.t], &mut rng));
        let a = dense_coattn_layer(&mut g, q, v, &p, dm.heads, DirectionMode::Both).unwrap();
        let b = dense_coattn_layer(&mut g, v, q, &swapped, dm.heads, DirectionMode::Both).unwrap();
        prop_assert_eq!(g.value(a.q), g.value(b.v));
        prop_assert_eq!(g.value(a.v), g.value(b.q));
        prop_assert_eq!(g.value(a.a_q), g.value(b.a_v));
    }
}
