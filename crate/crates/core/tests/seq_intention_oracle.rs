//! Sequence intention checked against a plain-loop reimplementation, plus
//! its structural properties.

mod common;

use patchrep::nn::Ctx;
use patchrep::seq_intention::{cross_attention_weights, embed_streams, encode_seq_intention, seq_intention};
use patchrep::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::seq::*;

#[test]
fn forward_matches_plain_reimplementation() {
    for (seed, layers, heads) in [(1u64, 1usize, 1usize), (2, 2, 2), (3, 1, 2), (4, 2, 4)] {
        let (err, minus_zero) = forward_error(seed, layers, heads, seed == 3);
        assert!(err <= 1e-5, "seed {seed}: max difference {err:.2e}");
        if seed == 3 {
            assert!(minus_zero);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000, real in 1usize..=L) {
        let m = model(1, 2, seed % 7);
        let [a, b, _] = random_streams(seed);
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &m.store);
        let s = embed_streams(&cx, &m.params.seq, &a, &b, &b).unwrap();
        let mut mask = vec![false; L];
        for x in mask.iter_mut().take(real) {
            *x = true;
        }
        let w = cross_attention_weights(&cx, s.e_cc_m, s.e_cc_p, &mask).unwrap().to_vec();
        for i in 0..L {
            let row = &w[i * L..(i + 1) * L];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row[real..].iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn swapping_streams_swaps_outputs(seed in 0u64..1000) {
        let m = model(2, 2, seed % 5);
        let [p, q, c] = random_streams(seed);
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &m.store);
        let o = encode_seq_intention(&cx, &m.params.seq, &p, &q, &c).unwrap();
        let r = encode_seq_intention(&cx, &m.params.seq, &q, &p, &c).unwrap();
        prop_assert_eq!(o.o_cc_p.to_vec(), r.o_cc_m.to_vec());
        prop_assert_eq!(o.o_cc_m.to_vec(), r.o_cc_p.to_vec());
        prop_assert_eq!(o.o_ct2cc_p.to_vec(), r.o_ct2cc_m.to_vec());
    }

    #[test]
    fn every_real_position_receives_gradient(seed in 0u64..1000) {
        let m = model(1, 2, seed % 5);
        let [p, q, c] = random_streams(seed);
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &m.store);
        let s = embed_streams(&cx, &m.params.seq, &p, &q, &c).unwrap();
        let o = seq_intention(&cx, &m.params.seq, &s).unwrap();
        // A random linear read-out of all four outputs.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = None;
        for v in [o.o_cc_p, o.o_cc_m, o.o_ct2cc_p, o.o_ct2cc_m] {
            let w = Tensor::from_vec(&[L, D], (0..L * D).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let t = v.mul_const(&w).unwrap().sum();
            total = Some(match total { None => t, Some(a) => t.add(&a).unwrap() });
        }
        let g = tape.backward(total.unwrap()).unwrap();
        for (stream, e) in [(&p, s.e_cc_p), (&q, s.e_cc_m), (&c, s.e_cbp)] {
            let ge = g.get(e).unwrap();
            for i in (0..L).filter(|&i| stream.mask[i]) {
                prop_assert!(ge[i * D..(i + 1) * D].iter().any(|x| x.abs() > 1e-12), "row {} has zero gradient", i);
            }
        }
    }
}
