use patchrep::bpe::Padded;
use patchrep::config::ModelConfig;
use patchrep::graph::GcnConfig;
use patchrep::model::PatchModel;
use patchrep::nn::Ctx;
use patchrep::seq_intention::encode_seq_intention;
use patchrep::tensor::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type M = Vec<Vec<f64>>;
pub const D: usize = 8;
pub const L: usize = 4;
pub const V: usize = 20;

pub fn model(layers: usize, heads: usize, seed: u64) -> PatchModel<f64> {
    let cfg = ModelConfig {
        d_e: D,
        n_heads: heads,
        n_layers: layers,
        dropout: 0.0,
        l_max: L,
        n_g: 16,
        d_b: D,
    };
    let mut m = PatchModel::new(&cfg, &GcnConfig::default(), V, seed);
    // Give every norm a non-trivial scale and shift so the oracle covers them.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        let name = m.store.name(id).to_string();
        if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".b") {
            for x in m.store.value_mut(id).data_mut() {
                *x = rng.gen_range(-1.0..1.5);
            }
        }
    }
    m
}

pub fn param(m: &PatchModel<f64>, name: &str) -> M {
    let t = m.store.value(m.store.id(name).unwrap_or_else(|| panic!("no parameter {name}")));
    let (r, c) = t.dims2();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn matmul(a: &M, b: &M) -> M {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

pub fn linear(m: &PatchModel<f64>, name: &str, x: &M) -> M {
    let w = param(m, &format!("{name}.w"));
    let b = &param(m, &format!("{name}.b"))[0];
    matmul(x, &w)
        .into_iter()
        .map(|row| row.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn norm(x: &M, gamma: &[f64], beta: &[f64]) -> M {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(k, v)| (v - mu) / (var + 1e-5).sqrt() * gamma[k] + beta[k])
                .collect()
        })
        .collect()
}

pub fn ln(m: &PatchModel<f64>, name: &str, x: &M) -> M {
    norm(x, &param(m, &format!("{name}.gamma"))[0], &param(m, &format!("{name}.beta"))[0])
}

pub fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

pub fn softmax_masked(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let mx = scores
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().zip(mask).map(|(s, m)| if *m { (s - mx).exp() } else { 0.0 }).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Token + position embedding, then post-norm encoder layers.
pub fn embed(m: &PatchModel<f64>, heads: usize, layers: usize, x: &Padded) -> M {
    let tok = param(m, "tok_emb");
    let pos = param(m, "pos_emb");
    let mut h: M = (0..L).map(|i| (0..D).map(|k| tok[x.ids[i]][k] + pos[i][k]).collect()).collect();
    let dh = D / heads;
    for l in 0..layers {
        let p = format!("enc.{l}");
        let q = linear(m, &format!("{p}.attn.q"), &h);
        let k = linear(m, &format!("{p}.attn.k"), &h);
        let v = linear(m, &format!("{p}.attn.v"), &h);
        let mut cat = vec![vec![0.0; D]; L];
        for hd in 0..heads {
            for i in 0..L {
                let scores: Vec<f64> = (0..L)
                    .map(|j| (0..dh).map(|t| q[i][hd * dh + t] * k[j][hd * dh + t]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let a = softmax_masked(&scores, &x.mask);
                for t in 0..dh {
                    cat[i][hd * dh + t] = (0..L).map(|j| a[j] * v[j][hd * dh + t]).sum();
                }
            }
        }
        let att = linear(m, &format!("{p}.attn.o"), &cat);
        h = ln(m, &format!("{p}.ln1"), &add(&h, &att));
        let up: M = linear(m, &format!("{p}.ffn.up"), &h)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        let down = linear(m, &format!("{p}.ffn.down"), &up);
        h = ln(m, &format!("{p}.ln2"), &add(&h, &down));
    }
    for (row, &real) in h.iter_mut().zip(&x.mask) {
        if !real {
            *row = vec![0.0; D];
        }
    }
    h
}

/// Raw dot-product attention of each query row over the source.
pub fn attend(src: &M, src_mask: &[bool], qry: &M) -> M {
    if !src_mask.iter().any(|m| *m) {
        return vec![vec![0.0; D]; L];
    }
    qry.iter()
        .map(|e| {
            let scores: Vec<f64> = src.iter().map(|h| h.iter().zip(e).map(|(a, b)| a * b).sum()).collect();
            let a = softmax_masked(&scores, src_mask);
            (0..D).map(|k| (0..L).map(|n| a[n] * src[n][k]).sum()).collect()
        })
        .collect()
}

/// relu(h(E) + (E + v)) with PAD rows zeroed.
pub fn resnet(m: &PatchModel<f64>, name: &str, e: &M, v: &M, mask: &[bool]) -> M {
    let n = ln(m, name, e);
    (0..L)
        .map(|i| {
            (0..D)
                .map(|k| if mask[i] { (n[i][k] + e[i][k] + v[i][k]).max(0.0) } else { 0.0 })
                .collect()
        })
        .collect()
}

pub fn padded(ids: Vec<usize>, real: usize) -> Padded {
    let mask = (0..ids.len()).map(|i| i < real).collect();
    let ids = ids.iter().enumerate().map(|(i, &t)| if i < real { t } else { 0 }).collect();
    Padded { ids, mask }
}

pub fn random_streams(seed: u64) -> [Padded; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = || padded((0..L).map(|_| rng.gen_range(5..V)).collect(), rng.gen_range(1..=L));
    [s(), s(), s()]
}

pub fn close(a: &[f64], b: &M, tol: f64) -> bool {
    a.iter().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() <= tol)
}

/// Largest entry difference between the four library outputs and the
/// reimplementation, and whether the minus-side output is all zeros.
/// `pure_addition` empties the minus stream.
pub fn forward_error(seed: u64, layers: usize, heads: usize, pure_addition: bool) -> (f64, bool) {
    let m = model(layers, heads, seed);
    let [cc_p, mut cc_m, cbp] = random_streams(seed);
    if pure_addition {
        cc_m = padded(vec![0; L], 0);
    }
    let e_p = embed(&m, heads, layers, &cc_p);
    let e_m = embed(&m, heads, layers, &cc_m);
    let e_b = embed(&m, heads, layers, &cbp);
    let or = |a: &[bool], b: &[bool]| a.iter().zip(b).map(|(x, y)| *x || *y).collect::<Vec<_>>();
    let want = [
        resnet(&m, "seq.op_ln", &e_p, &attend(&e_m, &cc_m.mask, &e_p), &cc_p.mask),
        resnet(&m, "seq.op_ln", &e_m, &attend(&e_p, &cc_p.mask, &e_m), &cc_m.mask),
        resnet(&m, "seq.ctx_ln", &e_p, &e_b, &or(&cc_p.mask, &cbp.mask)),
        resnet(&m, "seq.ctx_ln", &e_m, &e_b, &or(&cc_m.mask, &cbp.mask)),
    ];
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, &m.store);
    let o = encode_seq_intention(&cx, &m.params.seq, &cc_p, &cc_m, &cbp).unwrap();
    let got = [o.o_cc_p.to_vec(), o.o_cc_m.to_vec(), o.o_ct2cc_p.to_vec(), o.o_ct2cc_m.to_vec()];
    let mut worst: f64 = 0.0;
    for (g, w) in got.iter().zip(&want) {
        for (x, y) in g.iter().zip(w.iter().flatten()) {
            worst = worst.max((x - y).abs());
        }
    }
    (worst, got[1].iter().all(|x| *x == 0.0))
}
