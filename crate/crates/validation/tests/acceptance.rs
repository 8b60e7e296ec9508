//! End-to-end acceptance run. Prints one `criterion N: PASS|FAIL` line per
//! check and exits nonzero when any check fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use patchrep::bpe::normalize_ws;
use patchrep::config::Config;
use patchrep::fusion::AblationFlags;
use patchrep::graph::renormalized_laplacian;
use patchrep::heads::{
    classify_correctness, finetune_correctness, finetune_generation, BugReport, CorrectnessSample, GenerationExample,
    RetrievalIndex,
};
use patchrep::metrics::{bleu, meteor, rouge_l, tokenize};
use patchrep::model::EncodedPatch;
use patchrep::nn::Ctx;
use patchrep::pipeline::{preprocess_all, read_jsonl, record_id, Artifacts, CorrectnessRecord, GenerationRecord, Prepared};
use patchrep::pretraining::{decode, mlm_eval_loss, run_pretraining};
use patchrep::tensor::{Adam, Tape};
use patchrep::Model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::grad::{self, Task, CONFIGS};
use common::graphs::*;
use common::seq::forward_error;
use common::text::brute_lcs;

type Outcome = Result<String, String>;

const STEPS: usize = 500;
const MINUTE: Duration = Duration::from_secs(60);

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn within(t: Instant, limit: Duration) -> Result<(), String> {
    if t.elapsed() < limit {
        Ok(())
    } else {
        Err(format!("took {:.1?}, limit {limit:?}", t.elapsed()))
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for (k, (layers, task, flags)) in CONFIGS.into_iter().enumerate() {
        let e = grad::check(layers, task, flags, k as u64 + 1);
        if e >= 1e-3 {
            return Err(format!("{task:?} {} layers={layers}: relative error {e:.2e}", flags.name()));
        }
        worst = worst.max(e);
    }
    within(t, 2 * MINUTE)?;
    Ok(format!("worst relative error {worst:.2e} over 10 configs in {:.1?}", t.elapsed()))
}

fn c2_laplacian() -> Outcome {
    let a = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    let p = renormalized_laplacian(3, &a).map_err(|e| e.to_string())?;
    let r6 = 1.0 / 6f64.sqrt();
    let want = [0.5, r6, 0.0, r6, 1.0 / 3.0, r6, 0.0, r6, 0.5];
    let err = p.iter().zip(want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if err >= 1e-6 {
        return Err(format!("path Laplacian off by {err:.2e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for g in 0..100 {
        let n = rng.gen_range(1..=10);
        let bits: Vec<bool> = (0..n * (n - 1) / 2).map(|_| rng.gen_bool(0.4)).collect();
        let p = renormalized_laplacian(n, &random_adjacency(n, &bits)).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..n {
                if p[i * n + j] != p[j * n + i] {
                    return Err(format!("graph {g}: P[{i}][{j}] != P[{j}][{i}]"));
                }
            }
        }
    }
    Ok(format!("path error {err:.1e}; 100 random graphs symmetric"))
}

fn c3_graph_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let abc = ["A", "B", "C"];
    for k in 0..200 {
        let a = random_tree(&mut rng, 6, &abc).graph();
        let b = random_tree(&mut rng, 6, &abc).graph();
        let lower = random_tree(&mut rng, 6, &["A", "B"]).graph();
        let upper = random_tree(&mut rng, 6, &["x", "y"]).graph();
        check_merge(&a, &b)
            .and_then(|_| check_self_merge(&a))
            .and_then(|_| check_disjoint_union(&lower, &upper))
            .map_err(|e| format!("tree pair {k}: {e}"))?;
    }
    for k in 0..100 {
        let local = random_tree(&mut rng, 5, &["A", "B"]).graph();
        let global = random_tree(&mut rng, 8, &["A", "B"]).graph();
        check_align(&local, &global).map_err(|e| format!("alignment pair {k}: {e}"))?;
    }
    Ok("200 merge pairs and 100 alignment pairs agree with exhaustive search".into())
}

fn c4_seq_oracle() -> Outcome {
    let (err, _) = forward_error(1, 1, 1, false);
    let (err2, _) = forward_error(2, 2, 2, false);
    let worst = err.max(err2);
    if worst <= 1e-5 {
        Ok(format!("max entry difference {worst:.2e}"))
    } else {
        Err(format!("max entry difference {worst:.2e}"))
    }
}

/// The bundled toy corpus, featurized once.
struct Toy {
    cfg: Config,
    art: Artifacts,
    prep: Vec<Prepared>,
    msgs: Vec<String>,
    enc: Vec<EncodedPatch>,
}

impl Toy {
    fn load() -> Result<Toy, String> {
        let cfg = Config::load(&data("toy_config.json")).map_err(|e| e.to_string())?;
        let recs: Vec<GenerationRecord> = read_jsonl(&data("toy_generation.jsonl")).map_err(|e| e.to_string())?;
        let items: Vec<_> = recs.iter().enumerate().map(|(i, r)| (record_id(&r.id, i), r.diff.clone(), r.original.clone())).collect();
        let (prep, _) = preprocess_all(&items);
        let msgs: Vec<String> = recs.iter().map(|r| r.msg.clone()).collect();
        let art = Artifacts::build(&cfg, &prep, &msgs).map_err(|e| e.to_string())?;
        let enc = {
            let f = art.featurizer(&cfg);
            prep.iter().map(|p| f.featurize(&p.patch)).collect()
        };
        Ok(Toy { cfg, art, prep, msgs, enc })
    }

    fn fresh(&self) -> Model {
        Model::new(&self.cfg.model, &self.cfg.gcn, self.art.vocab.len(), self.cfg.train.seed)
    }

    fn eval(&self, m: &Model, flags: AblationFlags) -> Result<f64, String> {
        mlm_eval_loss(m, &self.enc, flags, self.cfg.train.mask_rate, 0, 4).map_err(|e| e.to_string())
    }

    /// 500 MLM steps from the seeded initial weights; returns the model,
    /// the first-step loss and the final evaluation loss.
    fn pretrain(&self, flags: AblationFlags) -> Result<(Model, f64, f64), String> {
        let mut m = self.fresh();
        let t = &self.cfg.train;
        let log = run_pretraining(&mut m, &self.enc, STEPS, t.batch_size, t.lr, t.mask_rate, flags, t.seed)
            .map_err(|e| e.to_string())?;
        let eval = self.eval(&m, flags)?;
        Ok((m, log[0].loss, eval))
    }
}

fn c5_pretraining(toy: &Toy, full: &(Model, f64, f64), elapsed: Duration) -> Outcome {
    let ln_v = (toy.art.vocab.len() as f64).ln();
    let initial = toy.eval(&toy.fresh(), AblationFlags::FULL)?;
    let (_, first, fin) = full;
    let detail = format!(
        "ln|V| {ln_v:.3}, initial {initial:.3}, first step {first:.3}, after {STEPS} steps {fin:.4}, {elapsed:.1?}"
    );
    let near = |x: f64| (x - ln_v).abs() <= 0.2 * ln_v;
    if near(initial) && near(*first) && *fin < 0.3 && elapsed < 10 * MINUTE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c6_finetuning(toy: &Toy, pretrained: &Model) -> Outcome {
    let flags = AblationFlags::FULL;
    let t = &toy.cfg.train;

    let start = Instant::now();
    let mut m = pretrained.clone();
    let mut adam = Adam::new(t.lr);
    let gen: Vec<GenerationExample> = toy
        .prep
        .iter()
        .zip(&toy.enc)
        .map(|(p, e)| GenerationExample {
            id: p.id.clone(),
            patch: e.clone(),
            msg: toy.art.vocab.encode_ids(&toy.msgs[p.record]),
        })
        .collect();
    finetune_generation(&mut m, &mut adam, &gen, STEPS, t.batch_size, flags, t.seed).map_err(|e| e.to_string())?;
    let mut exact = 0;
    for (g, p) in gen.iter().zip(&toy.prep) {
        let emb = m.embed(&g.patch, flags).map_err(|e| e.to_string())?;
        let out = decode(&m, &emb, 3, toy.cfg.decode.max_out);
        let text = toy.art.vocab.decode(&out).map_err(|e| e.to_string())?;
        if text == normalize_ws(&toy.msgs[p.record]) {
            exact += 1;
        }
    }
    let gen_time = start.elapsed();

    let start = Instant::now();
    let recs: Vec<CorrectnessRecord> = read_jsonl(&data("toy_correctness.jsonl")).map_err(|e| e.to_string())?;
    let items: Vec<_> = recs.iter().enumerate().map(|(i, r)| (record_id(&r.id, i), r.diff.clone(), r.original.clone())).collect();
    let (cp, _) = preprocess_all(&items);
    let f = toy.art.featurizer(&toy.cfg);
    let samples: Vec<CorrectnessSample> = cp
        .iter()
        .map(|p| CorrectnessSample {
            id: p.id.clone(),
            patch: f.featurize(&p.patch),
            bug_report: recs[p.record].bug_report.as_deref().map(|r| BugReport::Text(f.text(r))),
            label: recs[p.record].label,
        })
        .collect();
    let mut m = pretrained.clone();
    let mut adam = Adam::new(t.lr);
    finetune_correctness(&mut m, &mut adam, &samples, STEPS, t.batch_size, flags, t.seed).map_err(|e| e.to_string())?;
    let mut right = 0;
    for s in &samples {
        let p = classify_correctness(&m, s, flags).map_err(|e| e.to_string())?;
        if (p >= 0.5) == (s.label == 1) {
            right += 1;
        }
    }
    let cor_time = start.elapsed();

    let detail = format!(
        "exact {exact}/{} in {gen_time:.1?}; accuracy {right}/{} in {cor_time:.1?}",
        gen.len(),
        samples.len()
    );
    if exact >= 14 && right == samples.len() && gen_time < 10 * MINUTE && cor_time < 10 * MINUTE {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c7_ablation(toy: &Toy, full: f64) -> Outcome {
    let (_, _, no_seq) = toy.pretrain(AblationFlags::NO_SEQ)?;
    let (_, _, no_graph) = toy.pretrain(AblationFlags::NO_GRAPH)?;
    let mut leaks = Vec::new();
    for task in [Task::Mlm, Task::Generation, Task::Correctness] {
        let mut s = grad::setup(1, 5);
        let grads = {
            let tape = Tape::new();
            let cx = Ctx::eval(&tape, &s.model.store);
            let l = grad::loss(&cx, &s, task, AblationFlags::NEITHER).map_err(|e| e.to_string())?;
            tape.backward(l).map_err(|e| e.to_string())?
        };
        s.model.store.zero_grad();
        grads.accumulate_into(&mut s.model.store);
        for id in s.model.intention_params() {
            if s.model.store.grad(id).iter().any(|g| *g != 0.0) {
                leaks.push(format!("{task:?}: {}", s.model.store.name(id)));
            }
        }
    }
    let detail = format!("after {STEPS} steps full {full:.4}, no-seq {no_seq:.4}, no-graph {no_graph:.4}; nonzero gradients with neither: {}", leaks.len());
    if full <= no_seq && full <= no_graph && leaks.is_empty() {
        Ok(detail)
    } else if leaks.is_empty() {
        Err(detail)
    } else {
        Err(format!("{detail} ({})", leaks.join(", ")))
    }
}

fn c8_metrics() -> Outcome {
    let t = |s: &str| tokenize(s);
    let got = bleu(&t("the cat sat"), &t("the cat sat down"), 4).map_err(|e| e.to_string())?;
    let want = (1.0f64 - 4.0 / 3.0).exp();
    if (got - want).abs() > 1e-12 {
        return Err(format!("BLEU {got} vs hand value {want}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 0..50 {
        let mut words = || -> Vec<String> { (0..8).map(|_| ["a", "b", "c", "d"][rng.gen_range(0..4)].to_string()).collect() };
        let (a, b) = (words(), words());
        let lcs = brute_lcs(&a, &b) as f64;
        let want = if lcs == 0.0 { 0.0 } else { 2.0 * lcs / 16.0 };
        let got = rouge_l(&a, &b);
        if (got - want).abs() > 1e-12 {
            return Err(format!("pair {k}: ROUGE-L {got} vs brute-force {want}"));
        }
    }
    let m = meteor(&t("a b c"), &t("a c b"));
    if (m - 0.5).abs() > 1e-12 {
        return Err(format!("METEOR {m} vs hand value 0.5"));
    }
    for s in ["update readme with build steps", "fix null check", "x"] {
        let s = t(s);
        let b = bleu(&s, &s, 4).map_err(|e| e.to_string())?;
        let r = rouge_l(&s, &s);
        if (b - 1.0).abs() > 1e-9 || (r - 1.0).abs() > 1e-9 {
            return Err(format!("identical sentence scored BLEU {b}, ROUGE-L {r}"));
        }
    }
    Ok(format!("BLEU {got:.6}, METEOR {m}, 50 LCS pairs, identical sentences score 1"))
}

fn c9_retrieval(toy: &Toy, m: &Model) -> Outcome {
    let flags = AblationFlags::FULL;
    let vecs: Vec<Vec<f64>> = toy
        .enc
        .iter()
        .map(|x| m.embed(x, flags).map(|e| e.pooled.iter().map(|v| *v as f64).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut index = RetrievalIndex::default();
    for ((p, v), msg) in toy.prep.iter().zip(&vecs).zip(&toy.msgs) {
        index.insert(p.id.clone(), v, msg.clone());
    }
    let mut worst: f64 = 0.0;
    for (p, v) in toy.prep.iter().zip(&vecs) {
        let hit = index.retrieve(v).map_err(|e| e.to_string())?;
        if hit.id != p.id {
            return Err(format!("{} retrieved {}", p.id, hit.id));
        }
        worst = worst.max((hit.score - 1.0).abs());
        for c in [0.1, 10.0] {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let s = index.retrieve(&scaled).map_err(|e| e.to_string())?;
            if s.id != hit.id || (s.score - hit.score).abs() > 1e-9 {
                return Err(format!("{}: scaling by {c} changed the hit", p.id));
            }
        }
    }
    if worst > 1e-6 {
        return Err(format!("self cosine off by {worst:.2e}"));
    }
    Ok(format!("{} self hits, max |cos - 1| {worst:.1e}, scale invariant", toy.prep.len()))
}

fn c10_reproducible() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut c: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data("toy_config.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    c["data"]["generation"] = json!(data("toy_generation.jsonl"));
    c["data"]["correctness"] = json!(data("toy_correctness.jsonl"));
    c["train"]["steps"] = json!(20);
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, c.to_string()).map_err(|e| e.to_string())?;
    let mut blobs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        for cmd in ["preprocess", "build-vocab", "build-static-graph", "pretrain"] {
            let args = ["patchrep", cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
            patchrep_cli::run_args(args).map_err(|e| format!("{cmd}: {}", e.to_json()))?;
        }
        blobs.push(fs::read(out.join("pretrain.ckpt.bin")).map_err(|e| e.to_string())?);
    }
    if blobs[0] == blobs[1] {
        Ok(format!("two pretrain runs wrote identical {}-byte blobs", blobs[0].len()))
    } else {
        Err("checkpoint blobs differ".into())
    }
}

fn report(n: usize, outcome: Outcome) -> bool {
    match &outcome {
        Ok(d) => println!("criterion {n}: PASS {d}"),
        Err(d) => println!("criterion {n}: FAIL {d}"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report(1, c1_gradients());
    ok &= report(2, c2_laplacian());
    ok &= report(3, c3_graph_algebra());
    ok &= report(4, c4_seq_oracle());

    let toy = Toy::load();
    let start = Instant::now();
    let full = toy.as_ref().map_err(|e| e.clone()).and_then(|t| t.pretrain(AblationFlags::FULL));
    let elapsed = start.elapsed();
    match (&toy, &full) {
        (Ok(toy), Ok(full)) => {
            ok &= report(5, c5_pretraining(toy, full, elapsed));
            ok &= report(6, c6_finetuning(toy, &full.0));
            ok &= report(7, c7_ablation(toy, full.2));
            ok &= report(8, c8_metrics());
            ok &= report(9, c9_retrieval(toy, &full.0));
        }
        (Err(e), _) | (_, Err(e)) => {
            for n in 5..=9 {
                let outcome = if n == 8 { c8_metrics() } else { Err(format!("toy pipeline: {e}")) };
                ok &= report(n, outcome);
            }
        }
    }
    ok &= report(10, c10_reproducible());

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
