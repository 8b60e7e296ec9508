use patchrep::bpe::{train_bpe, Padded};
use patchrep::config::ModelConfig;
use patchrep::fusion::AblationFlags;
use patchrep::graph::{build_static_graph, GcnConfig};
use patchrep::heads::{correctness_batch_loss, generation_loss, BugReport, CorrectnessSample};
use patchrep::ingest::preprocess_patch;
use patchrep::minilang::MiniLangParser;
use patchrep::model::{EncodedPatch, Featurizer, PatchModel};
use patchrep::nn::Ctx;
use patchrep::pretraining::mlm_loss;
use patchrep::tensor::{Result, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DIFF: &str = "@@ -1,4 +1,4 @@\n class A {\n-int f(){ return x + 1; }\n+int f(){ return x * 2; }\n int g(){ return 3; }\n }\n";

#[derive(Clone, Copy, Debug)]
pub enum Task {
    Mlm,
    Generation,
    Correctness,
}

pub struct Setup {
    pub model: PatchModel<f64>,
    pub x: EncodedPatch,
    pub report: Padded,
}

pub fn setup(layers: usize, seed: u64) -> Setup {
    let p = preprocess_patch(DIFF, None, &MiniLangParser).unwrap();
    let vocab = train_bpe(&[p.before.clone(), p.after.clone()], 30).unwrap();
    let gcn = GcnConfig::default();
    let s = build_static_graph(&[p.before_graph.clone(), p.after_graph.clone()], 64);
    let f = Featurizer {
        vocab: &vocab,
        static_graph: Some(&s),
        l_max: 12,
        gcn: &gcn,
    };
    let x = f.featurize(&p);
    let report = f.text("x should double");
    let cfg = ModelConfig {
        d_e: 8,
        n_heads: 2,
        n_layers: layers,
        dropout: 0.0,
        l_max: 12,
        n_g: 64,
        d_b: 8,
    };
    Setup {
        model: PatchModel::new(&cfg, &gcn, vocab.len(), seed),
        x,
        report,
    }
}

pub fn loss<'t>(cx: &Ctx<'t, '_, f64>, s: &Setup, task: Task, flags: AblationFlags) -> Result<Var<'t, f64>> {
    match task {
        Task::Mlm => mlm_loss(cx, &s.model, &s.x, flags, 0.3, 11),
        Task::Generation => generation_loss(cx, &s.model, &s.x, &[5, 6, 7], flags),
        Task::Correctness => {
            let sample = CorrectnessSample {
                id: "a".into(),
                patch: s.x.clone(),
                bug_report: Some(BugReport::Text(s.report.clone())),
                label: 1,
            };
            Ok(correctness_batch_loss(cx, &s.model, &[&sample], flags).unwrap())
        }
    }
}

pub fn value(s: &Setup, task: Task, flags: AblationFlags) -> f64 {
    let tape = Tape::new();
    let cx = Ctx::eval(&tape, &s.model.store);
    loss(&cx, s, task, flags).unwrap().item()
}

/// Largest relative error over sampled coordinates of every parameter;
/// gradients below 1e-4 in magnitude are compared against 1e-4.
pub fn check(layers: usize, task: Task, flags: AblationFlags, seed: u64) -> f64 {
    let mut s = setup(layers, seed);
    let grads = {
        let tape = Tape::new();
        let cx = Ctx::eval(&tape, &s.model.store);
        let l = loss(&cx, &s, task, flags).unwrap();
        tape.backward(l).unwrap()
    };
    s.model.store.zero_grad();
    grads.accumulate_into(&mut s.model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-7;
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = s.model.store.ids().collect();
    for id in ids {
        let n = s.model.store.value(id).numel();
        for _ in 0..3 {
            let i = rng.gen_range(0..n);
            let analytic = s.model.store.grad(id)[i];
            let orig = s.model.store.value(id).data()[i];
            s.model.store.value_mut(id).data_mut()[i] = orig + h;
            let up = value(&s, task, flags);
            s.model.store.value_mut(id).data_mut()[i] = orig - h;
            let down = value(&s, task, flags);
            s.model.store.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(err);
        }
    }
    worst
}

/// Ten seeded configurations covering the encoder, GCN, fusion and
/// classifier under every ablation.
pub const CONFIGS: [(usize, Task, AblationFlags); 10] = [
    (1, Task::Mlm, AblationFlags::FULL),
    (2, Task::Mlm, AblationFlags::FULL),
    (1, Task::Mlm, AblationFlags::NO_SEQ),
    (1, Task::Mlm, AblationFlags::NO_GRAPH),
    (1, Task::Mlm, AblationFlags::NEITHER),
    (1, Task::Generation, AblationFlags::FULL),
    (2, Task::Generation, AblationFlags::NO_GRAPH),
    (1, Task::Correctness, AblationFlags::FULL),
    (2, Task::Correctness, AblationFlags::NO_SEQ),
    (1, Task::Correctness, AblationFlags::NEITHER),
];
