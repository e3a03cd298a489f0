//! Acceptance checks. Prints one PASS/FAIL line per criterion, followed by
//! the measurements behind it, and exits nonzero if any criterion fails.
//!
//! Criteria 2, 3, 4 and 8 need the desk-scale runs described by
//! `configs/desk/*.json`. Their reports are cached under
//! `target/acceptance/<name>/`; a missing or stale report is regenerated,
//! which takes hours. Set `REVERSAL_ACCEPTANCE_DESK=skip` to report those
//! criteria as SKIP instead.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reversal_cli::pipeline::{run_experiment_with, RunOptions};
use reversal_cli::{load_checkpoint, load_report, run_experiment, save_checkpoint, EvalReport, ExperimentConfig};
use reversal_core::datagen::{ArithmeticInstance, Segment};
use reversal_core::model::loss_and_grad;
use reversal_core::model::reference::uniform_model;
use reversal_core::sample::{sample_many, SampleOptions};
use reversal_core::scoring::{argmax_lowest, score_from_token_logprobs};
use reversal_core::stats::student_t_two_sided;
use reversal_core::{
    bootstrap_accuracy, entropy::entropy_prompts, init_model, make_mcq_set, mc_conditional_entropy,
    next_token_logprobs, paired_t_test, render_instance, reverse_sequence, score_choice, span_logprob,
    theoretical_mult_entropy, Direction, EntropyTarget, Format, McqInstance, ModelConfig, ModelParams, RolloutConfig,
    ScoreParadigm, Token, TokenSequence,
};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Criterion {
    id: u32,
    name: &'static str,
    checks: Vec<(bool, String)>,
    skipped: Option<String>,
}

impl Criterion {
    fn new(id: u32, name: &'static str) -> Self {
        Criterion { id, name, checks: Vec::new(), skipped: None }
    }

    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.checks.push((ok, detail.into()));
    }

    fn passed(&self) -> bool {
        self.skipped.is_some() || self.checks.iter().all(|c| c.0)
    }

    fn print(&self) {
        let status = match (&self.skipped, self.passed()) {
            (Some(_), _) => "SKIP",
            (None, true) => "PASS",
            (None, false) => "FAIL",
        };
        println!("criterion {} {status}: {}", self.id, self.name);
        if let Some(why) = &self.skipped {
            println!("    {why}");
        }
        for (ok, d) in &self.checks {
            println!("    [{}] {d}", if *ok { "ok" } else { "FAILED" });
        }
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_report(name: &str) -> Result<EvalReport, String> {
    let root = workspace();
    let mut cfg = ExperimentConfig::load(&root.join(format!("configs/desk/{name}.json"))).map_err(|e| e.to_string())?;
    cfg.output_dir = root.join("target/acceptance").join(name);
    let cached = cfg.output_dir.join("report.json");
    if let Ok(r) = load_report(&cached) {
        let mut stored = r.config.clone();
        stored.output_dir = cfg.output_dir.clone();
        if stored == cfg {
            return Ok(r);
        }
    }
    eprintln!("acceptance: running desk experiment {name} (this trains two models)");
    run_experiment_with(&cfg, RunOptions { reuse_checkpoints: true }).map_err(|e| e.to_string())
}

struct Desk {
    forward: Vec<EvalReport>,
    reverse: Vec<EvalReport>,
}

fn load_desk() -> Result<Desk, String> {
    let get = |prefix: &str| -> Result<Vec<EvalReport>, String> {
        SEEDS.iter().map(|s| desk_report(&format!("{prefix}_s{s}"))).collect()
    };
    Ok(Desk { forward: get("forward")?, reverse: get("reverse")? })
}

fn pt(direction: Direction, target: Segment) -> ScoreParadigm {
    ScoreParadigm::PartialTarget { direction, target }
}

fn acc(r: &EvalReport, p: ScoreParadigm) -> f64 {
    r.column(&p).unwrap_or_else(|| panic!("report lacks column {p}")).test_accuracy
}

fn test_entropy(r: &EvalReport, p: ScoreParadigm) -> f64 {
    r.column(&p).and_then(|c| c.test_entropy.as_ref()).map_or(f64::NAN, |e| e.mean_nll)
}

fn train_seconds(r: &EvalReport) -> String {
    let t: Vec<String> = r
        .timings
        .iter()
        .filter(|t| t.stage.starts_with("train:"))
        .map(|t| format!("{} {:.0} min", t.stage, t.seconds / 60.0))
        .collect();
    if t.is_empty() {
        "training reused from cache".into()
    } else {
        t.join(", ")
    }
}

fn run_theo(d: usize, target: &str) -> (Option<f64>, f64) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_reversal"))
        .args(["theo-entropy", "--digits", &d.to_string(), "--target", target])
        .output()
        .expect("run reversal");
    let secs = start.elapsed().as_secs_f64();
    let v: Option<serde_json::Value> = serde_json::from_slice(&out.stdout).ok();
    (v.and_then(|v| v["entropy_nats"].as_f64()), secs)
}

fn criterion_1() -> Criterion {
    let mut c = Criterion::new(1, "theoretical entropy oracle");
    let (h4, secs) = run_theo(4, "factor-pair");
    let h4 = h4.unwrap_or(f64::NAN);
    c.check((h4 - 1.49).abs() <= 0.01, format!("d=4 FactorPair = {h4:.6} nats (target 1.49 ± 0.01)"));
    c.check(secs < 300.0, format!("d=4 theo-entropy wall time {secs:.1} s (limit 300 s)"));
    let (p4, _) = run_theo(4, "product");
    c.check(p4 == Some(0.0), format!("d=4 Product = {p4:?} (exactly 0)"));

    // Independent brute force over the 100 one-digit pairs.
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for m in 0..10u64 {
        for n in 0..10u64 {
            *counts.entry(m * n).or_default() += 1;
        }
    }
    let brute: f64 = counts.values().map(|&k| k as f64 / 100.0 * (k as f64).ln()).sum();
    let (h1, _) = run_theo(1, "factor-pair");
    let h1 = h1.unwrap_or(f64::NAN);
    c.check((h1 - brute).abs() < 1e-9, format!("d=1 FactorPair = {h1:.12}, brute force {brute:.12}"));
    c
}

fn criterion_2(desk: &Desk) -> Criterion {
    let mut c = Criterion::new(2, "accuracy ordering at desk scale (d=3, seeds 0,1,2)");
    let mut rm_wins = 0;
    for (s, r) in SEEDS.iter().zip(&desk.forward) {
        let l2r = acc(r, ScoreParadigm::ForwardNormalized);
        let mn = acc(r, pt(Direction::R2l, Segment::FactorPair));
        let m = acc(r, pt(Direction::R2l, Segment::M));
        c.check(
            l2r - mn >= 0.10,
            format!("seed {s} ForwardX: L2R {:.2}% vs R2L(m,n) {:.2}% (need +10 points)", 100.0 * l2r, 100.0 * mn),
        );
        if m > mn {
            rm_wins += 1;
        }
        c.check(true, format!("seed {s} ForwardX: R2L(m) {:.2}% vs R2L(m,n) {:.2}%", 100.0 * m, 100.0 * mn));
        c.check(true, format!("seed {s} ForwardX timing: {}", train_seconds(r)));
    }
    c.check(rm_wins >= 2, format!("ForwardX R2L(m) > R2L(m,n) in {rm_wins} of 3 seeds (need 2)"));
    for (s, r) in SEEDS.iter().zip(&desk.reverse) {
        let r2l = acc(r, ScoreParadigm::ReverseQuestionOnly);
        let mn = acc(r, pt(Direction::L2r, Segment::FactorPair));
        c.check(r2l > mn, format!("seed {s} ReverseX: R2L {:.2}% vs L2R(m,n) {:.2}%", 100.0 * r2l, 100.0 * mn));
    }
    c
}

fn criterion_3(desk: &Desk) -> Criterion {
    let mut c = Criterion::new(3, "ForwardX training loss: L2R < R2L in every seed");
    for (s, r) in SEEDS.iter().zip(&desk.forward) {
        let l = r.training(Direction::L2r).map_or(f64::NAN, |t| t.final_loss);
        let rl = r.training(Direction::R2l).map_or(f64::NAN, |t| t.final_loss);
        c.check(l < rl, format!("seed {s}: L2R {l:.4} vs R2L {rl:.4}"));
    }
    c
}

fn criterion_4(desk: &Desk) -> Criterion {
    let mut c = Criterion::new(4, "entropy-accuracy coupling on ForwardX");
    let theo = theoretical_mult_entropy(3, EntropyTarget::FactorPair).unwrap_or(f64::NAN);
    for (s, r) in SEEDS.iter().zip(&desk.forward) {
        let fwd = test_entropy(r, ScoreParadigm::ForwardNormalized);
        let rev = test_entropy(r, pt(Direction::R2l, Segment::FactorPair));
        c.check(rev > fwd, format!("seed {s}: H_R2L(m,n | p) {rev:.4} > H_L2R(p | m,n) {fwd:.4} nats"));
        let rel = (theo - rev).abs() / rev;
        c.check(
            rel <= 0.30,
            format!("seed {s}: oracle {theo:.4} vs measured {rev:.4} nats ({:.1}% apart, limit 30%)", 100.0 * rel),
        );
    }
    c
}

fn micro_config() -> ModelConfig {
    ModelConfig { num_layers: 2, num_heads: 2, embed_dim: 8, mlp_dim: 16, max_seq_len: 16, ..ModelConfig::default() }
}

fn random_model(seed: u64, scale: f64) -> ModelParams<f64> {
    let cfg =
        ModelConfig { num_layers: 2, num_heads: 2, embed_dim: 32, mlp_dim: 64, max_seq_len: 20, ..Default::default() };
    let mut p = init_model(&cfg, seed).expect("init").cast::<f64>();
    let specs = p.layout().specs().to_vec();
    for s in specs.iter().filter(|s| !s.is_norm_gain()) {
        for x in &mut p.data_mut()[s.range()] {
            *x *= scale;
        }
    }
    p
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn criterion_5() -> Criterion {
    let mut c = Criterion::new(5, "numerical correctness");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // Gradient check.
    let mut p = init_model(&micro_config(), 4).expect("init").cast::<f64>();
    for x in p.data_mut() {
        *x *= 20.0;
    }
    let (batch, len) = (2, 10);
    let ids: Vec<usize> = (0..batch * len).map(|_| rng.gen_range(0..14)).collect();
    let analytic = loss_and_grad(&p, &ids, batch, len).grads;
    let h = 1e-5;
    let numeric: Vec<f64> = (0..p.num_params())
        .map(|i| {
            let mut plus = p.clone();
            plus.data_mut()[i] += h;
            let mut minus = p.clone();
            minus.data_mut()[i] -= h;
            (loss_and_grad(&plus, &ids, batch, len).mean_nll - loss_and_grad(&minus, &ids, batch, len).mean_nll)
                / (2.0 * h)
        })
        .collect();
    let err = relative_error(&analytic, &numeric);
    c.check(
        err < 1e-3 && p.num_params() <= 5000,
        format!("gradient check on {} params: relative error {err:.2e}", p.num_params()),
    );

    // Row normalization and span additivity.
    let mut worst_lse = 0.0f64;
    let mut worst_add = 0.0f64;
    for case in 0..200 {
        let model = random_model(case, 20.0);
        let n = rng.gen_range(2..19);
        let mut toks = vec![Token::BOS];
        toks.extend((0..n).map(|_| Token::new(rng.gen_range(0..15)).expect("token")));
        let seq = TokenSequence::new(toks);
        let lp = next_token_logprobs(&model, &seq).expect("logprobs");
        for t in 0..lp.rows() {
            let row = lp.row(t);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
            let lse = m + row.iter().map(|&x| (x as f64 - m).exp()).sum::<f64>().ln();
            worst_lse = worst_lse.max(lse.abs());
        }
        let k = rng.gen_range(1..seq.len());
        let whole = span_logprob(&model, &seq, 1..seq.len()).expect("span");
        let parts =
            span_logprob(&model, &seq, 1..k).expect("span") + span_logprob(&model, &seq, k..seq.len()).expect("span");
        worst_add = worst_add.max((whole - parts).abs());
    }
    c.check(worst_lse < 1e-4, format!("max |logsumexp(row)| over 200 random cases: {worst_lse:.2e}"));
    c.check(worst_add < 1e-6, format!("max span additivity gap over 200 random cases: {worst_add:.2e}"));

    // Uniform model entropy.
    let uni = uniform_model(&ModelConfig::default()).expect("uniform");
    let insts: Vec<ArithmeticInstance> = (0..200)
        .map(|_| ArithmeticInstance::new(rng.gen_range(0..1000), rng.gen_range(0..1000), 3, Format::ForwardX).unwrap())
        .collect();
    let prompts = entropy_prompts(&insts, Direction::L2r, Segment::Answer).expect("prompts");
    let rc = RolloutConfig { rollout_len: 10, rollouts_per_prompt: 1, temperature: 1.0, seed: 1 };
    let est = mc_conditional_entropy(&uni, Direction::L2r, &prompts, &rc).expect("entropy");
    let target = 10.0 * 15f64.ln();
    let rel = (est.mean_nll - target).abs() / target;
    c.check(
        rel < 0.05,
        format!("uniform model MC entropy {:.4} vs 10·ln15 = {target:.4} ({:.2}%)", est.mean_nll, 100.0 * rel),
    );

    // Reversal involution and hard negatives.
    let mut bad_rev = 0;
    let mut bad_mcq = 0;
    for case in 0..10_000u64 {
        let d = rng.gen_range(1..=6usize);
        let hi = 10u64.pow(d as u32);
        let f = if rng.gen() { Format::ForwardX } else { Format::ReverseX };
        let (m, n) = (rng.gen_range(0..hi), rng.gen_range(0..hi));
        let s = render_instance(m, n, d, f).expect("render");
        let r = reverse_sequence(&s).expect("reverse");
        let inner = |x: &TokenSequence| x.tokens()[1..x.len() - 1].to_vec();
        let mut flipped = inner(&s);
        flipped.reverse();
        let framed = r.tokens()[0] == Token::BOS && r.tokens()[r.len() - 1] == Token::EOS;
        if !framed || inner(&r) != flipped || reverse_sequence(&r).ok() != Some(s) {
            bad_rev += 1;
        }
        let inst = ArithmeticInstance::new(m, n, d, f).expect("instance");
        let q = &make_mcq_set(&[inst], 4, 1, case).expect("mcq")[0];
        if !hamming_one(q) {
            bad_mcq += 1;
        }
    }
    c.check(bad_rev == 0, format!("reversal involution: {bad_rev} failures in 10^4 random instances"));
    c.check(bad_mcq == 0, format!("MCQ negatives at Hamming distance 1: {bad_mcq} failures in 10^4 random MCQs"));
    c
}

fn hamming_one(q: &McqInstance) -> bool {
    let correct = &q.choices[q.correct_index];
    q.choices.iter().enumerate().all(|(i, ch)| {
        if i == q.correct_index {
            return true;
        }
        let diffs: Vec<usize> = (0..ch.len()).filter(|&k| ch[k] != correct[k]).collect();
        ch.len() == correct.len() && diffs.len() == 1 && ch[diffs[0]].is_digit()
    })
}

fn criterion_6() -> Criterion {
    let mut c = Criterion::new(6, "scoring paradigms");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut p12_mismatch = 0;
    let mut affine_mismatch = 0;
    let mut perm_mismatch = 0;
    let mut total = 0;
    for seed in 0..4 {
        let model = random_model(seed, 20.0);
        for format in [Format::ForwardX, Format::ReverseX] {
            let insts: Vec<ArithmeticInstance> = (0..10)
                .map(|_| ArithmeticInstance::new(rng.gen_range(0..100), rng.gen_range(0..100), 2, format).unwrap())
                .collect();
            for q in make_mcq_set(&insts, 4, 1, seed).expect("mcq") {
                total += 1;
                let scores = |par: ScoreParadigm, dir, q: &McqInstance| -> Vec<f64> {
                    (0..q.choices.len()).map(|i| score_choice(&model, dir, q, i, &par).expect("score")).collect()
                };
                let p1 = scores(ScoreParadigm::ReverseNormalizedWithPrior, Direction::R2l, &q);
                let p2 = scores(ScoreParadigm::ReverseUnnormalizedWithPrior, Direction::R2l, &q);
                if argmax_lowest(&p1) != argmax_lowest(&p2) {
                    p12_mismatch += 1;
                }
                let fwd = scores(ScoreParadigm::ForwardNormalized, Direction::L2r, &q);
                let (a, b) = (rng.gen_range(0.1..10.0), rng.gen_range(-50.0..50.0));
                let mapped: Vec<f64> = fwd.iter().map(|x| a * x + b).collect();
                if argmax_lowest(&fwd) != argmax_lowest(&mapped) {
                    affine_mismatch += 1;
                }
                let rot = rng.gen_range(1..4);
                let mut permuted = q.clone();
                permuted.choices.rotate_left(rot);
                let pf = scores(ScoreParadigm::ForwardNormalized, Direction::L2r, &permuted);
                if (0..4).any(|i| pf[i] != fwd[(i + rot) % 4]) || (argmax_lowest(&pf) + rot) % 4 != argmax_lowest(&fwd)
                {
                    perm_mismatch += 1;
                }
            }
        }
    }
    c.check(p12_mismatch == 0, format!("paradigm 1 vs 2 argmax disagreements: {p12_mismatch} of {total} MCQs"));
    c.check(affine_mismatch == 0, format!("argmax changes under a·s + b (a > 0): {affine_mismatch} of {total}"));
    c.check(perm_mismatch == 0, format!("choice-permutation equivariance violations: {perm_mismatch} of {total}"));

    // log p(q|a) = -2.0, log p(a) = -1.0, M = 6: a one-digit ForwardX MCQ
    // read right to left puts the 2 answer tokens first.
    let lp = [-0.5, -0.5, -0.5, -0.5, -0.5, -0.5];
    let f = Format::ForwardX;
    let s = |par| score_from_token_logprobs(&par, &lp, 4, 2, f, 1).expect("score");
    let got = (
        s(ScoreParadigm::ReverseNormalizedWithPrior),
        s(ScoreParadigm::ReverseUnnormalizedWithPrior),
        s(ScoreParadigm::ReverseQuestionOnly),
    );
    c.check(got == (-0.5, -3.0, -2.0), format!("worked example: paradigms 1/2/3 = {got:?}"));
    c
}

fn criterion_7() -> Criterion {
    let mut c = Criterion::new(7, "statistics");
    let t = paired_t_test(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).expect("t");
    c.check(t.t == 0.0 && t.p == 1.0, format!("[1,2,3] vs [3,2,1]: t = {}, p = {}", t.t, t.p));
    let t = paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).expect("t");
    c.check(t.p == 0.0 && t.t == f64::INFINITY, format!("constant difference: t = {}, p = {}", t.t, t.p));

    // Reference two-sided p values from direct numerical integration of the
    // t density (mpmath quadrature, 30 digits).
    let reference: [(f64, f64, f64); 12] = [
        (4.0, 0.5, 0.643_329_963_181_863_3),
        (4.0, 1.0, 0.37390096630005889),
        (4.0, 2.0, 0.11611652351681559),
        (4.0, 5.0, 0.007_490_433_881_274_524),
        (9.0, 0.5, 0.629_071_299_826_026_5),
        (9.0, 1.0, 0.343_436_396_137_913_5),
        (9.0, 2.0, 0.076_552_823_770_701_04),
        (9.0, 5.0, 0.0007389679098032427),
        (30.0, 0.5, 0.620_723_004_885_127_3),
        (30.0, 1.0, 0.325_308_615_426_029_9),
        (30.0, 2.0, 0.054_625_044_962_983_1),
        (30.0, 5.0, 2.3296685467007795e-5),
    ];
    let worst = reference.iter().map(|&(df, t, p)| (student_t_two_sided(t, df) - p).abs()).fold(0.0, f64::max);
    c.check(worst < 1e-6, format!("incomplete-beta p vs quadrature, 12 cases: max error {worst:.2e}"));

    let mut ok = true;
    for n in [1usize, 2, 3, 7, 10, 999, 1000, 10_000] {
        let data: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let r = bootstrap_accuracy(&data, 5, 0.8, 3).expect("bootstrap");
        ok &= r.replicate_means.len() == 5 && r.draws == (0.8 * n as f64).round().max(1.0) as usize;
    }
    c.check(ok, "bootstrap: 5 replicates of round(0.8·n) draws for n in {1,2,3,7,10,999,1000,10000}");
    c
}

fn criterion_8(desk: &Desk) -> Criterion {
    let mut c = Criterion::new(8, "generation");
    for (s, r) in SEEDS.iter().zip(&desk.forward) {
        let em = r.column(&ScoreParadigm::ForwardNormalized).and_then(|c| c.test_exact_match).unwrap_or(f64::NAN);
        c.check(em > 0.80, format!("seed {s}: L2R ForwardX exact match {:.2}% (need > 80%)", 100.0 * em));
    }
    let ckpt = desk.forward[0].training(Direction::L2r).map(|t| t.checkpoint.clone());
    match ckpt.map(|p| load_checkpoint(&p)) {
        Some(Ok((params, _))) => {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let prompts: Vec<TokenSequence> = (0..100)
                .map(|_| {
                    let inst =
                        ArithmeticInstance::new(rng.gen_range(0..1000), rng.gen_range(0..1000), 3, Format::ForwardX)
                            .unwrap();
                    entropy_prompts(&[inst], Direction::L2r, Segment::Answer).expect("prompt").remove(0)
                })
                .collect();
            let opts = SampleOptions { length: 10, temperature: 1.0, suppress_eos: true, seed: 5 };
            let rolls = sample_many(&params, &prompts, &opts, 0).expect("sample");
            let good = rolls.iter().filter(|r| r.tokens.len() == 10 && !r.tokens.contains(&Token::EOS)).count();
            c.check(
                good == rolls.len(),
                format!("suppress_eos: {good} of {} rollouts have exactly 10 non-EOS tokens", rolls.len()),
            );
        }
        _ => c.check(false, "desk L2R checkpoint unavailable for the suppress_eos check"),
    }
    c
}

fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { digits: 2, test_size: 50, train_limit: Some(512), seed: 3, ..Default::default() };
    cfg.model =
        ModelConfig { num_layers: 1, num_heads: 2, embed_dim: 16, mlp_dim: 32, max_seq_len: 12, ..Default::default() };
    cfg.train.batch_size = 32;
    cfg.train.peak_lr = 3e-3;
    cfg.train.min_lr = 3e-4;
    cfg.eval.entropy_prompts = 20;
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn criterion_9(desk: Option<&Desk>) -> Criterion {
    let mut c = Criterion::new(9, "persistence and pipeline");
    let dir = tempfile::tempdir().expect("tempdir");

    let params = init_model(&ModelConfig::default(), 9).expect("init");
    let path = dir.path().join("m.ckpt");
    let round_trip = save_checkpoint(&params, &path).ok().and_then(|_| load_checkpoint(&path).ok());
    let exact = round_trip.is_some_and(|(p, cfg)| {
        cfg == *params.config() && p.data().iter().zip(params.data()).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    c.check(exact, format!("checkpoint round trip of {} params is bit-exact", params.num_params()));

    let cfg = tiny_config(&dir.path().join("run"));
    match (run_experiment(&cfg), run_experiment(&cfg)) {
        (Ok(mut a), Ok(mut b)) => {
            a.timings.clear();
            b.timings.clear();
            c.check(
                a.to_json() == b.to_json(),
                "two runs of the same config and seed give identical reports (timings aside)",
            );
            let reloaded = load_report(&cfg.output_dir.join("report.json"));
            c.check(reloaded.is_ok(), "report.json parses and validates against the report schema");
        }
        (a, b) => c.check(false, format!("pipeline failed: {:?} / {:?}", a.err(), b.err())),
    }
    if let Some(desk) = desk {
        let all = desk.forward.iter().chain(&desk.reverse);
        let valid = all.clone().filter(|r| r.check().is_ok()).count();
        c.check(valid == 6, format!("{valid} of 6 desk reports validate"));
    }
    c
}

fn main() -> ExitCode {
    let skip_desk = std::env::var("REVERSAL_ACCEPTANCE_DESK").is_ok_and(|v| v == "skip");
    let desk = if skip_desk { Err("skipped by REVERSAL_ACCEPTANCE_DESK=skip".to_string()) } else { load_desk() };

    let mut criteria = vec![criterion_1()];
    let heavy = [
        (2, "accuracy ordering at desk scale (d=3, seeds 0,1,2)"),
        (3, "ForwardX training loss: L2R < R2L in every seed"),
        (4, "entropy-accuracy coupling on ForwardX"),
    ];
    match &desk {
        Ok(d) => criteria.extend([criterion_2(d), criterion_3(d), criterion_4(d)]),
        Err(e) => {
            for (id, name) in heavy {
                let mut c = Criterion::new(id, name);
                if skip_desk {
                    c.skipped = Some(e.clone());
                } else {
                    c.check(false, format!("desk runs unavailable: {e}"));
                }
                criteria.push(c);
            }
        }
    }
    criteria.extend([criterion_5(), criterion_6(), criterion_7()]);
    match &desk {
        Ok(d) => criteria.push(criterion_8(d)),
        Err(e) => {
            let mut c = Criterion::new(8, "generation");
            if skip_desk {
                c.skipped = Some(e.clone());
            } else {
                c.check(false, format!("desk runs unavailable: {e}"));
            }
            criteria.push(c);
        }
    }
    criteria.push(criterion_9(desk.as_ref().ok()));

    println!();
    for c in &criteria {
        c.print();
    }
    let failed: Vec<u32> = criteria.iter().filter(|c| !c.passed()).map(|c| c.id).collect();
    println!();
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
