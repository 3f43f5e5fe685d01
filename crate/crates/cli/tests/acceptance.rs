//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use infergap_core::analysis::{
    fleiss_kappa, paired_ttest, student_t_two_sided, win_tie_lose, AggregationRule, Judgment, Side,
};
use infergap_core::backend::{ModelBackend, ToyBackend, TrainableBackend, Vocabulary};
use infergap_core::config::RunConfig;
use infergap_core::corpus::{load_dataset, prepare_input, DatasetFormat, InferenceExample, TemplateId};
use infergap_core::metrics::{cider, corpus_bleu, meteor_lite, rouge_l, tokenize, TokenSequence};
use infergap_core::negatives::{pick_counterfactuals, token_replace, ReplaceConfig, Strategy};
use infergap_core::objective::{
    check_gradients, cl_batch_loss, cl_sample_loss, finite_diff_check, nll_loss, total_loss, EncodedExample,
    GradCheckOptions, LossConfig,
};
use infergap_core::pipeline::{load_judgments, run_pipeline, Context, Stage};
use infergap_core::trainer::{build_vocab, mean_margin, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn core_fixture(name: &str) -> PathBuf {
    fixture_dir().join(name)
}

fn corpus(name: &str) -> Vec<InferenceExample> {
    load_dataset(&core_fixture(name), DatasetFormat::CanonicalJsonl).expect("shipped corpus loads")
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    ensure!(took < limit, "took {:.1}s, limit {:.0}s", took.as_secs_f64(), limit.as_secs_f64());
    Ok(())
}

fn reproducibility_statement() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.sweep.lambda_b = vec![0.5, 1.0, 2.0];
    cfg.sweep.lambda_s = vec![0.5, 1.0, 2.0];
    let coefficient = cfg.expand_sweep();
    ensure!(coefficient.len() == 9, "coefficient grid expanded to {}", coefficient.len());
    for (lb, ls) in [(0.5, 0.5), (1.0, 1.0), (2.0, 2.0)] {
        ensure!(
            coefficient.iter().any(|(_, c)| c.train.loss.lambda_b == lb && c.train.loss.lambda_s == ls),
            "missing lambda pair ({lb}, {ls})"
        );
    }
    let mut cfg = RunConfig::default();
    cfg.sweep.m = vec![1, 2, 3, 4];
    ensure!(cfg.expand_sweep().len() == 4, "negative-count grid");
    cfg.sweep.m = vec![];
    cfg.sweep.strategy = vec![Strategy::Counterfactual, Strategy::NonOptimal, Strategy::ReplaceZs, Strategy::ReplaceMcq];
    let sampling = cfg.expand_sweep();
    let names: std::collections::BTreeSet<_> = sampling.iter().map(|(n, _)| n.clone()).collect();
    ensure!(names.len() == 4, "sampling-method grid has {} distinct runs", names.len());
    Ok("published model-scale tables are not reproduced (they need T5/GPT-2 fine-tuned on CICERO); \
        the sweep harness expands the coefficient (9), negative-count (4) and sampling-method (4) grids \
        and the property suite below stands in"
        .into())
}

fn metric_oracles() -> Outcome {
    let started = Instant::now();
    let (h, r) = pair_tokens();
    let seqs = |v: &[Vec<String>]| v.iter().map(|t| TokenSequence::from_tokens(t.clone())).collect::<Vec<_>>();
    let bleu = corpus_bleu(&seqs(&h), &seqs(&r), 4).map_err(|e| e.to_string())?;
    let want = bleu_oracle(&h, &r);
    for n in 0..4 {
        ensure!(close(bleu[n], want[n], 1e-9), "BLEU-{} {} vs oracle {}", n + 1, bleu[n], want[n]);
    }
    for (i, (a, b)) in h.iter().zip(&r).enumerate() {
        ensure!(close(rouge_l(a, b), rouge_oracle(a, b), 1e-9), "ROUGE-L pair {i}");
        ensure!(close(meteor_lite(a, b), meteor_oracle(a, b), 1e-9), "METEOR pair {i}");
    }
    let (c, _) = cider(&seqs(&h), &seqs(&r)).map_err(|e| e.to_string())?;
    let (cw, _) = cider_oracle(&h, &r);
    ensure!(close(c, cw, 1e-9), "CIDEr {c} vs oracle {cw}");

    let t = |s: &str| tokenize(s);
    let b2 = corpus_bleu(
        &[TokenSequence::from_tokens(t("the cat sat on the mat"))],
        &[TokenSequence::from_tokens(t("the cat is on the mat"))],
        2,
    )
    .map_err(|e| e.to_string())?[1];
    ensure!(close(b2, (5.0f64 / 6.0 * 0.6).sqrt(), 1e-12), "BLEU-2 anchor {b2}");
    let rl = rouge_l(&t("the cat sat"), &t("the cat sat on the mat"));
    let rl_oracle = rouge_oracle(&t("the cat sat"), &t("the cat sat on the mat"));
    ensure!(close(rl, rl_oracle, 1e-12) && close(rl, 1.22 / 1.94, 1e-12), "ROUGE-L anchor {rl}");
    let four = t("we ate some pasta");
    ensure!(meteor_lite(&four, &four) == 0.9921875, "METEOR identity {}", meteor_lite(&four, &four));
    let docs = ["a quick brown fox", "lazy dogs sleep here", "seven green parrots talk"];
    let d: Vec<TokenSequence> = docs.iter().map(|s| TokenSequence::from_tokens(t(s))).collect();
    let (ci, _) = cider(&d, &d).map_err(|e| e.to_string())?;
    ensure!(close(ci, 10.0, 1e-12), "CIDEr identity {ci}");
    within(started, Duration::from_secs(5))?;
    Ok(format!(
        "20 pairs match brute force to 1e-9; BLEU-2 anchor {b2:.5}; ROUGE-L anchor {rl:.5} \
         (formula value; the listed decimal 0.41497 is an arithmetic slip, 1.22/1.94 not 1.22/2.94); \
         METEOR 0.9921875; CIDEr {ci}"
    ))
}

fn analytic_losses() -> Outcome {
    let specials = ["<pad>", "<bos>", "<eos>", "<unk>", "<mask>"];
    let vocab = Vocabulary::from_tokens(specials.iter().chain(&["a", "b", "c"]).map(|s| s.to_string()).collect())
        .map_err(|e| e.to_string())?;
    let uniform = ToyBackend::zeros(vocab, 3);
    for answer in [vec![5, 6], vec![7, 5, 6, 7]] {
        let k = answer.len() + 1;
        let ex = EncodedExample { id: "u".into(), input: vec![5, 6], answer, negatives: vec![] };
        let (v, _) = nll_loss(&uniform, &ex).map_err(|e| e.to_string())?;
        ensure!(close(v, k as f64 * 8f64.ln(), 1e-9), "uniform NLL {v} for k={k}");
    }
    let x = vec![0.3, -1.2, 0.7];
    for m in 1..=4 {
        let v = cl_sample_loss(&x, &x, &vec![x.clone(); m], 2.5).map_err(|e| e.to_string())?.value;
        ensure!(close(v, ((m + 1) as f64).ln(), 1e-12), "symmetric cl_sample m={m}: {v}");
    }
    let worked = cl_sample_loss(&[1.0, 0.0], &[1.0, 0.0], &vec![vec![-1.0, 0.0]; 4], 2.5)
        .map_err(|e| e.to_string())?
        .value;
    let closed = (1.0 + 4.0 * (-0.8f64).exp()).ln();
    ensure!(close(worked, closed, 1e-6), "worked case {worked} vs {closed}");
    for b in 2..=6 {
        let v = cl_batch_loss(&vec![x.clone(); b], &vec![x.clone(); b], 0.1).map_err(|e| e.to_string())?.value;
        ensure!(close(v, b as f64 * (b as f64).ln(), 1e-9), "symmetric cl_batch B={b}: {v}");
    }
    let (model, batch) = random_batch(3, 4, 4);
    let lb = total_loss(&model, &batch, &LossConfig::default()).map_err(|e| e.to_string())?;
    ensure!(
        close(lb.total, lb.nll + 0.5 * lb.cl_b + 0.5 * lb.cl_s, 1e-12),
        "composite {} vs {}",
        lb.total,
        lb.nll + 0.5 * lb.cl_b + 0.5 * lb.cl_s
    );
    Ok(format!(
        "k·ln|V| exact; ln(m+1) for m=1..4; worked case {worked:.6} = ln(1+4e^-0.8) \
         (listed decimal 1.02862 is a rounding slip of {closed:.6}); B·ln B for B=2..6; composite identity"
    ))
}

fn random_batch(seed: u64, batch: usize, m: usize) -> (ToyBackend, Vec<EncodedExample>) {
    let vocab = Vocabulary::from_texts(["alpha beta gamma delta eps zeta eta theta iota kappa lam mu"]);
    let model = ToyBackend::random(vocab, 5, seed, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919));
    let n = model.vocab().len() as u32;
    let mut draw = |len: usize| -> Vec<u32> { (0..len).map(|_| rng.gen_range(5..n)).collect() };
    let batch = (0..batch)
        .map(|i| EncodedExample {
            id: format!("ex{i}"),
            input: draw(6),
            answer: draw(3),
            negatives: (0..m).map(|_| draw(3)).collect(),
        })
        .collect();
    (model, batch)
}

fn gradient_gate() -> Outcome {
    let started = Instant::now();
    let cfg = LossConfig::default();
    let opts = GradCheckOptions { abs_tol: 0.0, ..GradCheckOptions::default() };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..5 {
        let (model, batch) = random_batch(seed, 4, 4);
        let report = finite_diff_check(&model, &batch, &cfg, &opts).map_err(|e| e.to_string())?;
        ensure!(report.passed, "seed {seed}: {} failures, max rel {}", report.failures, report.max_rel_error);
        ensure!(report.checked == model.num_params(), "seed {seed}: {} of {} checked", report.checked, model.num_params());
        worst = worst.max(report.max_rel_error);
        checked += report.checked;

        let mut faulty = total_loss(&model, &batch, &cfg).map_err(|e| e.to_string())?.grads;
        let idx = (seed as usize * 37) % faulty.len();
        faulty.as_mut_slice()[idx] += 1e-2;
        let bad = check_gradients(&model, &batch, &cfg, &faulty, &opts).map_err(|e| e.to_string())?;
        ensure!(!bad.passed, "seed {seed}: injected fault at {idx} went unnoticed");
    }
    within(started, Duration::from_secs(30))?;
    Ok(format!("5 seeds, {checked} parameters checked, worst relative error {worst:.2e}; injected faults detected"))
}

fn contrastive_benefit() -> Outcome {
    let started = Instant::now();
    let train_set = corpus("synthetic_train.jsonl");
    let valid_set = corpus("synthetic_valid.jsonl");
    ensure!(train_set.len() == 200 && valid_set.len() == 50, "corpus sizes {}/{}", train_set.len(), valid_set.len());
    let base = TrainConfig { lr0: 0.2, dim: 128, init_scale: 0.1, ..TrainConfig::default() };
    let (mut cl, mut nll) = (Vec::new(), Vec::new());
    for seed in 0..5 {
        let with_cl = TrainConfig { seed, ..base };
        let plain = TrainConfig { seed, loss: LossConfig::nll_only(), ..base };
        let a = train(&with_cl, &train_set, &valid_set).map_err(|e| e.to_string())?;
        let b = train(&plain, &train_set, &valid_set).map_err(|e| e.to_string())?;
        cl.push(mean_margin(&a.model, &valid_set, base.template));
        nll.push(mean_margin(&b.model, &valid_set, base.template));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gain = mean(&cl) - mean(&nll);
    ensure!(gain >= 0.05, "margin gain {gain:.4} (cl {:.4}, nll {:.4})", mean(&cl), mean(&nll));
    within(started, Duration::from_secs(120))?;
    Ok(format!(
        "mean validation margin {:.4} with contrastive terms vs {:.4} NLL-only, gain {gain:.4} over 5 seeds",
        mean(&cl),
        mean(&nll)
    ))
}

fn statistics() -> Outcome {
    let k = fleiss_kappa(&[vec![2, 1, 0, 0], vec![0, 3, 0, 0]]).map_err(|e| e.to_string())?;
    ensure!(close(k, 0.25, 1e-12), "kappa fixture {k}");
    let perfect = fleiss_kappa(&[vec![3, 0, 0, 0], vec![0, 3, 0, 0], vec![0, 0, 3, 0]]).map_err(|e| e.to_string())?;
    ensure!(close(perfect, 1.0, 1e-12), "perfect agreement {perfect}");
    let mut worst: f64 = 0.0;
    for &df in &[1.0, 2.0, 4.0, 9.0, 30.0, 120.0] {
        for &t in &[0.05, 0.7, 1.5, 2.2, 3.5, 6.0] {
            let d = (student_t_two_sided(t, df) - t_two_sided_oracle(t, df)).abs();
            ensure!(d < 1e-6, "p-value t={t} df={df} off by {d:.2e}");
            worst = worst.max(d);
        }
    }
    let a = [3.1, 2.4, 4.0, 3.3, 2.9, 3.8];
    let b = [2.8, 2.5, 3.1, 3.0, 2.2, 3.6];
    let tt = paired_ttest(&a, &b).map_err(|e| e.to_string())?;
    ensure!(close(tt.p_value, t_two_sided_oracle(tt.t, tt.df as f64), 1e-6), "paired t-test p {}", tt.p_value);
    let js: Vec<Judgment> = load_judgments(&core_fixture("judgments.jsonl")).map_err(|e| e.to_string())?;
    for rule in [AggregationRule::Majority, AggregationRule::PerJudgment] {
        let w = win_tie_lose(&js, Side::Option1, rule).map_err(|e| e.to_string())?;
        ensure!(close(w.win + w.tie + w.lose, 100.0, 1e-9), "{rule} percentages sum to {}", w.win + w.tie + w.lose);
    }
    Ok(format!("kappa 0.25 and 1.0 exact; p-values within {worst:.1e} of quadrature; win/tie/lose sums to 100"))
}

fn negative_contracts() -> Outcome {
    let examples = infergap_core::corpus::synthetic::generate(12, 5, "neg");
    let model = ToyBackend::random(build_vocab(&examples, TemplateId::DefaultV1), 8, 5, 1.5);
    let mut positions = 0;
    for e in &examples {
        let v = model.vocab();
        let input = v.encode(&prepare_input(e, TemplateId::DefaultV1).text);
        let gold = tokenize(&e.answer);
        let answer: Vec<u32> = gold.iter().map(|t| v.id(t)).collect();
        let deltas = deltas_oracle(&model, &input, &answer);
        let mut sets = Vec::new();
        for threshold in [0.25, 0.5, 0.75, 1.0] {
            let cfg = ReplaceConfig { threshold, k: 5, seed: 3, ..ReplaceConfig::default() };
            let set = token_replace(&model, e, TemplateId::DefaultV1, &cfg).map_err(|e| e.to_string())?;
            let want = selection_oracle(&deltas, threshold);
            let neg = tokenize(&set.negatives[0]);
            ensure!(neg.len() == gold.len(), "{}: length {} vs {}", e.id, neg.len(), gold.len());
            let differing: Vec<usize> = (0..gold.len()).filter(|&j| neg[j] != gold[j]).collect();
            ensure!(differing == want, "{} at {threshold}: differs at {differing:?}, oracle {want:?}", e.id);
            positions += differing.len();
            sets.push((deltas.iter().any(|&d| d > threshold), want));
        }
        for w in sets.windows(2) {
            if w[1].0 {
                ensure!(w[1].1.iter().all(|j| w[0].1.contains(j)), "{}: threshold monotonicity", e.id);
            }
        }
    }
    let train_set = corpus("synthetic_train.jsonl");
    for m in 1..=4 {
        for e in train_set.iter().take(20) {
            let a = pick_counterfactuals(e, m, 17).map_err(|e| e.to_string())?;
            let b = pick_counterfactuals(e, m, 17).map_err(|e| e.to_string())?;
            ensure!(a == b && a.negatives.len() == m, "{} m={m} not deterministic", e.id);
        }
    }
    Ok(format!("{positions} replaced positions equal the brute-force selection; monotone over 4 thresholds; m=1..4 deterministic"))
}

fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn step_identity(path: &Path, lambda_b: f64, lambda_s: f64) -> Result<usize, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut n = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let f = |k: &str| v[k].as_f64().unwrap_or(f64::NAN);
        let want = f("nll") + lambda_b * f("cl_b") + lambda_s * f("cl_s");
        ensure!(close(f("total"), want, 1e-9 * want.abs().max(1.0)), "step {}: total {} vs {want}", f("step"), f("total"));
        n += 1;
    }
    ensure!(n > 0, "{} has no steps", path.display());
    Ok(n)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.train.max_epochs = 2;
    cfg.train.dim = 16;
    cfg.train.lr0 = 0.1;
    cfg.train.effective_batch = 16;
    cfg.train.micro_batch = 8;
    cfg.paths.train = Some(core_fixture("synthetic_train.jsonl"));
    cfg.paths.valid = Some(core_fixture("synthetic_valid.jsonl"));
    cfg.paths.out_dir = dir.path().join("run");
    let ctx = Context::new(cfg.clone()).map_err(|e| e.to_string())?;
    run_pipeline(&ctx, &Stage::ALL).map_err(|e| e.to_string())?;
    let first = artifacts(&cfg.paths.out_dir);
    run_pipeline(&ctx, &Stage::ALL).map_err(|e| e.to_string())?;
    let second = artifacts(&cfg.paths.out_dir);
    ensure!(first.keys().eq(second.keys()), "artifact sets differ");
    for (name, bytes) in &first {
        ensure!(&second[name] == bytes, "{name} differs between runs");
    }
    let loss = cfg.train.loss;
    let steps = step_identity(&cfg.paths.out_dir.join("model/step_log.jsonl"), loss.lambda_b, loss.lambda_s)?;
    let baseline = step_identity(&cfg.paths.out_dir.join("baseline/step_log.jsonl"), 0.0, 0.0)?;
    Ok(format!(
        "{} files byte-identical across reruns; composite identity holds on {steps} + {baseline} logged steps",
        first.len()
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_infergap"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "`infergap {}` exited {:?}: {}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).display().to_string();
    let train_src = core_fixture("synthetic_train.jsonl").display().to_string();
    let valid_src = core_fixture("synthetic_valid.jsonl").display().to_string();
    let judgments = core_fixture("judgments.jsonl").display().to_string();
    run_cli(&["ingest", "--in", &train_src, "--out", &p("train.jsonl"), "--report", &p("ingest_train.json")])?;
    run_cli(&["ingest", "--in", &valid_src, "--out", &p("valid.jsonl")])?;
    let common = ["--train", &p("train.jsonl"), "--valid", &p("valid.jsonl"), "--epochs", "1", "--dim", "16", "--lr0", "0.1"];
    run_cli(&[&["train"][..], &common, &["--out-dir", &p("cl")]].concat())?;
    run_cli(&[&["train"][..], &common, &["--out-dir", &p("nll"), "--lambda-b", "0", "--lambda-s", "0"]].concat())?;
    for sys in ["cl", "nll"] {
        let ckpt = p(&format!("{sys}/checkpoint.json"));
        run_cli(&["generate", "--checkpoint", &ckpt, "--in", &p("valid.jsonl"), "--out", &p(&format!("{sys}_gen.jsonl"))])?;
    }
    run_cli(&[
        "perturb", "--strategy", "replace_zs", "--m", "2", "--checkpoint", &p("cl/checkpoint.json"), "--in",
        &p("valid.jsonl"), "--out", &p("negatives.jsonl"),
    ])?;
    run_cli(&["score", "--hyp", &p("cl_gen.jsonl"), "--stratify-by", "difficulty", "--out", &p("scores.json")])?;
    run_cli(&[
        "compare", "--system-1", &p("cl_gen.jsonl"), "--system-2", &p("nll_gen.jsonl"), "--stratify-by", "difficulty",
        "--out", &p("compare_scores.json"),
    ])?;
    run_cli(&[
        "compare", "--system-1", &p("cl_gen.jsonl"), "--system-2", &p("nll_gen.jsonl"), "--judgments", &judgments,
        "--stratify-by", "difficulty", "--out", &p("compare_judgments.json"),
    ])?;
    let scores: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p("scores.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let strata = scores["report"]["strata"].as_object().map(|m| m.len()).unwrap_or(0);
    ensure!(strata == 3, "score report has {strata} difficulty strata");
    let negatives = fs::read_to_string(p("negatives.jsonl")).map_err(|e| e.to_string())?.lines().count();
    ensure!(negatives == 50, "{negatives} negative sets for 50 examples");
    within(started, Duration::from_secs(300))?;
    Ok(format!("all stages exited 0 in {:.1}s", started.elapsed().as_secs_f64()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("paper-number reproducibility statement", reproducibility_statement),
        ("metric oracle suite", metric_oracles),
        ("analytic loss values", analytic_losses),
        ("gradient gate", gradient_gate),
        ("contrastive-benefit experiment", contrastive_benefit),
        ("statistics", statistics),
        ("negative-procedure contracts", negative_contracts),
        ("determinism", determinism),
        ("end-to-end smoke", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({secs:.1}s): {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.1}s): {reason}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
