use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use seqcomm::analysis::{estimate_divergences, theorem1_bound, BoundInputs, ProbeBatch, TrainingReport};
use seqcomm::checkpoint::{load_checkpoint, save_checkpoint};
use seqcomm::config::ExperimentConfig;
use seqcomm::metrics::{read_records, MetricsRecord, MetricsWriter};
use seqcomm::protocol::ActionChoice;
use seqcomm::trainer::{ActionSource, Collector, OrderingMode, TrainConfig, Trainer};

use crate::out::{file_stem, OutDir};
use crate::{AblateArgs, BoundArgs, CompareArgs, EvalArgs, RunArgs};

/// Config file, then `SEQCOMM_SEED` / `SEQCOMM_OUT`, then flags.
pub fn resolve(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::from_toml_str("")?,
    };
    cfg.apply_env()?;
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = &args.mode {
        cfg.mode = m.parse()?;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(s) = args.steps {
        cfg.ppo.total_env_steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TimingRecord<'a> {
    run_id: &'a str,
    seed: u64,
    eval_index: u64,
    env_steps: u64,
    wall_clock_s: f64,
}

#[derive(Serialize)]
struct RunRow {
    run_id: String,
    seed: u64,
    mode: String,
    evaluations: usize,
    final_return: f64,
    env_steps: u64,
    updates: u64,
}

struct RunResult {
    steps: Vec<u64>,
    returns: Vec<f64>,
    row: RunRow,
}

/// Trains one seed, streaming records and timings, then checkpoints it.
fn run_one(config: TrainConfig, out: &OutDir, metrics: &mut MetricsWriter, timing: &mut MetricsWriter) -> Result<RunResult> {
    let started = Instant::now();
    let mut trainer = Trainer::new(config)?;
    let run_id = trainer.config().run_id.clone();
    let seed = trainer.config().seed;
    let mut steps = Vec::new();
    let summary = trainer.run(|rec: &MetricsRecord| {
        metrics.write(rec)?;
        timing.write(&TimingRecord {
            run_id: &run_id,
            seed,
            eval_index: rec.eval_index,
            env_steps: rec.env_steps,
            wall_clock_s: started.elapsed().as_secs_f64(),
        })?;
        steps.push(rec.env_steps);
        Ok(())
    })?;
    let ck = out.file(&format!("checkpoints/{}.ckpt", file_stem(&run_id)))?;
    save_checkpoint(&ck, trainer.config(), trainer.params())?;
    println!(
        "{run_id}: final eval return {:.3} after {} env steps ({:.1}s)",
        summary.final_return(),
        summary.env_steps,
        started.elapsed().as_secs_f64()
    );
    Ok(RunResult {
        row: RunRow {
            run_id,
            seed,
            mode: trainer.config().mode.to_string(),
            evaluations: summary.eval_returns.len(),
            final_return: summary.final_return(),
            env_steps: summary.env_steps,
            updates: summary.updates,
        },
        steps,
        returns: summary.eval_returns,
    })
}

fn streams(out: &OutDir) -> Result<(MetricsWriter, MetricsWriter)> {
    Ok((
        MetricsWriter::append(out.fresh("metrics.jsonl")?)?,
        MetricsWriter::append(out.fresh("timing.jsonl")?)?,
    ))
}

pub fn train(args: &RunArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let out = OutDir::create(&cfg.out)?;
    out.write_json("config.json", &cfg)?;
    let (mut metrics, mut timing) = streams(&out)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        rows.push(run_one(cfg.train_config(seed), &out, &mut metrics, &mut timing)?.row);
    }
    out.write_csv("summary.csv", &rows)?;
    println!("wrote {}", out.root().display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut ck = load_checkpoint(&args.checkpoint)?;
    if let Some(e) = args.episodes {
        ck.config.eval.episodes = e;
    }
    if let Some(s) = args.seed {
        ck.config.seed = s;
    }
    let run_id = ck.config.run_id.clone();
    let episodes = ck.config.eval.episodes;
    let trainer = ck.into_trainer()?;
    let ret = trainer.evaluate()?;
    println!("{run_id}: mean greedy return {ret:.4} over {episodes} episodes");
    if let Some(o) = &args.out {
        #[derive(Serialize)]
        struct EvalReport<'a> {
            run_id: &'a str,
            episodes: usize,
            mean_return: f64,
        }
        OutDir::create(o)?.write_json(
            "eval.json",
            &EvalReport {
                run_id: &run_id,
                episodes,
                mean_return: ret,
            },
        )?;
    }
    Ok(())
}

/// `label=mode` or a bare mode, which is its own label.
fn parse_entry(s: &str) -> Result<(String, OrderingMode)> {
    let (label, mode) = match s.split_once('=') {
        Some((l, m)) => (l.trim().to_string(), m),
        None => (s.trim().to_string(), s),
    };
    ensure!(!label.is_empty(), "empty label in `{s}`");
    Ok((label, mode.parse()?))
}

#[derive(Serialize)]
struct SummaryRow {
    mode: String,
    runs: usize,
    mean: f64,
    std: f64,
    monotone_fraction: f64,
    finals: String,
}

#[derive(Serialize)]
struct PairRow {
    a: String,
    b: String,
    relation: &'static str,
    mean_difference: f64,
}

fn write_report(out: &OutDir, report: &TrainingReport, tail: usize, prefix: &str) -> Result<()> {
    let summaries = report.summaries(tail, 0.5)?;
    println!("{:<24} {:>5} {:>12} {:>10} {:>10}", "mode", "runs", "mean", "std", "monotone");
    for s in &summaries {
        println!(
            "{:<24} {:>5} {:>12.4} {:>10.4} {:>10.3}",
            s.mode, s.runs, s.mean, s.std, s.monotone_fraction
        );
    }
    let rows: Vec<SummaryRow> = summaries
        .iter()
        .map(|s| SummaryRow {
            mode: s.mode.clone(),
            runs: s.runs,
            mean: s.mean,
            std: s.std,
            monotone_fraction: s.monotone_fraction,
            finals: s.finals.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" "),
        })
        .collect();
    let mut pairs = Vec::new();
    for (i, a) in summaries.iter().enumerate() {
        for b in &summaries[i + 1..] {
            let d = a.mean - b.mean;
            pairs.push(PairRow {
                a: a.mode.clone(),
                b: b.mode.clone(),
                relation: if d > 0.0 {
                    ">"
                } else if d < 0.0 {
                    "<"
                } else {
                    "="
                },
                mean_difference: d,
            });
        }
    }
    for p in &pairs {
        println!("{} {} {} ({:+.4})", p.a, p.relation, p.b, p.mean_difference);
    }
    out.write_csv(&format!("{prefix}.csv"), &rows)?;
    out.write_csv("pairwise.csv", &pairs)?;
    out.write_csv("curves.csv", &report.curves())?;
    Ok(())
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let base = resolve(&args.run)?;
    let entries = args.modes.iter().map(|m| parse_entry(m)).collect::<Result<Vec<_>>>()?;
    ensure!(entries.len() >= 2, "ablate needs at least two modes, got {}", entries.len());
    let mut labels: Vec<&str> = entries.iter().map(|(l, _)| l.as_str()).collect();
    labels.sort_unstable();
    if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
        bail!("invalid argument: mode `{}` listed twice", w[0]);
    }
    let mut mode_cfgs = Vec::new();
    for (label, mode) in entries {
        let mut cfg = base.clone();
        cfg.mode = mode;
        cfg.validate().with_context(|| format!("mode `{label}`"))?;
        mode_cfgs.push((label, cfg));
    }
    let out = OutDir::create(&base.out)?;
    out.write_json("config.json", &base)?;
    let (mut metrics, mut timing) = streams(&out)?;
    let mut report = TrainingReport::new();
    let mut rows = Vec::new();
    for (label, cfg) in &mode_cfgs {
        for &seed in &cfg.seeds {
            let mut tc = cfg.train_config(seed);
            tc.run_id = format!("{}-{label}-{seed}", cfg.env.name());
            let r = run_one(tc, &out, &mut metrics, &mut timing)?;
            report.add_run(label, seed, r.steps, r.returns)?;
            rows.push(r.row);
        }
    }
    out.write_csv("runs.csv", &rows)?;
    write_report(&out, &report, args.tail, "ablation")?;
    println!("wrote {}", out.root().display());
    Ok(())
}

#[derive(Serialize)]
struct BoundReport {
    inputs: BoundInputs,
    bound: f64,
    epsilon_m_kind: String,
    probe_states: usize,
}

pub fn bound(args: &BoundArgs) -> Result<()> {
    let report = match (&args.old, &args.new) {
        (Some(old), Some(new)) => from_checkpoints(old, new, args)?,
        (None, None) => {
            let inputs = BoundInputs {
                epsilon_m: args.epsilon_m.context("--epsilon-m is required without checkpoints")?,
                epsilon_pi: args.epsilon_pi.clone(),
                gamma: args.gamma.context("--gamma is required without checkpoints")?,
                r_max: args.r_max.context("--r-max is required without checkpoints")?,
            };
            BoundReport {
                bound: theorem1_bound(&inputs)?,
                inputs,
                epsilon_m_kind: "given".into(),
                probe_states: 0,
            }
        }
        _ => bail!("--old and --new must be given together"),
    };
    println!("epsilon_m  = {} ({})", report.inputs.epsilon_m, report.epsilon_m_kind);
    for (k, e) in report.inputs.epsilon_pi.iter().enumerate() {
        println!("epsilon_pi[level {}] = {e}", k + 1);
    }
    println!("gamma      = {}", report.inputs.gamma);
    println!("r_max      = {}", report.inputs.r_max);
    if report.probe_states > 0 {
        println!("probe      = {} states", report.probe_states);
    }
    println!("C          = {}", report.bound);
    if let Some(o) = &args.out {
        OutDir::create(o)?.write_json("bound.json", &report)?;
    }
    Ok(())
}

fn from_checkpoints(old: &Path, new: &Path, args: &BoundArgs) -> Result<BoundReport> {
    let old = load_checkpoint(old)?;
    let new = load_checkpoint(new)?;
    ensure!(
        old.config.env == new.config.env,
        "checkpoints were trained on different environments"
    );
    let gamma = args.gamma.unwrap_or(old.config.ppo.gamma);
    let mode = old.config.mode.clone();
    let negotiation = old.config.negotiation.clone();
    let env = old.config.env.clone();
    let episodes = args.probe_episodes;
    let seed = args.seed.unwrap_or(old.config.seed);
    let new_params = {
        let mut t = Trainer::new(old.config.clone())?;
        t.load_params(new.params)?;
        t.params().clone()
    };
    let old_trainer = old.into_trainer()?;
    let collector = Collector {
        env: &env,
        net: old_trainer.net(),
        params: old_trainer.params(),
        mode: &mode,
        negotiation: &negotiation,
    };
    let mut rngs: Vec<ChaCha8Rng> = (0..episodes as u64)
        .map(|e| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream((1 << 33) + e);
            r
        })
        .collect();
    let probe = ProbeBatch::from_collected(collector.collect(ActionSource::Policy(ActionChoice::Sample), &mut rngs)?)?;
    let est = estimate_divergences(
        old_trainer.net(),
        old_trainer.params(),
        &new_params,
        &probe,
        mode.messages(),
        gamma,
    )?;
    Ok(BoundReport {
        bound: theorem1_bound(&est.inputs)?,
        inputs: est.inputs,
        epsilon_m_kind: est.epsilon_m_kind,
        probe_states: est.probe_states,
    })
}

/// Seed, env steps and eval returns of one run.
type Series = (u64, Vec<u64>, Vec<f64>);

pub fn compare(args: &CompareArgs) -> Result<()> {
    ensure!(!args.metrics.is_empty(), "compare needs at least one metrics file");
    let mut runs: BTreeMap<String, BTreeMap<String, Series>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for path in &args.metrics {
        let path = metrics_path(path);
        for rec in read_records(&path).with_context(|| format!("reading {}", path.display()))? {
            let label = if args.by_run { rec.run_id.clone() } else { rec.mode.clone() };
            if !order.contains(&label) {
                order.push(label.clone());
            }
            let e = runs
                .entry(label)
                .or_default()
                .entry(format!("{}:{}", path.display(), rec.run_id))
                .or_insert((rec.seed, Vec::new(), Vec::new()));
            e.1.push(rec.env_steps);
            e.2.push(rec.eval_return);
        }
    }
    let mut report = TrainingReport::new();
    for label in &order {
        for (seed, steps, returns) in runs[label].values() {
            report.add_run(label, *seed, steps.clone(), returns.clone())?;
        }
    }
    let out = OutDir::create(&args.out)?;
    write_report(&out, &report, args.tail, "compare")?;
    println!("wrote {}", out.root().display());
    Ok(())
}

/// A run directory stands for its metrics stream.
fn metrics_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("metrics.jsonl")
    } else {
        p.to_path_buf()
    }
}
