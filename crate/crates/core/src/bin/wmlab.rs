//! Command-line front end: every subcommand operates on the registries of a
//! config file; results are emitted as JSON lines on stdout or written into
//! the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use wmlab::classifier::{learning_curve, run_scenario, Scenario, ScenarioSpec};
use wmlab::harness::{
    cell_keys, emit_plot_data, load_config, load_report, perplexity_delta_table, prepare,
    run_experiment, ExperimentConfig, PlotKind, Prepared,
};
use wmlab::lm::{Sampler, TokenSequence};
use wmlab::prf::mix2;
use wmlab::stealing::{radioactivity_check, steal, StealingConfig};
use wmlab::watermark::watermarked_generate;
use wmlab::{Error, Result};

#[derive(Parser)]
#[command(name = "wmlab", version, about = "Watermarking and IP-protection lab")]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the configured models and save them under <out-dir>/models/.
    TrainLm,
    /// Generate completions from one model, optionally watermarked.
    Generate {
        #[arg(long)]
        model_id: String,
        /// Scheme name from the config; omit for plain sampling.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, default_value_t = 200)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Run the detector of one scheme over a file of texts (one per line).
    Detect {
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate watermarked texts, attack them, and detect before/after.
    Attack {
        #[arg(long)]
        attack: String,
        #[arg(long)]
        scheme: String,
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 60)]
        length: usize,
    },
    /// Run one attribution scenario; with --train-sizes, a learning curve.
    Classify {
        /// A, B, or C.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        scheme: Option<String>,
        /// The single watermarked model (scenario B).
        #[arg(long)]
        watermarked_model: Option<String>,
        #[arg(long, value_delimiter = ',')]
        train_sizes: Option<Vec<usize>>,
    },
    /// Distill surrogates from the victim and run the radioactivity check.
    Steal {
        /// Scheme name, or omit for an unwatermarked victim.
        #[arg(long)]
        scheme: Option<String>,
        /// Query counts; defaults to the config's stealing sweep.
        #[arg(long, value_delimiter = ',')]
        queries: Option<Vec<usize>>,
    },
    /// Run the full experiment matrix into <out-dir>/report.jsonl.
    Experiment,
    /// Emit columnar plot files from a finished report.
    PlotData {
        /// f1_bars, attack_tradeoff, learning_curve, n_sweep, or all.
        #[arg(long, default_value = "all")]
        kind: String,
        /// Report path; defaults to <out-dir>/report.jsonl.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn scenario_spec(ctx: &Prepared, cli_scenario: &str, scheme: Option<&String>, wm_model: Option<&String>) -> Result<ScenarioSpec> {
    let ids: Vec<String> = ctx.models.iter().map(|m| m.model_id().to_string()).collect();
    let (scenario, watermarked) = match cli_scenario {
        "A" => (Scenario::A, vec![]),
        "B" => {
            let m = wm_model.ok_or_else(|| {
                Error::Config("scenario B needs --watermarked-model".into())
            })?;
            (Scenario::B, vec![m.clone()])
        }
        "C" => (Scenario::C, ids.clone()),
        other => {
            return Err(Error::Config(format!(
                "unknown scenario {other:?}; expected A, B, or C"
            )))
        }
    };
    let scheme = match (cli_scenario, scheme) {
        ("A", None) => None,
        ("A", Some(_)) => {
            return Err(Error::Config("scenario A takes no --scheme".into()))
        }
        (_, Some(name)) => Some(*ctx.scheme(name)?),
        (_, None) => return Err(Error::Config("scenarios B and C need --scheme".into())),
    };
    Ok(ScenarioSpec {
        scenario,
        models: ids,
        watermarked_models: watermarked,
        scheme,
    })
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load(cli)?;
    match &cli.cmd {
        Cmd::TrainLm => {
            let ctx = prepare(&cfg)?;
            let dir = cfg.output_dir.join("models");
            std::fs::create_dir_all(&dir)?;
            for m in &ctx.models {
                let path = dir.join(format!("{}.model", m.model_id()));
                m.save(&path)?;
                print_json(&json!({
                    "model": m.model_id(),
                    "order": m.order(),
                    "vocab_size": m.vocab_size(),
                    "path": path,
                }))?;
            }
        }
        Cmd::Generate {
            model_id,
            scheme,
            length,
            count,
        } => {
            let ctx = prepare(&cfg)?;
            let model = ctx.model(model_id)?;
            let scheme_cfg = scheme.as_ref().map(|s| ctx.scheme(s)).transpose()?;
            let seed0 = cfg.seeds[0];
            for i in 0..*count {
                let prompt = &ctx.prompts[(mix2(seed0, i as u64) % ctx.prompts.len() as u64) as usize];
                let seed = mix2(seed0 ^ 0x67e, i as u64);
                let text = match scheme_cfg {
                    Some(s) => watermarked_generate(model, prompt, s, *length, seed, Some(&ctx.table))?,
                    None => model.generate(prompt, *length, Sampler::Multinomial, seed),
                };
                print_json(&json!({
                    "model": model_id,
                    "scheme": scheme,
                    "prompt": model.vocab().decode(&prompt.ids),
                    "text": model.vocab().decode(&text.ids),
                }))?;
            }
        }
        Cmd::Detect { scheme, input } => {
            let ctx = prepare(&cfg)?;
            let scheme_cfg = ctx.scheme(scheme)?;
            let vocab = ctx.models[0].vocab();
            let text = std::fs::read_to_string(input)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let ids = vocab.encode(line);
                let seq = TokenSequence::external(ids);
                let result = ctx.detect_one(&seq, scheme_cfg, mix2(cfg.seeds[0], i as u64))?;
                print_json(&json!({ "line": i, "scheme": scheme, "result": result }))?;
            }
        }
        Cmd::Attack {
            attack,
            scheme,
            count,
            length,
        } => {
            let ctx = prepare(&cfg)?;
            let scheme_cfg = *ctx.scheme(scheme)?;
            let aspec = cfg
                .attacks
                .iter()
                .find(|a| &a.name == attack)
                .ok_or_else(|| Error::Config(format!("unknown attack {attack}")))?;
            let seed0 = cfg.seeds[0];
            let model = &ctx.models[0];
            let mut pre = Vec::new();
            let mut post = Vec::new();
            for i in 0..*count {
                let i = i as u64;
                let prompt = &ctx.prompts[(mix2(seed0 ^ 0xa77, i) % ctx.prompts.len() as u64) as usize];
                let text = watermarked_generate(model, prompt, &scheme_cfg, *length, mix2(seed0, i), Some(&ctx.table))?;
                let r_pre = ctx.detect_one(&text, &scheme_cfg, mix2(seed0 ^ 1, i))?;
                let atk = wmlab::attacks::AttackConfig {
                    kind: aspec.kind,
                    edit_rate: aspec.edit_rate,
                    window: aspec.window,
                    perplexity_budget: aspec.perplexity_budget,
                    rng_seed: mix2(seed0 ^ 2, i),
                };
                let attacked = atk.apply(&text, &ctx.table, Some(model))?;
                let r_post = ctx.detect_one(&attacked, &scheme_cfg, mix2(seed0 ^ 3, i))?;
                print_json(&json!({
                    "index": i,
                    "pre": r_pre,
                    "post": r_post,
                    "ppl_pre": model.perplexity(&text)?,
                    "ppl_post": model.perplexity(&attacked)?,
                }))?;
                pre.push(r_pre);
                post.push(r_post);
            }
            let rate = wmlab::attacks::attack_success_rate(&pre, &post)?;
            print_json(&json!({ "scheme": scheme, "attack": attack, "attack_success_rate": rate }))?;
        }
        Cmd::Classify {
            scenario,
            scheme,
            watermarked_model,
            train_sizes,
        } => {
            let ctx = prepare(&cfg)?;
            let spec = scenario_spec(&ctx, scenario, scheme.as_ref(), watermarked_model.as_ref())?;
            let params = scenario_params(&cfg);
            let seed = cfg.seeds[0];
            match train_sizes {
                Some(sizes) => {
                    let curve = learning_curve(
                        &spec,
                        &ctx.models,
                        &ctx.prompts,
                        Some(&ctx.table),
                        &params,
                        sizes,
                        seed,
                    )?;
                    for (size, f1) in curve {
                        print_json(&json!({ "train_size": size, "macro_f1": f1 }))?;
                    }
                }
                None => {
                    let out = run_scenario(
                        &spec,
                        &ctx.models,
                        &ctx.prompts,
                        Some(&ctx.table),
                        &params,
                        seed,
                    )?;
                    print_json(&json!({
                        "scenario": scenario,
                        "scheme": scheme,
                        "metrics": out.metrics,
                    }))?;
                }
            }
        }
        Cmd::Steal { scheme, queries } => {
            let ctx = prepare(&cfg)?;
            let st = cfg
                .stealing
                .as_ref()
                .ok_or_else(|| Error::Config("config has no [stealing] section".into()))?;
            let victim = ctx.model(&st.victim)?;
            let victim_scheme = scheme
                .as_ref()
                .map(|s| {
                    let mut sc = *ctx.scheme(s)?;
                    sc.delta = st.delta;
                    Ok::<_, Error>(sc)
                })
                .transpose()?;
            let counts = queries.clone().unwrap_or_else(|| st.query_counts.clone());
            let mut sweep = Vec::new();
            for n in counts {
                let scfg = StealingConfig {
                    num_queries: n,
                    completion_len: st.completion_len,
                    surrogate_order: st.surrogate_order,
                    surrogate_smoothing: st.surrogate_smoothing,
                    victim_scheme,
                };
                let surrogate = steal(victim, &scfg, &ctx.prompts, Some(&ctx.table), cfg.seeds[0])?;
                // The check always runs against the scheme's true key; an
                // unwatermarked victim measures the false-flag side.
                let check_scheme = victim_scheme.unwrap_or_else(|| ctx.schemes[0].1);
                let verdict = radioactivity_check(
                    &surrogate,
                    &check_scheme,
                    Some(&ctx.table),
                    st.probes,
                    st.probe_len,
                    cfg.detection.flag_rate_threshold,
                    cfg.seeds[0],
                )?;
                print_json(&json!({ "num_queries": n, "verdict": verdict }))?;
                sweep.push((n, verdict.flag_rate));
            }
            println!("num_queries\tflag_rate");
            for (n, rate) in sweep {
                println!("{n}\t{rate:.4}");
            }
        }
        Cmd::Experiment => {
            let summary = run_experiment(&cfg)?;
            print_json(&json!({
                "fingerprint": summary.fingerprint,
                "cells": cell_keys(&cfg).len(),
                "executed": summary.executed,
                "reused": summary.reused,
                "failed": summary.failed,
                "report": summary.report_path,
            }))?;
            if summary.failed > 0 {
                return Ok(false);
            }
        }
        Cmd::PlotData { kind, report } => {
            let report_path = report
                .clone()
                .unwrap_or_else(|| cfg.output_dir.join("report.jsonl"));
            let loaded = load_report(&report_path)?;
            let kinds: Vec<PlotKind> = if kind == "all" {
                vec![
                    PlotKind::F1Bars,
                    PlotKind::AttackTradeoff,
                    PlotKind::LearningCurve,
                    PlotKind::NSweep,
                ]
            } else {
                vec![PlotKind::parse(kind)?]
            };
            for k in kinds {
                let path = emit_plot_data(&cfg, &loaded.cells, k, &cfg.output_dir)?;
                println!("{}", path.display());
            }
            let table = perplexity_delta_table(&cfg, &loaded.cells)?;
            for row in table {
                println!("{}\t{}", row.scheme, row.formatted);
            }
        }
    }
    Ok(true)
}

fn scenario_params(cfg: &ExperimentConfig) -> wmlab::classifier::ScenarioParams {
    let d = &cfg.dataset;
    wmlab::classifier::ScenarioParams {
        prompt_len: d.prompt_len,
        completion_len: d.completion_len,
        train_per_class: d.train_per_class,
        test_per_class: d.test_per_class,
        epochs: d.epochs,
        learning_rate: d.learning_rate,
        l2: d.l2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
