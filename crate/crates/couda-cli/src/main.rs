//! `couda` command line: synthetic benchmark generation, training,
//! evaluation, ablation sweeps and the gradient self-test.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use couda_core::config::{AblationVariant, ExperimentConfig};
use couda_core::data::{
    generate_synthetic, inject_label_noise, load_csv, save_csv, Dataset, Manifest, NoiseSpec,
};
use couda_core::error::CoudaError;
use couda_core::metrics::{evaluate, MetricsReport};
use couda_core::model::CoudaModel;
use couda_core::selfcheck;
use couda_core::training::{fit, write_history_csv, FitConfig};

#[derive(Parser)]
#[command(name = "couda", about = "Collaborative domain adaptation under noisy labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write source.csv, target_train.csv, target_test.csv and a manifest.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model; writes checkpoint, history.csv and metrics.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train one named ablation variant instead of the config flags.
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Evaluate a saved checkpoint on the target test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run all five ablation variants over a seed sweep.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Check every loss gradient against finite differences.
    Gradcheck {
        /// Randomized instances per component.
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative-control fixture: corrupt one analytic gradient.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common } => cmd_generate(&common),
        Command::Train { common, ablation } => cmd_train(&common, ablation.as_deref()),
        Command::Evaluate { common, checkpoint } => cmd_evaluate(&common, &checkpoint),
        Command::Ablate { common } => cmd_ablate(&common),
        Command::Gradcheck { instances, seed, corrupt } => {
            return cmd_gradcheck(seed, instances, corrupt)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration/input problems, 3 for numeric failures.
fn exit_code(e: &CoudaError) -> u8 {
    match e {
        CoudaError::Config(_)
        | CoudaError::Data(_)
        | CoudaError::CsvRow { .. }
        | CoudaError::Checkpoint(_)
        | CoudaError::Io(_) => 2,
        _ => 3,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CoudaError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Materialize (source, target_train, target_test) from either config arm.
fn resolve_data(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), CoudaError> {
    if let Some(s) = &cfg.data.synthetic {
        let (clean_source, target) = generate_synthetic(&s.spec, seed)?;
        let noise = NoiseSpec::uniform(s.spec.k, s.noise_rate, seed);
        let source = inject_label_noise(&clean_source, &noise)?;
        let (target_train, target_test) = target.split_held_out(s.held_out_frac, seed);
        return Ok((source, target_train, target_test));
    }
    let c = cfg.data.csv.as_ref().expect("validated config has a data arm");
    Ok((
        load_csv(&c.source, c.k)?,
        load_csv(&c.target_train, c.k)?,
        load_csv(&c.target_test, c.k)?,
    ))
}

fn cmd_generate(common: &Common) -> Result<ExitCode, CoudaError> {
    let cfg = load_config(common)?;
    let s = cfg.data.synthetic.as_ref().ok_or_else(|| {
        CoudaError::Config("generate needs a synthetic data section".into())
    })?;
    let (source, target_train, target_test) = resolve_data(&cfg, cfg.seed)?;
    std::fs::create_dir_all(&common.out)?;
    save_csv(&source, common.out.join("source.csv"))?;
    save_csv(&target_train, common.out.join("target_train.csv"))?;
    save_csv(&target_test, common.out.join("target_test.csv"))?;
    let manifest = Manifest {
        k: s.spec.k,
        d_x: s.spec.d_x,
        seed: cfg.seed,
        source_priors: s.spec.source_priors.clone(),
        target_priors: s.spec.target_priors.clone(),
        radius: s.spec.radius,
        arc_deg: s.spec.arc_deg,
        rotation_deg: s.spec.rotation_deg,
        translation: s.spec.translation.clone(),
        t_true: NoiseSpec::uniform(s.spec.k, s.noise_rate, cfg.seed).t_true,
        n_source: source.len(),
        n_target_train: target_train.len(),
        n_target_test: target_test.len(),
    };
    manifest.save(common.out.join("manifest.toml"))?;
    println!(
        "wrote {} source, {} target train, {} target test rows to {}",
        source.len(),
        target_train.len(),
        target_test.len(),
        common.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn fit_config(cfg: &ExperimentConfig, seed: u64) -> FitConfig {
    FitConfig {
        model: cfg.model.clone(),
        hp: cfg.hp.clone(),
        flags: cfg.ablation,
        seed,
        warmup_alpha: cfg.warmup_alpha,
    }
}

fn cmd_train(common: &Common, ablation: Option<&str>) -> Result<ExitCode, CoudaError> {
    let mut cfg = load_config(common)?;
    if let Some(name) = ablation {
        cfg.ablation = AblationVariant::parse(name)?.flags();
    }
    let (source, target_train, target_test) = resolve_data(&cfg, cfg.seed)?;
    std::fs::create_dir_all(&common.out)?;
    let outcome = fit(&fit_config(&cfg, cfg.seed), &source, &target_train, &target_test)?;
    write_history_csv(common.out.join("history.csv"), &outcome.history)?;
    if let Some(reason) = outcome.aborted {
        eprintln!("training aborted: {}", reason);
        eprintln!("partial history saved to {}", common.out.join("history.csv").display());
        return Ok(ExitCode::from(3));
    }
    outcome.model.save_checkpoint(common.out.join("model.ckpt"))?;
    let report = evaluate(&outcome.model, &target_test, cfg.ablation.single_network, true)?;
    std::fs::write(common.out.join("metrics.json"), report.to_json())?;
    println!(
        "target accuracy {:.4} macro-F1 {:.4} over {} epochs",
        report.accuracy,
        report.macro_f1,
        outcome.history.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(common: &Common, checkpoint: &Path) -> Result<ExitCode, CoudaError> {
    let cfg = load_config(common)?;
    let (_, _, target_test) = resolve_data(&cfg, cfg.seed)?;
    let model = CoudaModel::load_checkpoint(&cfg.model, checkpoint)?;
    let report = evaluate(&model, &target_test, cfg.ablation.single_network, true)?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("metrics.json"), report.to_json())?;
    println!("{}", report.to_json());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SeedResult {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct VariantSummary {
    variant: String,
    median_macro_f1: Option<f64>,
    median_accuracy: Option<f64>,
    per_seed: Vec<SeedResult>,
}

#[derive(Serialize)]
struct AblationSummary {
    config: ExperimentConfig,
    seeds: Vec<u64>,
    variants: Vec<VariantSummary>,
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

fn cmd_ablate(common: &Common) -> Result<ExitCode, CoudaError> {
    let cfg = load_config(common)?;
    if cfg.n_seeds == 0 {
        return Err(CoudaError::Config("n_seeds must be at least 1".into()));
    }
    let seeds = cfg.sweep_seeds();
    let mut variants = Vec::new();
    for variant in AblationVariant::ALL {
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let run = || -> Result<MetricsReport, CoudaError> {
                let (source, target_train, target_test) = resolve_data(&cfg, seed)?;
                let mut fc = fit_config(&cfg, seed);
                fc.flags = variant.flags();
                let outcome = fit(&fc, &source, &target_train, &target_test)?;
                if let Some(reason) = outcome.aborted {
                    return Err(CoudaError::NonFiniteLoss { step: 0, detail: reason });
                }
                evaluate(&outcome.model, &target_test, fc.flags.single_network, true)
            };
            // a failed run is recorded and the sweep continues
            let result = match run() {
                Ok(m) => SeedResult { seed, metrics: Some(m), error: None },
                Err(e) => SeedResult { seed, metrics: None, error: Some(e.to_string()) },
            };
            per_seed.push(result);
        }
        let f1s: Vec<f64> = per_seed
            .iter()
            .filter_map(|r| r.metrics.as_ref().map(|m| m.macro_f1))
            .collect();
        let accs: Vec<f64> = per_seed
            .iter()
            .filter_map(|r| r.metrics.as_ref().map(|m| m.accuracy))
            .collect();
        let summary = VariantSummary {
            variant: variant.name().to_string(),
            median_macro_f1: median(f1s),
            median_accuracy: median(accs),
            per_seed,
        };
        println!(
            "{:<14} median macro-F1 {}",
            summary.variant,
            summary
                .median_macro_f1
                .map(|v| format!("{:.4}", v))
                .unwrap_or_else(|| "n/a".into())
        );
        variants.push(summary);
    }
    let summary = AblationSummary { config: cfg, seeds, variants };
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(
        common.out.join("ablation_summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seed: u64, instances: usize, corrupt: bool) -> ExitCode {
    match selfcheck::run_suite(seed, instances, corrupt) {
        Ok(reports) => {
            let mut ok = true;
            for r in &reports {
                println!(
                    "{:<22} max rel error {:.3e}  {}",
                    r.name,
                    r.max_rel_error,
                    if r.passed() { "ok" } else { "FAIL" }
                );
                ok &= r.passed();
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                let failed: Vec<&str> =
                    reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
                eprintln!("gradient check failed: {}", failed.join(", "));
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
