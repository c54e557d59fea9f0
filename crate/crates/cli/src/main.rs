//! `pda`: data generation, training, adaptation, evaluation and checks.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pda_core::adaptation::adapt_log_csv;
use pda_core::datasets::{
    generate_synthetic, read_feature_file, write_feature_file, SyntheticSpec,
};
use pda_core::harness::{
    apply_ablation, evaluate, load_source, load_target, run_adapt_phase, run_experiment,
    run_gradcheck, run_source_phase, AblationSpec, ExperimentConfig, ADAPT_LOG_FILE,
    GRADCHECK_SEEDS, SOURCE_LOG_FILE,
};
use pda_core::model::Checkpoint;
use pda_core::source_trainer::source_log_csv;
use pda_core::{PdaError, Result};

#[derive(Parser)]
#[command(
    name = "pda",
    version,
    about = "Prototype-based partial domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target pair from a JSON spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_source: PathBuf,
        #[arg(long)]
        out_target: PathBuf,
    },
    /// Train encoder and prototypes on the source set.
    TrainSource {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a source checkpoint to the target set; source data is not read.
    Adapt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source_ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report accuracy of a checkpoint on a target file with hidden labels.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the full experiment with one component removed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: AblationSpec,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_mode(s: &str) -> std::result::Result<AblationSpec, String> {
    s.parse().map_err(|e: PdaError| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Gen {
            spec,
            out_source,
            out_target,
        } => {
            let spec: SyntheticSpec = serde_json::from_str(&fs::read_to_string(spec)?)?;
            let (source, target) = generate_synthetic(&spec)?;
            write_feature_file(&source, &out_source)?;
            write_feature_file(&target, &out_target)?;
            println!(
                "wrote {} source and {} target samples",
                source.len(),
                target.len()
            );
        }
        Command::TrainSource { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let source = load_source(&cfg.data).map_err(|e| e.in_phase("data"))?;
            let trained = run_source_phase(&cfg.model, &cfg.source, cfg.seed, &source)?;
            Checkpoint {
                encoder: trained.encoder,
                prototypes: trained.prototypes,
                ensemble: Vec::new(),
            }
            .save(&out)?;
            write_log(
                cfg.output_dir.as_deref(),
                SOURCE_LOG_FILE,
                &source_log_csv(&trained.log),
            )?;
            if let Some(last) = trained.log.last() {
                println!("epoch {} source_acc {}", last.epoch, last.source_acc);
            }
        }
        Command::Adapt {
            config,
            source_ckpt,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let checkpoint = Checkpoint::load(&source_ckpt)?;
            let target = load_target(&cfg.data).map_err(|e| e.in_phase("data"))?;
            let adapted = run_adapt_phase(&checkpoint, &cfg.adapt, &target)?;
            Checkpoint {
                encoder: adapted.encoder.clone(),
                prototypes: adapted.prototypes.clone(),
                ensemble: adapted.ensemble.weights().to_vec(),
            }
            .save(&out)?;
            write_log(
                cfg.output_dir.as_deref(),
                ADAPT_LOG_FILE,
                &adapt_log_csv(&adapted.log),
            )?;
            if let Some(last) = adapted.log.last() {
                println!("{}", last.csv_row());
            }
        }
        Command::Eval { ckpt, data } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let data = read_feature_file(&data)?;
            let e = evaluate(&checkpoint.encoder, checkpoint.eval_weights(), &data)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&e).expect("evaluation serializes")
            );
        }
        Command::Ablate { config, mode } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.adapt = apply_ablation(&cfg.adapt, mode);
            cfg.output_dir = cfg.output_dir.map(|d| d.join(mode.as_str()));
            let result = run_experiment(&cfg)?;
            print!("{}", result.summary.to_json());
        }
        Command::Gradcheck { seed } => {
            let report = run_gradcheck(seed, GRADCHECK_SEEDS)?;
            for (name, err) in &report.max_rel_error {
                println!("{name:<6} max_rel_error {err:.3e}");
            }
            if !report.passed() {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_log(dir: Option<&Path>, name: &str, csv: &str) -> Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), csv)?;
    }
    Ok(())
}
