//! `mscnn` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mscnn::Error;

use crate::commands::*;
use crate::config::{KeySpec, RunConfig};

#[derive(Parser)]
#[command(name = "mscnn", version, about = "Multi-scale CNN scene and bridge component labeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth(Common),
    /// Train the scene classifier.
    TrainScene(Common),
    /// Train a component classifier (naive or scene-aware).
    TrainComponent(Common),
    /// Label one image and render the result.
    Infer(Common),
    /// Confusion matrix and pixel accuracy over a manifest.
    Eval(Common),
    /// False-positive rates of component classifiers on bridge-free images.
    FpTest(Common),
    /// Print the weight count of an architecture.
    Params(Common),
    /// Run the finite-difference gradient suite.
    GradCheck(Common),
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Shorthand for --set seed=N.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for --set out=DIR.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shorthand for --set mode=MODE (naive or scene).
    #[arg(long)]
    mode: Option<String>,
    /// Shorthand for --set arch=NAME.
    #[arg(long)]
    arch: Option<String>,
    /// Override one configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn resolve(&self, command: &str, keys: &[KeySpec]) -> mscnn::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(o) = &self.out {
            cfg.set("out", &o.to_string_lossy())?;
        }
        if let Some(m) = &self.mode {
            cfg.set("mode", m)?;
        }
        if let Some(a) = &self.arch {
            cfg.set("arch", a)?;
        }
        for pair in &self.overrides {
            cfg.set_pair(pair)?;
        }
        cfg.resolve(command, keys)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::UnknownArch(_) => 2,
        Error::Io(_) | Error::Image(_) => 3,
        Error::Data(_) | Error::Size(_) => 4,
        Error::Integrity(_) | Error::Version { .. } | Error::Spec(_) | Error::Shape(_) => 5,
    }
}

fn run(cli: Cli) -> mscnn::Result<bool> {
    match cli.command {
        Command::Synth(c) => synth(&c.resolve("synth", SYNTH_KEYS)?)?,
        Command::TrainScene(c) => train_scene_cmd(&c.resolve("train-scene", &train_scene_keys())?)?,
        Command::TrainComponent(c) => train_component_cmd(&c.resolve("train-component", &train_component_keys())?)?,
        Command::Infer(c) => infer_cmd(&c.resolve("infer", INFER_KEYS)?)?,
        Command::Eval(c) => eval_cmd(&c.resolve("eval", EVAL_KEYS)?)?,
        Command::FpTest(c) => fp_test_cmd(&c.resolve("fp-test", FP_KEYS)?)?,
        Command::Params(c) => params_cmd(&c.resolve("params", PARAMS_KEYS)?)?,
        Command::GradCheck(c) => return grad_check_cmd(&c.resolve("grad-check", GRAD_KEYS)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
