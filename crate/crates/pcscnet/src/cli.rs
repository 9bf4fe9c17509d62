//! Argument parsing and dispatch for the `pcscnet` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{
    cmd_ablate_loss, cmd_ablate_voxel, cmd_bench, cmd_eval, cmd_gradcheck, cmd_infer, cmd_make_synth, cmd_train,
};
use crate::config::RunConfig;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "pcscnet", version, about = "Point-convolution plus sparse-convolution LiDAR segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// `--key value` overrides applied after the config file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic scenes in KITTI layout.
    MakeSynth(RunArgs),
    /// Train with checkpointing and optional resume.
    Train(RunArgs),
    /// Per-class IoU and mIoU of a checkpoint.
    Eval(RunArgs),
    /// Predict and export colored PLY files.
    Infer(RunArgs),
    /// Train and evaluate one model per voxel size.
    AblateVoxel(RunArgs),
    /// Cross-entropy alone against the combined loss.
    AblateLoss(RunArgs),
    /// Stage timings and sparse against dense convolution.
    Bench(RunArgs),
    /// Finite-difference check of every gradient.
    Gradcheck(RunArgs),
    /// Print the effective configuration.
    Config(RunArgs),
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first) and runs the command, streaming
/// progress and the final table to `out`. Help and version requests print
/// to `out` and succeed.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").map_err(|e| Error::io("<stdout>", e))?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            return Err(Error::Config(first.trim_start_matches("error: ").to_string()));
        }
    };
    let mut io_err = None;
    let mut log = |line: &str| {
        if io_err.is_none() {
            if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                io_err = Some(e);
            }
        }
    };
    let table = match &cli.command {
        Command::MakeSynth(a) => cmd_make_synth(&a.load()?, &mut log)?,
        Command::Train(a) => cmd_train(&a.load()?, &mut log)?,
        Command::Eval(a) => cmd_eval(&a.load()?)?.0,
        Command::Infer(a) => cmd_infer(&a.load()?, &mut log)?,
        Command::AblateVoxel(a) => cmd_ablate_voxel(&a.load()?, &mut log)?,
        Command::AblateLoss(a) => cmd_ablate_loss(&a.load()?, &mut log)?,
        Command::Bench(a) => cmd_bench(&a.load()?)?,
        Command::Gradcheck(a) => cmd_gradcheck(&a.load()?)?,
        Command::Config(a) => a.load()?.to_text(),
    };
    if let Some(e) = io_err {
        return Err(Error::io("<stdout>", e));
    }
    write!(out, "{table}").map_err(|e| Error::io("<stdout>", e))
}

/// `error kind=<kind> message="<one line>"`.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"");
    let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error kind={} message=\"{msg}\"", e.kind())
}
