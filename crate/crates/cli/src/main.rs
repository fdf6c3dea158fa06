use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use suq_core::error_analysis::tau_grid;
use suq_core::manifest::{load_manifest, ManifestOptions};
use suq_core::report::emit::{diagram_csv, ranks_csv, ranks_from_metrics, read_metrics_csv, METRICS_FILE};
use suq_core::report::{emit_reports, evaluate, reliability_diagram, EvalOptions};
use suq_core::synth::{write_dataset, SynthDatasetConfig};

/// Exit status when reports were written but some subjects were skipped.
const EXIT_SUBJECT_FAILURES: u8 = 2;

#[derive(Parser)]
#[command(name = "suq", version, about = "Uncertainty and calibration metrics for segmentation outputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every method of a manifest and write reports.
    Evaluate {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: OptionFlags,
    },
    /// Generate a synthetic dataset (tensors and manifest) from a JSON config.
    Synth {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print reliability-diagram rows for one method as CSV.
    Diagram {
        manifest: PathBuf,
        #[arg(long)]
        method: String,
        /// Omit to pool all subjects.
        #[arg(long)]
        subject: Option<String>,
        #[command(flatten)]
        opts: OptionFlags,
    },
    /// Print the rank table of a results directory as CSV.
    Rank { results: PathBuf },
}

#[derive(Args)]
struct OptionFlags {
    /// JSON file with evaluation options; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    /// Threshold grid as start:end:step.
    #[arg(long, value_name = "A:B:STEP")]
    tau_grid: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Restrict metrics to each subject's mask.
    #[arg(long)]
    mask: bool,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let [a, b, step] = parts.as_slice() else {
        bail!("--tau-grid expects start:end:step, got {text:?}");
    };
    let num = |s: &str| s.trim().parse::<f64>().with_context(|| format!("bad number {s:?} in --tau-grid"));
    Ok(tau_grid(num(a)?, num(b)?, num(step)?)?)
}

impl OptionFlags {
    fn resolve(&self) -> Result<EvalOptions> {
        let mut opts = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => EvalOptions::default(),
        };
        if let Some(b) = self.bins {
            opts.n_bins = b;
        }
        if let Some(g) = &self.tau_grid {
            opts.tau_grid = parse_grid(g)?;
        }
        if let Some(e) = self.epsilon {
            opts.epsilon = e;
        }
        if self.mask {
            opts.use_mask = true;
        }
        if let Some(w) = self.workers {
            opts.workers = w;
        }
        opts.validate()?;
        Ok(opts)
    }
}

fn run_evaluate(manifest: &Path, out: &Path, flags: &OptionFlags) -> Result<ExitCode> {
    let opts = flags.resolve()?;
    let ev = evaluate(manifest, &opts).with_context(|| format!("evaluating {}", manifest.display()))?;
    emit_reports(&ev, out).with_context(|| format!("writing reports to {}", out.display()))?;
    let failed = ev.n_failed();
    for m in &ev.methods {
        for s in &m.subjects {
            if let Err(reason) = &s.outcome {
                eprintln!("skipped {} / {}: {reason}", m.name, s.subject_id);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} subject evaluation(s) failed");
        return Ok(ExitCode::from(EXIT_SUBJECT_FAILURES));
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Evaluate { manifest, out, opts } => run_evaluate(&manifest, &out, &opts),
        Command::Synth { config, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = SynthDatasetConfig::from_json(&text)?;
            let path = write_dataset(&cfg, &out)?;
            println!("{}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagram {
            manifest,
            method,
            subject,
            opts,
        } => {
            let opts = opts.resolve()?;
            let m = load_manifest(&manifest, ManifestOptions { eager: false })?;
            let rows = reliability_diagram(&m, &method, subject.as_deref(), &opts)?;
            std::io::stdout().write_all(&diagram_csv(&rows)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Rank { results } => {
            let path = results.join(METRICS_FILE);
            let rows = read_metrics_csv(&path).with_context(|| format!("reading {}", path.display()))?;
            std::io::stdout().write_all(&ranks_csv(&ranks_from_metrics(&rows))?)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.1:0.3:0.1").unwrap(), vec![0.1, 0.2, 0.3]);
        assert!(parse_grid("0.1:0.3").is_err());
        assert!(parse_grid("a:0.3:0.1").is_err());
    }

    #[test]
    fn cli_definition_is_valid() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
