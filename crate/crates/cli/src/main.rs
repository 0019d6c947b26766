use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latentbias::audit::{
    self, AuditConfig, AuditInputs, ReportFormat, EXIT_ERROR,
};
use latentbias::error::{Error, Result};
use latentbias::generate::{generate, GenerateConfig};
use latentbias::io;
use latentbias::projection::ScatterFormat;

#[derive(Parser)]
#[command(name = "latentbias", version, about = "Audit embedding spaces for attribute association bias")]
struct Cli {
    /// Worker threads for parallel stages; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Audit config (JSON).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    permutations: Option<usize>,
    /// Family-wise significance level before correction.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the output here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full audit. Exits 0 when nothing is flagged and 10 when bias is flagged.
    Audit(RunArgs),
    /// Compare two audit reports.
    Compare {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic dataset and matching audit configs.
    Generate {
        /// Generator recipe (JSON).
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Project the most-biased entities onto their leading principal components.
    Project {
        #[command(flatten)]
        run: RunArgs,
        /// Directory for scatter files.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        plot_format: Vec<PlotFormat>,
    },
    /// Build the configured directions and run the three validation tests.
    ValidateDirection(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotFormat {
    Csv,
    Svg,
}

fn load_config(args: &RunArgs) -> Result<(AuditConfig, AuditInputs)> {
    let mut config: AuditConfig = io::read_json(&args.config).map_err(|e| Error::in_stage("config", e))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.permutations {
        config.permutations = n;
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    config.validate().map_err(|e| Error::in_stage("config", e))?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let inputs = AuditInputs::load(&config, base).map_err(|e| Error::in_stage("ingest", e))?;
    config.resolve_outputs(base);
    Ok((config, inputs))
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => io::write_string(text, p).map_err(|e| Error::in_stage("report", e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn render<T: serde::Serialize>(value: &T, markdown: impl FnOnce(&T) -> String, format: Format) -> Result<String> {
    match format {
        Format::Json => io::to_canonical_json(value),
        Format::Markdown => Ok(markdown(value)),
    }
    .map_err(|e| Error::in_stage("report", e))
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Audit(args) => {
            let (config, inputs) = load_config(&args)?;
            let report = audit::run_audit(&config, &inputs)?;
            let text = audit::render_report(&report, args.format.into()).map_err(|e| Error::in_stage("report", e))?;
            emit(&text, args.output.as_deref())?;
            Ok(report.exit_code())
        }
        Command::Compare {
            first,
            second,
            format,
            output,
        } => {
            let a = audit::read_report(&first).map_err(|e| Error::in_stage("ingest", e))?;
            let b = audit::read_report(&second).map_err(|e| Error::in_stage("ingest", e))?;
            let cmp = audit::compare_reports(&a, &b).map_err(|e| Error::in_stage("compare", e))?;
            let text = render(&cmp, audit::render_comparison_markdown, format)?;
            emit(&text, output.as_deref())?;
            Ok(0)
        }
        Command::Generate { config, seed, output } => {
            let mut recipe: GenerateConfig = io::read_json(&config).map_err(|e| Error::in_stage("config", e))?;
            if let Some(s) = seed {
                recipe = recipe.with_seed(s);
            }
            let files = generate(&recipe, &output).map_err(|e| Error::in_stage("generate", e))?;
            for f in files.files.iter().chain(&files.audit_configs) {
                println!("{}", f.display());
            }
            Ok(0)
        }
        Command::Project {
            run,
            plot_dir,
            plot_format,
        } => {
            let (config, inputs) = load_config(&run)?;
            let mut pc = config.projection.clone().unwrap_or_default();
            if let Some(dir) = plot_dir {
                pc.output_dir = Some(dir);
            }
            if !plot_format.is_empty() {
                pc.formats = plot_format
                    .iter()
                    .map(|f| match f {
                        PlotFormat::Csv => ScatterFormat::Csv,
                        PlotFormat::Svg => ScatterFormat::Svg,
                    })
                    .collect();
            }
            let summary = audit::run_projection_only(&config, &inputs, &pc)?;
            let text = render(&summary, projection_markdown, run.format)?;
            emit(&text, run.output.as_deref())?;
            Ok(0)
        }
        Command::ValidateDirection(args) => {
            let (config, inputs) = load_config(&args)?;
            let checks = audit::run_direction_validation(&config, &inputs)?;
            let text = render(&checks, validation_markdown, args.format)?;
            emit(&text, args.output.as_deref())?;
            Ok(0)
        }
    }
}

fn projection_markdown(s: &std::collections::BTreeMap<String, audit::ProjectionSummary>) -> String {
    let mut out = String::from("| variant | fitted | variance ratio | abs cos(PC1, CD) |\n|---|---|---|---|\n");
    for (name, p) in s {
        let ratios: Vec<String> = p.explained_variance_ratio.iter().map(|x| format!("{x:.3}")).collect();
        out.push_str(&format!(
            "| {name} | {} | {} | {:.4} |\n",
            p.n_fit,
            ratios.join(", "),
            p.pc1_centroid_cosine
        ));
    }
    out
}

fn validation_markdown(checks: &Vec<audit::DirectionCheck>) -> String {
    let mut out = String::from("| variant | direction | test 1 p | test 2 p | test 3 p | threshold | validated |\n|---|---|---|---|---|---|---|\n");
    for c in checks {
        for d in &c.directions {
            if let Some(v) = &d.direction.validation {
                out.push_str(&format!(
                    "| {} | {} | {:.3e} | {:.3e} | {:.3e} | {:.3e} | {} |\n",
                    c.variant,
                    d.direction.label,
                    v.test1_p,
                    v.test2_p,
                    v.test3_p,
                    c.alpha_corrected,
                    if v.passed { "yes" } else { "no" }
                ));
            }
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("latentbias: cannot start {n} workers: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("latentbias: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
