//! `levyprofit`: stage subcommands share `<out>/report.json`, so any stage can
//! be rerun on its own once the ones before it have produced a report.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use levyprofit_core::panel::PanelMetadata;
use levyprofit_core::pipeline::AlphaSource;
use levyprofit_core::series::emit_eta_profile;
use levyprofit_core::{
    bound_report, emit_series, generate_panel, ingest, run_pipeline, AnalysisReport, FigureId, GeneratorSpec,
    NoiseLaw, Panel, RejectionReport, RunConfig, Stage,
};

const REPORT_FILE: &str = "report.json";
const PARTIAL_FILE: &str = "report.partial.json";

#[derive(Parser, Debug)]
#[command(name = "levyprofit", version, about = "Profit fluctuation analysis of company panels")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Settings layered over the config file. Flags win over the file.
#[derive(Args, Debug)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Panel CSV with company, year, revenue and profit columns.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true, env = "LEVYPROFIT_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    eps_cut: Option<f64>,
    #[arg(long, global = true)]
    gamma_g_init: Option<f64>,
    /// hill, tail_fit or inverse_eta.
    #[arg(long, global = true, value_parser = parse_alpha_source)]
    alpha_source: Option<AlphaSource>,
    #[arg(long, global = true)]
    hill_k_fraction: Option<f64>,
    /// Mean revenue used for the absolute-revenue predictions.
    #[arg(long, global = true)]
    r0_forecast: Option<f64>,
    /// Comma-separated list, e.g. 1991,1992,1993.
    #[arg(long, global = true, value_delimiter = ',')]
    anomalous_years: Option<Vec<i32>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate the input panel and list rejected rows.
    Ingest,
    /// Fit the yearly mean trends; starts a fresh report.
    Trend,
    /// Scale the panel by the revenue trend.
    Scale,
    /// Search the fluctuation exponent and tune gamma_g.
    Eta,
    /// Revenue and fluctuation densities, tail indices.
    Pdf,
    /// Probability of profitability curves.
    Profitability,
    /// All stages, then every series file.
    Run,
    /// Write series files from an existing report.
    Report {
        /// Figures to emit; all available ones when omitted.
        #[arg(long = "figure")]
        figures: Vec<FigureId>,
    },
    /// Generate a synthetic panel with its ground truth.
    Simulate(SimulateArgs),
    /// Cost-volume-profit bounds implied by a mean profit margin.
    Bounds {
        #[arg(long, default_value_t = 0.052)]
        gamma_g: f64,
    },
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 500)]
    companies: usize,
    #[arg(long, default_value_t = 0.6)]
    eta: f64,
    /// Stable index of the noise.
    #[arg(long, default_value_t = 1.7)]
    alpha: f64,
    /// Normal noise instead of stable.
    #[arg(long)]
    gaussian: bool,
    /// Fraction of lowest-revenue companies redrawn each year.
    #[arg(long)]
    survivorship: Option<f64>,
}

fn parse_alpha_source(s: &str) -> Result<AlphaSource, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("expected hill, tail_fit or inverse_eta, got {s:?}"))
}

struct Failure {
    stage: Stage,
    error: anyhow::Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|e| Failure { stage, error: e.into() })
    }
}

fn load_config(o: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg: RunConfig = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = &o.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = &o.out_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.eps_cut {
        cfg.eps_cut = v;
    }
    if let Some(v) = o.gamma_g_init {
        cfg.gamma_g_init = v;
    }
    if let Some(v) = o.alpha_source {
        cfg.alpha_source = v;
    }
    if let Some(v) = o.hill_k_fraction {
        cfg.hill_k_fraction = v;
    }
    if let Some(v) = o.r0_forecast {
        cfg.r0_forecast = Some(v);
    }
    if let Some(v) = &o.anomalous_years {
        cfg.anomalous_years = v.iter().copied().collect();
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn load_panel(cfg: &RunConfig) -> Result<(Panel, RejectionReport), Failure> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| anyhow!("no input panel; pass --input or set `input` in the config"))
        .at(Stage::Config)?;
    let file = File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .at(Stage::Ingest)?;
    ingest(file, &cfg.ingest).at(Stage::Ingest)
}

/// Loads the shared report; it must come from the same configuration.
fn resume(cfg: &RunConfig, stage: Stage) -> Result<AnalysisReport, Failure> {
    let path = cfg.output_dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading {}; run the earlier stages first", path.display()))
        .at(stage)?;
    let report: AnalysisReport = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .at(stage)?;
    if report.config_hash != cfg.hash() {
        return Err(Failure {
            stage: Stage::Config,
            error: anyhow!(
                "{} was produced with a different configuration; rerun from `trend`",
                path.display()
            ),
        });
    }
    Ok(report)
}

/// Drops results that depend on `stage`, which is about to be recomputed.
fn invalidate_from(report: &mut AnalysisReport, stage: Stage) {
    let order = [Stage::Trend, Stage::Scale, Stage::Eta, Stage::Pdf, Stage::Profitability];
    let from = order.iter().position(|s| *s == stage).unwrap_or(0);
    for s in &order[from..] {
        match s {
            Stage::Trend => report.trend = None,
            Stage::Scale => report.scale = None,
            Stage::Eta => report.eta = None,
            Stage::Pdf => report.pdf = None,
            _ => report.profitability = None,
        }
    }
    report.series_files.clear();
}

fn save(report: &AnalysisReport) -> Result<(), Failure> {
    write_json(&report.config.output_dir.join(REPORT_FILE), report).at(Stage::Emit)
}

fn emit(report: &mut AnalysisReport, figures: &[FigureId]) -> Result<(), Failure> {
    let dir = report.config.output_dir.clone();
    let explicit = !figures.is_empty();
    let figures = if explicit { figures.to_vec() } else { FigureId::ALL.to_vec() };
    let mut written = Vec::new();
    for fig in figures {
        match emit_series(report, fig) {
            Ok(text) => {
                fs::write(dir.join(fig.file_name()), text).at(Stage::Emit)?;
                written.push(fig.file_name());
            }
            Err(e) if explicit => return Err(e).at(Stage::Emit),
            Err(e) => eprintln!("skipping {}: {e}", fig.as_str()),
        }
    }
    if let Ok(text) = emit_eta_profile(report) {
        fs::write(dir.join("eta_profile.tsv"), text).at(Stage::Emit)?;
        written.push("eta_profile.tsv".into());
    }
    report.series_files = written;
    Ok(())
}

fn summary(report: &AnalysisReport) {
    if let Some(e) = &report.eta {
        println!("gamma_g\t{}", e.gamma_g);
        println!("eta\t{}", e.eta);
        println!("sigma_eta\t{}", e.search.sigma_eta_raw);
    }
    if let Some(d) = &report.pdf {
        println!("hill_alpha\t{}", d.hill.alpha());
        println!("revenue_power\t{}", d.revenue_fit.power_exponent);
        println!("levy_like\t{}", d.levy_like);
    }
    if let Some(p) = &report.profitability {
        println!("alpha\t{}", p.model.alpha);
        println!("rms_levy\t{}", p.rms_levy);
        println!("rms_gaussian\t{}", p.rms_gaussian);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
}

fn run_stage(cfg: RunConfig, stage: Stage) -> Result<(), Failure> {
    let mut report = if stage == Stage::Trend {
        AnalysisReport::new(cfg.clone())
    } else {
        resume(&cfg, stage)?
    };
    invalidate_from(&mut report, stage);
    let result = match stage {
        Stage::Trend => {
            let (panel, rejections) = load_panel(&cfg)?;
            report.run_trend(&panel, &rejections)
        }
        Stage::Scale => {
            let (panel, _) = load_panel(&cfg)?;
            report.run_scale(&panel)
        }
        Stage::Eta => report.run_eta(),
        Stage::Pdf => report.run_pdf(),
        _ => report.run_profitability(),
    };
    result.at(stage)?;
    save(&report)?;
    summary(&report);
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.overrides).at(Stage::Config)?;
    match cli.command {
        Command::Ingest => {
            let (panel, rejections) = load_panel(&cfg)?;
            let mut table = String::from("line\treason\traw\n");
            for r in &rejections.rejected {
                table.push_str(&format!("{}\t{}\t{}\n", r.line, r.reason.code(), r.raw));
            }
            fs::write(cfg.output_dir.join("rejections.tsv"), table).at(Stage::Emit)?;
            let meta: PanelMetadata = panel.metadata(&rejections);
            println!("{}", serde_json::to_string_pretty(&meta).at(Stage::Emit)?);
            Ok(())
        }
        Command::Trend => run_stage(cfg, Stage::Trend),
        Command::Scale => run_stage(cfg, Stage::Scale),
        Command::Eta => run_stage(cfg, Stage::Eta),
        Command::Pdf => run_stage(cfg, Stage::Pdf),
        Command::Profitability => run_stage(cfg, Stage::Profitability),
        Command::Run => {
            let dir = cfg.output_dir.clone();
            let mut report = match run_pipeline(cfg) {
                Ok(r) => r,
                Err(e) => {
                    if let Some(partial) = &e.partial {
                        write_json(&dir.join(PARTIAL_FILE), partial).at(Stage::Emit)?;
                    }
                    return Err(Failure {
                        stage: e.stage,
                        error: e.into(),
                    });
                }
            };
            emit(&mut report, &[])?;
            save(&report)?;
            summary(&report);
            Ok(())
        }
        Command::Report { figures } => {
            let path = cfg.output_dir.join(REPORT_FILE);
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))
                .at(Stage::Emit)?;
            let mut report: AnalysisReport = serde_json::from_str(&text).at(Stage::Emit)?;
            report.config.output_dir = cfg.output_dir.clone();
            emit(&mut report, &figures)?;
            save(&report)
        }
        Command::Simulate(args) => simulate(&cfg, &args).at(Stage::Simulate),
        Command::Bounds { gamma_g } => {
            let b = bound_report(gamma_g).at(Stage::Config)?;
            println!("{}", serde_json::to_string_pretty(&b).at(Stage::Emit)?);
            Ok(())
        }
    }
}

fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> anyhow::Result<()> {
    let spec = GeneratorSpec {
        n_companies: args.companies,
        eta: args.eta,
        noise_law: if args.gaussian {
            NoiseLaw::Gaussian
        } else {
            NoiseLaw::Stable {
                alpha: args.alpha,
                skew: 0.0,
            }
        },
        survivorship: args.survivorship,
        ..GeneratorSpec::reference(cfg.seed)
    };
    let (panel, truth) = generate_panel(&spec)?;
    let dir = &cfg.output_dir;
    panel.write_csv(BufWriter::new(File::create(dir.join("panel.csv"))?))?;
    truth.write_csv(BufWriter::new(File::create(dir.join("truth.csv"))?))?;
    write_json(&dir.join("generator.json"), &spec)?;
    println!("{}", dir.join("panel.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error ({} stage): {:#}", f.stage, f.error);
            ExitCode::from(f.stage.exit_code() as u8)
        }
    }
}
