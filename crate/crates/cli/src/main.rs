use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stepsel::harness::{self, ExpandMode, FitOptions, IcMode, RuleName, RunReport};
use stepsel::ingest::{self, Dataset};
use stepsel::simgen::ScenarioConfig;

#[derive(Parser)]
#[command(name = "stepsel", version, about = "Grouped forward stepwise selection with truncated-χ p-values")]
struct Cli {
    /// Worker threads (0 uses every core).
    #[arg(long, global = true, env = "STEPSEL_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a path on a CSV dataset and report p-values and stopping rules.
    Fit(FitArgs),
    /// Fit, adding Monte Carlo max-χ p-values and timings of both tests.
    Oracle(FitArgs),
    /// Run the replications of a scenario config.
    Simulate(SimArgs),
    /// Write a spline or interaction expansion of a dataset.
    Expand(ExpandArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Last,
    First,
    Forwardstop,
    Aic,
    Bic,
    Ric,
    Oracle,
}

impl From<RuleArg> for RuleName {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Last => RuleName::Last,
            RuleArg::First => RuleName::First,
            RuleArg::Forwardstop => RuleName::ForwardStop,
            RuleArg::Aic => RuleName::Aic,
            RuleArg::Bic => RuleName::Bic,
            RuleArg::Ric => RuleName::Ric,
            RuleArg::Oracle => RuleName::Oracle,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum IcArg {
    Profile,
    Known,
}

impl From<IcArg> for IcMode {
    fn from(m: IcArg) -> Self {
        match m {
            IcArg::Profile => IcMode::Profile,
            IcArg::Known => IcMode::Known,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Spline,
    Interactions,
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with a header row.
    data: PathBuf,
    /// Group file: `name col1,col2 [weight]` per line; `categorical:col` for indicator encoding.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "last")]
    rule: RuleArg,
    /// Noise level; estimated from the saturated fit when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo samples for max-χ p-values.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, value_enum, default_value = "profile")]
    ic: IcArg,
    /// Comma-separated names of the groups that carry signal.
    #[arg(long, value_delimiter = ',')]
    truth: Option<Vec<String>>,
    /// Write the report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// With csv output, also write the per-rule selections here.
    #[arg(long)]
    selections: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario file (TOML).
    config: PathBuf,
    /// Directory for steps.csv, selections.csv and summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, value_enum, default_value = "profile")]
    ic: IcArg,
}

#[derive(Args)]
struct ExpandArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, default_value_t = stepsel::expansions::DEFAULT_DF)]
    df: usize,
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Response column carried over unchanged when present.
    #[arg(long, default_value = "y")]
    response: String,
    /// Put both main effects inside every interaction group.
    #[arg(long)]
    with_main_effects: bool,
}

fn load(data: &Path, groups: Option<&Path>, response: Option<&str>) -> Result<Dataset> {
    let table = ingest::read_table_file(data)?;
    let specs = match groups {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(ingest::parse_group_file(&text).with_context(|| format!("in {}", p.display()))?)
        }
        None => None,
    };
    let response = response.filter(|r| table.column_index(r).is_some());
    ingest::load_dataset(&table, specs.as_deref(), response).with_context(|| format!("in {}", data.display()))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn fit(args: &FitArgs, oracle: bool) -> Result<()> {
    let data = load(&args.data, args.groups.as_deref(), Some(&args.response))?;
    if data.y.is_none() {
        bail!(stepsel::Error::InvalidArgument(format!("response column {:?} not found", args.response)));
    }
    let samples = match (args.samples, oracle) {
        (Some(m), _) if m < 100 => {
            bail!(stepsel::Error::InvalidArgument(format!("--samples {m} is below 100")))
        }
        (None, true) => Some(200),
        (s, _) => s,
    };
    let opts = FitOptions {
        steps: args.steps,
        alpha: args.alpha,
        rule: args.rule.into(),
        sigma: args.sigma,
        seed: args.seed,
        samples,
        ic: args.ic.into(),
        truth: args.truth.clone(),
    };
    let report = harness::cmd_fit(&data, &opts)?;
    let mut out = sink(args.output.as_deref())?;
    match args.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
        }
        Format::Csv => {
            harness::write_csv(&report.steps, &mut out)?;
            if let Some(p) = &args.selections {
                harness::write_csv(&report.selections, sink(Some(p))?)?;
            }
        }
    }
    out.flush()?;
    summarize_fit(&report, oracle);
    Ok(())
}

fn summarize_fit(report: &RunReport, oracle: bool) {
    let mut err = io::stderr().lock();
    for s in &report.selections {
        let mark = if s.rule == report.primary_rule.as_str() { "*" } else { " " };
        let _ = writeln!(err, "{mark} {:<12} k = {:<3} {}", s.rule, s.k, s.groups);
    }
    if report.sigma_estimated {
        let _ = writeln!(err, "  σ estimated from the saturated fit: {}", report.sigma);
    }
    if oracle {
        let t = &report.timings;
        let _ = write!(err, "  stepwise + Tχ: {:.4} s", t.path_tchi_seconds);
        if let Some(m) = t.maxchi_seconds {
            let ratio = m / t.path_tchi_seconds.max(f64::MIN_POSITIVE);
            let _ = write!(err, ", max-χ: {m:.4} s ({ratio:.1}x)");
        }
        let _ = writeln!(err, " [{}]", t.note);
    }
}

fn simulate(args: &SimArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg: ScenarioConfig = ScenarioConfig::from_toml(&text)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    let out = harness::cmd_simulate(&cfg, args.ic.into())?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        harness::write_csv(&out.steps, sink(Some(&dir.join("steps.csv")))?)?;
        harness::write_csv(&out.selections, sink(Some(&dir.join("selections.csv")))?)?;
        harness::write_csv(&out.summary, sink(Some(&dir.join("summary.csv")))?)?;
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
    }
    let mut w = io::stdout().lock();
    match args.format {
        Format::Csv => harness::write_csv(&out.summary, &mut w)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, &out.summary)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn expand(args: &ExpandArgs) -> Result<()> {
    let data = load(&args.input, args.groups.as_deref(), Some(&args.response))?;
    let response = data.y.as_ref().map(|_| args.response.as_str());
    let mode = match args.mode {
        ModeArg::Spline => ExpandMode::Spline,
        ModeArg::Interactions => ExpandMode::Interactions,
    };
    let out = harness::cmd_expand(&data, response, mode, args.df, args.with_main_effects)?;
    let mut w = sink(Some(&args.output))?;
    out.write_csv(&mut w)?;
    w.flush()?;
    let base = args.output.display().to_string();
    let prov = PathBuf::from(format!("{base}.provenance.json"));
    fs::write(&prov, serde_json::to_string_pretty(&out.provenance)? + "\n")
        .with_context(|| format!("writing {}", prov.display()))?;
    let groups = PathBuf::from(format!("{base}.groups"));
    fs::write(&groups, ingest::format_group_file(&out.groups))
        .with_context(|| format!("writing {}", groups.display()))?;
    eprintln!(
        "{} groups, {} columns; provenance in {}, groups in {}",
        out.groups.len(),
        out.expanded.raw.n_cols(),
        prov.display(),
        groups.display()
    );
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<stepsel::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let run = || match &cli.command {
        Command::Fit(a) => fit(a, false),
        Command::Oracle(a) => fit(a, true),
        Command::Simulate(a) => simulate(a),
        Command::Expand(a) => expand(a),
    };
    let result = match harness::with_threads(cli.threads, run) {
        Ok(r) => r,
        Err(e) => Err(e.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
