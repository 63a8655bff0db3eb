//! Batch front end: fitting a path on data, simulation sweeps, expansions.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expansions::{glinternet_expand, spline_expand, ExpandedDesign, InteractionOptions, Provenance};
use crate::grouped_model::{GroupedDesign, NoiseModel};
use crate::ingest::{ColumnRef, Dataset, GroupSpec};
use crate::linalg;
use crate::mc_oracle::max_chi_pvalue;
use crate::simgen::{self, ScenarioConfig};
use crate::stepwise_path::{forward_stepwise, orthogonalize_step, tchi_step_limit, SelectionPath, StopReason, TestKind};
use crate::stopping_rules::{decide, IcScale, Penalty, Rule};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stopping rule as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleName {
    Last,
    First,
    ForwardStop,
    Aic,
    Bic,
    Ric,
    Oracle,
}

impl RuleName {
    pub const ALL: [RuleName; 7] = [
        RuleName::Last,
        RuleName::First,
        RuleName::ForwardStop,
        RuleName::Aic,
        RuleName::Bic,
        RuleName::Ric,
        RuleName::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleName::Last => "last",
            RuleName::First => "first",
            RuleName::ForwardStop => "forwardstop",
            RuleName::Aic => "aic",
            RuleName::Bic => "bic",
            RuleName::Ric => "ric",
            RuleName::Oracle => "oracle",
        }
    }

    /// `None` for the oracle without a known model size.
    pub fn to_rule(self, alpha: f64, scale: IcScale, true_k: Option<usize>) -> Option<Rule> {
        Some(match self {
            RuleName::Last => Rule::Last { alpha },
            RuleName::First => Rule::First { alpha },
            RuleName::ForwardStop => Rule::ForwardStop { alpha },
            RuleName::Aic => Rule::Ic { penalty: Penalty::Aic, scale },
            RuleName::Bic => Rule::Ic { penalty: Penalty::Bic, scale },
            RuleName::Ric => Rule::Ic { penalty: Penalty::Ric, scale },
            RuleName::Oracle => Rule::Oracle { k: true_k? },
        })
    }
}

impl FromStr for RuleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleName::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown rule {s:?}")))
    }
}

/// Fit scale of the information criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IcMode {
    /// `n·log(RSS/n)`.
    #[default]
    Profile,
    /// `RSS/σ²` with the noise level in use.
    Known,
}

impl IcMode {
    fn scale(self, sigma: f64) -> IcScale {
        match self {
            IcMode::Profile => IcScale::Profile,
            IcMode::Known => IcScale::Known(sigma * sigma),
        }
    }
}

/// Runs `f` on a pool of `threads` workers (the global pool for 0).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build a pool of {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOptions {
    /// Defaults to `min(n, G) − 1`.
    pub steps: Option<usize>,
    pub alpha: f64,
    pub rule: RuleName,
    /// Estimated from the saturated fit when absent.
    pub sigma: Option<f64>,
    pub seed: u64,
    /// Monte Carlo sample count for max-χ p-values; none when absent.
    pub samples: Option<usize>,
    pub ic: IcMode,
    /// Names of the groups known to carry signal.
    pub truth: Option<Vec<String>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            steps: None,
            alpha: 0.1,
            rule: RuleName::Last,
            sigma: None,
            seed: 0,
            samples: None,
            ic: IcMode::Profile,
            truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub step: usize,
    pub group: String,
    pub size: usize,
    pub rank: usize,
    pub lambda: f64,
    pub residual_norm: f64,
    pub p_tchi: Option<f64>,
    pub p_chisq: Option<f64>,
    pub p_maxchi: Option<f64>,
    pub maxchi_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub rule: String,
    pub parameter: f64,
    pub k: usize,
    pub groups: String,
    pub fdp: Option<f64>,
    pub tpp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub path_tchi_seconds: f64,
    pub maxchi_seconds: Option<f64>,
    pub note: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub seed: u64,
    pub config: FitOptions,
    pub n: usize,
    pub groups: usize,
    pub columns: usize,
    pub dropped_rows: usize,
    pub sigma: f64,
    pub sigma_estimated: bool,
    pub stop: StopReason,
    pub primary_rule: RuleName,
    pub steps: Vec<StepRow>,
    pub selections: Vec<SelectionRow>,
    pub timings: Timings,
}

impl RunReport {
    pub fn primary(&self) -> Option<&SelectionRow> {
        self.selections.iter().find(|s| s.rule == self.primary_rule.as_str())
    }
}

/// σ from the residual of the least-squares fit on every column.
pub fn saturated_sigma(design: &GroupedDesign<f64>, y: &DVector<f64>) -> Result<f64> {
    let x = design.columns();
    let rank = linalg::rank(x)?;
    let n = design.n_rows();
    if n <= rank {
        return Err(Error::InvalidNoise(format!(
            "cannot estimate σ: n = {n} does not exceed the design rank {rank}; pass σ explicitly"
        )));
    }
    let beta = linalg::lstsq(x, y)?;
    let rss = (y - x * beta).norm_squared();
    let sigma = (rss / (n - rank) as f64).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::InvalidNoise("saturated fit leaves no residual; pass σ explicitly".into()));
    }
    Ok(sigma)
}

/// Max-χ p-values along a computed path, replaying the orthogonalization.
pub fn path_maxchi(
    path: &SelectionPath<f64>,
    design: &GroupedDesign<f64>,
    noise: &NoiseModel<f64>,
    samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let mut work = design.clone();
    let mut inactive: Vec<usize> = (0..design.n_groups()).collect();
    let mut out = Vec::with_capacity(path.len());
    for (s, rec) in path.steps.iter().enumerate() {
        let r = &path.responses[s];
        let est = max_chi_pvalue(r, &work, noise, &inactive, rec.group, samples, seed, s as u64)?;
        out.push((est.pvalue, est.std_error));
        inactive.retain(|&h| h != rec.group);
        work = orthogonalize_step(&work, r, rec.group)?.0;
    }
    Ok(out)
}

fn selection_row(
    rule: Rule,
    path: &SelectionPath<f64>,
    y: &DVector<f64>,
    design: &GroupedDesign<f64>,
    truth: Option<(&[usize], usize)>,
) -> Result<SelectionRow> {
    let d = decide(rule, path, y, design)?;
    let names: Vec<&str> = d.groups.iter().map(|&g| design.name(g)).collect();
    Ok(SelectionRow {
        rule: d.rule,
        parameter: d.parameter,
        k: d.k,
        groups: names.join(" "),
        fdp: truth.map(|(s, _)| simgen::fdp(&d.groups, s)),
        tpp: truth.map(|(s, k)| simgen::tpp(&d.groups, s, k)),
    })
}

/// Forward stepwise with p-values and every stopping rule on a loaded dataset.
pub fn cmd_fit(data: &Dataset, opts: &FitOptions) -> Result<RunReport> {
    let y = data
        .y
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("the dataset has no response column".into()))?;
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {} outside (0, 1)", opts.alpha)));
    }
    let design = data.design.clone().normalize_groups()?;
    let n = design.n_rows();
    let g_count = design.n_groups();
    let steps = opts.steps.unwrap_or_else(|| tchi_step_limit(n, g_count));
    if steps == 0 {
        return Err(Error::InvalidArgument(format!("no steps possible with n = {n}, G = {g_count}")));
    }
    let (sigma, estimated) = match opts.sigma {
        Some(s) if s > 0.0 && s.is_finite() => (s, false),
        Some(s) => return Err(Error::InvalidArgument(format!("sigma = {s} must be positive"))),
        None => (saturated_sigma(&design, y)?, true),
    };
    let truth: Option<Vec<usize>> = match &opts.truth {
        None => None,
        Some(names) => Some(
            names
                .iter()
                .map(|t| {
                    design
                        .names()
                        .iter()
                        .position(|g| g == t)
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown truth group {t:?}")))
                })
                .collect::<Result<_>>()?,
        ),
    };
    if opts.rule == RuleName::Oracle && truth.is_none() {
        return Err(Error::InvalidArgument("the oracle rule needs the true groups".into()));
    }
    let noise = NoiseModel::scalar(sigma)?;

    let t0 = Instant::now();
    let path = forward_stepwise(y, &design, &noise, steps, TestKind::Both)?;
    let path_tchi_seconds = t0.elapsed().as_secs_f64();

    let (maxchi, maxchi_seconds) = match opts.samples {
        Some(m) => {
            let t1 = Instant::now();
            let v = path_maxchi(&path, &design, &noise, m, opts.seed)?;
            (Some(v), Some(t1.elapsed().as_secs_f64()))
        }
        None => (None, None),
    };

    let steps_rows = path
        .steps
        .iter()
        .enumerate()
        .map(|(s, rec)| StepRow {
            step: rec.step,
            group: design.name(rec.group).to_string(),
            size: design.group_size(rec.group),
            rank: rec.rank,
            lambda: rec.lambda,
            residual_norm: rec.residual_norm,
            p_tchi: rec.pvalue_tchi,
            p_chisq: rec.pvalue_chisq,
            p_maxchi: maxchi.as_ref().map(|v| v[s].0),
            maxchi_se: maxchi.as_ref().map(|v| v[s].1),
        })
        .collect();

    let truth_ref = truth.as_ref().map(|t| (t.as_slice(), t.len()));
    let scale = opts.ic.scale(sigma);
    let selections = RuleName::ALL
        .into_iter()
        .filter_map(|r| r.to_rule(opts.alpha, scale, truth.as_ref().map(Vec::len)))
        .map(|rule| selection_row(rule, &path, y, &design, truth_ref))
        .collect::<Result<Vec<_>>>()?;

    Ok(RunReport {
        version: VERSION,
        seed: opts.seed,
        config: opts.clone(),
        n,
        groups: g_count,
        columns: design.n_cols(),
        dropped_rows: data.dropped,
        sigma,
        sigma_estimated: estimated,
        stop: path.stop,
        primary_rule: opts.rule,
        steps: steps_rows,
        selections,
        timings: Timings {
            path_tchi_seconds,
            maxchi_seconds,
            note: "wall-clock, machine-dependent",
        },
    })
}

/// One row per replication per step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStepRow {
    pub rep: usize,
    pub step: usize,
    pub group: usize,
    pub signal: bool,
    pub lambda: f64,
    pub p_tchi: Option<f64>,
    pub p_chisq: Option<f64>,
}

/// One row per replication per rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSelectionRow {
    pub rep: usize,
    pub rule: String,
    pub k: usize,
    pub fdp: f64,
    pub tpp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub rule: String,
    pub reps: usize,
    pub r_mean: f64,
    pub r_sd: f64,
    pub fdp_mean: f64,
    pub fdp_sd: f64,
    pub tpp_mean: f64,
    pub tpp_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub steps: Vec<SimStepRow>,
    pub selections: Vec<SimSelectionRow>,
    pub summary: Vec<SummaryRow>,
}

impl SimulationOutput {
    pub fn summary_for(&self, rule: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.rule == rule)
    }
}

/// Mean and sample standard deviation, summed in the given order.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn replication(
    cfg: &ScenarioConfig,
    noise: &NoiseModel<f64>,
    rules: &[Rule],
    rep: usize,
) -> Result<(Vec<SimStepRow>, Vec<SimSelectionRow>)> {
    let (design, signal) = simgen::gen_replication(cfg, noise, rep as u64)?;
    let test = if noise.sigma().is_some() { TestKind::Both } else { TestKind::Tchi };
    let path = forward_stepwise(&signal.y, &design, noise, cfg.steps, test)?;
    let steps = path
        .steps
        .iter()
        .map(|s| SimStepRow {
            rep,
            step: s.step,
            group: s.group + 1,
            signal: signal.support.binary_search(&s.group).is_ok(),
            lambda: s.lambda,
            p_tchi: s.pvalue_tchi,
            p_chisq: s.pvalue_chisq,
        })
        .collect();
    let selections = rules
        .iter()
        .map(|&rule| {
            let d = decide(rule, &path, &signal.y, &design)?;
            Ok(SimSelectionRow {
                rep,
                rule: d.rule,
                k: d.k,
                fdp: simgen::fdp(&d.groups, &signal.support),
                tpp: simgen::tpp(&d.groups, &signal.support, cfg.k),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((steps, selections))
}

/// Replications of a scenario in parallel, with the selection summary per
/// rule. The output does not depend on the number of worker threads.
pub fn cmd_simulate(cfg: &ScenarioConfig, ic: IcMode) -> Result<SimulationOutput> {
    cfg.validate()?;
    let limit = tchi_step_limit(cfg.n, cfg.groups);
    if cfg.steps > limit {
        return Err(Error::InvalidConfig(format!(
            "steps = {} exceeds min(n, G) − 1 = {limit}",
            cfg.steps
        )));
    }
    let noise = cfg.noise()?;
    let scale = ic.scale(cfg.sigma);
    let rules: Vec<Rule> = RuleName::ALL
        .into_iter()
        .map(|r| r.to_rule(cfg.alpha, scale, Some(cfg.k)).expect("oracle size is known"))
        .collect();
    let per_rep: Vec<(Vec<SimStepRow>, Vec<SimSelectionRow>)> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| replication(cfg, &noise, &rules, rep))
        .collect::<Result<_>>()?;
    let mut steps = Vec::new();
    let mut selections = Vec::new();
    for (s, sel) in per_rep {
        steps.extend(s);
        selections.extend(sel);
    }
    let summary = summarize(&selections);
    Ok(SimulationOutput { steps, selections, summary })
}

/// Per-rule means and standard deviations, rules in order of appearance.
pub fn summarize(selections: &[SimSelectionRow]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for s in selections {
        if !order.contains(&s.rule.as_str()) {
            order.push(&s.rule);
        }
    }
    order
        .into_iter()
        .map(|rule| {
            let rows: Vec<&SimSelectionRow> = selections.iter().filter(|s| s.rule == rule).collect();
            let r: Vec<f64> = rows.iter().map(|s| s.k as f64).collect();
            let f: Vec<f64> = rows.iter().map(|s| s.fdp).collect();
            let t: Vec<f64> = rows.iter().map(|s| s.tpp).collect();
            let (r_mean, r_sd) = mean_sd(&r);
            let (fdp_mean, fdp_sd) = mean_sd(&f);
            let (tpp_mean, tpp_sd) = mean_sd(&t);
            SummaryRow { rule: rule.to_string(), reps: rows.len(), r_mean, r_sd, fdp_mean, fdp_sd, tpp_mean, tpp_sd }
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpandMode {
    Spline,
    Interactions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupProvenance {
    pub name: String,
    pub origin: Provenance,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpandProvenance {
    pub version: &'static str,
    pub mode: ExpandMode,
    pub df: Option<usize>,
    pub with_main_effects: bool,
    pub source_groups: Vec<String>,
    pub groups: Vec<GroupProvenance>,
}

#[derive(Debug, Clone)]
pub struct ExpandOutput {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub provenance: ExpandProvenance,
    pub groups: Vec<GroupSpec>,
    pub expanded: ExpandedDesign<f64>,
}

impl ExpandOutput {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let cols: Vec<&[f64]> = self.columns.iter().map(Vec::as_slice).collect();
        crate::ingest::write_numeric_csv(writer, &self.header, &cols)
    }
}

/// Expanded columns on their raw scale (response first when present), a
/// provenance record and a group file for the expanded table.
pub fn cmd_expand(
    data: &Dataset,
    response: Option<&str>,
    mode: ExpandMode,
    df: usize,
    with_main_effects: bool,
) -> Result<ExpandOutput> {
    let expanded = match mode {
        ExpandMode::Spline => spline_expand(&data.design, df)?,
        ExpandMode::Interactions => glinternet_expand(
            &data.design,
            InteractionOptions { with_main_effects, ..InteractionOptions::default() },
        )?,
    };
    let raw = &expanded.raw;
    let mut header = Vec::with_capacity(raw.n_cols() + 1);
    let mut columns = Vec::with_capacity(raw.n_cols() + 1);
    if let (Some(name), Some(y)) = (response, &data.y) {
        header.push(name.to_string());
        columns.push(y.as_slice().to_vec());
    }
    let mut names_seen = std::collections::HashSet::new();
    for name in raw.column_names() {
        if !names_seen.insert(name.clone()) || Some(name.as_str()) == response {
            return Err(Error::InvalidDesign(format!("expanded column name {name:?} is not unique")));
        }
    }
    header.extend(raw.column_names().iter().cloned());
    columns.extend(raw.columns().column_iter().map(|c| c.iter().copied().collect::<Vec<f64>>()));

    let mut groups = Vec::with_capacity(raw.n_groups());
    let mut prov = Vec::with_capacity(raw.n_groups());
    for g in 0..raw.n_groups() {
        let cols: Vec<String> = raw.range(g).map(|j| raw.column_names()[j].clone()).collect();
        let weight = match expanded.provenance[g] {
            Provenance::Main { group } | Provenance::Spline { group } => data.design.weight(group),
            Provenance::Interaction { .. } => 1.0,
        };
        groups.push(GroupSpec {
            name: raw.name(g).to_string(),
            columns: cols.iter().map(|c| ColumnRef { name: c.clone(), categorical: false }).collect(),
            weight,
        });
        prov.push(GroupProvenance { name: raw.name(g).to_string(), origin: expanded.provenance[g], columns: cols });
    }
    let provenance = ExpandProvenance {
        version: VERSION,
        mode,
        df: (mode == ExpandMode::Spline).then_some(df),
        with_main_effects: mode == ExpandMode::Interactions && with_main_effects,
        source_groups: data.design.names().to_vec(),
        groups: prov,
    };
    Ok(ExpandOutput { header, columns, provenance, groups, expanded })
}
