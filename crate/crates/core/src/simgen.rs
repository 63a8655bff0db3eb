//! Random designs, sparse signals and selection diagnostics for simulations.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouped_model::{encode_categorical, GroupedDesign, NoiseModel};
use crate::rng::{self, role};

pub const MAX_RESAMPLE: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignFamily {
    GaussianIid,
    GaussianEquicorr {
        rho: f64,
    },
    /// Each group one categorical variable with a level count drawn
    /// uniformly from `min_levels..=max_levels`.
    Categorical {
        min_levels: usize,
        max_levels: usize,
        #[serde(default = "default_concentration")]
        concentration: f64,
        #[serde(default = "default_min_count")]
        min_count: usize,
    },
}

fn default_concentration() -> f64 {
    1.0
}

fn default_min_count() -> usize {
    5
}

fn default_group_size() -> usize {
    1
}

fn default_sigma() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.1
}

/// One simulation scenario; read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    /// Number of groups G.
    pub groups: usize,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    /// Overrides `group_size` for Gaussian families.
    #[serde(default)]
    pub group_sizes: Option<Vec<usize>>,
    pub design: DesignFamily,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub noise_rho: f64,
    pub k: usize,
    pub coef_lo: f64,
    pub coef_hi: f64,
    pub reps: usize,
    pub seed: u64,
    pub steps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 || self.groups == 0 {
            return bad("n and groups must be positive".into());
        }
        if self.k > self.groups {
            return bad(format!("k = {} exceeds the number of groups {}", self.k, self.groups));
        }
        if !(self.coef_lo <= self.coef_hi) || self.coef_lo < 0.0 {
            return bad(format!("coefficient range [{}, {}] is invalid", self.coef_lo, self.coef_hi));
        }
        if !(0.0..1.0).contains(&self.noise_rho) {
            return bad(format!("noise_rho = {} outside [0, 1)", self.noise_rho));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma = {} must be positive", self.sigma));
        }
        if self.reps == 0 {
            return bad("reps must be positive".into());
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if let Some(sizes) = &self.group_sizes {
            if sizes.len() != self.groups || sizes.contains(&0) {
                return bad("group_sizes must list one positive size per group".into());
            }
        } else if self.group_size == 0 {
            return bad("group_size must be positive".into());
        }
        match self.design {
            DesignFamily::GaussianIid => {}
            DesignFamily::GaussianEquicorr { rho } => {
                if !(0.0..1.0).contains(&rho) {
                    return bad(format!("rho = {rho} outside [0, 1)"));
                }
            }
            DesignFamily::Categorical { min_levels, max_levels, concentration, min_count } => {
                if min_levels == 0 || min_levels > max_levels {
                    return bad("categorical level range is invalid".into());
                }
                if !(concentration > 0.0) {
                    return bad("Dirichlet concentration must be positive".into());
                }
                if min_count * max_levels > self.n {
                    return bad(format!(
                        "n = {} cannot give {max_levels} levels {min_count} observations each",
                        self.n
                    ));
                }
            }
        }
        Ok(())
    }

    /// Signal scale γ = sqrt(2 log G / n).
    pub fn gamma(&self) -> f64 {
        (2.0 * (self.groups as f64).ln() / self.n as f64).sqrt()
    }

    pub fn noise(&self) -> Result<NoiseModel<f64>> {
        NoiseModel::equicorrelated(self.n, self.sigma, self.noise_rho)
    }

    fn sizes(&self) -> Vec<usize> {
        self.group_sizes.clone().unwrap_or_else(|| vec![self.group_size; self.groups])
    }
}

fn gaussian_columns<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    if rho > 0.0 {
        let shared = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
        for mut col in x.column_iter_mut() {
            col *= b;
            col.axpy(a, &shared, 1.0);
        }
    }
    x
}

/// Levels in `1..=levels` with Dirichlet probabilities, resampled until
/// every level occurs at least `min_count` times.
pub fn sample_levels<R: Rng + ?Sized>(
    n: usize,
    levels: usize,
    concentration: f64,
    min_count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if levels == 1 {
        return Ok(vec![1; n]);
    }
    // Dirichlet draw as normalized Gamma variates
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::InvalidConfig(format!("Dirichlet prior: {e}")))?;
    for _ in 0..MAX_RESAMPLE {
        let probs: Vec<f64> = (0..levels).map(|_| gamma.sample(rng)).collect();
        let cdf: Vec<f64> = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        let draw: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * cdf[levels - 1];
                cdf.iter().position(|&c| u < c).unwrap_or(levels - 1) + 1
            })
            .collect();
        let mut counts = vec![0usize; levels];
        for &l in &draw {
            counts[l - 1] += 1;
        }
        if counts.iter().all(|&c| c >= min_count) {
            return Ok(draw);
        }
    }
    Err(Error::ResamplingExhausted { attempts: MAX_RESAMPLE })
}

/// Design of the declared family, Frobenius-normalized per group; the
/// normalization scales stay on the design.
pub fn gen_design<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<GroupedDesign<f64>> {
    let n = cfg.n;
    let blocks: Vec<(String, DMatrix<f64>)> = match cfg.design {
        DesignFamily::GaussianIid | DesignFamily::GaussianEquicorr { .. } => {
            let rho = match cfg.design {
                DesignFamily::GaussianEquicorr { rho } => rho,
                _ => 0.0,
            };
            let sizes = cfg.sizes();
            let x = gaussian_columns(n, sizes.iter().sum(), rho, rng);
            let mut start = 0;
            sizes
                .iter()
                .enumerate()
                .map(|(g, &k)| {
                    let block = x.columns(start, k).into_owned();
                    start += k;
                    (format!("X{}", g + 1), block)
                })
                .collect()
        }
        DesignFamily::Categorical { min_levels, max_levels, concentration, min_count } => (0..cfg.groups)
            .map(|g| {
                let levels = rng.random_range(min_levels..=max_levels);
                let draw = sample_levels(n, levels, concentration, min_count, rng)?;
                Ok((format!("X{}", g + 1), encode_categorical(&draw, levels)?))
            })
            .collect::<Result<_>>()?,
    };
    GroupedDesign::from_blocks(blocks)?.normalize_groups()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    /// Coefficients on the unnormalized columns.
    pub beta: DVector<f64>,
    /// Nonzero groups, ascending.
    pub support: Vec<usize>,
    pub y: DVector<f64>,
}

/// Mean `Σ_g X_g^raw β_g` with `X_g^raw` the design before normalization.
pub fn raw_mean(design: &GroupedDesign<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let mut mu = DVector::zeros(design.n_rows());
    for g in 0..design.n_groups() {
        let r = design.range(g);
        let bg = beta.rows(r.start, r.len());
        if bg.iter().any(|&b| b != 0.0) {
            mu += design.raw_group(g) * bg;
        }
    }
    mu
}

/// `k` groups chosen uniformly; each gets norm `U[lo·γ, hi·γ]` spread in
/// equal magnitudes with random signs.
pub fn gen_signal<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    design: &GroupedDesign<f64>,
    noise: &NoiseModel<f64>,
    rng: &mut R,
) -> Result<Signal> {
    let g_count = design.n_groups();
    if cfg.k > g_count {
        return Err(Error::InvalidConfig(format!("k = {} exceeds {g_count} groups", cfg.k)));
    }
    let gamma = cfg.gamma();
    let mut support: Vec<usize> = index::sample(rng, g_count, cfg.k).into_vec();
    support.sort_unstable();
    let mut beta = DVector::zeros(design.n_cols());
    for &g in &support {
        let norm = if cfg.coef_hi > cfg.coef_lo {
            rng.random_range(cfg.coef_lo..=cfg.coef_hi) * gamma
        } else {
            cfg.coef_lo * gamma
        };
        let r = design.range(g);
        let mag = norm / (r.len() as f64).sqrt();
        for j in r {
            beta[j] = if rng.random_bool(0.5) { mag } else { -mag };
        }
    }
    let y = raw_mean(design, &beta) + noise.sample(design.n_rows(), rng);
    Ok(Signal { beta, support, y })
}

/// Design and signal of replication `rep`, each from its own stream.
pub fn gen_replication(
    cfg: &ScenarioConfig,
    noise: &NoiseModel<f64>,
    rep: u64,
) -> Result<(GroupedDesign<f64>, Signal)> {
    let design = gen_design(cfg, &mut rng::stream(cfg.seed, rep, role::DESIGN))?;
    let signal = gen_signal(cfg, &design, noise, &mut rng::stream(cfg.seed, rep, role::SIGNAL))?;
    Ok((design, signal))
}

/// Two-signal instance with ten categorical predictors of 2–4 levels,
/// `n = 40`: the first group has three levels with effects (1, 0.5, −1),
/// the ninth two levels with effects (0.5, −0.5).
pub fn categorical_example<R: Rng + ?Sized>(rng: &mut R) -> Result<(GroupedDesign<f64>, Signal)> {
    let n = 40;
    let mut levels: Vec<usize> = (0..10).map(|_| rng.random_range(2..=4)).collect();
    levels[0] = 3;
    levels[8] = 2;
    let blocks = levels
        .iter()
        .enumerate()
        .map(|(g, &l)| {
            let draw = sample_levels(n, l, 1.0, 5, rng)?;
            Ok((format!("X{}", g + 1), encode_categorical(&draw, l)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let design = GroupedDesign::from_blocks(blocks)?.normalize_groups()?;
    let mut beta = DVector::zeros(design.n_cols());
    for (j, v) in design.range(0).zip([1.0, 0.5, -1.0]) {
        beta[j] = v;
    }
    for (j, v) in design.range(8).zip([0.5, -0.5]) {
        beta[j] = v;
    }
    let y = raw_mean(&design, &beta) + NoiseModel::default().sample(n, rng);
    Ok((design, Signal { beta, support: vec![0, 8], y }))
}

/// Largest absolute inner product between distinct unit-normalized columns.
pub fn coherence(x: &DMatrix<f64>) -> Result<f64> {
    if x.ncols() < 2 {
        return Err(Error::InvalidDesign("coherence needs at least two columns".into()));
    }
    let mut u = x.clone();
    for (j, mut col) in u.column_iter_mut().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::InvalidDesign(format!("column {j} is zero")));
        }
        col /= norm;
    }
    let gram = u.tr_mul(&u);
    let mut mu: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..i {
            mu = mu.max(gram[(i, j)].abs());
        }
    }
    Ok(mu.min(1.0))
}

/// Fraction of the true groups found in the first `k` steps.
pub fn k_tpp(path_groups: &[usize], support: &[usize], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    tpp(&path_groups[..k.min(path_groups.len())], support, k)
}

/// False discovery proportion of a selected set (0 for the empty set).
pub fn fdp(selected: &[usize], support: &[usize]) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    let truth: HashSet<usize> = support.iter().copied().collect();
    let false_sel = selected.iter().filter(|g| !truth.contains(g)).count();
    false_sel as f64 / selected.len() as f64
}

/// True groups selected over `k` (1 when `k = 0`).
pub fn tpp(selected: &[usize], support: &[usize], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let sel: HashSet<usize> = selected.iter().copied().collect();
    let found = support.iter().filter(|g| sel.contains(g)).count();
    found as f64 / k as f64
}
