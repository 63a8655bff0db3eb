//! Choosing a model size along a computed path.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::grouped_model::GroupedDesign;
use crate::stepwise_path::{fit_active, SelectionPath};

const PVALUE_CLIP: f64 = 1.0 - 1e-15;
const NONZERO_RTOL: f64 = 1e-10;

/// `max { j : p_j < α }`, 0 if none.
pub fn rule_last(pvalues: &[f64], alpha: f64) -> usize {
    pvalues.iter().rposition(|&p| p < alpha).map_or(0, |j| j + 1)
}

/// Number of steps before the first `p_j ≥ α`.
pub fn rule_first(pvalues: &[f64], alpha: f64) -> usize {
    pvalues.iter().position(|&p| !(p < alpha)).unwrap_or(pvalues.len())
}

/// `max { k : −(1/k) Σ_{i≤k} log(1 − p_i) ≤ α }`, 0 if none.
pub fn rule_forward_stop(pvalues: &[f64], alpha: f64) -> usize {
    let mut acc = 0.0;
    let mut best = 0;
    for (i, &p) in pvalues.iter().enumerate() {
        acc -= (-p.min(PVALUE_CLIP)).ln_1p();
        if acc / (i + 1) as f64 <= alpha {
            best = i + 1;
        }
    }
    best
}

/// `min(true_k, path_len)`.
pub fn rule_oracle(path_len: usize, true_k: usize) -> usize {
    true_k.min(path_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    Aic,
    Bic,
    Ric,
    Custom(f64),
}

impl Penalty {
    /// λ for a problem with `n` observations and `p` columns.
    pub fn lambda(self, n: usize, p: usize) -> f64 {
        match self {
            Penalty::Aic => 2.0,
            Penalty::Bic => (n as f64).ln(),
            Penalty::Ric => 2.0 * (p as f64).ln(),
            Penalty::Custom(l) => l,
        }
    }
}

/// Scale of the fit term in an information criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IcScale {
    /// `RSS/σ² + λ·df` with known noise variance σ².
    Known(f64),
    /// `n·log(RSS/n) + λ·df`, σ² profiled out.
    Profile,
}

/// Nonzero coefficients of the minimum-norm fit after each of 0..=len steps.
pub fn path_complexity<T: Float>(
    path: &SelectionPath<T>,
    y: &DVector<T>,
    design: &GroupedDesign<T>,
) -> Result<Vec<usize>> {
    let groups = path.groups();
    let mut out = Vec::with_capacity(groups.len() + 1);
    out.push(0);
    for s in 1..=groups.len() {
        let beta = fit_active(y, design, &groups[..s])?;
        let max = beta.amax();
        let cut = max * T::lit(NONZERO_RTOL);
        out.push(beta.iter().filter(|b| b.abs() > cut && **b != T::zero()).count());
    }
    Ok(out)
}

/// Information-criterion values for 0..=len steps.
pub fn ic_values<T: Float>(
    path: &SelectionPath<T>,
    y: &DVector<T>,
    design: &GroupedDesign<T>,
    lambda_pen: f64,
    scale: IcScale,
) -> Result<Vec<f64>> {
    let df = path_complexity(path, y, design)?;
    let n = design.n_rows() as f64;
    let rss = path.rss();
    if let IcScale::Known(s2) = scale {
        if !(s2 > 0.0) {
            return Err(Error::InvalidNoise(format!("σ² must be positive, got {s2}")));
        }
    }
    Ok(rss
        .iter()
        .zip(&df)
        .map(|(&r, &k)| {
            let r = r.to_f64_lossy();
            let fit = match scale {
                IcScale::Known(s2) => r / s2,
                IcScale::Profile => n * (r / n).ln(),
            };
            fit + lambda_pen * k as f64
        })
        .collect())
}

/// `argmin_s` of the information criterion, ties to the smaller `s`.
pub fn rule_ic<T: Float>(
    path: &SelectionPath<T>,
    y: &DVector<T>,
    design: &GroupedDesign<T>,
    lambda_pen: f64,
    scale: IcScale,
) -> Result<usize> {
    let values = ic_values(path, y, design, lambda_pen, scale)?;
    let mut best = 0;
    for (s, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = s;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum Rule {
    Last { alpha: f64 },
    First { alpha: f64 },
    ForwardStop { alpha: f64 },
    Ic { penalty: Penalty, scale: IcScale },
    Oracle { k: usize },
}

impl Rule {
    pub fn name(&self) -> String {
        match self {
            Rule::Last { .. } => "last".into(),
            Rule::First { .. } => "first".into(),
            Rule::ForwardStop { .. } => "forwardstop".into(),
            Rule::Ic { penalty, .. } => match penalty {
                Penalty::Aic => "aic".into(),
                Penalty::Bic => "bic".into(),
                Penalty::Ric => "ric".into(),
                Penalty::Custom(l) => format!("ic({l})"),
            },
            Rule::Oracle { .. } => "oracle".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingDecision {
    pub rule: String,
    pub k: usize,
    pub groups: Vec<usize>,
    /// α for p-value rules, λ for information criteria, k for the oracle.
    pub parameter: f64,
}

/// Applies `rule` to a path whose truncated-χ p-values were computed.
pub fn decide<T: Float>(
    rule: Rule,
    path: &SelectionPath<T>,
    y: &DVector<T>,
    design: &GroupedDesign<T>,
) -> Result<StoppingDecision> {
    let pv = path.pvalues_tchi();
    let needs_p = matches!(rule, Rule::Last { .. } | Rule::First { .. } | Rule::ForwardStop { .. });
    if needs_p && pv.iter().any(|p| p.is_nan()) {
        return Err(Error::InvalidArgument(format!(
            "rule {} needs truncated-χ p-values on the path",
            rule.name()
        )));
    }
    let (k, parameter) = match rule {
        Rule::Last { alpha } => (rule_last(&pv, alpha), alpha),
        Rule::First { alpha } => (rule_first(&pv, alpha), alpha),
        Rule::ForwardStop { alpha } => (rule_forward_stop(&pv, alpha), alpha),
        Rule::Ic { penalty, scale } => {
            let lam = penalty.lambda(design.n_rows(), design.n_cols());
            (rule_ic(path, y, design, lam, scale)?, lam)
        }
        Rule::Oracle { k } => (rule_oracle(path.len(), k), k as f64),
    };
    let groups = path.groups()[..k].to_vec();
    Ok(StoppingDecision { rule: rule.name(), k, groups, parameter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouped_model::NoiseModel;
    use crate::stepwise_path::{forward_stepwise, TestKind};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn last_examples() {
        assert_eq!(rule_last(&[0.01, 0.2, 0.04, 0.6], 0.1), 3);
        assert_eq!(rule_last(&[0.3, 0.2], 0.1), 0);
        assert_eq!(rule_last(&[0.09], 0.1), 1);
    }

    #[test]
    fn first_examples() {
        assert_eq!(rule_first(&[0.01, 0.2, 0.04], 0.1), 1);
        assert_eq!(rule_first(&[0.2, 0.01], 0.1), 0);
        assert_eq!(rule_first(&[0.01, 0.02], 0.1), 2);
    }

    #[test]
    fn forward_stop_examples() {
        assert_eq!(rule_forward_stop(&[0.025; 5], 0.05), 5);
        assert_eq!(rule_forward_stop(&[0.9999999], 0.1), 0);
        assert_eq!(rule_forward_stop(&[1.0, 1.0], 0.1), 0);
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(rule_oracle(20, 10), 10);
        assert_eq!(rule_oracle(20, 30), 20);
        assert_eq!(rule_oracle(20, 0), 0);
    }

    fn scenario(seed: u64, signal: f64) -> (GroupedDesign<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(60, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut y = DVector::from_fn(60, |_, _| rng.sample::<f64, _>(StandardNormal));
        y += x.column(3) * signal;
        let d = GroupedDesign::singletons(x).unwrap().normalize_groups().unwrap();
        (d, y)
    }

    #[test]
    fn ic_examples() {
        let (d, y) = scenario(1, 0.0);
        let path = forward_stepwise(&y, &d, &NoiseModel::default(), 6, TestKind::None).unwrap();
        assert_eq!(rule_ic(&path, &y, &d, 1e6, IcScale::Known(1.0)).unwrap(), 0);
        assert_eq!(rule_ic(&path, &y, &d, 0.0, IcScale::Known(1.0)).unwrap(), 6);
        assert_eq!(rule_ic(&path, &y, &d, 0.0, IcScale::Profile).unwrap(), 6);

        // one column carries the signal, the rest of y is orthogonal to the design
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = DMatrix::from_fn(60, 11, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
        let d = GroupedDesign::singletons(q.columns(0, 10).into_owned()).unwrap();
        let y = q.column(3) * 8.0 + q.column(10) * 3.0;
        let path = forward_stepwise(&y, &d, &NoiseModel::default(), 6, TestKind::None).unwrap();
        for pen in [Penalty::Aic, Penalty::Bic, Penalty::Ric] {
            let lam = pen.lambda(60, 10);
            assert_eq!(rule_ic(&path, &y, &d, lam, IcScale::Known(1.0)).unwrap(), 1);
            assert_eq!(rule_ic(&path, &y, &d, lam, IcScale::Profile).unwrap(), 1);
        }
    }

    #[test]
    fn complexity_counts_coefficients() {
        let (d, y) = scenario(3, 1.0);
        let path = forward_stepwise(&y, &d, &NoiseModel::default(), 4, TestKind::None).unwrap();
        assert_eq!(path_complexity(&path, &y, &d).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn decision_takes_path_prefix() {
        let (d, y) = scenario(4, 8.0);
        let path = forward_stepwise(&y, &d, &NoiseModel::default(), 5, TestKind::Tchi).unwrap();
        let dec = decide(Rule::Oracle { k: 2 }, &path, &y, &d).unwrap();
        assert_eq!(dec.groups, path.groups()[..2].to_vec());
        let dec = decide(Rule::Last { alpha: 0.1 }, &path, &y, &d).unwrap();
        assert!(dec.k >= 1);
        assert_eq!(dec.groups[0], 3);
    }

    fn forward_stop_scan(p: &[f64], alpha: f64) -> usize {
        (1..=p.len())
            .filter(|&k| {
                let s: f64 = p[..k].iter().map(|&q| -(1.0 - q.min(PVALUE_CLIP)).ln()).sum();
                s / k as f64 <= alpha
            })
            .max()
            .unwrap_or(0)
    }

    proptest! {
        #[test]
        fn first_never_exceeds_last(p in proptest::collection::vec(0.0f64..1.0, 0..30), alpha in 0.01f64..0.5) {
            prop_assert!(rule_first(&p, alpha) <= rule_last(&p, alpha));
        }

        #[test]
        fn last_monotone_in_alpha(p in proptest::collection::vec(0.0f64..1.0, 0..30), a1 in 0.0f64..1.0, a2 in 0.0f64..1.0) {
            let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(rule_last(&p, lo) <= rule_last(&p, hi));
        }

        #[test]
        fn forward_stop_matches_scan(p in proptest::collection::vec(0.0f64..1.0, 0..30), alpha in 0.01f64..0.5) {
            prop_assert_eq!(rule_forward_stop(&p, alpha), forward_stop_scan(&p, alpha));
        }
    }
}
