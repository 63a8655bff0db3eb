//! Design expansions: per-covariate spline bases and pairwise interactions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::grouped_model::GroupedDesign;
use crate::linalg;

pub const DEFAULT_DF: usize = 4;
pub const DEFAULT_COLUMN_BUDGET: usize = 200_000;

/// Origin of a group in an expanded design (0-based original indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Main { group: usize },
    Spline { group: usize },
    Interaction { first: usize, second: usize },
}

#[derive(Debug, Clone)]
pub struct ExpandedDesign<T: Float> {
    /// Columns as constructed, before normalization.
    pub raw: GroupedDesign<T>,
    /// Frobenius-normalized per group.
    pub design: GroupedDesign<T>,
    pub provenance: Vec<Provenance>,
}

fn finish<T: Float>(blocks: Vec<(String, DMatrix<T>)>, provenance: Vec<Provenance>) -> Result<ExpandedDesign<T>> {
    let raw = GroupedDesign::from_blocks(blocks)?;
    let design = raw.clone().normalize_groups()?;
    Ok(ExpandedDesign { raw, design, provenance })
}

fn empirical_quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = prob * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Clamped knot vector for a B-spline basis of `df` functions on the range
/// of `x`, degree `min(3, df − 1)`, interior knots at empirical quantiles.
pub fn spline_knots(x: &[f64], df: usize) -> Result<(Vec<f64>, usize)> {
    if df < 2 {
        return Err(Error::InvalidArgument(format!("spline df must be at least 2, got {df}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidDesign("covariate has non-finite values".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if !(hi > lo) {
        return Err(Error::InvalidDesign("constant covariate has no spline basis".into()));
    }
    let degree = 3.min(df - 1);
    let interior = df - degree - 1;
    let mut knots = vec![lo; degree + 1];
    for j in 1..=interior {
        knots.push(empirical_quantile(&sorted, j as f64 / (interior + 1) as f64));
    }
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    Ok((knots, degree))
}

/// Values of all B-spline basis functions at `t` (Cox–de Boor).
pub fn bspline_basis(knots: &[f64], degree: usize, t: f64) -> Vec<f64> {
    let nb = knots.len() - degree - 1;
    let last = knots[knots.len() - 1];
    // degree 0 indicators; the right boundary belongs to the last nonempty span
    let mut b: Vec<f64> = (0..knots.len() - 1)
        .map(|i| {
            let (l, r) = (knots[i], knots[i + 1]);
            if (l <= t && t < r) || (t == last && r == last && l < r) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for d in 1..=degree {
        let next: Vec<f64> = (0..knots.len() - 1 - d)
            .map(|i| {
                let mut v = 0.0;
                let den1 = knots[i + d] - knots[i];
                if den1 > 0.0 {
                    v += (t - knots[i]) / den1 * b[i];
                }
                let den2 = knots[i + d + 1] - knots[i + 1];
                if den2 > 0.0 {
                    v += (knots[i + d + 1] - t) / den2 * b[i + 1];
                }
                v
            })
            .collect();
        b = next;
    }
    b.truncate(nb);
    b
}

/// n × df B-spline basis matrix for covariate values `x`.
pub fn spline_basis(x: &[f64], df: usize) -> Result<DMatrix<f64>> {
    let (knots, degree) = spline_knots(x, df)?;
    let mut m = DMatrix::zeros(x.len(), df);
    for (i, &t) in x.iter().enumerate() {
        for (j, v) in bspline_basis(&knots, degree, t).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

/// Originals followed by one B-spline group of `df` columns per covariate.
pub fn spline_expand<T: Float>(design: &GroupedDesign<T>, df: usize) -> Result<ExpandedDesign<T>> {
    let g_count = design.n_groups();
    if let Some(g) = (0..g_count).find(|&g| design.group_size(g) != 1) {
        return Err(Error::InvalidDesign(format!("group {g} is not a single covariate")));
    }
    let mut blocks: Vec<(String, DMatrix<T>)> = (0..g_count)
        .map(|g| (design.name(g).to_string(), design.group(g).into_owned()))
        .collect();
    let splines = (0..g_count)
        .into_par_iter()
        .map(|g| {
            let x: Vec<f64> = design.group(g).iter().map(|v| v.to_f64_lossy()).collect();
            let basis = spline_basis(&x, df)
                .map_err(|e| Error::InvalidDesign(format!("covariate {}: {e}", design.name(g))))?;
            Ok((format!("s({})", design.name(g)), basis.map(T::lit)))
        })
        .collect::<Result<Vec<_>>>()?;
    blocks.extend(splines);
    let provenance = (0..g_count)
        .map(|group| Provenance::Main { group })
        .chain((0..g_count).map(|group| Provenance::Spline { group }))
        .collect();
    finish(blocks, provenance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionOptions {
    /// Prepend both parents' columns to each interaction group.
    pub with_main_effects: bool,
    pub column_budget: usize,
}

impl Default for InteractionOptions {
    fn default() -> Self {
        Self { with_main_effects: false, column_budget: DEFAULT_COLUMN_BUDGET }
    }
}

/// All `p_g·p_h` Hadamard products of the columns of `a` and `b`, `a`-major.
pub fn hadamard_products<T: Float>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, a.ncols() * b.ncols());
    for i in 0..a.ncols() {
        for j in 0..b.ncols() {
            out.column_mut(i * b.ncols() + j).copy_from(&a.column(i).component_mul(&b.column(j)));
        }
    }
    out
}

/// Main effects followed by one interaction group per pair `g < h` in
/// lexicographic order.
pub fn glinternet_expand<T: Float>(design: &GroupedDesign<T>, opts: InteractionOptions) -> Result<ExpandedDesign<T>> {
    let g_count = design.n_groups();
    if g_count < 2 {
        return Err(Error::InvalidDesign("interactions need at least two groups".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..g_count).flat_map(|g| (g + 1..g_count).map(move |h| (g, h))).collect();
    let mut needed = design.n_cols();
    for &(g, h) in &pairs {
        let (pg, ph) = (design.group_size(g), design.group_size(h));
        needed += pg * ph + if opts.with_main_effects { pg + ph } else { 0 };
    }
    if needed > opts.column_budget {
        return Err(Error::ColumnBudget { needed, budget: opts.column_budget });
    }
    let mut blocks: Vec<(String, DMatrix<T>)> = (0..g_count)
        .map(|g| (design.name(g).to_string(), design.group(g).into_owned()))
        .collect();
    let inter: Vec<(String, DMatrix<T>)> = pairs
        .par_iter()
        .map(|&(g, h)| {
            let a = design.group(g).into_owned();
            let b = design.group(h).into_owned();
            let prod = hadamard_products(&a, &b);
            let block = if opts.with_main_effects {
                let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols() + prod.ncols());
                m.columns_mut(0, a.ncols()).copy_from(&a);
                m.columns_mut(a.ncols(), b.ncols()).copy_from(&b);
                m.columns_mut(a.ncols() + b.ncols(), prod.ncols()).copy_from(&prod);
                m
            } else {
                prod
            };
            (format!("{}:{}", design.name(g), design.name(h)), block)
        })
        .collect();
    blocks.extend(inter);
    let provenance = (0..g_count)
        .map(|group| Provenance::Main { group })
        .chain(pairs.iter().map(|&(first, second)| Provenance::Interaction { first, second }))
        .collect();
    finish(blocks, provenance)
}

fn contained<T: Float>(basis: &DMatrix<T>, x: &DMatrix<T>) -> bool {
    let mut resid = x.clone();
    if basis.ncols() > 0 {
        resid -= basis * basis.tr_mul(x);
    }
    resid.norm() <= T::lit(1e-8) * (T::one() + x.norm())
}

/// Whether every selected interaction `(g, h)` has both parents' main-effect
/// columns inside the column space of the selected groups.
pub fn hierarchy_satisfied<T: Float>(expanded: &ExpandedDesign<T>, selected: &[usize]) -> Result<bool> {
    let cols = expanded.raw.submatrix(selected);
    let basis = linalg::column_basis(&cols)?;
    for &s in selected {
        if let Provenance::Interaction { first, second } = expanded.provenance[s] {
            for parent in [first, second] {
                let main = expanded
                    .provenance
                    .iter()
                    .position(|p| *p == Provenance::Main { group: parent })
                    .ok_or_else(|| Error::InvalidDesign(format!("main effect {parent} missing")))?;
                if !contained(&basis, &expanded.raw.group(main).into_owned()) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Row sums of a basis matrix; all 1 for a B-spline basis.
pub fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}
