//! Grouped forward stepwise selection with orthogonalization after each step.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::grouped_model::{GroupedDesign, NoiseModel};
use crate::linalg;
use crate::tchi::{self, TChiResult};

/// Relative group-norm level at which the path stops.
pub const EXHAUSTED_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    None,
    Tchi,
    Chisq,
    Both,
}

impl TestKind {
    pub fn tchi(self) -> bool {
        matches!(self, TestKind::Tchi | TestKind::Both)
    }

    pub fn chisq(self) -> bool {
        matches!(self, TestKind::Chisq | TestKind::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    /// Every inactive group is (numerically) orthogonal to the residual.
    ResidualExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct StepRecord<T: Float> {
    /// 1-based.
    pub step: usize,
    pub group: usize,
    pub lambda: T,
    pub residual_norm: T,
    pub rank: usize,
    pub pvalue_tchi: Option<f64>,
    pub pvalue_chisq: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SelectionPath<T: Float> {
    pub steps: Vec<StepRecord<T>>,
    /// Orthonormal basis of the projected entering group at each step; the
    /// step's projector is `I − QQᵀ`.
    pub bases: Vec<DMatrix<T>>,
    /// Working response before each step, `r_{s−1}`.
    pub responses: Vec<DVector<T>>,
    pub tests: Vec<Option<TChiResult<T>>>,
    pub response_norm: T,
    pub stop: StopReason,
}

impl<T: Float> SelectionPath<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn groups(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.group).collect()
    }

    /// p-values of the truncated-χ test (NaN where it was not computed).
    pub fn pvalues_tchi(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.pvalue_tchi.unwrap_or(f64::NAN)).collect()
    }

    pub fn pvalues_chisq(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.pvalue_chisq.unwrap_or(f64::NAN)).collect()
    }

    /// RSS after 0, 1, …, len steps.
    pub fn rss(&self) -> Vec<T> {
        std::iter::once(self.response_norm * self.response_norm)
            .chain(self.steps.iter().map(|s| s.residual_norm * s.residual_norm))
            .collect()
    }
}

/// Largest admissible value, lowest index on ties.
fn argmax<T: Float>(candidates: &[usize], values: &[T]) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (&h, &v) in candidates.iter().zip(values) {
        match best {
            Some((_, bv)) if !(v > bv) => {}
            _ if v.partial_cmp(&v).is_none() => {}
            _ => best = Some((h, v)),
        }
    }
    best
}

fn project_block<T: Float>(q: &DMatrix<T>, block: &mut DMatrix<T>) {
    if q.ncols() == 0 {
        return;
    }
    let coef = q.tr_mul(block);
    *block -= q * coef;
}

/// Projects `y` and every group other than `g` onto the orthogonal
/// complement of the column space of `X_g`. Returns the orthonormal basis
/// `Q` of that column space as the projector factor.
pub fn orthogonalize_step<T: Float>(
    design: &GroupedDesign<T>,
    y: &DVector<T>,
    g: usize,
) -> Result<(GroupedDesign<T>, DVector<T>, DMatrix<T>)> {
    let others: Vec<usize> = (0..design.n_groups()).filter(|&h| h != g).collect();
    let q = linalg::column_basis(&design.group(g).into_owned())?;
    let columns = project_groups(design, &q, &others);
    let mut r = y.clone();
    linalg::project_out(&q, &mut r);
    Ok((design.with_columns(columns), r, q))
}

fn project_groups<T: Float>(design: &GroupedDesign<T>, q: &DMatrix<T>, groups: &[usize]) -> DMatrix<T> {
    let blocks: Vec<(usize, DMatrix<T>)> = groups
        .par_iter()
        .map(|&h| {
            let mut block = design.group(h).into_owned();
            project_block(q, &mut block);
            (design.bounds()[h].0, block)
        })
        .collect();
    let mut columns = design.columns().clone();
    for (start, block) in blocks {
        columns.columns_mut(start, block.ncols()).copy_from(&block);
    }
    columns
}

/// Most steps that keep the truncated-χ test defined: `min(n, G) − 1`, or a
/// single step when there is one group and `n > 1`.
pub fn tchi_step_limit(n: usize, groups: usize) -> usize {
    if groups == 1 {
        usize::from(n > 1)
    } else {
        n.min(groups).saturating_sub(1)
    }
}

/// Grouped forward stepwise for up to `steps` steps.
pub fn forward_stepwise<T: Float>(
    y: &DVector<T>,
    design: &GroupedDesign<T>,
    noise: &NoiseModel<T>,
    steps: usize,
    test: TestKind,
) -> Result<SelectionPath<T>> {
    let n = design.n_rows();
    let g_count = design.n_groups();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has length {}, design has {n} rows",
            y.len()
        )));
    }
    noise.check_dim(n)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    let limit = if test.tchi() { tchi_step_limit(n, g_count) } else { g_count };
    if steps > limit {
        return Err(Error::InvalidArgument(format!(
            "steps = {steps} exceeds the limit {limit} for n = {n}, G = {g_count}"
        )));
    }
    if test.chisq() && noise.sigma().is_none() {
        return Err(Error::InvalidNoise("χ² comparison needs a scalar noise level".into()));
    }

    let y_norm = y.norm();
    let floor = T::lit(EXHAUSTED_RTOL) * y_norm;
    let mut work = design.clone();
    let mut r = y.clone();
    let mut inactive: Vec<usize> = (0..g_count).collect();
    let mut path = SelectionPath {
        steps: Vec::with_capacity(steps),
        bases: Vec::with_capacity(steps),
        responses: Vec::with_capacity(steps),
        tests: Vec::with_capacity(steps),
        response_norm: y_norm,
        stop: StopReason::Completed,
    };

    for s in 1..=steps {
        let norms: Vec<T> = inactive.par_iter().map(|&h| work.group_norm(h, &r)).collect();
        let Some((g, lambda)) = argmax(&inactive, &norms) else {
            path.stop = StopReason::ResidualExhausted;
            break;
        };
        if !(lambda > floor) || lambda == T::zero() {
            path.stop = StopReason::ResidualExhausted;
            break;
        }

        let tchi_res = if test.tchi() {
            Some(tchi::tchi_step_pvalue(&r, &work, noise, &inactive, g)?)
        } else {
            None
        };

        let q = linalg::column_basis(&work.group(g).into_owned())?;
        let pvalue_chisq = if test.chisq() {
            let drop = q.tr_mul(&r).norm_squared();
            Some(tchi::chisq_from_drop(drop, q.ncols(), noise.sigma().expect("checked above")))
        } else {
            None
        };

        inactive.retain(|&h| h != g);
        let columns = project_groups(&work, &q, &inactive);
        work = work.with_columns(columns);
        path.responses.push(r.clone());
        linalg::project_out(&q, &mut r);

        path.steps.push(StepRecord {
            step: s,
            group: g,
            lambda,
            residual_norm: r.norm(),
            rank: q.ncols(),
            pvalue_tchi: tchi_res.as_ref().map(|t| t.pvalue),
            pvalue_chisq,
        });
        path.bases.push(q);
        path.tests.push(tchi_res);
    }
    Ok(path)
}

/// Minimum-norm least-squares coefficients on the concatenated columns of
/// `active`, in that order.
pub fn fit_active<T: Float>(y: &DVector<T>, design: &GroupedDesign<T>, active: &[usize]) -> Result<DVector<T>> {
    if active.is_empty() {
        return Err(Error::InvalidArgument("active set is empty".into()));
    }
    let mut seen = vec![false; design.n_groups()];
    for &g in active {
        if g >= design.n_groups() || std::mem::replace(&mut seen[g], true) {
            return Err(Error::InvalidArgument(format!("active group {g} is invalid or repeated")));
        }
    }
    linalg::lstsq(&design.submatrix(active), y)
}
