//! Truncated-χ significance test for the group entering a forward stepwise
//! path, and the naive χ² drop-in-RSS comparison.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::grouped_model::{GroupedDesign, NoiseModel};
use crate::linalg;
use crate::quadratic_selection::TruncationRegion;
use crate::special::{chi2_sf, ln_1m_exp, ln_chi_cdf_sf};

/// Ratio threshold below which a group cannot bound the statistic.
pub const DEFAULT_TOL: f64 = 1e-10;
const PAR_MIN_GROUPS: usize = 512;

/// Outcome of one truncated-χ test.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct TChiResult<T: Float> {
    pub group: usize,
    /// Observed `‖X_gᵀy‖₂ / w_g`.
    pub t_obs: T,
    pub dof: usize,
    /// Conditional standard deviation θ.
    pub scale: T,
    pub region: TruncationRegion<T>,
    pub pvalue: f64,
    /// Set when the region carried no representable χ mass and the
    /// conservative value 1 was returned.
    pub degenerate: bool,
}

fn ln_mass(lo: f64, hi: f64, dof: usize) -> f64 {
    if hi <= lo {
        return f64::NEG_INFINITY;
    }
    let (lf_lo, ls_lo) = ln_chi_cdf_sf(lo, dof);
    let (lf_hi, ls_hi) = ln_chi_cdf_sf(hi, dof);
    if ls_lo < f64::ln(0.5) {
        // both endpoints in the upper tail: difference of survivals
        ls_lo + ln_1m_exp(ls_hi - ls_lo)
    } else {
        lf_hi + ln_1m_exp(lf_lo - lf_hi)
    }
}

/// Survival of `θ·χ_r` truncated to `region`, evaluated at `t`, with a flag
/// for the degenerate zero-mass case (then the value is 1).
pub fn truncated_chi_survival_flagged<T: Float>(
    t: T,
    dof: usize,
    theta: T,
    region: &TruncationRegion<T>,
) -> (f64, bool) {
    let t = t.to_f64_lossy();
    let theta = theta.to_f64_lossy();
    let mut ln_den = f64::NEG_INFINITY;
    let mut ln_num = f64::NEG_INFINITY;
    for &(lo, hi) in region.to_f64().intervals() {
        let lo = lo.max(0.0) / theta;
        let hi = hi / theta;
        if hi <= lo {
            continue;
        }
        ln_den = crate::special::ln_add_exp(ln_den, ln_mass(lo, hi, dof));
        let from = lo.max(t / theta);
        ln_num = crate::special::ln_add_exp(ln_num, ln_mass(from, hi, dof));
    }
    if ln_den == f64::NEG_INFINITY || ln_den.is_nan() {
        return (1.0, true);
    }
    let p = (ln_num - ln_den).exp();
    (if p.is_nan() { 1.0 } else { p.clamp(0.0, 1.0) }, false)
}

/// Survival of `θ·χ_r` truncated to `region`, evaluated at `t`.
pub fn truncated_chi_survival<T: Float>(t: T, dof: usize, theta: T, region: &TruncationRegion<T>) -> f64 {
    truncated_chi_survival_flagged(t, dof, theta, region).0
}

/// Bounds `(v₋, v₊)` contributed by one group: the set of `λ ≥ 0` with
/// `‖a + λb‖ ≤ wλ`, derived by the angular parameterization.
pub fn linear_fractional_group<T: Float>(a: &DVector<T>, b: &DVector<T>, w: T, tol: T) -> (T, T) {
    let inf = T::lit(f64::INFINITY);
    let na = a.norm();
    let nb = b.norm();
    if nb == T::zero() {
        return (na / w, inf);
    }
    if na / nb < tol {
        return (T::zero(), inf);
    }
    let cos_t = (a.dot(b) / (na * nb)).clamp(-T::one(), T::one());
    let sin_t = (T::one() - cos_t * cos_t).max(T::zero()).sqrt();
    let theta = cos_t.acos();
    let phi_s = sin_t * nb / w;
    if phi_s > T::one() {
        return (T::zero(), inf);
    }
    let phi = phi_s.asin();
    let z_plus = na * phi.cos() / (w - nb * (theta - phi).cos());
    // second stationary point at π − φ
    let z_minus = -na * phi.cos() / (w + nb * (theta + phi).cos());
    if nb < w {
        (z_plus.max(z_minus), inf)
    } else {
        (z_plus.min(z_minus), z_plus.max(z_minus))
    }
}

/// Intersection over `groups` of the per-group bounds, starting from `[0, ∞)`.
pub fn linear_fractional<T: Float>(
    a: &DVector<T>,
    b: &DVector<T>,
    bounds: &[(usize, usize)],
    weights: &[T],
    groups: &[usize],
    tol: T,
) -> (T, T) {
    let inf = T::lit(f64::INFINITY);
    let one = |h: usize| {
        let (s, e) = bounds[h];
        let ah = a.rows(s, e - s).into_owned();
        let bh = b.rows(s, e - s).into_owned();
        linear_fractional_group(&ah, &bh, weights[h], tol)
    };
    let combine = |x: (T, T), y: (T, T)| (x.0.max(y.0), x.1.min(y.1));
    // max/min are order independent, so the parallel reduction is exact
    if groups.len() >= PAR_MIN_GROUPS {
        groups
            .par_iter()
            .map(|&h| one(h))
            .reduce(|| (T::zero(), inf), combine)
    } else {
        groups.iter().map(|&h| one(h)).fold((T::zero(), inf), combine)
    }
}

/// Second-moment summary of a design sufficient for the test of group `g`:
/// `Xᵀy` and `XᵀΣX_g`, plus the rank of `X_g`.
#[derive(Debug, Clone)]
pub struct GroupMoments<T: Float> {
    pub xty: DVector<T>,
    pub cross: DMatrix<T>,
    pub rank: usize,
}

impl<T: Float> GroupMoments<T> {
    pub fn from_design(
        y: &DVector<T>,
        design: &GroupedDesign<T>,
        noise: &NoiseModel<T>,
        g: usize,
    ) -> Result<Self> {
        if y.len() != design.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "response has length {}, design has {} rows",
                y.len(),
                design.n_rows()
            )));
        }
        noise.check_dim(y.len())?;
        let x = design.columns();
        let xg = design.group(g).into_owned();
        let sxg = noise.apply(&xg);
        Ok(Self { xty: x.tr_mul(y), cross: x.tr_mul(&sxg), rank: linalg::rank(&xg)? })
    }
}

/// Truncated-χ test from precomputed moments.
///
/// `bounds` and `weights` describe the column groups of the moments,
/// `inactive` the groups still competing (it may contain `g`).
pub fn tchi_from_moments<T: Float>(
    m: &GroupMoments<T>,
    bounds: &[(usize, usize)],
    weights: &[T],
    inactive: &[usize],
    g: usize,
) -> Result<TChiResult<T>> {
    let (s, e) = bounds[g];
    let pg = e - s;
    let w = weights[g];
    let z = m.xty.rows(s, pg).into_owned();
    let nz = z.norm();
    if !(nz > T::zero()) {
        return Err(Error::InvalidArgument(format!("group {g} is orthogonal to the response")));
    }
    let eta = &z / nz;
    let lambda = nz / w;
    let mg = linalg::symmetrize(&m.cross.rows(s, pg).into_owned());

    // variance of ηᵀX_gᵀy/w given the directions orthogonal to η, and the
    // covariance of Xᵀy with it
    let (s2_num, cov) = if pg == 1 {
        (mg[(0, 0)], &m.cross * &eta)
    } else {
        let v = linalg::complement_basis(&eta);
        let mv = &mg * &v;
        // null directions of a rank-deficient group are zero on the scale of M_g
        let floor = T::rank_rtol() * mg.amax();
        let k = linalg::pinv_above(&(v.tr_mul(&mv)), floor)?;
        let vme = mv.tr_mul(&eta);
        let k_vme = &k * &vme;
        let s2 = eta.dot(&(&mg * &eta)) - vme.dot(&k_vme);
        let cov = &m.cross * &eta - &m.cross * (&v * k_vme);
        (s2, cov)
    };
    let sigma2 = s2_num / (w * w);
    let floor = T::default_epsilon() * T::lit(100.0) * mg.amax() / (w * w);
    if !(sigma2 > floor) {
        return Err(Error::DegenerateVariance(sigma2.to_f64_lossy()));
    }
    let b = cov / (w * sigma2);
    let a = &m.xty - &b * lambda;
    let others: Vec<usize> = inactive.iter().copied().filter(|&h| h != g).collect();
    let (vm, vp) = linear_fractional(&a, &b, bounds, weights, &others, T::lit(DEFAULT_TOL));
    let slack = T::lit(1e-6).max(T::default_epsilon() * T::lit(1e3)) * lambda.max(T::one());
    if lambda < vm - slack || lambda > vp + slack {
        return Err(Error::Numerical(format!(
            "observed statistic {lambda} outside its truncation interval [{vm}, {vp}]"
        )));
    }
    let region = TruncationRegion::interval(vm.min(lambda), vp.max(lambda));
    let theta = sigma2.sqrt();
    let (pvalue, degenerate) = truncated_chi_survival_flagged(lambda, m.rank.max(1), theta, &region);
    Ok(TChiResult { group: g, t_obs: lambda, dof: m.rank.max(1), scale: theta, region, pvalue, degenerate })
}

/// Truncated-χ p-value for group `g` entering at the current step.
///
/// `inactive` is the competing set including `g`.
pub fn tchi_step_pvalue<T: Float>(
    y: &DVector<T>,
    design: &GroupedDesign<T>,
    noise: &NoiseModel<T>,
    inactive: &[usize],
    g: usize,
) -> Result<TChiResult<T>> {
    let m = GroupMoments::from_design(y, design, noise, g)?;
    tchi_from_moments(&m, design.bounds(), design.weights(), inactive, g)
}

/// χ²_r survival of the drop in RSS from adding group `g`, `r = rank(X_g)`.
///
/// Requires a scalar noise model. Ignores selection, so it is anti-conservative
/// along a stepwise path.
pub fn chisq_drop_pvalue<T: Float>(
    y: &DVector<T>,
    design: &GroupedDesign<T>,
    noise: &NoiseModel<T>,
    g: usize,
) -> Result<f64> {
    let sigma = noise
        .sigma()
        .ok_or_else(|| Error::InvalidNoise("χ² comparison needs a scalar noise level".into()))?;
    let basis = linalg::column_basis(&design.group(g).into_owned())?;
    let drop = basis.tr_mul(y).norm_squared();
    Ok(chisq_from_drop(drop, basis.ncols(), sigma))
}

pub(crate) fn chisq_from_drop<T: Float>(drop: T, rank: usize, sigma: T) -> f64 {
    let x = (drop / (sigma * sigma)).to_f64_lossy();
    chi2_sf(x, rank.max(1)).clamp(0.0, 1.0)
}
