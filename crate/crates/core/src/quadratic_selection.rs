//! Selection events described by quadratic inequalities, and their slices
//! along a direction through the observed response.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::grouped_model::GroupedDesign;
use crate::linalg;

const DEGENERATE: f64 = 1e-14;
const CONSTANT_FEASIBLE: f64 = 1e-12;
const FEASIBILITY_RTOL: f64 = 1e-9;

/// One inequality `yᵀQy + aᵀy ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstraint<T: Float> {
    q: DMatrix<T>,
    a: DVector<T>,
    b: T,
}

impl<T: Float> QuadraticConstraint<T> {
    /// `q` is replaced by its symmetric part.
    pub fn new(q: DMatrix<T>, a: DVector<T>, b: T) -> Result<Self> {
        if !q.is_square() || q.nrows() != a.len() {
            return Err(Error::DimensionMismatch(format!(
                "Q is {}×{}, a has length {}",
                q.nrows(),
                q.ncols(),
                a.len()
            )));
        }
        Ok(Self { q: linalg::symmetrize(&q), a, b })
    }

    /// Pure quadratic form `yᵀQy ≤ 0`.
    pub fn quadratic(q: DMatrix<T>) -> Result<Self> {
        let n = q.nrows();
        Self::new(q, DVector::zeros(n), T::zero())
    }

    /// Affine `aᵀy ≤ b`.
    pub fn affine(a: DVector<T>, b: T) -> Self {
        let n = a.len();
        Self { q: DMatrix::zeros(n, n), a, b }
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn a(&self) -> &DVector<T> {
        &self.a
    }

    pub fn b(&self) -> T {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `yᵀQy + aᵀy − b`; the constraint holds where this is ≤ 0.
    pub fn evaluate(&self, y: &DVector<T>) -> T {
        (&self.q * y).dot(y) + self.a.dot(y) - self.b
    }

    /// Coefficients `(A, B, C)` of `t ↦ A t² + B t + C`, the constraint
    /// evaluated along `y + tη`.
    pub fn ray_coefficients(&self, y: &DVector<T>, eta: &DVector<T>) -> (T, T, T) {
        let qe = &self.q * eta;
        let qy = &self.q * y;
        let a2 = eta.dot(&qe);
        let b1 = T::lit(2.0) * y.dot(&qe) + self.a.dot(eta);
        let c0 = y.dot(&qy) + self.a.dot(y) - self.b;
        (a2, b1, c0)
    }

    fn feasibility_scale(&self, y: &DVector<T>) -> T {
        let yqy = (&self.q * y).dot(y).abs();
        T::one() + yqy + self.a.dot(y).abs() + self.b.abs()
    }
}

/// Finite union of closed intervals, sorted and pairwise disjoint.
///
/// Endpoints may be infinite. Touching or overlapping intervals are
/// merged on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RegionRepr", try_from = "RegionRepr")]
pub struct TruncationRegion<T: Float> {
    intervals: Vec<(T, T)>,
}

fn inf<T: Float>() -> T {
    T::lit(f64::INFINITY)
}

impl<T: Float> TruncationRegion<T> {
    pub fn new(intervals: Vec<(T, T)>) -> Self {
        let mut iv: Vec<(T, T)> = intervals
            .into_iter()
            .filter(|(lo, hi)| lo <= hi)
            .collect();
        iv.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("interval endpoints are not NaN"));
        let mut out: Vec<(T, T)> = Vec::with_capacity(iv.len());
        for (lo, hi) in iv {
            match out.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        Self { intervals: out }
    }

    pub fn real_line() -> Self {
        Self { intervals: vec![(-inf::<T>(), inf::<T>())] }
    }

    pub fn empty() -> Self {
        Self { intervals: Vec::new() }
    }

    pub fn interval(lo: T, hi: T) -> Self {
        Self::new(vec![(lo, hi)])
    }

    pub fn intervals(&self) -> &[(T, T)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, t: T) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= t && t <= hi)
    }

    /// Distance from `t` to the nearest endpoint (finite endpoints only).
    pub fn endpoint_distance(&self, t: T) -> T {
        self.intervals
            .iter()
            .flat_map(|&(lo, hi)| [lo, hi])
            .filter(|e| e.is_finite())
            .map(|e| (e - t).abs())
            .fold(inf::<T>(), |a, b| a.min(b))
    }

    pub fn lower(&self) -> Option<T> {
        self.intervals.first().map(|i| i.0)
    }

    pub fn upper(&self) -> Option<T> {
        self.intervals.last().map(|i| i.1)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.intervals.len() && j < other.intervals.len() {
            let (a0, a1) = self.intervals[i];
            let (b0, b1) = other.intervals[j];
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if lo <= hi {
                out.push((lo, hi));
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self::new(out)
    }

    pub fn shift(&self, c: T) -> Self {
        Self { intervals: self.intervals.iter().map(|&(lo, hi)| (lo + c, hi + c)).collect() }
    }

    /// Image under `t ↦ −t`.
    pub fn reflect(&self) -> Self {
        Self::new(self.intervals.iter().map(|&(lo, hi)| (-hi, -lo)).collect())
    }

    /// Image under `t ↦ c·t` for `c > 0`.
    pub fn scale(&self, c: T) -> Self {
        Self { intervals: self.intervals.iter().map(|&(lo, hi)| (lo * c, hi * c)).collect() }
    }

    pub fn to_f64(&self) -> TruncationRegion<f64> {
        TruncationRegion {
            intervals: self
                .intervals
                .iter()
                .map(|&(lo, hi)| (lo.to_f64_lossy(), hi.to_f64_lossy()))
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RegionRepr {
    // infinite endpoints serialize as null
    intervals: Vec<(Option<f64>, Option<f64>)>,
}

impl<T: Float> From<TruncationRegion<T>> for RegionRepr {
    fn from(r: TruncationRegion<T>) -> Self {
        let fin = |x: T| {
            let v = x.to_f64_lossy();
            v.is_finite().then_some(v)
        };
        RegionRepr { intervals: r.intervals.iter().map(|&(lo, hi)| (fin(lo), fin(hi))).collect() }
    }
}

impl<T: Float> TryFrom<RegionRepr> for TruncationRegion<T> {
    type Error = String;

    fn try_from(r: RegionRepr) -> std::result::Result<Self, String> {
        let mut iv = Vec::with_capacity(r.intervals.len());
        for (lo, hi) in r.intervals {
            let lo = lo.unwrap_or(f64::NEG_INFINITY);
            let hi = hi.unwrap_or(f64::INFINITY);
            if lo > hi {
                return Err(format!("interval [{lo}, {hi}] is reversed"));
            }
            iv.push((T::lit(lo), T::lit(hi)));
        }
        Ok(TruncationRegion::new(iv))
    }
}

/// `{t : A t² + B t + C ≤ 0}`.
pub fn quadratic_sublevel<T: Float>(a: T, b: T, c: T) -> TruncationRegion<T> {
    let eps = T::lit(DEGENERATE);
    let ninf = -inf::<T>();
    let pinf = inf::<T>();
    if a.abs() < eps {
        if b.abs() < eps {
            return if c <= T::lit(CONSTANT_FEASIBLE) {
                TruncationRegion::real_line()
            } else {
                TruncationRegion::empty()
            };
        }
        let root = -c / b;
        return if b > T::zero() {
            TruncationRegion::interval(ninf, root)
        } else {
            TruncationRegion::interval(root, pinf)
        };
    }
    let disc = b * b - T::lit(4.0) * a * c;
    if disc < T::zero() {
        return if a < T::zero() {
            TruncationRegion::real_line()
        } else {
            TruncationRegion::empty()
        };
    }
    let (r1, r2) = stable_roots(a, b, c, disc);
    if a > T::zero() {
        TruncationRegion::interval(r1, r2)
    } else {
        TruncationRegion::new(vec![(ninf, r1), (r2, pinf)])
    }
}

fn stable_roots<T: Float>(a: T, b: T, c: T, disc: T) -> (T, T) {
    let sq = disc.sqrt();
    let sign = if b >= T::zero() { T::one() } else { -T::one() };
    let q = -(b + sign * sq) * T::lit(0.5);
    if q == T::zero() {
        return (T::zero(), T::zero());
    }
    let x1 = q / a;
    let x2 = c / q;
    if x1 <= x2 {
        (x1, x2)
    } else {
        (x2, x1)
    }
}

fn check_unit<T: Float>(eta: &DVector<T>) -> Result<()> {
    let tol = T::lit(1e-10).max(T::default_epsilon() * T::lit(100.0));
    if (eta.norm() - T::one()).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "direction must have unit norm, got {}",
            eta.norm()
        )));
    }
    Ok(())
}

fn slice_indexed<T: Float>(
    c: &QuadraticConstraint<T>,
    index: usize,
    y: &DVector<T>,
    eta: &DVector<T>,
) -> Result<TruncationRegion<T>> {
    if c.dim() != y.len() || y.len() != eta.len() {
        return Err(Error::DimensionMismatch(format!(
            "constraint dimension {}, y length {}, direction length {}",
            c.dim(),
            y.len(),
            eta.len()
        )));
    }
    let (a, b, c0) = c.ray_coefficients(y, eta);
    let tol = T::lit(FEASIBILITY_RTOL).max(T::default_epsilon() * T::lit(1e3)) * c.feasibility_scale(y);
    if c0 > tol {
        return Err(Error::Infeasible { index });
    }
    // t = 0 is feasible up to rounding; pin it so the slice contains 0
    Ok(quadratic_sublevel(a, b, c0.min(T::zero())))
}

/// Exact slice `{t : (y + tη)ᵀQ(y + tη) + aᵀ(y + tη) ≤ b}`; contains 0.
pub fn slice_one<T: Float>(
    c: &QuadraticConstraint<T>,
    y: &DVector<T>,
    eta: &DVector<T>,
) -> Result<TruncationRegion<T>> {
    check_unit(eta)?;
    slice_indexed(c, 0, y, eta)
}

/// Intersection of all slices, in the coordinate of the statistic `ηᵀy`.
pub fn slice_event<T: Float>(
    constraints: &[QuadraticConstraint<T>],
    y: &DVector<T>,
    eta: &DVector<T>,
) -> Result<TruncationRegion<T>> {
    check_unit(eta)?;
    let slices: Vec<Result<TruncationRegion<T>>> = constraints
        .par_iter()
        .enumerate()
        .map(|(i, c)| slice_indexed(c, i, y, eta))
        .collect();
    let mut region = TruncationRegion::real_line();
    for s in slices {
        region = region.intersect(&s?);
    }
    Ok(region.shift(eta.dot(y)))
}

/// Constraints describing "group `g` is the argmax and `X_gᵀy` points along
/// `eta_g`" for a design without active groups.
///
/// One constraint per `h ≠ g` comparing weighted group norms, followed by
/// the direction pair `‖(I − ηηᵀ)X_gᵀy‖² ≤ 0` and `−(X_gη)ᵀy ≤ 0`.
pub fn stepwise_event_constraints<T: Float>(
    design: &GroupedDesign<T>,
    g: usize,
    eta_g: &DVector<T>,
) -> Result<Vec<QuadraticConstraint<T>>> {
    if eta_g.len() != design.group_size(g) {
        return Err(Error::DimensionMismatch(format!(
            "direction has length {}, group {g} has {} columns",
            eta_g.len(),
            design.group_size(g)
        )));
    }
    let xg = design.group(g).into_owned();
    let wg2 = design.weight(g) * design.weight(g);
    let pg = &xg * xg.transpose() / wg2;
    let mut out: Vec<QuadraticConstraint<T>> = (0..design.n_groups())
        .into_par_iter()
        .filter(|&h| h != g)
        .map(|h| {
            let xh = design.group(h);
            let wh2 = design.weight(h) * design.weight(h);
            let q = xh * xh.transpose() / wh2 - &pg;
            QuadraticConstraint::quadratic(q)
        })
        .collect::<Result<Vec<_>>>()?;
    let k = eta_g.len();
    let off = DMatrix::<T>::identity(k, k) - eta_g * eta_g.transpose();
    out.push(QuadraticConstraint::quadratic(&xg * off * xg.transpose())?);
    out.push(QuadraticConstraint::affine(-(&xg * eta_g), T::zero()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const INF: f64 = f64::INFINITY;

    fn iv(r: &TruncationRegion<f64>) -> Vec<(f64, f64)> {
        r.intervals().to_vec()
    }

    #[test]
    fn sublevel_cases() {
        assert_eq!(iv(&quadratic_sublevel(1.0, 0.0, -1.0)), vec![(-1.0, 1.0)]);
        assert_eq!(iv(&quadratic_sublevel(-1.0, 0.0, 1.0)), vec![(-INF, -1.0), (1.0, INF)]);
        assert_eq!(iv(&quadratic_sublevel(0.0, 2.0, -4.0)), vec![(-INF, 2.0)]);
        assert_eq!(iv(&quadratic_sublevel(0.0, -2.0, -4.0)), vec![(-2.0, INF)]);
        assert!(quadratic_sublevel(1.0, 0.0, 1.0).is_empty());
        assert_eq!(iv(&quadratic_sublevel(-1.0, 0.0, -1.0)), vec![(-INF, INF)]);
        assert_eq!(iv(&quadratic_sublevel(0.0, 0.0, 0.0)), vec![(-INF, INF)]);
        assert!(quadratic_sublevel(0.0, 0.0, 1.0).is_empty());
    }

    #[test]
    fn stable_roots_avoid_cancellation() {
        // roots 1e-9 and 1e9
        let r = quadratic_sublevel(1.0f64, -(1e9 + 1e-9), 1.0);
        let (lo, hi) = r.intervals()[0];
        assert!((lo - 1e-9).abs() < 1e-20);
        assert!((hi - 1e9).abs() < 1e-3);
    }

    #[test]
    fn region_canonical_form() {
        let r = TruncationRegion::new(vec![(3.0, 4.0), (0.0, 1.0), (0.5, 2.0), (2.0, 2.5), (5.0, 4.0)]);
        assert_eq!(iv(&r), vec![(0.0, 2.5), (3.0, 4.0)]);
        assert_eq!(TruncationRegion::new(iv(&r)), r);
    }

    #[test]
    fn region_intersection() {
        let a = TruncationRegion::new(vec![(-INF, -1.0), (1.0, INF)]);
        let b = TruncationRegion::interval(-2.0, 3.0);
        assert_eq!(iv(&a.intersect(&b)), vec![(-2.0, -1.0), (1.0, 3.0)]);
        assert!(a.intersect(&TruncationRegion::interval(-0.5, 0.5)).is_empty());
    }

    #[test]
    fn region_json_round_trip() {
        let r = TruncationRegion::new(vec![(-INF, -1.0), (1.5, INF)]);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"intervals":[[null,-1.0],[1.5,null]]}"#);
        let back: TruncationRegion<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    fn e1(n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[0] = 1.0;
        v
    }

    #[test]
    fn empty_event_is_real_line() {
        let y = DVector::from_vec(vec![5.0, 0.0]);
        let r = slice_event::<f64>(&[], &y, &e1(2)).unwrap();
        assert_eq!(iv(&r), vec![(-INF, INF)]);
    }

    #[test]
    fn event_intersects_then_shifts() {
        // along e1 at y = 5 e1: slices [-1, 1] and [0, 3] before the shift
        let y = DVector::from_vec(vec![5.0, 0.0]);
        let mut q1 = DMatrix::zeros(2, 2);
        q1[(0, 0)] = 1.0;
        // (5 + t)^2 - 10(5 + t) + 24 = t^2 - 1
        let c1 = QuadraticConstraint::new(q1, DVector::from_vec(vec![-10.0, 0.0]), -24.0).unwrap();
        // 2(5 + t)^2 − 26(5 + t) + 80 = 2t^2 − 6t
        let mut q2 = DMatrix::zeros(2, 2);
        q2[(0, 0)] = 2.0;
        let c2 = QuadraticConstraint::new(q2, DVector::from_vec(vec![-26.0, 0.0]), -80.0).unwrap();
        assert_eq!(iv(&slice_one(&c1, &y, &e1(2)).unwrap()), vec![(-1.0, 1.0)]);
        assert_eq!(iv(&slice_one(&c2, &y, &e1(2)).unwrap()), vec![(0.0, 3.0)]);
        let r = slice_event(&[c1, c2], &y, &e1(2)).unwrap();
        assert_eq!(iv(&r), vec![(5.0, 6.0)]);
    }

    #[test]
    fn infeasible_constraint_is_named() {
        let y = DVector::from_vec(vec![1.0, 1.0]);
        let ok = QuadraticConstraint::affine(DVector::from_vec(vec![1.0, 0.0]), 5.0);
        let bad = QuadraticConstraint::affine(DVector::from_vec(vec![1.0, 0.0]), 0.0);
        match slice_event(&[ok, bad], &y, &e1(2)) {
            Err(Error::Infeasible { index }) => assert_eq!(index, 1),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn non_unit_direction_rejected() {
        let y = DVector::from_vec(vec![1.0]);
        let c = QuadraticConstraint::affine(DVector::from_vec(vec![1.0]), 5.0);
        assert!(slice_one(&c, &y, &DVector::from_vec(vec![2.0])).is_err());
    }

    fn orthonormal_pair() -> GroupedDesign<f64> {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        GroupedDesign::singletons(x).unwrap()
    }

    #[test]
    fn stepwise_constraint_strict_and_tie() {
        let d = orthonormal_pair();
        let eta = DVector::from_vec(vec![1.0]);
        let cs = stepwise_event_constraints(&d, 0, &eta).unwrap();
        let y = DVector::from_vec(vec![2.0, 0.5, 1.0]);
        assert!(cs[0].evaluate(&y) < 0.0);
        let tie = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        assert_eq!(cs[0].evaluate(&tie), 0.0);
        assert!(cs.iter().all(|c| c.evaluate(&y) <= 1e-12));
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn stepwise_constraints_match_norm_comparison() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 15, 7);
        let d = GroupedDesign::new(x, vec![(0, 2), (2, 3), (3, 6), (6, 7)], vec![1.0, 0.7, 1.3, 1.0])
            .unwrap();
        let y = DVector::from_fn(15, |_, _| rng.sample(StandardNormal));
        let norms: Vec<f64> = (0..4).map(|h| d.group_norm(h, &y)).collect();
        let g = (0..4).fold(0, |best, h| if norms[h] > norms[best] { h } else { best });
        let z = d.group(g).tr_mul(&y);
        let eta = &z / z.norm();
        let cs = stepwise_event_constraints(&d, g, &eta).unwrap();
        let others: Vec<usize> = (0..4).filter(|&h| h != g).collect();
        for (c, &h) in cs.iter().zip(&others) {
            let v = c.evaluate(&y);
            let diff = norms[g] - norms[h];
            assert!(v < 0.0 && diff > 0.0);
            let expected = norms[h].powi(2) - norms[g].powi(2);
            assert!((v - expected).abs() < 1e-10);
        }
        for c in &cs[others.len()..] {
            assert!(c.evaluate(&y) <= 1e-10);
        }
    }

    fn random_constraint(rng: &mut ChaCha8Rng, n: usize, y: &DVector<f64>) -> QuadraticConstraint<f64> {
        let m = random_matrix(rng, n, n);
        let q = if rng.random_bool(0.5) { &m * m.transpose() } else { &m + m.transpose() };
        let a = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let probe = QuadraticConstraint::new(q.clone(), a.clone(), 0.0).unwrap();
        let slack: f64 = rng.random_range(0.0..3.0);
        QuadraticConstraint::new(q, a, probe.evaluate(y) + slack).unwrap()
    }

    proptest! {
        #[test]
        fn reflection_symmetry(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let c = random_constraint(&mut rng, n, &y);
            let eta = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let plus = slice_one(&c, &y, &eta).unwrap();
            let minus = slice_one(&c, &y, &(-&eta)).unwrap();
            let refl = minus.reflect();
            prop_assert_eq!(plus.intervals().len(), refl.intervals().len());
            for (p, r) in plus.intervals().iter().zip(refl.intervals()) {
                let close = |u: f64, v: f64| u == v || (u - v).abs() <= 1e-9 * (1.0 + u.abs());
                prop_assert!(close(p.0, r.0) && close(p.1, r.1));
            }
        }

        #[test]
        fn event_contains_observed_statistic(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 5;
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let cs: Vec<_> = (0..rng.random_range(1..8)).map(|_| random_constraint(&mut rng, n, &y)).collect();
            let eta = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let r = slice_event(&cs, &y, &eta).unwrap();
            let t = eta.dot(&y);
            prop_assert!(r.contains(t) || r.endpoint_distance(t) < 1e-9);
            prop_assert_eq!(TruncationRegion::new(r.intervals().to_vec()), r.clone());
        }
    }
}
