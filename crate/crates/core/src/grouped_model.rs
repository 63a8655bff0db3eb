//! Responses, grouped design matrices and the Gaussian noise model.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::float::Float;

const NORM_TOL: f64 = 1e-12;

/// Column matrix partitioned into contiguous, weighted groups.
///
/// Groups are stored as half-open column ranges `start..end`, so a group
/// submatrix is a zero-copy view into `columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDesign<T: Float> {
    columns: DMatrix<T>,
    bounds: Vec<(usize, usize)>,
    weights: Vec<T>,
    names: Vec<String>,
    column_names: Vec<String>,
    normalized: bool,
    scales: Vec<T>,
}

impl<T: Float> GroupedDesign<T> {
    /// Validates ranges (disjoint, contiguous, covering) and weights (> 0).
    pub fn new(columns: DMatrix<T>, bounds: Vec<(usize, usize)>, weights: Vec<T>) -> Result<Self> {
        let p = columns.ncols();
        if bounds.is_empty() {
            return Err(Error::InvalidDesign("no groups".into()));
        }
        if weights.len() != bounds.len() {
            return Err(Error::InvalidDesign(format!(
                "{} weights for {} groups",
                weights.len(),
                bounds.len()
            )));
        }
        let mut next = 0;
        for (g, &(s, e)) in bounds.iter().enumerate() {
            if s != next || e <= s {
                return Err(Error::InvalidDesign(format!(
                    "group {g} range {s}..{e} is not contiguous with the previous group"
                )));
            }
            next = e;
        }
        if next != p {
            return Err(Error::InvalidDesign(format!("groups cover {next} of {p} columns")));
        }
        if let Some(g) = weights.iter().position(|w| !(*w > T::zero())) {
            return Err(Error::InvalidDesign(format!("weight of group {g} is not positive")));
        }
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDesign("non-finite entry".into()));
        }
        let g = bounds.len();
        Ok(Self {
            columns,
            names: (1..=g).map(|i| format!("g{i}")).collect(),
            column_names: (1..=p).map(|j| format!("x{j}")).collect(),
            bounds,
            weights,
            normalized: false,
            scales: vec![T::one(); g],
        })
    }

    /// Builds a design from named blocks, all weights 1.
    pub fn from_blocks(blocks: Vec<(String, DMatrix<T>)>) -> Result<Self> {
        let n = blocks
            .first()
            .map(|(_, m)| m.nrows())
            .ok_or_else(|| Error::InvalidDesign("no groups".into()))?;
        if let Some((name, m)) = blocks.iter().find(|(_, m)| m.nrows() != n) {
            return Err(Error::DimensionMismatch(format!(
                "group {name} has {} rows, expected {n}",
                m.nrows()
            )));
        }
        let p: usize = blocks.iter().map(|(_, m)| m.ncols()).sum();
        let mut columns = DMatrix::zeros(n, p);
        let mut bounds = Vec::with_capacity(blocks.len());
        let mut names = Vec::with_capacity(blocks.len());
        let mut column_names = Vec::with_capacity(p);
        let mut start = 0;
        for (name, m) in blocks {
            let k = m.ncols();
            columns.columns_mut(start, k).copy_from(&m);
            bounds.push((start, start + k));
            if k == 1 {
                column_names.push(name.clone());
            } else {
                column_names.extend((1..=k).map(|j| format!("{name}[{j}]")));
            }
            names.push(name);
            start += k;
        }
        let g = bounds.len();
        let mut d = Self::new(columns, bounds, vec![T::one(); g])?;
        d.names = names;
        d.column_names = column_names;
        Ok(d)
    }

    /// Every column its own group of size 1.
    pub fn singletons(columns: DMatrix<T>) -> Result<Self> {
        let p = columns.ncols();
        Self::new(columns, (0..p).map(|j| (j, j + 1)).collect(), vec![T::one(); p])
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.bounds.len() {
            return Err(Error::InvalidDesign("one name per group required".into()));
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.columns.ncols() {
            return Err(Error::InvalidDesign("one name per column required".into()));
        }
        self.column_names = names;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Result<Self> {
        if weights.len() != self.bounds.len() || weights.iter().any(|w| !(*w > T::zero())) {
            return Err(Error::InvalidDesign("weights must be positive, one per group".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.bounds.len()
    }

    pub fn columns(&self) -> &DMatrix<T> {
        &self.columns
    }

    pub fn bounds(&self) -> &[(usize, usize)] {
        &self.bounds
    }

    pub fn range(&self, g: usize) -> std::ops::Range<usize> {
        let (s, e) = self.bounds[g];
        s..e
    }

    pub fn group_size(&self, g: usize) -> usize {
        let (s, e) = self.bounds[g];
        e - s
    }

    pub fn group(&self, g: usize) -> DMatrixView<'_, T> {
        let (s, e) = self.bounds[g];
        self.columns.columns(s, e - s)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, g: usize) -> T {
        self.weights[g]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, g: usize) -> &str {
        &self.names[g]
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Frobenius norms divided out by [`normalize_groups`](Self::normalize_groups)
    /// (all 1 for a design that was never normalized).
    pub fn scales(&self) -> &[T] {
        &self.scales
    }

    /// Group submatrix on its pre-normalization scale.
    pub fn raw_group(&self, g: usize) -> DMatrix<T> {
        self.group(g).into_owned() * self.scales[g]
    }

    pub fn frobenius(&self, g: usize) -> T {
        self.group(g).norm()
    }

    /// ‖X_gᵀ r‖₂ / w_g.
    pub fn group_norm(&self, g: usize, r: &DVector<T>) -> T {
        self.group(g).tr_mul(r).norm() / self.weights[g]
    }

    /// Concatenation of the listed groups' columns, in order.
    pub fn submatrix(&self, groups: &[usize]) -> DMatrix<T> {
        let cols: Vec<usize> = groups.iter().flat_map(|&g| self.range(g)).collect();
        self.columns.select_columns(cols.iter())
    }

    /// Scales each group to unit Frobenius norm; weights are left alone.
    pub fn normalize_groups(mut self) -> Result<Self> {
        for g in 0..self.n_groups() {
            let f = self.frobenius(g);
            if !(f > T::zero()) {
                return Err(Error::ZeroNormGroup { group: g });
            }
            let (s, e) = self.bounds[g];
            let mut block = self.columns.columns_mut(s, e - s);
            block /= f;
            self.scales[g] *= f;
        }
        self.normalized = true;
        Ok(self)
    }

    /// Replaces the column matrix, keeping the grouping metadata.
    pub(crate) fn with_columns(&self, columns: DMatrix<T>) -> Self {
        debug_assert_eq!(columns.shape(), self.columns.shape());
        Self { columns, ..self.clone() }
    }

    pub fn check_normalized(&self) -> bool {
        (0..self.n_groups())
            .all(|g| (self.frobenius(g).to_f64_lossy() - 1.0).abs() <= NORM_TOL * 10.0)
    }
}

/// Full indicator encoding of a categorical variable with levels `1..=n_levels`.
pub fn encode_categorical<T: Float>(levels: &[usize], n_levels: usize) -> Result<DMatrix<T>> {
    let mut counts = vec![0usize; n_levels];
    for &l in levels {
        if l == 0 || l > n_levels {
            return Err(Error::LevelOutOfRange { value: l, levels: n_levels });
        }
        counts[l - 1] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyLevel { level: empty + 1, levels: n_levels });
    }
    let mut m = DMatrix::zeros(levels.len(), n_levels);
    for (i, &l) in levels.iter().enumerate() {
        m[(i, l - 1)] = T::one();
    }
    Ok(m)
}

/// Gaussian noise: σ²·I or a full covariance Σ.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel<T: Float> {
    Scalar { sigma: T },
    Full { cov: DMatrix<T>, factor: DMatrix<T> },
}

impl<T: Float> Default for NoiseModel<T> {
    fn default() -> Self {
        NoiseModel::Scalar { sigma: T::one() }
    }
}

impl<T: Float> NoiseModel<T> {
    pub fn scalar(sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::InvalidNoise(format!("sigma must be positive, got {sigma}")));
        }
        Ok(NoiseModel::Scalar { sigma })
    }

    /// Symmetric PSD covariance, both checked to 1e-10 relative tolerance.
    pub fn full(cov: DMatrix<T>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::InvalidNoise("covariance must be square".into()));
        }
        let scale = cov.amax();
        let tol = T::lit(1e-10) * scale;
        if (&cov - cov.transpose()).amax() > tol {
            return Err(Error::InvalidNoise("covariance is not symmetric".into()));
        }
        let eig = crate::linalg::symmetrize(&cov).symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -tol) {
            return Err(Error::InvalidNoise("covariance has a negative eigenvalue".into()));
        }
        let roots = eig.eigenvalues.map(|l| l.max(T::zero()).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(NoiseModel::Full { cov, factor })
    }

    /// (1 − ρ)·I + ρ·11ᵀ scaled by σ².
    pub fn equicorrelated(n: usize, sigma: T, rho: T) -> Result<Self> {
        if rho == T::zero() {
            return Self::scalar(sigma);
        }
        let s2 = sigma * sigma;
        let cov = DMatrix::from_fn(n, n, |i, j| if i == j { s2 } else { s2 * rho });
        Self::full(cov)
    }

    pub fn sigma(&self) -> Option<T> {
        match self {
            NoiseModel::Scalar { sigma } => Some(*sigma),
            NoiseModel::Full { .. } => None,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            NoiseModel::Scalar { .. } => None,
            NoiseModel::Full { cov, .. } => Some(cov.nrows()),
        }
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        match self.dim() {
            Some(d) if d != n => Err(Error::DimensionMismatch(format!(
                "noise covariance is {d}×{d}, response has length {n}"
            ))),
            _ => Ok(()),
        }
    }

    /// Σ·m.
    pub fn apply(&self, m: &DMatrix<T>) -> DMatrix<T> {
        match self {
            NoiseModel::Scalar { sigma } => m * (*sigma * *sigma),
            NoiseModel::Full { cov, .. } => cov * m,
        }
    }

    pub fn apply_vec(&self, v: &DVector<T>) -> DVector<T> {
        match self {
            NoiseModel::Scalar { sigma } => v * (*sigma * *sigma),
            NoiseModel::Full { cov, .. } => cov * v,
        }
    }

    /// One draw ε ~ N(0, Σ) of length `n`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DVector<T> {
        let z = DVector::from_fn(n, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
        match self {
            NoiseModel::Scalar { sigma } => z * *sigma,
            NoiseModel::Full { factor, .. } => factor * z,
        }
    }

    /// `m` draws as the columns of an n × m matrix.
    pub fn sample_matrix<R: Rng + ?Sized>(&self, n: usize, m: usize, rng: &mut R) -> DMatrix<T> {
        let z = DMatrix::from_fn(n, m, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
        match self {
            NoiseModel::Scalar { sigma } => z * *sigma,
            NoiseModel::Full { factor, .. } => factor * z,
        }
    }
}

/// Response vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Response<T: Float>(DVector<T>);

impl<T: Float> Response<T> {
    pub fn new(y: DVector<T>) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("response has non-finite entries".into()));
        }
        Ok(Self(y))
    }

    pub fn values(&self) -> &DVector<T> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_matches(&self, design: &GroupedDesign<T>) -> Result<()> {
        if self.0.len() != design.n_rows() {
            return Err(Error::DimensionMismatch(format!(
                "response has length {}, design has {} rows",
                self.0.len(),
                design.n_rows()
            )));
        }
        Ok(())
    }

    pub fn into_inner(self) -> DVector<T> {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_design(seed: u64) -> GroupedDesign<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = DMatrix::from_fn(10, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        GroupedDesign::new(cols, vec![(0, 1), (1, 3), (3, 6)], vec![1.0; 3]).unwrap()
    }

    #[test]
    fn normalize_scales_column() {
        let d = GroupedDesign::<f64>::singletons(DMatrix::from_column_slice(2, 1, &[3.0, 4.0])).unwrap();
        let d = d.normalize_groups().unwrap();
        assert!((d.columns()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((d.columns()[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(d.scales(), &[5.0]);
        assert!(d.is_normalized());
    }

    #[test]
    fn normalize_is_idempotent() {
        let d = random_design(1).normalize_groups().unwrap();
        let again = d.clone().normalize_groups().unwrap();
        assert!((again.columns() - d.columns()).amax() < 1e-12);
    }

    #[test]
    fn normalized_groups_have_unit_norm() {
        let d = random_design(2).normalize_groups().unwrap();
        for g in 0..3 {
            let block = d.group(g);
            let f: f64 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((f - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_preserves_column_spaces() {
        let raw = random_design(3);
        let d = raw.clone().normalize_groups().unwrap();
        for g in 0..3 {
            let q0 = linalg::column_basis(&raw.group(g).into_owned()).unwrap();
            let q1 = linalg::column_basis(&d.group(g).into_owned()).unwrap();
            let p0 = &q0 * q0.transpose();
            let p1 = &q1 * q1.transpose();
            assert!((p0 - p1).amax() < 1e-10);
        }
    }

    #[test]
    fn zero_norm_group_is_reported() {
        let mut cols = DMatrix::from_element(3, 3, 1.0);
        cols.column_mut(2).fill(0.0);
        let d = GroupedDesign::new(cols, vec![(0, 2), (2, 3)], vec![1.0, 1.0]).unwrap();
        match d.normalize_groups() {
            Err(Error::ZeroNormGroup { group }) => assert_eq!(group, 1),
            other => panic!("expected zero-norm error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_ranges_and_weights() {
        let cols = DMatrix::<f64>::zeros(2, 3);
        assert!(GroupedDesign::new(cols.clone(), vec![(0, 1), (2, 3)], vec![1.0, 1.0]).is_err());
        assert!(GroupedDesign::new(cols.clone(), vec![(0, 2)], vec![1.0]).is_err());
        assert!(GroupedDesign::new(cols, vec![(0, 1), (1, 3)], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn encode_small_example() {
        let m: DMatrix<f64> = encode_categorical(&[1, 2, 1], 2).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]));
        let c: DMatrix<f64> = encode_categorical(&[1, 1, 1], 1).unwrap();
        assert_eq!(c, DMatrix::from_element(3, 1, 1.0));
    }

    #[test]
    fn encode_rejects_empty_level() {
        assert!(matches!(
            encode_categorical::<f64>(&[1, 1, 3], 3),
            Err(Error::EmptyLevel { level: 2, .. })
        ));
    }

    #[test]
    fn encode_column_sums_count_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut levels: Vec<usize> = (0..40).map(|_| rng.random_range(1..=4)).collect();
        levels[..4].copy_from_slice(&[1, 2, 3, 4]);
        let m: DMatrix<f64> = encode_categorical(&levels, 4).unwrap();
        for l in 1..=4 {
            let count = levels.iter().filter(|&&v| v == l).count() as f64;
            assert_eq!(m.column(l - 1).sum(), count);
        }
    }

    #[test]
    fn group_norm_examples() {
        let u = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let d = GroupedDesign::singletons(u).unwrap();
        let r = DVector::from_vec(vec![0.0, 2.0, 0.0]);
        assert_eq!(d.group_norm(0, &r), 2.0);
        let r = DVector::from_vec(vec![5.0, 0.0, -1.0]);
        assert_eq!(d.group_norm(0, &r), 0.0);
    }

    #[test]
    fn group_norm_matches_explicit_product() {
        let d = random_design(4).with_weights(vec![1.0, 2.0, 0.5]).unwrap();
        let r = DVector::from_fn(10, |i, _| (i as f64).sin());
        for g in 0..3 {
            let block = d.group(g);
            let mut acc = 0.0;
            for j in 0..block.ncols() {
                let mut dot = 0.0;
                for i in 0..10 {
                    dot += block[(i, j)] * r[i];
                }
                acc += dot * dot;
            }
            let expected = acc.sqrt() / d.weight(g);
            assert!((d.group_norm(g, &r) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn full_noise_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(NoiseModel::full(bad).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(NoiseModel::full(asym).is_err());
        assert!(NoiseModel::<f64>::scalar(0.0).is_err());
        let ok = NoiseModel::equicorrelated(4, 1.0, 0.1).unwrap();
        let NoiseModel::Full { cov, factor } = &ok else { panic!() };
        assert!((factor * factor.transpose() - cov).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn group_norm_is_absolutely_homogeneous(c in -50.0f64..50.0, seed in 0u64..200) {
            let d = random_design(seed);
            let r = DVector::from_fn(10, |i, _| ((i as f64) * 0.7 + seed as f64).cos());
            for g in 0..3 {
                let lhs = d.group_norm(g, &(&r * c));
                let rhs = c.abs() * d.group_norm(g, &r);
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
            }
        }

        #[test]
        fn encoded_rows_sum_to_one(levels in proptest::collection::vec(1usize..=3, 3..30)) {
            let mut levels = levels;
            levels[0] = 1; levels[1] = 2; levels[2] = 3;
            let m: DMatrix<f64> = encode_categorical(&levels, 3).unwrap();
            for i in 0..m.nrows() {
                prop_assert_eq!(m.row(i).sum(), 1.0);
            }
        }
    }
}
