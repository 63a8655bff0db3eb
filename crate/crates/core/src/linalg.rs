//! Dense linear algebra helpers; singular value decompositions come from faer.
//!
//! Decompositions run in f64 whatever the scalar type.

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::float::Float;

struct ThinSvd<T> {
    u: DMatrix<T>,
    s: Vec<T>,
    v: DMatrix<T>,
}

fn to_faer<T: Float>(m: &DMatrix<T>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].to_f64_lossy())
}

fn from_faer<T: Float>(m: faer::MatRef<'_, f64>) -> DMatrix<T> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| T::lit(m[(i, j)]))
}

fn svd_failed<E: std::fmt::Debug>(e: E) -> Error {
    Error::Numerical(format!("singular value decomposition failed: {e:?}"))
}

fn svd<T: Float>(m: &DMatrix<T>) -> Result<ThinSvd<T>> {
    let dec = to_faer(m).thin_svd().map_err(svd_failed)?;
    let sv = dec.S().column_vector();
    Ok(ThinSvd {
        u: from_faer(dec.U()),
        s: (0..sv.nrows()).map(|i| T::lit(sv[i])).collect(),
        v: from_faer(dec.V()),
    })
}

fn cutoff<T: Float>(singular: &[T]) -> T {
    let max = singular.iter().copied().fold(T::zero(), |a, b| a.max(b));
    max * T::rank_rtol()
}

fn kept<T: Float>(singular: &[T]) -> Vec<usize> {
    let tol = cutoff(singular);
    (0..singular.len()).filter(|&i| singular[i] > tol && singular[i] > T::zero()).collect()
}

/// Numerical rank with the crate-wide relative threshold.
pub fn rank<T: Float>(m: &DMatrix<T>) -> Result<usize> {
    if m.is_empty() {
        return Ok(0);
    }
    let s: Vec<T> = to_faer(m).singular_values().map_err(svd_failed)?.into_iter().map(T::lit).collect();
    Ok(kept(&s).len())
}

/// Orthonormal basis (n × rank) of the column space of `m`.
pub fn column_basis<T: Float>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if m.is_empty() {
        return Ok(DMatrix::zeros(m.nrows(), 0));
    }
    let dec = svd(m)?;
    Ok(dec.u.select_columns(kept(&dec.s).iter()))
}

/// Moore–Penrose pseudoinverse.
pub fn pinv<T: Float>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    pinv_above(m, T::zero())
}

/// Pseudoinverse that also treats singular values `≤ floor` as zero, for
/// matrices whose scale is set by a larger problem they were taken from.
pub fn pinv_above<T: Float>(m: &DMatrix<T>, floor: T) -> Result<DMatrix<T>> {
    if m.is_empty() {
        return Ok(DMatrix::zeros(m.ncols(), m.nrows()));
    }
    let dec = svd(m)?;
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for i in kept(&dec.s).into_iter().filter(|&i| dec.s[i] > floor) {
        out += (dec.v.column(i) * dec.u.column(i).transpose()) / dec.s[i];
    }
    Ok(out)
}

/// Minimum-norm least-squares solution of `x β ≈ y`.
pub fn lstsq<T: Float>(x: &DMatrix<T>, y: &DVector<T>) -> Result<DVector<T>> {
    Ok(pinv(x)? * y)
}

/// Applies `I − Q Qᵀ` to `v` in place, `Q` having orthonormal columns.
pub fn project_out<T: Float>(q: &DMatrix<T>, v: &mut DVector<T>) {
    if q.ncols() == 0 {
        return;
    }
    let coef = q.tr_mul(v);
    *v -= q * coef;
}

/// Orthonormal basis of the complement of the unit vector `eta` in R^p,
/// as a p × (p − 1) matrix, by modified Gram–Schmidt over the canonical basis.
pub fn complement_basis<T: Float>(eta: &DVector<T>) -> DMatrix<T> {
    let p = eta.len();
    let mut basis: Vec<DVector<T>> = Vec::with_capacity(p);
    basis.push(eta.clone());
    let drop_tol = T::lit(1e-8);
    for j in 0..p {
        if basis.len() == p {
            break;
        }
        let mut v = DVector::zeros(p);
        v[j] = T::one();
        // two passes keep the basis orthonormal to working precision
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, T::one());
            }
        }
        let nv = v.norm();
        if nv > drop_tol {
            basis.push(v / nv);
        }
    }
    let cols: Vec<DVector<T>> = basis.into_iter().skip(1).collect();
    if cols.is_empty() {
        DMatrix::zeros(p, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Symmetric part `(m + mᵀ)/2`.
pub fn symmetrize<T: Float>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn basis_spans_repeated_columns() {
        // [u, u, v, u∘v]: exactly rank 3
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = DVector::from_fn(80, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = DVector::from_fn(80, |_, _| rng.sample::<f64, _>(StandardNormal));
            let m = DMatrix::from_columns(&[u.clone(), u.clone(), v.clone(), u.component_mul(&v)]);
            let b = column_basis(&m).unwrap();
            assert_eq!(b.ncols(), 3);
            assert!((&m - &b * b.tr_mul(&m)).amax() < 1e-10, "seed {seed}");
            let p = pinv(&m).unwrap();
            assert!((&m * &p * &m - &m).amax() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn floor_drops_small_singular_values() {
        let m = DMatrix::from_element(1, 1, 3e-33_f64);
        assert!((pinv(&m).unwrap()[(0, 0)] * 3e-33 - 1.0).abs() < 1e-14);
        assert_eq!(pinv_above(&m, 1e-12).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn rank_of_full_encoding_is_deficient() {
        // two full indicator encodings side by side share the all-ones column
        let x = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 1.0, 0.0, //
            1.0, 0.0, 0.0, 1.0, //
            0.0, 1.0, 0.0, 1.0,
        ]);
        assert_eq!(rank(&x).unwrap(), 3);
    }

    #[test]
    fn pinv_satisfies_penrose_identity() {
        let x = DMatrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let xp = pinv(&x).unwrap();
        let back = &x * &xp * &x;
        assert!((back - &x).amax() < 1e-10);
    }

    #[test]
    fn complement_basis_is_orthonormal_and_orthogonal_to_eta() {
        let eta = DVector::from_vec(vec![0.6, 0.0, 0.8]);
        let v = complement_basis(&eta);
        assert_eq!(v.ncols(), 2);
        assert!((v.tr_mul(&v) - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(v.tr_mul(&eta).amax() < 1e-12);
    }

    #[test]
    fn complement_of_scalar_is_empty() {
        let eta = DVector::from_vec(vec![-1.0]);
        assert_eq!(complement_basis(&eta).ncols(), 0);
    }

    #[test]
    fn column_basis_projector_is_idempotent() {
        let x = DMatrix::from_fn(20, 3, |i, j| ((i * 13 + j * 5 + i * j) % 11) as f64 - 5.0);
        let q = column_basis(&x).unwrap();
        let p = &q * q.transpose();
        assert!((&p * &p - &p).amax() < 1e-10);
    }
}
