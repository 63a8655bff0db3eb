//! Monte Carlo p-value for the maximal group norm under pure noise.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::grouped_model::{GroupedDesign, NoiseModel};
use crate::rng::{self, role};

/// Samples per independent random stream.
pub const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub pvalue: f64,
    pub samples: usize,
    pub exceedances: usize,
    pub std_error: f64,
}

impl McEstimate {
    fn new(exceedances: usize, samples: usize) -> Self {
        let pvalue = (1 + exceedances) as f64 / (samples + 1) as f64;
        let std_error = (pvalue * (1.0 - pvalue) / samples as f64).sqrt();
        Self { pvalue, samples, exceedances, std_error }
    }
}

/// `m` draws of `max_{h ∈ groups} ‖X_hᵀz‖/w_h` with `z ~ N(0, Σ)`.
///
/// Draws come in chunks of [`CHUNK`], chunk `c` from stream
/// `(seed, stream_id, MONTE_CARLO + c)`, so the sample does not depend on
/// the thread count.
pub fn max_chi_null_sample<T: Float>(
    design: &GroupedDesign<T>,
    noise: &NoiseModel<T>,
    groups: &[usize],
    m: usize,
    seed: u64,
    stream_id: u64,
) -> Result<Vec<T>> {
    noise.check_dim(design.n_rows())?;
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no groups to maximize over".into()));
    }
    let n = design.n_rows();
    let chunks = m.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let size = CHUNK.min(m - c * CHUNK);
            let mut r = rng::stream(seed, stream_id, role::MONTE_CARLO + c as u64);
            let z = noise.sample_matrix(n, size, &mut r);
            let xz = design.columns().tr_mul(&z);
            (0..size)
                .map(|j| {
                    groups
                        .iter()
                        .map(|&h| {
                            let range = design.range(h);
                            xz.view((range.start, j), (range.len(), 1)).norm() / design.weight(h)
                        })
                        .fold(T::zero(), |a, b| a.max(b))
                })
                .collect()
        })
        .collect();
    Ok(per_chunk.into_iter().flatten().collect())
}

/// Add-one smoothed exceedance probability of `observed` in `sample`.
pub fn mc_pvalue<T: Float>(observed: T, sample: &[T]) -> McEstimate {
    let exceed = sample.iter().filter(|&&s| s >= observed).count();
    McEstimate::new(exceed, sample.len())
}

/// Monte Carlo p-value of group `g` entering, against the maximum over the
/// inactive set captured before `g` is added.
#[allow(clippy::too_many_arguments)]
pub fn max_chi_pvalue<T: Float>(
    y: &DVector<T>,
    design: &GroupedDesign<T>,
    noise: &NoiseModel<T>,
    inactive: &[usize],
    g: usize,
    m: usize,
    seed: u64,
    stream_id: u64,
) -> Result<McEstimate> {
    if m == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if !inactive.contains(&g) {
        return Err(Error::InvalidArgument(format!("group {g} is not in the inactive set")));
    }
    if y.len() != design.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "response has length {}, design has {} rows",
            y.len(),
            design.n_rows()
        )));
    }
    let observed = design.group_norm(g, y);
    let sample = max_chi_null_sample(design, noise, inactive, m, seed, stream_id)?;
    Ok(mc_pvalue(observed, &sample))
}
