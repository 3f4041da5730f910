//! Greatest convex minorants of cusum diagrams, weighted isotonic regression
//! and the current status MSLE built on a smoothed cusum diagram.

use serde::{Deserialize, Serialize};

use crate::duality::{Diagnostics, MonotoneEstimate};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::Bandwidth;
use crate::sample::CurrentStatusRecord;
use crate::scalar::Scalar;

/// Points `(W_0, V_0) = (0, 0), (W_1, V_1), ..., (W_m, V_m)` with strictly
/// increasing abscissae.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumDiagram<T> {
    w: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> CusumDiagram<T> {
    pub fn new(w: Vec<T>, v: Vec<T>) -> Result<Self> {
        if w.len() != v.len() || w.len() < 2 {
            return Err(Error::InvalidArgument("cusum diagram needs two equally long vectors of length >= 2".into()));
        }
        if w[0] != T::zero() || v[0] != T::zero() {
            return Err(Error::InvalidArgument("cusum diagram must start at the origin".into()));
        }
        if w.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::InvalidArgument("cusum abscissae must be strictly increasing".into()));
        }
        Ok(Self { w, v })
    }

    /// Diagram of cumulative sums of positive weights and `weight * value`.
    pub fn from_weighted(values: &[T], weights: &[T]) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::InvalidArgument("values and weights differ in length".into()));
        }
        if weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        let mut w = Vec::with_capacity(values.len() + 1);
        let mut v = Vec::with_capacity(values.len() + 1);
        w.push(T::zero());
        v.push(T::zero());
        let (mut sw, mut sv) = (T::zero(), T::zero());
        for (&y, &wt) in values.iter().zip(weights) {
            sw += wt;
            sv += wt * y;
            w.push(sw);
            v.push(sv);
        }
        Self::new(w, v)
    }

    pub fn abscissae(&self) -> &[T] {
        &self.w
    }

    pub fn ordinates(&self) -> &[T] {
        &self.v
    }
}

/// Pool-adjacent-violators on increments `(dw_k, dv_k)`; returns the slope of
/// the greatest convex minorant over each increment. Zero-width increments
/// are absorbed by the block to their left (or right at the start).
pub(crate) fn pava_increments<T: Scalar>(dw: &[T], dv: &[T]) -> Vec<T> {
    let n = dw.len();
    // blocks: (total dw, total dv, number of increments)
    let mut blocks: Vec<(T, T, usize)> = Vec::with_capacity(n);
    let mut pending_zero = 0usize;
    for k in 0..n {
        if dw[k] <= T::zero() {
            match blocks.last_mut() {
                Some(last) => last.2 += 1,
                None => pending_zero += 1,
            }
            continue;
        }
        let mut cur = (dw[k], dv[k], 1 + pending_zero);
        pending_zero = 0;
        while let Some(&(pw, pv, pc)) = blocks.last() {
            // previous slope pv/pw must stay below cur slope
            if pv * cur.0 >= cur.1 * pw {
                blocks.pop();
                cur = (cur.0 + pw, cur.1 + pv, cur.2 + pc);
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(n);
    if blocks.is_empty() {
        return vec![T::zero(); n];
    }
    for (w, v, c) in blocks {
        let s = v / w;
        out.extend(std::iter::repeat_n(s, c));
    }
    // trailing zero increments with no block to their left
    out.extend(std::iter::repeat_n(*out.last().unwrap(), pending_zero));
    out
}

/// Left derivative of the greatest convex minorant at `W_1, ..., W_m`.
pub fn gcm_slopes<T: Scalar>(diagram: &CusumDiagram<T>) -> Vec<T> {
    let dw: Vec<T> = diagram.w.windows(2).map(|p| p[1] - p[0]).collect();
    let dv: Vec<T> = diagram.v.windows(2).map(|p| p[1] - p[0]).collect();
    pava_increments(&dw, &dv)
}

/// Values of the greatest convex minorant at the diagram abscissae.
pub fn gcm_values<T: Scalar>(diagram: &CusumDiagram<T>) -> Vec<T> {
    let slopes = gcm_slopes(diagram);
    let mut out = Vec::with_capacity(diagram.w.len());
    let mut acc = T::zero();
    out.push(acc);
    for (k, s) in slopes.iter().enumerate() {
        acc += *s * (diagram.w[k + 1] - diagram.w[k]);
        out.push(acc);
    }
    out
}

/// Weighted least squares projection onto nondecreasing vectors.
pub fn isotonic_ls<T: Scalar>(values: &[T], weights: &[T]) -> Result<Vec<T>> {
    if values.is_empty() {
        return Ok(Vec::new());
    }
    Ok(gcm_slopes(&CusumDiagram::from_weighted(values, weights)?))
}

/// MSLE for current status data: slopes of the greatest convex minorant of
/// the kernel-smoothed cusum diagram `(int IK_b(t - x) dG_n, int delta IK_b(t - x) dP_n)`
/// evaluated at the grid nodes, clipped to `[0, 1]`.
pub fn curstat_msle<T: Scalar>(
    records: &[CurrentStatusRecord<T>],
    b: T,
    grid: &Grid<T>,
) -> Result<MonotoneEstimate<T>> {
    let bw = Bandwidth::new(b)?;
    if records.is_empty() {
        return Err(Error::EmptySample);
    }
    let inv_n = T::one() / T::from_usize_lossy(records.len());
    let mut w = vec![T::zero()];
    let mut v = vec![T::zero()];
    for &t in grid.points() {
        let (mut sw, mut sv) = (T::zero(), T::zero());
        for r in records {
            let k = bw.integrated(t - r.t);
            sw += k;
            if r.delta {
                sv += k;
            }
        }
        w.push(sw * inv_n);
        v.push(sv * inv_n);
    }
    let dw: Vec<T> = w.windows(2).map(|p| p[1] - p[0]).collect();
    let dv: Vec<T> = v.windows(2).map(|p| p[1] - p[0]).collect();
    let values = pava_increments(&dw, &dv)
        .into_iter()
        .map(|s| s.max(T::zero()).min(T::one()))
        .collect();
    Ok(MonotoneEstimate { values, diagnostics: Diagnostics::default() })
}

/// Kernel ratio `g^delta_{n,b}(t) / g_{n,b}(t)` at the grid nodes; `None`
/// where no observation is within reach.
pub fn curstat_plugin<T: Scalar>(records: &[CurrentStatusRecord<T>], b: T, grid: &Grid<T>) -> Result<Vec<Option<T>>> {
    let bw = Bandwidth::new(b)?;
    Ok(grid
        .points()
        .iter()
        .map(|&t| {
            let (mut num, mut den) = (T::zero(), T::zero());
            for r in records {
                let k = bw.kernel(t - r.t);
                den += k;
                if r.delta {
                    num += k;
                }
            }
            (den > T::zero()).then(|| num / den)
        })
        .collect())
}
