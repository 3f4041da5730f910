//! The nabla functionals of the smoothed log-likelihood and the Fenchel
//! certificate for its maximizer.
//!
//! A distribution function is represented by its values at the grid nodes
//! `t_0, ..., t_m`, with `F(t_0) = 0`. With node weights `w_i` the discrete
//! criterion has partial derivatives `w_k nabla_F(t_k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::smoothing::SmoothedDensities;
use crate::scalar::Scalar;

/// Threshold on grid increments that marks a point of increase.
pub const INCREASE_THRESHOLD: f64 = 1e-8;

/// Nondecreasing grid function with values in `[0, 1]` and fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneEstimate<T> {
    /// Values at `t_0, ..., t_m`.
    pub values: Vec<T>,
    pub diagnostics: Diagnostics<T>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics<T> {
    pub loglik: Option<T>,
    pub iterations: usize,
    pub em_steps: usize,
    pub icm_steps: usize,
    /// ICM steps whose line search gave up.
    pub stalls: usize,
    /// Denominators that hit the floor while carrying positive density.
    pub degenerate_terms: usize,
    pub converged: bool,
    pub report: Option<DualityReport<T>>,
}

impl<T: Scalar> MonotoneEstimate<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values, diagnostics: Diagnostics::default() }
    }

    /// Monotone, within `[0, 1]`, and zero at the origin.
    pub fn is_valid(&self) -> bool {
        self.values.first().is_some_and(|&v| v == T::zero())
            && self.values.windows(2).all(|p| p[1] >= p[0])
            && self.values.iter().all(|&v| v >= T::zero() && v <= T::one())
    }
}

/// One-sided integrals of `h / (F difference)` and of `h / (F difference)^2`
/// at every node.
#[derive(Debug, Clone)]
pub(crate) struct PairTerms<T> {
    /// `sum_{i<k} w_i h(i, k) / (F_k - F_i)`
    pub left: Vec<T>,
    /// `sum_{j>k} w_j h(k, j) / (F_j - F_k)`
    pub right: Vec<T>,
    pub left_sq: Vec<T>,
    pub right_sq: Vec<T>,
    /// Pairs `(i, j)` with positive density and difference below the floor.
    pub degenerate: Vec<(usize, usize)>,
}

pub(crate) fn pair_terms<T: Scalar>(
    f: &[T],
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    floor: T,
    squares: bool,
) -> PairTerms<T> {
    let n = f.len();
    let w = grid.weights();
    let mut out = PairTerms {
        left: vec![T::zero(); n],
        right: vec![T::zero(); n],
        left_sq: vec![T::zero(); if squares { n } else { 0 }],
        right_sq: vec![T::zero(); if squares { n } else { 0 }],
        degenerate: Vec::new(),
    };
    for i in 0..n {
        let (start, row) = dens.h.row(i);
        let fi = f[i];
        let mut right = T::zero();
        let mut right_sq = T::zero();
        for (k, &h) in row.iter().enumerate() {
            if h == T::zero() {
                continue;
            }
            let j = start + k;
            let mut diff = f[j] - fi;
            if diff < floor {
                out.degenerate.push((i, j));
                diff = floor;
            }
            let q = h / diff;
            right += w[j] * q;
            out.left[j] += w[i] * q;
            if squares {
                let q2 = q / diff;
                right_sq += w[j] * q2;
                out.left_sq[j] += w[i] * q2;
            }
        }
        out.right[i] = right;
        if squares {
            out.right_sq[i] = right_sq;
        }
    }
    out
}

fn check_shape<T: Scalar>(f: &[T], dens: &SmoothedDensities<T>, grid: &Grid<T>) -> Result<()> {
    let n = grid.cells() + 1;
    if f.len() != n || dens.h1.len() != n || dens.h.size() != n {
        return Err(Error::InvalidArgument(format!(
            "estimate of length {} does not match grid with {} nodes",
            f.len(),
            n
        )));
    }
    Ok(())
}

fn nabla_from_terms<T: Scalar>(f: &[T], dens: &SmoothedDensities<T>, terms: &PairTerms<T>) -> Vec<T> {
    (0..f.len())
        .map(|k| {
            let fk = f[k];
            if k == 0 || fk <= T::zero() || fk >= T::one() {
                return T::zero();
            }
            dens.h1[k] / fk - dens.h2[k] / (T::one() - fk) + terms.left[k] - terms.right[k]
        })
        .collect()
}

fn nabla_bar_from_terms<T: Scalar>(f: &[T], dens: &SmoothedDensities<T>, terms: &PairTerms<T>) -> Vec<T> {
    (0..f.len())
        .map(|k| {
            if k == 0 {
                return T::zero();
            }
            let fk = f[k];
            let base = dens.h1[k] * (T::one() - fk) - dens.h2[k] * fk;
            let s = fk * (T::one() - fk);
            if s == T::zero() {
                base
            } else {
                base + s * (terms.left[k] - terms.right[k])
            }
        })
        .collect()
}

fn first_degenerate<T: Scalar>(f: &[T], terms: &PairTerms<T>) -> Result<()> {
    match terms.degenerate.first() {
        Some(&(i, j)) => Err(Error::Degenerate { index: j, value: (f[j] - f[i]).to_f64_lossy() }),
        None => Ok(()),
    }
}

/// `nabla_F` at every node (zero at the origin and wherever `F` is 0 or 1).
///
/// Fails on a positive density multiplying a zero (or negative) difference.
pub fn nabla<T: Scalar>(f: &[T], dens: &SmoothedDensities<T>, grid: &Grid<T>) -> Result<Vec<T>> {
    check_shape(f, dens, grid)?;
    let terms = pair_terms(f, dens, grid, T::min_positive_value(), false);
    first_degenerate(f, &terms)?;
    Ok(nabla_from_terms(f, dens, &terms))
}

/// `nabla_bar_F = F (1 - F) nabla_F`, written so that it stays finite at
/// `F in {0, 1}`.
pub fn nabla_bar<T: Scalar>(f: &[T], dens: &SmoothedDensities<T>, grid: &Grid<T>) -> Result<Vec<T>> {
    check_shape(f, dens, grid)?;
    let terms = pair_terms(f, dens, grid, T::min_positive_value(), false);
    first_degenerate(f, &terms)?;
    Ok(nabla_bar_from_terms(f, dens, &terms))
}

/// Outcome of the three Fenchel checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport<T> {
    pub nabla: Vec<T>,
    pub nabla_bar: Vec<T>,
    /// Running weighted sum of `nabla_bar` over `t_1, ..., t_k`.
    pub cum_nabla_bar: Vec<T>,
    /// Weighted sum of `nabla` over the grid.
    pub total: T,
    /// `max(0, -min_k cum_nabla_bar_k)`.
    pub cumulative_violation: T,
    /// Largest `|nabla_bar|` or `|cum_nabla_bar|` at a point of increase.
    pub residual_at_increase: T,
    /// Largest of the three residuals.
    pub max_violation: T,
    pub tol: T,
    pub cumulative_ok: bool,
    pub total_ok: bool,
    pub increase_ok: bool,
    /// `F(M) > 0`; the characterization assumes it.
    pub positive_at_end: bool,
    pub degenerate_terms: usize,
}

impl<T: Scalar> DualityReport<T> {
    pub fn passed(&self) -> bool {
        self.cumulative_ok && self.total_ok && self.increase_ok
    }
}

/// Interior nodes `t_k`, `0 < k < m`, where `F` increases on both adjacent
/// cells.
pub fn increase_points<T: Scalar>(f: &[T]) -> Vec<usize> {
    let thr = T::lit(INCREASE_THRESHOLD);
    (1..f.len().saturating_sub(1))
        .filter(|&k| f[k] - f[k - 1] > thr && f[k + 1] - f[k] > thr)
        .collect()
}

pub(crate) fn report_from_terms<T: Scalar>(
    f: &[T],
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    terms: &PairTerms<T>,
    tol: T,
) -> DualityReport<T> {
    let nab = nabla_from_terms(f, dens, terms);
    let bar = nabla_bar_from_terms(f, dens, terms);
    let w = grid.weights();
    let mut cum = vec![T::zero(); f.len()];
    let mut acc = T::zero();
    for k in 1..f.len() {
        acc += w[k] * bar[k];
        cum[k] = acc;
    }
    let total: T = (1..f.len()).map(|k| w[k] * nab[k]).sum();
    let min_cum = cum[1..].iter().copied().fold(T::infinity(), T::min);
    let cumulative_violation = (-min_cum).max(T::zero());
    let residual_at_increase = increase_points(f)
        .into_iter()
        .map(|k| bar[k].abs().max(cum[k].abs()))
        .fold(T::zero(), T::max);
    let max_violation = cumulative_violation.max(total.abs()).max(residual_at_increase);
    DualityReport {
        cumulative_ok: min_cum >= -tol,
        total_ok: total.abs() <= tol,
        increase_ok: residual_at_increase <= tol,
        positive_at_end: f.last().is_some_and(|&v| v > T::zero()),
        degenerate_terms: terms.degenerate.len(),
        nabla: nab,
        nabla_bar: bar,
        cum_nabla_bar: cum,
        total,
        cumulative_violation,
        residual_at_increase,
        max_violation,
        tol,
    }
}

/// Evaluates the Fenchel conditions at absolute tolerance `tol`: nonnegative
/// running sums of `nabla_bar`, vanishing total of `nabla`, and vanishing
/// `nabla_bar` together with its running sum at points of increase.
pub fn check_fenchel<T: Scalar>(
    f: &[T],
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    tol: T,
) -> Result<DualityReport<T>> {
    check_shape(f, dens, grid)?;
    let terms = pair_terms(f, dens, grid, T::min_positive_value(), false);
    Ok(report_from_terms(f, dens, grid, &terms, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smoothing::PairMatrix;
    use approx::assert_relative_eq;

    fn dens_from(h1: Vec<f64>, h2: Vec<f64>, h: PairMatrix<f64>) -> SmoothedDensities<f64> {
        SmoothedDensities { h1, h2, h, bandwidth: 0.2, epsilon: 0.1, normalization: 1.0 }
    }

    fn random_dens(grid: &Grid<f64>, seed: u64) -> SmoothedDensities<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = grid.cells() + 1;
        let mut h = PairMatrix::zeros(n, grid.gap_cells(0.1));
        for i in 0..n {
            for j in i..n {
                h.set(i, j, rng.random_range(0.0..1.0));
            }
        }
        dens_from(
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
            h,
        )
    }

    #[test]
    fn cancellation_case() {
        let grid = Grid::new(2.0, 20).unwrap();
        let h1: Vec<f64> = (0..21).map(|i| 0.1 + 0.01 * i as f64).collect();
        let d = dens_from(h1.clone(), h1, PairMatrix::zeros(21, 1));
        let mut f = vec![0.5; 21];
        f[0] = 0.0;
        // a flat F away from the origin is a valid argument once h vanishes
        let nab = nabla(&f, &d, &grid).unwrap();
        let bar = nabla_bar(&f, &d, &grid).unwrap();
        assert!(nab.iter().all(|v| v.abs() < 1e-15));
        assert!(bar.iter().all(|v| v.abs() < 1e-15));
        let rep = check_fenchel(&f, &d, &grid, 0.0).unwrap();
        assert!(rep.passed());
    }

    #[test]
    fn zero_and_one_conventions() {
        let grid = Grid::new(2.0, 10).unwrap();
        let d = dens_from(vec![0.3; 11], vec![0.7; 11], PairMatrix::zeros(11, 1));
        let mut f: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        f[3] = 0.3;
        let nab = nabla(&f, &d, &grid).unwrap();
        assert_eq!(nab[0], 0.0);
        assert_eq!(nab[10], 0.0);
        let bar = nabla_bar(&f, &d, &grid).unwrap();
        assert_relative_eq!(bar[10], -0.7, epsilon = 1e-15);
        let g = vec![0.0; 11];
        let bar0 = nabla_bar(&g, &d, &grid).unwrap();
        assert_relative_eq!(bar0[4], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn nabla_bar_identity_and_degeneracy() {
        let grid = Grid::new(2.0, 30).unwrap();
        let d = random_dens(&grid, 2);
        let f: Vec<f64> = (0..31).map(|i| 0.9 * (i as f64 / 30.0).sqrt()).collect();
        let nab = nabla(&f, &d, &grid).unwrap();
        let bar = nabla_bar(&f, &d, &grid).unwrap();
        for k in 1..31 {
            assert!((bar[k] - f[k] * (1.0 - f[k]) * nab[k]).abs() <= 1e-12 * (1.0 + bar[k].abs()));
        }
        let mut flat = f.clone();
        for v in flat.iter_mut().skip(5) {
            *v = 0.5;
        }
        assert!(matches!(nabla(&flat, &d, &grid), Err(Error::Degenerate { .. })));
        let rep = check_fenchel(&flat, &d, &grid, 1e-5).unwrap();
        assert!(rep.degenerate_terms > 0);
    }

    #[test]
    fn nabla_is_scaled_gradient_of_discrete_criterion() {
        // finite-difference oracle on the criterion written out directly
        let grid = Grid::new(2.0, 16).unwrap();
        let d = random_dens(&grid, 9);
        let w = grid.weights().to_vec();
        let crit = |f: &[f64]| {
            let mut s = 0.0;
            for i in 1..f.len() {
                s += w[i] * (d.h1[i] * f[i].ln() + d.h2[i] * (1.0 - f[i]).ln());
            }
            for i in 0..f.len() {
                for j in i + 1..f.len() {
                    let h = d.h.get(i, j);
                    if h > 0.0 {
                        s += w[i] * w[j] * h * (f[j] - f[i]).ln();
                    }
                }
            }
            s
        };
        let f: Vec<f64> = (0..17).map(|i| if i == 0 { 0.0 } else { 0.05 + 0.9 * i as f64 / 16.0 }).collect();
        let nab = nabla(&f, &d, &grid).unwrap();
        for k in 1..17 {
            let e = 1e-6;
            let mut up = f.clone();
            up[k] += e;
            let mut dn = f.clone();
            dn[k] -= e;
            let fd = (crit(&up) - crit(&dn)) / (2.0 * e);
            assert!((fd - w[k] * nab[k]).abs() < 1e-6 * (1.0 + fd.abs()), "k = {k}");
        }
    }

    #[test]
    fn report_sums_consistent() {
        let grid = Grid::new(2.0, 25).unwrap();
        let d = random_dens(&grid, 4);
        let f: Vec<f64> = (0..26).map(|i| 0.95 * i as f64 / 25.0).collect();
        let rep = check_fenchel(&f, &d, &grid, 1e-5).unwrap();
        let direct: f64 = (1..26).map(|k| grid.weights()[k] * rep.nabla_bar[k]).sum();
        assert_relative_eq!(rep.cum_nabla_bar[25], direct, epsilon = 1e-12);
        assert!(!rep.passed());
        assert!(rep.positive_at_end);
        assert_eq!(increase_points(&f).len(), 24);
    }
}
