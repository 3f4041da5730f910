//! Maximization of the discretized smoothed log-likelihood by EM, by
//! iterative convex minorant (ICM) steps with Armijo backtracking, and by the
//! hybrid alternating both.
//!
//! The EM step works on the masses `p_k = F(t_k) - F(t_{k-1})`, `k = 1..m`,
//! plus the mass `1 - F(M)` placed beyond `M`, so that sub-distribution
//! functions stay reachable.

use serde::{Deserialize, Serialize};

use crate::duality::{pair_terms, report_from_terms, Diagnostics, DualityReport, MonotoneEstimate, PairTerms};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::isotonics::pava_increments;
use crate::scalar::Scalar;
use crate::smoothing::SmoothedDensities;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Maximal number of hybrid cycles.
    pub max_iters: usize,
    /// Fenchel tolerance relative to `max |nabla_bar|` at the initial iterate.
    pub fenchel_tol: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub max_halvings: usize,
    pub em_per_cycle: usize,
    pub icm_per_cycle: usize,
    /// Floor on `F` differences inside logs and denominators.
    pub floor: f64,
    /// Lower bound on the ICM weights.
    pub weight_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            fenchel_tol: 1e-5,
            armijo_c: 0.01,
            armijo_shrink: 0.5,
            max_halvings: 60,
            em_per_cycle: 1,
            icm_per_cycle: 1,
            floor: 1e-12,
            weight_floor: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.armijo_c) || !unit(self.armijo_shrink) {
            return Err(Error::InvalidArgument("Armijo parameters must lie in (0, 1)".into()));
        }
        if self.max_iters == 0 || self.max_halvings == 0 || self.em_per_cycle + self.icm_per_cycle == 0 {
            return Err(Error::InvalidArgument("iteration counts must be positive".into()));
        }
        if !(self.fenchel_tol > 0.0 && self.floor > 0.0 && self.weight_floor > 0.0) {
            return Err(Error::InvalidArgument("tolerances and floors must be positive".into()));
        }
        Ok(())
    }
}

/// Discretized smoothed log-likelihood. Terms with zero density weight
/// contribute nothing; a positive weight on the log of a nonpositive number
/// gives `-inf`.
pub fn loglik<T: Scalar>(f: &[T], dens: &SmoothedDensities<T>, grid: &Grid<T>) -> T {
    let w = grid.weights();
    let mut s = T::zero();
    let log_term = |c: T, x: T| -> T {
        if c == T::zero() {
            T::zero()
        } else if x <= T::zero() {
            T::neg_infinity()
        } else {
            c * x.ln()
        }
    };
    for k in 1..f.len() {
        s += w[k] * (log_term(dens.h1[k], f[k]) + log_term(dens.h2[k], T::one() - f[k]));
    }
    for i in 0..f.len() {
        let (start, row) = dens.h.row(i);
        let mut r = T::zero();
        for (k, &h) in row.iter().enumerate() {
            let j = start + k;
            r += w[j] * log_term(h, f[j] - f[i]);
        }
        s += w[i] * r;
    }
    s
}

fn initial_estimate<T: Scalar>(grid: &Grid<T>) -> Vec<T> {
    let m = T::from_usize_lossy(grid.cells());
    let top = T::one() - T::lit(1e-6);
    (0..=grid.cells()).map(|k| T::from_usize_lossy(k) / m * top).collect()
}

/// Absolute Fenchel tolerance: `fenchel_tol * max |nabla_bar|` at `f`.
pub fn initial_tolerance<T: Scalar>(f: &[T], dens: &SmoothedDensities<T>, grid: &Grid<T>, config: &SolverConfig) -> T {
    let terms = pair_terms(f, dens, grid, T::lit(config.floor), false);
    let scale = report_from_terms(f, dens, grid, &terms, T::zero())
        .nabla_bar
        .iter()
        .fold(T::zero(), |a, &b| a.max(b.abs()));
    T::lit(config.fenchel_tol) * if scale > T::zero() { scale } else { T::one() }
}

fn validate_input<T: Scalar>(f: &[T], dens: &SmoothedDensities<T>, grid: &Grid<T>) -> Result<()> {
    let n = grid.cells() + 1;
    if f.len() != n || dens.h1.len() != n || dens.h2.len() != n || dens.h.size() != n {
        return Err(Error::InvalidArgument("estimate and densities must match the grid".into()));
    }
    Ok(())
}

/// One EM (self-consistency) step.
pub fn em_step<T: Scalar>(
    f: &[T],
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    config: &SolverConfig,
) -> Result<MonotoneEstimate<T>> {
    validate_input(f, dens, grid)?;
    let floor = T::lit(config.floor);
    let terms = pair_terms(f, dens, grid, floor, false);
    if let Some(&(i, j)) = terms.degenerate.first() {
        return Err(Error::Degenerate { index: j, value: (f[j] - f[i]).to_f64_lossy() });
    }
    let values = em_update(f, dens, grid, &terms, floor)?;
    Ok(MonotoneEstimate::new(values))
}

fn em_update<T: Scalar>(
    f: &[T],
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    terms: &PairTerms<T>,
    floor: T,
) -> Result<Vec<T>> {
    let m = f.len() - 1;
    let w = grid.weights();
    // suffix sums of h1 / F
    let mut r1 = vec![T::zero(); m + 2];
    for k in (1..=m).rev() {
        let mut term = T::zero();
        if dens.h1[k] > T::zero() {
            if f[k] < floor {
                return Err(Error::Degenerate { index: k, value: f[k].to_f64_lossy() });
            }
            term = w[k] * dens.h1[k] / f[k];
        }
        r1[k] = r1[k + 1] + term;
    }
    let mut score = vec![T::zero(); m + 2];
    let mut l2 = T::zero();
    let mut c = w[0] * terms.right[0];
    for k in 1..=m + 1 {
        score[k] = (r1[k] + l2 + c).max(T::zero());
        if k <= m {
            if dens.h2[k] > T::zero() {
                let q = T::one() - f[k];
                if q < floor {
                    return Err(Error::Degenerate { index: k, value: q.to_f64_lossy() });
                }
                l2 += w[k] * dens.h2[k] / q;
            }
            c += w[k] * (terms.right[k] - terms.left[k]);
        }
    }
    let mass = |k: usize| if k <= m { f[k] - f[k - 1] } else { T::one() - f[m] };
    let total: T = (1..=m + 1).map(|k| mass(k) * score[k]).sum();
    if !(total > T::zero()) {
        return Err(Error::ZeroMass);
    }
    let mut out = vec![T::zero(); m + 1];
    let mut acc = T::zero();
    for k in 1..=m {
        acc += mass(k) * score[k] / total;
        out[k] = acc.min(T::one());
    }
    Ok(out)
}

/// ICM weights `h1 + h2 - (1 - 2F)(A - B) + F(1 - F)(A2 + B2)`, the negative
/// diagonal derivative of `nabla_bar`, floored at `weight_floor`. `A`, `B`
/// are the one-sided integrals of `h / (F difference)` and `A2`, `B2` their
/// squared-denominator versions. The origin gets the floor value.
pub fn icm_weights<T: Scalar>(
    f: &[T],
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    config: &SolverConfig,
) -> Result<Vec<T>> {
    validate_input(f, dens, grid)?;
    let terms = pair_terms(f, dens, grid, T::lit(config.floor), true);
    if let Some(&(i, j)) = terms.degenerate.first() {
        return Err(Error::Degenerate { index: j, value: (f[j] - f[i]).to_f64_lossy() });
    }
    Ok(weights_from_terms(f, dens, &terms, T::lit(config.weight_floor)))
}

fn weights_from_terms<T: Scalar>(f: &[T], dens: &SmoothedDensities<T>, terms: &PairTerms<T>, floor: T) -> Vec<T> {
    let two = T::lit(2.0);
    (0..f.len())
        .map(|k| {
            if k == 0 {
                return floor;
            }
            let fk = f[k];
            let w = dens.h1[k] + dens.h2[k] - (T::one() - two * fk) * (terms.left[k] - terms.right[k])
                + fk * (T::one() - fk) * (terms.left_sq[k] + terms.right_sq[k]);
            if w.is_finite() { w.max(floor) } else { floor }
        })
        .collect()
}

/// Result of one ICM step.
#[derive(Debug, Clone, PartialEq)]
pub struct IcmOutcome<T> {
    pub estimate: MonotoneEstimate<T>,
    /// Accepted step length (0 when the iterate did not move).
    pub step: T,
    /// The line search gave up after `max_halvings` halvings.
    pub stalled: bool,
}

/// One ICM step: greatest convex minorant of the cusum diagram
/// `W = int w`, `V = int (F w + nabla_bar)`, clipped to `[0, 1]`, followed by
/// Armijo backtracking on the segment towards it.
pub fn icm_step<T: Scalar>(
    f: &[T],
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    config: &SolverConfig,
) -> Result<IcmOutcome<T>> {
    validate_input(f, dens, grid)?;
    let terms = pair_terms(f, dens, grid, T::lit(config.floor), true);
    Ok(icm_from_terms(f, dens, grid, config, &terms, loglik(f, dens, grid)))
}

fn icm_from_terms<T: Scalar>(
    f: &[T],
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    config: &SolverConfig,
    terms: &PairTerms<T>,
    current: T,
) -> IcmOutcome<T> {
    let m = f.len() - 1;
    let gw = grid.weights();
    let wts = weights_from_terms(f, dens, terms, T::lit(config.weight_floor));
    let report = report_from_terms(f, dens, grid, terms, T::zero());
    let bar = &report.nabla_bar;
    let dw: Vec<T> = (1..=m).map(|k| gw[k] * wts[k]).collect();
    let dv: Vec<T> = (1..=m).map(|k| gw[k] * (f[k] * wts[k] + bar[k])).collect();
    let slopes = pava_increments(&dw, &dv);
    let mut target = vec![T::zero(); m + 1];
    for k in 1..=m {
        target[k] = slopes[k - 1].max(T::zero()).min(T::one());
    }
    let delta: Vec<T> = target.iter().zip(f).map(|(&a, &b)| a - b).collect();
    let slope: T = (1..=m).map(|k| gw[k] * bar[k] * delta[k]).sum();
    let unchanged = |stalled| IcmOutcome { estimate: MonotoneEstimate::new(f.to_vec()), step: T::zero(), stalled };
    if !(slope > T::zero()) || delta.iter().all(|&d| d == T::zero()) {
        return unchanged(false);
    }
    let c = T::lit(config.armijo_c);
    let shrink = T::lit(config.armijo_shrink);
    let mut lambda = T::one();
    for _ in 0..=config.max_halvings {
        let cand: Vec<T> = f.iter().zip(&delta).map(|(&a, &d)| a + lambda * d).collect();
        let val = loglik(&cand, dens, grid);
        if val.is_finite() && val >= current + c * lambda * slope {
            return IcmOutcome { estimate: MonotoneEstimate::new(cand), step: lambda, stalled: false };
        }
        lambda *= shrink;
    }
    unchanged(true)
}

/// Hybrid EM/ICM maximization until the Fenchel conditions hold.
///
/// On non-convergence the last (highest likelihood) iterate is returned with
/// `converged = false`.
pub fn fit_msle<T: Scalar>(
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    config: &SolverConfig,
) -> Result<MonotoneEstimate<T>> {
    config.validate()?;
    let f0 = initial_estimate(grid);
    validate_input(&f0, dens, grid)?;
    let tol = initial_tolerance(&f0, dens, grid, config);
    run_hybrid(f0, dens, grid, config, tol, config.em_per_cycle, config.icm_per_cycle)
}

/// Pure EM for a fixed number of iterations, starting from the default
/// initial iterate. The Fenchel report uses the same tolerance rule as
/// [`fit_msle`].
pub fn fit_msle_em<T: Scalar>(
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    config: &SolverConfig,
    iterations: usize,
) -> Result<MonotoneEstimate<T>> {
    config.validate()?;
    let mut f = initial_estimate(grid);
    validate_input(&f, dens, grid)?;
    let floor = T::lit(config.floor);
    let tol = initial_tolerance(&f, dens, grid, config);
    for _ in 0..iterations {
        let terms = pair_terms(&f, dens, grid, floor, false);
        f = em_update(&f, dens, grid, &terms, floor)?;
    }
    let terms = pair_terms(&f, dens, grid, floor, false);
    let report = report_from_terms(&f, dens, grid, &terms, tol);
    let diagnostics = Diagnostics {
        loglik: Some(loglik(&f, dens, grid)),
        iterations,
        em_steps: iterations,
        converged: report.passed(),
        degenerate_terms: report.degenerate_terms,
        report: Some(report),
        ..Diagnostics::default()
    };
    Ok(MonotoneEstimate { values: f, diagnostics })
}

fn run_hybrid<T: Scalar>(
    mut f: Vec<T>,
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    config: &SolverConfig,
    tol: T,
    em_per_cycle: usize,
    icm_per_cycle: usize,
) -> Result<MonotoneEstimate<T>> {
    let floor = T::lit(config.floor);
    let mut diag = Diagnostics::default();
    let mut current = loglik(&f, dens, grid);
    let mut report: Option<DualityReport<T>> = None;
    for cycle in 0..config.max_iters {
        diag.iterations = cycle + 1;
        for _ in 0..em_per_cycle {
            let terms = pair_terms(&f, dens, grid, floor, false);
            if !terms.degenerate.is_empty() {
                diag.degenerate_terms += terms.degenerate.len();
                break;
            }
            match em_update(&f, dens, grid, &terms, floor) {
                Ok(next) => {
                    let val = loglik(&next, dens, grid);
                    if val >= current {
                        f = next;
                        current = val;
                        diag.em_steps += 1;
                    }
                }
                Err(Error::Degenerate { .. }) => {
                    diag.degenerate_terms += 1;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        for _ in 0..icm_per_cycle {
            let terms = pair_terms(&f, dens, grid, floor, true);
            let out = icm_from_terms(&f, dens, grid, config, &terms, current);
            diag.icm_steps += 1;
            if out.stalled {
                diag.stalls += 1;
            }
            if out.step > T::zero() {
                f = out.estimate.values;
                current = loglik(&f, dens, grid);
            }
        }
        let terms = pair_terms(&f, dens, grid, floor, false);
        let rep = report_from_terms(&f, dens, grid, &terms, tol);
        let done = rep.passed();
        report = Some(rep);
        if done {
            diag.converged = true;
            break;
        }
    }
    diag.loglik = Some(current);
    diag.report = report;
    Ok(MonotoneEstimate { values: f, diagnostics: diag })
}

/// Pure ICM (no EM steps), mainly for comparisons.
pub fn fit_msle_icm<T: Scalar>(
    dens: &SmoothedDensities<T>,
    grid: &Grid<T>,
    config: &SolverConfig,
) -> Result<MonotoneEstimate<T>> {
    let cfg = SolverConfig { em_per_cycle: 0, icm_per_cycle: 1.max(config.icm_per_cycle), ..*config };
    cfg.validate()?;
    let f0 = initial_estimate(grid);
    validate_input(&f0, dens, grid)?;
    let tol = initial_tolerance(&f0, dens, grid, &cfg);
    run_hybrid(f0, dens, grid, &cfg, tol, 0, cfg.icm_per_cycle)
}
