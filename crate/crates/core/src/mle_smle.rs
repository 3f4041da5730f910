//! Nonparametric MLE for interval censored data (case 2) and its kernel
//! smoothed version.
//!
//! The likelihood only sees the mass of each observation interval, so the
//! NPMLE is computed over the innermost intervals (maximal intersections) of
//! the observation intervals. Mass inside an innermost interval is placed at
//! its right endpoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::isotonics::pava_increments;
use crate::kernels::Bandwidth;
use crate::msle_solver::SolverConfig;
use crate::sample::{CensoredSample, Delta};
use crate::scalar::Scalar;

/// Masses below this are treated as off the support by the certificate.
const SUPPORT_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleSolution<T> {
    /// Sorted support points (right endpoints of innermost intervals).
    pub support: Vec<T>,
    pub masses: Vec<T>,
    /// Mass of the innermost interval extending beyond the last observation
    /// time, if any.
    pub mass_beyond: T,
    pub loglik: T,
    pub iterations: usize,
    pub converged: bool,
    /// `max_j |d_j - 1|` over the support and `max_j (d_j - 1)` overall,
    /// where `d_j` is the normalized score of innermost interval `j`.
    pub support_residual: T,
    pub max_excess: T,
}

impl<T: Scalar> MleSolution<T> {
    /// Right-continuous step function `sum_{y_k <= x} mass_k`.
    pub fn cdf(&self, x: T) -> T {
        self.support
            .iter()
            .zip(&self.masses)
            .take_while(|(&y, _)| y <= x)
            .fold(T::zero(), |a, (_, &p)| a + p)
    }

    pub fn total_mass(&self) -> T {
        self.masses.iter().copied().sum()
    }
}

/// Innermost intervals and, for every observation, the index range of those
/// it contains.
#[derive(Debug, Clone)]
struct Reduction<T> {
    /// Right endpoints; `None` for an unbounded interval.
    right: Vec<Option<T>>,
    ranges: Vec<(usize, usize)>,
}

#[derive(Clone, Copy)]
enum End<T> {
    NegInf,
    At(T),
    PosInf,
}

fn observation_interval<T: Scalar>(t: T, u: T, delta: Delta) -> (End<T>, End<T>) {
    match delta {
        Delta::Left => (End::NegInf, End::At(t)),
        Delta::Interval => (End::At(t), End::At(u)),
        Delta::Right => (End::At(u), End::PosInf),
    }
}

fn key<T: Scalar>(e: End<T>) -> (i8, T) {
    match e {
        End::NegInf => (-1, T::zero()),
        End::At(x) => (0, x),
        End::PosInf => (1, T::zero()),
    }
}

fn cmp_end<T: Scalar>(a: End<T>, b: End<T>) -> std::cmp::Ordering {
    let (ka, xa) = key(a);
    let (kb, xb) = key(b);
    ka.cmp(&kb).then(xa.partial_cmp(&xb).unwrap_or(std::cmp::Ordering::Equal))
}

fn reduce<T: Scalar>(sample: &CensoredSample<T>) -> Reduction<T> {
    let intervals: Vec<(End<T>, End<T>)> =
        sample.records().iter().map(|r| observation_interval(r.t, r.u, r.delta)).collect();
    // A point x lies in (L, R] iff L < x <= R, so at a tie a right endpoint
    // sorts before a left endpoint.
    let mut ends: Vec<(End<T>, bool)> = intervals.iter().flat_map(|&(l, r)| [(l, true), (r, false)]).collect();
    ends.sort_by(|a, b| cmp_end(a.0, b.0).then(a.1.cmp(&b.1)));
    let mut inner: Vec<(End<T>, End<T>)> = Vec::new();
    for p in ends.windows(2) {
        if p[0].1 && !p[1].1 {
            inner.push((p[0].0, p[1].0));
        }
    }
    let ranges = intervals
        .iter()
        .map(|&(l, r)| {
            let lo = inner.partition_point(|&(il, _)| cmp_end(il, l).is_lt());
            let hi = inner.partition_point(|&(_, ir)| cmp_end(ir, r).is_le());
            (lo, hi - 1)
        })
        .collect();
    let right = inner
        .iter()
        .map(|&(_, r)| match r {
            End::At(x) => Some(x),
            _ => None,
        })
        .collect();
    Reduction { right, ranges }
}

/// `P_i = F_{b_i} - F_{a_i - 1}` from the cumulative vector `cum` with
/// `cum[0] = 0`, `cum[j + 1] = p_0 + ... + p_j`.
fn interval_masses<T: Scalar>(cum: &[T], ranges: &[(usize, usize)]) -> Vec<T> {
    ranges.iter().map(|&(a, b)| cum[b + 1] - cum[a]).collect()
}

fn mle_loglik<T: Scalar>(cum: &[T], ranges: &[(usize, usize)]) -> T {
    let mut s = T::zero();
    for p in interval_masses(cum, ranges) {
        if p <= T::zero() {
            return T::neg_infinity();
        }
        s += p.ln();
    }
    s
}

/// Normalized scores `d_j = n^{-1} sum_{i: j in A_i} 1 / P_i`.
fn scores<T: Scalar>(cum: &[T], ranges: &[(usize, usize)], size: usize) -> Vec<T> {
    let mut diff = vec![T::zero(); size + 1];
    for (&(a, b), p) in ranges.iter().zip(interval_masses(cum, ranges)) {
        let v = T::one() / p;
        diff[a] += v;
        diff[b + 1] -= v;
    }
    let n = T::from_usize_lossy(ranges.len());
    let mut acc = T::zero();
    diff[..size]
        .iter()
        .map(|&d| {
            acc += d;
            acc / n
        })
        .collect()
}

fn cumulative<T: Scalar>(p: &[T]) -> Vec<T> {
    let mut cum = Vec::with_capacity(p.len() + 1);
    cum.push(T::zero());
    let mut acc = T::zero();
    for &x in p {
        acc += x;
        cum.push(acc);
    }
    cum
}

/// Gradient and negative diagonal Hessian of the log-likelihood in the free
/// cumulative values `cum[1..size]`.
fn cumulative_derivatives<T: Scalar>(cum: &[T], ranges: &[(usize, usize)]) -> (Vec<T>, Vec<T>) {
    let size = cum.len() - 1;
    let mut grad = vec![T::zero(); size + 1];
    let mut hess = vec![T::zero(); size + 1];
    for (&(a, b), p) in ranges.iter().zip(interval_masses(cum, ranges)) {
        let inv = T::one() / p;
        grad[b + 1] += inv;
        grad[a] -= inv;
        hess[b + 1] += inv * inv;
        hess[a] += inv * inv;
    }
    (grad, hess)
}

/// One ICM step on the cumulative values with Armijo backtracking. Returns
/// the new masses when the likelihood increased.
fn icm_update<T: Scalar>(p: &[T], ranges: &[(usize, usize)], current: T, config: &SolverConfig) -> Option<(Vec<T>, T)> {
    let size = p.len();
    if size < 2 {
        return None;
    }
    let cum = cumulative(p);
    let (grad, hess) = cumulative_derivatives(&cum, ranges);
    let floor = T::lit(config.weight_floor);
    let free = 1..size;
    let dw: Vec<T> = free.clone().map(|k| hess[k].max(floor)).collect();
    let dv: Vec<T> = free.clone().map(|k| hess[k].max(floor) * cum[k] + grad[k]).collect();
    let slopes = pava_increments(&dw, &dv);
    let mut delta = vec![T::zero(); size + 1];
    for (k, s) in free.clone().zip(&slopes) {
        delta[k] = s.max(T::zero()).min(T::one()) - cum[k];
    }
    let slope: T = free.map(|k| grad[k] * delta[k]).sum();
    if !(slope > T::zero()) {
        return None;
    }
    let c = T::lit(config.armijo_c);
    let mut lambda = T::one();
    for _ in 0..=config.max_halvings {
        let cand: Vec<T> = cum.iter().zip(&delta).map(|(&a, &d)| a + lambda * d).collect();
        let val = mle_loglik(&cand, ranges);
        if val.is_finite() && val >= current + c * lambda * slope {
            let masses = cand.windows(2).map(|w| (w[1] - w[0]).max(T::zero())).collect();
            return Some((masses, val));
        }
        lambda *= T::lit(config.armijo_shrink);
    }
    None
}

fn certificate<T: Scalar>(p: &[T], ranges: &[(usize, usize)]) -> (T, T) {
    let d = scores(&cumulative(p), ranges, p.len());
    let thr = T::lit(SUPPORT_THRESHOLD);
    let mut on_support = T::zero();
    let mut excess = T::neg_infinity();
    for (&dj, &pj) in d.iter().zip(p) {
        let r = dj - T::one();
        excess = excess.max(r);
        if pj > thr {
            on_support = on_support.max(r.abs());
        }
    }
    (on_support, excess)
}

/// NPMLE by alternating self-consistency (EM) and ICM steps until the
/// optimality conditions `d_j <= 1`, with equality on the support, hold to
/// `config.fenchel_tol`.
pub fn fit_mle<T: Scalar>(sample: &CensoredSample<T>, config: &SolverConfig) -> Result<MleSolution<T>> {
    config.validate()?;
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let red = reduce(sample);
    let size = red.right.len();
    let uniform = T::one() / T::from_usize_lossy(size);
    let mut p = vec![uniform; size];
    let mut current = mle_loglik(&cumulative(&p), &red.ranges);
    let tol = T::lit(config.fenchel_tol);
    let mut converged = false;
    let mut iterations = 0;
    let mut cert = certificate(&p, &red.ranges);
    for it in 0..config.max_iters {
        iterations = it + 1;
        for _ in 0..config.em_per_cycle {
            let d = scores(&cumulative(&p), &red.ranges, size);
            let next: Vec<T> = p.iter().zip(&d).map(|(&a, &b)| a * b).collect();
            let total: T = next.iter().copied().sum();
            let next: Vec<T> = next.into_iter().map(|x| x / total).collect();
            let val = mle_loglik(&cumulative(&next), &red.ranges);
            if val >= current {
                p = next;
                current = val;
            }
        }
        for _ in 0..config.icm_per_cycle {
            if let Some((next, val)) = icm_update(&p, &red.ranges, current, config) {
                p = next;
                current = val;
            }
        }
        cert = certificate(&p, &red.ranges);
        if cert.0 <= tol && cert.1 <= tol {
            converged = true;
            break;
        }
    }
    let mut support = Vec::new();
    let mut masses = Vec::new();
    let mut beyond = T::zero();
    for (r, &m) in red.right.iter().zip(&p) {
        match r {
            Some(x) if m > T::zero() => {
                support.push(*x);
                masses.push(m);
            }
            None => beyond += m,
            _ => {}
        }
    }
    Ok(MleSolution {
        support,
        masses,
        mass_beyond: beyond,
        loglik: current,
        iterations,
        converged,
        support_residual: cert.0,
        max_excess: cert.1,
    })
}

/// Interval censoring log-likelihood of a distribution function.
pub fn interval_loglik<T: Scalar, F: Fn(T) -> T>(sample: &CensoredSample<T>, cdf: F) -> T {
    sample
        .records()
        .iter()
        .map(|r| {
            let p = match r.delta {
                Delta::Left => cdf(r.t),
                Delta::Interval => cdf(r.u) - cdf(r.t),
                Delta::Right => T::one() - cdf(r.u),
            };
            if p > T::zero() { p.ln() } else { T::neg_infinity() }
        })
        .sum()
}

/// `sum_k mass_k IK_b(x - y_k)` at the grid nodes, without boundary
/// correction.
pub fn fit_smle<T: Scalar>(mle: &MleSolution<T>, b: T, grid: &Grid<T>) -> Result<Vec<T>> {
    let kb = Bandwidth::new(b)?;
    Ok(grid
        .points()
        .iter()
        .map(|&x| mle.support.iter().zip(&mle.masses).map(|(&y, &m)| m * kb.integrated(x - y)).sum())
        .collect())
}
