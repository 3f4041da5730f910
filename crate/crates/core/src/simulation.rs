//! The exponential-truth simulation design and the Monte Carlo experiments
//! built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{Asymptotics, ObservationModel};
use crate::error::{Error, Result};
use crate::grid::{Grid, QuadratureRule};
use crate::mle_smle::fit_mle;
use crate::msle_solver::{fit_msle, SolverConfig};
use crate::sample::{CensoredSample, Delta, Record};
use crate::smoothing::smooth;
use crate::stats;

/// Exponential event times observed through pairs `(T, U)` with density
/// `g(t, u) = 6 (u - t - eps)^2 / ((M - t - eps)^2 (M - eps)^2)` on
/// `0 <= t <= M - eps`, `t + eps <= u <= M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub upper: f64,
    pub epsilon: f64,
    /// Rate of the exponential truth.
    pub rate: f64,
    pub n: usize,
    /// `b = c n^{-1/5}`.
    pub bandwidth_constant: f64,
    pub seed: u64,
    pub reps: usize,
    pub points: Vec<f64>,
    /// Grid cells for the estimators.
    pub cells: usize,
    pub rule: QuadratureRule,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            upper: 2.0,
            epsilon: 0.1,
            rate: 1.0,
            n: 1000,
            bandwidth_constant: 1.0,
            seed: 1,
            reps: 500,
            points: vec![1.0],
            cells: 100,
            rule: QuadratureRule::Riemann,
        }
    }
}

impl SimDesign {
    pub fn validate(&self) -> Result<()> {
        if !(self.upper > 0.0 && self.epsilon > 0.0 && self.epsilon <= self.upper / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "separation gap {} must lie in (0, M/2] with M = {}",
                self.epsilon, self.upper
            )));
        }
        if !(self.rate > 0.0 && self.bandwidth_constant > 0.0) {
            return Err(Error::InvalidArgument("rate and bandwidth constant must be positive".into()));
        }
        if self.n == 0 || self.reps == 0 {
            return Err(Error::InvalidArgument("n and reps must be at least 1".into()));
        }
        if self.cells < 10 {
            return Err(Error::InvalidArgument("the grid needs at least 10 cells".into()));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth_for(self.n)
    }

    pub fn bandwidth_for(&self, n: usize) -> f64 {
        self.bandwidth_constant * (n as f64).powf(-0.2)
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        Grid::with_rule(self.upper, self.cells, self.rule)
    }

    fn span(&self) -> f64 {
        self.upper - self.epsilon
    }

    /// Replication stream `rep` of the master seed.
    pub fn rng(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }

    /// Inverse transforms of the `T` marginal and of `U | T`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let l = self.span();
        let v1: f64 = rng.random();
        let v2: f64 = rng.random();
        let t = l * (1.0 - (1.0 - v1).sqrt());
        let u = t + self.epsilon + (self.upper - self.epsilon - t) * v2.cbrt();
        (t, u.min(self.upper))
    }

    pub fn sample_event<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v: f64 = rng.random();
        -(1.0 - v).ln() / self.rate
    }

    pub fn sample_record<R: Rng + ?Sized>(&self, rng: &mut R) -> Record<f64> {
        let (t, u) = self.sample_pair(rng);
        let x = self.sample_event(rng);
        Record::new(t, u, Delta::classify(x, t, u))
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<CensoredSample<f64>> {
        let recs = (0..n).map(|_| self.sample_record(rng)).collect();
        CensoredSample::new(recs, self.upper, self.epsilon)
    }

    /// Sample of replication `rep` with the design's `n`.
    pub fn replicate(&self, rep: usize) -> Result<CensoredSample<f64>> {
        self.sample(self.n, &mut self.rng(rep))
    }

    fn dg_second(&self, t: f64, v: f64) -> (f64, f64, f64) {
        // g(t, v) and its first two derivatives in the second argument
        let l = self.span();
        let s = v - t - self.epsilon;
        if s < 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let d = (self.upper - t - self.epsilon) * l;
        (6.0 * s * s / (d * d), 12.0 * s / (d * d), 12.0 / (d * d))
    }

    fn dg_first(&self, v: f64, u: f64) -> (f64, f64, f64) {
        // g(v, u) and its first two derivatives in the first argument
        let l = self.span();
        let s = u - v - self.epsilon;
        if s < 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let q = self.upper - v - self.epsilon;
        let c = 6.0 / (l * l);
        let g = c * s * s / (q * q);
        let d1 = 2.0 * c * (-s / (q * q) + s * s / q.powi(3));
        let d2 = 2.0 * c * (1.0 / (q * q) - 4.0 * s / q.powi(3) + 3.0 * s * s / q.powi(4));
        (g, d1, d2)
    }

    fn g2_parts(&self, y: f64) -> (f64, f64, f64) {
        // g2 and its first two derivatives
        let l = self.span();
        let c = self.upper - y;
        if y < self.epsilon {
            return (0.0, 0.0, 0.0);
        }
        let k = 6.0 / (l * l);
        if c <= 0.0 {
            return (k * l, f64::INFINITY, f64::INFINITY);
        }
        let r = (l / c).ln();
        let g2 = k * (l - 2.0 * c * r - c * c / l);
        let d1 = 2.0 * k * (r - 1.0 + c / l);
        let d2 = 2.0 * k * (1.0 / c - 1.0 / l);
        (g2, d1, d2)
    }
}

impl ObservationModel for SimDesign {
    fn upper(&self) -> f64 {
        self.upper
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 { 0.0 } else { -(-self.rate * x).exp_m1() }
    }

    fn density(&self, x: f64) -> f64 {
        if x < 0.0 { 0.0 } else { self.rate * (-self.rate * x).exp() }
    }

    fn g(&self, t: f64, u: f64) -> f64 {
        if t < 0.0 || u > self.upper || t > self.span() {
            return 0.0;
        }
        self.dg_second(t, u).0
    }

    fn g1(&self, t: f64) -> f64 {
        let l = self.span();
        if (0.0..=l).contains(&t) { 2.0 * (l - t) / (l * l) } else { 0.0 }
    }

    fn g2(&self, u: f64) -> f64 {
        if u > self.upper { 0.0 } else { self.g2_parts(u).0 }
    }

    fn h1_dd(&self, t: f64) -> f64 {
        let l = self.span();
        let e = (-self.rate * t).exp();
        -self.rate * self.rate * e * self.g1(t) - 4.0 * self.rate * e / (l * l)
    }

    fn h2_dd(&self, u: f64) -> f64 {
        let (g2, d1, d2) = self.g2_parts(u);
        let e = (-self.rate * u).exp();
        e * (self.rate * self.rate * g2 - 2.0 * self.rate * d1 + d2)
    }

    fn h0_dd_second(&self, t: f64, v: f64) -> f64 {
        let (g, d1, d2) = self.dg_second(t, v);
        let f2 = -self.rate * self.density(v);
        f2 * g + 2.0 * self.density(v) * d1 + (self.cdf(v) - self.cdf(t)) * d2
    }

    fn h0_dd_first(&self, v: f64, u: f64) -> f64 {
        let (g, d1, d2) = self.dg_first(v, u);
        let f2 = -self.rate * self.density(v);
        -f2 * g - 2.0 * self.density(v) * d1 + (self.cdf(u) - self.cdf(v)) * d2
    }
}

/// Linear interpolation of grid values at `x`.
pub fn interpolate(grid: &Grid<f64>, values: &[f64], x: f64) -> f64 {
    let d = grid.width();
    let pos = (x / d).clamp(0.0, grid.cells() as f64);
    let k = (pos.floor() as usize).min(grid.cells() - 1);
    let frac = pos - k as f64;
    if frac < 1e-9 {
        values[k]
    } else if frac > 1.0 - 1e-9 {
        values[k + 1]
    } else {
        values[k] * (1.0 - frac) + values[k + 1] * frac
    }
}

/// One replication of the normality experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub seed: u64,
    pub rep: usize,
    pub n: usize,
    pub b: f64,
    pub v: f64,
    pub f_hat: f64,
    pub z: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub v: f64,
    pub f0: f64,
    pub sigma_sq: f64,
    pub beta: f64,
    pub mean: f64,
    /// Empirical variance of `sqrt(n b) F_hat(v)`; `None` for one replication.
    pub scaled_variance: Option<f64>,
    pub var_ratio: Option<f64>,
    pub bias: f64,
    pub bias_se: Option<f64>,
    pub predicted_bias: f64,
    pub ks_statistic: Option<f64>,
    pub ks_pvalue: Option<f64>,
    pub variance_ok: Option<bool>,
    pub normality_ok: Option<bool>,
    pub bias_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub n: usize,
    pub reps: usize,
    pub bandwidth: f64,
    pub used: usize,
    pub nonconverged: usize,
    /// Non-certified replications stayed within the 2% exclusion budget.
    pub budget_ok: bool,
    pub points: Vec<PointSummary>,
    pub replications: Vec<ReplicationRecord>,
}

/// Fraction of replications that may fail the certificate and be dropped.
pub const EXCLUSION_BUDGET: f64 = 0.02;

/// Simulates, smooths and fits the MSLE `reps` times and summarizes
/// `F_hat(v)` against the asymptotic normal law at every design point.
pub fn montecarlo_normality(design: &SimDesign, config: &SolverConfig) -> Result<MonteCarloReport> {
    design.validate()?;
    let grid = design.grid()?;
    let b = design.bandwidth();
    let asym = Asymptotics::new(design);
    let consts = design.points.iter().map(|&v| asym.point(v)).collect::<Result<Vec<_>>>()?;
    let fits: Vec<(Vec<f64>, bool)> = (0..design.reps)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<f64>, bool)> {
            let s = design.replicate(rep)?;
            let dens = smooth(&s, b, &grid)?;
            let est = fit_msle(&dens, &grid, config)?;
            let vals = design.points.iter().map(|&v| interpolate(&grid, &est.values, v)).collect();
            Ok((vals, est.diagnostics.converged))
        })
        .collect::<Result<_>>()?;
    let scale = (design.n as f64 * b).sqrt();
    let mut records = Vec::with_capacity(design.reps * design.points.len());
    for (rep, (vals, ok)) in fits.iter().enumerate() {
        for (c, &f) in consts.iter().zip(vals) {
            let z = scale * (f - design.cdf(c.v) - c.beta * b * b) / c.sigma_sq.sqrt();
            records.push(ReplicationRecord {
                seed: design.seed,
                rep,
                n: design.n,
                b,
                v: c.v,
                f_hat: f,
                z,
                converged: *ok,
            });
        }
    }
    let nonconverged = fits.iter().filter(|f| !f.1).count();
    let budget_ok = nonconverged as f64 <= EXCLUSION_BUDGET * design.reps as f64;
    let used_reps: Vec<usize> = (0..design.reps).filter(|&r| fits[r].1 || !budget_ok).collect();
    let points = consts
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let f: Vec<f64> = used_reps.iter().map(|&r| fits[r].0[j]).collect();
            let z: Vec<f64> = used_reps.iter().map(|&r| records[r * design.points.len() + j].z).collect();
            summarize(c.v, design.cdf(c.v), c.sigma_sq, c.beta, b, scale, &f, &z)
        })
        .collect();
    Ok(MonteCarloReport {
        n: design.n,
        reps: design.reps,
        bandwidth: b,
        used: used_reps.len(),
        nonconverged,
        budget_ok,
        points,
        replications: records,
    })
}

#[allow(clippy::too_many_arguments)]
fn summarize(v: f64, f0: f64, sigma_sq: f64, beta: f64, b: f64, scale: f64, f: &[f64], z: &[f64]) -> PointSummary {
    let (mean, var) = stats::mean_var(f);
    let scaled_variance = var.map(|x| x * scale * scale);
    let var_ratio = scaled_variance.map(|x| x / sigma_sq);
    let bias = mean - f0;
    let bias_se = var.map(|x| (x / f.len() as f64).sqrt());
    let predicted_bias = beta * b * b;
    let (ks_statistic, ks_pvalue) = if z.len() >= 2 {
        let d = stats::ks_normal(z);
        (Some(d), Some(stats::ks_pvalue(d, z.len())))
    } else {
        (None, None)
    };
    PointSummary {
        v,
        f0,
        sigma_sq,
        beta,
        mean,
        scaled_variance,
        var_ratio,
        bias,
        bias_se,
        predicted_bias,
        ks_statistic,
        ks_pvalue,
        variance_ok: var_ratio.map(|r| (r - 1.0).abs() <= 0.20),
        normality_ok: ks_pvalue.map(|p| p >= 0.01),
        bias_ok: bias_se.map(|se| (bias - predicted_bias).abs() <= 2.0 * se),
    }
}

/// Estimator compared in a rate study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateEstimator {
    Msle,
    Mle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub bandwidth: f64,
    pub rmse: f64,
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub estimator: RateEstimator,
    pub v: f64,
    pub reps: usize,
    pub rows: Vec<RateRow>,
    /// Least-squares slope of `log rmse` against `log n`.
    pub slope: f64,
}

/// RMSE of the estimate at the first design point for every `n`, with the
/// fitted log-log slope. Replication `rep` at sample size `n` uses stream
/// `rep` of `seed + n`.
pub fn rate_study(design: &SimDesign, sizes: &[usize], estimator: RateEstimator, config: &SolverConfig) -> Result<RateReport> {
    design.validate()?;
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument("a rate study needs at least two sample sizes".into()));
    }
    let v = *design.points.first().ok_or_else(|| Error::InvalidArgument("no evaluation point".into()))?;
    let f0 = design.cdf(v);
    let grid = design.grid()?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let d = SimDesign { n, seed: design.seed.wrapping_add(n as u64), ..design.clone() };
        let b = d.bandwidth();
        let errs: Vec<(f64, bool)> = (0..d.reps)
            .into_par_iter()
            .map(|rep| -> Result<(f64, bool)> {
                let s = d.replicate(rep)?;
                match estimator {
                    RateEstimator::Msle => {
                        let dens = smooth(&s, b, &grid)?;
                        let est = fit_msle(&dens, &grid, config)?;
                        Ok((interpolate(&grid, &est.values, v) - f0, est.diagnostics.converged))
                    }
                    RateEstimator::Mle => {
                        let mle = fit_mle(&s, config)?;
                        Ok((mle.cdf(v) - f0, mle.converged))
                    }
                }
            })
            .collect::<Result<_>>()?;
        let mse = errs.iter().map(|e| e.0 * e.0).sum::<f64>() / errs.len() as f64;
        rows.push(RateRow { n, bandwidth: b, rmse: mse.sqrt(), nonconverged: errs.iter().filter(|e| !e.1).count() });
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.rmse.ln()).collect();
    Ok(RateReport { estimator, v, reps: design.reps, slope: stats::ols_slope(&x, &y), rows })
}
