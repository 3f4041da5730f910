//! Pointwise asymptotic constants of the MSLE, the toy estimator, the linear
//! integral equation it approximates, and the variance equation of the SMLE.
//!
//! Everything here is evaluated in `f64` against a known observation model.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{kernel_moments, Bandwidth};
use crate::quadrature::GaussLegendre;
use crate::smoothing::{normalize, KernelSmoother, PairMatrix, SmoothedDensities};

/// Distribution of the event time and of the observation pairs.
///
/// Only `upper`, `epsilon`, `cdf`, `density` and `g` are required; the
/// marginals default to quadrature of `g` and the second derivatives to
/// central differences with spacing [`ObservationModel::fd_step`].
pub trait ObservationModel: Sync {
    fn upper(&self) -> f64;
    /// Separation gap: `g(t, u) = 0` for `u - t < epsilon`.
    fn epsilon(&self) -> f64;
    fn cdf(&self, x: f64) -> f64;
    fn density(&self, x: f64) -> f64;
    /// Joint density of `(T, U)`.
    fn g(&self, t: f64, u: f64) -> f64;

    fn g1(&self, t: f64) -> f64 {
        let lo = t + self.epsilon();
        marginal_rule().composite(|u| self.g(t, u), lo, self.upper(), 32)
    }

    fn g2(&self, u: f64) -> f64 {
        let hi = u - self.epsilon();
        marginal_rule().composite(|t| self.g(t, u), 0.0, hi, 32)
    }

    fn fd_step(&self) -> f64 {
        self.upper() / 400.0
    }

    /// Second derivative of `F0 g1`.
    fn h1_dd(&self, t: f64) -> f64 {
        second_difference(|x| self.cdf(x) * self.g1(x), t, self.fd_step())
    }

    /// Second derivative of `(1 - F0) g2`.
    fn h2_dd(&self, u: f64) -> f64 {
        second_difference(|x| (1.0 - self.cdf(x)) * self.g2(x), u, self.fd_step())
    }

    /// `d^2/dv^2 h0(t, v)` with `h0(t, v) = (F0(v) - F0(t)) g(t, v)`.
    fn h0_dd_second(&self, t: f64, v: f64) -> f64 {
        second_difference(|x| (self.cdf(x) - self.cdf(t)) * self.g(t, x), v, self.fd_step())
    }

    /// `d^2/dv^2 h0(v, u)`.
    fn h0_dd_first(&self, v: f64, u: f64) -> f64 {
        second_difference(|x| (self.cdf(u) - self.cdf(x)) * self.g(x, u), v, self.fd_step())
    }
}

fn marginal_rule() -> GaussLegendre {
    GaussLegendre::new(16)
}

fn second_difference<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

type Fn1 = Box<dyn Fn(f64) -> f64 + Send + Sync>;
type Fn2 = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Closure-backed [`ObservationModel`] using the numerical defaults, except
/// for marginals supplied explicitly.
pub struct ModelFunctions {
    pub upper: f64,
    pub epsilon: f64,
    pub cdf: Fn1,
    pub density: Fn1,
    pub g: Fn2,
    pub g1: Option<Fn1>,
    pub g2: Option<Fn1>,
    pub fd_step: f64,
}

impl ModelFunctions {
    /// Model with quadrature marginals and the finite-difference spacing
    /// `M / (4 m)` for an `m`-cell grid.
    pub fn new(upper: f64, epsilon: f64, cdf: Fn1, density: Fn1, g: Fn2, cells: usize) -> Self {
        Self { upper, epsilon, cdf, density, g, g1: None, g2: None, fd_step: upper / (4.0 * cells as f64) }
    }
}

impl ObservationModel for ModelFunctions {
    fn upper(&self) -> f64 {
        self.upper
    }
    fn epsilon(&self) -> f64 {
        self.epsilon
    }
    fn cdf(&self, x: f64) -> f64 {
        (self.cdf)(x)
    }
    fn density(&self, x: f64) -> f64 {
        (self.density)(x)
    }
    fn g(&self, t: f64, u: f64) -> f64 {
        if u - t < self.epsilon {
            0.0
        } else {
            (self.g)(t, u)
        }
    }
    fn g1(&self, t: f64) -> f64 {
        match &self.g1 {
            Some(f) => f(t),
            None => marginal_rule().composite(|u| self.g(t, u), t + self.epsilon, self.upper, 32),
        }
    }
    fn g2(&self, u: f64) -> f64 {
        match &self.g2 {
            Some(f) => f(u),
            None => marginal_rule().composite(|t| self.g(t, u), 0.0, u - self.epsilon, 32),
        }
    }
    fn fd_step(&self) -> f64 {
        self.fd_step
    }
}

/// Quadrature resolution for the model integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes: usize,
    pub panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { nodes: 20, panels: 16 }
    }
}

/// Evaluates the asymptotic constants of a model.
pub struct Asymptotics<'a, M: ObservationModel + ?Sized> {
    model: &'a M,
    rule: GaussLegendre,
    panels: usize,
}

/// Constants at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointConstants {
    pub v: f64,
    pub d_f0: f64,
    pub sigma1: f64,
    pub sigma_sq: f64,
    pub beta1: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub points: Vec<PointConstants>,
    /// Grid nodes of the toy / linear-equation solutions.
    pub grid: Option<Vec<f64>>,
    pub toy: Option<Vec<f64>>,
    pub linear: Option<Vec<f64>>,
}

impl<'a, M: ObservationModel + ?Sized> Asymptotics<'a, M> {
    pub fn new(model: &'a M) -> Self {
        Self::with_config(model, QuadratureConfig::default())
    }

    pub fn with_config(model: &'a M, cfg: QuadratureConfig) -> Self {
        Self { model, rule: GaussLegendre::new(cfg.nodes), panels: cfg.panels }
    }

    fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        self.rule.composite(f, a, b, self.panels)
    }

    fn denominator(&self, v: f64) -> f64 {
        let m = self.model;
        let f = m.cdf(v);
        m.g1(v) * (1.0 - f) + f * m.g2(v)
    }

    /// `F0 (1 - F0) / (g1 (1 - F0) + F0 g2)` at `v`.
    pub fn d_f0(&self, v: f64) -> Result<f64> {
        let den = self.denominator(v);
        let f = self.model.cdf(v);
        if !(den > 0.0) {
            return Err(Error::ModelDegenerate(format!("g1 (1 - F0) + F0 g2 vanishes at {v}")));
        }
        Ok(f * (1.0 - f) / den)
    }

    /// `int_{t<v} g(t, v) / (F0(v) - F0(t)) dt + int_{w>v} g(v, w) / (F0(w) - F0(v)) dw`.
    fn coupling_mass(&self, v: f64) -> f64 {
        let m = self.model;
        let eps = m.epsilon();
        let fv = m.cdf(v);
        let left = self.integrate(|t| m.g(t, v) / (fv - m.cdf(t)), 0.0, v - eps);
        let right = self.integrate(|w| m.g(v, w) / (m.cdf(w) - fv), v + eps, m.upper());
        left + right
    }

    pub fn sigma1(&self, v: f64) -> Result<f64> {
        Ok(1.0 + self.d_f0(v)? * self.coupling_mass(v))
    }

    /// `d_F0(v) / sigma1(v) * int K^2`.
    pub fn sigma_sq(&self, v: f64) -> Result<f64> {
        Ok(self.d_f0(v)? / self.sigma1(v)? * kernel_moments::<f64>().m_squared)
    }

    /// First-order bias constant, with both `h0` second derivatives taken in
    /// the evaluation variable.
    pub fn beta1(&self, v: f64) -> Result<f64> {
        let m = self.model;
        let eps = m.epsilon();
        let f = m.cdf(v);
        let d = self.d_f0(v)?;
        let den = self.denominator(v);
        let s1 = 1.0 + d * self.coupling_mass(v);
        let local = ((1.0 - f) * m.h1_dd(v) - f * m.h2_dd(v)) / den;
        let left = self.integrate(|t| m.h0_dd_second(t, v) / (f - m.cdf(t)), 0.0, v - eps);
        let right = self.integrate(|u| m.h0_dd_first(v, u) / (m.cdf(u) - f), v + eps, m.upper());
        Ok((local + d * (left - right)) / (2.0 * s1) * kernel_moments::<f64>().m_two)
    }

    /// `beta1(v)` plus the `g`-weighted correction integrals of `beta1`.
    pub fn beta(&self, v: f64) -> Result<f64> {
        let m = self.model;
        let eps = m.epsilon();
        let f = m.cdf(v);
        let b1 = self.beta1(v)?;
        let d = self.d_f0(v)?;
        let s1 = self.sigma1(v)?;
        let err = RefCell::new(None);
        let b1_at = |x: f64| {
            self.beta1(x).unwrap_or_else(|e| {
                err.borrow_mut().get_or_insert(e);
                0.0
            })
        };
        let left = self.integrate(|u| m.g(u, v) * b1_at(u) / (f - m.cdf(u)), 0.0, v - eps);
        let right = self.integrate(|u| m.g(v, u) * b1_at(u) / (m.cdf(u) - f), v + eps, m.upper());
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        Ok(b1 + d / s1 * (left + right))
    }

    pub fn point(&self, v: f64) -> Result<PointConstants> {
        let (lo, hi) = (0.0, self.model.upper());
        if !(v > lo && v < hi) {
            return Err(Error::InvalidArgument(format!("evaluation point {v} must lie inside (0, {hi})")));
        }
        Ok(PointConstants {
            v,
            d_f0: self.d_f0(v)?,
            sigma1: self.sigma1(v)?,
            sigma_sq: self.sigma_sq(v)?,
            beta1: self.beta1(v)?,
            beta: self.beta(v)?,
        })
    }

    /// Quadrature nodes and weights over `[a, b]` used by this evaluator.
    pub fn nodes(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        self.rule.composite_points(a, b, self.panels)
    }
}

/// Model quantities on the nodes of a grid, with marginals and the coupling
/// integrals evaluated by the grid's own weights so that substituting the
/// population sub-densities reproduces `F0` exactly.
#[derive(Debug, Clone)]
pub struct GridModel {
    pub f0: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub d_f0: Vec<f64>,
    pub sigma1: Vec<f64>,
    gap: usize,
}

impl GridModel {
    pub fn new<M: ObservationModel + ?Sized>(model: &M, grid: &Grid<f64>) -> Result<Self> {
        let pts = grid.points();
        let w = grid.weights();
        let n = pts.len();
        let gap = grid.gap_cells(model.epsilon()).max(1);
        let f0: Vec<f64> = pts.iter().map(|&t| model.cdf(t)).collect();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + gap..n {
                g[i][j] = model.g(pts[i], pts[j]);
            }
        }
        let mut g1 = vec![0.0; n];
        let mut g2 = vec![0.0; n];
        let mut coupling = vec![0.0; n];
        for i in 0..n {
            for j in i + gap..n {
                let v = g[i][j];
                if v == 0.0 {
                    continue;
                }
                g1[i] += w[j] * v;
                g2[j] += w[i] * v;
                let df = f0[j] - f0[i];
                if !(df > 0.0) {
                    return Err(Error::ModelDegenerate(format!("F0 is flat between {} and {}", pts[i], pts[j])));
                }
                coupling[i] += w[j] * v / df;
                coupling[j] += w[i] * v / df;
            }
        }
        let mut d_f0 = vec![0.0; n];
        let mut sigma1 = vec![1.0; n];
        for k in 1..n {
            let den = g1[k] * (1.0 - f0[k]) + f0[k] * g2[k];
            if !(den > 0.0) {
                return Err(Error::ModelDegenerate(format!("g1 (1 - F0) + F0 g2 vanishes at {}", pts[k])));
            }
            d_f0[k] = f0[k] * (1.0 - f0[k]) / den;
            sigma1[k] = 1.0 + d_f0[k] * coupling[k];
        }
        Ok(Self { f0, g, g1, g2, d_f0, sigma1, gap })
    }

    /// Population sub-densities `F0 g1`, `(1 - F0) g2`, `(F0(u) - F0(t)) g`
    /// on the grid, with the grid-consistent marginals.
    pub fn population_densities(&self, grid: &Grid<f64>, bandwidth: f64, epsilon: f64) -> SmoothedDensities<f64> {
        let n = self.f0.len();
        let mut h = PairMatrix::zeros(n, self.gap);
        for i in 0..n {
            for j in i + self.gap..n {
                h.set(i, j, (self.f0[j] - self.f0[i]) * self.g[i][j]);
            }
        }
        let h1 = (0..n).map(|k| self.f0[k] * self.g1[k]).collect();
        let h2 = (0..n).map(|k| (1.0 - self.f0[k]) * self.g2[k]).collect();
        let mut d = SmoothedDensities { h1, h2, h, bandwidth, epsilon, normalization: 1.0 };
        d.normalization = d.mass(grid);
        d
    }

    /// Copy with the off-diagonal coupling removed (`g = 0`, `sigma1 = 1`),
    /// keeping the marginals.
    pub fn decoupled(&self) -> Self {
        let n = self.f0.len();
        Self { g: vec![vec![0.0; n]; n], sigma1: vec![1.0; n], ..self.clone() }
    }

    /// Right-hand side of the toy equation at every node (zero at the origin).
    pub fn rhs(&self, dens: &SmoothedDensities<f64>, grid: &Grid<f64>) -> Result<Vec<f64>> {
        let n = self.f0.len();
        if dens.h1.len() != n || dens.h.size() != n {
            return Err(Error::InvalidArgument("densities do not match the grid model".into()));
        }
        let w = grid.weights();
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        for i in 0..n {
            let (start, row) = dens.h.row(i);
            for (k, &h) in row.iter().enumerate() {
                if h == 0.0 {
                    continue;
                }
                let j = start + k;
                let df = self.f0[j] - self.f0[i];
                right[i] += w[j] * h / df;
                left[j] += w[i] * h / df;
            }
        }
        Ok((0..n)
            .map(|k| {
                if k == 0 {
                    return 0.0;
                }
                let f = self.f0[k];
                let den = self.g1[k] * (1.0 - f) + f * self.g2[k];
                (dens.h1[k] * (1.0 - f) - dens.h2[k] * f) / den + self.d_f0[k] * (left[k] - right[k])
            })
            .collect())
    }

    /// Pointwise explicit solution of the decoupled (toy) equation.
    pub fn toy_estimator(&self, dens: &SmoothedDensities<f64>, grid: &Grid<f64>) -> Result<Vec<f64>> {
        let rhs = self.rhs(dens, grid)?;
        Ok((0..rhs.len()).map(|k| self.f0[k] + rhs[k] / self.sigma1[k]).collect())
    }

    /// Dense solve of the linear integral equation in `x = F - F0` on the
    /// nodes `t_1..t_m`; returns `F0 + x` (with `x(t_0) = 0`).
    pub fn solve_linear(&self, dens: &SmoothedDensities<f64>, grid: &Grid<f64>) -> Result<Vec<f64>> {
        let rhs = self.rhs(dens, grid)?;
        let n = self.f0.len();
        let m = n - 1;
        let w = grid.weights();
        let mut a = DMatrix::<f64>::zeros(m, m);
        for k in 1..n {
            a[(k - 1, k - 1)] = self.sigma1[k];
            for j in 1..n {
                let (lo, hi) = if j < k { (j, k) } else { (k, j) };
                let gv = self.g[lo][hi];
                if j == k || gv == 0.0 {
                    continue;
                }
                a[(k - 1, j - 1)] -= self.d_f0[k] * w[j] * gv / (self.f0[hi] - self.f0[lo]);
            }
        }
        let b = DVector::from_iterator(m, rhs[1..].iter().copied());
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular("linear integral equation".into()))?;
        let mut out = self.f0.clone();
        for k in 1..n {
            out[k] += x[k - 1];
        }
        Ok(out)
    }

    /// `d_F0(t) * [sum g gamma / dF0 over both sides]` with
    /// `gamma(u) = beta1(u) b^2 / sigma1(u)`, supplied as a node vector.
    pub fn coupling_shift(&self, gamma: &[f64], grid: &Grid<f64>) -> Vec<f64> {
        let n = self.f0.len();
        let w = grid.weights();
        let mut acc = vec![0.0; n];
        for i in 0..n {
            for j in i + self.gap..n {
                let gv = self.g[i][j];
                if gv == 0.0 {
                    continue;
                }
                let df = self.f0[j] - self.f0[i];
                acc[i] += w[j] * gv * gamma[j] / df;
                acc[j] += w[i] * gv * gamma[i] / df;
            }
        }
        (0..n).map(|k| self.d_f0[k] * acc[k]).collect()
    }
}

/// Expectation of the kernel estimates under the model: the boundary
/// corrected kernel of every node integrated against `h1`, `h2` and `h0`,
/// then clipped and normalized like [`crate::smoothing::smooth`]. Uses
/// `nodes`-point Gauss-Legendre on two panels per grid cell.
pub fn expected_densities<M: ObservationModel + ?Sized>(
    model: &M,
    grid: &Grid<f64>,
    b: f64,
    nodes: usize,
) -> Result<SmoothedDensities<f64>> {
    let sm = KernelSmoother::new(grid, b)?;
    let eps = model.epsilon();
    let quad = GaussLegendre::new(nodes).composite_points(0.0, model.upper(), 2 * grid.cells());
    let size = grid.cells() + 1;
    let q = quad.len();
    // kernel matrix with quadrature weights folded in
    let mut kw = DMatrix::<f64>::zeros(size, q);
    for i in 0..size {
        for (c, &(x, w)) in quad.iter().enumerate() {
            kw[(i, c)] = w * sm.weight(i, x);
        }
    }
    let mut h1 = vec![0.0; size];
    let mut h2 = vec![0.0; size];
    let f: Vec<f64> = quad.iter().map(|&(x, _)| model.cdf(x)).collect();
    for (c, &(x, _)) in quad.iter().enumerate() {
        let a = f[c] * model.g1(x);
        let bb = (1.0 - f[c]) * model.g2(x);
        for i in 0..size {
            h1[i] += kw[(i, c)] * a;
            h2[i] += kw[(i, c)] * bb;
        }
    }
    let mut h0 = DMatrix::<f64>::zeros(q, q);
    for (c, &(x, _)) in quad.iter().enumerate() {
        for (e, &(y, _)) in quad.iter().enumerate().skip(c + 1) {
            if y - x >= eps {
                h0[(c, e)] = (f[e] - f[c]) * model.g(x, y);
            }
        }
    }
    let full = &kw * h0 * kw.transpose();
    let mut h = PairMatrix::zeros(size, grid.gap_cells(eps));
    for i in 0..size {
        for j in i + 1..size {
            h.set(i, j, full[(i, j)].max(0.0));
        }
    }
    h1.iter_mut().chain(h2.iter_mut()).for_each(|v| *v = v.max(0.0));
    normalize(h1, h2, h, grid, b, eps)
}

/// Solution of the SMLE integral equation at `t` for bandwidth `b` on a
/// uniform Nystrom grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSolution {
    pub nodes: Vec<f64>,
    pub phi: Vec<f64>,
    /// `E theta^2`, approximating `n var` of the SMLE at `t`.
    pub sigma_n_sq: f64,
}

/// Solves
/// `phi(u) = d_F0(u) {K_b(t - u) + int_{v>u} (phi(v) - phi(u)) g(u, v) / dF0`
/// `- int_{v<u} (phi(u) - phi(v)) g(v, u) / dF0}` by trapezoid Nystrom
/// discretization with `cells` cells and returns `phi` with its variance
/// functional.
pub fn solve_smle_phi<M: ObservationModel + ?Sized>(t: f64, b: f64, model: &M, cells: usize) -> Result<PhiSolution> {
    let kb = Bandwidth::new(b)?;
    let grid = Grid::with_rule(model.upper(), cells, crate::grid::QuadratureRule::Trapezoid)?;
    let u = grid.points().to_vec();
    let w = grid.weights().to_vec();
    let n = u.len();
    let f0: Vec<f64> = u.iter().map(|&x| model.cdf(x)).collect();
    let g1: Vec<f64> = u.iter().map(|&x| model.g1(x)).collect();
    let g2: Vec<f64> = u.iter().map(|&x| model.g2(x)).collect();
    let d: Vec<f64> = (0..n)
        .map(|k| {
            let den = g1[k] * (1.0 - f0[k]) + f0[k] * g2[k];
            if den > 0.0 {
                Ok(f0[k] * (1.0 - f0[k]) / den)
            } else if f0[k] == 0.0 || f0[k] == 1.0 {
                Ok(0.0)
            } else {
                Err(Error::ModelDegenerate(format!("g1 (1 - F0) + F0 g2 vanishes at {}", u[k])))
            }
        })
        .collect::<Result<_>>()?;
    let eps = model.epsilon();
    let gap = grid.gap_cells(eps).max(1);
    // coupling kernel G_kl = g(min, max) / |dF0|
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut coupling = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        for l in k + gap..n {
            let gv = model.g(u[k], u[l]);
            if gv == 0.0 {
                continue;
            }
            let c = gv / (f0[l] - f0[k]);
            coupling[(k, l)] = c;
            coupling[(l, k)] = c;
        }
    }
    let mut rhs = DVector::<f64>::zeros(n);
    for k in 0..n {
        let s: f64 = (0..n).map(|l| w[l] * coupling[(k, l)]).sum();
        a[(k, k)] = 1.0 + d[k] * s;
        for l in 0..n {
            if l != k {
                a[(k, l)] -= d[k] * w[l] * coupling[(k, l)];
            }
        }
        rhs[k] = d[k] * kb.kernel(t - u[k]);
    }
    let phi = a.lu().solve(&rhs).ok_or_else(|| Error::Singular("SMLE integral equation".into()))?;
    let mut var = 0.0;
    for k in 0..n {
        let p = phi[k];
        if f0[k] > 0.0 {
            var += w[k] * p * p * g1[k] / f0[k];
        }
        if f0[k] < 1.0 {
            var += w[k] * p * p * g2[k] / (1.0 - f0[k]);
        }
        for l in k + gap..n {
            let c = coupling[(k, l)];
            if c == 0.0 {
                continue;
            }
            let dp = phi[l] - p;
            var += w[k] * w[l] * dp * dp * c;
        }
    }
    Ok(PhiSolution { nodes: u, phi: phi.iter().copied().collect(), sigma_n_sq: var })
}

/// `lim_{b -> 0} b sigma_n^2` from the values at three bandwidths by the
/// quadratic through `(b_i, b_i sigma_n^2(b_i))` evaluated at zero.
pub fn extrapolate_to_zero(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() != 3 {
        return Err(Error::InvalidArgument("extrapolation needs exactly three points".into()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    // Lagrange interpolation at 0
    let mut out = 0.0;
    for i in 0..3 {
        let mut l = 1.0;
        for j in 0..3 {
            if i != j {
                l *= (0.0 - x[j]) / (x[i] - x[j]);
            }
        }
        out += y[i] * l;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::QuadratureRule;
    use crate::simulation::SimDesign;

    /// No off-diagonal mass, unit marginals, `F0(v) = v / 2` on `[0, 2]`.
    fn uncoupled(cdf: Fn1) -> ModelFunctions {
        ModelFunctions {
            g1: Some(Box::new(|_| 1.0)),
            g2: Some(Box::new(|_| 1.0)),
            ..ModelFunctions::new(2.0, 0.1, cdf, Box::new(|_| 0.5), Box::new(|_, _| 0.0), 100)
        }
    }

    fn quadrature_design() -> ModelFunctions {
        let d = SimDesign::default();
        let (a, b, c) = (d.clone(), d.clone(), d);
        ModelFunctions::new(
            2.0,
            0.1,
            Box::new(move |x| a.cdf(x)),
            Box::new(move |x| b.density(x)),
            Box::new(move |t, u| c.g(t, u)),
            100,
        )
    }

    #[test]
    fn trivial_constants() {
        let m = uncoupled(Box::new(|x| x / 2.0));
        let a = Asymptotics::new(&m);
        assert!((a.d_f0(1.0).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(a.sigma1(1.0).unwrap(), 1.0);
        assert!((a.sigma_sq(1.0).unwrap() - 0.25 * 350.0 / 429.0).abs() < 1e-15);
        assert!((a.sigma_sq(1.0).unwrap() - 0.203963).abs() < 1e-6);
        // linear F0 and constant marginals: every second derivative vanishes
        assert!(a.beta1(1.0).unwrap().abs() < 1e-9);
        assert!(a.beta(1.0).unwrap().abs() < 1e-9);
        let zero = uncoupled(Box::new(|_| 0.0));
        assert_eq!(Asymptotics::new(&zero).d_f0(0.5).unwrap(), 0.0);
        assert!(Asymptotics::new(&m).point(2.0).is_err());
        assert!(Asymptotics::new(&m).point(0.0).is_err());
    }

    #[test]
    fn beta_equals_beta1_without_coupling() {
        let m = uncoupled(Box::new(|x| 1.0 - (-x).exp()));
        let a = Asymptotics::new(&m);
        let b1 = a.beta1(0.8).unwrap();
        assert!(b1.abs() > 1e-3);
        assert_eq!(a.beta(0.8).unwrap(), b1);
    }

    #[test]
    fn degenerate_denominator_is_rejected() {
        let m = ModelFunctions {
            g1: Some(Box::new(|_| 0.0)),
            g2: Some(Box::new(|_| 0.0)),
            ..ModelFunctions::new(2.0, 0.1, Box::new(|x| x / 2.0), Box::new(|_| 0.5), Box::new(|_, _| 0.0), 100)
        };
        assert!(matches!(Asymptotics::new(&m).d_f0(1.0), Err(Error::ModelDegenerate(_))));
    }

    #[test]
    fn design_constants_by_independent_quadrature() {
        let d = SimDesign::default();
        let q = quadrature_design();
        let (a, b) = (Asymptotics::new(&d), Asymptotics::new(&q));
        for v in [0.5, 1.0, 1.5] {
            let (x, y) = (a.d_f0(v).unwrap(), b.d_f0(v).unwrap());
            assert!((x - y).abs() < 1e-8 * x, "d_F0({v})");
            assert!(a.sigma1(v).unwrap() >= 1.0);
            assert!(a.sigma_sq(v).unwrap() <= x * 350.0 / 429.0);
        }
        // analytic second derivatives against central differences
        let (x, y) = (a.beta1(1.0).unwrap(), b.beta1(1.0).unwrap());
        assert!((x - y).abs() < 1e-3 * x.abs(), "{x} {y}");
    }

    #[test]
    fn sigma1_stable_under_refinement() {
        let d = SimDesign::default();
        let coarse = Asymptotics::with_config(&d, QuadratureConfig { nodes: 20, panels: 16 });
        let fine = Asymptotics::with_config(&d, QuadratureConfig { nodes: 20, panels: 32 });
        assert!((coarse.sigma1(1.0).unwrap() - fine.sigma1(1.0).unwrap()).abs() < 1e-4);
        assert!((coarse.beta1(1.0).unwrap() - fine.beta1(1.0).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn population_densities_reproduce_the_truth() {
        let d = SimDesign::default();
        for rule in [QuadratureRule::Riemann, QuadratureRule::Trapezoid] {
            let grid = Grid::with_rule(2.0, 80, rule).unwrap();
            let gm = GridModel::new(&d, &grid).unwrap();
            let dens = gm.population_densities(&grid, 0.2, 0.1);
            let toy = gm.toy_estimator(&dens, &grid).unwrap();
            let lin = gm.solve_linear(&dens, &grid).unwrap();
            for k in 0..=80 {
                assert!((toy[k] - gm.f0[k]).abs() < 1e-12);
                assert!((lin[k] - gm.f0[k]).abs() < 1e-12);
            }
            assert!(gm.sigma1.iter().all(|&s| s >= 1.0));
        }
    }

    #[test]
    fn linear_equation_without_coupling_is_the_toy() {
        let d = SimDesign::default();
        let grid = Grid::new(2.0, 60).unwrap();
        let gm = GridModel::new(&d, &grid).unwrap().decoupled();
        let mut dens = GridModel::new(&d, &grid).unwrap().population_densities(&grid, 0.2, 0.1);
        for (k, v) in dens.h1.iter_mut().enumerate() {
            *v *= 1.0 + 0.1 * (k as f64).sin();
        }
        let toy = gm.toy_estimator(&dens, &grid).unwrap();
        let lin = gm.solve_linear(&dens, &grid).unwrap();
        for k in 0..=60 {
            assert!((toy[k] - lin[k]).abs() < 1e-12);
        }
        assert!(toy.iter().zip(&gm.f0).any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn phi_is_the_kernel_term_without_coupling() {
        let m = uncoupled(Box::new(|x| x / 2.0));
        let sol = solve_smle_phi(1.0, 0.1, &m, 200).unwrap();
        let kb = Bandwidth::new(0.1).unwrap();
        for (u, p) in sol.nodes.iter().zip(&sol.phi) {
            let f = u / 2.0;
            let d = f * (1.0 - f) / ((1.0 - f) + f);
            assert!((p - d * kb.kernel(1.0 - u)).abs() < 1e-12);
        }
    }

    #[test]
    fn smle_variance_limit_matches_sigma_sq() {
        let d = SimDesign::default();
        let pts: Vec<(f64, f64)> =
            [0.1, 0.05, 0.025].iter().map(|&b| (b, b * solve_smle_phi(1.0, b, &d, 400).unwrap().sigma_n_sq)).collect();
        let lim = extrapolate_to_zero(&pts).unwrap();
        let target = Asymptotics::new(&d).sigma_sq(1.0).unwrap();
        assert!((lim / target - 1.0).abs() < 0.02);
    }

    #[test]
    fn extrapolation_is_exact_for_quadratics() {
        let f = |b: f64| 0.3 - 2.0 * b + 5.0 * b * b;
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025].iter().map(|&b| (b, f(b))).collect();
        assert!((extrapolate_to_zero(&pts).unwrap() - 0.3).abs() < 1e-14);
        assert!(extrapolate_to_zero(&pts[..2]).is_err());
    }

    #[test]
    fn expected_densities_are_normalized() {
        let d = SimDesign::default();
        let grid = Grid::new(2.0, 50).unwrap();
        let e = expected_densities(&d, &grid, 0.3, 4).unwrap();
        assert!((e.mass(&grid) - 1.0).abs() < 1e-12);
        assert!((e.normalization - 1.0).abs() < 0.05);
    }
}
