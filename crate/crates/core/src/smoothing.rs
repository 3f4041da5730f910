//! Boundary corrected kernel estimates of the observation sub-densities on a
//! grid.
//!
//! Near `0` and `M` the kernel `K` is replaced by `alpha K(x) + beta x K(x)`;
//! the bivariate estimates apply the correction to each factor of the
//! product kernel. Negative values are clipped to zero and the bivariate
//! estimates vanish on pairs closer than the separation gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{boundary_coeffs, triweight, Bandwidth};
use crate::sample::{CensoredSample, Delta};
use crate::scalar::Scalar;

/// Upper triangular table over node pairs `(i, j)`, `j >= i + gap`; every
/// other entry is identically zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMatrix<T> {
    size: usize,
    gap: usize,
    data: Vec<T>,
}

impl<T: Scalar> PairMatrix<T> {
    pub fn zeros(size: usize, gap: usize) -> Self {
        Self { size, gap: gap.max(1), data: vec![T::zero(); size * size] }
    }

    /// Number of nodes on each axis.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Minimal index distance of a stored pair.
    pub fn gap(&self) -> usize {
        self.gap
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        if j < i + self.gap {
            T::zero()
        } else {
            self.data[i * self.size + j]
        }
    }

    /// Sets an entry; writes inside the gap are ignored.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        if j >= i + self.gap {
            self.data[i * self.size + j] = value;
        }
    }

    /// Row `i` restricted to `j >= i + gap`, returned with its first index.
    #[inline]
    pub fn row(&self, i: usize) -> (usize, &[T]) {
        let start = (i + self.gap).min(self.size);
        (start, &self.data[i * self.size + start..(i + 1) * self.size])
    }

    pub fn scale(&mut self, c: T) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == T::zero())
    }
}

/// Grid-sampled density estimates, divided by their joint discrete mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedDensities<T> {
    pub h1: Vec<T>,
    pub h2: Vec<T>,
    pub h: PairMatrix<T>,
    pub bandwidth: T,
    pub epsilon: T,
    /// Discrete mass the raw estimates were divided by.
    pub normalization: T,
}

impl<T: Scalar> SmoothedDensities<T> {
    /// Multiplies all three estimates by `c` (used to test homogeneity).
    pub fn scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        out.h1.iter_mut().for_each(|v| *v *= c);
        out.h2.iter_mut().for_each(|v| *v *= c);
        out.h.scale(c);
        out.normalization *= c;
        out
    }

    /// Discrete mass `sum (h1 + h2) w + sum_{i<j} h w_i w_j`.
    pub fn mass(&self, grid: &Grid<T>) -> T {
        discrete_mass(&self.h1, &self.h2, &self.h, grid)
    }
}

fn discrete_mass<T: Scalar>(h1: &[T], h2: &[T], h: &PairMatrix<T>, grid: &Grid<T>) -> T {
    let w = grid.weights();
    let single: T = (1..w.len()).map(|i| (h1[i] + h2[i]) * w[i]).sum();
    let pair: T = (0..w.len())
        .map(|i| {
            let (start, row) = h.row(i);
            let s: T = row.iter().zip(&w[start..]).map(|(&v, &wj)| v * wj).sum();
            s * w[i]
        })
        .sum();
    single + pair
}

/// Divides the three estimates by their discrete mass `Z`.
pub fn normalize<T: Scalar>(
    mut h1: Vec<T>,
    mut h2: Vec<T>,
    mut h: PairMatrix<T>,
    grid: &Grid<T>,
    bandwidth: T,
    epsilon: T,
) -> Result<SmoothedDensities<T>> {
    let n = grid.cells() + 1;
    if h1.len() != n || h2.len() != n || h.size() != n {
        return Err(Error::InvalidArgument("density tables do not match the grid".into()));
    }
    if h1.iter().chain(&h2).any(|&v| v < T::zero()) || h.data.iter().any(|&v| v < T::zero()) {
        return Err(Error::InvalidArgument("density tables must be nonnegative".into()));
    }
    let z = discrete_mass(&h1, &h2, &h, grid);
    if !(z > T::zero()) {
        return Err(Error::ZeroMass);
    }
    let inv = T::one() / z;
    h1.iter_mut().for_each(|v| *v *= inv);
    h2.iter_mut().for_each(|v| *v *= inv);
    h.scale(inv);
    Ok(SmoothedDensities { h1, h2, h, bandwidth, epsilon, normalization: z })
}

/// Boundary corrected kernel weights for the nodes of a grid.
#[derive(Debug, Clone)]
pub struct KernelSmoother<'a, T> {
    grid: &'a Grid<T>,
    bandwidth: Bandwidth<T>,
    /// Per node `(alpha, signed beta)`; `(1, 0)` away from the edges.
    coeffs: Vec<(T, T)>,
}

/// Nonzero kernel weights of one observation on consecutive nodes.
#[derive(Debug, Clone)]
struct SparseRow<T> {
    start: usize,
    values: Vec<T>,
}

impl<'a, T: Scalar> KernelSmoother<'a, T> {
    pub fn new(grid: &'a Grid<T>, b: T) -> Result<Self> {
        let bandwidth = Bandwidth::new(b)?;
        let upper = grid.upper();
        if b >= upper / T::lit(2.0) {
            return Err(Error::BandwidthTooLarge { bandwidth: b.to_f64_lossy(), upper: upper.to_f64_lossy() });
        }
        let coeffs = grid
            .points()
            .iter()
            .map(|&t| {
                if t < b {
                    let c = boundary_coeffs(t / b)?;
                    Ok((c.alpha, c.beta))
                } else if t > upper - b {
                    let c = boundary_coeffs(((upper - t) / b).max(T::zero()))?;
                    Ok((c.alpha, -c.beta))
                } else {
                    Ok((T::one(), T::zero()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, bandwidth, coeffs })
    }

    pub fn bandwidth(&self) -> T {
        self.bandwidth.get()
    }

    /// Corrected kernel weight of an observation at `x` for node `i`.
    #[inline]
    pub fn weight(&self, i: usize, x: T) -> T {
        let b = self.bandwidth.get();
        let s = (self.grid.points()[i] - x) / b;
        if s.abs() >= T::one() {
            return T::zero();
        }
        let (a, beta) = self.coeffs[i];
        (a + beta * s) * triweight(s) / b
    }

    fn row(&self, x: T) -> SparseRow<T> {
        let b = self.bandwidth.get();
        let d = self.grid.width();
        let last = self.grid.cells();
        let lo = ((x - b) / d).ceil().to_f64_lossy().max(0.0) as usize;
        let hi = (((x + b) / d).floor().to_f64_lossy().max(0.0) as usize).min(last);
        if lo > hi {
            return SparseRow { start: 0, values: Vec::new() };
        }
        SparseRow { start: lo, values: (lo..=hi).map(|i| self.weight(i, x)).collect() }
    }

    fn univariate<I>(&self, points: I, n: usize) -> Vec<T>
    where
        I: Iterator<Item = T>,
    {
        let mut out = vec![T::zero(); self.grid.cells() + 1];
        for x in points {
            let r = self.row(x);
            for (k, v) in r.values.iter().enumerate() {
                out[r.start + k] += *v;
            }
        }
        let inv = T::one() / T::from_usize_lossy(n);
        out.iter_mut().for_each(|v| *v = (*v * inv).max(T::zero()));
        out
    }

    fn bivariate<I>(&self, pairs: I, n: usize, epsilon: T) -> PairMatrix<T>
    where
        I: Iterator<Item = (T, T)>,
    {
        let size = self.grid.cells() + 1;
        let mut out = PairMatrix::zeros(size, self.grid.gap_cells(epsilon));
        let gap = out.gap;
        for (t, u) in pairs {
            let rt = self.row(t);
            let ru = self.row(u);
            for (a, &vt) in rt.values.iter().enumerate() {
                let i = rt.start + a;
                for (c, &vu) in ru.values.iter().enumerate() {
                    let j = ru.start + c;
                    if j >= i + gap {
                        out.data[i * size + j] += vt * vu;
                    }
                }
            }
        }
        let inv = T::one() / T::from_usize_lossy(n);
        out.data.iter_mut().for_each(|v: &mut T| *v = (*v * inv).max(T::zero()));
        out
    }
}

fn checked<'a, T: Scalar>(sample: &CensoredSample<T>, b: T, grid: &'a Grid<T>) -> Result<KernelSmoother<'a, T>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    KernelSmoother::new(grid, b)
}

/// `h1(t) = (1/n) sum K_b(t - T_i) 1{delta_i = 1}` with boundary correction.
pub fn estimate_h1<T: Scalar>(sample: &CensoredSample<T>, b: T, grid: &Grid<T>) -> Result<Vec<T>> {
    let s = checked(sample, b, grid)?;
    let pts = sample.records().iter().filter(|r| r.delta == Delta::Left).map(|r| r.t);
    Ok(s.univariate(pts, sample.len()))
}

/// `h2(u) = (1/n) sum K_b(u - U_i) 1{delta_i = 3}` with boundary correction.
pub fn estimate_h2<T: Scalar>(sample: &CensoredSample<T>, b: T, grid: &Grid<T>) -> Result<Vec<T>> {
    let s = checked(sample, b, grid)?;
    let pts = sample.records().iter().filter(|r| r.delta == Delta::Right).map(|r| r.u);
    Ok(s.univariate(pts, sample.len()))
}

/// Product kernel estimate of the interval-observation density.
pub fn estimate_h<T: Scalar>(sample: &CensoredSample<T>, b: T, grid: &Grid<T>) -> Result<PairMatrix<T>> {
    let s = checked(sample, b, grid)?;
    let pairs = sample.records().iter().filter(|r| r.delta == Delta::Interval).map(|r| (r.t, r.u));
    Ok(s.bivariate(pairs, sample.len(), sample.epsilon()))
}

/// Kernel estimate of the density of `T`.
pub fn estimate_g1<T: Scalar>(sample: &CensoredSample<T>, b: T, grid: &Grid<T>) -> Result<Vec<T>> {
    let s = checked(sample, b, grid)?;
    Ok(s.univariate(sample.records().iter().map(|r| r.t), sample.len()))
}

/// Kernel estimate of the density of `U`.
pub fn estimate_g2<T: Scalar>(sample: &CensoredSample<T>, b: T, grid: &Grid<T>) -> Result<Vec<T>> {
    let s = checked(sample, b, grid)?;
    Ok(s.univariate(sample.records().iter().map(|r| r.u), sample.len()))
}

/// Kernel estimate of the joint density of `(T, U)`.
pub fn estimate_g<T: Scalar>(sample: &CensoredSample<T>, b: T, grid: &Grid<T>) -> Result<PairMatrix<T>> {
    let s = checked(sample, b, grid)?;
    Ok(s.bivariate(sample.records().iter().map(|r| (r.t, r.u)), sample.len(), sample.epsilon()))
}

/// All three sub-density estimates, normalized to unit discrete mass.
pub fn smooth<T: Scalar>(sample: &CensoredSample<T>, b: T, grid: &Grid<T>) -> Result<SmoothedDensities<T>> {
    let h1 = estimate_h1(sample, b, grid)?;
    let h2 = estimate_h2(sample, b, grid)?;
    let h = estimate_h(sample, b, grid)?;
    normalize(h1, h2, h, grid, b, sample.epsilon())
}
