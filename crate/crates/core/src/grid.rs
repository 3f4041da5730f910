//! Uniform grid on `[0, M]` and the quadrature weights attached to its nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How discrete integrals over the grid are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum QuadratureRule {
    /// Right-endpoint Riemann sums over `t_1, ..., t_m`, each node carrying
    /// the cell width `d`. The origin does not enter any sum.
    #[default]
    Riemann,
    /// Composite trapezoid weights: `d/2` at `t_0` and `t_m`, `d` elsewhere.
    /// The origin only enters pair sums, where `F(t_0) = 0` keeps every log
    /// finite.
    Trapezoid,
}

/// Uniform partition `0 = t_0 < t_1 < ... < t_m = M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    upper: T,
    cells: usize,
    rule: QuadratureRule,
    points: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(upper: T, cells: usize) -> Result<Self> {
        Self::with_rule(upper, cells, QuadratureRule::Riemann)
    }

    pub fn with_rule(upper: T, cells: usize, rule: QuadratureRule) -> Result<Self> {
        if !(upper > T::zero() && upper.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid end point must be positive, got {upper}")));
        }
        if cells < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2 cells, got {cells}")));
        }
        let d = upper / T::from_usize_lossy(cells);
        let points: Vec<T> = (0..=cells)
            .map(|i| if i == cells { upper } else { T::from_usize_lossy(i) * d })
            .collect();
        let mut weights = vec![d; cells + 1];
        match rule {
            QuadratureRule::Riemann => weights[0] = T::zero(),
            QuadratureRule::Trapezoid => {
                weights[0] = d / T::lit(2.0);
                weights[cells] = d / T::lit(2.0);
            }
        }
        Ok(Self { upper, cells, rule, points, weights })
    }

    /// Right end point `M`.
    pub fn upper(&self) -> T {
        self.upper
    }

    /// Number of cells `m`; there are `m + 1` nodes.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    /// Common cell width `d = M / m`.
    pub fn width(&self) -> T {
        self.upper / T::from_usize_lossy(self.cells)
    }

    /// Nodes `t_0, ..., t_m`.
    pub fn points(&self) -> &[T] {
        &self.points
    }

    /// Quadrature weight of each node, indexed like [`Grid::points`].
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Smallest index offset `k` with `t_{i+k} - t_i >= eps`.
    pub fn gap_cells(&self, eps: T) -> usize {
        let ratio = (eps / self.width()).to_f64_lossy();
        (ratio - 1e-9).ceil().max(0.0) as usize
    }

    /// Index of the node closest to `x` (clamped to the grid).
    pub fn nearest_index(&self, x: T) -> usize {
        let r = (x / self.width()).round().to_f64_lossy();
        r.clamp(0.0, self.cells as f64) as usize
    }

    /// Indices of nodes inside `[lo, hi]`.
    pub fn indices_within(&self, lo: T, hi: T) -> impl Iterator<Item = usize> + '_ {
        let tol = self.width() * T::lit(1e-9);
        (0..=self.cells).filter(move |&i| self.points[i] >= lo - tol && self.points[i] <= hi + tol)
    }

    /// Weighted sum `sum_i w_i f_i` over the single-sum nodes `t_1..t_m`.
    pub fn integrate(&self, values: &[T]) -> T {
        debug_assert_eq!(values.len(), self.cells + 1);
        values.iter().zip(&self.weights).skip(1).map(|(&v, &w)| v * w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_points_and_widths() {
        let g = Grid::new(2.0_f64, 100).unwrap();
        assert_eq!(g.points().len(), 101);
        assert_eq!(g.points()[0], 0.0);
        assert_eq!(g.points()[100], 2.0);
        assert!((g.width() - 0.02).abs() < 1e-15);
        assert!(g.points().windows(2).all(|w| w[1] > w[0]));
        for w in g.points().windows(2) {
            assert!((w[1] - w[0] - 0.02).abs() < 1e-12);
        }
        assert_eq!(g.weights()[0], 0.0);
        assert_eq!(g.gap_cells(0.1), 5);
        assert!(Grid::new(0.0_f64, 10).is_err());
        assert!(Grid::new(1.0_f64, 1).is_err());
    }

    #[test]
    fn trapezoid_weights_integrate_linear_exactly() {
        let g = Grid::with_rule(2.0_f64, 40, QuadratureRule::Trapezoid).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 2.0).abs() < 1e-13);
        let lin: f64 = g.points().iter().zip(g.weights()).map(|(t, w)| t * w).sum();
        assert!((lin - 2.0).abs() < 1e-13);
    }

    #[test]
    fn gap_cells_for_non_multiple() {
        let g = Grid::new(2.0_f64, 64).unwrap();
        // d = 0.03125, eps/d = 3.2
        assert_eq!(g.gap_cells(0.1), 4);
        assert_eq!(g.nearest_index(1.0), 32);
        assert_eq!(g.indices_within(0.2, 0.3).count(), 3);
    }
}
