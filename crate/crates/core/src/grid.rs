//! Graded radial grids.
//!
//! Nodes are geometric in `ρ − origin`: `ρ_j = origin + L q^j`. Refinement
//! inserts the geometric midpoint of every cell, so `q → √q` and the coarse
//! nodes are a subset of the fine ones.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Target ratio between consecutive offsets.
    pub q: f64,
    /// Number of refinements applied to the base grid.
    pub level: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { q: 1.02, level: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub origin: f64,
    pub nodes: Vec<f64>,
}

impl Grid {
    /// Geometric grid from `start` to `end` in the offset `ρ − origin`, with
    /// the ratio adjusted downward so the end point is hit exactly.
    pub fn geometric(origin: f64, start: f64, end: f64, q: f64) -> Grid {
        assert!(start > origin && end > start && q > 1.0);
        let (a, b) = (start - origin, end - origin);
        let n = ((b / a).ln() / q.ln()).ceil().max(1.0) as usize;
        let r = (b / a).powf(1.0 / n as f64);
        let mut nodes: Vec<f64> = (0..=n).map(|j| origin + a * r.powi(j as i32)).collect();
        nodes[0] = start;
        nodes[n] = end;
        Grid { origin, nodes }
    }

    pub fn from_spec(origin: f64, start: f64, end: f64, spec: &GridSpec) -> Grid {
        let mut g = Grid::geometric(origin, start, end, spec.q);
        for _ in 0..spec.level {
            g = g.refine();
        }
        g
    }

    pub fn refine(&self) -> Grid {
        let o = self.origin;
        let mut nodes = Vec::with_capacity(2 * self.nodes.len());
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(o + ((w[0] - o) * (w[1] - o)).sqrt());
        }
        nodes.push(*self.nodes.last().unwrap());
        Grid { origin: o, nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.nodes[0]
    }

    pub fn last(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Boundaries of the dual cell around node `i` (geometric midpoints).
    pub fn dual(&self, i: usize) -> (f64, f64) {
        let o = self.origin;
        let mid = |a: f64, b: f64| o + ((a - o) * (b - o)).sqrt();
        let x = &self.nodes;
        let lo = if i == 0 { x[0] } else { mid(x[i - 1], x[i]) };
        let hi = if i + 1 == x.len() { x[i] } else { mid(x[i], x[i + 1]) };
        (lo, hi)
    }

    /// Index of the cell containing `r` (clamped to the grid).
    pub fn locate(&self, r: f64) -> usize {
        let x = &self.nodes;
        match x.binary_search_by(|p| p.partial_cmp(&r).unwrap()) {
            Ok(i) => i.min(x.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(x.len() - 2),
        }
    }

    /// Second-order first derivative of nodal data on the nonuniform grid.
    pub fn derivative(&self, u: &[f64]) -> Vec<f64> {
        let x = &self.nodes;
        let n = x.len();
        let mut d = vec![0.0; n];
        for i in 0..n {
            let (a, b, c) = if i == 0 {
                (0, 1, 2)
            } else if i == n - 1 {
                (n - 3, n - 2, n - 1)
            } else {
                (i - 1, i, i + 1)
            };
            d[i] = lagrange_d1(x[a], x[b], x[c], u[a], u[b], u[c], x[i]);
        }
        d
    }
}

/// Derivative at `t` of the quadratic through three points.
pub fn lagrange_d1(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64, t: f64) -> f64 {
    y0 * ((t - x1) + (t - x2)) / ((x0 - x1) * (x0 - x2))
        + y1 * ((t - x0) + (t - x2)) / ((x1 - x0) * (x1 - x2))
        + y2 * ((t - x0) + (t - x1)) / ((x2 - x0) * (x2 - x1))
}

/// Second derivative of the quadratic through three points.
pub fn lagrange_d2(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    2.0 * (y0 / ((x0 - x1) * (x0 - x2)) + y1 / ((x1 - x0) * (x1 - x2)) + y2 / ((x2 - x0) * (x2 - x1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn refinement_nests() {
        let g = Grid::geometric(0.0, 0.1, 100.0, 1.1);
        let f = g.refine();
        assert_eq!(f.len(), 2 * g.len() - 1);
        for (i, x) in g.nodes.iter().enumerate() {
            assert_relative_eq!(f.nodes[2 * i], *x, max_relative = 1e-15);
        }
    }

    #[test]
    fn shifted_grid_hits_endpoints() {
        let g = Grid::geometric(-1.0, 0.0, 50.0, 1.05);
        assert_eq!(g.first(), 0.0);
        assert_eq!(g.last(), 50.0);
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn derivative_exact_on_quadratics() {
        let g = Grid::geometric(0.0, 0.5, 20.0, 1.2);
        let u: Vec<f64> = g.nodes.iter().map(|x| 3.0 * x * x - x).collect();
        let d = g.derivative(&u);
        for (x, dx) in g.nodes.iter().zip(d) {
            assert_relative_eq!(dx, 6.0 * x - 1.0, max_relative = 1e-10);
        }
    }
}
