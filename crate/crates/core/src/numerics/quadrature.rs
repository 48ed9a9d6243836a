use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Discretization of `(0, L]` with trapezoid weights and per-interval
/// cubic weights.
///
/// Integrals over the grid run from the first node to the last node; the
/// sliver `(0, nodes[0])` is handled by callers that know the integrand's
/// left limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    cubic: Vec<CubicSegment>,
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = NumericsError;

    fn try_from(nodes: Vec<f64>) -> Result<Self, Self::Error> {
        Grid::new(nodes)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.nodes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct CubicSegment {
    start: usize,
    weights: [f64; 4],
}

impl Grid {
    pub fn new(nodes: Vec<f64>) -> Result<Self, NumericsError> {
        if nodes.len() < 2 {
            return Err(NumericsError::InvalidGrid("need at least two nodes".into()));
        }
        if !nodes.iter().all(|z| z.is_finite()) {
            return Err(NumericsError::InvalidGrid("non-finite node".into()));
        }
        if nodes[0] <= 0.0 {
            return Err(NumericsError::InvalidGrid(format!(
                "first node {} must be positive",
                nodes[0]
            )));
        }
        if let Some(w) = nodes.windows(2).find(|w| w[1] <= w[0]) {
            return Err(NumericsError::InvalidGrid(format!(
                "nodes not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        let n = nodes.len();
        let mut weights = vec![0.0; n];
        for i in 0..n - 1 {
            let h = 0.5 * (nodes[i + 1] - nodes[i]);
            weights[i] += h;
            weights[i + 1] += h;
        }
        let cubic = cubic_segments(&nodes);
        Ok(Self {
            nodes,
            weights,
            cubic,
        })
    }

    /// `n` equally spaced nodes on `[first, last]`.
    pub fn uniform(first: f64, last: f64, n: usize) -> Result<Self, NumericsError> {
        if n < 2 {
            return Err(NumericsError::InvalidGrid("need at least two nodes".into()));
        }
        let step = (last - first) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| first + step * i as f64).collect();
        nodes[n - 1] = last;
        Self::new(nodes)
    }

    /// `n` geometrically spaced nodes on `[first, last]`: dense near the
    /// origin, with constant relative spacing.
    pub fn graded(first: f64, last: f64, n: usize) -> Result<Self, NumericsError> {
        if n < 2 || !(first > 0.0 && last > first) {
            return Err(NumericsError::InvalidGrid(format!(
                "graded grid needs 0 < first < last and n >= 2, got ({first}, {last}, {n})"
            )));
        }
        let ratio = (last / first).ln() / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| first * (ratio * i as f64).exp()).collect();
        nodes[0] = first;
        nodes[n - 1] = last;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
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
        self.nodes[self.nodes.len() - 1]
    }

    fn check_len(&self, values: &[f64]) -> Result<(), NumericsError> {
        if values.len() != self.nodes.len() {
            return Err(NumericsError::LengthMismatch {
                values: values.len(),
                nodes: self.nodes.len(),
            });
        }
        Ok(())
    }

    /// Composite trapezoid rule; exact for integrands linear between nodes.
    pub fn trapezoid(&self, values: &[f64]) -> Result<f64, NumericsError> {
        self.check_len(values)?;
        Ok(values.iter().zip(&self.weights).map(|(v, w)| v * w).sum())
    }

    /// Integral over each interval `[nodes[i], nodes[i+1]]` of a local cubic
    /// through four neighbouring nodes. Fourth-order accurate on smooth
    /// integrands, including on strongly graded grids.
    pub fn segment_integrals(&self, values: &[f64]) -> Result<Vec<f64>, NumericsError> {
        self.check_len(values)?;
        if self.cubic.is_empty() {
            // Fewer than four nodes: trapezoid rule.
            return Ok(self
                .nodes
                .windows(2)
                .zip(values.windows(2))
                .map(|(z, v)| 0.5 * (z[1] - z[0]) * (v[0] + v[1]))
                .collect());
        }
        Ok(self
            .cubic
            .iter()
            .map(|seg| {
                let v = &values[seg.start..seg.start + 4];
                seg.weights.iter().zip(v).map(|(w, y)| w * y).sum()
            })
            .collect())
    }

    /// Running integral `int_{nodes[0]}^{nodes[i]}` built from
    /// [`Grid::segment_integrals`].
    pub fn cumulative_cubic(&self, values: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let segs = self.segment_integrals(values)?;
        let mut out = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        out.push(acc);
        for s in segs {
            acc += s;
            out.push(acc);
        }
        Ok(out)
    }

    /// Tail integrals `int_{nodes[i]}^{last}`, summed from the right so that
    /// rapidly decaying integrands keep their relative accuracy.
    pub fn tail_cubic(&self, values: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let segs = self.segment_integrals(values)?;
        let mut out = vec![0.0; values.len()];
        for i in (0..segs.len()).rev() {
            out[i] = out[i + 1] + segs[i];
        }
        Ok(out)
    }

    pub fn integrate_cubic(&self, values: &[f64]) -> Result<f64, NumericsError> {
        Ok(*self.cumulative_cubic(values)?.last().unwrap_or(&0.0))
    }

    /// Index `i` with `nodes[i] <= z < nodes[i + 1]`, clamped to the valid
    /// interval range.
    pub fn interval(&self, z: f64) -> usize {
        let n = self.nodes.len();
        match self.nodes.binary_search_by(|x| x.total_cmp(&z)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Piecewise-linear interpolation of nodal values, constant outside the
    /// grid.
    pub fn interpolate(&self, values: &[f64], z: f64) -> f64 {
        if z <= self.nodes[0] {
            return values[0];
        }
        let n = self.nodes.len();
        if z >= self.nodes[n - 1] {
            return values[n - 1];
        }
        let i = self.interval(z);
        let t = (z - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        values[i] + t * (values[i + 1] - values[i])
    }
}

fn cubic_segments(nodes: &[f64]) -> Vec<CubicSegment> {
    let n = nodes.len();
    if n < 4 {
        return Vec::new();
    }
    (0..n - 1)
        .map(|i| {
            let start = i.saturating_sub(1).min(n - 4);
            let x0 = nodes[i];
            let h = nodes[i + 1] - x0;
            let t: [f64; 4] = std::array::from_fn(|m| nodes[start + m] - x0);
            let weights = std::array::from_fn(|k| {
                let others: Vec<f64> = (0..4).filter(|&m| m != k).map(|m| t[m]).collect();
                let (a, b, c) = (others[0], others[1], others[2]);
                let s1 = a + b + c;
                let s2 = a * b + a * c + b * c;
                let s3 = a * b * c;
                let integral =
                    h.powi(4) / 4.0 - s1 * h.powi(3) / 3.0 + s2 * h * h / 2.0 - s3 * h;
                let denom = (t[k] - a) * (t[k] - b) * (t[k] - c);
                integral / denom
            });
            CubicSegment { start, weights }
        })
        .collect()
}

/// Composite trapezoid quadrature of nodal values over the grid.
pub fn quadrature(values: &[f64], grid: &Grid) -> Result<f64, NumericsError> {
    grid.trapezoid(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn weights_sum_to_span() {
        for g in [
            Grid::uniform(0.001, 5.0, 2000).unwrap(),
            Grid::graded(1e-6, 5.0, 2000).unwrap(),
        ] {
            let s: f64 = g.weights().iter().sum();
            let span = g.last() - g.first();
            assert!(((s - span) / span).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_integrand() {
        let g = Grid::graded(0.001, 5.0, 2000).unwrap();
        let ones = vec![1.0; g.len()];
        assert!((quadrature(&ones, &g).unwrap() - 4.999).abs() < 1e-9);
        assert!((g.integrate_cubic(&ones).unwrap() - 4.999).abs() < 1e-9);
    }

    #[test]
    fn exponential_on_graded_grid() {
        let g = Grid::graded(0.001, 1.0, 2000).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|z| z.exp()).collect();
        let exact = E - 0.001f64.exp();
        assert!((quadrature(&v, &g).unwrap() - exact).abs() < 1e-6);
        assert!((g.integrate_cubic(&v).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_exact_for_piecewise_linear() {
        let g = Grid::new(vec![0.1, 0.3, 0.35, 1.0, 2.5]).unwrap();
        let v = [1.0, -2.0, 4.0, 0.5, 3.0];
        let mut exact = 0.0;
        for i in 0..4 {
            exact += 0.5 * (g.nodes()[i + 1] - g.nodes()[i]) * (v[i] + v[i + 1]);
        }
        assert!((quadrature(&v, &g).unwrap() - exact).abs() < 1e-15);
    }

    #[test]
    fn cubic_exact_for_cubics() {
        let g = Grid::new(vec![0.2, 0.25, 0.4, 0.9, 1.0, 1.7, 2.0]).unwrap();
        let f = |z: f64| 2.0 * z.powi(3) - z * z + 3.0;
        let prim = |z: f64| 0.5 * z.powi(4) - z.powi(3) / 3.0 + 3.0 * z;
        let v: Vec<f64> = g.nodes().iter().map(|&z| f(z)).collect();
        let cum = g.cumulative_cubic(&v).unwrap();
        for (i, &z) in g.nodes().iter().enumerate() {
            assert!((cum[i] - (prim(z) - prim(0.2))).abs() < 1e-12);
        }
    }

    #[test]
    fn tails_complement_cumulative() {
        let g = Grid::graded(0.01, 30.0, 2000).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|z| (-z).exp()).collect();
        let tail = g.tail_cubic(&v).unwrap();
        let cum = g.cumulative_cubic(&v).unwrap();
        assert!((tail[0] - cum[1999]).abs() < 1e-14);
        // Relative accuracy survives deep in the tail.
        let exact = (-g.nodes()[1990]).exp() - (-30.0f64).exp();
        let rel = ((tail[1990] - exact) / exact).abs();
        assert!(rel < 1e-5, "{rel}");
    }

    #[test]
    fn length_mismatch() {
        let g = Grid::uniform(0.1, 1.0, 10).unwrap();
        assert!(matches!(
            quadrature(&[1.0; 3], &g),
            Err(NumericsError::LengthMismatch { values: 3, nodes: 10 })
        ));
    }

    #[test]
    fn invalid_grids() {
        assert!(Grid::new(vec![0.0, 1.0]).is_err());
        assert!(Grid::new(vec![0.5, 0.5, 1.0]).is_err());
        assert!(Grid::new(vec![1.0]).is_err());
    }

    #[test]
    fn interpolation_and_intervals() {
        let g = Grid::new(vec![1.0, 2.0, 4.0]).unwrap();
        let v = [10.0, 20.0, 0.0];
        assert_eq!(g.interpolate(&v, 0.5), 10.0);
        assert_eq!(g.interpolate(&v, 1.5), 15.0);
        assert_eq!(g.interpolate(&v, 3.0), 10.0);
        assert_eq!(g.interpolate(&v, 9.0), 0.0);
        assert_eq!(g.interval(4.0), 1);
        assert_eq!(g.interval(2.0), 1);
    }
}
