//! Piecewise cubic Hermite interpolation on strictly increasing nodes.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CubicHermite {
    nodes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl CubicHermite {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() || nodes.len() != slopes.len() {
            return Err(Error::InvalidParameter(format!(
                "Hermite table needs >= 2 nodes with matching values/slopes (got {}, {}, {})",
                nodes.len(),
                values.len(),
                slopes.len()
            )));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "Hermite nodes must be strictly increasing".into(),
            ));
        }
        if nodes.iter().chain(&values).chain(&slopes).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "Hermite table contains non-finite entries".into(),
            ));
        }
        Ok(Self {
            nodes,
            values,
            slopes,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Index `j` of the cell `[nodes[j], nodes[j + 1]]` containing `x` (clamped to the table).
    pub fn cell(&self, x: f64) -> usize {
        let j = self.nodes.partition_point(|&n| n <= x);
        j.saturating_sub(1).min(self.nodes.len() - 2)
    }

    /// Evaluates the interpolant or one of its first two derivatives. Outside the
    /// node range the table is extended linearly with the end slope.
    pub fn eval(&self, x: f64, order: u8) -> f64 {
        let last = self.nodes.len() - 1;
        if x < self.nodes[0] || x > self.nodes[last] {
            let end = if x < self.nodes[0] { 0 } else { last };
            return match order {
                0 => self.values[end] + self.slopes[end] * (x - self.nodes[end]),
                1 => self.slopes[end],
                _ => 0.0,
            };
        }
        self.eval_in_cell(self.cell(x), x, order)
    }

    pub fn eval_in_cell(&self, j: usize, x: f64, order: u8) -> f64 {
        let (x0, x1) = (self.nodes[j], self.nodes[j + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (y0, y1) = (self.values[j], self.values[j + 1]);
        let (m0, m1) = (self.slopes[j] * h, self.slopes[j + 1] * h);
        let t2 = t * t;
        match order {
            0 => {
                let t3 = t2 * t;
                (2.0 * t3 - 3.0 * t2 + 1.0) * y0
                    + (t3 - 2.0 * t2 + t) * m0
                    + (-2.0 * t3 + 3.0 * t2) * y1
                    + (t3 - t2) * m1
            }
            1 => {
                ((6.0 * t2 - 6.0 * t) * (y0 - y1)
                    + (3.0 * t2 - 4.0 * t + 1.0) * m0
                    + (3.0 * t2 - 2.0 * t) * m1)
                    / h
            }
            _ => {
                ((12.0 * t - 6.0) * (y0 - y1) + (6.0 * t - 4.0) * m0 + (6.0 * t - 2.0) * m1)
                    / (h * h)
            }
        }
    }

    /// True when every cell satisfies the Fritsch-Carlson sufficient condition for
    /// monotone increase (positive secants, slope ratios inside the circle of radius 3).
    pub fn is_monotone_increasing(&self) -> bool {
        self.nodes.windows(2).enumerate().all(|(j, w)| {
            let secant = (self.values[j + 1] - self.values[j]) / (w[1] - w[0]);
            if !(secant > 0.0) || self.slopes[j] < 0.0 || self.slopes[j + 1] < 0.0 {
                return false;
            }
            let a = self.slopes[j] / secant;
            let b = self.slopes[j + 1] / secant;
            a * a + b * b <= 9.0
        })
    }
}
