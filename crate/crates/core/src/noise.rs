//! Counter-addressed Gaussian increments.
//!
//! Increment `k` of path `p` under seed `s` is a pure function of `(s, p, k)`: the
//! ChaCha8 stream is selected by the path index and the word position by the step
//! pair, and each pair of steps consumes exactly two `u64` words through Box-Muller.
//! Results therefore do not depend on how paths are scheduled across workers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::GridSpec;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// Identity of a generated noise block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NoiseId {
    pub seed: u64,
    pub path_index: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBlock {
    db: Vec<f64>,
    dt: f64,
    id: Option<NoiseId>,
}

fn rng_for(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

fn box_muller(a: u64, b: u64) -> (f64, f64) {
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((a >> 11) + 1) as f64 * TWO_POW_M53;
    let u2 = (b >> 11) as f64 * TWO_POW_M53;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Standard normal number `step` of path `path_index`, by random access.
pub fn standard_normal_at(seed: u64, path_index: u64, step: u64) -> f64 {
    let mut rng = rng_for(seed, path_index);
    // two u64 (four 32-bit words) per pair of steps
    rng.set_word_pos(u128::from(step / 2) * 4);
    let (z0, z1) = box_muller(rng.next_u64(), rng.next_u64());
    if step.is_multiple_of(2) {
        z0
    } else {
        z1
    }
}

impl NoiseBlock {
    /// `grid.n_steps` i.i.d. `N(0, dt)` increments keyed by `(seed, path_index)`.
    pub fn generate(seed: u64, path_index: u64, grid: &GridSpec) -> Self {
        let n = grid.n_steps;
        let dt = grid.dt();
        let scale = dt.sqrt();
        let mut rng = rng_for(seed, path_index);
        let mut db = Vec::with_capacity(n + 1);
        while db.len() < n {
            let (z0, z1) = box_muller(rng.next_u64(), rng.next_u64());
            db.push(z0 * scale);
            db.push(z1 * scale);
        }
        db.truncate(n);
        Self {
            db,
            dt,
            id: Some(NoiseId { seed, path_index }),
        }
    }

    pub fn from_increments(db: Vec<f64>, dt: f64) -> Self {
        Self { db, dt, id: None }
    }

    /// Increments of a discrete Brownian path given by its values `B_0 = 0, B_1, ...`.
    pub fn from_brownian_values(values: &[f64], dt: f64) -> Self {
        let db = values.windows(2).map(|w| w[1] - w[0]).collect();
        Self::from_increments(db, dt)
    }

    pub fn db(&self) -> &[f64] {
        &self.db
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.db.is_empty()
    }

    pub fn id(&self) -> Option<NoiseId> {
        self.id
    }

    /// Discrete Brownian path `B_{t_k}`, `k = 0..=n`.
    pub fn brownian(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.db.len() + 1);
        let mut acc = 0.0;
        b.push(acc);
        for &d in &self.db {
            acc += d;
            b.push(acc);
        }
        b
    }

    /// Sums consecutive groups of `factor` increments: the same Brownian path on a
    /// grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Self {
        assert!(factor > 0 && self.db.len().is_multiple_of(factor), "factor must divide the step count");
        Self {
            db: self.db.chunks(factor).map(|c| c.iter().sum()).collect(),
            dt: self.dt * factor as f64,
            id: self.id,
        }
    }

    /// Cameron-Martin shift `db_k + eps·h_k·dt`.
    pub fn shifted(&self, eps: f64, h: &[f64]) -> Self {
        assert_eq!(h.len(), self.db.len(), "shift direction must match the grid");
        Self {
            db: self
                .db
                .iter()
                .zip(h)
                .map(|(d, hk)| d + eps * hk * self.dt)
                .collect(),
            dt: self.dt,
            id: self.id,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            db: self.db.iter().map(|d| -d).collect(),
            dt: self.dt,
            id: self.id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regeneration_is_bitwise_identical() {
        let g = GridSpec::new(1.0, 101).unwrap();
        let a = NoiseBlock::generate(7, 3, &g);
        let b = NoiseBlock::generate(7, 3, &g);
        assert_eq!(a.db().len(), 101);
        assert!(a.db().iter().zip(b.db()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.db(), NoiseBlock::generate(7, 4, &g).db());
        assert_ne!(a.db(), NoiseBlock::generate(8, 3, &g).db());
    }

    #[test]
    fn random_access_matches_sequential() {
        let g = GridSpec::new(1.0, 9).unwrap();
        let block = NoiseBlock::generate(11, 5, &g);
        for (k, d) in block.db().iter().enumerate() {
            let z = standard_normal_at(11, 5, k as u64) * g.dt().sqrt();
            assert_eq!(z.to_bits(), d.to_bits());
        }
    }

    #[test]
    fn increments_have_the_right_moments() {
        let n = 200_000;
        let g = GridSpec::new(2.0, n).unwrap();
        let block = NoiseBlock::generate(1, 0, &g);
        let dt = g.dt();
        let mean = block.db().iter().sum::<f64>() / n as f64;
        let var = block.db().iter().map(|d| d * d).sum::<f64>() / n as f64;
        // standard errors: sqrt(dt/n) for the mean, dt·sqrt(2/n) for the variance
        assert!(mean.abs() < 5.0 * (dt / n as f64).sqrt());
        assert!((var - dt).abs() < 5.0 * dt * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn coarsening_preserves_the_path() {
        let g = GridSpec::new(1.0, 64).unwrap();
        let fine = NoiseBlock::generate(2, 0, &g);
        let coarse = fine.coarsen(4);
        let bf = fine.brownian();
        let bc = coarse.brownian();
        for (k, v) in bc.iter().enumerate() {
            assert!((v - bf[4 * k]).abs() < 1e-14);
        }
        assert_eq!(coarse.dt(), 4.0 * fine.dt());
    }
}
