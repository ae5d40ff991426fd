//! Seeded Brownian increment lattices with exact dyadic aggregation.
//!
//! A lattice holds the increments of an m-dimensional Brownian motion on the
//! finest grid a study needs. Coarser step sizes never resample: they sum
//! consecutive fine increments, so every scheme resolution in a convergence
//! study is driven by the *same* Brownian path and differences between
//! resolutions measure discretization error alone.
//!
//! Reproducibility contract:
//!
//! * the generator is ChaCha seeded from the master seed, with the path index
//!   selecting an independent stream (a counter construction — no sequential
//!   jumping), so path k is the same whether simulated alone, in a different
//!   order, or on a different thread count;
//! * increments are drawn step-by-step, coordinates in order within each step,
//!   each `Normal(0, fine_dt)`; this generation order is part of the contract
//!   (changing it would silently change every seeded result);
//! * aggregation sums fine increments left to right, so a coarse increment is
//!   a specific, bit-reproducible floating-point value, and an aggregation
//!   ratio of 1 returns the fine increment bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::util::integer_ratio;

/// Errors from lattice construction and grid queries.
#[derive(Debug, Error)]
pub enum BrownianError {
    #[error("invalid lattice parameter: {0}")]
    Parameter(String),
    #[error("coarse step {coarse_dt} is not an integer multiple of the fine step {fine_dt}")]
    GridMismatch { coarse_dt: f64, fine_dt: f64 },
    #[error("time {t} is not on the fine lattice grid (fine step {fine_dt})")]
    OffGrid { t: f64, fine_dt: f64 },
    #[error("requested step {index} of {available} available coarse steps")]
    StepOutOfRange { index: usize, available: usize },
}

/// Increments of one driving Brownian path on the finest dyadic grid.
#[derive(Debug, Clone)]
pub struct BrownianLattice {
    noise_dim: usize,
    fine_dt: f64,
    horizon: f64,
    seed: u64,
    path_index: u64,
    fine_steps: usize,
    /// Step-major storage: entry `step * noise_dim + coord`.
    increments: Vec<f64>,
}

/// Relative tolerance for deciding that a time or step ratio sits on the grid.
const GRID_REL_TOL: f64 = 1e-9;

impl BrownianLattice {
    /// Draw a fresh lattice for `(seed, path_index)` covering `[0, horizon]`
    /// with steps of `fine_dt`.
    ///
    /// Distinct path indices give statistically independent paths under the
    /// same master seed, and every call with the same arguments reproduces the
    /// same increments bit-for-bit.
    pub fn generate(
        seed: u64,
        path_index: u64,
        noise_dim: usize,
        fine_dt: f64,
        horizon: f64,
    ) -> Result<Self, BrownianError> {
        if noise_dim == 0 {
            return Err(BrownianError::Parameter(
                "noise_dim must be at least 1".to_string(),
            ));
        }
        if !(fine_dt > 0.0 && fine_dt <= 1.0) || !fine_dt.is_finite() {
            return Err(BrownianError::Parameter(format!(
                "fine_dt must lie in (0, 1], got {fine_dt}"
            )));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(BrownianError::Parameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        let fine_steps = steps_covering(horizon, fine_dt);
        let total = fine_steps
            .checked_mul(noise_dim)
            .filter(|&n| n <= (1 << 31))
            .ok_or_else(|| {
                BrownianError::Parameter(format!(
                    "lattice of {fine_steps} steps × {noise_dim} coordinates is too large"
                ))
            })?;

        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        let normal = Normal::new(0.0, fine_dt.sqrt())
            .map_err(|e| BrownianError::Parameter(e.to_string()))?;
        let mut increments = Vec::with_capacity(total);
        for _step in 0..fine_steps {
            for _coord in 0..noise_dim {
                increments.push(normal.sample(&mut rng));
            }
        }
        Ok(Self {
            noise_dim,
            fine_dt,
            horizon,
            seed,
            path_index,
            fine_steps,
            increments,
        })
    }

    /// Build a lattice from explicit increments (step-major, length
    /// `steps × noise_dim`). For deterministic playback in tests; the seed and
    /// path index are recorded as 0.
    pub fn from_increments(
        noise_dim: usize,
        fine_dt: f64,
        increments: Vec<f64>,
    ) -> Result<Self, BrownianError> {
        if noise_dim == 0 {
            return Err(BrownianError::Parameter(
                "noise_dim must be at least 1".to_string(),
            ));
        }
        if !(fine_dt > 0.0 && fine_dt <= 1.0) || !fine_dt.is_finite() {
            return Err(BrownianError::Parameter(format!(
                "fine_dt must lie in (0, 1], got {fine_dt}"
            )));
        }
        if !increments.len().is_multiple_of(noise_dim) || increments.is_empty() {
            return Err(BrownianError::Parameter(format!(
                "increment storage of length {} is not a positive multiple of noise_dim = {}",
                increments.len(),
                noise_dim
            )));
        }
        let fine_steps = increments.len() / noise_dim;
        Ok(Self {
            noise_dim,
            fine_dt,
            horizon: fine_steps as f64 * fine_dt,
            seed: 0,
            path_index: 0,
            fine_steps,
            increments,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn fine_dt(&self) -> f64 {
        self.fine_dt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Number of fine steps stored.
    pub fn fine_steps(&self) -> usize {
        self.fine_steps
    }

    /// The fine increment over `[step·Δ_f, (step+1)·Δ_f)` as a slice of
    /// length `noise_dim`.
    pub fn fine_increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.noise_dim..(step + 1) * self.noise_dim]
    }

    /// How many fine steps one step of `coarse_dt` spans; errors unless
    /// `coarse_dt` is a positive integer multiple of the fine step.
    pub fn aggregation_ratio(&self, coarse_dt: f64) -> Result<usize, BrownianError> {
        match integer_ratio(coarse_dt, self.fine_dt, GRID_REL_TOL) {
            Some(k) if k >= 1 => Ok(k as usize),
            _ => Err(BrownianError::GridMismatch {
                coarse_dt,
                fine_dt: self.fine_dt,
            }),
        }
    }

    /// The Brownian increment over the `step_index`-th interval of the coarse
    /// grid: the exact left-to-right sum of the underlying fine increments.
    pub fn coarse_increment(
        &self,
        coarse_dt: f64,
        step_index: usize,
    ) -> Result<Vec<f64>, BrownianError> {
        let ratio = self.aggregation_ratio(coarse_dt)?;
        let mut out = vec![0.0; self.noise_dim];
        self.coarse_increment_into(ratio, step_index, &mut out)?;
        Ok(out)
    }

    /// Allocation-free form of [`coarse_increment`], keyed by the ratio from
    /// [`aggregation_ratio`].
    pub fn coarse_increment_into(
        &self,
        ratio: usize,
        step_index: usize,
        out: &mut [f64],
    ) -> Result<(), BrownianError> {
        debug_assert_eq!(out.len(), self.noise_dim);
        let available = self.fine_steps / ratio;
        let start = step_index * ratio;
        if step_index >= available {
            return Err(BrownianError::StepOutOfRange {
                index: step_index,
                available,
            });
        }
        out.fill(0.0);
        self.sum_range_into(start, start + ratio, out);
        Ok(())
    }

    /// Accumulate the sum of fine increments over `[from, to)` into `out`,
    /// left to right.
    pub(crate) fn sum_range_into(&self, from: usize, to: usize, out: &mut [f64]) {
        debug_assert!(to <= self.fine_steps);
        for step in from..to {
            let inc = self.fine_increment(step);
            for (o, v) in out.iter_mut().zip(inc) {
                *o += v;
            }
        }
    }

    /// W(t) for a grid time t: the prefix sum of fine increments, with
    /// W(0) = 0. Errors when `t` is off the fine grid or beyond the horizon.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>, BrownianError> {
        let k = match integer_ratio(t, self.fine_dt, GRID_REL_TOL) {
            Some(k) if k >= 0 => k as usize,
            _ => {
                return Err(BrownianError::OffGrid {
                    t,
                    fine_dt: self.fine_dt,
                })
            }
        };
        if k > self.fine_steps {
            return Err(BrownianError::StepOutOfRange {
                index: k,
                available: self.fine_steps,
            });
        }
        let mut out = vec![0.0; self.noise_dim];
        self.sum_range_into(0, k, &mut out);
        Ok(out)
    }
}

/// Smallest number of steps of size `dt` covering `[0, horizon]`, snapping to
/// an exact multiple when the quotient is within rounding of an integer.
pub(crate) fn steps_covering(horizon: f64, dt: f64) -> usize {
    let q = horizon / dt;
    let k = q.round();
    if (q - k).abs() <= GRID_REL_TOL * k.abs().max(1.0) {
        k as usize
    } else {
        q.ceil() as usize
    }
}
