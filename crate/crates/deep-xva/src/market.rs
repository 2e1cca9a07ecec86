//! Forward risk-factor dynamics: multi-asset geometric Brownian motion
//! simulated on a uniform time grid.
//!
//! Two schemes are provided. The Euler-Maruyama scheme
//!
//! ```text
//! S_{n+1} = S_n + r S_n dt + sigma S_n dW_n
//! ```
//!
//! matches the discretization the backward solver is built on, while the
//! exact lognormal transition
//!
//! ```text
//! S_{n+1} = S_n exp((r - sigma^2/2) dt + sigma dW_n)
//! ```
//!
//! serves as a discretization-free generator for validation runs. Both store
//! the correlated Brownian increments that drove the paths so the backward
//! rollout consumes exactly the same noise.
//!
//! Randomness is counter-based: path `p` of a batch draws from a dedicated
//! ChaCha stream derived from `(seed, p)`, so a path is identical whether it
//! is simulated alone, in a larger batch, or on a different number of
//! threads.

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Tolerance on Cholesky diagonal pivots. Pivots below `-CHOLESKY_PIVOT_TOL`
/// reject the matrix; pivots within the tolerance band are zeroed, accepting
/// semi-definite inputs.
pub const CHOLESKY_PIVOT_TOL: f64 = 1e-10;

/// Uniform partition 0 = t_0 < t_1 < ... < t_N = T.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    /// Builds the grid with `steps` uniform intervals over `[0, horizon]`.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::invalid(format!(
                "time grid horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node t_n, exact at both endpoints.
    pub fn node(&self, n: usize) -> f64 {
        debug_assert!(n <= self.steps);
        self.horizon * (n as f64) / (self.steps as f64)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.node(n)).collect()
    }
}

/// Drift/volatility/correlation parameters and initial prices for d assets
/// under the pricing measure.
#[derive(Debug, Clone)]
pub struct MarketModel {
    initial: Vec<f64>,
    rates: Vec<f64>,
    vols: Vec<f64>,
    correlation: Array2<f64>,
    /// Lower-triangular factor L with L L^T = correlation.
    chol: Array2<f64>,
}

impl MarketModel {
    pub fn new(
        initial: Vec<f64>,
        rates: Vec<f64>,
        vols: Vec<f64>,
        correlation: Array2<f64>,
    ) -> Result<Self> {
        let d = initial.len();
        if d == 0 {
            return Err(Error::invalid("market model needs at least one asset"));
        }
        if rates.len() != d || vols.len() != d {
            return Err(Error::invalid(format!(
                "parameter lengths disagree: s0 {}, rates {}, vols {}",
                d,
                rates.len(),
                vols.len()
            )));
        }
        if let Some(s) = initial.iter().find(|s| !s.is_finite() || **s <= 0.0) {
            return Err(Error::invalid(format!(
                "initial prices must be strictly positive, got {s}"
            )));
        }
        if let Some(v) = vols.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!(
                "volatilities must be nonnegative, got {v}"
            )));
        }
        if correlation.nrows() != d || correlation.ncols() != d {
            return Err(Error::invalid(format!(
                "correlation must be {d}x{d}, got {}x{}",
                correlation.nrows(),
                correlation.ncols()
            )));
        }
        for i in 0..d {
            if (correlation[[i, i]] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "correlation diagonal entry {i} is {}, expected 1",
                    correlation[[i, i]]
                )));
            }
            for j in 0..i {
                if (correlation[[i, j]] - correlation[[j, i]]).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "correlation is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let chol = cholesky_lower(&correlation, CHOLESKY_PIVOT_TOL)?;
        Ok(MarketModel {
            initial,
            rates,
            vols,
            correlation,
            chol,
        })
    }

    /// Single asset with trivial correlation.
    pub fn single_asset(s0: f64, rate: f64, vol: f64) -> Result<Self> {
        Self::new(vec![s0], vec![rate], vec![vol], Array2::eye(1))
    }

    /// d i.i.d. assets sharing one parameter set (identity correlation).
    pub fn iid_assets(d: usize, s0: f64, rate: f64, vol: f64) -> Result<Self> {
        Self::new(
            vec![s0; d],
            vec![rate; d],
            vec![vol; d],
            Array2::eye(d.max(1)),
        )
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn initial_prices(&self) -> &[f64] {
        &self.initial
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn vols(&self) -> &[f64] {
        &self.vols
    }

    pub fn correlation(&self) -> &Array2<f64> {
        &self.correlation
    }

    pub fn correlation_factor(&self) -> &Array2<f64> {
        &self.chol
    }

    /// Mean and standard deviation of the exact GBM marginal S^i_t.
    ///
    /// Used to standardize network inputs per timestep. The standard
    /// deviation is floored (relative to the mean) so the factor stays
    /// strictly positive at t = 0 and for zero-vol assets.
    pub fn marginal_moments(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let mut mean = Vec::with_capacity(self.dim());
        let mut std = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let m = self.initial[i] * (self.rates[i] * t).exp();
            let v = m * ((self.vols[i] * self.vols[i] * t).exp() - 1.0).max(0.0).sqrt();
            mean.push(m);
            std.push(floor_scale(v, m));
        }
        (mean, std)
    }
}

/// Keeps standardization scales strictly positive without distorting
/// coordinates that have genuine spread.
pub(crate) fn floor_scale(std: f64, mean: f64) -> f64 {
    std.max(1e-3 * mean.abs()).max(1e-8)
}

/// Simulation scheme for the forward dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    Exact,
}

/// A batch of simulated paths together with the Brownian increments that
/// generated them. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PathBatch {
    grid: TimeGrid,
    count: usize,
    dim: usize,
    /// Shape (count, N+1, d).
    states: Array3<f64>,
    /// Correlated increments dW_n, shape (count, N, d).
    increments: Array3<f64>,
    seed: u64,
}

impl PathBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn states(&self) -> &Array3<f64> {
        &self.states
    }

    pub fn increments(&self) -> &Array3<f64> {
        &self.increments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Assembles a batch from precomputed arrays. Shapes must match the grid.
    pub fn from_parts(
        grid: TimeGrid,
        states: Array3<f64>,
        increments: Array3<f64>,
        seed: u64,
    ) -> Result<Self> {
        let (count, nodes, dim) = states.dim();
        if nodes != grid.steps() + 1 {
            return Err(Error::invalid(format!(
                "states has {nodes} nodes, grid expects {}",
                grid.steps() + 1
            )));
        }
        if increments.dim() != (count, grid.steps(), dim) {
            return Err(Error::invalid("increments shape mismatch"));
        }
        Ok(PathBatch {
            grid,
            count,
            dim,
            states,
            increments,
            seed,
        })
    }
}

/// One Euler-Maruyama step of the asset dynamics.
#[inline]
pub(crate) fn euler_step(s: f64, rate: f64, vol: f64, dt: f64, dw: f64) -> f64 {
    s + rate * s * dt + vol * s * dw
}

/// One exact lognormal transition.
#[inline]
pub(crate) fn exact_step(s: f64, rate: f64, vol: f64, dt: f64, dw: f64) -> f64 {
    s * ((rate - 0.5 * vol * vol) * dt + vol * dw).exp()
}

/// RNG for path `p` of the stream family identified by `seed`.
pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// splitmix64, used to derive decorrelated sub-seeds for distinct purposes
/// (training batches per iteration, validation, outer evaluation, ...).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Simulates `count` paths of the model on `grid` with the requested scheme.
pub fn simulate(
    model: &MarketModel,
    grid: &TimeGrid,
    count: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PathBatch> {
    if count == 0 {
        return Err(Error::invalid("path count must be at least 1"));
    }
    let d = model.dim();
    let n_steps = grid.steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let chol = model.correlation_factor();

    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..count)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(seed, p);
            let mut states = Vec::with_capacity((n_steps + 1) * d);
            let mut incr = Vec::with_capacity(n_steps * d);
            let mut s: Vec<f64> = model.initial.clone();
            states.extend_from_slice(&s);
            let mut z = vec![0.0_f64; d];
            let mut dw = vec![0.0_f64; d];
            for _ in 0..n_steps {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                // dW = L * (z * sqrt(dt)), lower-triangular product
                for i in 0..d {
                    let mut acc = 0.0;
                    for k in 0..=i {
                        acc += chol[[i, k]] * z[k];
                    }
                    dw[i] = acc * sqrt_dt;
                }
                for i in 0..d {
                    s[i] = match scheme {
                        Scheme::Euler => euler_step(s[i], model.rates[i], model.vols[i], dt, dw[i]),
                        Scheme::Exact => exact_step(s[i], model.rates[i], model.vols[i], dt, dw[i]),
                    };
                }
                states.extend_from_slice(&s);
                incr.extend_from_slice(&dw);
            }
            (states, incr)
        })
        .collect();

    let mut states = Array3::zeros((count, n_steps + 1, d));
    let mut increments = Array3::zeros((count, n_steps, d));
    for (p, (srow, irow)) in rows.into_iter().enumerate() {
        states
            .index_axis_mut(ndarray::Axis(0), p)
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&srow);
        increments
            .index_axis_mut(ndarray::Axis(0), p)
            .as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&irow);
    }
    PathBatch::from_parts(grid.clone(), states, increments, seed)
}

/// Euler-Maruyama paths (the scheme the backward discretization assumes).
pub fn simulate_euler(
    model: &MarketModel,
    grid: &TimeGrid,
    count: usize,
    seed: u64,
) -> Result<PathBatch> {
    simulate(model, grid, count, seed, Scheme::Euler)
}

/// Exact lognormal paths (discretization-free transition).
pub fn simulate_exact(
    model: &MarketModel,
    grid: &TimeGrid,
    count: usize,
    seed: u64,
) -> Result<PathBatch> {
    simulate(model, grid, count, seed, Scheme::Exact)
}

/// Lower-triangular Cholesky factor of a symmetric PSD matrix, zeroing
/// pivots inside the tolerance band.
pub fn cholesky_lower(matrix: &Array2<f64>, tol: f64) -> Result<Array2<f64>> {
    let d = matrix.nrows();
    let mut l = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut pivot = matrix[[j, j]];
        for k in 0..j {
            pivot -= l[[j, k]] * l[[j, k]];
        }
        if pivot < -tol {
            return Err(Error::NotPositiveSemiDefinite { index: j, pivot });
        }
        if pivot <= tol {
            // Semi-definite direction: zero the pivot and its column.
            continue;
        }
        let ljj = pivot.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..d {
            let mut acc = matrix[[i, j]];
            for k in 0..j {
                acc -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = acc / ljj;
        }
    }
    Ok(l)
}
