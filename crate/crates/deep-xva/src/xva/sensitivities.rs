//! Pathwise hedge ratios recovered from the learned controls.
//!
//! In the Markovian setting the control satisfies Z_t = dY/dX a(t, X_t), so
//! with the diagonal GBM diffusion the gradient of the value in the asset
//! directions is recovered componentwise:
//!
//! ```text
//! delta_i = Z_i / (sigma_i S_i)
//! ```
//!
//! This inversion is exact for the increment convention used here: rollouts
//! consume the *correlated* Brownian increments, so the variance-optimal
//! control is Z = diag(sigma S) grad Y for any full-rank correlation.
//!
//! Second-order sensitivities combine the network input Jacobian with the
//! product rule on Z / (sigma S):
//!
//! ```text
//! Gamma_ij = (dZ_i/dS_j) / (sigma_i S_i) - 1{i=j} Z_i / (sigma_i S_i^2)
//! ```

use ndarray::{Array2, Array3};

use crate::bsde::{TrainedBsde, ValuePaths};
use crate::error::{Error, Result};
use crate::market::{MarketModel, PathBatch};
use crate::neural;

/// First-order sensitivities for every path, control node and asset,
/// shape (paths, N, d).
pub fn pathwise_deltas(
    values: &ValuePaths,
    paths: &PathBatch,
    model: &MarketModel,
) -> Result<Array3<f64>> {
    let (count, steps, d) = values.controls().dim();
    if paths.count() != count || paths.dim() != d || paths.grid() != values.grid() {
        return Err(Error::invalid("value paths and path batch disagree"));
    }
    let mut deltas = Array3::zeros((count, steps, d));
    for p in 0..count {
        for n in 0..steps {
            for i in 0..d {
                let denom = model.vols()[i] * paths.states()[[p, n, i]];
                if denom == 0.0 || !denom.is_finite() {
                    return Err(Error::SingularDiffusion {
                        path: p,
                        node: n,
                        asset: i,
                    });
                }
                deltas[[p, n, i]] = values.controls()[[p, n, i]] / denom;
            }
        }
    }
    Ok(deltas)
}

/// Second-order sensitivity matrix at one (path, node) point. Requires the
/// control networks to be functions of the asset state, since dZ/dS comes
/// from the network input Jacobian.
pub fn pathwise_gamma(
    trained: &TrainedBsde,
    paths: &PathBatch,
    model: &MarketModel,
    path: usize,
    node: usize,
) -> Result<Array2<f64>> {
    let d = paths.dim();
    if node >= trained.networks.len() {
        return Err(Error::invalid(format!(
            "node {node} out of range (N = {})",
            trained.networks.len()
        )));
    }
    if path >= paths.count() {
        return Err(Error::invalid(format!("path {path} out of range")));
    }
    let net = &trained.networks[node];
    if net.input_dim() != d {
        return Err(Error::InvalidState(
            "gamma requires asset-state control networks".into(),
        ));
    }
    let state: Vec<f64> = (0..d).map(|i| paths.states()[[path, node, i]]).collect();
    let x = ndarray::ArrayView2::from_shape((1, d), &state).expect("shape");
    let (z, _) = neural::forward(net, &x)?;
    let jac = neural::jacobian(net, &state)?;
    let mut gamma = Array2::zeros((d, d));
    for i in 0..d {
        let denom = model.vols()[i] * state[i];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::SingularDiffusion {
                path,
                node,
                asset: i,
            });
        }
        for j in 0..d {
            gamma[[i, j]] = jac[[i, j]] / denom;
        }
        gamma[[i, i]] -= z[[0, i]] / (model.vols()[i] * state[i] * state[i]);
    }
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{TrainedBsde, TrainingDiagnostics, ValuePaths};
    use crate::market::{simulate_exact, TimeGrid};
    use crate::neural::NetworkParams;
    use approx::assert_relative_eq;
    use ndarray::{Array2, Array3};

    #[test]
    fn zero_controls_give_zero_deltas() {
        let model = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let paths = simulate_exact(&model, &grid, 4, 1).unwrap();
        let values = Array2::zeros((4, 6));
        let controls = Array3::zeros((4, 5, 1));
        let vp = ValuePaths::from_parts(grid, values, controls).unwrap();
        let deltas = pathwise_deltas(&vp, &paths, &model).unwrap();
        assert!(deltas.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn delta_inverts_the_diffusion() {
        let model = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let paths = simulate_exact(&model, &grid, 3, 7).unwrap();
        // controls equal to sigma * S correspond to delta = 1
        let mut controls = Array3::zeros((3, 2, 1));
        for p in 0..3 {
            for n in 0..2 {
                controls[[p, n, 0]] = 0.25 * paths.states()[[p, n, 0]];
            }
        }
        let vp = ValuePaths::from_parts(grid, Array2::zeros((3, 3)), controls).unwrap();
        let deltas = pathwise_deltas(&vp, &paths, &model).unwrap();
        for d in deltas.iter() {
            assert_relative_eq!(*d, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_vol_is_singular() {
        let model = MarketModel::single_asset(100.0, 0.0, 0.0).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let paths = simulate_exact(&model, &grid, 2, 7).unwrap();
        let vp = ValuePaths::from_parts(
            grid,
            Array2::zeros((2, 3)),
            Array3::zeros((2, 2, 1)),
        )
        .unwrap();
        assert!(matches!(
            pathwise_deltas(&vp, &paths, &model),
            Err(crate::Error::SingularDiffusion { .. })
        ));
    }

    /// A linear control Z(S) = a S has constant delta a / sigma and zero
    /// gamma: the Jacobian term and the diffusion-derivative term cancel.
    #[test]
    fn linear_control_has_zero_gamma() {
        let model = MarketModel::single_asset(100.0, 0.0, 0.25).unwrap();
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let paths = simulate_exact(&model, &grid, 2, 3).unwrap();
        let a = 0.4;
        let mut networks = Vec::new();
        for _ in 0..3 {
            // single affine layer, identity normalization: z = a s
            let mut net = NetworkParams::init(&[1, 1], 0).unwrap();
            net.weight_slice_mut(0)[0] = a;
            net.bias_slice_mut(0)[0] = 0.0;
            networks.push(net);
        }
        let trained = TrainedBsde {
            grid: grid.clone(),
            xi: 0.0,
            networks,
            diagnostics: TrainingDiagnostics::default(),
        };
        let g = pathwise_gamma(&trained, &paths, &model, 1, 2).unwrap();
        assert_relative_eq!(g[[0, 0]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gamma_rejects_aux_input_networks() {
        let model = MarketModel::iid_assets(2, 100.0, 0.0, 0.25).unwrap();
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let paths = simulate_exact(&model, &grid, 2, 3).unwrap();
        let networks = vec![
            NetworkParams::init(&[1, 4, 2], 0).unwrap(),
            NetworkParams::init(&[1, 4, 2], 1).unwrap(),
        ];
        let trained = TrainedBsde {
            grid,
            xi: 0.0,
            networks,
            diagnostics: TrainingDiagnostics::default(),
        };
        assert!(matches!(
            pathwise_gamma(&trained, &paths, &model, 0, 0),
            Err(crate::Error::InvalidState(_))
        ));
    }
}
