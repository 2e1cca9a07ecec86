//! Minimal feedforward network machinery.
//!
//! A network is the composition `A_L ∘ relu ∘ A_{L-1} ∘ ... ∘ relu ∘ A_1`
//! applied to a standardized input `(x - shift) / scale`. Parameters live in
//! one flat `Vec<f64>` (layer order, weights row-major, then biases), which
//! keeps the optimizer and the serialization format trivial.
//!
//! Because the composition is affine+ReLU only, the input Jacobian has the
//! closed form
//!
//! ```text
//! J(x) = W_L diag(relu'(z_{L-1})) ... diag(relu'(z_1)) W_1 diag(1/scale)
//! ```
//!
//! with `relu'(z) = 1` for `z > 0` and `0` otherwise.

mod adam;

pub use adam::{adam_step, AdamHyper, AdamState, LrSchedule};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Layer dimensions, input standardization constants and the flat parameter
/// vector of one feedforward network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    dims: Vec<usize>,
    shift: Vec<f64>,
    scale: Vec<f64>,
    params: Vec<f64>,
    /// Offset of each layer's weight block in `params`; biases follow the
    /// weights of the same layer.
    offsets: Vec<usize>,
}

/// Total parameter count for the given layer dims.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl NetworkParams {
    /// He fan-in uniform weights, small positive hidden biases, zero output
    /// bias, identity standardization.
    ///
    /// Hidden biases start strictly positive so the stack is alive at a
    /// standardized input of zero. With zero biases every pre-activation at
    /// the origin sits exactly on the ReLU kink (where relu' = 0), which
    /// freezes the timestep-zero network whose input is a constant.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("network needs at least input and output dims"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("layer dims must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = param_count(dims);
        let mut params = Vec::with_capacity(r);
        let layers = dims.len() - 1;
        for (l, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in {
                params.push(rng.gen_range(-limit..limit));
            }
            if l + 1 < layers {
                for _ in 0..fan_out {
                    params.push(rng.gen_range(0.01..0.2));
                }
            } else {
                params.extend(std::iter::repeat(0.0).take(fan_out));
            }
        }
        let mut net = NetworkParams {
            dims: dims.to_vec(),
            shift: vec![0.0; dims[0]],
            scale: vec![1.0; dims[0]],
            params,
            offsets: Vec::new(),
        };
        net.offsets = Self::layer_offsets(dims);
        Ok(net)
    }

    /// Rebuilds a network from its serialized pieces.
    pub fn from_parts(
        dims: Vec<usize>,
        shift: Vec<f64>,
        scale: Vec<f64>,
        params: Vec<f64>,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("invalid layer dims"));
        }
        if shift.len() != dims[0] || scale.len() != dims[0] {
            return Err(Error::invalid("normalization length must match input dim"));
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("scale entries must be strictly positive"));
        }
        if params.len() != param_count(&dims) {
            return Err(Error::invalid(format!(
                "flat parameter length {} does not match dims (expected {})",
                params.len(),
                param_count(&dims)
            )));
        }
        let offsets = Self::layer_offsets(&dims);
        Ok(NetworkParams {
            dims,
            shift,
            scale,
            params,
            offsets,
        })
    }

    fn layer_offsets(dims: &[usize]) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut acc = 0;
        for w in dims.windows(2) {
            offsets.push(acc);
            acc += w[1] * (w[0] + 1);
        }
        offsets
    }

    pub fn set_normalization(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        if shift.len() != self.input_dim() || scale.len() != self.input_dim() {
            return Err(Error::invalid("normalization length must match input dim"));
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("scale entries must be strictly positive"));
        }
        self.shift = shift;
        self.scale = scale;
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Number of affine layers L.
    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight matrix of layer `l` (0-based), shape (dims[l+1], dims[l]).
    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (nin, nout) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l];
        ArrayView2::from_shape((nout, nin), &self.params[start..start + nout * nin])
            .expect("weight view")
    }

    /// Bias vector of layer `l` (0-based).
    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (nin, nout) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l] + nout * nin;
        ArrayView1::from_shape(nout, &self.params[start..start + nout]).expect("bias view")
    }

    pub fn weight_slice_mut(&mut self, l: usize) -> &mut [f64] {
        let (nin, nout) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l];
        &mut self.params[start..start + nout * nin]
    }

    pub fn bias_slice_mut(&mut self, l: usize) -> &mut [f64] {
        let (nin, nout) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l] + nout * nin;
        &mut self.params[start..start + nout]
    }

    fn standardize(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.shift[j]) / self.scale[j];
            }
        }
        out
    }
}

/// Intermediates of one forward pass, reused by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: Vec<usize>,
    batch: usize,
    /// a_0 (standardized input) .. a_{L-1}.
    activations: Vec<Array2<f64>>,
    /// z_1 .. z_{L-1} (hidden pre-activations).
    preacts: Vec<Array2<f64>>,
}

/// Evaluates the network on a batch of inputs (rows) and returns the outputs
/// together with the cache needed for reverse mode.
pub fn forward(params: &NetworkParams, x: &ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != params.input_dim() {
        return Err(Error::invalid(format!(
            "input dim {} does not match network input {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let layers = params.layers();
    let mut activations = Vec::with_capacity(layers);
    let mut preacts = Vec::with_capacity(layers.saturating_sub(1));
    let mut a = params.standardize(x);
    for l in 0..layers {
        activations.push(a.clone());
        // explicit output buffer: keeps the result in standard layout
        // (ndarray's dot can return transposed-layout arrays for thin
        // matrices), and the callers slice rows out of it
        let mut z = Array2::zeros((a.nrows(), params.dims[l + 1]));
        ndarray::linalg::general_mat_mul(1.0, &a, &params.weight(l).t(), 0.0, &mut z);
        z += &params.bias(l);
        if l + 1 < layers {
            preacts.push(z.clone());
            z.mapv_inplace(|v| v.max(0.0));
        }
        a = z;
    }
    let cache = ForwardCache {
        dims: params.dims.clone(),
        batch: x.nrows(),
        activations,
        preacts,
    };
    Ok((a, cache))
}

/// Gradients of `sum_batch upstream_row . output_row` with respect to every
/// weight and bias, returned flat in the same layout as `NetworkParams`.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    upstream: &ArrayView2<f64>,
) -> Result<Vec<f64>> {
    if cache.dims != params.dims {
        return Err(Error::invalid("cache does not belong to this network"));
    }
    if upstream.nrows() != cache.batch || upstream.ncols() != params.output_dim() {
        return Err(Error::invalid(format!(
            "upstream shape ({}, {}) does not match batch {} x output {}",
            upstream.nrows(),
            upstream.ncols(),
            cache.batch,
            params.output_dim()
        )));
    }
    let layers = params.layers();
    let mut grads = vec![0.0_f64; params.param_count()];
    let mut dz = upstream.to_owned();
    for l in (0..layers).rev() {
        let a_prev = &cache.activations[l];
        let dw = dz.t().dot(a_prev);
        let db = dz.sum_axis(Axis(0));
        let (nin, nout) = (params.dims[l], params.dims[l + 1]);
        let start = params.offsets[l];
        for (slot, v) in grads[start..start + nout * nin].iter_mut().zip(dw.iter()) {
            *slot = *v;
        }
        for (slot, v) in grads[start + nout * nin..start + nout * nin + nout]
            .iter_mut()
            .zip(db.iter())
        {
            *slot = *v;
        }
        if l > 0 {
            let mut da = dz.dot(&params.weight(l));
            // gate through relu'(z_l) with relu'(0) = 0
            let z = &cache.preacts[l - 1];
            da.zip_mut_with(z, |g, &zv| {
                if zv <= 0.0 {
                    *g = 0.0;
                }
            });
            dz = da;
        }
    }
    Ok(grads)
}

/// Closed-form Jacobian of the network output with respect to the raw
/// (unstandardized) input at a single point.
pub fn jacobian(params: &NetworkParams, x: &[f64]) -> Result<Array2<f64>> {
    if x.len() != params.input_dim() {
        return Err(Error::invalid(format!(
            "input dim {} does not match network input {}",
            x.len(),
            params.input_dim()
        )));
    }
    let layers = params.layers();
    // J = W_1 diag(1/scale)
    let mut j = params.weight(0).to_owned();
    for (col, s) in params.scale.iter().enumerate() {
        for row in 0..j.nrows() {
            j[[row, col]] /= s;
        }
    }
    if layers == 1 {
        return Ok(j);
    }
    // forward pass for the activation pattern
    let mut a = Array1::from_iter(
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - params.shift[i]) / params.scale[i]),
    );
    for l in 0..layers - 1 {
        let mut z = params.weight(l).dot(&a);
        z += &params.bias(l);
        // zero rows of J where the ReLU is inactive, then push through W_{l+1}
        for (row, zv) in z.iter().enumerate() {
            if *zv <= 0.0 {
                j.row_mut(row).fill(0.0);
            }
        }
        j = params.weight(l + 1).dot(&j);
        a = z.mapv(|v| v.max(0.0));
    }
    Ok(j)
}
