//! Fully-connected networks: spec, Glorot init, forward with activation
//! caching, and exact reverse-mode backward.

use super::{gelu, gelu_derivative, softplus, softplus_derivative, ParamSet, Tensor2};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Gelu,
    Softplus,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Gelu => gelu(x),
            Activation::Softplus => softplus(x),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Gelu => gelu_derivative(x),
            Activation::Softplus => softplus_derivative(x),
        }
    }
}

/// Architecture of one MLP: `sizes[0]` inputs through `sizes.last()` outputs.
///
/// Layer `i` owns tensors `{prefix}.{i}.w` (out×in) and `{prefix}.{i}.b`
/// (out×1) inside the [`ParamSet`] built by [`init_mlp`]. Hidden layers use
/// `hidden`; the last layer uses `output` (linear unless a head specifies
/// otherwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub prefix: String,
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(prefix: impl Into<String>, sizes: Vec<usize>) -> Self {
        Self {
            prefix: prefix.into(),
            sizes,
            hidden: Activation::Gelu,
            output: Activation::Linear,
        }
    }

    pub fn with_output(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.b", self.prefix)
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 {
            return Err(Error::argument(format!(
                "mlp `{}` needs at least input and output sizes",
                self.prefix
            )));
        }
        if let Some(pos) = self.sizes.iter().position(|&s| s == 0) {
            return Err(Error::argument(format!(
                "mlp `{}` layer size {pos} is zero",
                self.prefix
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, appended to a fresh [`ParamSet`].
pub fn init_mlp(spec: &MlpSpec, rng: &mut impl Rng) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    append_mlp(&mut params, spec, rng)?;
    Ok(params)
}

/// Append the layers of `spec` to an existing parameter set.
pub fn append_mlp(params: &mut ParamSet, spec: &MlpSpec, rng: &mut impl Rng) -> Result<()> {
    spec.validate()?;
    for layer in 0..spec.num_layers() {
        let (fan_in, fan_out) = (spec.sizes[layer], spec.sizes[layer + 1]);
        params.push(glorot_tensor(spec.weight_name(layer), fan_out, fan_in, rng))?;
        params.push(Tensor2::zeros(spec.bias_name(layer), fan_out, 1))?;
    }
    Ok(())
}

/// Glorot-uniform matrix: `U(-sqrt(6/(fan_in+fan_out)), +sqrt(...))`.
pub fn glorot_tensor(name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor2 {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor2 {
        name: name.into(),
        rows,
        cols,
        data,
    }
}

/// Pre-activations (and the input) saved during forward for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    /// Pre-activation vectors, one per layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-activation vectors, one per layer (last entry is the output).
    pub post: Vec<Vec<f64>>,
}

/// `y = act_L(W_L · act(... act(W_1 x + b_1) ...) + b_L)` plus the cache.
pub fn mlp_forward(params: &ParamSet, spec: &MlpSpec, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
    if input.len() != spec.input_dim() {
        return Err(Error::argument(format!(
            "mlp `{}`: input length {} != expected {}",
            spec.prefix,
            input.len(),
            spec.input_dim()
        )));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric_input(format!(
            "mlp `{}`: non-finite input",
            spec.prefix
        )));
    }

    let mut cache = MlpCache {
        input: input.to_vec(),
        pre: Vec::with_capacity(spec.num_layers()),
        post: Vec::with_capacity(spec.num_layers()),
    };
    let mut x = input.to_vec();
    for layer in 0..spec.num_layers() {
        let w = params.get(&spec.weight_name(layer))?;
        let b = params.get(&spec.bias_name(layer))?;
        if w.cols != x.len() {
            return Err(Error::argument(format!(
                "mlp `{}` layer {layer}: weight cols {} != activation length {}",
                spec.prefix,
                w.cols,
                x.len()
            )));
        }
        let act = spec.activation_for(layer);
        let mut pre = vec![0.0; w.rows];
        matvec_into(w, &x, &mut pre);
        for (p, bias) in pre.iter_mut().zip(&b.data) {
            *p += bias;
        }
        let post: Vec<f64> = pre.iter().map(|&p| act.apply(p)).collect();
        cache.pre.push(pre);
        x = post.clone();
        cache.post.push(post);
    }
    Ok((x, cache))
}

/// Exact reverse-mode gradients of [`mlp_forward`].
///
/// Accumulates parameter gradients into `grads` (shape-identical to `params`)
/// and returns the gradient with respect to the input.
pub fn mlp_backward(
    params: &ParamSet,
    spec: &MlpSpec,
    cache: &MlpCache,
    grad_output: &[f64],
    grads: &mut ParamSet,
) -> Result<Vec<f64>> {
    let layers = spec.num_layers();
    if cache.pre.len() != layers || cache.post.len() != layers {
        return Err(Error::argument(format!(
            "mlp `{}`: cache has {} layers, spec has {layers}",
            spec.prefix,
            cache.pre.len()
        )));
    }
    if grad_output.len() != spec.output_dim() {
        return Err(Error::argument(format!(
            "mlp `{}`: grad_output length {} != output dim {}",
            spec.prefix,
            grad_output.len(),
            spec.output_dim()
        )));
    }

    let mut upstream = grad_output.to_vec();
    for layer in (0..layers).rev() {
        let act = spec.activation_for(layer);
        let pre = &cache.pre[layer];
        if pre.len() != upstream.len() {
            return Err(Error::argument(format!(
                "mlp `{}` layer {layer}: cache width {} != upstream {}",
                spec.prefix,
                pre.len(),
                upstream.len()
            )));
        }
        // delta = dL/d(pre-activation)
        let delta: Vec<f64> = upstream
            .iter()
            .zip(pre)
            .map(|(g, &p)| g * act.derivative(p))
            .collect();

        let below: &[f64] = if layer == 0 {
            &cache.input
        } else {
            &cache.post[layer - 1]
        };

        let w = params.get(&spec.weight_name(layer))?;
        {
            let gw = grads.get_mut(&spec.weight_name(layer))?;
            if gw.rows != delta.len() || gw.cols != below.len() {
                return Err(Error::argument(format!(
                    "mlp `{}` layer {layer}: gradient shape mismatch",
                    spec.prefix
                )));
            }
            for (r, &d) in delta.iter().enumerate() {
                let row = gw.row_mut(r);
                for (gv, &x) in row.iter_mut().zip(below) {
                    *gv += d * x;
                }
            }
        }
        {
            let gb = grads.get_mut(&spec.bias_name(layer))?;
            for (gv, &d) in gb.data.iter_mut().zip(&delta) {
                *gv += d;
            }
        }

        // grad wrt layer input: W^T delta, accumulated row by row to stay
        // cache-friendly on the row-major weight matrix.
        let mut down = vec![0.0; below.len()];
        for (r, &d) in delta.iter().enumerate() {
            for (dv, &wv) in down.iter_mut().zip(w.row(r)) {
                *dv += d * wv;
            }
        }
        upstream = down;
    }
    Ok(upstream)
}

/// `out = w · x` for a row-major matrix.
pub fn matvec_into(w: &Tensor2, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        let row = w.row(r);
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_weights_output_bias() {
        let spec = MlpSpec::new("m", vec![3, 2]);
        let mut params = init_mlp(&spec, &mut rng(0)).unwrap();
        params.get_mut("m.0.w").unwrap().data.fill(0.0);
        params.get_mut("m.0.b").unwrap().data.copy_from_slice(&[0.7, -0.2]);
        let (y, _) = mlp_forward(&params, &spec, &[5.0, -3.0, 1.0]).unwrap();
        assert_eq!(y, vec![0.7, -0.2]);
    }

    #[test]
    fn identity_single_layer() {
        let spec = MlpSpec::new("m", vec![3, 3]);
        let mut params = init_mlp(&spec, &mut rng(0)).unwrap();
        let w = params.get_mut("m.0.w").unwrap();
        w.data.fill(0.0);
        for i in 0..3 {
            w.data[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.2, 2.0];
        let (y, _) = mlp_forward(&params, &spec, &x).unwrap();
        assert_eq!(y, x.to_vec());
    }

    /// Straightforward re-implementation used as the forward oracle: a naive
    /// nested loop over layers with no caching.
    fn forward_oracle(params: &ParamSet, spec: &MlpSpec, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for layer in 0..spec.num_layers() {
            let w = params.get(&spec.weight_name(layer)).unwrap();
            let b = params.get(&spec.bias_name(layer)).unwrap();
            let mut next = vec![0.0; w.rows];
            for r in 0..w.rows {
                let mut acc = b.data[r];
                for c in 0..w.cols {
                    acc += w.data[r * w.cols + c] * x[c];
                }
                next[r] = if layer + 1 == spec.num_layers() {
                    match spec.output {
                        Activation::Linear => acc,
                        Activation::Gelu => gelu(acc),
                        Activation::Softplus => softplus(acc),
                    }
                } else {
                    gelu(acc)
                };
            }
            x = next;
        }
        x
    }

    #[test]
    fn random_net_matches_oracle() {
        let spec = MlpSpec::new("m", vec![3, 5, 2]);
        let mut r = rng(42);
        let params = init_mlp(&spec, &mut r).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
            let (y, _) = mlp_forward(&params, &spec, &x).unwrap();
            let want = forward_oracle(&params, &spec, &x);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let spec = MlpSpec::new("m", vec![4, 8, 3]);
        let params = init_mlp(&spec, &mut rng(7)).unwrap();
        let x = [0.1, -0.4, 0.9, 2.2];
        let (y1, _) = mlp_forward(&params, &spec, &x).unwrap();
        let (y2, _) = mlp_forward(&params, &spec, &x).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn shape_and_finite_errors() {
        let spec = MlpSpec::new("m", vec![3, 2]);
        let params = init_mlp(&spec, &mut rng(0)).unwrap();
        assert!(matches!(
            mlp_forward(&params, &spec, &[1.0, 2.0]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            mlp_forward(&params, &spec, &[1.0, f64::NAN, 0.0]),
            Err(Error::NumericInput(_))
        ));
    }

    #[test]
    fn zero_size_layer_rejected() {
        let spec = MlpSpec::new("m", vec![3, 0, 2]);
        assert!(init_mlp(&spec, &mut rng(0)).is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = MlpSpec::new("m", vec![10, 20, 5]);
        let a = init_mlp(&spec, &mut rng(3)).unwrap();
        let b = init_mlp(&spec, &mut rng(3)).unwrap();
        assert_eq!(a, b);
        for layer in 0..spec.num_layers() {
            assert!(a.get(&spec.bias_name(layer)).unwrap().data.iter().all(|&v| v == 0.0));
            let w = a.get(&spec.weight_name(layer)).unwrap();
            let bound = (6.0 / (w.rows + w.cols) as f64).sqrt();
            assert!(w.data.iter().all(|v| v.abs() < bound));
        }
    }

    #[test]
    fn init_bounds_hold_over_many_samples() {
        // 10^5 samples against the stated Glorot interval.
        let w = glorot_tensor("w", 250, 400, &mut rng(11));
        let bound = (6.0 / 650.0f64).sqrt();
        assert_eq!(w.data.len(), 100_000);
        let max = w.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < bound);
        // and the draw actually fills most of the interval
        assert!(max > 0.95 * bound);
    }

    #[test]
    fn linear_layer_gradient_is_input_row() {
        // grad_output = e_k on a linear layer puts the input in weight row k.
        let spec = MlpSpec::new("m", vec![3, 2]);
        let params = init_mlp(&spec, &mut rng(5)).unwrap();
        let x = [0.5, -1.0, 2.0];
        let (_, cache) = mlp_forward(&params, &spec, &x).unwrap();
        let mut grads = params.zeros_like();
        mlp_backward(&params, &spec, &cache, &[0.0, 1.0], &mut grads).unwrap();
        let gw = grads.get("m.0.w").unwrap();
        assert_eq!(gw.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(gw.row(1), &x);
        assert_eq!(grads.get("m.0.b").unwrap().data, vec![0.0, 1.0]);
    }

    #[test]
    fn zero_cotangent_gives_zero_grads() {
        let spec = MlpSpec::new("m", vec![3, 4, 2]);
        let params = init_mlp(&spec, &mut rng(6)).unwrap();
        let (_, cache) = mlp_forward(&params, &spec, &[0.1, 0.2, 0.3]).unwrap();
        let mut grads = params.zeros_like();
        let gx = mlp_backward(&params, &spec, &cache, &[0.0, 0.0], &mut grads).unwrap();
        assert!(grads.flatten().iter().all(|&v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Composite 2-layer net: every parameter gradient against central
        // differences with h = 1e-5, relative error < 1e-4.
        let spec = MlpSpec::new("m", vec![3, 6, 2]);
        let mut r = rng(9);
        let mut params = init_mlp(&spec, &mut r).unwrap();
        let x: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();

        // scalar objective: probe . mlp(x)
        let (y, cache) = mlp_forward(&params, &spec, &x).unwrap();
        let _ = y;
        let mut grads = params.zeros_like();
        mlp_backward(&params, &spec, &cache, &probe, &mut grads).unwrap();
        let analytic = grads.flatten();

        let h = 1e-5;
        let flat = params.flatten();
        for idx in 0..flat.len() {
            let mut plus = flat.clone();
            plus[idx] += h;
            params.copy_from_flat(&plus).unwrap();
            let (yp, _) = mlp_forward(&params, &spec, &x).unwrap();
            let mut minus = flat.clone();
            minus[idx] -= h;
            params.copy_from_flat(&minus).unwrap();
            let (ym, _) = mlp_forward(&params, &spec, &x).unwrap();
            params.copy_from_flat(&flat).unwrap();

            let fp: f64 = probe.iter().zip(&yp).map(|(p, y)| p * y).sum();
            let fm: f64 = probe.iter().zip(&ym).map(|(p, y)| p * y).sum();
            let fd = (fp - fm) / (2.0 * h);
            let denom = analytic[idx].abs().max(fd.abs()).max(1e-8);
            assert!(
                ((analytic[idx] - fd) / denom).abs() < 1e-4,
                "param {idx}: analytic {} vs fd {fd}",
                analytic[idx]
            );
        }
    }
}
