use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, Rng};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
    Softplus,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Linear => {}
            Activation::Softplus => z.mapv_inplace(softplus),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            // y = sp(z)  =>  sigmoid(z) = 1 - exp(-y)
            Activation::Softplus => -(-y).exp_m1(),
        }
    }

    fn init_gain(self) -> f64 {
        match self {
            Activation::Tanh => 5.0 / 3.0,
            Activation::Relu => std::f64::consts::SQRT_2,
            Activation::Linear | Activation::Softplus => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Linear => 2,
            Activation::Softplus => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            2 => Activation::Linear,
            3 => Activation::Softplus,
            _ => return None,
        })
    }
}

/// One layer of a [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        activation: Activation,
    },
    /// `(W1 x + b1) * sigmoid(W2 x + b2)`
    Glu { input: usize, output: usize },
}

impl LayerSpec {
    pub fn input(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. } | LayerSpec::Glu { input, .. } => input,
        }
    }

    pub fn output(&self) -> usize {
        match *self {
            LayerSpec::Dense { output, .. } | LayerSpec::Glu { output, .. } => output,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, output, .. } => input * output + output,
            LayerSpec::Glu { input, output } => 2 * (input * output + output),
        }
    }
}

/// Per-layer intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
enum LayerCache {
    Dense { input: Array2<f64>, output: Array2<f64> },
    Glu {
        input: Array2<f64>,
        content: Array2<f64>,
        gate: Array2<f64>,
    },
}

/// Activations recorded by [`Network::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

/// Result of [`Network::forward_backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub output: Array2<f64>,
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

/// Feed-forward network over a flat parameter vector.
///
/// Dense layers store `W` row-major as `(output, input)` followed by the bias;
/// gated-linear layers store `W1, b1, W2, b2` in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

fn weights(params: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &params[..rows * cols]).expect("weight slice")
}

fn weights_mut(params: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut params[..rows * cols]).expect("weight slice")
}

fn affine(x: &ArrayView2<'_, f64>, params: &[f64], input: usize, output: usize) -> Array2<f64> {
    let w = weights(params, output, input);
    let b = ArrayView1::from(&params[input * output..input * output + output]);
    let mut z = Array2::zeros((x.nrows(), output));
    general_mat_mul(1.0, x, &w.t(), 0.0, &mut z);
    z += &b;
    z
}

/// Accumulates `dz^T x` and the bias gradient into `grads`.
fn accumulate_affine_grads(dz: &Array2<f64>, x: &Array2<f64>, grads: &mut [f64], input: usize, output: usize) {
    let (gw, gb) = grads.split_at_mut(input * output);
    let mut gw = weights_mut(gw, output, input);
    general_mat_mul(1.0, &dz.t(), x, 1.0, &mut gw);
    for (g, col) in gb[..output].iter_mut().zip(dz.axis_iter(Axis(1))) {
        *g += col.sum();
    }
}

impl Network {
    /// Zero-parameter network; consecutive layer widths must chain.
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("layer chain", pair[0].output(), pair[1].input())?;
        }
        if layers.iter().any(|l| l.input() == 0 || l.output() == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        Ok(Self {
            layers,
            offsets,
            params: vec![0.0; total],
        })
    }

    /// Dense stack `input -> hidden... -> output`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, hidden_act: Activation, output_act: Activation) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                input: prev,
                output: h,
                activation: hidden_act,
            });
            prev = h;
        }
        layers.push(LayerSpec::Dense {
            input: prev,
            output,
            activation: output_act,
        });
        layers
    }

    /// Fresh network with fan-in scaled uniform weights and zero biases.
    pub fn initialized(layers: Vec<LayerSpec>, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::new(layers)?;
        net.reinitialize(rng);
        Ok(net)
    }

    pub fn reinitialize(&mut self, rng: &mut Rng) {
        for (layer, &off) in self.layers.iter().zip(&self.offsets) {
            let slice = &mut self.params[off..off + layer.param_count()];
            slice.fill(0.0);
            let (input, output) = (layer.input(), layer.output());
            let (gain, blocks) = match *layer {
                LayerSpec::Dense { activation, .. } => (activation.init_gain(), vec![0]),
                LayerSpec::Glu { .. } => (1.0, vec![0, input * output + output]),
            };
            let bound = gain * (3.0 / input as f64).sqrt();
            for start in blocks {
                for w in &mut slice[start..start + input * output] {
                    *w = rng.random_range(-bound..bound);
                }
            }
        }
    }

    /// Multiplies the last layer's weights and biases by `factor`.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let last = self.layers.len() - 1;
        let off = self.offsets[last];
        for p in &mut self.params[off..off + self.layers[last].param_count()] {
            *p *= factor;
        }
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.params.len(), params.len())?;
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim("network input", self.input_dim(), x.ncols())?;
        let mut h: Option<Array2<f64>> = None;
        for (idx, layer) in self.layers.iter().enumerate() {
            let input = h.as_ref().map_or(x.view(), |a| a.view());
            let out = self.layer_forward(idx, layer, &input, None)?;
            h = Some(out);
        }
        Ok(h.expect("at least one layer"))
    }

    /// Single-sample convenience wrapper around [`Network::forward`].
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        check_dim("network input", self.input_dim(), x.ncols())?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (idx, layer) in self.layers.iter().enumerate() {
            let out = self.layer_forward(idx, layer, &h.view(), Some(&mut caches))?;
            h = out;
        }
        Ok((h, ForwardCache { layers: caches }))
    }

    fn layer_forward(
        &self,
        idx: usize,
        layer: &LayerSpec,
        x: &ArrayView2<'_, f64>,
        cache: Option<&mut Vec<LayerCache>>,
    ) -> Result<Array2<f64>> {
        let p = &self.params[self.offsets[idx]..];
        let out = match *layer {
            LayerSpec::Dense {
                input,
                output,
                activation,
            } => {
                let mut z = affine(x, p, input, output);
                activation.apply(&mut z);
                if let Some(c) = cache {
                    c.push(LayerCache::Dense {
                        input: x.to_owned(),
                        output: z.clone(),
                    });
                }
                z
            }
            LayerSpec::Glu { input, output } => {
                let content = affine(x, p, input, output);
                let mut gate = affine(x, &p[input * output + output..], input, output);
                gate.mapv_inplace(sigmoid);
                let out = &content * &gate;
                if let Some(c) = cache {
                    c.push(LayerCache::Glu {
                        input: x.to_owned(),
                        content,
                        gate,
                    });
                }
                out
            }
        };
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NonFinite { layer: idx })
        }
    }

    /// Backpropagates `upstream = dL/d(output)` through a recorded forward
    /// pass, accumulating parameter gradients into `grads`. Returns the
    /// input gradient when `want_input` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
        grads: &mut [f64],
        want_input: bool,
    ) -> Option<Array2<f64>> {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer length");
        let mut delta = upstream.to_owned();
        for idx in (0..self.layers.len()).rev() {
            let off = self.offsets[idx];
            let p = &self.params[off..];
            let g = &mut grads[off..off + self.layers[idx].param_count()];
            let need_dx = idx > 0 || want_input;
            delta = match (&self.layers[idx], &cache.layers[idx]) {
                (
                    &LayerSpec::Dense {
                        input,
                        output,
                        activation,
                    },
                    LayerCache::Dense { input: x, output: y },
                ) => {
                    if activation != Activation::Linear {
                        Zip::from(&mut delta)
                            .and(y)
                            .for_each(|d, &yv| *d *= activation.slope_from_output(yv));
                    }
                    accumulate_affine_grads(&delta, x, g, input, output);
                    if !need_dx {
                        return None;
                    }
                    delta.dot(&weights(p, output, input))
                }
                (&LayerSpec::Glu { input, output }, LayerCache::Glu { input: x, content, gate }) => {
                    let dcontent = &delta * gate;
                    let mut dgate = delta;
                    Zip::from(&mut dgate)
                        .and(content)
                        .and(gate)
                        .for_each(|d, &a, &s| *d *= a * s * (1.0 - s));
                    let (g1, g2) = g.split_at_mut(input * output + output);
                    accumulate_affine_grads(&dcontent, x, g1, input, output);
                    accumulate_affine_grads(&dgate, x, g2, input, output);
                    if !need_dx {
                        return None;
                    }
                    let mut dx = dcontent.dot(&weights(p, output, input));
                    general_mat_mul(
                        1.0,
                        &dgate,
                        &weights(&p[input * output + output..], output, input),
                        1.0,
                        &mut dx,
                    );
                    dx
                }
                _ => unreachable!("cache does not match layer kinds"),
            };
        }
        Some(delta)
    }

    /// Outputs plus the exact gradients of `sum(upstream * output)`.
    pub fn forward_backward(&self, x: ArrayView2<'_, f64>, upstream: ArrayView2<'_, f64>) -> Result<Gradients> {
        let (output, cache) = self.forward_cached(x)?;
        check_dim("upstream rows", output.nrows(), upstream.nrows())?;
        check_dim("upstream cols", output.ncols(), upstream.ncols())?;
        let mut params = vec![0.0; self.params.len()];
        let input = self
            .backward(&cache, upstream, &mut params, true)
            .expect("input gradient requested");
        Ok(Gradients { output, params, input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_difference, relative_error};
    use crate::numerics::rng_from_seed;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    fn glu_net(w1: [[f64; 2]; 2], w2: [[f64; 2]; 2]) -> Network {
        let mut net = Network::new(vec![LayerSpec::Glu { input: 2, output: 2 }]).unwrap();
        let mut p = Vec::new();
        p.extend(w1.iter().flatten());
        p.extend([0.0, 0.0]);
        p.extend(w2.iter().flatten());
        p.extend([0.0, 0.0]);
        net.set_params(&p).unwrap();
        net
    }

    #[test]
    fn glu_half_open_gate() {
        let net = glu_net([[1.0, 0.0], [0.0, 1.0]], [[0.0; 2]; 2]);
        assert_eq!(net.forward_one(&[2.0, -4.0]).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn glu_zero_content_path() {
        let net = glu_net([[0.0; 2]; 2], [[3.0, -1.0], [0.5, 2.0]]);
        assert_eq!(net.forward_one(&[0.7, -1.3]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn glu_saturated_gate_is_identity() {
        let net = glu_net([[1.0, 0.0], [0.0, 1.0]], [[50.0, 0.0], [0.0, 50.0]]);
        let y = net.forward_one(&[1.0, 1.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn param_count_matches_formula() {
        let mut layers = Network::mlp(7, &[16, 8], 3, Activation::Tanh, Activation::Linear);
        layers.insert(1, LayerSpec::Glu { input: 16, output: 16 });
        let net = Network::new(layers).unwrap();
        let expected = (7 * 16 + 16) + 2 * (16 * 16 + 16) + (16 * 8 + 8) + (8 * 3 + 3);
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn mismatched_chain_rejected() {
        let layers = vec![
            LayerSpec::Dense {
                input: 2,
                output: 3,
                activation: Activation::Relu,
            },
            LayerSpec::Glu { input: 4, output: 1 },
        ];
        assert!(matches!(Network::new(layers), Err(Error::Dimension { .. })));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut net = Network::new(vec![LayerSpec::Dense {
            input: 3,
            output: 2,
            activation: Activation::Linear,
        }])
        .unwrap();
        net.set_params(&[1.0, 2.0, 3.0, -1.0, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let x = array![[0.5, -2.0, 4.0]];
        let g = net.forward_backward(x.view(), Array2::ones((1, 2)).view()).unwrap();
        assert_eq!(&g.params[..6], &[0.5, -2.0, 4.0, 0.5, -2.0, 4.0]);
        assert_eq!(&g.params[6..], &[1.0, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = rng_from_seed(3);
        let net = Network::initialized(Network::mlp(4, &[8, 8], 2, Activation::Tanh, Activation::Linear), &mut rng).unwrap();
        let x = random_matrix(5, 4, &mut rng);
        let g = net.forward_backward(x.view(), Array2::zeros((5, 2)).view()).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_reports_layer() {
        let mut net = Network::new(Network::mlp(1, &[2], 1, Activation::Linear, Activation::Linear)).unwrap();
        net.params_mut()[0] = f64::MAX;
        net.params_mut()[1] = f64::MAX;
        // second layer overflows
        net.params_mut()[4] = f64::MAX;
        net.params_mut()[5] = f64::MAX;
        let err = net.forward_one(&[10.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { layer: 0 } | Error::NonFinite { layer: 1 }));
    }

    fn check_net(layers: Vec<LayerSpec>, seed: u64) {
        let mut rng = rng_from_seed(seed);
        let net = Network::initialized(layers, &mut rng).unwrap();
        let x = random_matrix(6, net.input_dim(), &mut rng);
        let up = random_matrix(6, net.output_dim(), &mut rng);
        let g = net.forward_backward(x.view(), up.view()).unwrap();
        let objective = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params(p).unwrap();
            (&n.forward(x.view()).unwrap() * &up).sum()
        };
        let fd = central_difference(objective, net.params(), 1e-5);
        let err = relative_error(&g.params, &fd);
        assert!(err < 1e-4, "param gradient relative error {err}");

        let input_objective = |xs: &[f64]| {
            let xm = ArrayView2::from_shape(x.raw_dim(), xs).unwrap();
            (&net.forward(xm).unwrap() * &up).sum()
        };
        let flat_x: Vec<f64> = x.iter().copied().collect();
        let fd_x = central_difference(input_objective, &flat_x, 1e-5);
        let gx: Vec<f64> = g.input.iter().copied().collect();
        assert!(relative_error(&gx, &fd_x) < 1e-4);
    }

    #[test]
    fn gradients_match_finite_differences_tanh() {
        check_net(Network::mlp(3, &[5, 4], 2, Activation::Tanh, Activation::Linear), 11);
    }

    #[test]
    fn gradients_match_finite_differences_every_layer_kind() {
        for (seed, act) in [(1, Activation::Relu), (2, Activation::Softplus), (3, Activation::Tanh), (4, Activation::Linear)] {
            let layers = vec![
                LayerSpec::Glu { input: 3, output: 6 },
                LayerSpec::Dense {
                    input: 6,
                    output: 5,
                    activation: act,
                },
                LayerSpec::Glu { input: 5, output: 4 },
                LayerSpec::Dense {
                    input: 4,
                    output: 2,
                    activation: Activation::Softplus,
                },
            ];
            check_net(layers, seed);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut a = rng_from_seed(9);
        let mut b = rng_from_seed(9);
        let layers = Network::mlp(3, &[7], 2, Activation::Relu, Activation::Linear);
        let na = Network::initialized(layers.clone(), &mut a).unwrap();
        let nb = Network::initialized(layers, &mut b).unwrap();
        assert_eq!(na, nb);
        let x = [0.1, -0.2, 0.3];
        assert_eq!(na.forward_one(&x).unwrap(), nb.forward_one(&x).unwrap());
    }
}
