//! Fully connected network with explicit weights and a batched
//! forward/backward pass.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }
}

/// Builds `input -> hidden[0] -> ... -> classes` with ReLU hidden layers and
/// an identity output layer.
pub fn architecture(input_dim: usize, hidden: &[usize], n_classes: usize) -> Vec<LayerSpec> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(n_classes);
    let last = dims.len() - 2;
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last {
                Activation::Identity
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

/// Checks the structural invariants of a layer sequence.
pub fn validate_architecture(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("architecture has no layers"));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::invalid(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].output_dim != w[1].input_dim {
            return Err(Error::invalid(format!(
                "layer {} outputs {} values but layer {} expects {}",
                i,
                w[0].output_dim,
                i + 1,
                w[1].input_dim
            )));
        }
    }
    if specs[specs.len() - 1].activation != Activation::Identity {
        return Err(Error::invalid("final layer must use the identity activation"));
    }
    Ok(())
}

/// One dense layer. Weights are `output_dim x input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub(crate) spec: LayerSpec,
    pub(crate) weights: Array2<f64>,
    pub(crate) bias: Array1<f64>,
}

impl Dense {
    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }
}

/// Multiplicative masks applied to hidden activations, one `batch x width`
/// matrix per hidden layer. Entries are already scaled (inverted dropout),
/// so an all-ones mask is a no-op.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layers: Vec<Array2<f64>>,
}

impl DropoutMask {
    pub fn ones(model: &Mlp, batch: usize) -> Self {
        Self {
            layers: model.hidden_widths().map(|w| Array2::ones((batch, w))).collect(),
        }
    }

    /// Samples inverted-dropout masks: each entry is `0` with probability
    /// `rate` and `1 / (1 - rate)` otherwise.
    pub fn sample<R: Rng + ?Sized>(model: &Mlp, batch: usize, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 / (1.0 - rate);
        Self {
            layers: model
                .hidden_widths()
                .map(|w| Array2::from_shape_simple_fn((batch, w), || {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                }))
                .collect(),
        }
    }
}

/// Per-layer parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    /// Flattened in the same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    /// L2 norm of each layer's (weights, bias) gradient.
    pub fn layer_norms(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (w.iter().map(|v| v * v).sum::<f64>() + b.iter().map(|v| v * v).sum::<f64>()).sqrt())
            .collect()
    }

    pub fn total_norm(&self) -> f64 {
        self.layer_norms().iter().map(|n| n * n).sum::<f64>().sqrt()
    }
}

/// Intermediate values of a batched forward pass.
pub(crate) struct Trace {
    /// Input to each layer (after activation and dropout of the previous one).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation values of each hidden layer.
    pub hidden_pre: Vec<Array2<f64>>,
    pub masks: Option<Vec<Array2<f64>>>,
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization for weights
    /// and biases, seeded.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_architecture(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let bound = 1.0 / (spec.input_dim as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((spec.output_dim, spec.input_dim), || {
                    rng.random_range(-bound..bound)
                });
                let bias = Array1::from_shape_simple_fn(spec.output_dim, || rng.random_range(-bound..bound));
                Dense { spec, weights, bias }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_architecture(specs)?;
        Ok(Self {
            layers: specs
                .iter()
                .map(|&spec| Dense {
                    spec,
                    weights: Array2::zeros((spec.output_dim, spec.input_dim)),
                    bias: Array1::zeros(spec.output_dim),
                })
                .collect(),
        })
    }

    pub fn from_parts(specs: &[LayerSpec], weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        validate_architecture(specs)?;
        if weights.len() != specs.len() || biases.len() != specs.len() {
            return Err(Error::invalid("one weight matrix and bias vector per layer required"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        for ((&spec, w), b) in specs.iter().zip(weights).zip(biases) {
            if w.dim() != (spec.output_dim, spec.input_dim) || b.len() != spec.output_dim {
                return Err(Error::invalid("weight or bias shape does not match layer spec"));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite weight or bias"));
            }
            layers.push(Dense { spec, weights: w, bias: b });
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn hidden_widths(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.spec.output_dim)
    }

    /// All parameters, layer by layer: weights row-major, then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    /// Logits for a single feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_masked(x, None)
    }

    /// Logits for a single feature vector with optional per-hidden-layer
    /// dropout multipliers (one `1 x width` row per hidden layer).
    pub fn forward_masked(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        self.check_batch(row, mask)?;
        Ok(self.forward_trace(row, mask).logits.into_raw_vec_and_offset().0)
    }

    /// Logits for every row of `x`.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(x, None)?;
        Ok(self.logits_unchecked(x))
    }

    pub(crate) fn logits_unchecked(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = self.affine(0, x);
        for i in 1..self.layers.len() {
            activate(self.layers[i - 1].spec.activation, &mut a);
            a = self.affine(i, a.view());
        }
        a
    }

    /// Row-wise `softmax(logits / temperature)`.
    pub fn predict_proba(&self, x: ArrayView2<f64>, temperature: f64) -> Result<Array2<f64>> {
        super::loss::check_temperature(temperature)?;
        let mut z = self.logits(x)?;
        softmax_rows(&mut z, temperature);
        Ok(z)
    }

    pub(crate) fn check_batch(&self, x: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if let Some(m) = mask {
            let widths: Vec<usize> = self.hidden_widths().collect();
            if m.layers.len() != widths.len()
                || m.layers.iter().zip(&widths).any(|(a, &w)| a.dim() != (x.nrows(), w))
            {
                return Err(Error::invalid("dropout mask does not match hidden layer widths"));
            }
        }
        Ok(())
    }

    fn affine(&self, i: usize, a: ArrayView2<f64>) -> Array2<f64> {
        let l = &self.layers[i];
        let mut z = a.dot(&l.weights.t());
        if !z.is_standard_layout() {
            z = z.as_standard_layout().into_owned();
        }
        z += &l.bias;
        z
    }

    pub(crate) fn forward_trace(&self, x: ArrayView2<f64>, mask: Option<&DropoutMask>) -> Trace {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut hidden_pre = Vec::with_capacity(n - 1);
        let mut current = x.to_owned();
        for i in 0..n {
            let z = self.affine(i, current.view());
            inputs.push(current);
            if i + 1 == n {
                return Trace {
                    inputs,
                    hidden_pre,
                    masks: mask.map(|m| m.layers.clone()),
                    logits: z,
                };
            }
            let mut a = z.clone();
            activate(self.layers[i].spec.activation, &mut a);
            if let Some(m) = mask {
                a *= &m.layers[i];
            }
            hidden_pre.push(z);
            current = a;
        }
        unreachable!()
    }

    /// Back-propagates `dlogits` and returns the pre-activation deltas of
    /// every layer (same order as the layers).
    pub(crate) fn deltas(&self, trace: &Trace, dlogits: Array2<f64>) -> Vec<Array2<f64>> {
        let n = self.layers.len();
        let mut deltas = vec![Array2::zeros((0, 0)); n];
        let mut dz = dlogits;
        for i in (0..n).rev() {
            if i > 0 {
                let mut da = dz.dot(&self.layers[i].weights);
                if let Some(m) = &trace.masks {
                    da *= &m[i - 1];
                }
                if self.layers[i - 1].spec.activation == Activation::Relu {
                    Zip::from(&mut da).and(&trace.hidden_pre[i - 1]).for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
                deltas[i] = std::mem::replace(&mut dz, da);
            } else {
                deltas[0] = std::mem::replace(&mut dz, Array2::zeros((0, 0)));
            }
        }
        deltas
    }

    /// Gradients of `sum_rows(dlogits . logits)` with respect to every
    /// parameter.
    pub(crate) fn backward_trace(&self, trace: &Trace, dlogits: Array2<f64>) -> Gradients {
        let deltas = self.deltas(trace, dlogits);
        let weights = deltas
            .iter()
            .zip(&trace.inputs)
            .map(|(d, a)| d.t().dot(a))
            .collect();
        let biases = deltas.iter().map(|d| d.sum_axis(Axis(0))).collect();
        Gradients { weights, biases }
    }
}

pub(crate) fn activate(act: Activation, a: &mut Array2<f64>) {
    if act == Activation::Relu {
        a.mapv_inplace(|v| v.max(0.0));
    }
}

pub(crate) fn softmax_rows(z: &mut Array2<f64>, temperature: f64) {
    for mut row in z.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = ((v - max) / temperature).exp();
            sum += e;
            e
        });
        row /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_network_passes_input_through() {
        let specs = [LayerSpec::new(2, 2, Activation::Identity)];
        let m = Mlp::from_parts(&specs, vec![Array2::eye(2)], vec![Array1::zeros(2)]).unwrap();
        assert_eq!(m.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn bias_only_network() {
        let specs = [LayerSpec::new(3, 2, Activation::Identity)];
        let m = Mlp::from_parts(&specs, vec![Array2::zeros((2, 3))], vec![array![3.0, -1.0]]).unwrap();
        assert_eq!(m.forward(&[5.0, -7.0, 0.25]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        let specs = architecture(5, &[7], 3);
        let m = Mlp::new(&specs, 42).unwrap();
        let x = [0.3, -1.2, 0.0, 2.5, 1.0];

        // Independent scalar loops over the raw parameter vector.
        let p = m.params();
        let (w1, rest) = p.split_at(7 * 5);
        let (b1, rest) = rest.split_at(7);
        let (w2, b2) = rest.split_at(3 * 7);
        let mut h = [0.0; 7];
        for o in 0..7 {
            let mut s = b1[o];
            for i in 0..5 {
                s += w1[o * 5 + i] * x[i];
            }
            h[o] = if s > 0.0 { s } else { 0.0 };
        }
        let mut expect = [0.0; 3];
        for o in 0..3 {
            let mut s = b2[o];
            for i in 0..7 {
                s += w2[o * 7 + i] * h[i];
            }
            expect[o] = s;
        }
        let got = m.forward(&x).unwrap();
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = Mlp::new(&architecture(4, &[3], 2), 1).unwrap();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::InvalidInput(_))));
        let bad_mask = DropoutMask { layers: vec![Array2::ones((1, 5))] };
        assert!(matches!(
            m.forward_masked(&[1.0; 4], Some(&bad_mask)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn architecture_validation() {
        assert!(Mlp::zeros(&[]).is_err());
        let relu_out = [LayerSpec::new(2, 2, Activation::Relu)];
        assert!(Mlp::zeros(&relu_out).is_err());
        let gap = [
            LayerSpec::new(2, 3, Activation::Relu),
            LayerSpec::new(4, 2, Activation::Identity),
        ];
        assert!(Mlp::zeros(&gap).is_err());
    }

    #[test]
    fn params_round_trip() {
        let mut m = Mlp::new(&architecture(3, &[4, 2], 2), 9).unwrap();
        let p = m.params();
        assert_eq!(p.len(), m.n_params());
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        m.set_params(&shifted).unwrap();
        assert_eq!(m.params(), shifted);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let specs = architecture(16, &[8], 4);
        let a = Mlp::new(&specs, 3).unwrap();
        assert_eq!(a, Mlp::new(&specs, 3).unwrap());
        assert_ne!(a, Mlp::new(&specs, 4).unwrap());
        assert!(a.layers()[0].weights().iter().all(|w| w.abs() <= 0.25));
    }
}
