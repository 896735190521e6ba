//! Dense multilayer perceptrons with exact backpropagation and Adam.
//!
//! Layer `i` maps `d_i -> d_{i+1}` with weight `A_i` of shape `(d_{i+1}, d_i)`
//! and bias `b_i`. Hidden layers use ReLU; the last layer produces logits that
//! go through the configured [`Head`]. Everything is `f64` and single-threaded
//! per model, so a fixed seed gives bit-identical parameters.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower/upper clip applied to probabilities before taking logarithms.
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Identity,
    Sigmoid,
    Softmax,
}

impl Head {
    fn name(self) -> &'static str {
        match self {
            Head::Identity => "identity",
            Head::Sigmoid => "sigmoid",
            Head::Softmax => "softmax",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Head::Identity),
            "sigmoid" => Ok(Head::Sigmoid),
            "softmax" => Ok(Head::Softmax),
            other => Err(Error::config(format!("unknown head '{other}'"))),
        }
    }

    fn apply(self, logits: &Array2<f64>) -> Array2<f64> {
        match self {
            Head::Identity => logits.clone(),
            Head::Sigmoid => logits.mapv(sigmoid),
            Head::Softmax => {
                let mut out = logits.clone();
                for mut row in out.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
                out
            }
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, head: Head) -> Result<Self> {
        let spec = MlpSpec { layer_sizes, head };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config("an MLP needs at least input and output sizes"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// `input -> hidden x depth -> output`.
    pub fn uniform(input: usize, hidden: usize, depth: usize, output: usize, head: Head) -> Self {
        let mut layer_sizes = vec![input];
        layer_sizes.extend(std::iter::repeat(hidden).take(depth));
        layer_sizes.push(output);
        MlpSpec { layer_sizes, head }
    }
}

/// Network parameters. Weight `i` has shape `(d_{i+1}, d_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpCheckpoint", into = "MlpCheckpoint")]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to every layer; entry 0 is the batch itself.
    inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }
}

/// Parameter-shaped gradient (or moment) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Gradients {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0, |a, &v| a.max(v.abs()))
    }
}

impl Mlp {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp { spec, weights, biases })
    }

    /// All-zero parameters.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let weights = spec.layer_sizes.windows(2).map(|p| Array2::zeros((p[1], p[0]))).collect();
        let biases = spec.layer_sizes[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(Mlp { spec, weights, biases })
    }

    pub fn from_parts(spec: MlpSpec, weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        spec.validate()?;
        let n = spec.layer_sizes.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::dim(format!("expected {n} layers of parameters")));
        }
        for (i, pair) in spec.layer_sizes.windows(2).enumerate() {
            if weights[i].dim() != (pair[1], pair[0]) || biases[i].len() != pair[1] {
                return Err(Error::dim(format!("layer {i} parameters do not match spec {pair:?}")));
            }
        }
        let mlp = Mlp { spec, weights, biases };
        if !mlp.is_finite() {
            return Err(Error::config("parameters must be finite"));
        }
        Ok(mlp)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Moves every parameter toward `other`: `p <- decay * p + (1 - decay) * q`.
    pub fn blend_toward(&mut self, other: &Mlp, decay: f64) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::dim("cannot blend networks with different layouts"));
        }
        for (w, q) in self.weights.iter_mut().zip(&other.weights) {
            w.zip_mut_with(q, |a, &b| *a = decay * *a + (1.0 - decay) * b);
        }
        for (w, q) in self.biases.iter_mut().zip(&other.biases) {
            w.zip_mut_with(q, |a, &b| *a = decay * *a + (1.0 - decay) * b);
        }
        Ok(())
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.spec.input_dim() {
            return Err(Error::dim(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(&self, layer: usize, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights[layer].t());
        z += &self.biases[layer];
        z
    }

    /// Pre-head output.
    pub fn logits(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&batch)?;
        let last = self.n_layers() - 1;
        let mut a = self.affine(0, &batch);
        for layer in 1..=last {
            a.mapv_inplace(relu);
            a = self.affine(layer, &a.view());
        }
        Ok(a)
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let logits = self.logits(batch)?;
        Ok(self.spec.head.apply(&logits))
    }

    /// Forward pass where the first layer sees `[batch | fixed]` and `fixed`
    /// is the same row for every sample. The fixed block is folded into the
    /// first-layer bias, which keeps the sampler cheap.
    pub fn logits_with_fixed_suffix(&self, batch: ArrayView2<f64>, fixed: &[f64]) -> Result<Array2<f64>> {
        let d_var = batch.ncols();
        if d_var + fixed.len() != self.spec.input_dim() {
            return Err(Error::dim("variable + fixed input width does not match network input"));
        }
        let w0 = &self.weights[0];
        let fixed = ndarray::ArrayView1::from(fixed);
        let bias0 = w0.slice(s![.., d_var..]).dot(&fixed) + &self.biases[0];
        let mut a = batch.dot(&w0.slice(s![.., ..d_var]).t());
        a += &bias0;
        for layer in 1..self.n_layers() {
            a.mapv_inplace(relu);
            a = self.affine(layer, &a.view());
        }
        Ok(a)
    }

    pub fn forward_cached(&self, batch: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&batch)?;
        let last = self.n_layers() - 1;
        let mut inputs = Vec::with_capacity(self.n_layers());
        inputs.push(batch.to_owned());
        let mut z = self.affine(0, &batch);
        for layer in 1..=last {
            z.mapv_inplace(relu);
            let next = self.affine(layer, &z.view());
            inputs.push(z);
            z = next;
        }
        let output = self.spec.head.apply(&z);
        Ok(ForwardCache { inputs, logits: z, output })
    }

    /// Gradients given `dL/d(head output)`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Array2<f64>) -> Result<Gradients> {
        if upstream.dim() != cache.output.dim() {
            return Err(Error::dim("upstream gradient does not match network output"));
        }
        let grad_logits = match self.spec.head {
            Head::Identity => upstream.clone(),
            Head::Sigmoid => {
                let mut g = upstream.clone();
                Zip::from(&mut g).and(&cache.output).for_each(|g, &p| *g *= p * (1.0 - p));
                g
            }
            Head::Softmax => {
                let mut g = Array2::zeros(upstream.raw_dim());
                for ((mut gr, ur), pr) in g.rows_mut().into_iter().zip(upstream.rows()).zip(cache.output.rows()) {
                    let dot = ur.dot(&pr);
                    Zip::from(&mut gr).and(&ur).and(&pr).for_each(|g, &u, &p| *g = p * (u - dot));
                }
                g
            }
        };
        Ok(self.backward_logits(cache, &grad_logits, false)?.0)
    }

    /// Gradients given `dL/d(logits)`; optionally also `dL/d(input)`.
    pub fn backward_logits(
        &self,
        cache: &ForwardCache,
        grad_logits: &Array2<f64>,
        want_input_grad: bool,
    ) -> Result<(Gradients, Option<Array2<f64>>)> {
        if cache.inputs.len() != self.n_layers() {
            return Err(Error::State("forward cache does not belong to this network".into()));
        }
        if grad_logits.dim() != cache.logits.dim() {
            return Err(Error::dim("logit gradient does not match network output"));
        }
        let n = self.n_layers();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = grad_logits.clone();
        let mut input_grad = None;
        for layer in (0..n).rev() {
            let a_in = &cache.inputs[layer];
            gw.push(delta.t().dot(a_in));
            gb.push(delta.sum_axis(Axis(0)));
            if layer > 0 {
                let mut prev = delta.dot(&self.weights[layer]);
                Zip::from(&mut prev).and(a_in).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            } else if want_input_grad {
                input_grad = Some(delta.dot(&self.weights[0]));
            }
        }
        gw.reverse();
        gb.reverse();
        Ok((Gradients { weights: gw, biases: gb }, input_grad))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// On-disk layout: `{"spec", "head", "weights": [layer][row][col], "biases": [layer][col]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub spec: Vec<usize>,
    pub head: String,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<Mlp> for MlpCheckpoint {
    fn from(m: Mlp) -> Self {
        MlpCheckpoint {
            spec: m.spec.layer_sizes.clone(),
            head: m.spec.head.name().to_string(),
            weights: m.weights.iter().map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect()).collect(),
            biases: m.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }
}

impl TryFrom<MlpCheckpoint> for Mlp {
    type Error = Error;

    fn try_from(c: MlpCheckpoint) -> Result<Self> {
        let spec = MlpSpec::new(c.spec, Head::parse(&c.head)?)?;
        let mut weights = Vec::new();
        for (i, rows) in c.weights.into_iter().enumerate() {
            let n_rows = rows.len();
            let n_cols = rows.first().map_or(0, |r| r.len());
            if rows.iter().any(|r| r.len() != n_cols) {
                return Err(Error::dim(format!("ragged weight matrix in layer {i}")));
            }
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            weights.push(Array2::from_shape_vec((n_rows, n_cols), flat).map_err(|e| Error::dim(e.to_string()))?);
        }
        let biases = c.biases.into_iter().map(Array1::from).collect();
        Mlp::from_parts(spec, weights, biases)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(mlp),
            v: Gradients::zeros_like(mlp),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if grads.weights.len() != params.weights.len()
            || grads.weights.iter().zip(&params.weights).any(|(g, w)| g.dim() != w.dim())
            || grads.biases.iter().zip(&params.biases).any(|(g, b)| g.dim() != b.dim())
        {
            return Err(Error::dim("gradient shapes do not match parameters"));
        }
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr;
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for i in 0..params.weights.len() {
            Zip::from(&mut params.weights[i])
                .and(&mut self.m.weights[i])
                .and(&mut self.v.weights[i])
                .and(&grads.weights[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut params.biases[i])
                .and(&mut self.m.biases[i])
                .and(&mut self.v.biases[i])
                .and(&grads.biases[i])
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

/// Mean squared error over all entries and its gradient.
pub fn loss_mse(pred: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::dim("prediction and target shapes differ"));
    }
    let n = pred.len().max(1) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

#[inline]
pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Mean binary cross-entropy and its gradient with respect to the probabilities.
pub fn loss_logistic(prob: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if prob.len() != labels.len() {
        return Err(Error::dim("probability and label lengths differ"));
    }
    let n = prob.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(prob.len());
    for (&p, &y) in prob.iter().zip(labels) {
        let p = clip_prob(p);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((-y / p + (1.0 - y) / (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// Binary cross-entropy computed from logits; the gradient is with respect
/// to the logits, `(sigmoid(z) - y) / n`.
pub fn loss_logistic_logits(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(Error::dim("logit and label lengths differ"));
    }
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let p = sigmoid(z);
        let pc = clip_prob(p);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        grad.push((p - y) / n);
    }
    Ok((loss / n, grad))
}

/// Mean softmax cross-entropy; gradient with respect to the logits.
pub fn loss_softmax_ce(logits: &Array2<f64>, classes: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != classes.len() {
        return Err(Error::dim("logit rows and class count differ"));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= logits.ncols()) {
        return Err(Error::dim(format!("class {c} out of range")));
    }
    let n = classes.len().max(1) as f64;
    let mut probs = Head::Softmax.apply(logits);
    let mut loss = 0.0;
    for (mut row, &c) in probs.rows_mut().into_iter().zip(classes) {
        loss -= clip_prob(row[c]).ln();
        row[c] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }
    Ok((loss / n, probs))
}

/// Shuffled mini-batch index lists covering `0..n` once.
pub fn shuffled_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_net(sizes: &[usize], head: Head, seed: u64) -> Mlp {
        let mut rng = SeedStream::new(seed).rng();
        let mut m = Mlp::new(MlpSpec::new(sizes.to_vec(), head).unwrap(), &mut rng).unwrap();
        for b in m.biases_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        m
    }

    #[test]
    fn zero_weights_propagate_bias_chain() {
        let spec = MlpSpec::new(vec![2, 3, 2], Head::Identity).unwrap();
        let mut m = Mlp::zeros(spec).unwrap();
        m.biases_mut()[0].assign(&array![1.0, -2.0, 0.5]);
        m.biases_mut()[1].assign(&array![0.25, -0.75]);
        let out = m.forward(array![[3.0, 4.0], [-1.0, 9.0]].view()).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.25, -0.75]);
        }
    }

    #[test]
    fn identity_layer_is_identity() {
        let spec = MlpSpec::new(vec![3, 3], Head::Identity).unwrap();
        let m = Mlp::from_parts(spec, vec![Array2::eye(3)], vec![Array1::zeros(3)]).unwrap();
        let x = array![[1.5, -2.0, 0.25]];
        assert_eq!(m.forward(x.view()).unwrap(), x);
    }

    #[test]
    fn hand_computed_two_layer_net() {
        // hidden = relu([[1,-1],[0.5,2]] x + [0.1,-0.2]); out = [2,-3] hidden + 0.3
        let spec = MlpSpec::new(vec![2, 2, 1], Head::Identity).unwrap();
        let m = Mlp::from_parts(
            spec,
            vec![array![[1.0, -1.0], [0.5, 2.0]], array![[2.0, -3.0]]],
            vec![array![0.1, -0.2], array![0.3]],
        )
        .unwrap();
        // x = (0.4, 0.7): h1 = relu(0.4-0.7+0.1) = 0, h2 = relu(0.2+1.4-0.2) = 1.4
        // out = 0*2 - 3*1.4 + 0.3 = -3.9
        let out = m.forward(array![[0.4, 0.7]].view()).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], -3.9, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = small_net(&[3, 4, 1], Head::Identity, 1);
        assert!(matches!(m.forward(Array2::zeros((2, 2)).view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = small_net(&[3, 5, 2], Head::Sigmoid, 2);
        let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
        let cache = m.forward_cached(x.view()).unwrap();
        let g = m.backward(&cache, &Array2::zeros((4, 2))).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn backward_with_foreign_cache_is_state_error() {
        let a = small_net(&[2, 3, 1], Head::Identity, 3);
        let b = small_net(&[2, 3, 3, 1], Head::Identity, 3);
        let cache = a.forward_cached(Array2::zeros((1, 2)).view()).unwrap();
        assert!(matches!(b.backward_logits(&cache, &Array2::zeros((1, 1)), false), Err(Error::State(_))));
    }

    #[test]
    fn linear_mse_gradient_matches_closed_form() {
        let spec = MlpSpec::new(vec![3, 1], Head::Identity).unwrap();
        let w = array![[0.5, -1.0, 2.0]];
        let m = Mlp::from_parts(spec, vec![w.clone()], vec![array![0.0]]).unwrap();
        let x = array![[1.0, 2.0, 3.0], [0.5, -1.0, 0.0], [2.0, 0.0, -1.0], [0.1, 0.2, 0.3]];
        let y = array![[1.0], [0.0], [-2.0], [0.5]];
        let cache = m.forward_cached(x.view()).unwrap();
        let (_, g) = loss_mse(cache.output(), &y).unwrap();
        let grads = m.backward(&cache, &g).unwrap();
        let resid = x.dot(&w.t()) - &y;
        let expected = x.t().dot(&resid) * (2.0 / 4.0);
        for j in 0..3 {
            assert_abs_diff_eq!(grads.weights[0][[0, j]], expected[[j, 0]], epsilon = 1e-10);
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut m = small_net(&[2, 3, 1], Head::Identity, 4);
        let before = m.clone();
        let mut opt = Adam::new(&m, 1e-3);
        opt.step(&mut m, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(m, before);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn adam_first_and_second_step_match_scalar_recursion() {
        let spec = MlpSpec::new(vec![1, 1], Head::Identity).unwrap();
        let mut m = Mlp::from_parts(spec, vec![array![[1.0]]], vec![array![0.0]]).unwrap();
        let lr = 0.01;
        let mut opt = Adam::new(&m, lr);
        let g = Gradients { weights: vec![array![[0.5]]], biases: vec![array![-2.0]] };
        opt.step(&mut m, &g).unwrap();
        // m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        assert_abs_diff_eq!(m.weights()[0][[0, 0]], 1.0 - lr * 0.5 / (0.5 + 1e-8), epsilon = 1e-12);
        assert_abs_diff_eq!(m.biases()[0][0], lr * 2.0 / (2.0 + 1e-8), epsilon = 1e-12);

        // Second identical step, textbook recursion by hand.
        opt.step(&mut m, &g).unwrap();
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let mut p = 1.0f64;
        let (mut mm, mut vv) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            mm = b1 * mm + (1.0 - b1) * 0.5;
            vv = b2 * vv + (1.0 - b2) * 0.25;
            let mh = mm / (1.0 - b1.powi(t));
            let vh = vv / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        assert_abs_diff_eq!(m.weights()[0][[0, 0]], p, epsilon = 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut m = small_net(&[1, 1], Head::Identity, 5);
        let mut opt = Adam::new(&m, 1e-3);
        let mut g = Gradients::zeros_like(&m);
        g.biases[0][0] = f64::NAN;
        assert!(matches!(opt.step(&mut m, &g), Err(Error::Divergence(_))));
    }

    #[test]
    fn loss_values() {
        let (l, _) = loss_logistic(&[0.5, 0.5], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-12);
        let (l, _) = loss_logistic(&[0.9], &[1.0]).unwrap();
        assert_abs_diff_eq!(l, -(0.9f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(l, 0.105361, epsilon = 1e-6);
        let t = array![[1.0, 2.0], [3.0, 4.0]];
        let (l, g) = loss_mse(&t, &t).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.iter().fold(0.0f64, |a, &v| a.max(v.abs())), 0.0);
        let (l, _) = loss_logistic(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(l.is_finite());
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let (l, g) = loss_softmax_ce(&Array2::zeros((2, 4)), &[1, 3]).unwrap();
        assert_abs_diff_eq!(l, 4.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g[[0, 1]], (0.25 - 1.0) / 2.0, epsilon = 1e-12);
        assert!(loss_softmax_ce(&Array2::zeros((1, 2)), &[2]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small_net(&[3, 4, 2], Head::Softmax, 9);
        let text = m.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["spec"], serde_json::json!([3, 4, 2]));
        assert_eq!(v["head"], "softmax");
        assert_eq!(v["weights"][0].as_array().unwrap().len(), 4);
        assert_eq!(Mlp::from_json(&text).unwrap(), m);
    }

    #[test]
    fn fixed_suffix_forward_matches_full_forward() {
        let m = small_net(&[5, 8, 8, 2], Head::Identity, 11);
        let var = Array2::from_shape_fn((6, 2), |(i, j)| (i * 3 + j) as f64 * 0.1 - 0.7);
        let fixed = [0.3, -1.2, 0.8];
        let mut full = Array2::zeros((6, 5));
        full.slice_mut(s![.., ..2]).assign(&var);
        for mut row in full.rows_mut() {
            row.slice_mut(s![2..]).assign(&ndarray::ArrayView1::from(&fixed[..]));
        }
        let a = m.logits(full.view()).unwrap();
        let b = m.logits_with_fixed_suffix(var.view(), &fixed).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }
}
