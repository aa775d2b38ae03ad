//! Single-hidden-layer gated recurrent unit network.
//!
//! Cell, with `h₀ = 0`:
//!
//! ```text
//! z = σ(W_z x + U_z h + b_z)
//! r = σ(W_r x + U_r h + b_r)
//! ĥ = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ ĥ
//! ```
//!
//! The output is linear in the final hidden state after inverted dropout:
//! `y = W_o (m ⊙ h_N) + b_o`, where training masks hold `0` or `1/(1−p)` and
//! inference uses all ones.

mod checkpoint;
mod matrix;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use matrix::Matrix;

use crate::attribution::{AttributionKind, AttributionMap};
use crate::error::{check_len, Error, Result};
use crate::features::{GruHyper, Sequence};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParameters {
    pub dims: GruDims,
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
    pub w_o: Matrix,
    pub b_o: Vec<f64>,
}

/// Tensor names in the order used by [`GruParameters::tensors`].
pub const TENSOR_NAMES: [&str; 11] = [
    "w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h", "w_o", "b_o",
];

impl GruParameters {
    pub fn zeros(dims: GruDims) -> Self {
        let GruDims {
            input,
            hidden,
            output,
        } = dims;
        GruParameters {
            dims,
            w_z: Matrix::zeros(hidden, input),
            w_r: Matrix::zeros(hidden, input),
            w_h: Matrix::zeros(hidden, input),
            u_z: Matrix::zeros(hidden, hidden),
            u_r: Matrix::zeros(hidden, hidden),
            u_h: Matrix::zeros(hidden, hidden),
            b_z: vec![0.0; hidden],
            b_r: vec![0.0; hidden],
            b_h: vec![0.0; hidden],
            w_o: Matrix::zeros(output, hidden),
            b_o: vec![0.0; output],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 11] {
        [
            self.w_z.as_slice(),
            self.w_r.as_slice(),
            self.w_h.as_slice(),
            self.u_z.as_slice(),
            self.u_r.as_slice(),
            self.u_h.as_slice(),
            &self.b_z,
            &self.b_r,
            &self.b_h,
            self.w_o.as_slice(),
            &self.b_o,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 11] {
        [
            self.w_z.as_mut_slice(),
            self.w_r.as_mut_slice(),
            self.w_h.as_mut_slice(),
            self.u_z.as_mut_slice(),
            self.u_r.as_mut_slice(),
            self.u_h.as_mut_slice(),
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
            self.w_o.as_mut_slice(),
            &mut self.b_o,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let GruDims {
            input,
            hidden,
            output,
        } = self.dims;
        let expect = [
            (self.w_z.shape(), (hidden, input)),
            (self.w_r.shape(), (hidden, input)),
            (self.w_h.shape(), (hidden, input)),
            (self.u_z.shape(), (hidden, hidden)),
            (self.u_r.shape(), (hidden, hidden)),
            (self.u_h.shape(), (hidden, hidden)),
            (self.w_o.shape(), (output, hidden)),
        ];
        for (found, want) in expect {
            if found != want {
                return Err(Error::Model(format!(
                    "weight shape {found:?}, expected {want:?}"
                )));
            }
        }
        for (b, n) in [
            (&self.b_z, hidden),
            (&self.b_r, hidden),
            (&self.b_h, hidden),
            (&self.b_o, output),
        ] {
            check_len(n, b.len())?;
        }
        Ok(())
    }
}

/// Uniform `[−1/√fan_in, 1/√fan_in]` weights drawn in tensor order, zero
/// biases.
pub fn init_gru(dims: GruDims, seed: u64) -> Result<GruParameters> {
    if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
        return Err(Error::InvalidArgument(format!(
            "GRU dimensions must be positive: {dims:?}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut uniform = |rows: usize, cols: usize| {
        let s = 1.0 / (cols as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-s..=s))
    };
    let GruDims {
        input,
        hidden,
        output,
    } = dims;
    let w_z = uniform(hidden, input);
    let w_r = uniform(hidden, input);
    let w_h = uniform(hidden, input);
    let u_z = uniform(hidden, hidden);
    let u_r = uniform(hidden, hidden);
    let u_h = uniform(hidden, hidden);
    let w_o = uniform(output, hidden);
    Ok(GruParameters {
        w_z,
        w_r,
        w_h,
        u_z,
        u_r,
        u_h,
        w_o,
        ..GruParameters::zeros(dims)
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
struct StepCache {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    candidate: Vec<f64>,
}

/// Result of [`gru_forward`].
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `h_1 … h_N`.
    pub hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
    steps: Vec<StepCache>,
    mask: Option<Vec<f64>>,
}

fn check_sequence(params: &GruParameters, sequence: &[Vec<f64>]) -> Result<()> {
    if sequence.is_empty() {
        return Err(Error::InvalidArgument("empty input sequence".into()));
    }
    for step in sequence {
        check_len(params.dims.input, step.len())?;
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite value in input sequence".into(),
            ));
        }
    }
    Ok(())
}

pub fn gru_forward(
    params: &GruParameters,
    sequence: &[Vec<f64>],
    dropout_mask: Option<&[f64]>,
) -> Result<ForwardPass> {
    params.check_shapes()?;
    check_sequence(params, sequence)?;
    if let Some(m) = dropout_mask {
        check_len(params.dims.hidden, m.len())?;
    }
    Ok(forward_unchecked(params, sequence, dropout_mask))
}

fn forward_unchecked(
    params: &GruParameters,
    sequence: &[Vec<f64>],
    mask: Option<&[f64]>,
) -> ForwardPass {
    let hd = params.dims.hidden;
    let mut h = vec![0.0; hd];
    let mut hidden = Vec::with_capacity(sequence.len());
    let mut steps = Vec::with_capacity(sequence.len());
    for x in sequence {
        let mut z = params.b_z.clone();
        params.w_z.mul_add(x, &mut z);
        params.u_z.mul_add(&h, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = params.b_r.clone();
        params.w_r.mul_add(x, &mut r);
        params.u_r.mul_add(&h, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let mut candidate = params.b_h.clone();
        params.w_h.mul_add(x, &mut candidate);
        params.u_h.mul_add(&rh, &mut candidate);
        candidate.iter_mut().for_each(|v| *v = v.tanh());

        let next: Vec<f64> = (0..hd)
            .map(|j| (1.0 - z[j]) * h[j] + z[j] * candidate[j])
            .collect();
        steps.push(StepCache {
            h_prev: std::mem::replace(&mut h, next),
            z,
            r,
            candidate,
        });
        hidden.push(h.clone());
    }
    let dropped: Vec<f64> = match mask {
        Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => h,
    };
    let mut output = params.b_o.clone();
    params.w_o.mul_add(&dropped, &mut output);
    ForwardPass {
        hidden,
        output,
        steps,
        mask: mask.map(<[f64]>::to_vec),
    }
}

/// Accumulates `∂(d_output · y)/∂θ` into `grads` and, when asked, returns
/// the gradient with respect to each input step.
fn backprop(
    params: &GruParameters,
    sequence: &[Vec<f64>],
    pass: &ForwardPass,
    d_output: &[f64],
    grads: &mut GruParameters,
    want_inputs: bool,
) -> Option<Sequence> {
    let hd = params.dims.hidden;
    let h_last = pass.hidden.last().expect("non-empty sequence");
    let dropped: Vec<f64> = match &pass.mask {
        Some(m) => h_last.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => h_last.clone(),
    };
    grads.w_o.outer_add(d_output, &dropped);
    grads
        .b_o
        .iter_mut()
        .zip(d_output)
        .for_each(|(g, d)| *g += d);
    let mut dh = vec![0.0; hd];
    params.w_o.t_mul_add(d_output, &mut dh);
    if let Some(m) = &pass.mask {
        dh.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
    }

    let mut d_inputs = want_inputs.then(|| vec![Vec::new(); sequence.len()]);
    let mut da_z = vec![0.0; hd];
    let mut da_r = vec![0.0; hd];
    let mut da_c = vec![0.0; hd];
    for t in (0..sequence.len()).rev() {
        let x = &sequence[t];
        let StepCache {
            h_prev,
            z,
            r,
            candidate,
        } = &pass.steps[t];
        let mut dh_prev: Vec<f64> = (0..hd).map(|j| dh[j] * (1.0 - z[j])).collect();
        for j in 0..hd {
            let dz = dh[j] * (candidate[j] - h_prev[j]);
            da_z[j] = dz * z[j] * (1.0 - z[j]);
            da_c[j] = dh[j] * z[j] * (1.0 - candidate[j] * candidate[j]);
        }
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        grads.w_h.outer_add(&da_c, x);
        grads.u_h.outer_add(&da_c, &rh);
        grads.b_h.iter_mut().zip(&da_c).for_each(|(g, d)| *g += d);

        let mut d_rh = vec![0.0; hd];
        params.u_h.t_mul_add(&da_c, &mut d_rh);
        for j in 0..hd {
            da_r[j] = d_rh[j] * h_prev[j] * r[j] * (1.0 - r[j]);
            dh_prev[j] += d_rh[j] * r[j];
        }
        grads.w_z.outer_add(&da_z, x);
        grads.u_z.outer_add(&da_z, h_prev);
        grads.b_z.iter_mut().zip(&da_z).for_each(|(g, d)| *g += d);
        grads.w_r.outer_add(&da_r, x);
        grads.u_r.outer_add(&da_r, h_prev);
        grads.b_r.iter_mut().zip(&da_r).for_each(|(g, d)| *g += d);

        params.u_z.t_mul_add(&da_z, &mut dh_prev);
        params.u_r.t_mul_add(&da_r, &mut dh_prev);

        if let Some(d_in) = d_inputs.as_mut() {
            let mut dx = vec![0.0; params.dims.input];
            params.w_z.t_mul_add(&da_z, &mut dx);
            params.w_r.t_mul_add(&da_r, &mut dx);
            params.w_h.t_mul_add(&da_c, &mut dx);
            d_in[t] = dx;
        }
        dh = dh_prev;
    }
    d_inputs
}

/// Gradients of the mean-squared-error loss.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// Same layout as the parameters.
    pub params: GruParameters,
    /// `∂loss/∂input` for every example, step and channel.
    pub inputs: Vec<Sequence>,
    pub loss: f64,
}

fn check_batch(
    params: &GruParameters,
    inputs: &[Sequence],
    targets: &[Vec<f64>],
    masks: Option<&[Vec<f64>]>,
) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    params.check_shapes()?;
    check_len(inputs.len(), targets.len())?;
    for (seq, y) in inputs.iter().zip(targets) {
        check_sequence(params, seq)?;
        check_len(params.dims.output, y.len())?;
    }
    if let Some(m) = masks {
        check_len(inputs.len(), m.len())?;
        for mask in m {
            check_len(params.dims.hidden, mask.len())?;
        }
    }
    Ok(())
}

/// Loss is the mean over examples and output channels of squared error.
/// Examples are `indices` into `inputs`/`targets`; `masks[i]` belongs to
/// `indices[i]`.
fn batch_gradients(
    params: &GruParameters,
    inputs: &[Sequence],
    targets: &[Vec<f64>],
    indices: &[usize],
    masks: Option<&[Vec<f64>]>,
    want_inputs: bool,
) -> Gradients {
    let scale = 1.0 / (indices.len() * params.dims.output) as f64;
    let mut grads = GruParameters::zeros(params.dims);
    let mut d_inputs = Vec::new();
    let mut loss = 0.0;
    for (i, &e) in indices.iter().enumerate() {
        let (seq, y) = (&inputs[e], &targets[e]);
        let mask = masks.map(|m| m[i].as_slice());
        let pass = forward_unchecked(params, seq, mask);
        let err: Vec<f64> = pass.output.iter().zip(y).map(|(o, t)| o - t).collect();
        loss += err.iter().map(|e| e * e).sum::<f64>() * scale;
        let d_out: Vec<f64> = err.iter().map(|e| 2.0 * e * scale).collect();
        if let Some(d) = backprop(params, seq, &pass, &d_out, &mut grads, want_inputs) {
            d_inputs.push(d);
        }
    }
    Gradients {
        params: grads,
        inputs: d_inputs,
        loss,
    }
}

/// Exact loss gradients by backpropagation through time. `masks`, when
/// given, holds one pre-scaled dropout mask per example.
pub fn gru_backward(
    params: &GruParameters,
    inputs: &[Sequence],
    targets: &[Vec<f64>],
    masks: Option<&[Vec<f64>]>,
) -> Result<Gradients> {
    check_batch(params, inputs, targets, masks)?;
    let all: Vec<usize> = (0..inputs.len()).collect();
    Ok(batch_gradients(params, inputs, targets, &all, masks, true))
}

/// Mean-squared error of the network without dropout.
pub fn gru_loss(params: &GruParameters, inputs: &[Sequence], targets: &[Vec<f64>]) -> Result<f64> {
    check_batch(params, inputs, targets, None)?;
    let scale = 1.0 / (inputs.len() * params.dims.output) as f64;
    Ok(inputs
        .iter()
        .zip(targets)
        .map(|(seq, y)| {
            let pass = forward_unchecked(params, seq, None);
            pass.output
                .iter()
                .zip(y)
                .map(|(o, t)| (o - t).powi(2))
                .sum::<f64>()
                * scale
        })
        .sum())
}

/// Signed `∂y_k/∂x` for one sequence, dropout off.
pub fn input_gradient(
    params: &GruParameters,
    sequence: &[Vec<f64>],
    output_index: usize,
) -> Result<Sequence> {
    params.check_shapes()?;
    check_sequence(params, sequence)?;
    if output_index >= params.dims.output {
        return Err(Error::InvalidArgument(format!(
            "output index {output_index} out of range for {} outputs",
            params.dims.output
        )));
    }
    let pass = forward_unchecked(params, sequence, None);
    let mut d_out = vec![0.0; params.dims.output];
    d_out[output_index] = 1.0;
    let mut scratch = GruParameters::zeros(params.dims);
    Ok(backprop(params, sequence, &pass, &d_out, &mut scratch, true).expect("inputs requested"))
}

/// `|∂y_k/∂x[t][c]|` as a steps × channels map. Rows are labelled
/// `step1 … stepN` (N most recent), columns `c0 …`; callers relabel.
pub fn saliency(
    params: &GruParameters,
    sequence: &[Vec<f64>],
    output_index: usize,
) -> Result<AttributionMap> {
    let grad = input_gradient(params, sequence, output_index)?;
    Ok(AttributionMap {
        kind: AttributionKind::Saliency,
        model: "GRU".into(),
        location: String::new(),
        horizon: 0,
        row_labels: (1..=grad.len()).map(|s| format!("step{s}")).collect(),
        column_labels: (0..params.dims.input).map(|c| format!("c{c}")).collect(),
        values: grad
            .into_iter()
            .map(|row| row.into_iter().map(f64::abs).collect())
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::from_hyper(&GruHyper::default(), 0)
    }
}

impl TrainConfig {
    pub fn from_hyper(h: &GruHyper, seed: u64) -> Self {
        TrainConfig {
            learning_rate: h.learning_rate,
            epochs: h.epochs,
            dropout_rate: h.dropout_rate,
            batch_size: h.batch_size,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "learning rate must be non-negative and batch size positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: GruParameters,
    /// Mean training loss of each epoch (with dropout active).
    pub loss_trace: Vec<f64>,
}

/// Plain minibatch SGD. Each epoch shuffles the examples, and every
/// minibatch draws fresh dropout masks for the final hidden state.
pub fn train_gru(
    params: &GruParameters,
    inputs: &[Sequence],
    targets: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_batch(params, inputs, targets, None)?;
    let mut rng = seed::rng(config.seed);
    let mut params = params.clone();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let keep_scale = 1.0 / (1.0 - config.dropout_rate);
    let hd = params.dims.hidden;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let masks: Option<Vec<Vec<f64>>> = (config.dropout_rate > 0.0).then(|| {
                chunk
                    .iter()
                    .map(|_| {
                        (0..hd)
                            .map(|_| {
                                if rng.random::<f64>() < config.dropout_rate {
                                    0.0
                                } else {
                                    keep_scale
                                }
                            })
                            .collect()
                    })
                    .collect()
            });
            let g = batch_gradients(&params, inputs, targets, chunk, masks.as_deref(), false);
            if !g.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += g.loss * chunk.len() as f64;
            if config.learning_rate != 0.0 {
                for (p, d) in params.tensors_mut().into_iter().zip(g.params.tensors()) {
                    p.iter_mut()
                        .zip(d)
                        .for_each(|(w, dw)| *w -= config.learning_rate * dw);
                }
            }
        }
        let epoch_loss = epoch_loss / inputs.len() as f64;
        if !epoch_loss.is_finite() || !params.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        loss_trace.push(epoch_loss);
    }
    Ok(TrainOutcome { params, loss_trace })
}

/// Prediction with dropout off.
pub fn predict_gru(params: &GruParameters, sequence: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(gru_forward(params, sequence, None)?.output)
}

#[cfg(test)]
mod tests;
