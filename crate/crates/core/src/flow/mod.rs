//! Rectified-flow training and sampling.
//!
//! Conventions: `x_t = (1 - σ_t) x0 + σ_t z`, velocity target `z - x0`,
//! loss `ω_t · mean((v̂ - (z - x0))²)`, explicit Euler sampling from σ = 1 to
//! σ = 0 on a uniform time grid.

pub mod adapter;
pub mod codec;
pub mod toy;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `(channels, height, width)` tensor of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl LatentTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(shape: (usize, usize, usize), value: f64) -> Self {
        Self {
            channels: shape.0,
            height: shape.1,
            width: shape.2,
            values: vec![value; shape.0 * shape.1 * shape.2],
        }
    }

    pub fn from_vec(shape: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let expected = shape.0 * shape.1 * shape.2;
        if values.len() != expected {
            return Err(Error::BufferLength {
                expected,
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("latent value at index {i}")));
        }
        Ok(Self {
            channels: shape.0,
            height: shape.1,
            width: shape.2,
            values,
        })
    }

    /// Standard normal draws.
    pub fn randn<R: Rng + ?Sized>(shape: (usize, usize, usize), rng: &mut R) -> Self {
        let n = shape.0 * shape.1 * shape.2;
        let values = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        Self {
            channels: shape.0,
            height: shape.1,
            width: shape.2,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max(libm::fabs(a - b)))
    }

    /// Stacks channel groups of equally sized tensors.
    pub fn concat_channels(parts: &[&LatentTensor]) -> Result<LatentTensor> {
        let first = parts.first().ok_or_else(|| Error::Config("no tensors to stack".into()))?;
        let mut values = Vec::new();
        let mut channels = 0;
        for p in parts {
            if (p.height, p.width) != (first.height, first.width) {
                return Err(shape_error(first, p));
            }
            channels += p.channels;
            values.extend_from_slice(&p.values);
        }
        Ok(LatentTensor {
            channels,
            height: first.height,
            width: first.width,
            values,
        })
    }

    fn zip_with(&self, other: &LatentTensor, f: impl Fn(f64, f64) -> f64) -> Result<LatentTensor> {
        if self.shape() != other.shape() {
            return Err(shape_error(self, other));
        }
        Ok(LatentTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

fn shape_error(a: &LatentTensor, b: &LatentTensor) -> Error {
    Error::Shape {
        left: format!("{:?}", a.shape()),
        right: format!("{:?}", b.shape()),
    }
}

/// Maps time `t ∈ [0, 1]` to a noise level `σ_t ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaCurve {
    /// σ_t = t
    Linear,
    /// σ_t = s·t / (1 + (s − 1)·t), the resolution shift used by large
    /// rectified-flow editors.
    Shifted { shift: f64 },
}

/// How training times are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSampling {
    Uniform,
    /// t = sigmoid(mean + std·n), n ~ N(0, 1)
    LogitNormal { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma: SigmaCurve,
    /// Constant ω_t.
    pub weight: f64,
    pub sampler_steps: usize,
    pub time_sampling: TimeSampling,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma: SigmaCurve::Linear,
            weight: 1.0,
            sampler_steps: 28,
            time_sampling: TimeSampling::Uniform,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if let SigmaCurve::Shifted { shift } = self.sigma {
            if !(shift.is_finite() && shift > 0.0) {
                return Err(Error::Config(format!("sigma shift must be positive, got {shift}")));
            }
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::Config(format!("loss weight must be positive, got {}", self.weight)));
        }
        if self.sampler_steps == 0 {
            return Err(Error::Config("sampler_steps must be at least 1".into()));
        }
        if let TimeSampling::LogitNormal { mean, std } = self.time_sampling {
            if !(mean.is_finite() && std.is_finite() && std > 0.0) {
                return Err(Error::Config("logit-normal time sampling needs finite mean, std > 0".into()));
            }
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match self.sigma {
            SigmaCurve::Linear => t,
            SigmaCurve::Shifted { shift } => shift * t / (1.0 + (shift - 1.0) * t),
        }
    }

    pub fn weight(&self, _t: f64) -> f64 {
        self.weight
    }

    pub fn sample_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.time_sampling {
            TimeSampling::Uniform => rng.random::<f64>(),
            TimeSampling::LogitNormal { mean, std } => {
                let n: f64 = StandardNormal.sample(rng);
                1.0 / (1.0 + libm::exp(-(mean + std * n)))
            }
        }
    }
}

/// `(1 − σ)·x0 + σ·z`.
pub fn interpolate(x0: &LatentTensor, z: &LatentTensor, sigma: f64) -> Result<LatentTensor> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::OutOfRange(format!("sigma {sigma} not in [0, 1]")));
    }
    x0.zip_with(z, |a, b| (1.0 - sigma) * a + sigma * b)
}

/// `z − x0`.
pub fn velocity_target(x0: &LatentTensor, z: &LatentTensor) -> Result<LatentTensor> {
    x0.zip_with(z, |a, b| b - a)
}

/// `ω · mean((pred − target)²)`.
pub fn fm_loss(pred: &LatentTensor, target: &LatentTensor, weight: f64) -> Result<f64> {
    fm_loss_and_grad(pred, target, weight).map(|(l, _)| l)
}

/// Loss together with its gradient with respect to `pred`.
pub fn fm_loss_and_grad(pred: &LatentTensor, target: &LatentTensor, weight: f64) -> Result<(f64, LatentTensor)> {
    if !(weight.is_finite() && weight > 0.0) {
        return Err(Error::OutOfRange(format!("loss weight {weight} must be positive")));
    }
    let diff = pred.zip_with(target, |a, b| a - b)?;
    let n = diff.len().max(1) as f64;
    let loss = weight * diff.values.iter().map(|d| d * d).sum::<f64>() / n;
    let mut grad = diff;
    grad.values.iter_mut().for_each(|d| *d *= 2.0 * weight / n);
    Ok((loss, grad))
}

/// Conditioning passed to a denoiser: an encoded canvas plus the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub latent: LatentTensor,
    pub prompt: String,
}

/// A velocity predictor `v̂(x_t, t, c)`.
pub trait DenoiserBackend {
    fn predict(&self, x_t: &LatentTensor, t: f64, condition: &Condition) -> Result<LatentTensor>;
}

/// Loss callback handed to [`TrainableBackend::value_and_grad`]: maps a
/// prediction to `(loss, ∂loss/∂prediction)`.
pub type LossFn<'a> = dyn FnMut(&LatentTensor) -> Result<(f64, LatentTensor)> + 'a;

/// A denoiser whose parameters live in one flat vector and that can
/// back-propagate through its prediction.
pub trait TrainableBackend: DenoiserBackend {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Gradient of `⟨grad_out, predict(x_t, t, c)⟩` with respect to the
    /// parameters.
    fn backward(&self, x_t: &LatentTensor, t: f64, condition: &Condition, grad_out: &LatentTensor) -> Result<Vec<f64>>;

    /// Runs `loss` on the prediction and returns its value and parameter
    /// gradient.
    fn value_and_grad(&self, x_t: &LatentTensor, t: f64, condition: &Condition, loss: &mut LossFn<'_>) -> Result<(f64, Vec<f64>)> {
        let pred = self.predict(x_t, t, condition)?;
        let (value, grad_out) = loss(&pred)?;
        Ok((value, self.backward(x_t, t, condition, &grad_out)?))
    }
}

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: Some(1.0),
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn num_params(&self) -> usize {
        self.m.len()
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape {
                left: format!("{} optimizer slots", self.m.len()),
                right: format!("{} params / {} grads", params.len(), grad.len()),
            });
        }
        let norm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        let clip = match self.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for i in 0..params.len() {
            let g = grad[i] * clip;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
        }
        Ok(())
    }
}

/// One supervised example: a condition and the clean target latent `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub condition: Condition,
    pub target: LatentTensor,
}

/// An example after drawing its time and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedExample {
    pub t: f64,
    pub weight: f64,
    pub x_t: LatentTensor,
    pub velocity: LatentTensor,
}

/// Draws `t` and `z` for every example, in order, from `rng`.
pub fn draw_noise<R: Rng + ?Sized>(batch: &[TrainExample], schedule: &NoiseSchedule, rng: &mut R) -> Result<Vec<NoisedExample>> {
    batch
        .iter()
        .map(|ex| {
            let t = schedule.sample_time(rng);
            let sigma = schedule.sigma(t);
            let z = LatentTensor::randn(ex.target.shape(), rng);
            Ok(NoisedExample {
                t,
                weight: schedule.weight(t),
                x_t: interpolate(&ex.target, &z, sigma)?,
                velocity: velocity_target(&ex.target, &z)?,
            })
        })
        .collect()
}

/// Loss and parameter gradient for one noised example.
pub fn example_loss_grad<B: TrainableBackend + ?Sized>(backend: &B, example: &TrainExample, noised: &NoisedExample) -> Result<(f64, Vec<f64>)> {
    let mut loss = |pred: &LatentTensor| fm_loss_and_grad(pred, &noised.velocity, noised.weight);
    backend.value_and_grad(&noised.x_t, noised.t, &example.condition, &mut loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub times: Vec<f64>,
}

/// Averages per-example results, checks finiteness and applies one update.
pub fn apply_batch<B: TrainableBackend + ?Sized>(
    backend: &mut B,
    optimizer: &mut AdamState,
    per_example: Vec<(f64, Vec<f64>)>,
    times: Vec<f64>,
    step: u64,
) -> Result<StepOutcome> {
    let n = per_example.len();
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let mut grad = vec![0.0; backend.params().len()];
    let mut loss = 0.0;
    for (l, g) in &per_example {
        loss += l;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    loss /= n as f64;
    grad.iter_mut().for_each(|g| *g /= n as f64);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("training loss {loss} at step {step}, t = {times:?}")));
    }
    optimizer.update(backend.params_mut(), &grad)?;
    Ok(StepOutcome { loss, times })
}

/// One gradient step on `batch`: draw `t` and `z` per example, form `x_t`,
/// regress the velocity and update the parameters.
pub fn train_step<B: TrainableBackend + ?Sized, R: Rng + ?Sized>(
    backend: &mut B,
    optimizer: &mut AdamState,
    batch: &[TrainExample],
    schedule: &NoiseSchedule,
    rng: &mut R,
    step: u64,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let noised = draw_noise(batch, schedule, rng)?;
    let times = noised.iter().map(|n| n.t).collect();
    let per_example = batch
        .iter()
        .zip(&noised)
        .map(|(ex, nz)| example_loss_grad(&*backend, ex, nz))
        .collect::<Result<Vec<_>>>()?;
    apply_batch(backend, optimizer, per_example, times, step)
}

/// Euler-integrates the predicted velocity from pure noise (σ = 1) down to
/// σ = 0 over `schedule.sampler_steps` uniform time steps. The initial noise
/// is drawn from `seed`.
pub fn sample<B: DenoiserBackend + ?Sized>(
    backend: &B,
    condition: &Condition,
    shape: (usize, usize, usize),
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<LatentTensor> {
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = LatentTensor::randn(shape, &mut rng);
    let n = schedule.sampler_steps;
    for i in 0..n {
        let t_cur = 1.0 - i as f64 / n as f64;
        let t_next = 1.0 - (i + 1) as f64 / n as f64;
        let dsigma = schedule.sigma(t_next) - schedule.sigma(t_cur);
        let v = backend
            .predict(&x, t_cur, condition)
            .map_err(|e| Error::Backend(format!("sampling step {i}: {e}")))?;
        if v.shape() != x.shape() {
            return Err(Error::BackendContract(format!(
                "sampling step {i}: velocity shape {:?} != latent shape {:?}",
                v.shape(),
                x.shape()
            )));
        }
        for (xi, vi) in x.values.iter_mut().zip(&v.values) {
            *xi += dsigma * vi;
        }
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("latent after sampling step {i}")));
        }
    }
    Ok(x)
}
