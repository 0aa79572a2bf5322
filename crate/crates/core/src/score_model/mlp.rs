use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::rng::{standard_normal, stream, StreamPurpose};
use crate::schedule::{perturb, NoiseSchedule};
use crate::score_model::ScoreModel;

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_EMBED_DIM: usize = 16;

/// Highest angular frequency of the sinusoidal time embedding.
const MAX_FREQ: f64 = 64.0;

fn silu(z: f64) -> f64 {
    z / (1.0 + libm::exp(-z))
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + libm::exp(-z));
    s * (1.0 + z * (1.0 - s))
}

/// Fully connected noise predictor `eps_θ(x, t)`.
///
/// The input is `x` concatenated with a sinusoidal embedding of the
/// timestep's position in the base schedule; hidden layers use SiLU and the
/// output layer is affine. Parameters are stored flat, layer by layer, each
/// layer as a row-major weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEpsModel {
    sizes: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
    steps_trained: usize,
    loss_history: Vec<f64>,
}

/// Intermediate values kept by a forward pass for the backward pass.
struct Tape {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl MlpEpsModel {
    /// Two hidden layers of width `hidden`.
    pub fn new(dim: usize, hidden: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        Self::with_sizes(alloc::vec![dim + embed_dim, hidden, hidden, dim], seed)
    }

    /// Arbitrary layer sizes `[dim + embed, hidden.., dim]`, LeCun-normal
    /// weights drawn from `seed`, zero biases.
    pub fn with_sizes(sizes: Vec<usize>, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, 0, StreamPurpose::Data);
        let params = Self::check_sizes(&sizes)?;
        let mut model = MlpEpsModel { sizes, params: alloc::vec![0.0; params], seed, steps_trained: 0, loss_history: Vec::new() };
        let mut offset = 0;
        let layers = model.sizes.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (model.sizes[l], model.sizes[l + 1]);
            // Small output layer so the untrained model predicts near-zero noise.
            let gain = if l + 1 == layers { 0.1 } else { 1.0 };
            let sd = gain / libm::sqrt(fan_in as f64);
            for w in &mut model.params[offset..offset + fan_in * fan_out] {
                let z: f64 = rng.sample(StandardNormal);
                *w = sd * z;
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(model)
    }

    /// Rebuilds a model from stored parts (used by checkpoint loading).
    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>, seed: u64, steps_trained: usize) -> Result<Self> {
        let count = Self::check_sizes(&sizes)?;
        check_dim(count, params.len())?;
        Ok(MlpEpsModel { sizes, params, seed, steps_trained, loss_history: Vec::new() })
    }

    fn check_sizes(sizes: &[usize]) -> Result<usize> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config("MLP needs at least two non-empty layers".into()));
        }
        let dim = sizes[sizes.len() - 1];
        let embed = sizes[0].saturating_sub(dim);
        if sizes[0] <= dim || !embed.is_multiple_of(2) {
            return Err(Error::Config(alloc::format!(
                "MLP input width {} must be the data dimension {dim} plus an even, non-zero embedding width",
                sizes[0]
            )));
        }
        Ok(sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps_trained(&self) -> usize {
        self.steps_trained
    }

    /// Mean batch loss of every training step run on this instance.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn embed_dim(&self) -> usize {
        self.sizes[0] - self.dim()
    }

    fn embed(&self, tau: f64, out: &mut Vec<f64>) {
        let half = self.embed_dim() / 2;
        let freq = |j: usize| {
            if half == 1 {
                1.0
            } else {
                libm::exp(libm::log(MAX_FREQ) * j as f64 / (half - 1) as f64)
            }
        };
        out.extend((0..half).map(|j| libm::sin(tau * freq(j))));
        out.extend((0..half).map(|j| libm::cos(tau * freq(j))));
    }

    fn forward(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Tape {
        let layers = self.sizes.len() - 1;
        let mut input = Vec::with_capacity(self.sizes[0]);
        input.extend_from_slice(x);
        self.embed(sched.time_feature(t), &mut input);
        let mut tape = Tape { inputs: Vec::with_capacity(layers), pre: Vec::with_capacity(layers - 1), output: Vec::new() };
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let z: Vec<f64> =
                (0..n_out).map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(&input).map(|(wi, xi)| wi * xi).sum::<f64>()).collect();
            tape.inputs.push(input);
            if l + 1 == layers {
                tape.output = z;
                break;
            }
            input = z.iter().map(|&v| silu(v)).collect();
            tape.pre.push(z);
        }
        tape
    }

    /// Pulls `grad_out` back through the network. Returns the gradient with
    /// respect to the data part of the input; when `param_grad` is given the
    /// parameter gradient is accumulated into it.
    fn backward(&self, tape: &Tape, grad_out: &[f64], mut param_grad: Option<&mut [f64]>) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut g = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                for (gi, z) in g.iter_mut().zip(&tape.pre[l]) {
                    *gi *= silu_grad(*z);
                }
            }
            let off = offsets[l];
            let input = &tape.inputs[l];
            if let Some(pg) = param_grad.as_deref_mut() {
                for o in 0..n_out {
                    let row = &mut pg[off + o * n_in..off + (o + 1) * n_in];
                    for (r, xi) in row.iter_mut().zip(input) {
                        *r += g[o] * xi;
                    }
                    pg[off + n_in * n_out + o] += g[o];
                }
            }
            if l == 0 && param_grad.is_none() {
                // Only the data part of the first layer's input is needed.
                let dim = self.dim();
                let w = &self.params[off..off + n_in * n_out];
                return (0..dim).map(|i| (0..n_out).map(|o| w[o * n_in + i] * g[o]).sum()).collect();
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut next = alloc::vec![0.0; n_in];
            for o in 0..n_out {
                for (nx, wi) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *nx += wi * g[o];
                }
            }
            g = next;
        }
        g.truncate(self.dim());
        g
    }
}

impl ScoreModel for MlpEpsModel {
    fn dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    fn eps(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Vec<f64> {
        self.forward(x, t, sched).output
    }

    fn eps_vjp(&self, x: &[f64], t: usize, sched: &NoiseSchedule, cotangent: &[f64]) -> Vec<f64> {
        let tape = self.forward(x, t, sched);
        self.backward(&tape, cotangent, None)
    }
}

/// Adam settings for [`train_dsm`]. The learning rate follows a cosine
/// decay from `learning_rate` to `learning_rate * final_lr_fraction`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 3000,
            batch_size: 128,
            learning_rate: 2e-3,
            final_lr_fraction: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// Fits `model` by denoising score matching: minimises
/// `E_t E_{x0, ε} ||ε - eps_θ(sqrt(ᾱ_t)·x0 + sqrt(1-ᾱ_t)·ε, t)||² / D` with
/// `t` uniform on `1..=T` and `x0` drawn uniformly from `data`. Appends one
/// mean batch loss per step to the model's loss history and returns the
/// losses of this call.
pub fn train_dsm<R: Rng + ?Sized>(
    model: &mut MlpEpsModel,
    data: &[Vec<f64>],
    sched: &NoiseSchedule,
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Config("training data is empty".into()));
    }
    if opts.batch_size == 0 || !(opts.learning_rate.is_finite() && opts.learning_rate > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    let dim = model.dim();
    for x in data {
        check_dim(dim, x.len())?;
    }
    let n_params = model.params.len();
    let mut m = alloc::vec![0.0; n_params];
    let mut v = alloc::vec![0.0; n_params];
    let mut grad = alloc::vec![0.0; n_params];
    let mut losses = Vec::with_capacity(opts.steps);
    let scale = 1.0 / (opts.batch_size * dim) as f64;

    for step in 0..opts.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..opts.batch_size {
            let x0 = &data[rng.random_range(0..data.len())];
            let t = rng.random_range(1..=sched.steps());
            let eps = standard_normal(rng, dim);
            let xt = perturb(x0, t, &eps, sched)?;
            let tape = model.forward(&xt, t, sched);
            let resid: Vec<f64> = tape.output.iter().zip(&eps).map(|(p, e)| p - e).collect();
            loss += resid.iter().map(|r| r * r).sum::<f64>() * scale;
            let g_out: Vec<f64> = resid.iter().map(|r| 2.0 * r * scale).collect();
            model.backward(&tape, &g_out, Some(&mut grad));
        }
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        let progress = step as f64 / opts.steps.max(1) as f64;
        let decay = opts.final_lr_fraction + (1.0 - opts.final_lr_fraction) * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress));
        let lr = opts.learning_rate * decay;
        let k = (step + 1) as f64;
        let bc1 = 1.0 - libm::pow(opts.beta1, k);
        let bc2 = 1.0 - libm::pow(opts.beta2, k);
        for i in 0..n_params {
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * grad[i];
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * grad[i] * grad[i];
            model.params[i] -= lr * (m[i] / bc1) / (libm::sqrt(v[i] / bc2) + opts.adam_eps);
        }
        losses.push(loss);
    }
    model.steps_trained += opts.steps;
    model.loss_history.extend_from_slice(&losses);
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;
    use alloc::vec;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(ScheduleKind::linear_default(), 100).unwrap()
    }

    #[test]
    fn shapes_and_param_count() {
        let m = MlpEpsModel::new(2, 8, 4, 1).unwrap();
        assert_eq!(m.sizes(), &[6, 8, 8, 2]);
        assert_eq!(m.params().len(), 6 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2);
        assert_eq!(m.embed_dim(), 4);
        assert!(MlpEpsModel::with_sizes(vec![3, 4, 2], 0).is_err());
        assert!(MlpEpsModel::with_sizes(vec![2, 4, 2], 0).is_err());
        assert!(MlpEpsModel::from_parts(vec![6, 2], vec![0.0; 3], 0, 0).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let a = MlpEpsModel::new(2, 16, 4, 9).unwrap();
        let b = MlpEpsModel::new(2, 16, 4, 9).unwrap();
        let s = sched();
        assert_eq!(a.eps(&[0.3, -0.2], 40, &s), b.eps(&[0.3, -0.2], 40, &s));
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut model = MlpEpsModel::new(2, 6, 4, 3).unwrap();
        let s = sched();
        let x = [0.4, -0.9];
        let c = [1.3, -0.6];
        let tape = model.forward(&x, 17, &s);
        let mut grad = vec![0.0; model.params.len()];
        model.backward(&tape, &c, Some(&mut grad));
        let h = 1e-6;
        for i in (0..model.params.len()).step_by(7) {
            let orig = model.params[i];
            model.params[i] = orig + h;
            let up: f64 = model.eps(&x, 17, &s).iter().zip(&c).map(|(e, ci)| e * ci).sum();
            model.params[i] = orig - h;
            let down: f64 = model.eps(&x, 17, &s).iter().zip(&c).map(|(e, ci)| e * ci).sum();
            model.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((grad[i] - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn zero_steps_leave_parameters_unchanged() {
        let mut model = MlpEpsModel::new(2, 8, 4, 3).unwrap();
        let before = model.params().to_vec();
        let opts = TrainOptions { steps: 0, ..TrainOptions::default() };
        let data = vec![vec![0.0, 1.0]];
        let losses = train_dsm(&mut model, &data, &sched(), &opts, &mut stream(0, 0, StreamPurpose::Aux)).unwrap();
        assert!(losses.is_empty());
        assert_eq!(model.params(), &before[..]);
    }

    #[test]
    fn divergence_is_reported() {
        let mut model = MlpEpsModel::new(1, 4, 2, 3).unwrap();
        let data = vec![vec![f64::NAN]];
        let err = train_dsm(&mut model, &data, &sched(), &TrainOptions::default(), &mut stream(0, 0, StreamPurpose::Aux));
        assert_eq!(err, Err(Error::TrainingDiverged { step: 0 }));
    }

    #[test]
    fn empty_data_rejected() {
        let mut model = MlpEpsModel::new(1, 4, 2, 3).unwrap();
        let err = train_dsm(&mut model, &[], &sched(), &TrainOptions::default(), &mut stream(0, 0, StreamPurpose::Aux));
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
