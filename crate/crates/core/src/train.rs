//! Training objectives and loops: L1, the least-squares and JS-divergence
//! adversarial losses, Adam, the conditional-GAN loop (one discriminator
//! step then one generator step per sample, batch size 1, seeded random
//! crops) and reconstruction pre-training.
//!
//! Images live in [0, 1] on disk and in metrics; networks see [-1, 1]
//! through [`to_net`] / [`from_net`] to match their tanh output range.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, DataError};
use crate::derive_seed;
use crate::nn::{self, ModuleGraph, NnError, ParamSet};
use crate::tensor::{Activation, Tape, Tensor, TensorError, TensorId};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, iteration {iteration}: {context}")]
    Diverged { epoch: usize, iteration: usize, context: String },
    #[error("malformed loss trace: {0}")]
    BadTrace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Jsgan,
    Lsgan,
    L1Only,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Jsgan => write!(f, "jsgan"),
            LossKind::Lsgan => write!(f, "lsgan"),
            LossKind::L1Only => write!(f, "l1_only"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    /// Weight of the L1 complement in the generator objective.
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub crop_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Lsgan,
            lambda: 100.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            weight_decay: 0.0,
            batch_size: 1,
            crop_size: 32,
            epochs: 30,
            seed: 0,
            pretrain_epochs: 0,
        }
    }
}

const SALT_ORDER: u64 = 0x10;
const SALT_CROP: u64 = 0x11;

/// [0,1] image -> [-1,1] network domain.
pub fn to_net(img: &Tensor) -> Tensor {
    img.map(|v| 2.0 * v - 1.0)
}

/// [-1,1] network output -> [0,1] image domain.
pub fn from_net(img: &Tensor) -> Tensor {
    img.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
}

// ── losses (tape compositions) ──────────────────────────────────────

/// Mean absolute deviation over all elements.
pub fn l1_loss(tape: &mut Tape, yhat: TensorId, y: TensorId) -> Result<TensorId, TensorError> {
    let diff = tape.sub(yhat, y)?;
    let a = tape.abs(diff);
    Ok(tape.mean(a))
}

/// Mean squared deviation over all elements.
pub fn mse_loss(tape: &mut Tape, yhat: TensorId, y: TensorId) -> Result<TensorId, TensorError> {
    let diff = tape.sub(yhat, y)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

fn mean_sq_dev(tape: &mut Tape, scores: TensorId, target: f64) -> Result<TensorId, TensorError> {
    let shifted = tape.add_scalar(scores, -target);
    let sq = tape.mul(shifted, shifted)?;
    Ok(tape.mean(sq))
}

/// Least-squares generator loss: E[(D(x, G(x)) - 1)^2] + lambda * L1.
pub fn lsgan_g_loss(
    tape: &mut Tape,
    d_fake_scores: TensorId,
    l1_term: Option<TensorId>,
    lambda: f64,
) -> Result<TensorId, TensorError> {
    let adv = mean_sq_dev(tape, d_fake_scores, 1.0)?;
    match l1_term {
        Some(l1) => {
            let weighted = tape.mul_scalar(l1, lambda);
            tape.add(adv, weighted)
        }
        None => Ok(adv),
    }
}

/// Least-squares discriminator loss:
/// 0.5 E[(D(x,y) - 1)^2] + 0.5 E[D(x, G(x))^2].
pub fn lsgan_d_loss(
    tape: &mut Tape,
    d_real_scores: TensorId,
    d_fake_scores: TensorId,
) -> Result<TensorId, TensorError> {
    let real = mean_sq_dev(tape, d_real_scores, 1.0)?;
    let fake = mean_sq_dev(tape, d_fake_scores, 0.0)?;
    let sum = tape.add(real, fake)?;
    Ok(tape.mul_scalar(sum, 0.5))
}

/// Numerical floor inside adversarial logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// JS-divergence GAN losses on sigmoid scores in (0, 1):
/// d = -E[log d_real] - E[log(1 - d_fake)], g (non-saturating) =
/// -E[log d_fake]; the caller adds the lambda * L1 complement.
pub fn jsgan_losses(
    tape: &mut Tape,
    d_real: TensorId,
    d_fake: TensorId,
) -> Result<(TensorId, TensorId), TensorError> {
    let log_real = tape.log_clamped(d_real, LOG_EPS);
    let m_log_real = tape.mean(log_real);
    let neg_fake = tape.mul_scalar(d_fake, -1.0);
    let one_minus_fake = tape.add_scalar(neg_fake, 1.0);
    let log_omf = tape.log_clamped(one_minus_fake, LOG_EPS);
    let m_log_omf = tape.mean(log_omf);
    let d_sum = tape.add(m_log_real, m_log_omf)?;
    let d_loss = tape.mul_scalar(d_sum, -1.0);

    let log_fake = tape.log_clamped(d_fake, LOG_EPS);
    let m_log_fake = tape.mean(log_fake);
    let g_loss = tape.mul_scalar(m_log_fake, -1.0);
    Ok((g_loss, d_loss))
}

// ── optimizer ───────────────────────────────────────────────────────

pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction; eps = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            weight_decay: cfg.weight_decay,
            m: params.entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.entries.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            t: 0,
        }
    }

    /// One update; `grads[i]` pairs with `params.entries[i]` and may be
    /// absent for parameters untouched by the loss.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, tensor)) in params.entries.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = tensor.data_mut();
            for j in 0..data.len() {
                let grad = g[j] + self.weight_decay * data[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * grad;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

// ── traces ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1: f64,
    pub adv: f64,
}

/// Per-epoch average losses of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub records: Vec<EpochRecord>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,g_loss,d_loss,l1,adv\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.g_loss, r.d_loss, r.l1, r.adv));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TrainError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| TrainError::BadTrace("empty file".into()))?;
        if header.trim() != "epoch,g_loss,d_loss,l1,adv" {
            return Err(TrainError::BadTrace(format!("unexpected header {header:?}")));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(TrainError::BadTrace(format!("line {}: {} fields", i + 2, fields.len())));
            }
            let parse = |s: &str| -> Result<f64, TrainError> {
                s.trim().parse().map_err(|_| TrainError::BadTrace(format!("bad number {s:?}")))
            };
            records.push(EpochRecord {
                epoch: fields[0]
                    .trim()
                    .parse()
                    .map_err(|_| TrainError::BadTrace(format!("bad epoch {:?}", fields[0])))?,
                g_loss: parse(fields[1])?,
                d_loss: parse(fields[2])?,
                l1: parse(fields[3])?,
                adv: parse(fields[4])?,
            });
        }
        Ok(LossTrace { records })
    }
}

// ── training loops ──────────────────────────────────────────────────

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn collect_grads(tape: &Tape, ids: &[TensorId]) -> Vec<Option<Vec<f64>>> {
    ids.iter().map(|&id| tape.grad(id).map(|g| g.to_vec())).collect()
}

fn finite_or_diverged(v: f64, epoch: usize, iteration: usize, context: &str) -> Result<f64, TrainError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::Diverged {
            epoch,
            iteration,
            context: format!("{context} = {v}"),
        })
    }
}

/// Alternating conditional-GAN training: per sample one discriminator step
/// on (real, detached fake), then one generator step against the updated
/// discriminator. `LossKind::L1Only` skips the discriminator entirely.
/// Deterministic given (config, dataset, seed).
pub fn train_gan(
    gen_graph: &ModuleGraph,
    mut gen_params: ParamSet,
    disc_graph: &ModuleGraph,
    mut disc_params: ParamSet,
    pairs: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
) -> Result<(ParamSet, ParamSet, LossTrace), TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut adam_g = Adam::new(&gen_params, cfg);
    let mut adam_d = Adam::new(&disc_params, cfg);
    let mut trace = LossTrace::default();
    let mut counter = 0u64;

    for epoch in 0..cfg.epochs {
        let order = shuffled_indices(pairs.len(), derive_seed(cfg.seed, SALT_ORDER, epoch as u64));
        let mut sums = EpochRecord { epoch, g_loss: 0.0, d_loss: 0.0, l1: 0.0, adv: 0.0 };
        for (iteration, &idx) in order.iter().enumerate() {
            let (cx, cy) =
                data::random_crop(&pairs[idx], cfg.crop_size, derive_seed(cfg.seed, SALT_CROP, counter))?;
            counter += 1;
            let mut tape = Tape::new();
            let x = tape.constant(to_net(&cx));
            let y = tape.constant(to_net(&cy));
            let g_pass = nn::forward(gen_graph, &gen_params, &mut tape, x, true)?;
            let fake = g_pass.output;

            match cfg.loss_kind {
                LossKind::L1Only => {
                    let l1 = l1_loss(&mut tape, fake, y)?;
                    tape.backward(l1)?;
                    let grads = collect_grads(&tape, &g_pass.param_ids);
                    adam_g.step(&mut gen_params, &grads);
                    let l1v = finite_or_diverged(tape.value(l1).item(), epoch, iteration, "l1")?;
                    sums.g_loss += l1v;
                    sums.l1 += l1v;
                }
                LossKind::Lsgan | LossKind::Jsgan => {
                    // Discriminator step on the detached fake.
                    let fake_det = tape.detach(fake);
                    let d_ids = nn::bind_params(&disc_params, &mut tape, true);
                    let real_pair = tape.concat_channels(&[x, y])?;
                    let fake_pair = tape.concat_channels(&[x, fake_det])?;
                    let s_real =
                        nn::forward_bound(disc_graph, &disc_params, &mut tape, &d_ids, real_pair)?.output;
                    let s_fake =
                        nn::forward_bound(disc_graph, &disc_params, &mut tape, &d_ids, fake_pair)?.output;
                    let d_loss = match cfg.loss_kind {
                        LossKind::Lsgan => lsgan_d_loss(&mut tape, s_real, s_fake)?,
                        LossKind::Jsgan => {
                            let p_real = tape.activation(s_real, Activation::Sigmoid);
                            let p_fake = tape.activation(s_fake, Activation::Sigmoid);
                            jsgan_losses(&mut tape, p_real, p_fake)?.1
                        }
                        LossKind::L1Only => unreachable!(),
                    };
                    tape.backward(d_loss)?;
                    let d_grads = collect_grads(&tape, &d_ids);
                    adam_d.step(&mut disc_params, &d_grads);
                    let d_val = finite_or_diverged(tape.value(d_loss).item(), epoch, iteration, "d_loss")?;

                    // Generator step against the updated discriminator.
                    tape.zero_grads();
                    let d_ids_new = nn::bind_params(&disc_params, &mut tape, false);
                    let fake_pair_g = tape.concat_channels(&[x, fake])?;
                    let s_fake_g =
                        nn::forward_bound(disc_graph, &disc_params, &mut tape, &d_ids_new, fake_pair_g)?.output;
                    let l1 = l1_loss(&mut tape, fake, y)?;
                    let (adv, g_loss) = match cfg.loss_kind {
                        LossKind::Lsgan => {
                            let adv = mean_sq_dev(&mut tape, s_fake_g, 1.0)?;
                            let weighted = tape.mul_scalar(l1, cfg.lambda);
                            (adv, tape.add(adv, weighted)?)
                        }
                        LossKind::Jsgan => {
                            let p_fake = tape.activation(s_fake_g, Activation::Sigmoid);
                            let log_fake = tape.log_clamped(p_fake, LOG_EPS);
                            let m = tape.mean(log_fake);
                            let adv = tape.mul_scalar(m, -1.0);
                            let weighted = tape.mul_scalar(l1, cfg.lambda);
                            (adv, tape.add(adv, weighted)?)
                        }
                        LossKind::L1Only => unreachable!(),
                    };
                    tape.backward(g_loss)?;
                    let g_grads = collect_grads(&tape, &g_pass.param_ids);
                    adam_g.step(&mut gen_params, &g_grads);

                    let g_val = finite_or_diverged(tape.value(g_loss).item(), epoch, iteration, "g_loss")?;
                    sums.g_loss += g_val;
                    sums.d_loss += d_val;
                    sums.l1 += tape.value(l1).item();
                    sums.adv += tape.value(adv).item();
                }
            }
        }
        let n = pairs.len() as f64;
        trace.records.push(EpochRecord {
            epoch,
            g_loss: sums.g_loss / n,
            d_loss: sums.d_loss / n,
            l1: sums.l1 / n,
            adv: sums.adv / n,
        });
    }
    Ok((gen_params, disc_params, trace))
}

/// Reconstruction warm-up: trains the generator as an autoencoder with MSE
/// between its output and the clean input. Returns the trained parameters
/// and the per-epoch loss curve.
pub fn pretrain_reconstruction(
    gen_graph: &ModuleGraph,
    mut gen_params: ParamSet,
    images: &[Tensor],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<(ParamSet, Vec<f64>), TrainError> {
    if images.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut adam = Adam::new(&gen_params, cfg);
    let mut curve = Vec::with_capacity(epochs);
    let mut counter = 0u64;
    for epoch in 0..epochs {
        let order = shuffled_indices(images.len(), derive_seed(cfg.seed, SALT_ORDER, epoch as u64));
        let mut sum = 0.0;
        for (iteration, &idx) in order.iter().enumerate() {
            let pair = (images[idx].clone(), images[idx].clone());
            let (crop, _) =
                data::random_crop(&pair, cfg.crop_size, derive_seed(cfg.seed, SALT_CROP, counter))?;
            counter += 1;
            let mut tape = Tape::new();
            let y = tape.constant(to_net(&crop));
            let pass = nn::forward(gen_graph, &gen_params, &mut tape, y, true)?;
            let loss = mse_loss(&mut tape, pass.output, y)?;
            tape.backward(loss)?;
            let grads = collect_grads(&tape, &pass.param_ids);
            adam.step(&mut gen_params, &grads);
            sum += finite_or_diverged(tape.value(loss).item(), epoch, iteration, "mse")?;
        }
        curve.push(sum / images.len() as f64);
    }
    Ok((gen_params, curve))
}

/// Run the generator on one [0,1] image, returning the restored [0,1]
/// image.
pub fn infer(gen_graph: &ModuleGraph, params: &ParamSet, x: &Tensor) -> Result<Tensor, TrainError> {
    let mut tape = Tape::new();
    let x_id = tape.constant(to_net(x));
    let pass = nn::forward(gen_graph, params, &mut tape, x_id, false)?;
    Ok(from_net(tape.value(pass.output)))
}
