//! Variational dynamics encoder: an MLP encoder to a low-dimensional latent,
//! a fixed-variance noise layer and a mirrored decoder, trained to
//! reconstruct the frame one lag time ahead while maximizing the lagged
//! autocorrelation of the latent.

mod adam;
mod mlp;

pub use adam::{Adam, AdamParams};
pub use mlp::{sigmoid, Activation, Layer, Mlp, Tape};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

pub const DEFAULT_NOISE: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Input width, hidden widths, latent width.
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: &[usize], activation: Activation) -> Self {
        Self {
            widths: widths.to_vec(),
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Spec(
                "encoder needs an input width, at least one hidden layer and a latent width".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::Spec("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn latent_width(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "TrainConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    fn default_batch() -> usize {
        200
    }

    pub fn new(epochs: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate,
            batch_size: Self::default_batch(),
            adam: AdamParams::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.learning_rate > 0.0) || self.batch_size < 2 {
            return Err(Error::Spec(format!(
                "training needs epochs >= 1, lr > 0 and batch size >= 2 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub recon: f64,
    pub autocorr: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Latent noise standard deviation used during training only.
    pub noise: f64,
    pub lag: usize,
    pub alpha: f64,
    pub seed: u64,
    pub report: TrainReport,
}

impl VdeModel {
    /// Randomly initialized model with a decoder mirroring `spec`.
    pub fn init(spec: &MlpSpec, lag: usize, noise: f64, alpha: f64, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::new_random(&spec.widths, spec.activation, &mut rng);
        let rev: Vec<usize> = spec.widths.iter().rev().copied().collect();
        let decoder = Mlp::new_random(&rev, spec.activation, &mut rng);
        Ok(Self {
            encoder,
            decoder,
            noise,
            lag,
            alpha,
            seed,
            report: TrainReport::default(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.encoder.input_width()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::Shape {
                context: "encoder input",
                expected: self.input_width(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Deterministic latent (no noise).
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.encoder.forward(x))
    }

    /// First latent coordinate.
    pub fn encode_scalar(&self, x: &[f64]) -> Result<f64> {
        Ok(self.encode(x)?[0])
    }

    /// `dz/dx` of the first latent coordinate.
    pub fn encoder_input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.encoder.input_gradient(x, 0))
    }

    pub fn encode_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        x.rows().map(|r| self.encode_scalar(r)).collect()
    }
}

/// Index of a lagged pair: (trajectory, frame t); the partner is `t + lag`.
pub type PairIndex = (usize, usize);

/// All `(x_t, x_{t+lag})` pairs; never crosses trajectory boundaries.
pub fn make_pairs(data: &[&FeatureMatrix], lag: usize) -> Result<Vec<PairIndex>> {
    let shortest = data.iter().map(|m| m.n_rows()).min().unwrap_or(0);
    if data.is_empty() || shortest <= lag {
        return Err(Error::Lag {
            lag,
            frames: shortest,
        });
    }
    Ok(data
        .iter()
        .enumerate()
        .flat_map(|(k, m)| (0..m.n_rows() - lag).map(move |t| (k, t)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub recon: f64,
    pub autocorr: f64,
    /// Latent variance vanished over the batch; `autocorr` was set to 0.
    pub degenerate: bool,
}

/// Pearson correlation and its gradient w.r.t. both series.
fn pearson(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>, bool) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let ac: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let bc: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let saa: f64 = ac.iter().map(|v| v * v).sum();
    let sbb: f64 = bc.iter().map(|v| v * v).sum();
    let sab: f64 = ac.iter().zip(&bc).map(|(x, y)| x * y).sum();
    if !(saa > 1e-24 && sbb > 1e-24) {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()], true);
    }
    let denom = (saa * sbb).sqrt();
    let rho = (sab / denom).clamp(-1.0, 1.0);
    let da = ac
        .iter()
        .zip(&bc)
        .map(|(x, y)| y / denom - rho * x / saa)
        .collect();
    let db = ac
        .iter()
        .zip(&bc)
        .map(|(x, y)| x / denom - rho * y / sbb)
        .collect();
    (rho, da, db, false)
}

/// Batch loss and, when `grad` is given, its gradient w.r.t. the flat
/// parameters `[encoder..., decoder...]`.
pub fn loss_and_grad(
    model: &VdeModel,
    batch: &[(&[f64], &[f64])],
    rng: &mut ChaCha8Rng,
    grad: Option<&mut [f64]>,
) -> Result<LossValue> {
    if batch.len() < 2 {
        return Err(Error::Spec("loss needs a batch of at least 2 pairs".into()));
    }
    let d = model.input_width();
    let latent = model.encoder.output_width();
    let n = batch.len();
    let mut tapes_t = vec![Tape::default(); n];
    let mut tapes_l = vec![Tape::default(); n];
    let mut tapes_d = vec![Tape::default(); n];
    let mut z_t = vec![vec![0.0; n]; latent];
    let mut z_l = vec![vec![0.0; n]; latent];
    let mut recon = 0.0;
    let norm = (n * d) as f64;
    let mut d_dec_out: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, (xt, xl)) in batch.iter().enumerate() {
        if xt.len() != d || xl.len() != d {
            return Err(Error::Shape {
                context: "loss batch",
                expected: d,
                got: xt.len().min(xl.len()),
            });
        }
        model.encoder.forward_tape(xt, &mut tapes_t[i]);
        model.encoder.forward_tape(xl, &mut tapes_l[i]);
        let mut noisy = tapes_t[i].output().to_vec();
        for (k, z) in noisy.iter_mut().enumerate() {
            z_t[k][i] = *z;
            let xi: f64 = StandardNormal.sample(rng);
            *z += model.noise * xi;
        }
        for (k, z) in tapes_l[i].output().iter().enumerate() {
            z_l[k][i] = *z;
        }
        model.decoder.forward_tape(&noisy, &mut tapes_d[i]);
        let y = tapes_d[i].output();
        let mut dy = Vec::with_capacity(d);
        for (yj, xj) in y.iter().zip(xl.iter()) {
            let r = yj - xj;
            recon += r * r;
            dy.push(2.0 * r / norm);
        }
        d_dec_out.push(dy);
    }
    recon /= norm;

    let mut rho_sum = 0.0;
    let mut degenerate = false;
    let mut d_zt = vec![vec![0.0; latent]; n];
    let mut d_zl = vec![vec![0.0; latent]; n];
    for k in 0..latent {
        let (rho, da, db, deg) = pearson(&z_t[k], &z_l[k]);
        degenerate |= deg;
        rho_sum += rho;
        for i in 0..n {
            d_zt[i][k] = -model.alpha * da[i] / latent as f64;
            d_zl[i][k] = -model.alpha * db[i] / latent as f64;
        }
    }
    let autocorr = rho_sum / latent as f64;
    let total = recon - model.alpha * autocorr;

    if let Some(grad) = grad {
        let n_enc = model.encoder.n_params();
        let (g_enc, g_dec) = grad.split_at_mut(n_enc);
        for i in 0..n {
            let d_noisy = model.decoder.backward(&tapes_d[i], &d_dec_out[i], g_dec);
            let dz: Vec<f64> = d_noisy.iter().zip(&d_zt[i]).map(|(a, b)| a + b).collect();
            model.encoder.backward(&tapes_t[i], &dz, g_enc);
            model.encoder.backward(&tapes_l[i], &d_zl[i], g_enc);
        }
    }
    Ok(LossValue {
        total,
        recon,
        autocorr,
        degenerate,
    })
}

/// Batch loss without gradients.
pub fn loss(model: &VdeModel, batch: &[(&[f64], &[f64])], rng: &mut ChaCha8Rng) -> Result<LossValue> {
    loss_and_grad(model, batch, rng, None)
}

impl VdeModel {
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let n = self.encoder.n_params();
        self.encoder.set_params(&p[..n]);
        self.decoder.set_params(&p[n..]);
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + self.decoder.n_params()
    }
}

/// Minibatch Adam on the dual loss. Pairs are reshuffled every epoch with
/// the configured seed; a trailing batch smaller than two pairs is dropped.
pub fn train(
    data: &[&FeatureMatrix],
    lag: usize,
    spec: &MlpSpec,
    cfg: &TrainConfig,
    noise: f64,
    alpha: f64,
) -> Result<VdeModel> {
    cfg.validate()?;
    spec.validate()?;
    if let Some(m) = data.iter().find(|m| m.n_cols() != spec.widths[0]) {
        return Err(Error::Shape {
            context: "training features vs encoder input",
            expected: spec.widths[0],
            got: m.n_cols(),
        });
    }
    let mut pairs = make_pairs(data, lag)?;
    if pairs.len() < 2 {
        return Err(Error::Lag {
            lag,
            frames: lag + 1,
        });
    }
    let mut model = VdeModel::init(spec, lag, noise, alpha, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut opt = Adam::new(model.n_params(), cfg.learning_rate, cfg.adam);
    let mut grad = vec![0.0; model.n_params()];
    let mut params = model.params();
    for epoch in 1..=cfg.epochs {
        pairs.shuffle(&mut rng);
        let mut stats = EpochStats {
            epoch,
            ..EpochStats::default()
        };
        let mut batches = 0usize;
        for chunk in pairs.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<(&[f64], &[f64])> = chunk
                .iter()
                .map(|&(k, t)| (data[k].row(t), data[k].row(t + lag)))
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let lv = loss_and_grad(&model, &batch, &mut rng, Some(&mut grad))?;
            if !lv.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    lr: cfg.learning_rate,
                });
            }
            opt.step(params.iter_mut(), &grad);
            model.set_params(&params);
            stats.recon += lv.recon;
            stats.autocorr += lv.autocorr;
            stats.total += lv.total;
            batches += 1;
        }
        let b = batches.max(1) as f64;
        stats.recon /= b;
        stats.autocorr /= b;
        stats.total /= b;
        log::debug!(
            "epoch {epoch}: total {:.5} recon {:.5} autocorr {:.4}",
            stats.total,
            stats.recon,
            stats.autocorr
        );
        model.report.epochs.push(stats);
    }
    Ok(model)
}
