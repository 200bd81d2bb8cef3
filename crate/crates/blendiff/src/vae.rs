//! Variational autoencoder used as a feature extractor for coefficient
//! sequences. Windows of frames are flattened, encoded to a Gaussian
//! latent, and the latent means serve as features for the distribution
//! metrics.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{self, check_finite_loss, ParamBuilder, ParamSet, VarMap};
use crate::optim::{AdamW, AdamWConfig, EmaTracker};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Window length in frames.
    pub window: usize,
    /// Stride between training/feature windows.
    pub stride: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub batch: usize,
    /// Cyclical KL annealing: number of cycles, ramp fraction of each
    /// cycle, and the plateau weight.
    pub beta_cycles: usize,
    pub beta_ramp: f64,
    pub beta_max: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 16,
            hidden: 64,
            window: 120,
            stride: 30,
            lr: 1e-4,
            weight_decay: 1e-2,
            ema_decay: 0.99,
            batch: 8,
            beta_cycles: 4,
            beta_ramp: 0.5,
            beta_max: 1.0,
            total_steps: 5000,
            warmup_frac: 0.05,
        }
    }
}

/// Cyclical annealing weight at `step`: each cycle ramps linearly from
/// 0 to `beta_max` over the first `beta_ramp` fraction, then stays
/// flat.
pub fn cyclical_beta(cfg: &VaeConfig, step: usize) -> f64 {
    if cfg.beta_cycles == 0 || cfg.total_steps == 0 {
        return cfg.beta_max;
    }
    let cycle_len = (cfg.total_steps / cfg.beta_cycles).max(1);
    let tau = (step % cycle_len) as f64 / cycle_len as f64;
    cfg.beta_max * (tau / cfg.beta_ramp).min(1.0)
}

/// Closed-form KL(N(mu, diag sigma^2) || N(0, I)) averaged over latent
/// dimensions, with sigma = exp(log_sigma).
pub fn kl_standard_normal(mu: &[f64], log_sigma: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (m, ls) in mu.iter().zip(log_sigma) {
        acc += 0.5 * (m * m + (2.0 * ls).exp() - 1.0 - 2.0 * ls);
    }
    acc / mu.len() as f64
}

#[derive(Debug, Clone)]
pub struct Vae {
    pub cfg: VaeConfig,
    pub coeff_dim: usize,
    pub params: ParamSet,
    /// Per-channel reconstruction weights 1/sigma_u (0 for constant
    /// channels), fixed from the training data.
    pub channel_weights: Vec<f64>,
}

impl Vae {
    pub fn init(cfg: VaeConfig, coeff_dim: usize, channel_weights: Vec<f64>, rng: &mut Rng) -> Self {
        assert_eq!(channel_weights.len(), coeff_dim);
        let flat = cfg.window * coeff_dim;
        let mut b = ParamBuilder::new(rng);
        b.linear("enc.l1", flat, cfg.hidden);
        b.linear("enc.l2", cfg.hidden, cfg.hidden);
        b.linear("enc.mu", cfg.hidden, cfg.latent_dim);
        b.linear("enc.logsig", cfg.hidden, cfg.latent_dim);
        b.linear("dec.l1", cfg.latent_dim, cfg.hidden);
        b.linear("dec.l2", cfg.hidden, cfg.hidden);
        b.linear("dec.out", cfg.hidden, flat);
        Vae {
            cfg,
            coeff_dim,
            params: b.build(),
            channel_weights,
        }
    }

    fn encode_graph(&self, vm: &VarMap, window: &Var) -> (Var, Var) {
        let h = nn::linear(vm, "enc.l1", window).silu();
        let h = nn::linear(vm, "enc.l2", &h).silu();
        let mu = nn::linear(vm, "enc.mu", &h);
        let log_sigma = nn::linear(vm, "enc.logsig", &h);
        (mu, log_sigma)
    }

    fn decode_graph(&self, vm: &VarMap, z: &Var) -> Var {
        let h = nn::linear(vm, "dec.l1", z).silu();
        let h = nn::linear(vm, "dec.l2", &h).silu();
        // relu then tanh keeps the reconstruction in [0, 1)
        nn::linear(vm, "dec.out", &h).relu().tanh()
    }

    /// Latent mean of one window (window frames x coeff_dim).
    pub fn encode_mean(&self, window: &Tensor) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let g = Graph::new();
        let vm = VarMap::from_params(&g, &self.params);
        let flat = g.leaf(window.reshape(vec![1, window.numel()]));
        let (mu, _) = self.encode_graph(&vm, &flat);
        Ok(mu.value().into_data())
    }

    /// Reconstruction of one window.
    pub fn reconstruct(&self, window: &Tensor) -> Result<Tensor> {
        self.check_window(window)?;
        let g = Graph::new();
        let vm = VarMap::from_params(&g, &self.params);
        let flat = g.leaf(window.reshape(vec![1, window.numel()]));
        let (mu, _) = self.encode_graph(&vm, &flat);
        let out = self.decode_graph(&vm, &mu);
        Ok(out.value().reshape(vec![self.cfg.window, self.coeff_dim]))
    }

    fn check_window(&self, window: &Tensor) -> Result<()> {
        if window.rank() != 2
            || window.rows() != self.cfg.window
            || window.cols() != self.coeff_dim
        {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cfg.window, self.coeff_dim],
                got: window.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn with_params(&self, params: ParamSet) -> Vae {
        Vae {
            cfg: self.cfg.clone(),
            coeff_dim: self.coeff_dim,
            params,
            channel_weights: self.channel_weights.clone(),
        }
    }
}

/// Per-channel standard deviations over a set of sequences; channels
/// with std below 1e-6 get weight 0.
pub fn channel_weights(sequences: &[Tensor]) -> Vec<f64> {
    assert!(!sequences.is_empty());
    let k = sequences[0].cols();
    let mut count = 0usize;
    let mut mean = vec![0.0; k];
    for s in sequences {
        for r in 0..s.rows() {
            for c in 0..k {
                mean[c] += s.at(r, c);
            }
        }
        count += s.rows();
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut var = vec![0.0; k];
    for s in sequences {
        for r in 0..s.rows() {
            for c in 0..k {
                let d = s.at(r, c) - mean[c];
                var[c] += d * d;
            }
        }
    }
    var.iter()
        .map(|v| {
            let std = (v / count as f64).sqrt();
            if std < 1e-6 {
                0.0
            } else {
                1.0 / std
            }
        })
        .collect()
}

/// Window start offsets of a sequence of `n` frames.
pub fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    if n < window {
        return Vec::new();
    }
    (0..=n - window).step_by(stride.max(1)).collect()
}

struct LossParts {
    total: Var,
    recon: f64,
    kl: f64,
}

fn window_loss(
    vae: &Vae,
    vm: &VarMap,
    g: &Graph,
    window: &Tensor,
    zeta: &Tensor,
    beta: f64,
) -> LossParts {
    let (w_frames, k) = (vae.cfg.window, vae.coeff_dim);
    let flat = g.leaf(window.reshape(vec![1, window.numel()]));
    let (mu, log_sigma) = vae.encode_graph(vm, &flat);
    let sigma = log_sigma.exp();
    let z = mu.add(&sigma.mul(&g.leaf(zeta.clone())));
    let recon = vae.decode_graph(vm, &z).reshape(vec![w_frames, k]);

    let weights = g.leaf(Tensor::broadcast_rows(&vae.channel_weights, w_frames));
    let target = g.leaf(window.clone());
    let diff = target.sub(&recon).mul(&weights);
    let recon_loss = diff.mul(&diff).mean();

    let vel = |x: &Var| -> Var { x.slice_rows(1, w_frames).sub(&x.slice_rows(0, w_frames - 1)) };
    let dv = vel(&target.mul(&weights)).sub(&vel(&recon.mul(&weights)));
    let vel_loss = dv.mul(&dv).mean();

    // KL(N(mu, sigma^2) || N(0, I)) averaged over latent dims
    let two_ls = log_sigma.scale(2.0);
    let kl = mu
        .mul(&mu)
        .add(&two_ls.exp())
        .add_scalar(-1.0)
        .sub(&two_ls)
        .scale(0.5)
        .mean();

    let recon_val = recon_loss.value().item() + vel_loss.value().item();
    let kl_val = kl.value().item();
    let total = recon_loss.add(&vel_loss).add(&kl.scale(beta));
    LossParts {
        total,
        recon: recon_val,
        kl: kl_val,
    }
}

/// Per-step training telemetry.
#[derive(Debug, Clone, Default)]
pub struct VaeTrainStats {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
}

pub struct VaeTrainer {
    opt: AdamW,
    ema: EmaTracker,
    step: usize,
}

impl VaeTrainer {
    pub fn new(vae: &Vae) -> Self {
        let warmup = (vae.cfg.total_steps as f64 * vae.cfg.warmup_frac).round() as usize;
        VaeTrainer {
            opt: AdamW::new(
                AdamWConfig {
                    lr: vae.cfg.lr,
                    weight_decay: vae.cfg.weight_decay,
                    warmup_steps: warmup,
                    ..Default::default()
                },
                &vae.params,
            ),
            ema: EmaTracker::new(vae.cfg.ema_decay, &vae.params),
            step: 0,
        }
    }

    pub fn ema_params(&self) -> &ParamSet {
        self.ema.shadow()
    }

    pub fn step(
        &mut self,
        vae: &mut Vae,
        windows: &[Tensor],
        rng: &mut Rng,
    ) -> Result<VaeTrainStats> {
        assert!(!windows.is_empty());
        let beta = cyclical_beta(&vae.cfg, self.step);
        let g = Graph::new();
        let vm = VarMap::from_params(&g, &vae.params);
        let mut total: Option<Var> = None;
        let mut stats = VaeTrainStats {
            beta,
            ..Default::default()
        };
        let batch = vae.cfg.batch.min(windows.len());
        for _ in 0..batch {
            let w = &windows[rng.below(windows.len())];
            let zeta = Tensor::new(vec![1, vae.cfg.latent_dim], rng.normal_vec(vae.cfg.latent_dim));
            let parts = window_loss(vae, &vm, &g, w, &zeta, beta);
            stats.recon += parts.recon / batch as f64;
            stats.kl += parts.kl / batch as f64;
            total = Some(match total {
                Some(acc) => acc.add(&parts.total),
                None => parts.total,
            });
        }
        let loss = total.unwrap().scale(1.0 / batch as f64);
        stats.loss = check_finite_loss(loss.value().item(), self.step, "VAE training loss")?;
        loss.backward()?;
        let grads = vm.grads();
        self.opt.step(&mut vae.params, &grads);
        self.ema.update(&vae.params);
        self.step += 1;
        Ok(stats)
    }
}

/// Train a VAE on coefficient sequences; returns the EMA weights.
pub fn train_vae(sequences: &[Tensor], cfg: VaeConfig, rng: &mut Rng) -> Result<Vae> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput("no training sequences".into()));
    }
    let k = sequences[0].cols();
    let mut windows = Vec::new();
    for s in sequences {
        for start in window_starts(s.rows(), cfg.window, cfg.stride) {
            windows.push(s.slice_rows(start, start + cfg.window));
        }
    }
    if windows.is_empty() {
        return Err(Error::TooShort(format!(
            "no sequence reaches the window length {}",
            cfg.window
        )));
    }
    let weights = channel_weights(sequences);
    let total_steps = cfg.total_steps;
    let mut vae = Vae::init(cfg, k, weights, rng);
    let mut trainer = VaeTrainer::new(&vae);
    for _ in 0..total_steps {
        trainer.step(&mut vae, &windows, rng)?;
    }
    let ema = trainer.ema_params().clone();
    Ok(vae.with_params(ema))
}

/// One latent feature per sequence: the latent means of its windows,
/// averaged. Errors if any sequence is shorter than the window.
pub fn extract_features(vae: &Vae, sequences: &[Tensor]) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(sequences.len());
    for (i, s) in sequences.iter().enumerate() {
        let starts = window_starts(s.rows(), vae.cfg.window, vae.cfg.stride);
        if starts.is_empty() {
            return Err(Error::TooShort(format!(
                "sequence {i} has {} frames, needs {}",
                s.rows(),
                vae.cfg.window
            )));
        }
        let mut acc = vec![0.0; vae.cfg.latent_dim];
        for &start in &starts {
            let mu = vae.encode_mean(&s.slice_rows(start, start + vae.cfg.window))?;
            for (a, m) in acc.iter_mut().zip(&mu) {
                *a += m / starts.len() as f64;
            }
        }
        rows.push(acc);
    }
    Ok(Tensor::from_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> VaeConfig {
        VaeConfig {
            latent_dim: 4,
            hidden: 32,
            window: 20,
            stride: 5,
            lr: 2e-3,
            total_steps: 2000,
            ..Default::default()
        }
    }

    fn wave_sequence(n: usize, k: usize, phase: f64) -> Tensor {
        let mut t = Tensor::zeros(vec![n, k]);
        for r in 0..n {
            for c in 0..k {
                let v = 0.5 + 0.4 * ((r as f64 * 0.2 + phase) + c as f64).sin();
                t.set(r, c, v);
            }
        }
        t
    }

    #[test]
    fn kl_zero_for_standard_normal() {
        assert_eq!(kl_standard_normal(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!(kl_standard_normal(&[0.5, 0.0], &[0.0, 0.0]) > 0.0);
    }

    #[test]
    fn cyclical_beta_shape() {
        let cfg = VaeConfig {
            total_steps: 400,
            beta_cycles: 4,
            beta_ramp: 0.5,
            beta_max: 1.0,
            ..Default::default()
        };
        assert_eq!(cyclical_beta(&cfg, 0), 0.0);
        assert!((cyclical_beta(&cfg, 25) - 0.5).abs() < 1e-12);
        assert_eq!(cyclical_beta(&cfg, 50), 1.0);
        assert_eq!(cyclical_beta(&cfg, 99), 1.0);
        assert_eq!(cyclical_beta(&cfg, 100), 0.0); // new cycle
    }

    #[test]
    fn beta_zero_reduces_to_autoencoder_loss() {
        let mut rng = Rng::new(1);
        let cfg = small_cfg();
        let w = wave_sequence(20, 3, 0.0);
        let vae = Vae::init(cfg, 3, vec![1.0; 3], &mut rng);
        let g = Graph::new();
        let vm = VarMap::from_params(&g, &vae.params);
        let zeta = Tensor::zeros(vec![1, 4]);
        let with_beta = window_loss(&vae, &vm, &g, &w, &zeta, 1.0);
        let without = window_loss(&vae, &vm, &g, &w, &zeta, 0.0);
        assert!((without.total.value().item() - with_beta.recon).abs() < 1e-12);
        assert!(
            (with_beta.total.value().item() - (with_beta.recon + with_beta.kl)).abs() < 1e-12
        );
    }

    #[test]
    fn velocity_term_ignores_constant_channel_shift() {
        // the velocity part compares frame differences, so adding a
        // constant per channel to the reconstruction leaves it unchanged
        let w = wave_sequence(10, 2, 0.3);
        let shifted = w.map(|x| x + 0.123);
        let vel = |x: &Tensor| -> Tensor {
            x.slice_rows(1, x.rows()).sub(&x.slice_rows(0, x.rows() - 1))
        };
        let a = vel(&w);
        let b = vel(&shifted);
        assert!(a.sub(&b).max_abs() < 1e-12);
    }

    #[test]
    fn overfit_one_window() {
        let mut rng = Rng::new(2);
        let cfg = small_cfg();
        let seq = wave_sequence(20, 3, 0.7);
        let windows = vec![seq.clone()];
        let weights = channel_weights(&windows);
        let mut vae = Vae::init(cfg, 3, weights, &mut rng);
        let mut trainer = VaeTrainer::new(&vae);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..2000 {
            let stats = trainer.step(&mut vae, &windows, &mut rng).unwrap();
            if first.is_none() {
                first = Some(stats.recon);
            }
            last = stats.recon;
        }
        let first = first.unwrap();
        assert!(
            last < 0.1 * first,
            "reconstruction {first} -> {last} did not reach 10%"
        );
    }

    #[test]
    fn features_deterministic_and_sized() {
        let mut rng = Rng::new(3);
        let cfg = small_cfg();
        let vae = Vae::init(cfg, 3, vec![1.0; 3], &mut rng);
        let seqs = vec![wave_sequence(30, 3, 0.0), wave_sequence(30, 3, 0.0)];
        let f1 = extract_features(&vae, &seqs).unwrap();
        let f2 = extract_features(&vae, &seqs).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.shape(), &[2, 4]);
        // identical sequences -> identical features
        for c in 0..4 {
            assert_eq!(f1.at(0, c), f1.at(1, c));
        }
    }

    #[test]
    fn too_short_sequence_rejected() {
        let mut rng = Rng::new(4);
        let vae = Vae::init(small_cfg(), 3, vec![1.0; 3], &mut rng);
        let seqs = vec![wave_sequence(10, 3, 0.0)];
        assert!(matches!(
            extract_features(&vae, &seqs),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn decoder_output_range() {
        let mut rng = Rng::new(5);
        let vae = Vae::init(small_cfg(), 3, vec![1.0; 3], &mut rng);
        let w = wave_sequence(20, 3, 0.1);
        let rec = vae.reconstruct(&w).unwrap();
        for &v in rec.data() {
            assert!((0.0..1.0).contains(&v), "reconstruction {v} outside [0,1)");
        }
    }

    #[test]
    fn constant_channels_get_zero_weight() {
        let mut t = wave_sequence(15, 3, 0.0);
        for r in 0..15 {
            t.set(r, 1, 0.25);
        }
        let w = channel_weights(&[t]);
        assert_eq!(w[1], 0.0);
        assert!(w[0] > 0.0);
    }
}
