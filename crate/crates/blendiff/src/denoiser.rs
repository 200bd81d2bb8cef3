//! Conditional 1D UNet noise predictor over coefficient sequences.
//!
//! The network keeps the full temporal resolution: one encoder, one
//! middle and one decoder block, each a residual convolution block with
//! additive timestep conditioning followed by a transformer block whose
//! cross-attention reads the audio features. A skip connection
//! concatenates the encoder output onto the middle output ahead of the
//! decoder. The alignment bias restricts every frame's attention to
//! audio rows at temporal offset <= 1.
//!
//! Training minimizes the absolute (or squared) error between injected
//! and predicted noise plus a noise-level velocity term, with
//! classifier-free condition dropout, feature time-shift and
//! symmetric-pair swap augmentations, AdamW, and an EMA of the weights.

use serde::{Deserialize, Serialize};

use crate::audio::shift_rows_fractional;
use crate::autodiff::{Graph, Var};
use crate::diffusion::{NoisePredictor, NoiseSchedule};
use crate::error::{Error, Result};
use crate::mesh::symmetric_blendshape_pairs;
use crate::nn::{self, check_finite_loss, ParamBuilder, ParamSet, VarMap};
use crate::optim::{AdamW, AdamWConfig, EmaTracker};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Coefficient channels K.
    pub coeff_dim: usize,
    /// Channel width of the UNet blocks.
    pub hidden: usize,
    pub heads: usize,
    /// Conditioning feature dimension D.
    pub cond_dim: usize,
    /// Convolution kernel width (odd).
    pub kernel: usize,
    pub norm_groups: usize,
    pub use_alignment_bias: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            coeff_dim: 32,
            hidden: 64,
            heads: 4,
            cond_dim: 40,
            kernel: 3,
            norm_groups: 8,
            use_alignment_bias: true,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument("kernel width must be odd".into()));
        }
        if self.hidden % self.norm_groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "hidden {} not divisible by norm groups {}",
                self.hidden, self.norm_groups
            )));
        }
        Ok(())
    }
}

/// Interleaved sin/cos embedding over geometrically spaced frequencies
/// with base 10000: entry 2i is sin(t * w_i), entry 2i+1 is
/// cos(t * w_i) with w_i = 10000^(-2i/dim).
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Tensor {
    assert!(dim % 2 == 0, "embedding dim must be even");
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let w = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        out[2 * i] = (t * w).sin();
        out[2 * i + 1] = (t * w).cos();
    }
    Tensor::new(vec![dim], out)
}

/// Alignment bias: 0 on the band |i - j| <= 1, -inf elsewhere.
pub fn alignment_bias(n: usize) -> Tensor {
    let mut b = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for j in 0..n {
            if (i as isize - j as isize).abs() > 1 {
                b.set(i, j, f64::NEG_INFINITY);
            }
        }
    }
    b
}

/// Attention weights softmax(q k^T / sqrt(d) + bias) with exact zeros
/// at -inf bias entries.
pub fn attention_weights(q: &Tensor, k: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d) = (q.rows(), q.cols());
    if k.cols() != d {
        return Err(Error::ShapeMismatch {
            expected: vec![k.rows(), d],
            got: k.shape().to_vec(),
        });
    }
    if bias.shape() != [n, k.rows()] {
        return Err(Error::ShapeMismatch {
            expected: vec![n, k.rows()],
            got: bias.shape().to_vec(),
        });
    }
    let scale = 1.0 / (d as f64).sqrt();
    let scores = q.matmul(&k.transpose()).scale(scale).add(bias);
    let mut weights = Tensor::zeros(vec![n, k.rows()]);
    for i in 0..n {
        let row = scores.row(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !mx.is_finite() {
            return Err(Error::AllMaskedRow(i));
        }
        let mut z = 0.0;
        for (j, &s) in row.iter().enumerate() {
            let e = (s - mx).exp();
            weights.set(i, j, e);
            z += e;
        }
        for j in 0..row.len() {
            let w = weights.at(i, j) / z;
            weights.set(i, j, w);
        }
    }
    Ok(weights)
}

/// Single-head biased cross-attention: softmax(q k^T / sqrt(d) + bias) v.
pub fn biased_cross_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    if v.rows() != k.rows() {
        return Err(Error::ShapeMismatch {
            expected: vec![k.rows(), v.cols()],
            got: v.shape().to_vec(),
        });
    }
    Ok(attention_weights(q, k, bias)?.matmul(v))
}

/// Condition input for a forward pass.
#[derive(Clone, Copy)]
pub enum CondSource<'a> {
    Features(&'a Tensor),
    Null,
}

/// The denoiser: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamSet,
}

impl Denoiser {
    pub fn init(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (k, h, d, kern) = (
            config.coeff_dim,
            config.hidden,
            config.cond_dim,
            config.kernel,
        );
        let mut b = ParamBuilder::new(rng);
        b.conv1d("conv_in", k, h, kern);
        b.linear("temb.l1", h, h);
        b.linear("temb.l2", h, h);
        for (blk, c_in) in [("enc", h), ("mid", h), ("dec", 2 * h)] {
            b.norm(&format!("{blk}.res.gn1"), c_in);
            b.conv1d(&format!("{blk}.res.conv1"), c_in, h, kern);
            b.linear(&format!("{blk}.res.temb"), h, h);
            b.norm(&format!("{blk}.res.gn2"), h);
            b.conv1d(&format!("{blk}.res.conv2"), h, h, kern);
            if c_in != h {
                b.conv1d(&format!("{blk}.res.skip"), c_in, h, 1);
            }
            b.norm(&format!("{blk}.attn.ln1"), h);
            b.matrix(&format!("{blk}.attn.wq"), h, h);
            b.matrix(&format!("{blk}.attn.wk"), d, h);
            b.matrix(&format!("{blk}.attn.wv"), d, h);
            b.linear(&format!("{blk}.attn.out"), h, h);
            b.norm(&format!("{blk}.attn.ln2"), h);
            b.linear(&format!("{blk}.attn.ff1"), h, 2 * h);
            b.linear(&format!("{blk}.attn.ff2"), 2 * h, h);
        }
        b.norm("out.norm", h);
        // zero-initialized head so the initial noise prediction is 0
        b.conv1d_zero("out.conv", h, k, kern);
        b.vector("null_embed", d, 0.1);
        Ok(Denoiser {
            config,
            params: b.build(),
        })
    }

    /// Swap in another parameter set (e.g. EMA weights).
    pub fn with_params(&self, params: ParamSet) -> Denoiser {
        Denoiser {
            config: self.config.clone(),
            params,
        }
    }

    fn res_block(&self, vm: &VarMap, blk: &str, x: &Var, temb: &Var, c_in: usize) -> Var {
        let cfg = &self.config;
        let n = x.shape()[0];
        let p = |s: &str| format!("{blk}.res.{s}");
        let mut h = nn::group_norm(vm, &p("gn1"), x, cfg.norm_groups).silu();
        h = nn::conv1d(vm, &p("conv1"), &h);
        let tproj = nn::linear(vm, &p("temb"), &temb.silu())
            .reshape(vec![cfg.hidden])
            .broadcast_rows(n);
        h = h.add(&tproj);
        h = nn::group_norm(vm, &p("gn2"), &h, cfg.norm_groups).silu();
        h = nn::conv1d(vm, &p("conv2"), &h);
        let skip = if c_in != cfg.hidden {
            nn::conv1d(vm, &p("skip"), x)
        } else {
            x.clone()
        };
        h.add(&skip)
    }

    fn attn_block(&self, vm: &VarMap, blk: &str, x: &Var, cond: &Var, bias: &Tensor) -> Var {
        let cfg = &self.config;
        let p = |s: &str| format!("{blk}.attn.{s}");
        let head_dim = cfg.hidden / cfg.heads;
        let q = nn::layer_norm(vm, &p("ln1"), x).matmul(vm.get(&p("wq")));
        let k = cond.matmul(vm.get(&p("wk")));
        let v = cond.matmul(vm.get(&p("wv")));
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.heads);
        for hh in 0..cfg.heads {
            let (c0, c1) = (hh * head_dim, (hh + 1) * head_dim);
            let qh = q.slice_cols(c0, c1);
            let kh = k.slice_cols(c0, c1);
            let vh = v.slice_cols(c0, c1);
            let probs = qh
                .matmul(&kh.transpose())
                .scale(scale)
                .softmax_rows_bias(bias);
            heads.push(probs.matmul(&vh));
        }
        let attn = nn::linear(vm, &p("out"), &Var::concat_cols(&heads));
        let x = x.add(&attn);
        let ff = nn::linear(vm, &p("ff1"), &nn::layer_norm(vm, &p("ln2"), &x)).silu();
        let ff = nn::linear(vm, &p("ff2"), &ff);
        x.add(&ff)
    }

    /// Build the forward computation on an existing graph. `u_t` is an
    /// N x K noisy sequence; the output predicts the injected noise.
    pub fn forward_graph(
        &self,
        g: &Graph,
        vm: &VarMap,
        u_t: &Tensor,
        cond: CondSource,
        t: usize,
    ) -> Result<Var> {
        let cfg = &self.config;
        if u_t.rank() != 2 || u_t.cols() != cfg.coeff_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![u_t.rows(), cfg.coeff_dim],
                got: u_t.shape().to_vec(),
            });
        }
        let n = u_t.rows();
        let cond_var = match cond {
            CondSource::Features(f) => {
                if f.rank() != 2 || f.rows() != n || f.cols() != cfg.cond_dim {
                    return Err(Error::ShapeMismatch {
                        expected: vec![n, cfg.cond_dim],
                        got: f.shape().to_vec(),
                    });
                }
                g.leaf(f.clone())
            }
            CondSource::Null => vm.get("null_embed").broadcast_rows(n),
        };
        let bias = if cfg.use_alignment_bias {
            alignment_bias(n)
        } else {
            Tensor::zeros(vec![n, n])
        };

        let temb_in = g.leaf(sinusoidal_embedding(t as f64, cfg.hidden).reshape(vec![1, cfg.hidden]));
        let temb = nn::linear(vm, "temb.l2", &nn::linear(vm, "temb.l1", &temb_in).silu());

        let x = nn::conv1d(vm, "conv_in", &g.leaf(u_t.clone()));
        let enc = {
            let r = self.res_block(vm, "enc", &x, &temb, cfg.hidden);
            self.attn_block(vm, "enc", &r, &cond_var, &bias)
        };
        let mid = {
            let r = self.res_block(vm, "mid", &enc, &temb, cfg.hidden);
            self.attn_block(vm, "mid", &r, &cond_var, &bias)
        };
        let dec = {
            let cat = Var::concat_cols(&[mid, enc]);
            let r = self.res_block(vm, "dec", &cat, &temb, 2 * cfg.hidden);
            self.attn_block(vm, "dec", &r, &cond_var, &bias)
        };
        let out = nn::group_norm(vm, "out.norm", &dec, self.config.norm_groups).silu();
        Ok(nn::conv1d(vm, "out.conv", &out))
    }

    /// Plain forward pass (no gradients retained).
    pub fn forward(&self, u_t: &Tensor, cond: CondSource, t: usize) -> Result<Tensor> {
        let g = Graph::new();
        let vm = VarMap::from_params(&g, &self.params);
        Ok(self.forward_graph(&g, &vm, u_t, cond, t)?.value())
    }
}

impl NoisePredictor for Denoiser {
    fn predict(&self, u_t: &Tensor, cond: Option<&Tensor>, t: usize) -> Result<Tensor> {
        let source = match cond {
            Some(f) => CondSource::Features(f),
            None => CondSource::Null,
        };
        self.forward(u_t, source, t)
    }
}

// ---- checkpoints ----

/// Checkpoint manifest stored as `manifest.json` beside the BTSR
/// tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: DenoiserConfig,
    pub schedule: crate::diffusion::ScheduleConfig,
    /// Coefficient channel names, in column order.
    pub coeff_names: Vec<String>,
    pub step: usize,
    pub ema: bool,
    pub tensors: Vec<String>,
}

pub struct Checkpoint {
    pub model: Denoiser,
    pub schedule: crate::diffusion::ScheduleConfig,
    pub coeff_names: Vec<String>,
    pub step: usize,
    pub ema: bool,
}

pub fn save_checkpoint(dir: &std::path::Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        config: ckpt.model.config.clone(),
        schedule: ckpt.schedule.clone(),
        coeff_names: ckpt.coeff_names.clone(),
        step: ckpt.step,
        ema: ckpt.ema,
        tensors: ckpt.model.params.names(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::FormatError(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    ckpt.model.params.save_dir(dir)
}

pub fn load_checkpoint(dir: &std::path::Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::FormatError(e.to_string()))?;
    let params = ParamSet::load_dir(dir, &manifest.tensors)?;
    Ok(Checkpoint {
        model: Denoiser {
            config: manifest.config,
            params,
        },
        schedule: manifest.schedule,
        coeff_names: manifest.coeff_names,
        step: manifest.step,
        ema: manifest.ema,
    })
}

// ---- losses ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossMode {
    L1,
    L2,
}

/// Mean absolute or mean squared error over all entries.
pub fn loss_simple_var(eps: &Var, eps_hat: &Var, mode: LossMode) -> Var {
    let diff = eps.sub(eps_hat);
    match mode {
        LossMode::L1 => diff.abs().mean(),
        LossMode::L2 => diff.mul(&diff).mean(),
    }
}

pub fn loss_simple(eps: &Tensor, eps_hat: &Tensor, mode: LossMode) -> Result<f64> {
    eps.same_shape(eps_hat)?;
    let g = Graph::new();
    Ok(loss_simple_var(&g.leaf(eps.clone()), &g.leaf(eps_hat.clone()), mode)
        .value()
        .item())
}

/// Mean absolute mismatch of adjacent-frame differences. Returns 0 with
/// a warning for single-frame sequences.
pub fn loss_velocity_var(eps: &Var, eps_hat: &Var) -> Var {
    let n = eps.shape()[0];
    if n < 2 {
        log::warn!("velocity loss undefined for a single frame; returning 0");
        return eps.sub(eps_hat).abs().mean().scale(0.0);
    }
    let d = eps.slice_rows(1, n).sub(&eps.slice_rows(0, n - 1));
    let d_hat = eps_hat.slice_rows(1, n).sub(&eps_hat.slice_rows(0, n - 1));
    d.sub(&d_hat).abs().mean()
}

pub fn loss_velocity(eps: &Tensor, eps_hat: &Tensor) -> Result<f64> {
    eps.same_shape(eps_hat)?;
    let g = Graph::new();
    Ok(loss_velocity_var(&g.leaf(eps.clone()), &g.leaf(eps_hat.clone()))
        .value()
        .item())
}

/// Checks the algebraic identity between the sample-space velocity gap
/// of the denoised estimate and the noise-space velocity gap scaled by
/// sqrt((1 - a)/a); returns the maximum per-entry discrepancy of the
/// absolute values.
pub fn velocity_identity_check(
    u0: &Tensor,
    eps: &Tensor,
    eps_hat: &Tensor,
    alpha_bar: f64,
) -> Result<f64> {
    u0.same_shape(eps)?;
    u0.same_shape(eps_hat)?;
    assert!(alpha_bar > 0.0 && alpha_bar < 1.0);
    let n = u0.rows();
    if n < 2 {
        return Ok(0.0);
    }
    let sa = alpha_bar.sqrt();
    let sb = (1.0 - alpha_bar).sqrt();
    let u_t = u0.scale(sa).add(&eps.scale(sb));
    let u_hat = u_t.sub(&eps_hat.scale(sb)).scale(1.0 / sa);

    let vel = |x: &Tensor| x.slice_rows(1, n).sub(&x.slice_rows(0, n - 1));
    let sample_gap = vel(u0).sub(&vel(&u_hat)).map(f64::abs);
    let factor = (1.0 - alpha_bar).sqrt() / alpha_bar.sqrt();
    let noise_gap = vel(eps).sub(&vel(eps_hat)).map(f64::abs).scale(factor);
    Ok(sample_gap.sub(&noise_gap).max_abs())
}

// ---- training ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub ema_decay: f64,
    pub cond_drop_prob: f64,
    pub loss_mode: LossMode,
    pub use_velocity_loss: bool,
    pub audio_shift_prob: f64,
    pub blendshape_swap_prob: f64,
    /// Left/right column-name pairs exchanged by the swap augmentation.
    pub symmetric_pairs: Vec<(String, String)>,
    /// Window length sequences are sliced to.
    pub window_len: usize,
    pub total_steps: usize,
    /// Fraction of total steps used for linear warmup.
    pub warmup_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 8,
            lr: 1e-5,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            ema_decay: 0.9999,
            cond_drop_prob: 0.1,
            loss_mode: LossMode::L1,
            use_velocity_loss: true,
            audio_shift_prob: 0.5,
            blendshape_swap_prob: 0.5,
            symmetric_pairs: symmetric_blendshape_pairs(),
            window_len: 60,
            total_steps: 10_000,
            warmup_frac: 0.05,
        }
    }
}

/// One training example: a coefficient window and its frame-aligned
/// features.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub coeffs: Tensor,
    pub features: Tensor,
}

fn swap_columns(t: &Tensor, pairs: &[(usize, usize)]) -> Tensor {
    let mut out = t.clone();
    let (n, k) = (t.rows(), t.cols());
    for &(a, b) in pairs {
        for r in 0..n {
            let va = t.at(r, a);
            let vb = t.at(r, b);
            out.set(r, a, vb);
            out.set(r, b, va);
        }
    }
    let _ = k;
    out
}

/// Resolve symmetric name pairs against column names; unknown names are
/// skipped with a warning.
pub fn resolve_symmetric_pairs(
    pairs: &[(String, String)],
    names: &[String],
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (l, r) in pairs {
        let li = names.iter().position(|n| n == l);
        let ri = names.iter().position(|n| n == r);
        match (li, ri) {
            (Some(a), Some(b)) => out.push((a, b)),
            _ => log::warn!("symmetric pair ({l}, {r}) not found in coefficient names"),
        }
    }
    out
}

pub struct Trainer {
    pub cfg: TrainConfig,
    opt: AdamW,
    ema: EmaTracker,
    pair_indices: Vec<(usize, usize)>,
    step: usize,
}

impl Trainer {
    pub fn new(model: &Denoiser, cfg: TrainConfig, coeff_names: &[String]) -> Self {
        let warmup = (cfg.total_steps as f64 * cfg.warmup_frac).round() as usize;
        let opt = AdamW::new(
            AdamWConfig {
                lr: cfg.lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: 1e-8,
                weight_decay: cfg.weight_decay,
                warmup_steps: warmup,
            },
            &model.params,
        );
        let ema = EmaTracker::new(cfg.ema_decay, &model.params);
        let pair_indices = resolve_symmetric_pairs(&cfg.symmetric_pairs, coeff_names);
        Trainer {
            cfg,
            opt,
            ema,
            pair_indices,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn ema_params(&self) -> &ParamSet {
        self.ema.shadow()
    }

    /// One optimization step over a batch of windows. Returns the batch
    /// loss.
    pub fn step(
        &mut self,
        model: &mut Denoiser,
        schedule: &NoiseSchedule,
        batch: &[TrainItem],
        rng: &mut Rng,
    ) -> Result<f64> {
        assert!(!batch.is_empty());
        let g = Graph::new();
        let vm = VarMap::from_params(&g, &model.params);
        let mut total: Option<Var> = None;
        for item in batch {
            let (n, _) = (item.coeffs.rows(), item.coeffs.cols());
            // augmentations: feature time shift, symmetric swap,
            // condition dropout
            let mut features = item.features.clone();
            if rng.uniform() < self.cfg.audio_shift_prob {
                let shift = rng.uniform_range(-1.0, 1.0);
                features = shift_rows_fractional(&features, shift);
            }
            let mut u0 = item.coeffs.clone();
            if rng.uniform() < self.cfg.blendshape_swap_prob {
                u0 = swap_columns(&u0, &self.pair_indices);
            }
            let use_null = rng.uniform() < self.cfg.cond_drop_prob;

            let t = 1 + rng.below(schedule.timesteps());
            let eps = Tensor::new(
                vec![n, u0.cols()],
                rng.normal_vec(n * u0.cols()),
            );
            let u_t = crate::diffusion::q_sample(&u0, schedule, t, &eps)?;
            let cond = if use_null {
                CondSource::Null
            } else {
                CondSource::Features(&features)
            };
            let eps_hat = model.forward_graph(&g, &vm, &u_t, cond, t)?;
            let eps_leaf = g.leaf(eps);
            let mut item_loss = loss_simple_var(&eps_leaf, &eps_hat, self.cfg.loss_mode);
            if self.cfg.use_velocity_loss {
                item_loss = item_loss.add(&loss_velocity_var(&eps_leaf, &eps_hat));
            }
            total = Some(match total {
                Some(acc) => acc.add(&item_loss),
                None => item_loss,
            });
        }
        let loss = total.unwrap().scale(1.0 / batch.len() as f64);
        let loss_value = loss.value().item();
        check_finite_loss(loss_value, self.step, "diffusion training loss")?;
        loss.backward()?;
        let grads = vm.grads();
        self.opt.step(&mut model.params, &grads);
        self.ema.update(&model.params);
        self.step += 1;
        Ok(loss_value)
    }
}

/// Slice a random training window of `window_len` frames out of a full
/// sequence and its aligned features.
pub fn sample_window(
    coeffs: &Tensor,
    features: &Tensor,
    window_len: usize,
    rng: &mut Rng,
) -> TrainItem {
    let n = coeffs.rows();
    let w = window_len.min(n);
    let start = if n > w { rng.below(n - w + 1) } else { 0 };
    TrainItem {
        coeffs: coeffs.slice_rows(start, start + w),
        features: features.slice_rows(start, start + w),
    }
}

/// Loss of a fixed probe (no randomness, no update): forward on the
/// given noisy input and compare against the fixed noise.
pub fn eval_fixed_loss(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    u0: &Tensor,
    features: Option<&Tensor>,
    t: usize,
    eps: &Tensor,
    mode: LossMode,
    use_velocity: bool,
) -> Result<f64> {
    let g = Graph::new();
    let vm = VarMap::from_params(&g, &model.params);
    let u_t = crate::diffusion::q_sample(u0, schedule, t, eps)?;
    let cond = match features {
        Some(f) => CondSource::Features(f),
        None => CondSource::Null,
    };
    let eps_hat = model.forward_graph(&g, &vm, &u_t, cond, t)?;
    let eps_leaf = g.leaf(eps.clone());
    let mut loss = loss_simple_var(&eps_leaf, &eps_hat, mode);
    if use_velocity {
        loss = loss.add(&loss_velocity_var(&eps_leaf, &eps_hat));
    }
    Ok(loss.value().item())
}

/// Like [`eval_fixed_loss`] but also returns parameter gradients in
/// parameter order.
pub fn fixed_loss_gradients(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    u0: &Tensor,
    features: Option<&Tensor>,
    t: usize,
    eps: &Tensor,
    mode: LossMode,
    use_velocity: bool,
) -> Result<(f64, Vec<Tensor>)> {
    let g = Graph::new();
    let vm = VarMap::from_params(&g, &model.params);
    let u_t = crate::diffusion::q_sample(u0, schedule, t, eps)?;
    let cond = match features {
        Some(f) => CondSource::Features(f),
        None => CondSource::Null,
    };
    let eps_hat = model.forward_graph(&g, &vm, &u_t, cond, t)?;
    let eps_leaf = g.leaf(eps.clone());
    let mut loss = loss_simple_var(&eps_leaf, &eps_hat, mode);
    if use_velocity {
        loss = loss.add(&loss_velocity_var(&eps_leaf, &eps_hat));
    }
    let value = loss.value().item();
    loss.backward()?;
    Ok((value, vm.grads()))
}
