//! Toy text-conditioned diffusion transformer hosting the Physical Module.
//!
//! Video tokens come from non-overlapping spatio-temporal patches; caption and
//! physical-description tokens are appended to the same sequence and attend
//! jointly with the video tokens. Each block is pre-norm attention + MLP with
//! timestep AdaLN modulation. After the last block the video tokens pass
//! through the Physical Module, the classifier reads the result, and a final
//! modulated norm + linear map predicts the noise per patch.
//!
//! All base weights are random (seeded) and frozen; only LoRA factors, the
//! Physical Module and the classifier are trainable.

pub mod diffusion;
pub mod text;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::mopa::GatingVector;
use crate::numcore::{Tensor, Var};
use crate::params::{GradMode, ParamStore, Session};
use crate::physchema::QuantitativeProperties;
use crate::physmodule::{self, ClassifierOutput, ModuleTrace, PhysConfig};

pub use diffusion::Schedule;
pub use text::{concat_conditioning, TextCondition, Vocab};

const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyDiTConfig {
    pub n_blocks: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    /// Patch extent as (frames, height, width).
    pub patch: [usize; 3],
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub max_text_len: usize,
}

impl Default for ToyDiTConfig {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            model_dim: 128,
            n_heads: 4,
            mlp_ratio: 2,
            patch: [2, 4, 4],
            frames: 8,
            height: 16,
            width: 16,
            diffusion_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            max_text_len: 64,
        }
    }
}

impl ToyDiTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::usage(m));
        if self.model_dim == 0 || self.n_heads == 0 || !self.model_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "model_dim {} must be a positive multiple of n_heads {}",
                self.model_dim, self.n_heads
            ));
        }
        if self.diffusion_steps == 0 {
            return bad("diffusion_steps must be >= 1".into());
        }
        if self.mlp_ratio == 0 || self.max_text_len == 0 {
            return bad("mlp_ratio and max_text_len must be >= 1".into());
        }
        let dims = [self.frames, self.height, self.width];
        for (d, p) in dims.iter().zip(self.patch) {
            if p == 0 || *d == 0 || d % p != 0 {
                return bad(format!("clip {dims:?} is not divisible by patch {:?}", self.patch));
            }
        }
        Ok(())
    }

    pub fn clip_shape(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }

    pub fn grid(&self) -> [usize; 3] {
        [
            self.frames / self.patch[0],
            self.height / self.patch[1],
            self.width / self.patch[2],
        ]
    }

    pub fn num_tokens(&self) -> usize {
        self.grid().iter().product()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch.iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// `[frames, height, width]` clip to `[tokens, patch_dim]`; tokens ordered
/// (time, row, column), entries within a patch likewise.
pub fn patchify(clip: &Tensor, patch: [usize; 3]) -> Result<Tensor> {
    let s = clip.shape();
    if s.len() != 3 || s.iter().zip(patch).any(|(d, p)| p == 0 || d % p != 0) {
        return Err(Error::dim(format!("clip {s:?} incompatible with patch {patch:?}")));
    }
    let (f, h, w) = (s[0], s[1], s[2]);
    let [pt, ph, pw] = patch;
    let (gt, gh, gw) = (f / pt, h / ph, w / pw);
    let pd = pt * ph * pw;
    let src = clip.data();
    let mut out = vec![0.0; clip.len()];
    for a in 0..gt {
        for b in 0..gh {
            for c in 0..gw {
                let tok = (a * gh + b) * gw + c;
                for dt in 0..pt {
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let k = (dt * ph + dy) * pw + dx;
                            let (ft, y, x) = (a * pt + dt, b * ph + dy, c * pw + dx);
                            out[tok * pd + k] = src[(ft * h + y) * w + x];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![gt * gh * gw, pd], out))
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, clip_shape: [usize; 3], patch: [usize; 3]) -> Result<Tensor> {
    let [f, h, w] = clip_shape;
    let [pt, ph, pw] = patch;
    let (gt, gh, gw) = (f / pt, h / ph, w / pw);
    let pd = pt * ph * pw;
    if tokens.shape() != [gt * gh * gw, pd] {
        return Err(Error::dim(format!(
            "tokens {:?} do not tile clip {clip_shape:?} with patch {patch:?}",
            tokens.shape()
        )));
    }
    let src = tokens.data();
    let mut out = vec![0.0; f * h * w];
    for a in 0..gt {
        for b in 0..gh {
            for c in 0..gw {
                let tok = (a * gh + b) * gw + c;
                for dt in 0..pt {
                    for dy in 0..ph {
                        for dx in 0..pw {
                            let k = (dt * ph + dy) * pw + dx;
                            let (ft, y, x) = (a * pt + dt, b * ph + dy, c * pw + dx);
                            out[(ft * h + y) * w + x] = src[tok * pd + k];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![f, h, w], out))
}

/// Sinusoidal embedding of a timestep, `[1, dim]`.
pub fn timestep_embedding(t: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Tensor::from_parts(vec![1, dim], out)
}

/// Everything one forward pass needs besides the noisy clip and timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub text: Vec<usize>,
    pub gate: GatingVector,
    pub quant: QuantitativeProperties,
}

pub struct ForwardOut {
    /// Predicted noise in token layout, `[tokens, patch_dim]`.
    pub eps_tokens: Var,
    /// Classifier logits `[1, 29]`, when the classifier is enabled.
    pub logits: Option<Var>,
    pub module: Option<ModuleTrace>,
}

/// Parameter overhead of the LoRA adapters.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraReport {
    pub adapted_linears: usize,
    pub added_parameters: usize,
    pub trainable_parameters: usize,
    pub total_parameters: usize,
}

impl LoraReport {
    pub fn trainable_fraction(&self) -> f64 {
        self.trainable_parameters as f64 / self.total_parameters as f64
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    dit: ToyDiTConfig,
    phys: PhysConfig,
    lora: Option<LoraConfig>,
    physical_module: bool,
    classifier: bool,
    vocab: Vocab,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ToyDiTConfig,
    pub phys: PhysConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
    pub lora: Option<LoraConfig>,
    pub physical_module: bool,
    pub classifier: bool,
    schedule: Schedule,
}

const PHYS_SEED_SALT: u64 = 0x5048_5953_4d4f_4455;
const LORA_SEED_SALT: u64 = 0x4c4f_5241_4144_4150;

fn linear_params<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    store.insert(
        format!("{prefix}.w"),
        Tensor::randn(&[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), rng),
        false,
    );
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[fan_out]), false);
}

impl Model {
    /// Backbone with the Physical Module and classifier. Base weights depend
    /// only on `seed`, so models with and without the module share them.
    pub fn new(config: ToyDiTConfig, phys: PhysConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if phys.head_dim == 0 || phys.quant_width == 0 {
            return Err(Error::usage("head_dim and quant_width must be >= 1"));
        }
        let schedule = Schedule::linear(config.diffusion_steps, config.beta_start, config.beta_end)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim;
        let n = config.num_tokens();
        linear_params(&mut params, "patch", config.patch_dim(), d, &mut rng);
        params.insert("video.pos", Tensor::randn(&[n, d], 0.5, &mut rng), false);
        params.insert("text.embed", Tensor::randn(&[vocab.len(), d], 1.0, &mut rng), false);
        params.insert("text.pos", Tensor::randn(&[config.max_text_len, d], 0.5, &mut rng), false);
        linear_params(&mut params, "t.fc1", d, d, &mut rng);
        linear_params(&mut params, "t.fc2", d, d, &mut rng);
        for i in 0..config.n_blocks {
            let p = format!("blocks.{i}");
            params.insert(
                format!("{p}.ada.w"),
                Tensor::randn(&[d, 6 * d], 0.02 / (d as f64).sqrt(), &mut rng),
                false,
            );
            // gate chunks start at one so each frozen block acts as a plain residual block
            let mut b = vec![0.0; 6 * d];
            b[2 * d..3 * d].fill(1.0);
            b[5 * d..6 * d].fill(1.0);
            params.insert(format!("{p}.ada.b"), Tensor::vector(b), false);
            linear_params(&mut params, &format!("{p}.attn.qkv"), d, 3 * d, &mut rng);
            linear_params(&mut params, &format!("{p}.attn.out"), d, d, &mut rng);
            linear_params(&mut params, &format!("{p}.mlp.fc1"), d, config.mlp_ratio * d, &mut rng);
            linear_params(&mut params, &format!("{p}.mlp.fc2"), config.mlp_ratio * d, d, &mut rng);
        }
        params.insert(
            "final.ada.w",
            Tensor::randn(&[d, 2 * d], 0.02 / (d as f64).sqrt(), &mut rng),
            false,
        );
        params.insert("final.ada.b", Tensor::zeros(&[2 * d]), false);
        linear_params(&mut params, "final.proj", d, config.patch_dim(), &mut rng);

        let mut prng = ChaCha8Rng::seed_from_u64(seed ^ PHYS_SEED_SALT);
        physmodule::init_params(&mut params, d, d, &phys, &mut prng);
        Ok(Self {
            config,
            phys,
            vocab,
            params,
            lora: None,
            physical_module: true,
            classifier: true,
            schedule,
        })
    }

    /// Backbone alone: no Physical Module, no classifier.
    pub fn plain(config: ToyDiTConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        let mut m = Self::new(config, PhysConfig::default(), vocab, seed)?;
        m.remove_physical_module();
        m.remove_classifier();
        Ok(m)
    }

    pub fn remove_physical_module(&mut self) {
        self.physical_module = false;
        self.retain(|n| !n.starts_with("phys."));
    }

    pub fn remove_classifier(&mut self) {
        self.classifier = false;
        self.retain(|n| !n.starts_with("cls."));
    }

    fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        let mut next = ParamStore::new();
        for (n, p) in self.params.iter().filter(|(n, _)| keep(n)) {
            next.insert(n.clone(), p.value.as_ref().clone(), p.trainable);
        }
        self.params = next;
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Prefixes of the attention and MLP linears that receive adapters.
    pub fn lora_targets(&self) -> Vec<String> {
        (0..self.config.n_blocks)
            .flat_map(|i| {
                ["attn.qkv", "attn.out", "mlp.fc1", "mlp.fc2"]
                    .into_iter()
                    .map(move |l| format!("blocks.{i}.{l}"))
            })
            .collect()
    }

    /// Adds `A: [in, r]` (Gaussian) and `B: [r, out]` (zero) to every target
    /// linear and freezes the base weights.
    pub fn add_lora(&mut self, rank: usize, alpha: f64, seed: u64) -> Result<LoraReport> {
        if rank == 0 {
            return Err(Error::usage("LoRA rank must be >= 1"));
        }
        if self.lora.is_some() {
            return Err(Error::usage("model already has LoRA adapters"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ LORA_SEED_SALT);
        let targets = self.lora_targets();
        let mut added = 0;
        for prefix in &targets {
            let w = self
                .params
                .get(&format!("{prefix}.w"))
                .ok_or_else(|| Error::usage(format!("missing linear {prefix}")))?;
            let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
            let a = Tensor::randn(&[fan_in, rank], 1.0 / (fan_in as f64).sqrt(), &mut rng);
            self.params.insert(format!("{prefix}.lora_a"), a, true);
            self.params.insert(format!("{prefix}.lora_b"), Tensor::zeros(&[rank, fan_out]), true);
            added += rank * (fan_in + fan_out);
        }
        self.lora = Some(LoraConfig { rank, alpha });
        Ok(LoraReport {
            adapted_linears: targets.len(),
            added_parameters: added,
            trainable_parameters: self.params.num_trainable_scalars(),
            total_parameters: self.params.num_scalars(),
        })
    }

    /// Names and sizes of every trainable parameter.
    pub fn trainable_parameters(&self) -> Vec<(String, usize)> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, p)| (n.clone(), p.value.len()))
            .collect()
    }

    pub fn session(&self, mode: GradMode) -> Session<'_> {
        Session::new(&self.params, mode, self.lora.map_or(0.0, |l| l.scale()))
    }

    /// Conditioning for an annotation: tokenized text, binary gate, properties.
    pub fn conditioning(&self, caption: &str, description: &str, gate: GatingVector, quant: QuantitativeProperties) -> Conditioning {
        let text = concat_conditioning(&self.vocab, caption, description, self.config.max_text_len);
        Conditioning {
            text: text.ids,
            gate,
            quant,
        }
    }

    fn check_inputs(&self, x_t: &Tensor, t: usize, cond: &Conditioning) -> Result<()> {
        if x_t.shape() != self.config.clip_shape() {
            return Err(Error::dim(format!(
                "clip shape {:?}, model expects {:?}",
                x_t.shape(),
                self.config.clip_shape()
            )));
        }
        if t >= self.config.diffusion_steps {
            return Err(Error::usage(format!(
                "timestep {t} outside [0, {})",
                self.config.diffusion_steps
            )));
        }
        if cond.text.len() > self.config.max_text_len {
            return Err(Error::dim(format!(
                "{} text tokens exceed max_text_len {}",
                cond.text.len(),
                self.config.max_text_len
            )));
        }
        if let Some(bad) = cond.text.iter().find(|&&id| id >= self.vocab.len()) {
            return Err(Error::dim(format!("token id {bad} outside vocabulary of {}", self.vocab.len())));
        }
        Ok(())
    }

    fn modulated_norm(s: &mut Session<'_>, x: Var, shift: Var, scale: Var) -> Result<Var> {
        let h = s.g.layer_norm(x, LN_EPS)?;
        let one_plus = s.g.add_scalar(scale, 1.0);
        let h = s.g.mul_row(h, one_plus)?;
        s.g.add_row(h, shift)
    }

    fn block(&self, s: &mut Session<'_>, i: usize, x: Var, c_act: Var) -> Result<Var> {
        let d = self.config.model_dim;
        let p = format!("blocks.{i}");
        let m = s.linear(c_act, &format!("{p}.ada"))?;
        let m = s.g.reshape(m, &[6 * d])?;
        let mut chunk = |k: usize| s.g.slice_cols(m, k * d, d);
        let (shift1, scale1, gate1) = (chunk(0)?, chunk(1)?, chunk(2)?);
        let (shift2, scale2, gate2) = (chunk(3)?, chunk(4)?, chunk(5)?);

        let h = Self::modulated_norm(s, x, shift1, scale1)?;
        let qkv = s.linear(h, &format!("{p}.attn.qkv"))?;
        let q = s.g.slice_cols(qkv, 0, d)?;
        let k = s.g.slice_cols(qkv, d, d)?;
        let v = s.g.slice_cols(qkv, 2 * d, d)?;
        let heads = self.config.n_heads;
        let qh = s.g.split_heads(q, heads)?;
        let kh = s.g.split_heads(k, heads)?;
        let vh = s.g.split_heads(v, heads)?;
        let scores = s.g.batch_matmul(qh, kh, false, true)?;
        let scores = s.g.scale(scores, 1.0 / ((d / heads) as f64).sqrt());
        let att = s.g.softmax(scores)?;
        let o = s.g.batch_matmul(att, vh, false, false)?;
        let o = s.g.merge_heads(o)?;
        let o = s.linear(o, &format!("{p}.attn.out"))?;
        let o = s.g.mul_row(o, gate1)?;
        let x = s.g.add(x, o)?;

        let h = Self::modulated_norm(s, x, shift2, scale2)?;
        let h = s.linear(h, &format!("{p}.mlp.fc1"))?;
        let h = s.g.gelu(h);
        let h = s.linear(h, &format!("{p}.mlp.fc2"))?;
        let h = s.g.mul_row(h, gate2)?;
        s.g.add(x, h)
    }

    /// Records the full network on `s`.
    pub fn forward(&self, s: &mut Session<'_>, x_t: &Tensor, t: usize, cond: &Conditioning) -> Result<ForwardOut> {
        self.check_inputs(x_t, t, cond)?;
        let d = self.config.model_dim;
        let n = self.config.num_tokens();

        let patches = s.g.constant(patchify(x_t, self.config.patch)?);
        let vid = s.linear(patches, "patch")?;
        let pos = s.param("video.pos")?;
        let mut x = s.g.add(vid, pos)?;
        if !cond.text.is_empty() {
            let table = s.param("text.embed")?;
            let emb = s.g.gather_rows(table, &cond.text)?;
            let tpos = s.param("text.pos")?;
            let tpos = s.g.slice_rows(tpos, 0, cond.text.len())?;
            let txt = s.g.add(emb, tpos)?;
            x = s.g.concat_rows(x, txt)?;
        }

        let temb = s.g.constant(timestep_embedding(t, d));
        let c = s.linear(temb, "t.fc1")?;
        let c = s.g.silu(c);
        let c = s.linear(c, "t.fc2")?;
        let c_act = s.g.silu(c);

        for i in 0..self.config.n_blocks {
            x = self.block(s, i, x, c_act)?;
        }
        let mut f = if cond.text.is_empty() { x } else { s.g.slice_rows(x, 0, n)? };

        let module = if self.physical_module {
            let q = s.g.constant(physmodule::quant_features(&cond.quant));
            let gate = s.g.constant(cond.gate.to_tensor());
            let emb = physmodule::embed_quantitative(s, q, c)?;
            let tr = physmodule::physical_module_forward(s, f, gate, emb, &self.phys)?;
            f = tr.output;
            Some(tr)
        } else {
            None
        };
        let logits = if self.classifier {
            Some(physmodule::classify(s, f)?)
        } else {
            None
        };

        let m = s.linear(c_act, "final.ada")?;
        let m = s.g.reshape(m, &[2 * d])?;
        let shift = s.g.slice_cols(m, 0, d)?;
        let scale = s.g.slice_cols(m, d, d)?;
        let h = Self::modulated_norm(s, f, shift, scale)?;
        let eps_tokens = s.linear(h, "final.proj")?;
        Ok(ForwardOut {
            eps_tokens,
            logits,
            module,
        })
    }

    /// Predicted noise for `x_t`, in clip layout.
    pub fn denoise(&self, x_t: &Tensor, t: usize, cond: &Conditioning) -> Result<Tensor> {
        let mut s = self.session(GradMode::Off);
        let out = self.forward(&mut s, x_t, t, cond)?;
        unpatchify(s.g.value(out.eps_tokens), self.config.clip_shape(), self.config.patch)
    }

    pub fn classify(&self, x_t: &Tensor, t: usize, cond: &Conditioning) -> Result<ClassifierOutput> {
        let mut s = self.session(GradMode::Off);
        let out = self.forward(&mut s, x_t, t, cond)?;
        let logits = out
            .logits
            .ok_or_else(|| Error::usage("model has no physical classifier"))?;
        Ok(ClassifierOutput::from_logits(s.g.value(logits).data().to_vec()))
    }

    /// Noise-prediction MSE at a fixed timestep and noise draw.
    pub fn diffusion_loss_at(&self, clip: &Tensor, t: usize, eps: &Tensor, cond: &Conditioning) -> Result<f64> {
        let x_t = self.schedule.q_sample(clip, t, eps);
        let mut s = self.session(GradMode::Off);
        let out = self.forward(&mut s, &x_t, t, cond)?;
        let target = s.g.constant(patchify(eps, self.config.patch)?);
        let l = s.g.mse(out.eps_tokens, target)?;
        Ok(s.g.value(l).item())
    }

    /// Draws `t ~ U[0, T)` and `ε ~ N(0, I)` from `rng`, then evaluates the MSE.
    pub fn diffusion_loss<R: Rng + ?Sized>(&self, clip: &Tensor, cond: &Conditioning, rng: &mut R) -> Result<f64> {
        let (t, eps) = self.draw_noise(rng);
        self.diffusion_loss_at(clip, t, &eps, cond)
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Tensor) {
        let t = rng.random_range(0..self.config.diffusion_steps);
        let eps = Tensor::randn(&self.config.clip_shape(), 1.0, rng);
        (t, eps)
    }

    /// Ancestral sampling over `steps` respaced timesteps, clamped to [-1, 1].
    pub fn sample<R: Rng + ?Sized>(&self, cond: &Conditioning, steps: usize, rng: &mut R) -> Result<Tensor> {
        let ts = self.schedule.respaced(steps)?;
        let shape = self.config.clip_shape();
        let mut x = Tensor::randn(&shape, 1.0, rng);
        for i in (0..ts.len()).rev() {
            let t = ts[i];
            let ab = self.schedule.alpha_bars[t];
            let ab_prev = if i == 0 { 1.0 } else { self.schedule.alpha_bars[ts[i - 1]] };
            let eps = self.denoise(&x, t, cond)?;
            let (mean, std) = diffusion::posterior_step(x.data(), eps.data(), ab, ab_prev);
            let next = if i > 0 {
                mean.iter()
                    .map(|m| m + std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            } else {
                mean
            };
            x = Tensor::new(&shape, next)?;
        }
        Ok(x.map(|v| v.clamp(-1.0, 1.0)))
    }

    pub fn meta(&self) -> serde_json::Value {
        serde_json::to_value(ModelMeta {
            dit: self.config.clone(),
            phys: self.phys.clone(),
            lora: self.lora,
            physical_module: self.physical_module,
            classifier: self.classifier,
            vocab: self.vocab.clone(),
        })
        .expect("model metadata serializes")
    }

    pub fn from_parts(params: ParamStore, meta: &serde_json::Value) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_value(meta.clone()).map_err(|e| Error::Parse {
            path: "checkpoint.meta".into(),
            message: e.to_string(),
        })?;
        meta.dit.validate()?;
        let schedule = Schedule::linear(meta.dit.diffusion_steps, meta.dit.beta_start, meta.dit.beta_end)?;
        Ok(Self {
            config: meta.dit,
            phys: meta.phys,
            vocab: meta.vocab,
            params,
            lora: meta.lora,
            physical_module: meta.physical_module,
            classifier: meta.classifier,
            schedule,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params, &self.meta())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        Self::from_parts(params, &meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_round_trip() {
        let data: Vec<f64> = (0..2 * 4 * 4).map(f64::from).collect();
        let clip = Tensor::new(&[2, 4, 4], data).unwrap();
        let tok = patchify(&clip, [1, 2, 2]).unwrap();
        assert_eq!(tok.shape(), &[8, 4]);
        // first token is the top-left 2x2 block of frame 0
        assert_eq!(&tok.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(unpatchify(&tok, [2, 4, 4], [1, 2, 2]).unwrap(), clip);
    }

    #[test]
    fn default_config_geometry() {
        let c = ToyDiTConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_tokens(), 64);
        assert_eq!(c.patch_dim(), 32);
        let bad = ToyDiTConfig {
            n_heads: 3,
            ..ToyDiTConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn timestep_embedding_layout() {
        let e = timestep_embedding(0, 8);
        assert_eq!(e.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
