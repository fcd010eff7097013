//! Training with the diffusion loss plus the scale-normalised classifier loss,
//! evaluation and attention inspection.

mod attention;
mod eval;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{patchify, Model, ToyDiTConfig, Vocab};
use crate::error::{Error, Result};
use crate::mopa::{perturb_with_mode, GatingVector, PerturbMode};
use crate::numcore::{Graph, Tensor, Var};
use crate::params::{GradMode, ParamStore, Session};
use crate::physchema::{to_gating_vector, PhysicalAnnotation, NUM_CATEGORIES};
use crate::physmodule::{bce_multilabel, PhysConfig};
use crate::synthphys::{Dataset, Sample, Split};

pub use attention::{
    attention_pgm, attention_report, localization_ratio, motion_localization, motion_mask, write_pgm,
    AttentionReport, ExpertAttention, LocalizationSummary, MOTION_THRESHOLD,
};
pub use eval::{classification_metrics, evaluate, CategoryMetrics, ClassificationMetrics, EvalOptions, EvalReport};

/// Value-level view of one objective evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_diffusion: f64,
    pub l_pc: f64,
    pub lambda: f64,
    pub l_total: f64,
}

impl LossBundle {
    pub fn new(l_diffusion: f64, l_pc: f64, lambda: f64) -> Result<Self> {
        check_aux(l_pc, lambda)?;
        Ok(Self {
            l_diffusion,
            l_pc,
            lambda,
            l_total: l_diffusion + lambda * l_pc / (1.0 + l_pc),
        })
    }
}

fn check_aux(l_pc: f64, lambda: f64) -> Result<()> {
    if !(l_pc >= 0.0) {
        return Err(Error::Contract(format!("classifier loss must be >= 0, got {l_pc}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Contract(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// `l_diffusion + λ · l_pc / (1 + sg(l_pc))`, where `sg` blocks the gradient.
pub fn combined_loss(g: &mut Graph, l_diffusion: Var, l_pc: Var, lambda: f64) -> Result<Var> {
    check_aux(g.value(l_pc).item(), lambda)?;
    let frozen = g.stop_gradient(l_pc);
    let denom = g.add_scalar(frozen, 1.0);
    let ratio = g.div(l_pc, denom)?;
    let aux = g.scale(ratio, lambda);
    g.add(l_diffusion, aux)
}

/// Which gate the model sees: the annotation's, all ones, or all zeros.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    #[default]
    True,
    AllOnes,
    Zero,
}

impl GateMode {
    pub fn gate(self, a: &PhysicalAnnotation) -> GatingVector {
        match self {
            GateMode::True => to_gating_vector(&a.qualitative),
            GateMode::AllOnes => GatingVector::ones(),
            GateMode::Zero => GatingVector::zeros(),
        }
    }
}

impl FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true" => Ok(GateMode::True),
            "all-ones" => Ok(GateMode::AllOnes),
            "zero" => Ok(GateMode::Zero),
            _ => Err(Error::usage(format!("unknown gate '{s}' (expected all-ones, true or zero)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub perturb_prob: f64,
    pub perturb_mode: PerturbMode,
    pub seed: u64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub val_every: usize,
    /// Validation clips scored per evaluation; 0 means all.
    pub val_limit: usize,
    /// Gate fed to the model during training.
    pub gate: GateMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 2e-5,
            batch_size: 8,
            lambda: 0.1,
            perturb_prob: 0.2,
            perturb_mode: PerturbMode::PerPosition,
            seed: 0,
            lora_rank: 4,
            lora_alpha: 16.0,
            val_every: 50,
            val_limit: 64,
            gate: GateMode::True,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::usage(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.perturb_prob) {
            return bad("perturb_prob must lie in [0, 1]");
        }
        if self.val_every == 0 {
            return bad("val_every must be >= 1");
        }
        Ok(())
    }
}

/// Adam with bias correction over the trainable parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update; parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads {
            if !store.param(name).is_some_and(|p| p.trainable) {
                continue;
            }
            let p = store.value_mut(name)?.data_mut();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One training example with its drawn noise and gate.
pub struct Draw<'a> {
    pub sample: &'a Sample,
    pub t: usize,
    pub eps: Tensor,
    pub gate: GatingVector,
}

pub struct Objective {
    pub total: Var,
    pub l_diffusion: Var,
    pub l_pc: Option<Var>,
}

/// Records the batch objective: mean noise MSE plus, with a classifier, the
/// normalised BCE against the clean category targets.
pub fn batch_objective(model: &Model, s: &mut Session<'_>, batch: &[Draw<'_>], lambda: f64) -> Result<Objective> {
    if batch.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let mut mse_sum: Option<Var> = None;
    let mut logits: Option<Var> = None;
    let mut targets = Vec::with_capacity(batch.len() * NUM_CATEGORIES);
    for d in batch {
        let a = &d.sample.annotation;
        let x_t = model.schedule().q_sample(&d.sample.clip, d.t, &d.eps);
        let cond = model.conditioning(&a.caption, &a.physical_description, d.gate, a.quantitative);
        let out = model.forward(s, &x_t, d.t, &cond)?;
        let target = s.g.constant(patchify(&d.eps, model.config.patch)?);
        let mse = s.g.mse(out.eps_tokens, target)?;
        mse_sum = Some(match mse_sum {
            Some(acc) => s.g.add(acc, mse)?,
            None => mse,
        });
        if let Some(l) = out.logits {
            logits = Some(match logits {
                Some(acc) => s.g.concat_rows(acc, l)?,
                None => l,
            });
            targets.extend(a.qualitative.as_array().iter().map(|&b| f64::from(u8::from(b))));
        }
    }
    let l_diffusion = s.g.scale(mse_sum.expect("batch is nonempty"), 1.0 / batch.len() as f64);
    let (total, l_pc) = match logits {
        Some(l) => {
            let probs = s.g.sigmoid(l)?;
            let target = Tensor::new(&[batch.len(), NUM_CATEGORIES], targets)?;
            let l_pc = bce_multilabel(&mut s.g, probs, &target)?;
            (combined_loss(&mut s.g, l_diffusion, l_pc, lambda)?, Some(l_pc))
        }
        None => (l_diffusion, None),
    };
    Ok(Objective {
        total,
        l_diffusion,
        l_pc,
    })
}

/// One row of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepMetrics {
    pub step: usize,
    pub l_diffusion: f64,
    pub l_pc: f64,
    pub l_total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValMetrics {
    pub step: usize,
    pub val_diffusion: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub best_step: usize,
    pub best_val: f64,
    pub metrics_path: PathBuf,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.ckpt";

const VAL_SEED_SALT: u64 = 0x7661_6c69_6461_7465;

/// Fresh model for `data`: vocabulary from the training split, base weights
/// from `cfg.seed`, LoRA adapters added.
pub fn new_model(data: &Dataset, dit: ToyDiTConfig, phys: PhysConfig, cfg: &TrainConfig) -> Result<Model> {
    let vocab = Vocab::build(data.split(Split::Train).flat_map(|s| {
        [s.annotation.caption.as_str(), s.annotation.physical_description.as_str()]
    }));
    let mut model = Model::new(dit, phys, vocab, cfg.seed)?;
    model.add_lora(cfg.lora_rank, cfg.lora_alpha, cfg.seed)?;
    Ok(model)
}

/// Noise and timestep for validation clip `index`, independent of training draws.
pub fn paired_noise(model: &Model, seed: u64, index: usize) -> (usize, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ VAL_SEED_SALT);
    rng.set_stream(index as u64);
    model.draw_noise(&mut rng)
}

/// Mean validation noise MSE with paired noise, under `gate`.
pub fn validation_loss(model: &Model, val: &[&Sample], seed: u64, gate: GateMode) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    let mut total = 0.0;
    for (i, s) in val.iter().enumerate() {
        let (t, eps) = paired_noise(model, seed, i);
        let a = &s.annotation;
        let cond = model.conditioning(&a.caption, &a.physical_description, gate.gate(a), a.quantitative);
        total += model.diffusion_loss_at(&s.clip, t, &eps, &cond)?;
    }
    Ok(total / val.len() as f64)
}

fn limited(data: &Dataset, split: Split, limit: usize) -> Vec<&Sample> {
    let v: Vec<&Sample> = data.split(split).collect();
    let n = if limit == 0 { v.len() } else { limit.min(v.len()) };
    v[..n].to_vec()
}

fn json_line<T: Serialize>(w: &mut impl Write, path: &Path, row: &T) -> Result<()> {
    let mut line = serde_json::to_vec(row).expect("metrics serialize");
    line.push(b'\n');
    w.write_all(&line).map_err(|e| Error::io(path, e))
}

/// Trains the trainable parameters of `model` in place, writing the metrics
/// log, validation log and checkpoints into `out`.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    data.manifest.check_splits()?;
    let train_set: Vec<&Sample> = data.split(Split::Train).collect();
    if train_set.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let val_set = limited(data, Split::Val, cfg.val_limit);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let val_path = out.join(VAL_FILE);
    let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| Error::io(p, e));
    let mut metrics = open(&metrics_path)?;
    let mut val_log = open(&val_path)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate);
    let best_checkpoint = out.join(BEST_CHECKPOINT);
    let mut best: Option<(usize, f64)> = None;

    for step in 1..=cfg.steps {
        let batch: Vec<Draw<'_>> = (0..cfg.batch_size)
            .map(|_| {
                let sample = train_set[rng.random_range(0..train_set.len())];
                let (t, eps) = model.draw_noise(&mut rng);
                let base = cfg.gate.gate(&sample.annotation);
                let gate = perturb_with_mode(&base, cfg.perturb_prob, cfg.perturb_mode, &mut rng)?;
                Ok(Draw { sample, t, eps, gate })
            })
            .collect::<Result<_>>()?;

        let step_result = (|| {
            let mut s = model.session(GradMode::Trainable);
            let obj = batch_objective(model, &mut s, &batch, cfg.lambda)?;
            let l_diffusion = s.g.value(obj.l_diffusion).item();
            let l_pc = obj.l_pc.map_or(0.0, |v| s.g.value(v).item());
            let l_total = s.g.value(obj.total).item();
            let row = StepMetrics {
                step,
                l_diffusion,
                l_pc,
                l_total,
            };
            if ![l_diffusion, l_pc, l_total].iter().all(|v| v.is_finite()) {
                Ok((row, None))
            } else {
                let g = s.g.backward(obj.total)?;
                Ok((row, Some(s.param_grads(&g))))
            }
        })();
        // overflow inside the forward pass surfaces as a numeric error; it is a non-finite loss all the same
        let (row, grads) = match step_result {
            Err(Error::Numeric(_)) => (
                StepMetrics {
                    step,
                    l_diffusion: f64::NAN,
                    l_pc: f64::NAN,
                    l_total: f64::NAN,
                },
                None,
            ),
            other => other?,
        };
        json_line(&mut metrics, &metrics_path, &row)?;
        let grads = match grads {
            Some(g) if g.values().all(|t| t.all_finite()) => g,
            _ => {
                metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
                let checkpoint = out.join(LAST_GOOD_CHECKPOINT);
                model.save(&checkpoint)?;
                return Err(Error::NonFiniteLoss { step, checkpoint });
            }
        };
        opt.step(&mut model.params, &grads)?;

        if !val_set.is_empty() && (step % cfg.val_every == 0 || step == cfg.steps) {
            let v = validation_loss(model, &val_set, cfg.seed, GateMode::True)?;
            json_line(&mut val_log, &val_path, &ValMetrics { step, val_diffusion: v })?;
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((step, v));
                model.save(&best_checkpoint)?;
            }
        }
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    val_log.flush().map_err(|e| Error::io(&val_path, e))?;
    let final_checkpoint = out.join(FINAL_CHECKPOINT);
    model.save(&final_checkpoint)?;
    if best.is_none() {
        model.save(&best_checkpoint)?;
    }
    let (best_step, best_val) = best.unwrap_or((cfg.steps, f64::NAN));
    Ok(TrainSummary {
        steps: cfg.steps,
        best_step,
        best_val,
        metrics_path,
        best_checkpoint,
        final_checkpoint,
    })
}

/// Reads a metrics log back, checking every row.
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: format!("{}:{}", path.display(), i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_loss_examples() {
        assert_eq!(LossBundle::new(0.7, 0.0, 0.3).unwrap().l_total, 0.7);
        assert_eq!(LossBundle::new(0.25, 1.0, 1.0).unwrap().l_total, 0.75);
        assert!(matches!(LossBundle::new(0.1, -1.0, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn auxiliary_term_bounded_and_monotone() {
        let lambda = 0.1;
        let mut prev = -1.0;
        for i in 0..=1000 {
            let l_pc = i as f64 * 0.05;
            let aux = LossBundle::new(0.0, l_pc, lambda).unwrap().l_total;
            assert!(aux < lambda);
            assert!(aux > prev);
            prev = aux;
        }
    }

    #[test]
    fn graph_and_value_forms_agree() {
        let mut g = Graph::new();
        let d = g.leaf(Tensor::scalar(0.4), true);
        let p = g.leaf(Tensor::scalar(2.5), true);
        let l = combined_loss(&mut g, d, p, 0.2).unwrap();
        let want = LossBundle::new(0.4, 2.5, 0.2).unwrap().l_total;
        assert!((g.value(l).item() - want).abs() < 1e-15);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(d).unwrap().item(), 1.0);
        assert!((grads.get(p).unwrap().item() - 0.2 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, -2.0]), true);
        store.insert("frozen", Tensor::vector(vec![5.0]), false);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::vector(vec![3.0, -0.5]));
        grads.insert("frozen".to_string(), Tensor::vector(vec![1.0]));
        let mut opt = Adam::new(0.01);
        opt.step(&mut store, &grads).unwrap();
        let w = store.get("w").unwrap().data();
        assert!((w[0] - 0.99).abs() < 1e-9 && (w[1] + 1.99).abs() < 1e-9);
        assert_eq!(store.get("frozen").unwrap().data(), &[5.0]);
    }

    #[test]
    fn gate_mode_parsing() {
        assert_eq!("all-ones".parse::<GateMode>().unwrap(), GateMode::AllOnes);
        assert!("ones".parse::<GateMode>().is_err());
    }
}
