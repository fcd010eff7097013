//! The Physical Module and the Physical Classifier.
//!
//! The module is a pre-norm AdaLN block grafted after the last transformer
//! block:
//!
//! ```text
//! cond  = [Linear(quant features) ; timestep embedding]
//! shift, scale, gate = Linear(SiLU(cond))          (zero-initialised)
//! h     = LayerNorm(F) * (1 + scale) + shift
//! F_out = F + gate * Exit(MoPA(Entry(h), P̂_c))
//! ```
//!
//! The entry/exit projections move between the backbone width and the MoPA
//! width `29 * head_dim`. With the gate at zero the block is an exact identity.
//! The classifier mean-pools the post-residual tokens and maps them to 29 logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mopa::{mopa_trace, MopaTrace, MopaVars, MopaWeights, NUM_EXPERTS};
use crate::numcore::{Graph, Tensor, Var};
use crate::params::{ParamStore, Session};
use crate::physchema::{QuantitativeProperties, NUM_CATEGORIES, QUANT_FEATURES};

/// Clamp applied to probabilities before taking logs.
pub const BCE_EPS: f64 = 1e-7;
const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysConfig {
    /// Per-expert head dimension.
    pub head_dim: usize,
    /// Width of the quantitative-property embedding.
    pub quant_width: usize,
}

impl Default for PhysConfig {
    fn default() -> Self {
        Self {
            head_dim: 8,
            quant_width: 64,
        }
    }
}

impl PhysConfig {
    pub fn mopa_width(&self) -> usize {
        NUM_EXPERTS * self.head_dim
    }
}

/// Adds the Physical Module and classifier parameters, all trainable.
pub fn init_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    model_dim: usize,
    timestep_dim: usize,
    cfg: &PhysConfig,
    rng: &mut R,
) {
    let width = cfg.mopa_width();
    let cond = cfg.quant_width + timestep_dim;
    let s = |n: usize| 1.0 / (n as f64).sqrt();
    store.insert(
        "phys.quant.w",
        Tensor::randn(&[QUANT_FEATURES, cfg.quant_width], s(QUANT_FEATURES), rng),
        true,
    );
    store.insert("phys.quant.b", Tensor::zeros(&[cfg.quant_width]), true);
    store.insert("phys.ada.w", Tensor::zeros(&[cond, 3 * model_dim]), true);
    store.insert("phys.ada.b", Tensor::zeros(&[3 * model_dim]), true);
    store.insert("phys.in.w", Tensor::randn(&[model_dim, width], s(model_dim), rng), true);
    store.insert("phys.in.b", Tensor::zeros(&[width]), true);
    let m = MopaWeights::random(width, cfg.head_dim, rng);
    for (name, t) in [
        ("q.w", m.q_w),
        ("k.w", m.k_w),
        ("v.w", m.v_w),
        ("o.w", m.o_w),
    ] {
        store.insert(format!("phys.mopa.{name}"), t, true);
    }
    for name in ["q.b", "k.b", "v.b"] {
        store.insert(format!("phys.mopa.{name}"), Tensor::zeros(&[width]), true);
    }
    store.insert("phys.mopa.o.b", Tensor::zeros(&[width]), true);
    store.insert("phys.out.w", Tensor::randn(&[width, model_dim], s(width), rng), true);
    store.insert("phys.out.b", Tensor::zeros(&[model_dim]), true);
    store.insert("cls.w", Tensor::zeros(&[model_dim, NUM_CATEGORIES]), true);
    store.insert("cls.b", Tensor::zeros(&[NUM_CATEGORIES]), true);
}

/// `[1, 10]` row of quantitative features.
pub fn quant_features(q: &QuantitativeProperties) -> Tensor {
    Tensor::from_parts(vec![1, QUANT_FEATURES], q.features().to_vec())
}

/// Linear map of the quantitative features, concatenated with the timestep
/// embedding (`[1, t]`). Returns `[1, quant_width + t]`.
pub fn embed_quantitative(s: &mut Session<'_>, quant: Var, timestep_embedding: Var) -> Result<Var> {
    let q = s.linear(quant, "phys.quant")?;
    s.g.concat_cols(q, timestep_embedding)
}

pub struct ModuleTrace {
    pub output: Var,
    pub mopa: MopaTrace,
    pub ada_gate: Var,
}

fn mopa_vars(s: &mut Session<'_>, head_dim: usize) -> Result<MopaVars> {
    let mut p = |n: &str| s.param(&format!("phys.mopa.{n}"));
    Ok(MopaVars {
        head_dim,
        q_w: p("q.w")?,
        q_b: p("q.b")?,
        k_w: p("k.w")?,
        k_b: p("k.b")?,
        v_w: p("v.w")?,
        v_b: p("v.b")?,
        o_w: p("o.w")?,
        o_b: p("o.b")?,
    })
}

/// AdaLN-modulated MoPA with gated residual. `f` is `[N, D]`, `gate` `[29]`,
/// `cond` `[1, C]`.
pub fn physical_module_forward(
    s: &mut Session<'_>,
    f: Var,
    gate: Var,
    cond: Var,
    cfg: &PhysConfig,
) -> Result<ModuleTrace> {
    let d = *s.g.shape(f).last().unwrap();
    let act = s.g.silu(cond);
    let modulation = s.linear(act, "phys.ada")?;
    if s.g.shape(modulation) != [1, 3 * d] {
        return Err(Error::dim(format!(
            "AdaLN output {:?} does not match feature width {d}",
            s.g.shape(modulation)
        )));
    }
    let modulation = s.g.reshape(modulation, &[3 * d])?;
    let shift = s.g.slice_cols(modulation, 0, d)?;
    let scale = s.g.slice_cols(modulation, d, d)?;
    let ada_gate = s.g.slice_cols(modulation, 2 * d, d)?;
    let h = s.g.layer_norm(f, LN_EPS)?;
    let one_plus = s.g.add_scalar(scale, 1.0);
    let h = s.g.mul_row(h, one_plus)?;
    let h = s.g.add_row(h, shift)?;
    let entry = s.linear(h, "phys.in")?;
    let w = mopa_vars(s, cfg.head_dim)?;
    let mopa = mopa_trace(&mut s.g, entry, gate, &w)?;
    let exit = s.linear(mopa.output, "phys.out")?;
    let gated = s.g.mul_row(exit, ada_gate)?;
    let output = s.g.add(f, gated)?;
    Ok(ModuleTrace {
        output,
        mopa,
        ada_gate,
    })
}

/// Mean-pool over tokens, then a linear map to 29 logits (`[1, 29]`).
pub fn classify(s: &mut Session<'_>, f: Var) -> Result<Var> {
    let pooled = s.g.mean_rows(f)?;
    let d = s.g.shape(pooled)[0];
    let pooled = s.g.reshape(pooled, &[1, d])?;
    s.linear(pooled, "cls")
}

/// Classifier logits and their sigmoids.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOutput {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ClassifierOutput {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probabilities = logits.iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect();
        Self {
            logits,
            probabilities,
        }
    }

    /// Categories predicted active at threshold 0.5 (inclusive).
    pub fn predicted(&self) -> Vec<bool> {
        self.probabilities.iter().map(|&p| p >= 0.5).collect()
    }
}

/// Multi-label binary cross-entropy, summed over categories and averaged over
/// rows: `-Σ_i [t_i ln p_i + (1 - t_i) ln(1 - p_i)]`, with `p` clamped to
/// `[1e-7, 1 - 1e-7]`. `probs` and `target` are `[B, C]`.
pub fn bce_multilabel(g: &mut Graph, probs: Var, target: &Tensor) -> Result<Var> {
    if g.shape(probs) != target.shape() {
        return Err(Error::dim(format!(
            "bce: probabilities {:?} vs target {:?}",
            g.shape(probs),
            target.shape()
        )));
    }
    if target.data().iter().any(|&t| !(0.0..=1.0).contains(&t)) {
        return Err(Error::usage("bce targets must lie in [0, 1]"));
    }
    let rows = target.len() / target.cols();
    let p = g.clamp(probs, BCE_EPS, 1.0 - BCE_EPS);
    let log_p = g.log(p);
    let neg = g.scale(p, -1.0);
    let q = g.add_scalar(neg, 1.0);
    let log_q = g.log(q);
    let t = g.constant(target.clone());
    let not_t = g.constant(target.map(|v| 1.0 - v));
    let a = g.mul(t, log_p)?;
    let b = g.mul(not_t, log_q)?;
    let ll = g.add(a, b)?;
    let total = g.sum(ll);
    Ok(g.scale(total, -1.0 / rows as f64))
}

/// Value-level BCE for already-computed probabilities.
pub fn bce_value(probabilities: &[f64], target: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(&[1, probabilities.len()], probabilities.to_vec())?);
    let t = Tensor::new(&[1, target.len()], target.to_vec())?;
    let l = bce_multilabel(&mut g, p, &t)?;
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        let uniform = bce_value(&[0.5; 29], &[1.0; 29]).unwrap();
        assert!((uniform - 29.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let hand = bce_value(&[0.8, 0.3], &[1.0, 0.0]).unwrap();
        assert!((hand - (-(0.8f64.ln() + 0.7f64.ln()))).abs() < 1e-12);
        assert!((hand - 0.57982).abs() < 1e-4);
        let t: Vec<f64> = (0..29).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let perfect = bce_value(&t, &t).unwrap();
        assert!((0.0..=29.0 * 1e-6).contains(&perfect));
    }

    #[test]
    fn bce_rejects_mismatched_shapes() {
        assert!(bce_value(&[0.5; 3], &[1.0; 2]).is_err());
        assert!(bce_value(&[0.5; 2], &[2.0, 0.0]).is_err());
    }

    #[test]
    fn zero_classifier_gives_half() {
        let out = ClassifierOutput::from_logits(vec![0.0; 29]);
        assert!(out.probabilities.iter().all(|&p| p == 0.5));
        assert!(out.predicted().iter().all(|&p| p));
    }
}
