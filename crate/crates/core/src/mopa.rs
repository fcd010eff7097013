//! Mixture-of-Physical-Experts Attention.
//!
//! Multi-head self-attention with exactly one head per qualitative category.
//! After softmax-weighted value aggregation, head `i`'s output slice is scaled
//! by gate entry `i`; the gated heads are concatenated and passed through the
//! output linear map. There is no rescaling by the number of active heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};
use crate::physchema::NUM_CATEGORIES;

/// One attention head per category.
pub const NUM_EXPERTS: usize = NUM_CATEGORIES;

/// Dampened value for a perturbed active entry.
pub const PERTURBED_ACTIVE: f64 = 0.1;
/// Value for a perturbed inactive entry.
pub const PERTURBED_INACTIVE: f64 = 1.0;

/// Per-expert gate values in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GatingVector([f64; NUM_EXPERTS]);

impl GatingVector {
    pub fn from_array(values: [f64; NUM_EXPERTS]) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::usage(format!("gate entry {i} = {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_EXPERTS] = values.try_into().map_err(|_| {
            Error::dim(format!("gate has {} entries, expected {NUM_EXPERTS}", values.len()))
        })?;
        Self::from_array(arr)
    }

    pub fn ones() -> Self {
        Self([1.0; NUM_EXPERTS])
    }

    pub fn zeros() -> Self {
        Self([0.0; NUM_EXPERTS])
    }

    pub fn values(&self) -> &[f64; NUM_EXPERTS] {
        &self.0
    }

    pub fn is_binary(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.0.to_vec())
    }
}

/// Granularity of the random gate perturbation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Each entry flips independently with the given probability.
    #[default]
    PerPosition,
    /// One draw decides whether every entry of the sample flips.
    PerSample,
}

/// Training-time gate perturbation: with probability `prob`, an active entry
/// becomes 0.1 and an inactive entry becomes 1.0.
pub fn perturb<R: Rng + ?Sized>(p_c: &GatingVector, prob: f64, rng: &mut R) -> Result<GatingVector> {
    perturb_with_mode(p_c, prob, PerturbMode::PerPosition, rng)
}

pub fn perturb_with_mode<R: Rng + ?Sized>(
    p_c: &GatingVector,
    prob: f64,
    mode: PerturbMode,
    rng: &mut R,
) -> Result<GatingVector> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::usage(format!("perturbation probability {prob} outside [0, 1]")));
    }
    if !p_c.is_binary() {
        return Err(Error::usage("perturbation input must be a binary gate"));
    }
    let flip = |v: f64| if v == 1.0 { PERTURBED_ACTIVE } else { PERTURBED_INACTIVE };
    let mut out = p_c.0;
    match mode {
        PerturbMode::PerPosition => {
            for v in out.iter_mut() {
                if rng.random::<f64>() < prob {
                    *v = flip(*v);
                }
            }
        }
        PerturbMode::PerSample => {
            if rng.random::<f64>() < prob {
                out.iter_mut().for_each(|v| *v = flip(*v));
            }
        }
    }
    Ok(GatingVector(out))
}

/// Projection weights of a MoPA layer. Linear maps are stored `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MopaWeights {
    pub head_dim: usize,
    pub q_w: Tensor,
    pub q_b: Tensor,
    pub k_w: Tensor,
    pub k_b: Tensor,
    pub v_w: Tensor,
    pub v_b: Tensor,
    pub o_w: Tensor,
    pub o_b: Tensor,
}

impl MopaWeights {
    /// Gaussian init scaled by fan-in; biases small and nonzero so tests exercise them.
    pub fn random<R: Rng + ?Sized>(model_dim: usize, head_dim: usize, rng: &mut R) -> Self {
        let width = NUM_EXPERTS * head_dim;
        let s_in = 1.0 / (model_dim as f64).sqrt();
        let s_out = 1.0 / (width as f64).sqrt();
        Self {
            head_dim,
            q_w: Tensor::randn(&[model_dim, width], s_in, rng),
            q_b: Tensor::randn(&[width], 0.1, rng),
            k_w: Tensor::randn(&[model_dim, width], s_in, rng),
            k_b: Tensor::randn(&[width], 0.1, rng),
            v_w: Tensor::randn(&[model_dim, width], s_in, rng),
            v_b: Tensor::randn(&[width], 0.1, rng),
            o_w: Tensor::randn(&[width, model_dim], s_out, rng),
            o_b: Tensor::randn(&[model_dim], 0.1, rng),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.q_w.rows()
    }

    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> MopaVars {
        let mut leaf = |t: &Tensor| g.leaf(t.clone(), requires_grad);
        MopaVars {
            head_dim: self.head_dim,
            q_w: leaf(&self.q_w),
            q_b: leaf(&self.q_b),
            k_w: leaf(&self.k_w),
            k_b: leaf(&self.k_b),
            v_w: leaf(&self.v_w),
            v_b: leaf(&self.v_b),
            o_w: leaf(&self.o_w),
            o_b: leaf(&self.o_b),
        }
    }
}

/// MoPA weights already placed on a graph.
#[derive(Clone, Copy, Debug)]
pub struct MopaVars {
    pub head_dim: usize,
    pub q_w: Var,
    pub q_b: Var,
    pub k_w: Var,
    pub k_b: Var,
    pub v_w: Var,
    pub v_b: Var,
    pub o_w: Var,
    pub o_b: Var,
}

/// Intermediate values of one MoPA evaluation.
pub struct MopaTrace {
    /// `[N, model_dim]` output.
    pub output: Var,
    /// `[h, N, N]` row-stochastic attention.
    pub attention: Var,
    /// `[h, N, d]` per-head outputs before gating.
    pub heads: Var,
}

fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

/// Records MoPA on the graph. `f` is `[N, model_dim]`, `gate` is `[29]`.
pub fn mopa_trace(g: &mut Graph, f: Var, gate: Var, w: &MopaVars) -> Result<MopaTrace> {
    if g.shape(gate) != [NUM_EXPERTS] {
        return Err(Error::dim(format!(
            "gate shape {:?}, expected [{NUM_EXPERTS}]",
            g.shape(gate)
        )));
    }
    let fs = g.shape(f);
    let ws = g.shape(w.q_w);
    if fs.len() != 2 || fs[1] != ws[0] {
        return Err(Error::dim(format!(
            "feature shape {fs:?} does not match query projection {ws:?}"
        )));
    }
    let q = affine(g, f, w.q_w, w.q_b)?;
    let k = affine(g, f, w.k_w, w.k_b)?;
    let v = affine(g, f, w.v_w, w.v_b)?;
    let qh = g.split_heads(q, NUM_EXPERTS)?;
    let kh = g.split_heads(k, NUM_EXPERTS)?;
    let vh = g.split_heads(v, NUM_EXPERTS)?;
    let scores = g.batch_matmul(qh, kh, false, true)?;
    let scores = g.scale(scores, 1.0 / (w.head_dim as f64).sqrt());
    let attention = g.softmax(scores)?;
    let heads = g.batch_matmul(attention, vh, false, false)?;
    let gated = g.scale_groups(heads, gate)?;
    let merged = g.merge_heads(gated)?;
    let output = affine(g, merged, w.o_w, w.o_b)?;
    Ok(MopaTrace {
        output,
        attention,
        heads,
    })
}

/// Value-level MoPA forward.
pub fn mopa_forward(f: &Tensor, gate: &GatingVector, w: &MopaWeights) -> Result<Tensor> {
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let gv = g.constant(gate.to_tensor());
    let wv = w.bind(&mut g, false);
    let tr = mopa_trace(&mut g, fv, gv, &wv)?;
    Ok(g.value(tr.output).clone())
}

/// The 29 row-stochastic `N×N` attention matrices, one per expert head.
pub fn attention_maps(f: &Tensor, w: &MopaWeights) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let fv = g.constant(f.clone());
    let gv = g.constant(GatingVector::ones().to_tensor());
    let wv = w.bind(&mut g, false);
    let tr = mopa_trace(&mut g, fv, gv, &wv)?;
    split_attention(g.value(tr.attention))
}

/// Splits an `[h, N, N]` tensor into `h` matrices.
pub fn split_attention(att: &Tensor) -> Result<Vec<Tensor>> {
    let s = att.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::dim(format!("attention tensor shape {s:?}")));
    }
    let n = s[1];
    Ok(att
        .data()
        .chunks(n * n)
        .map(|c| Tensor::from_parts(vec![n, n], c.to_vec()))
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn perturb_identity_at_zero_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vals = [0.0; NUM_EXPERTS];
        vals[3] = 1.0;
        let g = GatingVector::from_array(vals).unwrap();
        assert_eq!(perturb(&g, 0.0, &mut rng).unwrap(), g);
    }

    #[test]
    fn perturb_always_flips_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut vals = [0.0; NUM_EXPERTS];
        vals[0] = 1.0;
        let out = perturb(&GatingVector::from_array(vals).unwrap(), 1.0, &mut rng).unwrap();
        assert_eq!(out.values()[0], 0.1);
        assert!(out.values()[1..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn perturb_rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GatingVector::ones();
        assert!(matches!(perturb(&g, 1.5, &mut rng), Err(Error::Usage(_))));
        assert!(matches!(perturb(&g, -0.1, &mut rng), Err(Error::Usage(_))));
        let half = GatingVector::from_array([0.5; NUM_EXPERTS]).unwrap();
        assert!(perturb(&half, 0.2, &mut rng).is_err());
    }

    #[test]
    fn perturb_is_seed_deterministic() {
        let g = GatingVector::zeros();
        let a = perturb(&g, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = perturb(&g, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn per_sample_mode_flips_everything_or_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut vals = [0.0; NUM_EXPERTS];
        vals[5] = 1.0;
        let g = GatingVector::from_array(vals).unwrap();
        for _ in 0..50 {
            let out = perturb_with_mode(&g, 0.5, PerturbMode::PerSample, &mut rng).unwrap();
            assert!(out == g || out.values()[5] == 0.1 && out.values()[0] == 1.0);
        }
    }

    #[test]
    fn single_token_attention_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = MopaWeights::random(6, 2, &mut rng);
        let f = Tensor::randn(&[1, 6], 1.0, &mut rng);
        let maps = attention_maps(&f, &w).unwrap();
        assert_eq!(maps.len(), NUM_EXPERTS);
        for m in maps {
            assert_eq!(m.data(), &[1.0]);
        }
    }

    #[test]
    fn gate_length_and_feature_width_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = MopaWeights::random(6, 2, &mut rng);
        let f = Tensor::randn(&[3, 5], 1.0, &mut rng);
        assert!(matches!(
            mopa_forward(&f, &GatingVector::ones(), &w),
            Err(Error::Dimension(_))
        ));
        assert!(GatingVector::from_slice(&[1.0; 28]).is_err());
    }
}
