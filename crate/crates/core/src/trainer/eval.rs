use serde::{Deserialize, Serialize};

use super::{paired_noise, validation_loss, GateMode};
use crate::backbone::Model;
use crate::error::{Error, Result};
use crate::physchema::{CategoryId, NUM_CATEGORIES};
use crate::synthphys::{Dataset, Sample, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub id: u8,
    pub name: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub per_category: Vec<CategoryMetrics>,
    /// Mean F1 over categories that occur in the targets or the predictions.
    pub macro_f1: f64,
    pub samples: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-category confusion counts and scores for multi-label predictions.
pub fn classification_metrics(predicted: &[[bool; NUM_CATEGORIES]], targets: &[[bool; NUM_CATEGORIES]]) -> Result<ClassificationMetrics> {
    if predicted.len() != targets.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} targets",
            predicted.len(),
            targets.len()
        )));
    }
    let n = predicted.len();
    let per_category: Vec<CategoryMetrics> = CategoryId::all()
        .map(|c| {
            let i = c.index();
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for (p, t) in predicted.iter().zip(targets) {
                match (p[i], t[i]) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            CategoryMetrics {
                id: c.id(),
                name: c.name().to_string(),
                tp,
                fp,
                fn_,
                tn,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
                accuracy: ratio(tp + tn, n).unwrap_or(1.0),
            }
        })
        .collect();
    let scored: Vec<f64> = per_category.iter().filter_map(|c| c.f1).collect();
    let macro_f1 = if scored.is_empty() {
        1.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(ClassificationMetrics {
        per_category,
        macro_f1,
        samples: n,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Seed of the paired validation noise.
    pub seed: u64,
    /// Validation clips scored; 0 means all.
    pub limit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classification: Option<ClassificationMetrics>,
    pub val_diffusion_true: f64,
    pub val_diffusion_all_ones: f64,
    /// `val_diffusion_all_ones - val_diffusion_true`; positive means true gates help.
    pub gating_delta: f64,
    pub samples: usize,
}

/// Scores the validation split: classifier predictions at the paired noisy
/// timestep under true gates, and the gating ablation on the diffusion loss.
pub fn evaluate(model: &Model, data: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    data.manifest.check_splits()?;
    let val: Vec<&Sample> = data.split(Split::Val).collect();
    let n = if opts.limit == 0 { val.len() } else { opts.limit.min(val.len()) };
    let val = &val[..n];
    if val.is_empty() {
        return Err(Error::Dataset("validation split is empty".into()));
    }
    let val_true = validation_loss(model, val, opts.seed, GateMode::True)?;
    let val_ones = validation_loss(model, val, opts.seed, GateMode::AllOnes)?;
    let classification = if model.classifier {
        let mut predicted = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for (i, s) in val.iter().enumerate() {
            let (t, eps) = paired_noise(model, opts.seed, i);
            let a = &s.annotation;
            let x_t = model.schedule().q_sample(&s.clip, t, &eps);
            let cond = model.conditioning(&a.caption, &a.physical_description, GateMode::True.gate(a), a.quantitative);
            let out = model.classify(&x_t, t, &cond)?;
            let mut p = [false; NUM_CATEGORIES];
            p.iter_mut().zip(out.predicted()).for_each(|(d, v)| *d = v);
            predicted.push(p);
            targets.push(*a.qualitative.as_array());
        }
        Some(classification_metrics(&predicted, &targets)?)
    } else {
        None
    };
    Ok(EvalReport {
        classification,
        val_diffusion_true: val_true,
        val_diffusion_all_ones: val_ones,
        gating_delta: val_ones - val_true,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ids: &[usize]) -> [bool; NUM_CATEGORIES] {
        let mut r = [false; NUM_CATEGORIES];
        ids.iter().for_each(|&i| r[i - 1] = true);
        r
    }

    #[test]
    fn perfect_predictions_score_one() {
        let t = vec![row(&[1, 2, 14]), row(&[7, 20])];
        let m = classification_metrics(&t, &t).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        assert!(m.per_category.iter().all(|c| c.accuracy == 1.0));
    }

    #[test]
    fn all_positive_predictor_accuracy_is_base_rate() {
        let t = vec![row(&[1]), row(&[]), row(&[]), row(&[1])];
        let p = vec![row(&(1..=29).collect::<Vec<_>>()); 4];
        let m = classification_metrics(&p, &t).unwrap();
        assert_eq!(m.per_category[0].accuracy, 0.5);
        assert_eq!(m.per_category[1].accuracy, 0.0);
        assert_eq!(m.per_category[1].f1, Some(0.0));
    }
}
