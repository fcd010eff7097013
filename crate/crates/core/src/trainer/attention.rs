use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GateMode;
use crate::backbone::Model;
use crate::error::{Error, Result};
use crate::mopa::split_attention;
use crate::numcore::Tensor;
use crate::params::GradMode;
use crate::physchema::{CategoryId, PhysicalAnnotation};

/// Absolute frame difference above which a pixel counts as moving.
pub const MOTION_THRESHOLD: f64 = 0.05;

/// Per-token moving-region mask from frame differencing: a token is moving
/// when any of its pixels changes by more than `threshold` against the
/// previous or next frame.
pub fn motion_mask(clip: &Tensor, patch: [usize; 3], threshold: f64) -> Result<Vec<bool>> {
    let s = clip.shape();
    if s.len() != 3 || s.iter().zip(patch).any(|(d, p)| p == 0 || d % p != 0) {
        return Err(Error::dim(format!("clip {s:?} incompatible with patch {patch:?}")));
    }
    let (f, h, w) = (s[0], s[1], s[2]);
    let d = clip.data();
    let at = |t: usize, y: usize, x: usize| d[(t * h + y) * w + x];
    let (gh, gw) = (h / patch[1], w / patch[2]);
    let mut mask = vec![false; (f / patch[0]) * gh * gw];
    for t in 0..f {
        for y in 0..h {
            for x in 0..w {
                let v = at(t, y, x);
                let moving = (t > 0 && (v - at(t - 1, y, x)).abs() > threshold)
                    || (t + 1 < f && (at(t + 1, y, x) - v).abs() > threshold);
                if moving {
                    mask[((t / patch[0]) * gh + y / patch[1]) * gw + x / patch[2]] = true;
                }
            }
        }
    }
    Ok(mask)
}

/// Mean over queries of the attention mass on masked keys, divided by the
/// masked fraction of keys. `None` when the mask is empty.
pub fn localization_ratio(att: &Tensor, mask: &[bool]) -> Result<Option<f64>> {
    let n = mask.len();
    if att.shape() != [n, n] {
        return Err(Error::dim(format!("attention {:?} vs mask of {n} tokens", att.shape())));
    }
    let inside = mask.iter().filter(|&&m| m).count();
    if inside == 0 {
        return Ok(None);
    }
    let area = inside as f64 / n as f64;
    let mass: f64 = att
        .data()
        .chunks(n)
        .map(|row| row.iter().zip(mask).filter(|(_, &m)| m).map(|(a, _)| a).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    Ok(Some(mass / area))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertAttention {
    pub id: u8,
    pub name: String,
    pub gate: f64,
    pub ratio: Option<f64>,
    /// Attention each key token receives, averaged over queries.
    pub key_mass: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    /// False for clips without a moving region; ratios are then absent.
    pub applicable: bool,
    pub area_fraction: f64,
    pub grid: [usize; 3],
    pub mask: Vec<bool>,
    pub timestep: usize,
    pub experts: Vec<ExpertAttention>,
}

impl AttentionReport {
    pub fn expert(&self, id: u8) -> Option<&ExpertAttention> {
        self.experts.iter().find(|e| e.id == id)
    }
}

/// Runs the model on `clip` noised to `timestep` (noise from `seed`) with the
/// annotation's true gate and reads out each expert head's attention.
pub fn attention_report(
    model: &Model,
    clip: &Tensor,
    annotation: &PhysicalAnnotation,
    timestep: usize,
    seed: u64,
) -> Result<AttentionReport> {
    if !model.physical_module {
        return Err(Error::usage("model has no physical module to inspect"));
    }
    let mask = motion_mask(clip, model.config.patch, MOTION_THRESHOLD)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Tensor::randn(&model.config.clip_shape(), 1.0, &mut rng);
    if timestep >= model.config.diffusion_steps {
        return Err(Error::usage(format!("timestep {timestep} outside the schedule")));
    }
    let x_t = model.schedule().q_sample(clip, timestep, &eps);
    let gate = GateMode::True.gate(annotation);
    let cond = model.conditioning(
        &annotation.caption,
        &annotation.physical_description,
        gate,
        annotation.quantitative,
    );
    let mut s = model.session(GradMode::Off);
    let out = model.forward(&mut s, &x_t, timestep, &cond)?;
    let trace = out.module.expect("physical module present");
    let maps = split_attention(s.g.value(trace.mopa.attention))?;
    let n = mask.len();
    let inside = mask.iter().filter(|&&m| m).count();
    let experts = maps
        .iter()
        .zip(CategoryId::all())
        .map(|(att, c)| {
            let mut key_mass = vec![0.0; n];
            for row in att.data().chunks(n) {
                key_mass.iter_mut().zip(row).for_each(|(k, a)| *k += a / n as f64);
            }
            Ok(ExpertAttention {
                id: c.id(),
                name: c.name().to_string(),
                gate: gate.values()[c.index()],
                ratio: localization_ratio(att, &mask)?,
                key_mass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttentionReport {
        applicable: inside > 0,
        area_fraction: inside as f64 / n as f64,
        grid: model.config.grid(),
        mask,
        timestep,
        experts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    /// Held-out clips with a moving region and an active dynamics category.
    pub clips: usize,
    pub above_uniform: usize,
    pub fraction: f64,
    pub ratios: Vec<f64>,
}

/// For each validation clip with motion, the mean localization ratio of its
/// active non-fallback dynamics experts, and how many exceed 1.
pub fn motion_localization(
    model: &Model,
    data: &crate::synthphys::Dataset,
    timestep: usize,
    limit: usize,
) -> Result<LocalizationSummary> {
    let mut ratios = Vec::new();
    for (i, s) in data.split(crate::synthphys::Split::Val).enumerate() {
        if limit > 0 && i >= limit {
            break;
        }
        let active: Vec<u8> = s
            .annotation
            .qualitative
            .active_in(crate::physchema::Group::Dynamics)
            .into_iter()
            .filter(|c| !c.is_fallback())
            .map(|c| c.id())
            .collect();
        if active.is_empty() {
            continue;
        }
        let report = attention_report(model, &s.clip, &s.annotation, timestep, i as u64)?;
        if !report.applicable {
            continue;
        }
        let r: Vec<f64> = active
            .iter()
            .filter_map(|&id| report.expert(id).and_then(|e| e.ratio))
            .collect();
        ratios.push(r.iter().sum::<f64>() / r.len() as f64);
    }
    let above = ratios.iter().filter(|&&r| r > 1.0).count();
    Ok(LocalizationSummary {
        clips: ratios.len(),
        above_uniform: above,
        fraction: if ratios.is_empty() { 0.0 } else { above as f64 / ratios.len() as f64 },
        ratios,
    })
}

const CELL: usize = 4;
const GAP: usize = 1;

/// Greyscale grid: the motion mask in the first row, then one row per expert;
/// each row shows the temporal token slices side by side, each map scaled to
/// its own maximum.
pub fn attention_pgm(report: &AttentionReport) -> (usize, usize, Vec<u8>) {
    let [gt, gh, gw] = report.grid;
    let tile_w = gw * CELL;
    let tile_h = gh * CELL;
    let width = gt * (tile_w + GAP) + GAP;
    let rows: Vec<Vec<f64>> = std::iter::once(report.mask.iter().map(|&m| f64::from(u8::from(m))).collect())
        .chain(report.experts.iter().map(|e| e.key_mass.clone()))
        .collect();
    let height = rows.len() * (tile_h + GAP) + GAP;
    let mut px = vec![0u8; width * height];
    for (r, vals) in rows.iter().enumerate() {
        let max = vals.iter().cloned().fold(0.0, f64::max);
        for a in 0..gt {
            for b in 0..gh {
                for c in 0..gw {
                    let v = vals[(a * gh + b) * gw + c];
                    let level = if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 };
                    for dy in 0..CELL {
                        for dx in 0..CELL {
                            let y = GAP + r * (tile_h + GAP) + b * CELL + dy;
                            let x = GAP + a * (tile_w + GAP) + c * CELL + dx;
                            px[y * width + x] = level;
                        }
                    }
                }
            }
        }
    }
    (width, height, px)
}

/// Binary PGM (P5).
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
