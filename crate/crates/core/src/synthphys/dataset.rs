use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, Branch, Scenario, ScenarioKind, ScenarioParams};
use crate::clipio;
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::physchema::{self, PhysicalAnnotation};

/// Caps the number of rendering threads.
pub const THREADS_ENV: &str = "WISA_LAB_THREADS";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEntry {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub params: ScenarioParams,
    pub weight: f64,
}

/// Kind weights giving 0.47 / 0.24 / 0.29 across dynamics / thermodynamics / optics.
pub fn default_scenarios() -> Vec<ScenarioEntry> {
    [
        (ScenarioKind::Bounce, 0.17),
        (ScenarioKind::Pendulum, 0.15),
        (ScenarioKind::Flow, 0.15),
        (ScenarioKind::Melt, 0.12),
        (ScenarioKind::CombustionFlicker, 0.12),
        (ScenarioKind::Reflection, 0.29),
        (ScenarioKind::Static, 0.0),
    ]
    .into_iter()
    .map(|(kind, weight)| ScenarioEntry {
        kind,
        params: ScenarioParams::default(),
        weight,
    })
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub count: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub scenarios: Vec<ScenarioEntry>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            count: 1000,
            seed: 0,
            val_fraction: 0.2,
            frames: 8,
            height: 16,
            width: 16,
            scenarios: default_scenarios(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::usage("dataset spec lists no scenarios"));
        }
        if let Some(e) = self.scenarios.iter().find(|e| !(e.weight >= 0.0 && e.weight.is_finite())) {
            return Err(Error::usage(format!("{} weight {} must be finite and >= 0", e.kind.name(), e.weight)));
        }
        let total: f64 = self.scenarios.iter().map(|e| e.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!("scenario weights sum to {total}, expected 1")));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::usage(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        for e in &self.scenarios {
            self.scenario(e).validate()?;
        }
        Ok(())
    }

    fn scenario(&self, e: &ScenarioEntry) -> Scenario {
        Scenario {
            kind: e.kind,
            params: e.params.clone(),
            frames: self.frames,
            height: self.height,
            width: self.width,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub kind: ScenarioKind,
    pub branch: Branch,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub count: usize,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Fails when an id repeats, in particular across splits.
    pub fn check_splits(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &self.entries {
            if let Some(prev) = seen.insert(&e.id, e.split) {
                return Err(Error::Dataset(if prev != e.split {
                    format!("clip '{}' appears in both train and val splits", e.id)
                } else {
                    format!("clip '{}' listed twice", e.id)
                }));
            }
        }
        Ok(())
    }

    pub fn branch_counts(&self) -> BTreeMap<Branch, usize> {
        let mut out: BTreeMap<Branch, usize> = Branch::ALL.iter().map(|&b| (b, 0)).collect();
        for e in &self.entries {
            *out.entry(e.branch).or_default() += 1;
        }
        out
    }
}

struct Planned {
    entry: usize,
    seed: u64,
    split: Split,
}

fn plan(spec: &DatasetSpec, count: usize) -> Result<Vec<Planned>> {
    spec.validate()?;
    let weights = WeightedIndex::new(spec.scenarios.iter().map(|e| e.weight))
        .map_err(|e| Error::usage(format!("scenario weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..count)
        .map(|_| {
            let entry = weights.sample(&mut rng);
            let seed = rng.random::<u64>();
            let split = if rng.random::<f64>() < spec.val_fraction {
                Split::Val
            } else {
                Split::Train
            };
            Planned { entry, seed, split }
        })
        .collect())
}

/// The first `n` scenario kinds the dataset sampler would draw for `spec`.
pub fn sample_kinds(spec: &DatasetSpec, n: usize) -> Result<Vec<ScenarioKind>> {
    Ok(plan(spec, n)?.iter().map(|p| spec.scenarios[p.entry].kind).collect())
}

fn clip_id(i: usize) -> String {
    format!("clip_{i:05}")
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::usage(format!("{THREADS_ENV}='{v}' is not a positive integer")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::usage(format!("thread pool: {e}")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Renders `spec.count` clips into `out`: `clips/<id>.npyish`,
/// `annotations/<id>.json` and `manifest.json`.
pub fn make_dataset(spec: &DatasetSpec, out: &Path) -> Result<Manifest> {
    let planned = plan(spec, spec.count)?;
    for sub in ["clips", "annotations"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let render = |(i, p): (usize, &Planned)| -> Result<ManifestEntry> {
        let entry = &spec.scenarios[p.entry];
        let clip = generate(&spec.scenario(entry), p.seed)?;
        let id = clip_id(i);
        write_file(
            &out.join("clips").join(format!("{id}.npyish")),
            &clipio::encode_clip(&clip.frames)?,
        )?;
        write_file(
            &out.join("annotations").join(format!("{id}.json")),
            &physchema::serialize(&clip.annotation),
        )?;
        Ok(ManifestEntry {
            id,
            split: p.split,
            kind: entry.kind,
            branch: entry.kind.branch(),
            seed: p.seed,
        })
    };
    let entries = thread_pool()?.install(|| {
        planned
            .par_iter()
            .enumerate()
            .map(render)
            .collect::<Result<Vec<_>>>()
    })?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: spec.seed,
        count: spec.count,
        entries,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_file(&out.join("manifest.json"), &bytes)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub split: Split,
    pub kind: ScenarioKind,
    pub clip: Tensor,
    pub annotation: PhysicalAnnotation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Caption and description text of every sample, in manifest order.
    pub fn corpus(&self) -> impl Iterator<Item = &str> {
        self.samples
            .iter()
            .flat_map(|s| [s.annotation.caption.as_str(), s.annotation.physical_description.as_str()])
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    physchema::json::from_slice_with_path(&bytes)
}

/// Loads every clip and annotation listed in `dir/manifest.json`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    manifest.check_splits()?;
    let ids: BTreeSet<&str> = manifest.entries.iter().map(|e| e.id.as_str()).collect();
    if let Some(bad) = ids.iter().find(|id| id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.')) {
        return Err(Error::Dataset(format!("invalid clip id '{bad}'")));
    }
    let samples = manifest
        .entries
        .iter()
        .map(|e| {
            let clip = clipio::read_clip(&dir.join("clips").join(format!("{}.npyish", e.id)))?;
            let path = dir.join("annotations").join(format!("{}.json", e.id));
            let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
            let annotation = physchema::parse(&bytes)?;
            Ok(Sample {
                id: e.id.clone(),
                split: e.split,
                kind: e.kind,
                clip,
                annotation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_sum_to_branch_targets() {
        let s = default_scenarios();
        let sum = |b: Branch| -> f64 { s.iter().filter(|e| e.kind.branch() == b).map(|e| e.weight).sum() };
        assert!((sum(Branch::Dynamics) - 0.47).abs() < 1e-12);
        assert!((sum(Branch::Thermodynamics) - 0.24).abs() < 1e-12);
        assert!((sum(Branch::Optics) - 0.29).abs() < 1e-12);
        DatasetSpec::default().validate().unwrap();
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut spec = DatasetSpec::default();
        spec.scenarios[0].weight += 0.01;
        assert!(matches!(spec.validate(), Err(Error::Usage(_))));
    }

    #[test]
    fn leakage_detected() {
        let e = |split| ManifestEntry {
            id: "clip_00000".into(),
            split,
            kind: ScenarioKind::Bounce,
            branch: Branch::Dynamics,
            seed: 0,
        };
        let m = Manifest {
            version: 1,
            seed: 0,
            count: 2,
            entries: vec![e(Split::Train), e(Split::Val)],
        };
        assert!(matches!(m.check_splits(), Err(Error::Dataset(_))));
    }
}
