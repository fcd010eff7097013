use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wisa_lab::physchema::{validate, CategoryId, PhysicalAnnotation};
use wisa_lab::synthphys::detect::{detect, Detected};
use wisa_lab::synthphys::{
    generate, load_dataset, make_dataset, sample_kinds, Branch, DatasetSpec, Scenario, ScenarioKind, Split,
};

fn expected(a: &PhysicalAnnotation) -> Detected {
    let on = |id: i64| a.qualitative.is_active(CategoryId::new(id).unwrap());
    Detected {
        motion: (1..=6).any(on),
        melting: on(8),
        flicker: on(13),
        reflection: on(15),
    }
}

fn random_clips(n: usize, seed: u64) -> Vec<(ScenarioKind, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = ScenarioKind::ALL[rng.random_range(0..ScenarioKind::ALL.len())];
            (k, rng.random())
        })
        .collect()
}

#[test]
fn detectors_agree_with_labels_on_200_clips() {
    let mut disagreements = Vec::new();
    for (kind, seed) in random_clips(200, 11) {
        let c = generate(&Scenario::new(kind), seed).unwrap();
        let got = detect(&c.frames);
        if got != expected(&c.annotation) {
            disagreements.push((kind, seed, got));
        }
    }
    assert!(disagreements.is_empty(), "{disagreements:?}");
}

#[test]
fn detectors_agree_on_wide_sweep() {
    let mut bad: BTreeMap<&str, usize> = BTreeMap::new();
    for (kind, seed) in random_clips(3000, 99) {
        let c = generate(&Scenario::new(kind), seed).unwrap();
        if detect(&c.frames) != expected(&c.annotation) {
            *bad.entry(kind.name()).or_default() += 1;
        }
    }
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn every_annotation_passes_strict_validation() {
    for (kind, seed) in random_clips(300, 5) {
        let c = generate(&Scenario::new(kind), seed).unwrap();
        assert!(validate(&c.annotation, true).is_empty(), "{kind:?} {seed}");
    }
}

#[test]
fn default_mixture_matches_branch_proportions() {
    // binomial sd at n = 10,000 is at most 0.005, so +-0.02 is four sd
    let kinds = sample_kinds(&DatasetSpec::default(), 10_000).unwrap();
    let frac = |b: Branch| kinds.iter().filter(|k| k.branch() == b).count() as f64 / kinds.len() as f64;
    for (b, target) in [(Branch::Dynamics, 0.47), (Branch::Thermodynamics, 0.24), (Branch::Optics, 0.29)] {
        assert!((frac(b) - target).abs() <= 0.02, "{b:?}: {}", frac(b));
    }
}

fn dir_contents(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "clips", "annotations"] {
        for e in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn dataset_is_byte_identical_across_runs_and_loads() {
    let spec = DatasetSpec {
        count: 40,
        seed: 3,
        ..DatasetSpec::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = make_dataset(&spec, a.path()).unwrap();
    make_dataset(&spec, b.path()).unwrap();
    let ca = dir_contents(a.path());
    assert_eq!(ca.len(), 1 + 2 * 40);
    assert_eq!(ca, dir_contents(b.path()));

    let ds = load_dataset(a.path()).unwrap();
    assert_eq!(ds.samples.len(), 40);
    assert_eq!(ds.manifest, m);
    assert!(ds.split(Split::Val).count() > 0);
    for s in &ds.samples {
        let fresh = generate(&Scenario::new(s.kind), m.entries.iter().find(|e| e.id == s.id).unwrap().seed).unwrap();
        assert_eq!(s.clip, fresh.frames);
        assert_eq!(s.annotation, fresh.annotation);
    }
}

#[test]
fn empty_dataset_has_valid_manifest() {
    let d = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        count: 0,
        ..DatasetSpec::default()
    };
    let m = make_dataset(&spec, d.path()).unwrap();
    assert!(m.entries.is_empty());
    assert_eq!(load_dataset(d.path()).unwrap().samples.len(), 0);
}
