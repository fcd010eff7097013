use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use wisa_lab::backbone::{Model, ToyDiTConfig};
use wisa_lab::numcore::Tensor;
use wisa_lab::params::GradMode;
use wisa_lab::physchema::NUM_CATEGORIES;
use wisa_lab::physmodule::PhysConfig;
use wisa_lab::synthphys::{load_dataset, make_dataset, Dataset, DatasetSpec, Split};
use wisa_lab::trainer::{
    batch_objective, classification_metrics, localization_ratio, new_model, read_metrics, train, Draw, GateMode,
    TrainConfig, LAST_GOOD_CHECKPOINT,
};
use wisa_lab::Error;

fn dataset(dir: &Path, count: usize) -> Dataset {
    let spec = DatasetSpec {
        count,
        seed: 5,
        ..DatasetSpec::default()
    };
    make_dataset(&spec, dir).unwrap();
    load_dataset(dir).unwrap()
}

fn small_dit() -> ToyDiTConfig {
    ToyDiTConfig {
        n_blocks: 1,
        model_dim: 16,
        n_heads: 2,
        patch: [2, 4, 4],
        ..ToyDiTConfig::default()
    }
}

fn small_train(steps: usize, lambda: f64) -> TrainConfig {
    TrainConfig {
        steps,
        learning_rate: 1e-3,
        batch_size: 2,
        lambda,
        lora_rank: 2,
        val_every: steps,
        val_limit: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn classifier_gradient_is_normalised_bce_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 8);
    let lambda = 0.3;
    let mut model = new_model(&data, small_dit(), PhysConfig::default(), &small_train(1, lambda)).unwrap();
    // move the zero-initialised classifier off zero so its gradient is generic
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for name in model.params.trainable_names() {
        for v in model.params.value_mut(&name).unwrap().data_mut() {
            *v += 0.05 * (rng.random::<f64>() - 0.5);
        }
    }
    let samples: Vec<_> = data.split(Split::Train).take(3).collect();
    let batch: Vec<Draw<'_>> = samples
        .iter()
        .map(|s| {
            let (t, eps) = model.draw_noise(&mut rng);
            Draw {
                sample: s,
                t,
                eps,
                gate: GateMode::True.gate(&s.annotation),
            }
        })
        .collect();

    let mut s = model.session(GradMode::Trainable);
    let obj = batch_objective(&model, &mut s, &batch, lambda).unwrap();
    let l_pc = obj.l_pc.unwrap();
    let v = s.g.value(l_pc).item();
    let total = s.g.backward(obj.total).unwrap();
    let raw = s.g.backward(l_pc).unwrap();
    let total = s.param_grads(&total);
    let raw = s.param_grads(&raw);
    let scale = lambda / (1.0 + v);
    let mut checked = 0;
    for (name, g) in total.iter().filter(|(n, _)| n.starts_with("cls.")) {
        for (a, b) in g.data().iter().zip(raw[name].data()) {
            assert!((a - scale * b).abs() < 1e-10, "{name}: {a} vs {}", scale * b);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn zero_lambda_matches_training_without_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"), 10);
    let cfg = small_train(4, 0.0);
    let mut with = new_model(&data, small_dit(), PhysConfig::default(), &cfg).unwrap();
    let mut without = with.clone();
    without.remove_classifier();
    train(&mut with, &data, &cfg, &dir.path().join("a")).unwrap();
    train(&mut without, &data, &cfg, &dir.path().join("b")).unwrap();
    let a = read_metrics(&dir.path().join("a/metrics.jsonl")).unwrap();
    let b = read_metrics(&dir.path().join("b/metrics.jsonl")).unwrap();
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.l_diffusion - y.l_diffusion).abs() < 1e-12, "{x:?} vs {y:?}");
        assert_eq!(y.l_pc, 0.0);
    }
    for name in without.params.names() {
        assert!(with.params.get(name).unwrap().bit_eq(without.params.get(name).unwrap()), "{name}");
    }
}

#[test]
fn training_leaves_the_base_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"), 10);
    let cfg = small_train(3, 0.1);
    let mut model = new_model(&data, small_dit(), PhysConfig::default(), &cfg).unwrap();
    let before = model.params.clone();
    let summary = train(&mut model, &data, &cfg, &dir.path().join("run")).unwrap();
    let mut moved = 0;
    for (name, p) in model.params.iter() {
        let same = p.value.bit_eq(before.get(name).unwrap());
        if p.trainable {
            moved += usize::from(!same);
        } else {
            assert!(same, "frozen {name} changed");
        }
    }
    assert!(moved > 0);
    assert!(summary.best_checkpoint.exists() && summary.final_checkpoint.exists());
    let back = Model::load(&summary.final_checkpoint).unwrap();
    assert!(back.params.bit_eq(&model.params));
}

#[test]
fn overflow_stops_with_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"), 8);
    let cfg = small_train(3, 0.1);
    let mut model = new_model(&data, small_dit(), PhysConfig::default(), &cfg).unwrap();
    let names: Vec<String> = model.params.names().cloned().collect();
    for name in &names {
        for v in model.params.value_mut(name).unwrap().data_mut() {
            *v = 1e200;
        }
    }
    let run = dir.path().join("run");
    let err = train(&mut model, &data, &cfg, &run).unwrap_err();
    match err {
        Error::NonFiniteLoss { step, checkpoint } => {
            assert_eq!(step, 1);
            assert_eq!(checkpoint, run.join(LAST_GOOD_CHECKPOINT));
            assert!(Model::load(&checkpoint).unwrap().params.bit_eq(&model.params));
        }
        other => panic!("unexpected {other}"),
    }
    let rows = read_metrics(&run.join("metrics.jsonl"));
    // the failing row is logged, though NaN has no JSON form
    assert!(rows.is_err() || rows.unwrap().len() == 1);
}

#[test]
fn metrics_match_hand_confusion_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draw = |p: f64| -> [bool; NUM_CATEGORIES] { std::array::from_fn(|_| rng.random_bool(p)) };
    let targets: Vec<_> = (0..20).map(|_| draw(0.3)).collect();
    let predicted: Vec<_> = (0..20).map(|_| draw(0.4)).collect();
    let m = classification_metrics(&predicted, &targets).unwrap();
    assert_eq!(m.samples, 20);

    let mut f1s = Vec::new();
    for c in 0..NUM_CATEGORIES {
        let count = |pv: bool, tv: bool| predicted.iter().zip(&targets).filter(|(p, t)| p[c] == pv && t[c] == tv).count();
        let (tp, fp, fn_, tn) = (count(true, true), count(true, false), count(false, true), count(false, false));
        let row = &m.per_category[c];
        assert_eq!((row.tp, row.fp, row.fn_, row.tn), (tp, fp, fn_, tn));
        assert_eq!(row.accuracy, (tp + tn) as f64 / 20.0);
        if tp + fp + fn_ > 0 {
            let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
            let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            assert!((row.f1.unwrap() - f1).abs() < 1e-12);
            f1s.push(f1);
        } else {
            assert!(row.f1.is_none());
        }
    }
    let macro_f1 = f1s.iter().sum::<f64>() / f1s.len() as f64;
    assert!((m.macro_f1 - macro_f1).abs() < 1e-12);
    assert!(classification_metrics(&predicted[..3], &targets).is_err());
}

#[test]
fn localization_ratio_matches_naive_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [1usize, 3, 8, 17] {
        let rows: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let mut att = vec![0.0; n * n];
        for i in 0..n {
            let s: f64 = rows[i * n..(i + 1) * n].iter().sum();
            for j in 0..n {
                att[i * n + j] = rows[i * n + j] / s;
            }
        }
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let att_t = Tensor::new(&[n, n], att.clone()).unwrap();
        let got = localization_ratio(&att_t, &mask).unwrap();
        let k = mask.iter().filter(|&&m| m).count();
        if k == 0 {
            assert!(got.is_none());
            continue;
        }
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                if mask[j] {
                    mass += att[i * n + j];
                }
            }
        }
        let want = (mass / n as f64) / (k as f64 / n as f64);
        assert!((got.unwrap() - want).abs() < 1e-12);
    }
    // uniform attention has ratio exactly one
    let n = 6;
    let uniform = Tensor::new(&[n, n], vec![1.0 / n as f64; n * n]).unwrap();
    let r = localization_ratio(&uniform, &[true, false, false, true, false, true]).unwrap().unwrap();
    assert!((r - 1.0).abs() < 1e-12);
    assert!(localization_ratio(&uniform, &[true; 5]).is_err());
}
