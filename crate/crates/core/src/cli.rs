//! `wisa-lab` command line: dataset generation, training, evaluation,
//! sampling, classification, attention inspection, annotation validation and
//! dataset statistics.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

use crate::backbone::{Model, ToyDiTConfig};
use crate::clipio;
use crate::error::{Error, Result};
use crate::mopa::GatingVector;
use crate::numcore::Tensor;
use crate::physchema::{self, group_violations, validate, CategoryId, PhysicalAnnotation, QuantitativeProperties};
use crate::physmodule::PhysConfig;
use crate::synthphys::{load_dataset, make_dataset, read_manifest, Branch, DatasetSpec, ScenarioEntry, ScenarioKind, Split};
use crate::trainer::{self, attention_pgm, attention_report, evaluate, write_pgm, EvalOptions, GateMode, TrainConfig};

/// Output file names inside a training run directory.
pub const EVAL_FILE: &str = "eval.json";
pub const REPORT_FILE: &str = "report.json";
pub const ATTENTION_IMAGE: &str = "attention.pgm";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Everything a run needs, read from one JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for data generation, initialisation, training and evaluation.
    pub seed: u64,
    pub data: DatasetSpec,
    pub model: ToyDiTConfig,
    pub physical: PhysConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub paths: Paths,
}

impl RunConfig {
    /// Copies the master seed into each section.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
    }

    /// Semantic checks beyond the JSON shape, reported with JSON paths.
    pub fn check(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let mut push = |path: &str, r: Result<()>| {
            if let Err(e) = r {
                errors.push(format!("{path}: {e}"));
            }
        };
        push("$.data", self.data.validate());
        push("$.model", self.model.validate());
        push("$.train", self.train.validate());
        let pairs = [
            ("frames", self.data.frames, self.model.frames),
            ("height", self.data.height, self.model.height),
            ("width", self.data.width, self.model.width),
        ];
        for (name, d, m) in pairs {
            if d != m {
                errors.push(format!("$.data.{name}: {d} differs from model.{name} = {m}"));
            }
        }
        errors
    }
}

fn segment_path(segs: &[Segment]) -> String {
    let mut s = String::from("$");
    for seg in segs {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("[{index}]")),
            Segment::Map { key } => s.push_str(&format!(".{key}")),
            Segment::Enum { variant } => s.push_str(&format!(".{variant}")),
            Segment::Unknown => s.push_str(".?"),
        }
    }
    s
}

/// Removes the value at `segs`; false when nothing could be removed.
fn remove_at(v: &mut serde_json::Value, segs: &[Segment]) -> bool {
    let Some((last, parents)) = segs.split_last() else {
        return false;
    };
    let mut cur = v;
    for seg in parents {
        cur = match (seg, cur) {
            (Segment::Map { key }, serde_json::Value::Object(m)) => match m.get_mut(key) {
                Some(next) => next,
                None => return false,
            },
            (Segment::Seq { index }, serde_json::Value::Array(a)) => match a.get_mut(*index) {
                Some(next) => next,
                None => return false,
            },
            _ => return false,
        };
    }
    match (last, cur) {
        (Segment::Map { key }, serde_json::Value::Object(m)) => m.remove(key).is_some(),
        (Segment::Seq { index }, serde_json::Value::Array(a)) if *index < a.len() => {
            a.remove(*index);
            true
        }
        _ => false,
    }
}

/// Parses a run configuration, collecting every shape error (unknown keys,
/// wrong types) and semantic error with its JSON path.
pub fn parse_run_config(bytes: &[u8]) -> Result<RunConfig> {
    let mut value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        path: format!("$ (line {}, column {})", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut errors = Vec::new();
    // each failing entry is removed and the parse retried, so one pass reports all of them
    for _ in 0..64 {
        match serde_path_to_error::deserialize::<_, RunConfig>(value.clone()) {
            Ok(cfg) => {
                if errors.is_empty() {
                    errors.extend(cfg.check());
                }
                return if errors.is_empty() { Ok(cfg) } else { Err(Error::Schema { errors }) };
            }
            Err(e) => {
                let segs: Vec<Segment> = e.path().iter().cloned().collect();
                let mut path = segment_path(&segs);
                let msg = e.inner().to_string();
                let mut removed = remove_at(&mut value, &segs);
                if !removed {
                    if let Some(field) = unknown_field(&msg) {
                        let mut with_key = segs.clone();
                        with_key.push(Segment::Map { key: field.clone() });
                        path = segment_path(&with_key);
                        removed = remove_at(&mut value, &with_key);
                    }
                }
                errors.push(format!("{path}: {msg}"));
                if !removed {
                    break;
                }
            }
        }
    }
    Err(Error::Schema { errors })
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => parse_run_config(&std::fs::read(p).map_err(|e| Error::io(p, e))?)?,
        None => RunConfig::default(),
    };
    let seed = cfg.seed;
    cfg.apply_seed(seed);
    Ok(cfg)
}

#[derive(Debug, Parser)]
#[command(name = "wisa-lab", version, about = "Physics-conditioned toy video diffusion lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic physics dataset.
    GenData(GenDataArgs),
    /// Train LoRA adapters, the physical module and the classifier.
    Train(TrainArgs),
    /// Score a checkpoint on the validation split.
    Evaluate(EvaluateArgs),
    /// Generate a clip from an annotation file.
    Sample(SampleArgs),
    /// Predict physical categories for a clip.
    Classify(ClassifyArgs),
    /// Write per-expert attention maps for one dataset clip.
    InspectAttn(InspectArgs),
    /// Check annotation files against the schema rules.
    Validate(ValidateArgs),
    /// Report branch and kind proportions of a dataset.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = load_run_config(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.apply_seed(s);
        }
        Ok(cfg)
    }
}

fn gate_parser() -> impl clap::builder::TypedValueParser<Value = GateMode> {
    PossibleValuesParser::new(["all-ones", "true", "zero"]).map(|s| s.parse::<GateMode>().expect("listed value"))
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset directory to create.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of clips.
    #[arg(long)]
    pub count: Option<usize>,
    /// Scenario list (JSON array of {kind, params, weight}).
    #[arg(long, value_name = "PATH")]
    pub scenarios: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Run directory for logs and checkpoints.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Optimisation steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Weight of the classifier loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Probability of flipping each gate entry during training.
    #[arg(long = "perturb-prob", value_name = "P")]
    pub perturb_prob: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Gate fed to the model during training.
    #[arg(long, value_parser = gate_parser())]
    pub gate: Option<GateMode>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Report file; printed to stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Validation clips to score (0 = all).
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Annotation JSON giving caption, description, categories and properties.
    #[arg(long, value_name = "PATH")]
    pub prompt: PathBuf,
    /// Output clip file.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, value_name = "U64", default_value_t = 0)]
    pub seed: u64,
    /// Sampling steps (defaults to the full schedule).
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_parser = gate_parser(), default_value = "true")]
    pub gate: GateMode,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Clip file to classify.
    #[arg(long, value_name = "PATH")]
    pub clip: PathBuf,
    /// Optional annotation supplying text and properties.
    #[arg(long, value_name = "PATH")]
    pub prompt: Option<PathBuf>,
    /// Diffusion timestep at which the clip is read.
    #[arg(long, default_value_t = 0)]
    pub timestep: usize,
    #[arg(long, value_name = "U64", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = gate_parser(), default_value = "all-ones")]
    pub gate: GateMode,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dataset directory holding the clip.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long = "clip-id", value_name = "ID")]
    pub clip_id: String,
    /// Directory for the report and image grid.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub timestep: usize,
    #[arg(long, value_name = "U64", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Annotation files.
    #[arg(required = true, value_name = "FILE")]
    pub files: Vec<PathBuf>,
    /// Enforce group rules regardless of each file's own flag.
    #[arg(long, conflicts_with = "lenient")]
    pub strict: bool,
    /// Report group rules as warnings only.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset directory.
    #[arg(value_name = "DIR")]
    pub dir: PathBuf,
}

fn required(opt: Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf> {
    opt.ok_or_else(|| Error::usage(format!("missing {flag} (or paths.{key} in the config)")))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("report serializes");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_annotation(path: &Path) -> Result<PhysicalAnnotation> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    physchema::parse(&bytes)
}

fn gen_data(args: GenDataArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = args.config.load()?;
    if let Some(n) = args.count {
        cfg.data.count = n;
    }
    if let Some(p) = &args.scenarios {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        cfg.data.scenarios = physchema::json::from_slice_with_path::<Vec<ScenarioEntry>>(&bytes)?;
    }
    let dir = required(args.out.or(cfg.paths.data_dir), "--out", "data_dir")?;
    let m = make_dataset(&cfg.data, &dir)?;
    let val = m.entries.iter().filter(|e| e.split == Split::Val).count();
    writeln!(out, "wrote {} clips ({} train, {} val) to {}", m.count, m.count - val, val, dir.display()).ok();
    Ok(0)
}

fn train(args: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = args.config.load()?;
    if let Some(v) = args.steps {
        cfg.train.steps = v;
    }
    if let Some(v) = args.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = args.perturb_prob {
        cfg.train.perturb_prob = v;
    }
    if let Some(v) = args.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.gate {
        cfg.train.gate = v;
    }
    cfg.train.validate()?;
    let data_dir = required(args.data.or(cfg.paths.data_dir.clone()), "--data", "data_dir")?;
    let run_dir = required(args.out.or(cfg.paths.out_dir.clone()), "--out", "out_dir")?;
    let data = load_dataset(&data_dir)?;
    let mut model = trainer::new_model(&data, cfg.model.clone(), cfg.physical.clone(), &cfg.train)?;
    let summary = trainer::train(&mut model, &data, &cfg.train, &run_dir)?;
    write_json(&run_dir.join("config.json"), &cfg)?;
    let best = Model::load(&summary.best_checkpoint)?;
    write_json(&run_dir.join(EVAL_FILE), &evaluate(&best, &data, &cfg.eval)?)?;
    writeln!(
        out,
        "trained {} steps; best validation loss {:.6} at step {}; checkpoint {}",
        summary.steps,
        summary.best_val,
        summary.best_step,
        summary.best_checkpoint.display()
    )
    .ok();
    Ok(0)
}

fn evaluate_cmd(args: EvaluateArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = args.config.load()?;
    if let Some(l) = args.limit {
        cfg.eval.limit = l;
    }
    let data_dir = required(args.data.or(cfg.paths.data_dir), "--data", "data_dir")?;
    let model = Model::load(&args.checkpoint)?;
    let data = load_dataset(&data_dir)?;
    let report = evaluate(&model, &data, &cfg.eval)?;
    match args.out {
        Some(p) => {
            write_json(&p, &report)?;
            writeln!(out, "wrote {}", p.display()).ok();
        }
        None => {
            writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes")).ok();
        }
    }
    Ok(0)
}

fn sample(args: SampleArgs, out: &mut dyn Write) -> Result<i32> {
    let model = Model::load(&args.checkpoint)?;
    let a = read_annotation(&args.prompt)?;
    let cond = model.conditioning(&a.caption, &a.physical_description, args.gate.gate(&a), a.quantitative);
    let steps = args.steps.unwrap_or(model.config.diffusion_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let clip = model.sample(&cond, steps, &mut rng)?;
    clipio::write_clip(&args.out, &clip)?;
    writeln!(out, "wrote {:?} clip to {}", clip.shape(), args.out.display()).ok();
    Ok(0)
}

#[derive(Serialize)]
struct CategoryScore {
    id: u8,
    name: &'static str,
    probability: f64,
    active: bool,
}

fn classify(args: ClassifyArgs, out: &mut dyn Write) -> Result<i32> {
    let model = Model::load(&args.checkpoint)?;
    let clip = clipio::read_clip(&args.clip)?;
    let (caption, description, quant, gate) = match &args.prompt {
        Some(p) => {
            let a = read_annotation(p)?;
            let gate = args.gate.gate(&a);
            (a.caption, a.physical_description, a.quantitative, gate)
        }
        None => {
            let gate = match args.gate {
                GateMode::AllOnes => GatingVector::ones(),
                GateMode::Zero => GatingVector::zeros(),
                GateMode::True => return Err(Error::usage("--gate true needs --prompt")),
            };
            (String::new(), String::new(), QuantitativeProperties::zero(), gate)
        }
    };
    let cond = model.conditioning(&caption, &description, gate, quant);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let eps = Tensor::randn(&model.config.clip_shape(), 1.0, &mut rng);
    let x_t = model.schedule().q_sample(&clip, args.timestep, &eps);
    let result = model.classify(&x_t, args.timestep, &cond)?;
    let scores: Vec<CategoryScore> = CategoryId::all()
        .zip(&result.probabilities)
        .map(|(c, &p)| CategoryScore {
            id: c.id(),
            name: c.name(),
            probability: p,
            active: p >= 0.5,
        })
        .collect();
    writeln!(out, "{}", serde_json::to_string_pretty(&scores).expect("scores serialize")).ok();
    Ok(0)
}

fn inspect_attn(args: InspectArgs, out: &mut dyn Write) -> Result<i32> {
    let model = Model::load(&args.checkpoint)?;
    let data = load_dataset(&args.data)?;
    let s = data
        .get(&args.clip_id)
        .ok_or_else(|| Error::Dataset(format!("no clip '{}' in {}", args.clip_id, args.data.display())))?;
    let report = attention_report(&model, &s.clip, &s.annotation, args.timestep, args.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_json(&args.out.join(REPORT_FILE), &report)?;
    let (w, h, px) = attention_pgm(&report);
    write_pgm(&args.out.join(ATTENTION_IMAGE), w, h, &px)?;
    if report.applicable {
        for e in report.experts.iter().filter(|e| e.gate > 0.0) {
            writeln!(out, "{:>2} {:<38} ratio {:.3}", e.id, e.name, e.ratio.unwrap_or(f64::NAN)).ok();
        }
    } else {
        writeln!(out, "no moving region: localization not applicable").ok();
    }
    writeln!(out, "wrote {}", args.out.display()).ok();
    Ok(0)
}

fn validate_cmd(args: ValidateArgs, out: &mut dyn Write) -> Result<i32> {
    let mut failed = 0;
    let mut total = 0;
    for path in &args.files {
        let a = match read_annotation(path) {
            Ok(a) => a,
            Err(e) => {
                writeln!(out, "{}: {e}", path.display()).ok();
                failed += 1;
                continue;
            }
        };
        let strict = if args.strict {
            true
        } else if args.lenient {
            false
        } else {
            a.strict
        };
        let violations = validate(&a, strict);
        total += violations.len();
        writeln!(out, "{}: {} violations", path.display(), violations.len()).ok();
        for v in &violations {
            writeln!(out, "  {v}").ok();
        }
        if !strict {
            for v in group_violations(&a.qualitative) {
                writeln!(out, "  warning: {v}").ok();
            }
        }
        if !violations.is_empty() {
            failed += 1;
        }
    }
    writeln!(out, "{total} violations").ok();
    Ok(i32::from(failed > 0))
}

fn stats(args: StatsArgs, out: &mut dyn Write) -> Result<i32> {
    let m = read_manifest(&args.dir)?;
    m.check_splits()?;
    let n = m.entries.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    writeln!(out, "clips {n}").ok();
    for (b, c) in m.branch_counts() {
        if b != Branch::None || c > 0 {
            writeln!(out, "branch {} {c} {:.4}", b.name(), frac(c)).ok();
        }
    }
    let mut kinds: BTreeMap<ScenarioKind, usize> = BTreeMap::new();
    for e in &m.entries {
        *kinds.entry(e.kind).or_default() += 1;
    }
    for (k, c) in kinds {
        writeln!(out, "kind {} {c} {:.4}", k.name(), frac(c)).ok();
    }
    for split in [Split::Train, Split::Val] {
        let c = m.entries.iter().filter(|e| e.split == split).count();
        let name = if split == Split::Train { "train" } else { "val" };
        writeln!(out, "split {name} {c}").ok();
    }
    Ok(0)
}

/// Runs one parsed command, returning its exit code.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Sample(a) => sample(a, out),
        Command::Classify(a) => classify(a, out),
        Command::InspectAttn(a) => inspect_attn(a, out),
        Command::Validate(a) => validate_cmd(a, out),
        Command::Stats(a) => stats(a, out),
    }
}

/// Exit code for each error class.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Schema { .. } | Error::Parse { .. } => 2,
        Error::Io { .. } => 3,
        Error::Dataset(_) => 4,
        Error::NonFiniteLoss { .. } => 5,
        _ => 1,
    }
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_list_every_path() {
        let doc = br#"{"train": {"steps": "many", "bogus": 1}, "model": {"n_heads": 3}, "extra": true}"#;
        match parse_run_config(doc).unwrap_err() {
            Error::Schema { errors } => {
                let joined = errors.join("\n");
                assert!(joined.contains("$.train.steps"), "{joined}");
                assert!(joined.contains("$.train.bogus"), "{joined}");
                assert!(joined.contains("$.extra"), "{joined}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn semantic_errors_follow_shape_errors() {
        let doc = br#"{"model": {"n_heads": 3}, "data": {"frames": 4}}"#;
        match parse_run_config(doc).unwrap_err() {
            Error::Schema { errors } => {
                assert!(errors.iter().any(|e| e.starts_with("$.model")));
                assert!(errors.iter().any(|e| e.starts_with("$.data.frames")));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let bytes = serde_json::to_vec(&cfg).unwrap();
        assert_eq!(parse_run_config(&bytes).unwrap(), cfg);
    }
}
