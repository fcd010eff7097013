//! Procedural physics clips with ground-truth annotations.
//!
//! Each scenario kind renders one phenomenon into a single-channel clip in
//! [-1, 1] and carries a fixed category set. Pixel values are rounded through
//! `f32` so clips survive the on-disk format unchanged.

mod dataset;
pub mod detect;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::physchema::{CategoryVector, PhysicalAnnotation, QuantitativeProperties};

pub use dataset::{
    default_scenarios, load_dataset, make_dataset, sample_kinds, Dataset, DatasetSpec, Manifest, ManifestEntry,
    read_manifest, Sample, ScenarioEntry, Split, THREADS_ENV,
};

/// Frames per second assumed when annotating times.
pub const FPS: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Bounce,
    Pendulum,
    Flow,
    Melt,
    CombustionFlicker,
    Reflection,
    Static,
}

/// Physics branch a scenario is counted under in mixture statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Dynamics,
    Thermodynamics,
    Optics,
    None,
}

impl Branch {
    pub const ALL: [Branch; 4] = [Branch::Dynamics, Branch::Thermodynamics, Branch::Optics, Branch::None];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Dynamics => "dynamics",
            Branch::Thermodynamics => "thermodynamics",
            Branch::Optics => "optics",
            Branch::None => "none",
        }
    }
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Bounce,
        ScenarioKind::Pendulum,
        ScenarioKind::Flow,
        ScenarioKind::Melt,
        ScenarioKind::CombustionFlicker,
        ScenarioKind::Reflection,
        ScenarioKind::Static,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Bounce => "bounce",
            ScenarioKind::Pendulum => "pendulum",
            ScenarioKind::Flow => "flow",
            ScenarioKind::Melt => "melt",
            ScenarioKind::CombustionFlicker => "combustion_flicker",
            ScenarioKind::Reflection => "reflection",
            ScenarioKind::Static => "static",
        }
    }

    pub fn branch(self) -> Branch {
        match self {
            ScenarioKind::Bounce | ScenarioKind::Pendulum | ScenarioKind::Flow => Branch::Dynamics,
            ScenarioKind::Melt | ScenarioKind::CombustionFlicker => Branch::Thermodynamics,
            ScenarioKind::Reflection => Branch::Optics,
            ScenarioKind::Static => Branch::None,
        }
    }

    /// Ground-truth category ids.
    pub fn category_ids(self) -> &'static [u8] {
        match self {
            ScenarioKind::Bounce => &[1, 2, 14, 20, 22, 29],
            ScenarioKind::Pendulum => &[2, 14, 20, 22, 29],
            ScenarioKind::Flow => &[4, 14, 20, 22, 29],
            ScenarioKind::Melt => &[6, 8, 20, 22, 23],
            ScenarioKind::CombustionFlicker => &[5, 13, 20, 22, 29],
            ScenarioKind::Reflection => &[2, 14, 15, 22, 29],
            ScenarioKind::Static => &[7, 14, 20, 22, 29],
        }
    }

    pub fn categories(self) -> CategoryVector {
        CategoryVector::from_ids(self.category_ids()).expect("scenario ids are valid")
    }

    pub fn is_moving(self) -> bool {
        self != ScenarioKind::Static
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Physical knobs; each kind reads the ones it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    /// Disc radius in pixels.
    pub radius: f64,
    /// Downward acceleration in px/frame².
    pub gravity: f64,
    /// Speed ratio kept at a floor impact.
    pub restitution: f64,
    /// Exponential amplitude decay per frame.
    pub damping: f64,
    /// Fraction of the initial block height lost per frame.
    pub melt_rate: f64,
    /// Flame oscillations per frame.
    pub flicker_freq: f64,
    /// Brightness factor of the mirrored image.
    pub attenuation: f64,
    /// Mirror axis: horizontal mirrors top onto bottom.
    pub axis: Axis,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            radius: 2.0,
            gravity: 0.6,
            restitution: 0.85,
            damping: 0.15,
            melt_rate: 0.08,
            flicker_freq: 0.3,
            attenuation: 0.5,
            axis: Axis::Horizontal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub params: ScenarioParams,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
}

fn default_frames() -> usize {
    8
}

fn default_side() -> usize {
    16
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            params: ScenarioParams::default(),
            frames: default_frames(),
            height: default_side(),
            width: default_side(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let bad = |m: String| Err(Error::usage(format!("{} scenario: {m}", self.kind.name())));
        if self.frames < 2 {
            return bad(format!("needs at least 2 frames, got {}", self.frames));
        }
        if self.height < 8 || self.width < 8 {
            return bad(format!("frame {}x{} smaller than 8x8", self.height, self.width));
        }
        if !(p.radius >= 0.5 && 2.0 * p.radius + 2.0 <= self.height.min(self.width) as f64 / 2.0) {
            return bad(format!("radius {} does not fit the frame", p.radius));
        }
        if !(p.gravity >= 0.0 && p.gravity.is_finite()) {
            return bad(format!("gravity {} must be finite and >= 0", p.gravity));
        }
        if !(0.0..=1.0).contains(&p.restitution) {
            return bad(format!("restitution {} outside [0, 1]", p.restitution));
        }
        if !(0.0..1.0).contains(&p.damping) {
            return bad(format!("damping {} outside [0, 1)", p.damping));
        }
        if self.kind == ScenarioKind::Melt
            && !(p.melt_rate > 0.0 && p.melt_rate * (self.frames - 1) as f64 <= 0.9)
        {
            return bad(format!(
                "melt_rate {} must be positive and leave ice after {} frames",
                p.melt_rate, self.frames
            ));
        }
        if !(0.2..=0.4).contains(&p.flicker_freq) {
            return bad(format!("flicker_freq {} outside [0.2, 0.4]", p.flicker_freq));
        }
        if !(p.attenuation > 0.05 && p.attenuation < 0.95) {
            return bad(format!("attenuation {} outside (0.05, 0.95)", p.attenuation));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClip {
    pub kind: ScenarioKind,
    pub frames: Tensor,
    pub annotation: PhysicalAnnotation,
    pub seed: u64,
}

/// Renders `s` with initial conditions drawn from `seed`.
pub fn generate(s: &Scenario, seed: u64) -> Result<SyntheticClip> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rendered = render::render(s, &mut rng);
    let brightness = rendered.frames;
    let data = brightness
        .iter()
        .map(|&b| f64::from((2.0 * b.clamp(0.0, 1.0) - 1.0) as f32))
        .collect();
    let frames = Tensor::new(&[s.frames, s.height, s.width], data)?;
    let variant = rng.random_range(0..2usize);
    let (caption, physical_description) = describe(s.kind, variant);
    let annotation = PhysicalAnnotation {
        caption,
        physical_description,
        qualitative: s.kind.categories(),
        quantitative: quantities(s, rendered.event_frames)?,
        strict: true,
    };
    Ok(SyntheticClip {
        kind: s.kind,
        frames,
        annotation,
        seed,
    })
}

fn quantities(s: &Scenario, event_frames: f64) -> Result<QuantitativeProperties> {
    let duration = s.frames as f64 / FPS;
    let event = event_frames / FPS;
    let (density, time, temperature) = match s.kind {
        ScenarioKind::Bounce => (1100.0, (event, duration), (20.0, 20.0)),
        ScenarioKind::Pendulum => (7850.0, (0.0, event), (20.0, 20.0)),
        ScenarioKind::Flow => (1000.0, (0.0, duration), (15.0, 25.0)),
        ScenarioKind::Melt => (917.0, (0.0, event), (-5.0, 25.0)),
        ScenarioKind::CombustionFlicker => (0.3, (0.0, event), (600.0, 1200.0)),
        ScenarioKind::Reflection => (2500.0, (0.0, duration), (20.0, 20.0)),
        ScenarioKind::Static => (0.0, (0.0, 0.0), (20.0, 20.0)),
    };
    // round to three significant digits so annotations read naturally
    let r = |v: f64| {
        if v == 0.0 {
            0.0
        } else {
            format!("{v:.2e}").parse::<f64>().expect("formatted float parses")
        }
    };
    QuantitativeProperties::from_values(density, (r(time.0), r(time.1).max(r(time.0))), temperature)
}

fn describe(kind: ScenarioKind, variant: usize) -> (String, String) {
    let (captions, description): ([&str; 2], &str) = match kind {
        ScenarioKind::Bounce => (
            ["a rubber ball bounces on the floor", "a small ball drops and bounces"],
            "gravity pulls the ball down and each collision with the floor reverses its vertical velocity while the ball keeps its rigid shape",
        ),
        ScenarioKind::Pendulum => (
            ["a steel pendulum swings back and forth", "a pendulum bob swings below its pivot"],
            "the rigid pendulum rotates about the pivot under gravity and friction makes the swing amplitude gradually decrease",
        ),
        ScenarioKind::Flow => (
            ["a blob of water drifts across the frame", "a patch of liquid flows sideways"],
            "the liquid is carried by a steady current and wobbles as it flows",
        ),
        ScenarioKind::Melt => (
            ["a block of ice melts on the ground", "an ice cube slowly melts"],
            "heat from the warm air melts the ice so the block loses height and deforms into liquid",
        ),
        ScenarioKind::CombustionFlicker => (
            ["a small flame flickers", "a candle flame burns and flickers"],
            "combustion releases hot gas that rises and makes the flame brightness oscillate",
        ),
        ScenarioKind::Reflection => (
            ["a ball rolls above a mirror surface", "a ball moves over calm reflective water"],
            "the surface reflects the moving ball so a dimmer mirrored copy appears below it",
        ),
        ScenarioKind::Static => (
            ["an empty dark scene", "a still dark background"],
            "nothing moves and no physical phenomenon is visible",
        ),
    };
    (captions[variant % 2].to_string(), description.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physchema::validate;

    #[test]
    fn every_kind_validates_strictly_and_is_deterministic() {
        for kind in ScenarioKind::ALL {
            let s = Scenario::new(kind);
            let a = generate(&s, 7).unwrap();
            assert!(validate(&a.annotation, true).is_empty(), "{kind:?}");
            assert_eq!(a, generate(&s, 7).unwrap());
            assert!(a.frames.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(a.frames.shape(), &[8, 16, 16]);
        }
    }

    #[test]
    fn melt_activates_melting_without_dynamics_fallback() {
        let a = generate(&Scenario::new(ScenarioKind::Melt), 3).unwrap();
        let ids: Vec<u8> = a.annotation.qualitative.ids().iter().map(|c| c.id()).collect();
        assert!(ids.contains(&8));
        assert!(!ids.contains(&7));
    }

    #[test]
    fn degenerate_parameters_rejected() {
        let mut s = Scenario::new(ScenarioKind::Bounce);
        s.params.radius = 0.0;
        assert!(matches!(generate(&s, 0), Err(Error::Usage(_))));
        let mut s = Scenario::new(ScenarioKind::Bounce);
        s.frames = 0;
        assert!(generate(&s, 0).is_err());
    }

    #[test]
    fn branch_weights_cover_kinds() {
        assert_eq!(ScenarioKind::Reflection.branch(), Branch::Optics);
        assert!(ScenarioKind::ALL.iter().all(|k| k.categories().count() >= 5));
    }
}
