//! Prompt templates for caption-driven physical annotation, one per round.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::physchema::categories::Group;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AnnotationRound {
    Description,
    Dynamics,
    Thermodynamics,
    Optics,
    Motion,
    ObjectState,
    Density,
    Time,
    Temperature,
}

impl AnnotationRound {
    pub const ALL: [AnnotationRound; 9] = [
        AnnotationRound::Description,
        AnnotationRound::Dynamics,
        AnnotationRound::Thermodynamics,
        AnnotationRound::Optics,
        AnnotationRound::Motion,
        AnnotationRound::ObjectState,
        AnnotationRound::Density,
        AnnotationRound::Time,
        AnnotationRound::Temperature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnnotationRound::Description => "description",
            AnnotationRound::Dynamics => "dynamics",
            AnnotationRound::Thermodynamics => "thermodynamics",
            AnnotationRound::Optics => "optics",
            AnnotationRound::Motion => "motion",
            AnnotationRound::ObjectState => "object_state",
            AnnotationRound::Density => "density",
            AnnotationRound::Time => "time",
            AnnotationRound::Temperature => "temperature",
        }
    }

    fn group(self) -> Option<Group> {
        match self {
            AnnotationRound::Dynamics => Some(Group::Dynamics),
            AnnotationRound::Thermodynamics => Some(Group::Thermodynamics),
            AnnotationRound::Optics => Some(Group::Optics),
            AnnotationRound::Motion => Some(Group::CameraMotion),
            AnnotationRound::ObjectState => Some(Group::ObjectState),
            _ => None,
        }
    }
}

impl fmt::Display for AnnotationRound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnnotationRound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|r| r.name()).collect();
                Error::usage(format!("unknown annotation round '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

/// Builds the prompt for one annotation round. Pure function of its inputs.
pub fn build_annotation_prompt(caption: &str, round: AnnotationRound) -> Result<String> {
    if caption.trim().is_empty() {
        return Err(Error::usage("annotation prompt needs a nonempty caption"));
    }
    let mut p = String::new();
    p.push_str("You are annotating a short video from its caption.\n");
    p.push_str(&format!("Caption: \"{}\"\n\n", caption.trim()));
    if let Some(group) = round.group() {
        let question = match round {
            AnnotationRound::Motion => "Does the camera move during the video?".to_string(),
            AnnotationRound::ObjectState => {
                "How does the state of the objects change over the video?".to_string()
            }
            _ => format!("Which {} phenomena are visible in the video?", group.name().to_lowercase()),
        };
        p.push_str(&question);
        p.push_str("\nAnswer only with entries from this list, one per line, using the number and name exactly as written:\n");
        for c in group.members() {
            p.push_str(&format!("{}. {}\n", c.id(), c.name()));
        }
        if let Some(fb) = group.fallback() {
            p.push_str(&format!(
                "Answer \"{}. {}\" alone when none of the other entries apply.\n",
                fb.id(),
                fb.name()
            ));
        } else {
            p.push_str("Give exactly one answer.\n");
        }
        return Ok(p);
    }
    let body = match round {
        AnnotationRound::Description => {
            "Describe the physical principles at work in this scene, the phenomena they cause, \
             and how those phenomena show up visually. Use at most three sentences.\n"
        }
        AnnotationRound::Density => {
            "Estimate the density of the main moving object or substance.\n\
             Reply with a single number in kg/m³ written in scientific notation as <coefficient>e<exponent>, \
             for example 1.0e3 for water. Reply 0e0 if nothing moves.\n"
        }
        AnnotationRound::Time => {
            "Estimate how long the physical event in the video lasts in real time.\n\
             Reply with a range in seconds as <min>, <max>, each in scientific notation \
             as <coefficient>e<exponent>, for example 5.0e-1, 2.0e0.\n"
        }
        AnnotationRound::Temperature => {
            "Estimate the temperature range of the main objects during the video.\n\
             Reply with a range in degrees Celsius as <min>, <max>, each in scientific notation \
             as <coefficient>e<exponent>, for example -5.0e0, 2.5e1.\n"
        }
        _ => unreachable!("category rounds handled above"),
    };
    p.push_str(body);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dynamics_lists_all_seven() {
        let p = build_annotation_prompt("a ball falls", AnnotationRound::Dynamics).unwrap();
        for c in Group::Dynamics.members() {
            assert!(p.contains(c.name()), "missing {}", c.name());
        }
        assert!(p.contains("a ball falls"));
    }

    #[test]
    fn density_asks_for_kg_per_m3() {
        let p = build_annotation_prompt("ice melts", AnnotationRound::Density).unwrap();
        assert!(p.contains("kg/m³"));
    }

    #[test]
    fn deterministic_and_validated() {
        for r in AnnotationRound::ALL {
            let a = build_annotation_prompt("x", r).unwrap();
            assert_eq!(a, build_annotation_prompt("x", r).unwrap());
            assert_eq!(r.name().parse::<AnnotationRound>().unwrap(), r);
        }
        assert!(matches!("colour".parse::<AnnotationRound>(), Err(Error::Usage(_))));
        assert!(build_annotation_prompt(" ", AnnotationRound::Time).is_err());
    }
}
