use std::fmt;

use crate::error::Result;
use crate::physchema::categories::{CategoryVector, Group};
use crate::physchema::sci::{encode_scientific, SciNotation};

/// Density (kg/m³), event time range (s) and temperature range (°C).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantitativeProperties {
    pub density: SciNotation,
    pub time_range: [SciNotation; 2],
    pub temperature_range: [SciNotation; 2],
}

/// Number of scalars fed to the quantitative embedding.
pub const QUANT_FEATURES: usize = 10;

impl QuantitativeProperties {
    pub fn from_values(density: f64, time: (f64, f64), temperature: (f64, f64)) -> Result<Self> {
        Ok(Self {
            density: encode_scientific(density)?,
            time_range: [encode_scientific(time.0)?, encode_scientific(time.1)?],
            temperature_range: [
                encode_scientific(temperature.0)?,
                encode_scientific(temperature.1)?,
            ],
        })
    }

    pub fn zero() -> Self {
        Self {
            density: SciNotation::ZERO,
            time_range: [SciNotation::ZERO; 2],
            temperature_range: [SciNotation::ZERO; 2],
        }
    }

    /// Flattened `(c, e)` pairs: density, time min, time max, temperature min,
    /// temperature max.
    pub fn features(&self) -> [f64; QUANT_FEATURES] {
        let mut out = [0.0; QUANT_FEATURES];
        let parts = [
            self.density,
            self.time_range[0],
            self.time_range[1],
            self.temperature_range[0],
            self.temperature_range[1],
        ];
        for (k, p) in parts.iter().enumerate() {
            out[2 * k..2 * k + 2].copy_from_slice(&p.features());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalAnnotation {
    pub caption: String,
    pub physical_description: String,
    pub qualitative: CategoryVector,
    pub quantitative: QuantitativeProperties,
    /// Whether the record claims to satisfy the strict group rules.
    pub strict: bool,
}

/// One broken rule. Violations are data, never errors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
    pub ids: Vec<u8>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)?;
        if !self.ids.is_empty() {
            write!(f, " (ids {:?})", self.ids)?;
        }
        Ok(())
    }
}

fn violation(field: &str, rule: impl Into<String>, ids: Vec<u8>) -> Violation {
    Violation {
        field: field.to_string(),
        rule: rule.into(),
        ids,
    }
}

/// Group-structure rules, applied in strict mode only.
pub fn group_violations(v: &CategoryVector) -> Vec<Violation> {
    let mut out = Vec::new();
    for group in Group::ALL {
        let active: Vec<u8> = v.active_in(group).iter().map(|c| c.id()).collect();
        match group.fallback() {
            None => {
                if active.len() != 1 {
                    out.push(violation("qualitative", format!("{group} exactly one"), active));
                }
            }
            Some(fb) => {
                if active.is_empty() {
                    out.push(violation(
                        "qualitative",
                        format!("{group} requires an active entry"),
                        active,
                    ));
                } else if active.len() > 1 && active.contains(&fb.id()) {
                    out.push(violation(
                        "qualitative",
                        format!("{group} fallback exclusivity"),
                        active,
                    ));
                }
            }
        }
    }
    out
}

fn check_sci(field: &str, s: &SciNotation, out: &mut Vec<Violation>) {
    if !s.is_canonical() {
        out.push(violation(field, "scientific notation form", vec![]));
    }
}

/// Lists every broken invariant; empty iff the annotation is valid in the
/// requested mode. Group-structure rules only apply when `strict`.
pub fn validate(a: &PhysicalAnnotation, strict: bool) -> Vec<Violation> {
    let mut out = Vec::new();
    if a.caption.trim().is_empty() {
        out.push(violation("caption", "caption nonempty", vec![]));
    }
    if strict {
        out.extend(group_violations(&a.qualitative));
    }
    let q = &a.quantitative;
    check_sci("quantitative.density", &q.density, &mut out);
    if q.density.value() < 0.0 {
        out.push(violation("quantitative.density", "density nonnegative", vec![]));
    }
    for (field, range) in [
        ("quantitative.time_range", &q.time_range),
        ("quantitative.temperature_range", &q.temperature_range),
    ] {
        check_sci(field, &range[0], &mut out);
        check_sci(field, &range[1], &mut out);
        if range[0].value() > range[1].value() {
            out.push(violation(field, "range order", vec![]));
        }
    }
    out
}
