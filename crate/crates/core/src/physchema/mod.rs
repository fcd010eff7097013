//! Structured physical information: category taxonomy, quantitative properties
//! in scientific notation, annotation records, validation, JSON format, and
//! annotation prompts.

pub mod annotation;
pub mod categories;
pub mod json;
pub mod prompt;
pub mod sci;

pub use annotation::{
    group_violations, validate, PhysicalAnnotation, QuantitativeProperties, Violation,
    QUANT_FEATURES,
};
pub use categories::{CategoryId, CategoryVector, Group, NUM_CATEGORIES};
pub use json::{parse, serialize};
pub use prompt::{build_annotation_prompt, AnnotationRound};
pub use sci::{decode_scientific, encode_scientific, SciNotation};

use crate::mopa::GatingVector;

/// 1.0 at active categories, 0.0 elsewhere.
pub fn to_gating_vector(v: &CategoryVector) -> GatingVector {
    let mut values = [0.0; NUM_CATEGORIES];
    for (slot, &on) in values.iter_mut().zip(v.as_array()) {
        if on {
            *slot = 1.0;
        }
    }
    GatingVector::from_array(values).expect("binary values are valid gates")
}
