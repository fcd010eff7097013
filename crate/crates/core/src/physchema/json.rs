//! On-disk annotation format.
//!
//! ```json
//! {"caption": "...", "physical_description": "...", "qualitative": [2, 14, 20, 22, 29],
//!  "quantitative": {"density": {"c": 1.1, "e": 3},
//!                   "time_range": [{"c": 0, "e": 0}, {"c": 2, "e": 0}],
//!                   "temperature_range": [{"c": 2, "e": 1}, {"c": 2, "e": 1}]},
//!  "strict": true}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physchema::annotation::{PhysicalAnnotation, QuantitativeProperties};
use crate::physchema::categories::{CategoryId, CategoryVector};
use crate::physchema::sci::SciNotation;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantDoc {
    density: SciNotation,
    time_range: [SciNotation; 2],
    temperature_range: [SciNotation; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationDoc {
    caption: String,
    physical_description: String,
    qualitative: Vec<i64>,
    quantitative: QuantDoc,
    strict: bool,
}

pub fn serialize(a: &PhysicalAnnotation) -> Vec<u8> {
    let doc = AnnotationDoc {
        caption: a.caption.clone(),
        physical_description: a.physical_description.clone(),
        qualitative: a
            .qualitative
            .ids()
            .into_iter()
            .map(|c| i64::from(c.id()))
            .collect(),
        quantitative: QuantDoc {
            density: a.quantitative.density,
            time_range: a.quantitative.time_range,
            temperature_range: a.quantitative.temperature_range,
        },
        strict: a.strict,
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("annotation serialization is infallible");
    out.push(b'\n');
    out
}

/// Renders a serde path, using `$` for the document root.
pub(crate) fn json_path(p: &serde_path_to_error::Path) -> String {
    let s = p.to_string();
    if s == "." {
        "$".to_string()
    } else {
        s
    }
}

/// Deserializes `T` and reports failures with the JSON path of the offending value.
pub(crate) fn from_slice_with_path<'de, T: Deserialize<'de>>(bytes: &'de [u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: json_path(e.path()),
        message: e.inner().to_string(),
    })
}

pub fn parse(bytes: &[u8]) -> Result<PhysicalAnnotation> {
    let doc: AnnotationDoc = from_slice_with_path(bytes)?;
    let mut qualitative = CategoryVector::empty();
    let mut prev = 0;
    for (i, &id) in doc.qualitative.iter().enumerate() {
        let path = format!("qualitative[{i}]");
        let c = CategoryId::new(id).map_err(|e| Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if id <= prev {
            return Err(Error::Parse {
                path,
                message: format!("category ids must be strictly ascending ({prev} then {id})"),
            });
        }
        prev = id;
        qualitative.set(c, true);
    }
    Ok(PhysicalAnnotation {
        caption: doc.caption,
        physical_description: doc.physical_description,
        qualitative,
        quantitative: QuantitativeProperties {
            density: doc.quantitative.density,
            time_range: doc.quantitative.time_range,
            temperature_range: doc.quantitative.temperature_range,
        },
        strict: doc.strict,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::physchema::categories::NUM_CATEGORIES;

    fn sample() -> PhysicalAnnotation {
        PhysicalAnnotation {
            caption: "a steel pendulum swings".into(),
            physical_description: "gravity restores the bob; friction damps the swing".into(),
            qualitative: CategoryVector::from_ids(&[2, 14, 20, 22, 29]).unwrap(),
            quantitative: QuantitativeProperties::from_values(7850.0, (0.0, 3.2), (20.0, 20.0))
                .unwrap(),
            strict: true,
        }
    }

    #[test]
    fn round_trip() {
        let a = sample();
        assert_eq!(parse(&serialize(&a)).unwrap(), a);
    }

    #[test]
    fn id_out_of_range_names_path() {
        let text = String::from_utf8(serialize(&sample()))
            .unwrap()
            .replace("29\n", "30\n");
        let err = parse(text.as_bytes()).unwrap_err();
        match err {
            Error::Parse { path, .. } => assert_eq!(path, "qualitative[4]"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_density_names_path() {
        let mut v: serde_json::Value = serde_json::from_slice(&serialize(&sample())).unwrap();
        v["quantitative"].as_object_mut().unwrap().remove("density");
        let err = parse(&serde_json::to_vec(&v).unwrap()).unwrap_err().to_string();
        assert!(err.contains("quantitative") && err.contains("density"), "{err}");
    }

    #[test]
    fn malformed_and_unknown_fields() {
        assert!(matches!(parse(b"{\"caption\": "), Err(Error::Parse { .. })));
        let mut v: serde_json::Value = serde_json::from_slice(&serialize(&sample())).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(matches!(parse(&serde_json::to_vec(&v).unwrap()), Err(Error::Parse { .. })));
    }

    #[test]
    fn unsorted_ids_rejected() {
        let mut v: serde_json::Value = serde_json::from_slice(&serialize(&sample())).unwrap();
        v["qualitative"] = serde_json::json!([14, 2, 20, 22, 29]);
        match parse(&serde_json::to_vec(&v).unwrap()).unwrap_err() {
            Error::Parse { path, .. } => assert_eq!(path, "qualitative[1]"),
            other => panic!("unexpected {other}"),
        }
    }

    fn sci() -> impl Strategy<Value = SciNotation> {
        prop_oneof![
            Just(SciNotation::ZERO),
            (1.0f64..10.0, any::<bool>(), -30i32..30).prop_map(|(c, neg, e)| SciNotation::new(
                if neg { -c } else { c },
                e
            )),
        ]
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(
            caption in ".{1,40}",
            desc in ".{0,60}",
            mask in proptest::collection::vec(any::<bool>(), NUM_CATEGORIES),
            parts in proptest::collection::vec(sci(), 5),
            strict in any::<bool>(),
        ) {
            let mut qualitative = CategoryVector::empty();
            for (c, on) in CategoryId::all().zip(&mask) {
                qualitative.set(c, *on);
            }
            let a = PhysicalAnnotation {
                caption,
                physical_description: desc,
                qualitative,
                quantitative: QuantitativeProperties {
                    density: parts[0],
                    time_range: [parts[1], parts[2]],
                    temperature_range: [parts[3], parts[4]],
                },
                strict,
            };
            prop_assert_eq!(parse(&serialize(&a)).unwrap(), a);
        }
    }
}
