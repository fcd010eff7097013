use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `coefficient × 10^exponent`, with `|coefficient|` in `[1, 10)` or the
/// canonical zero `(0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SciNotation {
    #[serde(rename = "c")]
    pub coefficient: f64,
    #[serde(rename = "e")]
    pub exponent: i32,
}

impl SciNotation {
    pub const ZERO: SciNotation = SciNotation {
        coefficient: 0.0,
        exponent: 0,
    };

    pub fn new(coefficient: f64, exponent: i32) -> Self {
        Self {
            coefficient,
            exponent,
        }
    }

    /// Whether the pair is in normal form.
    pub fn is_canonical(&self) -> bool {
        if !self.coefficient.is_finite() {
            return false;
        }
        if self.coefficient == 0.0 {
            return self.exponent == 0;
        }
        (1.0..10.0).contains(&self.coefficient.abs())
    }

    /// Decoded real value.
    pub fn value(&self) -> f64 {
        decode_scientific(*self)
    }

    /// The pair as the two model inputs `[coefficient, exponent]`.
    pub fn features(&self) -> [f64; 2] {
        [self.coefficient, f64::from(self.exponent)]
    }
}

/// Splits a finite real into coefficient and decimal exponent.
///
/// Goes through Rust's shortest round-trip `{:e}` formatting, so the
/// coefficient carries exactly the significant decimal digits of `value`
/// (0.016 gives 1.6, not 1.5999999999999999).
pub fn encode_scientific(value: f64) -> Result<SciNotation> {
    if !value.is_finite() {
        return Err(Error::Numeric(format!("cannot encode non-finite value {value}")));
    }
    if value == 0.0 {
        return Ok(SciNotation::ZERO);
    }
    let text = format!("{value:e}");
    let (mantissa, exp) = text
        .split_once('e')
        .expect("LowerExp output always contains an exponent");
    let coefficient: f64 = mantissa.parse().expect("LowerExp mantissa is a valid float");
    let exponent: i32 = exp.parse().expect("LowerExp exponent is a valid integer");
    Ok(SciNotation {
        coefficient,
        exponent,
    })
}

/// Inverse of [`encode_scientific`]. Evaluated as a decimal literal so the
/// result is the correctly rounded value, including for subnormal magnitudes.
pub fn decode_scientific(s: SciNotation) -> f64 {
    if s.coefficient == 0.0 {
        return 0.0;
    }
    format!("{}e{}", s.coefficient, s.exponent)
        .parse()
        .unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn examples() {
        assert_eq!(encode_scientific(300.0).unwrap(), SciNotation::new(3.0, 2));
        assert_eq!(encode_scientific(0.0).unwrap(), SciNotation::new(0.0, 0));
        assert_eq!(encode_scientific(-0.0).unwrap(), SciNotation::ZERO);
        let s = encode_scientific(0.016).unwrap();
        assert_eq!(s.exponent, -2);
        assert!((s.coefficient - 1.6).abs() < 1e-12);
        assert_eq!(encode_scientific(-5.0).unwrap(), SciNotation::new(-5.0, 0));
    }

    #[test]
    fn non_finite_is_numeric_error() {
        for v in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(matches!(encode_scientific(v), Err(Error::Numeric(_))));
        }
    }

    #[test]
    fn extremes() {
        for v in [f64::MAX, f64::MIN_POSITIVE, 5e-324, -1.7976931348623157e308] {
            let s = encode_scientific(v).unwrap();
            assert!(s.is_canonical(), "{v:e} -> {s:?}");
            assert_eq!(decode_scientific(s), v);
        }
    }

    proptest! {
        #[test]
        fn round_trip_within_1e12(v in any::<f64>().prop_filter("finite nonzero", |v| v.is_finite() && *v != 0.0)) {
            let s = encode_scientific(v).unwrap();
            prop_assert!(s.is_canonical());
            let back = decode_scientific(s);
            prop_assert!((back - v).abs() <= 1e-12 * v.abs(), "{v:e} -> {s:?} -> {back:e}");
        }
    }
}
