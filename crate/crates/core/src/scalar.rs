//! Dose quantities.
//!
//! Everything that counts milligrams is generic over [`Scalar`]. The exact
//! rational type is the default used by the crate-root aliases; `f64` and
//! `f32` are available for callers that prefer floats.

use std::fmt::{self, Debug};

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num};
use serde::de::{self, Deserializer, Visitor};

/// Numeric type used for milligram amounts.
pub trait Scalar: Num + FromPrimitive + Clone + PartialOrd + Debug + Send + Sync + 'static {
    /// Plain decimal text with no trailing zeros and no exponent (`1`, `2.5`, `450`).
    fn to_decimal_string(&self) -> String;

    /// Parses plain or exponent decimal notation. `None` when the text is not
    /// a finite decimal that fits the type.
    fn parse_decimal(text: &str) -> Option<Self>;
}

macro_rules! impl_float_scalar {
    ($f:ty) => {
        impl Scalar for $f {
            fn to_decimal_string(&self) -> String {
                // Display prints the shortest round-tripping form without exponent.
                let text = format!("{}", self);
                if text == "-0" {
                    "0".to_owned()
                } else {
                    text
                }
            }

            fn parse_decimal(text: &str) -> Option<Self> {
                let trimmed = text.trim();
                if !is_decimal_syntax(trimmed) {
                    return None;
                }
                trimmed.parse::<$f>().ok().filter(|v| v.is_finite())
            }
        }
    };
}

impl_float_scalar!(f32);
impl_float_scalar!(f64);

/// Digits emitted after the point before a non-terminating expansion is cut.
const MAX_FRACTION_DIGITS: usize = 18;

impl Scalar for Ratio<i64> {
    fn to_decimal_string(&self) -> String {
        let numer = i128::from(*self.numer());
        let denom = i128::from(*self.denom());
        let negative = (numer < 0) != (denom < 0) && numer != 0;
        let numer = numer.abs();
        let denom = denom.abs();

        let mut out = String::new();
        if negative {
            out.push('-');
        }
        out.push_str(&(numer / denom).to_string());
        let mut rem = numer % denom;
        if rem != 0 {
            out.push('.');
            let mut digits = 0;
            while rem != 0 && digits < MAX_FRACTION_DIGITS {
                rem *= 10;
                out.push(char::from(b'0' + (rem / denom) as u8));
                rem %= denom;
                digits += 1;
            }
        }
        out
    }

    fn parse_decimal(text: &str) -> Option<Self> {
        let trimmed = text.trim();
        if !is_decimal_syntax(trimmed) {
            return None;
        }
        let (negative, body) = match trimmed.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, trimmed.strip_prefix('+').unwrap_or(trimmed)),
        };
        let (mantissa, exponent) = match body.find(['e', 'E']) {
            Some(idx) => (&body[..idx], body[idx + 1..].parse::<i32>().ok()?),
            None => (body, 0),
        };
        let (int_part, frac_part) = match mantissa.split_once('.') {
            Some((i, f)) => (i, f),
            None => (mantissa, ""),
        };

        let mut numer: i64 = 0;
        for c in int_part.chars().chain(frac_part.chars()) {
            let digit = i64::from(c.to_digit(10)?);
            numer = numer.checked_mul(10)?.checked_add(digit)?;
        }
        let scale = exponent - i32::try_from(frac_part.len()).ok()?;
        let pow = 10_i64.checked_pow(scale.unsigned_abs())?;
        let value = if scale >= 0 {
            Ratio::from_integer(numer.checked_mul(pow)?)
        } else {
            Ratio::new(numer, pow)
        };
        Some(if negative { -value } else { value })
    }
}

fn is_decimal_syntax(text: &str) -> bool {
    let body = text
        .strip_prefix('-')
        .or_else(|| text.strip_prefix('+'))
        .unwrap_or(text);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(idx) => (&body[..idx], Some(&body[idx + 1..])),
        None => (body, None),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (mantissa, None),
    };
    let digits = |s: &str| s.chars().all(|c| c.is_ascii_digit());
    let mantissa_ok = digits(int_part)
        && frac_part.is_none_or(digits)
        && !(int_part.is_empty() && frac_part.is_none_or(str::is_empty));
    let exponent_ok = exponent.is_none_or(|e| {
        let e = e.strip_prefix(['-', '+']).unwrap_or(e);
        !e.is_empty() && digits(e)
    });
    mantissa_ok && exponent_ok
}

/// Serde helper that reads a decimal quantity from a number or a string.
///
/// Floats from self-describing formats are converted through their shortest
/// decimal text, so `1.5` in TOML or JSON becomes exactly 3/2 for the
/// rational type.
pub fn deserialize_decimal<'de, D, M>(deserializer: D) -> Result<M, D::Error>
where
    D: Deserializer<'de>,
    M: Scalar,
{
    deserializer.deserialize_any(DecimalVisitor(std::marker::PhantomData))
}

/// `Option` flavour of [`deserialize_decimal`].
pub fn deserialize_opt_decimal<'de, D, M>(deserializer: D) -> Result<Option<M>, D::Error>
where
    D: Deserializer<'de>,
    M: Scalar,
{
    deserialize_decimal(deserializer).map(Some)
}

struct DecimalVisitor<M>(std::marker::PhantomData<M>);

impl<M: Scalar> DecimalVisitor<M> {
    fn parse<E: de::Error>(text: &str) -> Result<M, E> {
        M::parse_decimal(text).ok_or_else(|| E::custom(format!("invalid decimal `{text}`")))
    }
}

impl<M: Scalar> Visitor<'_> for DecimalVisitor<M> {
    type Value = M;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a decimal number")
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<M, E> {
        Self::parse(&v.to_string())
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<M, E> {
        Self::parse(&v.to_string())
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<M, E> {
        Self::parse(&v.to_decimal_string())
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<M, E> {
        Self::parse(v)
    }
}
