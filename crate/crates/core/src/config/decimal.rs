//! Exact decimal numbers as written in a config file.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Largest power of ten a decimal may carry; keeps every product in range.
const MAX_SCALE: u32 = 18;
const MAX_DIGITS: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecimalError {
    #[error("{0:?} is not a decimal number")]
    Syntax(String),
    #[error("{0:?} has too many digits to convert exactly")]
    Range(String),
}

/// `mantissa / 10^scale`, normalized so the mantissa has no trailing zero
/// digit unless the scale is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Decimal {
    mantissa: i128,
    scale: u32,
}

impl Decimal {
    pub fn from_int(v: i64) -> Self {
        Self {
            mantissa: v.into(),
            scale: 0,
        }
    }

    fn normalized(mut mantissa: i128, mut scale: u32) -> Self {
        while scale > 0 && mantissa % 10 == 0 {
            mantissa /= 10;
            scale -= 1;
        }
        Self { mantissa, scale }
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa == 0
    }

    pub fn is_negative(&self) -> bool {
        self.mantissa < 0
    }

    pub fn to_f64(&self) -> f64 {
        // the shortest text round-trips through the correctly rounded parser
        self.to_string().parse().expect("decimal text is a valid float")
    }

    /// `self / unit` when that is an integer.
    pub fn div_exact(&self, unit: &Decimal) -> Option<i64> {
        if unit.mantissa == 0 {
            return None;
        }
        // a/10^s ÷ b/10^r = a·10^r / (b·10^s)
        let num = self.mantissa.checked_mul(10i128.checked_pow(unit.scale)?)?;
        let den = unit.mantissa.checked_mul(10i128.checked_pow(self.scale)?)?;
        (num % den == 0).then(|| num / den).and_then(|q| i64::try_from(q).ok())
    }
}

impl FromStr for Decimal {
    type Err = DecimalError;

    /// Accepts TOML number syntax: sign, `_` separators, fraction and
    /// exponent. Infinities and NaN are rejected.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let syntax = || DecimalError::Syntax(text.to_string());
        let range = || DecimalError::Range(text.to_string());
        let clean: String = text.trim().chars().filter(|c| *c != '_').collect();
        let (negative, body) = match clean.as_bytes().first() {
            Some(b'-') => (true, &clean[1..]),
            Some(b'+') => (false, &clean[1..]),
            _ => (false, clean.as_str()),
        };
        let (digits, exponent) = match body.find(['e', 'E']) {
            Some(at) => {
                let e: i64 = body[at + 1..].parse().map_err(|_| syntax())?;
                (&body[..at], e)
            }
            None => (body, 0),
        };
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(syntax());
        }
        if digits.contains('.') && frac.is_empty() {
            return Err(syntax());
        }
        let all = format!("{int}{frac}");
        let significant = all.trim_start_matches('0');
        if significant.len() > MAX_DIGITS {
            return Err(range());
        }
        let mut mantissa: i128 = if significant.is_empty() {
            0
        } else {
            significant.parse().map_err(|_| range())?
        };
        if negative {
            mantissa = -mantissa;
        }
        let scale = frac.len() as i64 - exponent;
        if mantissa == 0 {
            return Ok(Self::from_int(0));
        }
        if scale < 0 {
            let up = u32::try_from(-scale).map_err(|_| range())?;
            let m = 10i128
                .checked_pow(up)
                .and_then(|p| mantissa.checked_mul(p))
                .ok_or_else(range)?;
            return Ok(Self::normalized(m, 0));
        }
        let d = Self::normalized(mantissa, u32::try_from(scale).map_err(|_| range())?);
        if d.scale > MAX_SCALE {
            return Err(range());
        }
        Ok(d)
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.mantissa < 0 { "-" } else { "" };
        let digits = self.mantissa.unsigned_abs().to_string();
        let scale = self.scale as usize;
        if scale == 0 {
            return write!(f, "{sign}{digits}");
        }
        let padded = format!("{digits:0>width$}", width = scale + 1);
        let (int, frac) = padded.split_at(padded.len() - scale);
        write!(f, "{sign}{int}.{frac}")
    }
}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        let s = self.scale.max(other.scale);
        let lift = |d: &Decimal| d.mantissa.saturating_mul(10i128.pow(s - d.scale));
        lift(self).cmp(&lift(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Decimal {
        s.parse().unwrap()
    }

    #[test]
    fn parses_toml_number_forms() {
        assert_eq!(d("0.10"), d("0.1"));
        assert_eq!(d("1e-1"), d("0.1"));
        assert_eq!(d("1_000"), Decimal::from_int(1000));
        assert_eq!(d("-2.50").to_string(), "-2.5");
        assert_eq!(d("3E2").to_string(), "300");
        assert_eq!(d("0.05").to_string(), "0.05");
        for bad in ["", "inf", "nan", "1.", ".5", "1e", "--1", "0x10", "1.2.3"] {
            assert!(bad.parse::<Decimal>().is_err(), "{bad}");
        }
        assert!(matches!("1e400".parse::<Decimal>(), Err(DecimalError::Range(_))));
    }

    #[test]
    fn exact_division() {
        let dt = d("0.1");
        assert_eq!(d("3").div_exact(&dt), Some(30));
        assert_eq!(d("0.3").div_exact(&dt), Some(3));
        assert_eq!(d("0.25").div_exact(&dt), None);
        assert_eq!(d("0.30000000000000001").div_exact(&dt), None);
        assert_eq!(d("0").div_exact(&dt), Some(0));
        assert_eq!(d("1").div_exact(&d("0")), None);
    }

    #[test]
    fn float_conversion_and_order() {
        assert_eq!(d("0.1").to_f64(), 0.1);
        assert_eq!(d("-12.75").to_f64(), -12.75);
        assert!(d("0.25") < d("0.3"));
        assert!(d("-1") < d("0"));
    }
}
