//! Number rendering shared by every output: nine significant digits,
//! non-finite values as strings.

use serde_json::{Number, Value};

pub const SIGNIFICANT_DIGITS: usize = 9;

pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

pub fn num(x: f64) -> Value {
    match Number::from_f64(round_sig(x)) {
        Some(n) => Value::Number(n),
        None if x.is_nan() => Value::String("nan".into()),
        None if x > 0.0 => Value::String("inf".into()),
        None => Value::String("-inf".into()),
    }
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

/// CSV cell form of [`num`]; plain decimals where they stay short.
pub fn cell(x: f64) -> String {
    let r = round_sig(x);
    if r.is_nan() {
        "nan".into()
    } else if r.is_infinite() {
        if r > 0.0 { "inf" } else { "-inf" }.into()
    } else if r == 0.0 || (1e-4..1e15).contains(&r.abs()) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

pub fn opt_cell(x: Option<f64>) -> String {
    x.map(cell).unwrap_or_default()
}

/// Filesystem-safe label, e.g. `fixed:(1,1)` becomes `fixed11`.
pub fn label(text: &str) -> String {
    text.chars().filter(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_')).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_digits() {
        assert_eq!(round_sig(5.073812345678e6), 5.07381235e6);
        assert_eq!(num(1.0 / 3.0).to_string(), "0.333333333");
        assert_eq!(cell(2.0 / 3.0), "0.666666667");
        assert_eq!(cell(4.9971e-6), "4.9971e-6");
        assert_eq!(cell(5.0738e6), "5073800");
        assert_eq!(cell(0.0), "0");
        assert_eq!(num(f64::INFINITY), Value::String("inf".into()));
    }

    #[test]
    fn labels() {
        assert_eq!(label("fixed:(1,1)"), "fixed11");
        assert_eq!(label("0.07"), "0.07");
    }
}
