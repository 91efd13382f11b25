//! JSON output with floats written to 17 significant digits, so every value
//! reads back bit-identically.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, Serializer};

/// 17 significant digits in the style of C's `%.17g`: fixed notation for
/// decimal exponents in `[-4, 17)`, scientific otherwise, trailing zeros
/// dropped. Exponents are written without padding (`1e20`, `1e-8`).
pub fn g17(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

#[derive(Default)]
struct G17Formatter(CompactFormatter);

impl Formatter for G17Formatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(g17(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Compact single-line JSON. Non-finite floats become `null`, as in serde_json.
pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut out = Vec::new();
    let mut ser = Serializer::with_formatter(&mut out, G17Formatter::default());
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        let cases = [
            (0.1, "0.10000000000000001"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (1e-7, "9.9999999999999995e-8"),
            (123456.789, "123456.789"),
            (1e20, "1e20"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-5"),
            (1.0 / 3.0, "0.33333333333333331"),
            (0.0, "0"),
            (1e16, "10000000000000000"),
            (-1e-5, "-1.0000000000000001e-5"),
        ];
        for (v, s) in cases {
            assert_eq!(g17(v), s, "{v}");
        }
    }

    #[test]
    fn round_trips() {
        let mut x = 0.123_456_789_f64;
        for _ in 0..2000 {
            x = (x * 7.77 + 0.31).fract() * 10f64.powi(((x * 1e4) as i32 % 40) - 20);
            assert_eq!(g17(x).parse::<f64>().unwrap(), x);
            assert_eq!(g17(-x).parse::<f64>().unwrap(), -x);
        }
    }

    #[test]
    fn non_finite_is_null() {
        assert_eq!(to_string(&[1.5, f64::NAN, 2.0]).unwrap(), "[1.5,null,2]");
    }
}
