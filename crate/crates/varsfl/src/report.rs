//! Round-log serialization.
//!
//! JSONL lines (one `RoundReport` per line) and summary CSV cells print
//! every float with 17 significant digits, enough to reconstruct the exact
//! f64 bit pattern in a reproducibility audit. Identical runs therefore
//! produce byte-identical files.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::Formatter;

/// JSON formatter that renders floats as `d.dddddddddddddddde[sign]exp`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SigDigitFormatter;

impl Formatter for SigDigitFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.7e}")
    }
}

/// 17-significant-digit rendering for CSV cells.
pub fn format_float(value: f64) -> String {
    format!("{value:.16e}")
}

/// Serializes `value` as one JSONL line (appends `\n`, no flush).
pub fn write_jsonl_line<W: Write, T: Serialize>(writer: &mut W, value: &T) -> crate::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut *writer, SigDigitFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| crate::Error::Io(io::Error::other(e)))?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Sample mean and standard deviation (n-1 denominator; 0 for n < 2).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Probe {
        x: f64,
        xs: Vec<f64>,
        n: u64,
    }

    #[test]
    fn floats_round_trip_exactly() {
        let probe = Probe {
            x: std::f64::consts::PI,
            xs: vec![0.1, 1.0 / 3.0, 1e-300, -42.5, 0.0],
            n: 9,
        };
        let mut buf = Vec::new();
        write_jsonl_line(&mut buf, &probe).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert!(line.ends_with('\n'));
        assert!(line.contains("e0") || line.contains("e-"), "{line}");
        let back: Probe = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(back, probe);
    }

    #[test]
    fn identical_values_serialize_identically() {
        let a = Probe {
            x: 0.3,
            xs: vec![],
            n: 1,
        };
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        write_jsonl_line(&mut b1, &a).unwrap();
        write_jsonl_line(&mut b2, &a).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn format_float_has_17_significant_digits() {
        let s = format_float(1.0 / 3.0);
        assert_eq!(s, "3.3333333333333331e-1");
        assert_eq!(format_float(0.0), "0.0000000000000000e0");
    }

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
        let (m1, s1) = mean_std(&[5.0]);
        assert_eq!((m1, s1), (5.0, 0.0));
    }
}
