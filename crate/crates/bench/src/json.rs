//! JSON output with 17 significant digits per float.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter};

use crate::{BenchError, Result};

/// Writes finite floats as `d.dddddddddddddddde±x`. Non-finite values never
/// reach the formatter; serde_json renders them as `null`.
#[derive(Default)]
pub struct Precise(CompactFormatter);

impl Formatter for Precise {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", format_f64(value))
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// The float rendering shared by JSON and CSV outputs.
pub fn format_f64(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Precise::default());
    value.serialize(&mut ser).map_err(|e| BenchError::Format(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}
