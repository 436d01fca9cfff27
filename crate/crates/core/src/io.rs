//! File-writing helpers shared by every output format.

use std::io::Write;
use std::path::Path;

use serde::Serializer;
use serde_json::value::RawValue;

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Formats a finite float with 17 significant digits, e.g. `1.4142135623730951e0`.
/// Enough digits that parsing returns the same bits.
pub fn fmt_f64(v: f64) -> String {
    debug_assert!(v.is_finite());
    format!("{v:.16e}")
}

/// `serialize_with` adapter writing a float as a 17-significant-digit JSON number.
/// Only meaningful with `serde_json`.
pub fn ser_f64<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    let raw = RawValue::from_string(fmt_f64(*v)).map_err(serde::ser::Error::custom)?;
    serde::Serialize::serialize(&raw, s)
}

pub fn ser_f64_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => ser_f64(v, s),
        None => s.serialize_none(),
    }
}
