//! CSV artifacts.
//!
//! Every emitted table starts with a comment line carrying the artifact
//! version and the sha256 of the configuration that produced it, so results
//! can be traced back to their run.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn artifact_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// The provenance comment line, without trailing newline.
pub fn provenance_comment(config_sha256: &str) -> String {
    format!("# artifact_version={} config_sha256={}", artifact_version(), config_sha256)
}

/// RFC 4180 quoting: fields containing commas, quotes, or line breaks are
/// wrapped in double quotes with inner quotes doubled.
pub fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Fixed float rendering for CSV cells: shortest round-trip form, with
/// non-finite values rendered as NA.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".to_string()
    }
}

pub fn csv_to_string(config_sha256: &str, header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&provenance_comment(config_sha256));
    out.push('\n');
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let escaped: Vec<String> = row.iter().map(|f| csv_escape(f)).collect();
        out.push_str(&escaped.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(
    path: &Path,
    config_sha256: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(csv_to_string(config_sha256, header, rows).as_bytes())?;
    Ok(())
}
