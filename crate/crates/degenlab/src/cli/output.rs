//! Output emission: atomic file writes, RFC-4180 CSV with CRLF rows and
//! 17-significant-digit floats, and the report/diagnostic JSON files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::reglab::{ExponentEstimate, OscillationProfile};

/// Write bytes to `path` atomically: a temp file in the same directory,
/// flushed, then renamed over the target.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = PathBuf::from(path);
    let mut name = path
        .file_name()
        .ok_or_else(|| {
            Error::Validation(format!("output path {path:?} has no file name"))
        })?
        .to_os_string();
    name.push(".tmp");
    tmp.set_file_name(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Fixed float format used in every CSV body: scientific with 16 places
/// after the point (17 significant digits), '.' decimal separator.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// RFC-4180 body: header plus rows, every line CRLF-terminated.
pub fn csv_body(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(header);
    out.push_str("\r\n");
    for row in rows {
        out.push_str(&row.join(","));
        out.push_str("\r\n");
    }
    out
}

/// profiles.csv: one row per (center, radius).
pub fn profiles_csv(profiles: &[OscillationProfile]) -> String {
    let mut rows = Vec::new();
    for (id, p) in profiles.iter().enumerate() {
        for (k, &r) in p.radii.iter().enumerate() {
            rows.push(vec![
                id.to_string(),
                fmt_float(r),
                fmt_float(p.osc0[k]),
                fmt_float(p.osc1_grad[k]),
                fmt_float(p.osc1_lsq[k]),
            ]);
        }
    }
    csv_body("center_id,r,osc0,osc1_grad,osc1_lsq", &rows)
}

/// estimates.csv: one row per (center, fit order); `alpha` is the slope
/// for order 0 and slope - 1 for order 1.
pub fn estimates_csv(estimates: &[(usize, u8, ExponentEstimate)]) -> String {
    let mut rows = Vec::new();
    for (id, order, est) in estimates {
        let alpha = match order {
            0 => est.slope,
            _ => est.slope - 1.0,
        };
        rows.push(vec![
            id.to_string(),
            order.to_string(),
            fmt_float(est.slope),
            fmt_float(alpha),
            fmt_float(est.r_squared),
        ]);
    }
    csv_body("center_id,order,slope,alpha,r2", &rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Best-effort error diagnostic; I/O failures here are swallowed since
/// there is nowhere left to report them.
pub fn write_error_json(dir: &Path, err: &Error) {
    let payload = serde_json::json!({
        "error": err.to_string(),
        "exit_code": err.exit_code(),
    });
    let _ = write_json(&dir.join("error.json"), &payload);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_crlf_and_full_precision() {
        let body = csv_body(
            "a,b",
            &[vec!["1".into(), fmt_float(1.0 / 3.0)]],
        );
        assert!(body.ends_with("\r\n"));
        assert_eq!(body.lines().count(), 2);
        assert!(body.contains("3.3333333333333331e-1"));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        assert!(!path.with_file_name("x.csv.tmp").exists());
    }

    #[test]
    fn profile_rows_match_radii() {
        let p = OscillationProfile {
            center: vec![0.0],
            radii: vec![0.4, 0.2],
            osc0: vec![1.0, 0.5],
            osc1_grad: vec![0.1, 0.05],
            osc1_lsq: vec![0.08, 0.04],
            grad_norm: 0.0,
        };
        let body = profiles_csv(&[p.clone(), p]);
        // Header + 2 centers x 2 radii.
        assert_eq!(body.lines().count(), 5);
        assert!(body.starts_with("center_id,r,osc0,osc1_grad,osc1_lsq\r\n"));
        assert!(body.lines().nth(3).unwrap().starts_with("1,"));
    }
}
