//! Trace serialization: one CSV per run, fixed column set, deterministic
//! bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::Trace;
use crate::Real;

/// Column layout of every emitted trace.
pub const TRACE_CSV_HEADER: &str =
    "t,r,e,u,m_dot_i,p,y,f_s,y_m,f_hat_s,y_t,xhat_p,xhat_m,xi1_hat,xi2_hat";

/// Significant digits carried by the CSV (decimal notation).
pub const CSV_SIGNIFICANT_DIGITS: i32 = 12;

/// Fixed-point decimal rendering with at least `sig` significant digits.
///
/// No exponent notation; the fraction length adapts to the magnitude so
/// small values keep their leading digits.
pub fn format_significant(value: f64, sig: i32) -> String {
    if !value.is_finite() {
        return format!("{value}");
    }
    if value == 0.0 {
        return format!("{:.*}", (sig - 1).max(0) as usize, 0.0);
    }
    let exponent = value.abs().log10().floor() as i32;
    let decimals = (sig - 1 - exponent).max(0) as usize;
    format!("{value:.decimals$}")
}

fn fmt<T: Real>(v: T) -> String {
    format_significant(v.to_f64().unwrap_or(f64::NAN), CSV_SIGNIFICANT_DIGITS)
}

/// Render a trace as CSV text (header plus one row per step).
pub fn render_trace_csv<T: Real>(trace: &Trace<T>) -> Result<String> {
    let mut out = String::with_capacity(trace.len() * 16 * 16 + 64);
    out.push_str(TRACE_CSV_HEADER);
    out.push('\n');
    for row in &trace.rows {
        if row.x_hat_e.len() != 4 {
            return Err(Error::Dimension(format!(
                "trace CSV needs the 4 canonical observer states (got {})",
                row.x_hat_e.len()
            )));
        }
        let s = &row.signals;
        let cols = [
            s.t,
            s.r,
            s.e,
            s.u,
            s.m_dot_i,
            s.p,
            s.y,
            s.f_s,
            s.y_m,
            s.f_hat_s,
            s.y_t,
            row.x_hat_e[0],
            row.x_hat_e[1],
            row.x_hat_e[2],
            row.x_hat_e[3],
        ];
        let mut first = true;
        for col in cols {
            if !first {
                out.push(',');
            }
            out.push_str(&fmt(col));
            first = false;
        }
        out.push('\n');
    }
    Ok(out)
}

/// Write a trace CSV; whole-file write, deterministic bytes for a given
/// trace.
pub fn write_trace_csv<T: Real>(trace: &Trace<T>, path: &Path) -> Result<()> {
    let text = render_trace_csv(trace)?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
