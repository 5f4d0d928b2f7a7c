use std::io::{Read, Write};

use super::{DissimilarityCurve, Result, ScanError};
use crate::models::AxisKind;

/// Seventeen significant digits in scientific notation; round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `trial_value,estimate,stderr,g,L,axis` rows in ascending trial value.
pub fn write_curve_csv<W: Write>(curve: &DissimilarityCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial_value", "estimate", "stderr", "g", "L", "axis"])?;
    let l = curve.segment_len.to_string();
    let mut order: Vec<usize> = (0..curve.len()).collect();
    order.sort_by(|&a, &b| curve.trial_values[a].total_cmp(&curve.trial_values[b]));
    for i in order {
        w.write_record([
            fmt_f64(curve.trial_values[i]).as_str(),
            &fmt_f64(curve.estimates[i]),
            &fmt_f64(curve.stderr[i]),
            &curve.g_label,
            &l,
            curve.axis.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON mirror of the CSV (pretty-printed, stable field order).
pub fn write_curve_json<W: Write>(curve: &DissimilarityCurve, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, curve)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads a curve CSV. `n_batches` is not part of the format and is set to 0.
pub fn read_curve_csv<R: Read>(input: R) -> Result<DissimilarityCurve> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["trial_value", "estimate", "stderr", "g", "L", "axis"] {
        return Err(ScanError::MalformedCurve(format!("unexpected header {header:?}")));
    }
    let mut curve: Option<DissimilarityCurve> = None;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|e| {
                ScanError::MalformedCurve(format!("row {}: column {i}: {e}", line + 1))
            })
        };
        let (t, e, s) = (num(0)?, num(1)?, num(2)?);
        let l: usize = rec[4]
            .parse()
            .map_err(|e| ScanError::MalformedCurve(format!("row {}: L: {e}", line + 1)))?;
        let axis: AxisKind = rec[5].parse().map_err(ScanError::MalformedCurve)?;
        let c = curve.get_or_insert_with(|| DissimilarityCurve {
            axis,
            g_label: rec[3].to_string(),
            segment_len: l,
            n_batches: 0,
            trial_values: Vec::new(),
            estimates: Vec::new(),
            stderr: Vec::new(),
        });
        if c.g_label != rec[3] || c.segment_len != l || c.axis != axis {
            return Err(ScanError::MalformedCurve(format!(
                "row {} mixes curves (g, L or axis differ)",
                line + 1
            )));
        }
        if !(s >= 0.0) {
            return Err(ScanError::MalformedCurve(format!("row {}: negative stderr", line + 1)));
        }
        c.trial_values.push(t);
        c.estimates.push(e);
        c.stderr.push(s);
    }
    curve.ok_or_else(|| ScanError::MalformedCurve("no rows".into()))
}
