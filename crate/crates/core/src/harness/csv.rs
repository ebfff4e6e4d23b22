//! Plain-text CSV emission for run records.

use crate::harness::RunRecord;

pub const RUN_CSV_HEADER: &str = "step,loss,grad_norm,e_m,e_v,delta_subspace,wall_ms";

/// 17 significant digits in scientific notation; parses back to the same bits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn cell(series: Option<&Vec<f64>>, i: usize) -> String {
    series.and_then(|s| s.get(i)).map(|x| format_float(*x)).unwrap_or_default()
}

/// One row per completed step. Oracle columns are left empty when the run has
/// no shadow series for them.
pub fn run_csv(record: &RunRecord) -> String {
    let shadow = record.shadow.as_ref();
    let e_m = shadow.map(|s| &s.e_m);
    let e_v = shadow.and_then(|s| s.second.as_ref()).map(|s| &s.e_v);
    let delta = shadow.map(|s| &s.delta);
    let mut out = String::with_capacity(64 * (record.steps() + 1));
    out.push_str(RUN_CSV_HEADER);
    out.push('\n');
    for i in 0..record.steps() {
        let row = [
            (i + 1).to_string(),
            format_float(record.loss[i]),
            format_float(record.grad_norm[i]),
            cell(e_m, i),
            cell(e_v, i),
            cell(delta, i),
            format_float(record.wall_ms[i]),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
