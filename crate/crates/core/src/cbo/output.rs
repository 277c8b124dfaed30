//! CSV emission for run records.

use super::RunRecord;
use std::io::Write;

/// `step,t,v_1..v_d,variance,w2sq,lambda_gate_count,beta_gate_count`.
pub fn csv_header(d: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "t".to_string()];
    h.extend((1..=d).map(|p| format!("v_{p}")));
    h.extend(["variance", "w2sq", "lambda_gate_count", "beta_gate_count"].map(String::from));
    h
}

/// One row per step. An unknown `W₂²` is written as an empty field.
pub fn write_run_csv<W: Write>(out: W, record: &RunRecord) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(record.dim))?;
    for s in &record.steps {
        let mut row = vec![s.step.to_string(), s.t.to_string()];
        row.extend(s.v.iter().map(f64::to_string));
        row.push(s.variance.to_string());
        row.push(s.w2sq.map(|v| v.to_string()).unwrap_or_default());
        row.push(s.lambda_gate_count.to_string());
        row.push(s.beta_gate_count.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `step,t,particle,x_1..x_d`, one row per particle per step. Writes only the header when the
/// record holds no particle positions.
pub fn write_particles_csv<W: Write>(out: W, record: &RunRecord) -> Result<(), csv::Error> {
    let d = record.dim;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "t".to_string(), "particle".to_string()];
    header.extend((1..=d).map(|p| format!("x_{p}")));
    w.write_record(&header)?;
    if let Some(particles) = &record.particles {
        for (s, flat) in record.steps.iter().zip(particles) {
            for (i, x) in flat.chunks(d).enumerate() {
                let mut row = vec![s.step.to_string(), s.t.to_string(), i.to_string()];
                row.extend(x.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
