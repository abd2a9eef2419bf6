//! Convergence traces and their CSV exports.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row of a convergence trace. `agent` is `None` for centralized FQI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub agent: Option<usize>,
    pub iteration: usize,
    pub sup_norm: f64,
    /// Q-function evaluations spent maximizing over controls in this iteration.
    pub eval_count: u64,
    /// Joint-kernel auxiliary evaluations (AMAFQI only, zero for FQI).
    pub aux_eval_count: u64,
    pub wall_ms: f64,
}

/// Writes `iteration,sup_norm,eval_count,wall_ms`.
pub fn write_fqi_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "sup_norm", "eval_count", "wall_ms"])?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.sup_norm.to_string(),
            r.eval_count.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `agent,iteration,sup_norm,eval_count,wall_ms`.
pub fn write_amafqi_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["agent", "iteration", "sup_norm", "eval_count", "wall_ms"])?;
    for r in rows {
        w.write_record([
            r.agent.map(|a| a.to_string()).unwrap_or_default(),
            r.iteration.to_string(),
            r.sup_norm.to_string(),
            r.eval_count.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_headers() {
        let rows = vec![TraceRow {
            agent: Some(2),
            iteration: 1,
            sup_norm: 0.5,
            eval_count: 10,
            aux_eval_count: 5,
            wall_ms: 1.25,
        }];
        let mut buf = Vec::new();
        write_amafqi_trace_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "agent,iteration,sup_norm,eval_count,wall_ms\n2,1,0.5,10,1.25\n"
        );
        let mut buf = Vec::new();
        write_fqi_trace_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,sup_norm,eval_count,wall_ms\n1,0.5,10,1.25\n"
        );
    }
}
