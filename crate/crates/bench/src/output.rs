//! Report persistence: one JSON report plus tidy CSV tables.
//!
//! `delta.csv`, `rewards.csv` and `work.csv` carry no timings, so two runs
//! with the same configuration produce identical bytes. Timings live in
//! `convergence.csv` and `report.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::bundle::ModelBundle;
use crate::experiment::RunReport;
use crate::BenchError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, BenchError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_convergence_csv(report: &RunReport, path: &Path) -> Result<(), BenchError> {
    let mut w = csv_writer(path)?;
    w.write_record(["instance", "method", "agent", "iteration", "sup_norm", "eval_count", "wall_ms"])?;
    for inst in &report.instances {
        for m in &inst.methods {
            for row in &m.trace {
                w.write_record([
                    inst.instance.to_string(),
                    m.method.name().to_string(),
                    row.agent.map(|a| a.to_string()).unwrap_or_default(),
                    row.iteration.to_string(),
                    row.sup_norm.to_string(),
                    row.eval_count.to_string(),
                    row.wall_ms.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_delta_csv(report: &RunReport, path: &Path) -> Result<(), BenchError> {
    let mut w = csv_writer(path)?;
    w.write_record(["instance", "method", "agent", "state", "local_max", "fqi_max", "delta"])?;
    for inst in &report.instances {
        for d in &inst.deltas {
            for row in &d.rows {
                w.write_record([
                    inst.instance.to_string(),
                    d.method.name().to_string(),
                    row.agent.to_string(),
                    row.state.to_string(),
                    row.local_max.to_string(),
                    row.central_max.to_string(),
                    opt(row.delta),
                ])?;
            }
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_rewards_csv(report: &RunReport, path: &Path) -> Result<(), BenchError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "instance",
        "method",
        "mean_cumulative",
        "std_cumulative",
        "mean_discounted",
        "std_discounted",
        "sentinel_states",
        "generalized",
    ])?;
    for inst in &report.instances {
        for m in &inst.methods {
            let r = m.rewards.as_ref();
            w.write_record([
                inst.instance.to_string(),
                m.method.name().to_string(),
                opt(r.map(|r| r.mean_cumulative)),
                opt(r.map(|r| r.std_cumulative)),
                opt(r.map(|r| r.mean_discounted)),
                opt(r.map(|r| r.std_discounted)),
                m.sentinel_states.to_string(),
                m.generalized.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_work_csv(report: &RunReport, path: &Path) -> Result<(), BenchError> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "instance",
        "method",
        "m",
        "local_controls",
        "L",
        "converged",
        "iterations",
        "evals_per_iteration",
        "expected_per_iteration",
        "aux_evals_per_iteration",
        "total_evals",
    ])?;
    let c = &report.config;
    for inst in &report.instances {
        for m in &inst.methods {
            w.write_record([
                inst.instance.to_string(),
                m.method.name().to_string(),
                c.m.to_string(),
                c.local_controls.to_string(),
                c.batch_len.to_string(),
                m.converged.to_string(),
                m.work.iterations.to_string(),
                m.work.evals_per_iteration.to_string(),
                m.work.expected_per_iteration.to_string(),
                m.work.aux_evals_per_iteration.to_string(),
                m.work.total_evals.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Files written by [`write_all`].
#[derive(Clone, Debug, Default)]
pub struct Written {
    pub report: PathBuf,
    pub tables: Vec<PathBuf>,
    pub models: Vec<PathBuf>,
}

/// Writes the report, the four CSV tables and (if given) model bundles
/// under `dir`, creating it if needed.
pub fn write_all(report: &RunReport, bundles: &[(usize, ModelBundle)], dir: &Path) -> Result<Written, BenchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Written {
        report: dir.join("report.json"),
        ..Written::default()
    };
    let json = serde_json::to_string_pretty(report)?;
    let mut f = fs::File::create(&written.report).map_err(io_err(&written.report))?;
    f.write_all(json.as_bytes()).map_err(io_err(&written.report))?;

    type Writer = fn(&RunReport, &Path) -> Result<(), BenchError>;
    let tables: [(&str, Writer); 4] = [
        ("convergence.csv", write_convergence_csv),
        ("delta.csv", write_delta_csv),
        ("rewards.csv", write_rewards_csv),
        ("work.csv", write_work_csv),
    ];
    for (name, write) in tables {
        let path = dir.join(name);
        write(report, &path)?;
        written.tables.push(path);
    }

    if !bundles.is_empty() {
        let models = dir.join("models");
        fs::create_dir_all(&models).map_err(io_err(&models))?;
        for (instance, bundle) in bundles {
            let path = models.join(format!("instance_{instance:03}_{}.json", bundle.method.file_stem()));
            fs::write(&path, bundle.to_json()?).map_err(io_err(&path))?;
            written.models.push(path);
        }
    }
    Ok(written)
}
