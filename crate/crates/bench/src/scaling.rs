use amafqi::amafqi::amafqi_run;
use amafqi::fqi::fqi_run;
use amafqi::seeding::{derive_seed, rng_from_seed};
use amafqi::{Error, MdpSpec, Mode, TraceRow};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiment::{expected_evals, Method};
use crate::BenchError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkRow {
    pub m: usize,
    pub method: Method,
    pub measured: u64,
    pub expected: u64,
}

impl WorkRow {
    pub fn matches(&self) -> bool {
        self.measured == self.expected
    }
}

/// Counts of the first iteration, whether or not the run would converge.
fn first_iteration(result: amafqi::Result<Vec<TraceRow>>) -> Result<u64, BenchError> {
    let trace = match result {
        Ok(trace) => trace,
        Err(Error::NonConvergence { trace, .. }) => trace,
        Err(e) => return Err(e.into()),
    };
    Ok(trace.iter().filter(|r| r.iteration == 1).map(|r| r.eval_count).sum())
}

/// Measures one iteration of every learner for each agent count in `agents`
/// (all other settings from `base`) next to the predicted counts
/// `m * L * |A|`, `L * |A|` and `L * |A|^m`.
pub fn work_scaling_report(base: &ExperimentConfig, agents: &[usize]) -> Result<Vec<WorkRow>, BenchError> {
    let mut rows = Vec::new();
    for &m in agents {
        let config = ExperimentConfig {
            m,
            max_iterations: 1,
            light_agent_index: 0,
            ..base.clone()
        };
        config.validate()?;
        let seed = derive_seed(base.seed, m as u64);
        let spec = MdpSpec::generate(m, config.n_states, config.local_controls, seed)?;
        let data = spec.sample_batch(config.batch_len, &mut rng_from_seed(derive_seed(seed, 1)))?;
        let measured = [
            (
                Method::Amafqi,
                first_iteration(
                    amafqi_run(&data, &config.amafqi_params(), Mode::AllAgents, &mut rng_from_seed(seed)).map(|o| o.trace),
                )?,
            ),
            (
                Method::AmafqiLight,
                first_iteration(
                    amafqi_run(&data, &config.amafqi_params(), Mode::SingleAgent(0), &mut rng_from_seed(seed))
                        .map(|o| o.trace),
                )?,
            ),
            (
                Method::Fqi,
                first_iteration(fqi_run(&data, &config.fqi_params(), &mut rng_from_seed(seed)).map(|o| o.trace))?,
            ),
        ];
        for (method, count) in measured {
            rows.push(WorkRow {
                m,
                method,
                measured: count,
                expected: expected_evals(method, m, config.local_controls, config.batch_len),
            });
        }
    }
    Ok(rows)
}
