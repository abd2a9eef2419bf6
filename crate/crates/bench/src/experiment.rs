use std::time::Instant;

use amafqi::amafqi::amafqi_run;
use amafqi::fqi::fqi_run;
use amafqi::policy::{generalize, greedy_gap_audit};
use amafqi::seeding::{derive_seed, rng_from_seed};
use amafqi::stats::{mean, std_dev};
use amafqi::{
    AmafqiOutcome, BatchDataset, CentralQ, Error, GapReport, GeneralizedPolicy, LocalQ, MdpSpec, Mode, RewardStats,
    TraceRow,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::ModelBundle;
use crate::config::ExperimentConfig;

/// Learner identifiers used in reports and file names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fqi")]
    Fqi,
    #[serde(rename = "amafqi")]
    Amafqi,
    #[serde(rename = "amafqi-l")]
    AmafqiLight,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fqi => "fqi",
            Method::Amafqi => "amafqi",
            Method::AmafqiLight => "amafqi-l",
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            Method::Fqi => "fqi",
            Method::Amafqi => "amafqi",
            Method::AmafqiLight => "amafqi_l",
        }
    }
}

// Stream ids under each instance seed.
const STREAM_SPEC: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_FQI: u64 = 2;
const STREAM_AMAFQI: u64 = 3;
const STREAM_GENERALIZE: u64 = 4;
const STREAM_GENERALIZE_LIGHT: u64 = 5;
const STREAM_EVAL: u64 = 6;

/// `|max_a q^j(x, a) - max_u Q(x, u)| / max_u Q(x, u)`, or `None` when the
/// centralized maximum is zero.
pub fn delta_metric(local: &LocalQ, central: &CentralQ, x: usize) -> amafqi::Result<Option<f64>> {
    let (local_max, _) = local.greedy(x);
    let (central_max, _) = central.greedy(x)?;
    if central_max == 0.0 {
        return Ok(None);
    }
    Ok(Some(((local_max - central_max) / central_max).abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub agent: usize,
    pub state: usize,
    pub local_max: f64,
    pub central_max: f64,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub method: Method,
    pub rows: Vec<DeltaRow>,
    pub mean: Option<f64>,
    /// Pairs excluded because the centralized maximum is zero.
    pub undefined: usize,
}

impl DeltaReport {
    pub fn compute(method: Method, locals: &[LocalQ], central: &CentralQ) -> amafqi::Result<Self> {
        let mut rows = Vec::new();
        for lq in locals {
            for &x in lq.grid_states() {
                rows.push(DeltaRow {
                    agent: lq.agent(),
                    state: x,
                    local_max: lq.greedy(x).0,
                    central_max: central.greedy(x)?.0,
                    delta: delta_metric(lq, central, x)?,
                });
            }
        }
        let defined: Vec<f64> = rows.iter().filter_map(|r| r.delta).collect();
        Ok(DeltaReport {
            method,
            undefined: rows.len() - defined.len(),
            mean: (!defined.is_empty()).then(|| mean(&defined)),
            rows,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkCounts {
    pub iterations: usize,
    /// Local-q (AMAFQI) or joint-Q (FQI) evaluations in one iteration.
    pub evals_per_iteration: u64,
    /// Joint-kernel smoothing evaluations in one iteration (AMAFQI only).
    pub aux_evals_per_iteration: u64,
    pub total_evals: u64,
    pub expected_per_iteration: u64,
}

impl WorkCounts {
    pub fn from_trace(trace: &[TraceRow], expected_per_iteration: u64) -> Self {
        let iterations = trace.iter().map(|r| r.iteration).max().unwrap_or(0);
        let first: Vec<&TraceRow> = trace.iter().filter(|r| r.iteration == 1).collect();
        WorkCounts {
            iterations,
            evals_per_iteration: first.iter().map(|r| r.eval_count).sum(),
            aux_evals_per_iteration: first.iter().map(|r| r.aux_eval_count).sum(),
            total_evals: trace.iter().map(|r| r.eval_count).sum(),
            expected_per_iteration,
        }
    }
}

/// Per-iteration evaluation count predicted for `method`.
pub fn expected_evals(method: Method, m: usize, arity: usize, batch_len: usize) -> u64 {
    let (l, a) = (batch_len as u64, arity as u64);
    match method {
        Method::Fqi => l * a.pow(m as u32),
        Method::Amafqi => m as u64 * l * a,
        Method::AmafqiLight => l * a,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub converged: bool,
    pub work: WorkCounts,
    pub trace: Vec<TraceRow>,
    pub train_ms: f64,
    pub policy_ms: f64,
    pub rewards: Option<RewardStats>,
    /// Batch states left without a greedy batch control.
    pub sentinel_states: usize,
    pub generalized: bool,
    pub gap_audit: Option<GapReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance: usize,
    pub seed: u64,
    pub methods: Vec<MethodReport>,
    pub deltas: Vec<DeltaReport>,
    pub errors: Vec<String>,
}

impl InstanceReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == method)
    }

    pub fn delta(&self, method: Method) -> Option<&DeltaReport> {
        self.deltas.iter().find(|r| r.method == method)
    }
}

/// Everything a single instance produced, including the fitted models.
pub struct InstanceRun {
    pub report: InstanceReport,
    pub bundles: Vec<ModelBundle>,
}

fn failed(method: Method, trace: Vec<TraceRow>, expected: u64, train_ms: f64, err: &Error) -> MethodReport {
    MethodReport {
        method,
        converged: false,
        work: WorkCounts::from_trace(&trace, expected),
        trace,
        train_ms,
        policy_ms: 0.0,
        rewards: None,
        sentinel_states: 0,
        generalized: false,
        gap_audit: None,
        error: Some(err.to_string()),
    }
}

fn evaluate(spec: &MdpSpec, policy: &GeneralizedPolicy, config: &ExperimentConfig, seed: u64) -> amafqi::Result<RewardStats> {
    spec.evaluate_policy(
        |x| policy.act(x),
        config.tau,
        config.trials,
        config.beta,
        derive_seed(seed, STREAM_EVAL),
    )
}

fn run_fqi(
    spec: &MdpSpec,
    data: &BatchDataset,
    config: &ExperimentConfig,
    seed: u64,
) -> (MethodReport, Option<CentralQ>, Option<ModelBundle>) {
    let expected = expected_evals(Method::Fqi, config.m, config.local_controls, config.batch_len);
    let start = Instant::now();
    let outcome = fqi_run(data, &config.fqi_params(), &mut rng_from_seed(derive_seed(seed, STREAM_FQI)));
    let train_ms = start.elapsed().as_secs_f64() * 1e3;
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let trace = match &e {
                Error::NonConvergence { trace, .. } => trace.clone(),
                _ => Vec::new(),
            };
            return (failed(Method::Fqi, trace, expected, train_ms, &e), None, None);
        }
    };
    let start = Instant::now();
    let actions: amafqi::Result<Vec<usize>> = (0..config.n_states)
        .map(|x| outcome.q.greedy(x).map(|(_, u)| u))
        .collect();
    let policy_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut report = MethodReport {
        method: Method::Fqi,
        converged: true,
        work: WorkCounts::from_trace(&outcome.trace, expected),
        trace: outcome.trace,
        train_ms,
        policy_ms,
        rewards: None,
        sentinel_states: 0,
        generalized: false,
        gap_audit: None,
        error: None,
    };
    let policy = match actions {
        Ok(actions) => GeneralizedPolicy::Lookup {
            controls: data.controls(),
            actions,
        },
        Err(e) => {
            report.error = Some(e.to_string());
            return (report, Some(outcome.q), None);
        }
    };
    match evaluate(spec, &policy, config, seed) {
        Ok(r) => report.rewards = Some(r),
        Err(e) => report.error = Some(e.to_string()),
    }
    let bundle = ModelBundle::new(Method::Fqi, spec.n_states(), policy, None, None);
    (report, Some(outcome.q), Some(bundle))
}

fn run_amafqi(
    method: Method,
    spec: &MdpSpec,
    data: &BatchDataset,
    config: &ExperimentConfig,
    seed: u64,
) -> (MethodReport, Option<AmafqiOutcome>, Option<ModelBundle>) {
    let mode = match method {
        Method::AmafqiLight => Mode::SingleAgent(config.light_agent_index),
        _ => Mode::AllAgents,
    };
    let expected = expected_evals(method, config.m, config.local_controls, config.batch_len);
    let start = Instant::now();
    // Both variants draw from the same stream, so AMAFQI-L reuses the
    // kernels of its agent in the full run.
    let outcome = amafqi_run(
        data,
        &config.amafqi_params(),
        mode,
        &mut rng_from_seed(derive_seed(seed, STREAM_AMAFQI)),
    );
    let train_ms = start.elapsed().as_secs_f64() * 1e3;
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let trace = match &e {
                Error::NonConvergence { trace, .. } => trace.clone(),
                _ => Vec::new(),
            };
            return (failed(method, trace, expected, train_ms, &e), None, None);
        }
    };
    let mut report = MethodReport {
        method,
        converged: true,
        work: WorkCounts::from_trace(&outcome.trace, expected),
        trace: outcome.trace.clone(),
        train_ms: train_ms - outcome.policy_ms,
        policy_ms: outcome.policy_ms,
        rewards: None,
        sentinel_states: outcome.policy.sentinel_count(),
        generalized: false,
        gap_audit: greedy_gap_audit(&outcome.policy, &outcome.model.locals, data).ok(),
        error: None,
    };
    let stream = match method {
        Method::AmafqiLight => STREAM_GENERALIZE_LIGHT,
        _ => STREAM_GENERALIZE,
    };
    let stream = derive_seed(seed, stream);
    let start = Instant::now();
    let policy = generalize(&outcome.policy, data, config.forest(), &mut rng_from_seed(stream));
    report.policy_ms += start.elapsed().as_secs_f64() * 1e3;
    let policy = match policy {
        Ok(p) => p,
        Err(e) => {
            report.error = Some(e.to_string());
            return (report, Some(outcome), None);
        }
    };
    report.generalized = !policy.is_lookup();
    match evaluate(spec, &policy, config, seed) {
        Ok(r) => report.rewards = Some(r),
        Err(e) => report.error = Some(e.to_string()),
    }
    let bundle = ModelBundle::new(
        method,
        spec.n_states(),
        policy,
        Some(outcome.policy.clone()),
        Some(outcome.model.clone()),
    );
    (report, Some(outcome), Some(bundle))
}

/// Generates instance `index` (fresh MDP and batch) and runs every requested
/// learner on it. Failures are recorded in the report.
pub fn run_instance(config: &ExperimentConfig, index: usize) -> InstanceRun {
    let seed = derive_seed(config.seed, index as u64);
    let mut report = InstanceReport {
        instance: index,
        seed,
        methods: Vec::new(),
        deltas: Vec::new(),
        errors: Vec::new(),
    };
    let mut bundles = Vec::new();
    let prepared = MdpSpec::generate(config.m, config.n_states, config.local_controls, derive_seed(seed, STREAM_SPEC))
        .and_then(|spec| {
            let data = spec.sample_batch(config.batch_len, &mut rng_from_seed(derive_seed(seed, STREAM_BATCH)))?;
            Ok((spec, data))
        });
    let (spec, data) = match prepared {
        Ok(p) => p,
        Err(e) => {
            report.errors.push(e.to_string());
            return InstanceRun { report, bundles };
        }
    };

    let mut central = None;
    if config.mode.fqi() {
        let (r, q, b) = run_fqi(&spec, &data, config, seed);
        central = q;
        report.methods.push(r);
        bundles.extend(b);
    }
    for (method, wanted) in [
        (Method::Amafqi, config.mode.amafqi()),
        (Method::AmafqiLight, config.mode.amafqi_light()),
    ] {
        if !wanted {
            continue;
        }
        let (r, outcome, b) = run_amafqi(method, &spec, &data, config, seed);
        if let (Some(q), Some(o)) = (&central, &outcome) {
            match DeltaReport::compute(method, &o.model.locals, q) {
                Ok(d) => report.deltas.push(d),
                Err(e) => report.errors.push(format!("{}: delta: {e}", method.name())),
            }
        }
        report.methods.push(r);
        bundles.extend(b);
    }
    for m in &report.methods {
        if let Some(e) = &m.error {
            report.errors.push(format!("{}: {e}", m.method.name()));
        }
    }
    InstanceRun { report, bundles }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub converged: usize,
    pub mean_iterations: Option<f64>,
    /// Mean over instances of the per-instance mean cumulative reward.
    pub mean_cumulative: Option<f64>,
    pub std_cumulative: Option<f64>,
    pub mean_discounted: Option<f64>,
    /// `(FQI - method) / FQI` of the mean cumulative reward, over instances
    /// where both learners produced a policy.
    pub reward_gap_vs_fqi: Option<f64>,
    pub mean_train_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub methods: Vec<MethodSummary>,
    /// Mean of all defined delta values across instances, per method.
    pub delta_mean: Vec<(Method, Option<f64>)>,
    pub delta_std: Vec<(Method, Option<f64>)>,
    pub delta_undefined: Vec<(Method, usize)>,
    pub failed_instances: usize,
}

impl Aggregate {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == method)
    }

    pub fn delta(&self, method: Method) -> Option<f64> {
        self.delta_mean.iter().find(|(m, _)| *m == method).and_then(|(_, d)| *d)
    }

    pub fn compute(instances: &[InstanceReport]) -> Self {
        let methods = [Method::Fqi, Method::Amafqi, Method::AmafqiLight];
        let present: Vec<Method> = methods
            .into_iter()
            .filter(|&m| instances.iter().any(|i| i.method(m).is_some()))
            .collect();
        let cumulative = |inst: &InstanceReport, m: Method| {
            inst.method(m)
                .and_then(|r| r.rewards.as_ref())
                .map(|r| r.mean_cumulative)
        };
        let opt = |v: &[f64], f: fn(&[f64]) -> f64| (!v.is_empty()).then(|| f(v));
        let summaries = present
            .iter()
            .map(|&method| {
                let reports: Vec<&MethodReport> = instances.iter().filter_map(|i| i.method(method)).collect();
                let conv: Vec<&&MethodReport> = reports.iter().filter(|r| r.converged).collect();
                let iterations: Vec<f64> = conv.iter().map(|r| r.work.iterations as f64).collect();
                let train: Vec<f64> = conv.iter().map(|r| r.train_ms).collect();
                let rewards: Vec<&RewardStats> = reports.iter().filter_map(|r| r.rewards.as_ref()).collect();
                let cum: Vec<f64> = rewards.iter().map(|r| r.mean_cumulative).collect();
                let disc: Vec<f64> = rewards.iter().map(|r| r.mean_discounted).collect();
                let paired: Vec<(f64, f64)> = instances
                    .iter()
                    .filter_map(|i| Some((cumulative(i, Method::Fqi)?, cumulative(i, method)?)))
                    .collect();
                let gap = (method != Method::Fqi && !paired.is_empty()).then(|| {
                    let fqi = paired.iter().map(|p| p.0).sum::<f64>();
                    let own = paired.iter().map(|p| p.1).sum::<f64>();
                    (fqi - own) / fqi
                });
                MethodSummary {
                    method,
                    converged: conv.len(),
                    mean_iterations: opt(&iterations, mean),
                    mean_cumulative: opt(&cum, mean),
                    std_cumulative: opt(&cum, std_dev),
                    mean_discounted: opt(&disc, mean),
                    reward_gap_vs_fqi: gap,
                    mean_train_ms: opt(&train, mean),
                }
            })
            .collect();
        let mut delta_mean = Vec::new();
        let mut delta_std = Vec::new();
        let mut delta_undefined = Vec::new();
        for method in [Method::Amafqi, Method::AmafqiLight] {
            let reports: Vec<&DeltaReport> = instances.iter().filter_map(|i| i.delta(method)).collect();
            if reports.is_empty() {
                continue;
            }
            let values: Vec<f64> = reports
                .iter()
                .flat_map(|d| d.rows.iter().filter_map(|r| r.delta))
                .collect();
            delta_mean.push((method, opt(&values, mean)));
            delta_std.push((method, opt(&values, std_dev)));
            delta_undefined.push((method, reports.iter().map(|d| d.undefined).sum()));
        }
        Aggregate {
            methods: summaries,
            delta_mean,
            delta_std,
            delta_undefined,
            failed_instances: instances.iter().filter(|i| !i.errors.is_empty()).count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub instances: Vec<InstanceReport>,
    pub aggregate: Aggregate,
}

/// Runs every instance (in parallel, each on its own derived seed) and
/// aggregates the results. Models are returned alongside the report.
pub fn run_experiment_with_models(config: &ExperimentConfig) -> (RunReport, Vec<(usize, ModelBundle)>) {
    let runs: Vec<InstanceRun> = (0..config.instances)
        .into_par_iter()
        .map(|i| run_instance(config, i))
        .collect();
    let mut instances = Vec::with_capacity(runs.len());
    let mut bundles = Vec::new();
    for run in runs {
        let index = run.report.instance;
        bundles.extend(run.bundles.into_iter().map(|b| (index, b)));
        instances.push(run.report);
    }
    let aggregate = Aggregate::compute(&instances);
    (
        RunReport {
            config: config.clone(),
            instances,
            aggregate,
        },
        bundles,
    )
}

pub fn run_experiment(config: &ExperimentConfig) -> RunReport {
    run_experiment_with_models(config).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_counts() {
        assert_eq!(expected_evals(Method::Fqi, 3, 2, 500), 4000);
        assert_eq!(expected_evals(Method::Amafqi, 3, 2, 500), 3000);
        assert_eq!(expected_evals(Method::AmafqiLight, 3, 2, 500), 1000);
    }

    #[test]
    fn small_instance_runs_every_method() {
        let config = ExperimentConfig {
            instances: 1,
            batch_len: 200,
            trials: 3,
            tau: 10,
            ..ExperimentConfig::default()
        };
        let run = run_instance(&config, 0);
        assert!(run.report.errors.is_empty(), "{:?}", run.report.errors);
        assert_eq!(run.report.methods.len(), 3);
        assert_eq!(run.report.deltas.len(), 2);
        assert_eq!(run.bundles.len(), 3);
        for m in &run.report.methods {
            assert!(m.converged);
            assert_eq!(m.work.evals_per_iteration, m.work.expected_per_iteration);
            assert!(m.rewards.is_some());
        }
    }
}
