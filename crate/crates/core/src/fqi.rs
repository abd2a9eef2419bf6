//! Centralized fitted Q iteration over the joint state-control space.
//!
//! Each iteration regresses `r^l + beta * max_u' Q_{N-1}(x+^l, u')` onto the
//! batch inputs `(x^l, u^l)` through one frozen joint ensemble. The max is
//! taken by enumerating all `|A|^m` joint controls, which is what makes FQI
//! exponential in the number of agents.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controls::ControlSpace;
use crate::error::{check_range, Error, Result};
use crate::features::joint_features;
use crate::forest::{ForestParams, LeafMeans, Route, TreeEnsemble};
use crate::mdp::BatchDataset;
use crate::trace::TraceRow;

pub const DEFAULT_MAX_ITERATIONS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FqiParams {
    pub beta: f64,
    pub epsilon: f64,
    pub forest: ForestParams,
    pub max_iterations: usize,
}

impl FqiParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config(format!("beta {} not in [0, 1)", self.beta)));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("iteration cap must be positive"));
        }
        self.forest.validate()
    }
}

/// Joint Q-function: outputs at the batch points plus the frozen ensemble
/// that generalizes them.
#[derive(Clone, Debug)]
pub struct CentralQ {
    outputs: Vec<f64>,
    ensemble: Arc<TreeEnsemble>,
    iteration: usize,
    beta: f64,
    n_states: usize,
    controls: ControlSpace,
    /// Route of `(x, u)` at index `x * |U| + u`.
    grid: Arc<Vec<Route>>,
    means: LeafMeans,
    last_eval_count: u64,
}

impl CentralQ {
    /// `Q_0 = 0` over a fresh joint ensemble built on `(x^l, u^l)`.
    pub fn new<R: Rng + ?Sized>(dataset: &BatchDataset, forest: ForestParams, beta: f64, rng: &mut R) -> Result<Self> {
        let n_states = dataset.n_states();
        let inputs: Vec<_> = dataset
            .samples()
            .iter()
            .map(|s| joint_features(n_states, s.x, &s.u))
            .collect();
        let ensemble = TreeEnsemble::build(&inputs, forest, rng)?;
        Self::with_ensemble(dataset, ensemble, beta)
    }

    pub fn with_ensemble(dataset: &BatchDataset, ensemble: TreeEnsemble, beta: f64) -> Result<Self> {
        let n_states = dataset.n_states();
        let controls = dataset.controls();
        if ensemble.n_inputs() != dataset.len() {
            return Err(Error::Dimension {
                expected: dataset.len(),
                got: ensemble.n_inputs(),
            });
        }
        let mut grid = Vec::with_capacity(n_states * controls.size());
        for x in 0..n_states {
            for u in 0..controls.size() {
                grid.push(ensemble.route(&joint_features(n_states, x, &controls.decode(u)))?);
            }
        }
        let outputs = vec![0.0; dataset.len()];
        let means = ensemble.leaf_means(&outputs)?;
        Ok(CentralQ {
            outputs,
            ensemble: Arc::new(ensemble),
            iteration: 0,
            beta,
            n_states,
            controls,
            grid: Arc::new(grid),
            means,
            last_eval_count: 0,
        })
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn ensemble(&self) -> &TreeEnsemble {
        &self.ensemble
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn controls(&self) -> ControlSpace {
        self.controls
    }

    /// Q evaluations performed by the iteration that produced this state.
    pub fn last_eval_count(&self) -> u64 {
        self.last_eval_count
    }

    /// `Q_N(x, u)` for a joint control index.
    pub fn value(&self, x: usize, u: usize) -> f64 {
        self.means.predict(&self.grid[x * self.controls.size() + u])
    }

    /// Max and argmax of `Q_N(x, .)` by enumeration; ties go to the smallest
    /// joint control.
    pub fn greedy(&self, x: usize) -> Result<(f64, usize)> {
        check_range("state", x, self.n_states)?;
        let mut best = (self.value(x, 0), 0);
        for u in 1..self.controls.size() {
            let v = self.value(x, u);
            if v > best.0 {
                best = (v, u);
            }
        }
        Ok(best)
    }

    /// One Bellman regression step.
    pub fn iterate(&self, dataset: &BatchDataset) -> Result<CentralQ> {
        if dataset.len() != self.outputs.len() {
            return Err(Error::Dimension {
                expected: self.outputs.len(),
                got: dataset.len(),
            });
        }
        let mut evals = 0u64;
        let outputs: Vec<f64> = dataset
            .samples()
            .iter()
            .map(|s| {
                let best = (0..self.controls.size())
                    .map(|u| {
                        evals += 1;
                        self.value(s.x_plus, u)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                s.r + self.beta * best
            })
            .collect();
        let means = self.ensemble.leaf_means(&outputs)?;
        Ok(CentralQ {
            outputs,
            means,
            iteration: self.iteration + 1,
            last_eval_count: evals,
            ensemble: Arc::clone(&self.ensemble),
            grid: Arc::clone(&self.grid),
            beta: self.beta,
            n_states: self.n_states,
            controls: self.controls,
        })
    }
}

/// One FQI iteration on `q`.
pub fn fqi_iteration(dataset: &BatchDataset, q: &CentralQ) -> Result<CentralQ> {
    q.iterate(dataset)
}

/// `(max_u Q(x, u), argmax)` by enumeration.
pub fn fqi_value(q: &CentralQ, x: usize) -> Result<(f64, usize)> {
    q.greedy(x)
}

#[derive(Clone, Debug)]
pub struct FqiOutcome {
    pub q: CentralQ,
    pub trace: Vec<TraceRow>,
}

/// Iterates until the sup-norm between successive output vectors drops
/// below `epsilon`.
pub fn fqi_run<R: Rng + ?Sized>(dataset: &BatchDataset, params: &FqiParams, rng: &mut R) -> Result<FqiOutcome> {
    params.validate()?;
    let mut q = CentralQ::new(dataset, params.forest, params.beta, rng)?;
    let mut trace = Vec::new();
    loop {
        let start = Instant::now();
        let next = q.iterate(dataset)?;
        let sup_norm = sup_distance(next.outputs(), q.outputs());
        trace.push(TraceRow {
            agent: None,
            iteration: next.iteration(),
            sup_norm,
            eval_count: next.last_eval_count(),
            aux_eval_count: 0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        q = next;
        if sup_norm < params.epsilon {
            return Ok(FqiOutcome { q, trace });
        }
        if q.iteration() >= params.max_iterations {
            return Err(Error::NonConvergence {
                iterations: q.iteration(),
                last_sup_norm: sup_norm,
                trace,
            });
        }
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
