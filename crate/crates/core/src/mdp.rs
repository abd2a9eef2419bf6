//! Random multi-agent benchmark MDP: generation, simulation, batch sampling
//! and Monte-Carlo policy evaluation.
//!
//! Every state `x` owns a row-stochastic matrix `P(x)` with one row per joint
//! control (mixed-radix order, see [`ControlSpace`]). The reward of a
//! transition depends only on the state reached: it is drawn uniformly in
//! `[R(x+) - 1/2, R(x+) + 1/2]` and clamped below at zero.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controls::ControlSpace;
use crate::error::{check_range, Error, Result};
use crate::seeding::{rng_from_seed, stream_rng};
use crate::stats::{mean, std_dev};

/// Upper bound of the mean reward draw.
pub const MEAN_REWARD_MAX: f64 = 5.0;
/// Half-width of the uniform reward noise around the mean reward.
pub const REWARD_HALF_WIDTH: f64 = 0.5;

/// Largest state count accepted anywhere.
pub const MAX_STATES: usize = 1 << 20;
/// Largest transition table (`X * |U| * X` entries) the generator builds.
pub const MAX_TRANSITION_ENTRIES: usize = 1 << 26;

const ROW_SUM_TOLERANCE: f64 = 1e-12;

fn check_states(n_states: usize) -> Result<()> {
    if n_states == 0 {
        return Err(Error::config("state count must be at least 1"));
    }
    if n_states > MAX_STATES {
        return Err(Error::config(format!("state count {n_states} exceeds {MAX_STATES}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpSpecRepr", into = "MdpSpecRepr")]
pub struct MdpSpec {
    controls: ControlSpace,
    n_states: usize,
    /// `transitions[x][u][x']`.
    transitions: Vec<Vec<Vec<f64>>>,
    mean_rewards: Vec<f64>,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct MdpSpecRepr {
    m: usize,
    #[serde(rename = "X")]
    x: usize,
    local_control_cardinality: usize,
    #[serde(rename = "P")]
    p: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    r: Vec<f64>,
    seed: u64,
}

impl From<MdpSpec> for MdpSpecRepr {
    fn from(s: MdpSpec) -> Self {
        MdpSpecRepr {
            m: s.controls.agents(),
            x: s.n_states,
            local_control_cardinality: s.controls.arity(),
            p: s.transitions,
            r: s.mean_rewards,
            seed: s.seed,
        }
    }
}

impl TryFrom<MdpSpecRepr> for MdpSpec {
    type Error = Error;

    fn try_from(r: MdpSpecRepr) -> Result<Self> {
        MdpSpec::from_parts(r.m, r.x, r.local_control_cardinality, r.p, r.r, r.seed)
    }
}

impl MdpSpec {
    /// Generates a random instance: each transition entry is drawn uniformly
    /// in `[0, 1]` and rows are normalized; mean rewards are uniform in `[0, 5]`.
    pub fn generate(agents: usize, n_states: usize, arity: usize, seed: u64) -> Result<Self> {
        check_states(n_states)?;
        let controls = ControlSpace::new(agents, arity)?;
        let entries = n_states
            .checked_mul(n_states)
            .and_then(|v| v.checked_mul(controls.size()));
        if entries.is_none_or(|e| e > MAX_TRANSITION_ENTRIES) {
            return Err(Error::config(format!(
                "transition table for {n_states} states and {} joint controls is too large",
                controls.size()
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut transitions = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let mut matrix = Vec::with_capacity(controls.size());
            for _ in 0..controls.size() {
                let mut row: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>()).collect();
                let mut total: f64 = row.iter().sum();
                if total <= 0.0 {
                    row.iter_mut().for_each(|p| *p = 1.0);
                    total = n_states as f64;
                }
                row.iter_mut().for_each(|p| *p /= total);
                matrix.push(row);
            }
            transitions.push(matrix);
        }
        let mean_rewards = (0..n_states)
            .map(|_| rng.gen_range(0.0..=MEAN_REWARD_MAX))
            .collect();
        Ok(MdpSpec {
            controls,
            n_states,
            transitions,
            mean_rewards,
            seed,
        })
    }

    /// Builds a spec from explicit matrices, checking every invariant.
    pub fn from_parts(
        agents: usize,
        n_states: usize,
        arity: usize,
        transitions: Vec<Vec<Vec<f64>>>,
        mean_rewards: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        check_states(n_states)?;
        let controls = ControlSpace::new(agents, arity)?;
        if transitions.len() != n_states {
            return Err(Error::parse(format!(
                "expected {n_states} transition matrices, got {}",
                transitions.len()
            )));
        }
        for (x, matrix) in transitions.iter().enumerate() {
            if matrix.len() != controls.size() {
                return Err(Error::parse(format!(
                    "P({x}) has {} rows, expected {}",
                    matrix.len(),
                    controls.size()
                )));
            }
            for (u, row) in matrix.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::parse(format!(
                        "P({x})[{u}] has {} entries, expected {n_states}",
                        row.len()
                    )));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::parse(format!("P({x})[{u}] has a negative entry")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::parse(format!("P({x})[{u}] sums to {total}")));
                }
            }
        }
        if mean_rewards.len() != n_states {
            return Err(Error::parse(format!(
                "expected {n_states} mean rewards, got {}",
                mean_rewards.len()
            )));
        }
        if mean_rewards
            .iter()
            .any(|r| !(0.0..=MEAN_REWARD_MAX).contains(r))
        {
            return Err(Error::parse("mean rewards must lie in [0, 5]"));
        }
        Ok(MdpSpec {
            controls,
            n_states,
            transitions,
            mean_rewards,
            seed,
        })
    }

    pub fn controls(&self) -> ControlSpace {
        self.controls
    }

    pub fn agents(&self) -> usize {
        self.controls.agents()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean_rewards(&self) -> &[f64] {
        &self.mean_rewards
    }

    /// Row `P(x)[u]` for a joint control index.
    pub fn transition_row(&self, x: usize, u: usize) -> &[f64] {
        &self.transitions[x][u]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Simulates one round from state `x` under joint control index `u`.
    pub fn step_index<R: Rng + ?Sized>(&self, x: usize, u: usize, rng: &mut R) -> (usize, f64) {
        let row = &self.transitions[x][u];
        let draw: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = self.n_states - 1;
        for (x_plus, p) in row.iter().enumerate() {
            acc += p;
            if draw < acc {
                next = x_plus;
                break;
            }
        }
        let centre = self.mean_rewards[next];
        let r = rng.gen_range(centre - REWARD_HALF_WIDTH..=centre + REWARD_HALF_WIDTH);
        (next, r.max(0.0))
    }

    /// Simulates one round; `u` is the vector of local controls.
    pub fn step<R: Rng + ?Sized>(&self, x: usize, u: &[usize], rng: &mut R) -> Result<(usize, f64)> {
        check_range("state", x, self.n_states)?;
        self.controls.validate(u)?;
        Ok(self.step_index(x, self.controls.encode(u), rng))
    }

    /// Draws `len` i.i.d. tuples with `x` and `u` uniform.
    pub fn sample_batch<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<BatchDataset> {
        if len == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        let samples = (0..len)
            .map(|_| {
                let x = rng.gen_range(0..self.n_states);
                let u = rng.gen_range(0..self.controls.size());
                let (x_plus, r) = self.step_index(x, u, rng);
                BatchSample {
                    x,
                    u: self.controls.decode(u),
                    x_plus,
                    r,
                }
            })
            .collect();
        BatchDataset::new(self.n_states, self.controls, samples)
    }

    /// Runs `trials` episodes of `horizon` rounds under `policy`, each from a
    /// uniformly drawn initial state. Trial `t` uses its own stream derived
    /// from `(seed, t)`. The discounted return weights the reward of round
    /// `T = 1, 2, ...` by `beta^T`.
    pub fn evaluate_policy<F>(
        &self,
        policy: F,
        horizon: usize,
        trials: usize,
        beta: f64,
        seed: u64,
    ) -> Result<RewardStats>
    where
        F: Fn(usize) -> Result<usize>,
    {
        let mut cumulative = Vec::with_capacity(trials);
        let mut discounted = Vec::with_capacity(trials);
        for trial in 0..trials {
            let mut rng = stream_rng(seed, trial as u64);
            let mut x = rng.gen_range(0..self.n_states);
            let (mut total, mut disc, mut weight) = (0.0, 0.0, 1.0);
            for _ in 0..horizon {
                let u = policy(x)?;
                check_range("joint control", u, self.controls.size())?;
                let (next, r) = self.step_index(x, u, &mut rng);
                weight *= beta;
                total += r;
                disc += weight * r;
                x = next;
            }
            cumulative.push(total);
            discounted.push(disc);
        }
        Ok(RewardStats::from_trials(cumulative, discounted))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub cumulative: Vec<f64>,
    pub discounted: Vec<f64>,
    pub mean_cumulative: f64,
    pub std_cumulative: f64,
    pub mean_discounted: f64,
    pub std_discounted: f64,
}

impl RewardStats {
    pub fn from_trials(cumulative: Vec<f64>, discounted: Vec<f64>) -> Self {
        RewardStats {
            mean_cumulative: mean(&cumulative),
            std_cumulative: std_dev(&cumulative),
            mean_discounted: mean(&discounted),
            std_discounted: std_dev(&discounted),
            cumulative,
            discounted,
        }
    }
}

/// One recorded transition `(x, u, x+, r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSample {
    pub x: usize,
    pub u: Vec<usize>,
    pub x_plus: usize,
    pub r: f64,
}

/// An ordered batch of transitions. The order is part of the data: policy
/// search breaks ties by sample index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BatchDatasetRepr", into = "BatchDatasetRepr")]
pub struct BatchDataset {
    n_states: usize,
    controls: ControlSpace,
    samples: Vec<BatchSample>,
    joint: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BatchDatasetRepr {
    n_states: usize,
    m: usize,
    local_control_cardinality: usize,
    samples: Vec<BatchSample>,
}

impl From<BatchDataset> for BatchDatasetRepr {
    fn from(d: BatchDataset) -> Self {
        BatchDatasetRepr {
            n_states: d.n_states,
            m: d.controls.agents(),
            local_control_cardinality: d.controls.arity(),
            samples: d.samples,
        }
    }
}

impl TryFrom<BatchDatasetRepr> for BatchDataset {
    type Error = Error;

    fn try_from(r: BatchDatasetRepr) -> Result<Self> {
        let controls = ControlSpace::new(r.m, r.local_control_cardinality)?;
        BatchDataset::new(r.n_states, controls, r.samples)
    }
}

impl BatchDataset {
    pub fn new(n_states: usize, controls: ControlSpace, samples: Vec<BatchSample>) -> Result<Self> {
        check_states(n_states)?;
        if samples.is_empty() {
            return Err(Error::config("batch must hold at least one sample"));
        }
        for s in &samples {
            check_range("state", s.x, n_states)?;
            check_range("next state", s.x_plus, n_states)?;
            controls.validate(&s.u)?;
            if !s.r.is_finite() || s.r < 0.0 {
                return Err(Error::parse(format!("reward {} is not a finite non-negative number", s.r)));
            }
        }
        let joint = samples.iter().map(|s| controls.encode(&s.u)).collect();
        Ok(BatchDataset {
            n_states,
            controls,
            samples,
            joint,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn controls(&self) -> ControlSpace {
        self.controls
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[BatchSample] {
        &self.samples
    }

    /// Mixed-radix index of sample `l`'s joint control.
    pub fn joint_control(&self, l: usize) -> usize {
        self.joint[l]
    }

    pub fn max_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.r).fold(0.0, f64::max)
    }

    /// Sorted list of states appearing as an initial state in the batch.
    pub fn distinct_states(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_states];
        for s in &self.samples {
            seen[s.x] = true;
        }
        (0..self.n_states).filter(|&x| seen[x]).collect()
    }

    /// Ascending indices `l` with `x^l = x`.
    pub fn state_index(&self, x: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter_map(|(l, s)| (s.x == x).then_some(l))
            .collect()
    }

    /// `state_index` for every state at once, in one pass.
    pub fn state_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_states];
        for (l, s) in self.samples.iter().enumerate() {
            out[s.x].push(l);
        }
        out
    }

    /// Reorders the local control components with `perm`: new agent `k` is
    /// old agent `perm[k]`.
    pub fn permute_agents(&self, perm: &[usize]) -> Result<Self> {
        let m = self.controls.agents();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..m).collect::<Vec<_>>() {
            return Err(Error::config("agent permutation is not a permutation"));
        }
        let samples = self
            .samples
            .iter()
            .map(|s| BatchSample {
                u: perm.iter().map(|&p| s.u[p]).collect(),
                ..s.clone()
            })
            .collect();
        BatchDataset::new(self.n_states, self.controls, samples)
    }

    /// Returns a copy with every reward multiplied by `factor`.
    pub fn scale_rewards(&self, factor: f64) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|s| BatchSample {
                r: s.r * factor,
                ..s.clone()
            })
            .collect();
        BatchDataset::new(self.n_states, self.controls, samples)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn csv_header(m: usize) -> Vec<String> {
        let mut h = vec!["x".to_string()];
        h.extend((0..m).map(|j| format!("u_{j}")));
        h.push("x_plus".into());
        h.push("r".into());
        h
    }

    /// Writes `x,u_0,...,u_{m-1},x_plus,r`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::csv_header(self.controls.agents()))?;
        for s in &self.samples {
            let mut rec = vec![s.x.to_string()];
            rec.extend(s.u.iter().map(|a| a.to_string()));
            rec.push(s.x_plus.to_string());
            rec.push(s.r.to_string());
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout of [`write_csv`](Self::write_csv). The agent count
    /// is taken from the header; state count and local cardinality are not
    /// part of the format and must be supplied.
    pub fn read_csv<R: Read>(input: R, n_states: usize, arity: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 4 {
            return Err(Error::parse("dataset header needs at least x,u_0,x_plus,r"));
        }
        let m = header.len() - 3;
        if header != Self::csv_header(m) {
            return Err(Error::parse(format!("unexpected dataset header {header:?}")));
        }
        let controls = ControlSpace::new(m, arity)?;
        let parse_id = |field: &str| {
            field
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::parse(format!("bad id {field:?}: {e}")))
        };
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != m + 3 {
                return Err(Error::parse(format!("row has {} fields, expected {}", rec.len(), m + 3)));
            }
            let x = parse_id(&rec[0])?;
            let u = (1..=m).map(|i| parse_id(&rec[i])).collect::<Result<Vec<_>>>()?;
            let x_plus = parse_id(&rec[m + 1])?;
            let r = rec[m + 2]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(format!("bad reward {:?}: {e}", &rec[m + 2])))?;
            samples.push(BatchSample { x, u, x_plus, r });
        }
        BatchDataset::new(n_states, controls, samples)
    }
}
