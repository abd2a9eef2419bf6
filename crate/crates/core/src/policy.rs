//! Greedy policy search over batch controls and its generalization to
//! unseen states.
//!
//! At every iteration `N`, for each distinct batch state `x`: if every
//! tracked agent's `max_a q^j(x, a)` rose by at least `gamma`, the policy is
//! reset to the first batch control `u^l` (smallest `l` with `x^l = x`) whose
//! components are all local maximizers; if none qualifies the entry becomes
//! the sentinel. Otherwise the previous entry is carried over.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amafqi::LocalQ;
use crate::controls::ControlSpace;
use crate::error::{check_range, Error, Result};
use crate::features::state_features;
use crate::forest::{ForestParams, TreeEnsemble};
use crate::mdp::BatchDataset;

/// Absolute tolerance of the "value equals the maximum" test.
pub const ARGMAX_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyEntry {
    /// Joint control index, `None` for the sentinel.
    pub control: Option<usize>,
    /// Iteration at which the entry was last (re)set.
    pub updated_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    controls: ControlSpace,
    gamma: f64,
    iteration: usize,
    entries: BTreeMap<usize, PolicyEntry>,
}

impl PolicyTable {
    /// All-sentinel table over the distinct states of `dataset`.
    pub fn new(dataset: &BatchDataset, gamma: f64) -> Self {
        PolicyTable {
            controls: dataset.controls(),
            gamma,
            iteration: 0,
            entries: dataset
                .distinct_states()
                .into_iter()
                .map(|x| (x, PolicyEntry::default()))
                .collect(),
        }
    }

    pub fn controls(&self) -> ControlSpace {
        self.controls
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn entries(&self) -> &BTreeMap<usize, PolicyEntry> {
        &self.entries
    }

    pub fn get(&self, x: usize) -> Option<usize> {
        self.entries.get(&x).and_then(|e| e.control)
    }

    pub fn labeled(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().filter_map(|(&x, e)| e.control.map(|u| (x, u)))
    }

    pub fn sentinel_count(&self) -> usize {
        self.entries.values().filter(|e| e.control.is_none()).count()
    }

    /// Writes `state,u_0,...,u_{m-1}`; sentinel rows hold `-1` in every column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.controls.agents();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["state".to_string()];
        header.extend((0..m).map(|j| format!("u_{j}")));
        w.write_record(&header)?;
        for (&x, e) in &self.entries {
            let mut row = vec![x.to_string()];
            match e.control {
                Some(u) => row.extend(self.controls.decode(u).iter().map(usize::to_string)),
                None => row.extend((0..m).map(|_| "-1".to_string())),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout of [`PolicyTable::write_csv`]. The number of agents
    /// comes from the header.
    pub fn read_csv<R: Read>(input: R, arity: usize, gamma: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.is_empty() || &header[0] != "state" {
            return Err(Error::parse("policy csv must start with a `state` column"));
        }
        for (j, name) in header.iter().skip(1).enumerate() {
            if name != format!("u_{j}") {
                return Err(Error::parse(format!("unexpected policy column `{name}`")));
            }
        }
        let controls = ControlSpace::new(header.len() - 1, arity)?;
        let mut entries = BTreeMap::new();
        for record in r.records() {
            let record = record?;
            let field = |i: usize| -> Result<i64> {
                record
                    .get(i)
                    .ok_or_else(|| Error::parse("short policy row"))?
                    .trim()
                    .parse::<i64>()
                    .map_err(|e| Error::parse(format!("policy field: {e}")))
            };
            let x = usize::try_from(field(0)?).map_err(|_| Error::parse("negative state"))?;
            let values = (1..header.len()).map(field).collect::<Result<Vec<_>>>()?;
            let control = if values.iter().all(|&v| v == -1) {
                None
            } else {
                let u = values
                    .iter()
                    .map(|&v| usize::try_from(v).map_err(|_| Error::parse("negative control")))
                    .collect::<Result<Vec<_>>>()?;
                controls.validate(&u)?;
                Some(controls.encode(&u))
            };
            if entries.insert(x, PolicyEntry { control, updated_at: None }).is_some() {
                return Err(Error::parse(format!("state {x} listed twice")));
            }
        }
        Ok(PolicyTable {
            controls,
            gamma,
            iteration: 0,
            entries,
        })
    }
}

/// One policy step from the logged maxima of every tracked agent.
///
/// All `locals` must be at the same iteration `N >= 1` and share the grid
/// states of `dataset`. With a single local q-function this is the
/// single-agent (light) rule.
pub fn policy_update(prev: &PolicyTable, locals: &[LocalQ], dataset: &BatchDataset) -> Result<PolicyTable> {
    let first = locals.first().ok_or_else(|| Error::config("policy update needs a local q-function"))?;
    let n = first.iteration();
    if n == 0 {
        return Ok(prev.clone());
    }
    let states = first.grid_states();
    for lq in locals {
        if lq.iteration() != n || lq.grid_states() != states {
            return Err(Error::config("local q-functions are not aligned"));
        }
    }
    let index = dataset.state_indices();
    let mut next = prev.clone();
    next.iteration = n;
    for (i, &x) in states.iter().enumerate() {
        let rose = locals.iter().all(|lq| {
            let log = lq.maxima_log();
            log[n][i] - log[n - 1][i] >= prev.gamma
        });
        if !rose {
            continue;
        }
        let chosen = index[x].iter().copied().find(|&l| {
            let u = &dataset.samples()[l].u;
            locals.iter().all(|lq| {
                let row = &lq.grid_log()[n][i * lq.arity()..(i + 1) * lq.arity()];
                row[u[lq.agent()]] >= lq.maxima_log()[n][i] - ARGMAX_TOLERANCE
            })
        });
        next.entries.insert(
            x,
            PolicyEntry {
                control: chosen.map(|l| dataset.joint_control(l)),
                updated_at: Some(n),
            },
        );
    }
    Ok(next)
}

/// [`policy_update`] restricted to a single tracked agent.
pub fn policy_update_light(prev: &PolicyTable, local: &LocalQ, dataset: &BatchDataset) -> Result<PolicyTable> {
    policy_update(prev, std::slice::from_ref(local), dataset)
}

/// Policy defined on every state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneralizedPolicy {
    /// Every state has a batch control; no generalization needed.
    Lookup {
        controls: ControlSpace,
        actions: Vec<usize>,
    },
    /// Labeled states answer from the table; the rest fall back to the
    /// kernel-mass majority of a tree ensemble over state features.
    Classifier {
        controls: ControlSpace,
        n_states: usize,
        /// Table entry per state, `None` where the classifier answers.
        table: Vec<Option<usize>>,
        ensemble: TreeEnsemble,
        labels: Vec<usize>,
    },
}

impl GeneralizedPolicy {
    pub fn controls(&self) -> ControlSpace {
        match self {
            GeneralizedPolicy::Lookup { controls, .. } | GeneralizedPolicy::Classifier { controls, .. } => *controls,
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            GeneralizedPolicy::Lookup { actions, .. } => actions.len(),
            GeneralizedPolicy::Classifier { n_states, .. } => *n_states,
        }
    }

    pub fn is_lookup(&self) -> bool {
        matches!(self, GeneralizedPolicy::Lookup { .. })
    }

    /// Joint control index for state `x`.
    pub fn act(&self, x: usize) -> Result<usize> {
        check_range("state", x, self.n_states())?;
        match self {
            GeneralizedPolicy::Lookup { actions, .. } => Ok(actions[x]),
            GeneralizedPolicy::Classifier {
                n_states,
                table,
                ensemble,
                labels,
                ..
            } => match table[x] {
                Some(u) => Ok(u),
                None => ensemble.classify(labels, &state_features(*n_states, x)),
            },
        }
    }

    /// Joint control for state `x`, one component per agent.
    pub fn act_components(&self, x: usize) -> Result<Vec<usize>> {
        Ok(self.controls().decode(self.act(x)?))
    }

    /// Checks internal consistency after deserialization.
    pub fn validate(&self) -> Result<()> {
        let controls = self.controls();
        match self {
            GeneralizedPolicy::Lookup { actions, .. } => {
                for &u in actions {
                    check_range("joint control", u, controls.size())?;
                }
            }
            GeneralizedPolicy::Classifier {
                n_states,
                table,
                ensemble,
                labels,
                ..
            } => {
                if ensemble.dim() != *n_states
                    || ensemble.n_inputs() != labels.len()
                    || labels.is_empty()
                    || table.len() != *n_states
                {
                    return Err(Error::parse("classifier does not match its labels"));
                }
                for &u in table.iter().flatten() {
                    check_range("joint control", u, controls.size())?;
                }
                for &u in labels {
                    check_range("joint control", u, controls.size())?;
                }
            }
        }
        Ok(())
    }
}

/// Extends the table to every state of the MDP.
///
/// If every state `0..n_states` has a batch control the table is used as is.
/// Otherwise a classifier is grown on the state features of the samples whose
/// state is labeled, with the state's control as label.
pub fn generalize<R: Rng + ?Sized>(
    table: &PolicyTable,
    dataset: &BatchDataset,
    forest: ForestParams,
    rng: &mut R,
) -> Result<GeneralizedPolicy> {
    let n_states = dataset.n_states();
    let labeled: BTreeMap<usize, usize> = table.labeled().collect();
    if labeled.is_empty() {
        return Err(Error::InconclusivePolicy);
    }
    let controls = table.controls();
    if (0..n_states).all(|x| labeled.contains_key(&x)) {
        return Ok(GeneralizedPolicy::Lookup {
            controls,
            actions: (0..n_states).map(|x| labeled[&x]).collect(),
        });
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for s in dataset.samples() {
        if let Some(&u) = labeled.get(&s.x) {
            inputs.push(state_features(n_states, s.x));
            labels.push(u);
        }
    }
    if inputs.is_empty() {
        return Err(Error::InconclusivePolicy);
    }
    let ensemble = TreeEnsemble::build(&inputs, forest, rng)?;
    Ok(GeneralizedPolicy::Classifier {
        controls,
        n_states,
        table: (0..n_states).map(|x| labeled.get(&x).copied()).collect(),
        ensemble,
        labels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub state: usize,
    pub agent: usize,
    pub control: usize,
    /// `max_a q^j(x, a) - q^j(x, u(j))`.
    pub gap: f64,
    pub within_gamma: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gamma: f64,
    pub rows: Vec<GapRow>,
    /// Other batch controls at the same state that also maximize every
    /// tracked agent's q-function, as `(state, control)`.
    pub alternates: Vec<(usize, usize)>,
}

impl GapReport {
    /// Labeled states whose gap is below gamma for every tracked agent.
    pub fn states_within(&self) -> usize {
        self.by_state().values().filter(|&&ok| ok).count()
    }

    pub fn states(&self) -> usize {
        self.by_state().len()
    }

    /// Share of labeled states within gamma for every agent (1 if none).
    pub fn fraction_within(&self) -> f64 {
        match self.states() {
            0 => 1.0,
            n => self.states_within() as f64 / n as f64,
        }
    }

    pub fn violations(&self) -> impl Iterator<Item = &GapRow> {
        self.rows.iter().filter(|r| !r.within_gamma)
    }

    fn by_state(&self) -> BTreeMap<usize, bool> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            let ok = out.entry(r.state).or_insert(true);
            *ok &= r.within_gamma;
        }
        out
    }
}

/// Greedy gap of every labeled entry against the final local q-functions.
pub fn greedy_gap_audit(table: &PolicyTable, locals: &[LocalQ], dataset: &BatchDataset) -> Result<GapReport> {
    let controls = table.controls();
    let mut rows = Vec::new();
    let mut alternates = Vec::new();
    for (x, u) in table.labeled() {
        let components = controls.decode(u);
        for lq in locals {
            let (best, _) = lq.greedy(x);
            let gap = best - lq.value(x, components[lq.agent()]);
            rows.push(GapRow {
                state: x,
                agent: lq.agent(),
                control: u,
                gap,
                within_gamma: gap < table.gamma(),
            });
        }
        let mut seen = vec![u];
        for l in dataset.state_index(x) {
            let v = dataset.joint_control(l);
            if seen.contains(&v) {
                continue;
            }
            seen.push(v);
            let comps = controls.decode(v);
            let maximizes = locals
                .iter()
                .all(|lq| lq.value(x, comps[lq.agent()]) >= lq.greedy(x).0 - ARGMAX_TOLERANCE);
            if maximizes {
                alternates.push((x, v));
            }
        }
    }
    Ok(GapReport {
        gamma: table.gamma(),
        rows,
        alternates,
    })
}
