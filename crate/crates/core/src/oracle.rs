//! Exact tabular centralized and distributed Q updates on small deterministic
//! MDPs. Used as ground truth in tests and by `bench prop1`.
//!
//! Both updates run as synchronous sweeps over every `(x, u)` pair.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controls::ControlSpace;
use crate::error::{check_range, Error, Result};

/// Deterministic MDP: `next[x * |U| + u]`, `reward[x * |U| + u]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterministicMdp {
    pub n_states: usize,
    pub controls: ControlSpace,
    pub next: Vec<usize>,
    pub reward: Vec<f64>,
}

impl DeterministicMdp {
    pub fn new(n_states: usize, controls: ControlSpace, next: Vec<usize>, reward: Vec<f64>) -> Result<Self> {
        let size = n_states * controls.size();
        if n_states == 0 {
            return Err(Error::config("at least one state is required"));
        }
        if next.len() != size {
            return Err(Error::Dimension {
                expected: size,
                got: next.len(),
            });
        }
        if reward.len() != size {
            return Err(Error::Dimension {
                expected: size,
                got: reward.len(),
            });
        }
        for &x in &next {
            check_range("next state", x, n_states)?;
        }
        if reward.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::config("rewards must be finite and non-negative"));
        }
        Ok(DeterministicMdp {
            n_states,
            controls,
            next,
            reward,
        })
    }

    /// Uniform successors and integer rewards in `0..=5`.
    pub fn random<R: Rng + ?Sized>(agents: usize, n_states: usize, arity: usize, rng: &mut R) -> Result<Self> {
        let controls = ControlSpace::new(agents, arity)?;
        let size = n_states * controls.size();
        if n_states == 0 {
            return Err(Error::config("at least one state is required"));
        }
        let next = (0..size).map(|_| rng.gen_range(0..n_states)).collect();
        let reward = (0..size).map(|_| rng.gen_range(0..=5u32) as f64).collect();
        Self::new(n_states, controls, next, reward)
    }

    fn at(&self, x: usize, u: usize) -> usize {
        x * self.controls.size() + u
    }
}

/// `Q(x, u)` over every state and joint control.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularQ {
    pub values: Vec<f64>,
    pub beta: f64,
}

impl TabularQ {
    pub fn zeros(mdp: &DeterministicMdp, beta: f64) -> Self {
        TabularQ {
            values: vec![0.0; mdp.n_states * mdp.controls.size()],
            beta,
        }
    }

    pub fn max_at(&self, mdp: &DeterministicMdp, x: usize) -> f64 {
        let n = mdp.controls.size();
        self.values[x * n..(x + 1) * n].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_{u : u(j) = a} Q(x, u)`.
    pub fn projected(&self, mdp: &DeterministicMdp, x: usize, agent: usize, a: usize) -> f64 {
        (0..mdp.controls.size())
            .filter(|&u| mdp.controls.component(u, agent) == a)
            .map(|u| self.values[mdp.at(x, u)])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `q^j(x, a)` for every agent.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularLocalQ {
    /// `values[j][x * arity + a]`.
    pub values: Vec<Vec<f64>>,
    pub beta: f64,
}

impl TabularLocalQ {
    pub fn zeros(mdp: &DeterministicMdp, beta: f64) -> Self {
        let c = mdp.controls;
        TabularLocalQ {
            values: vec![vec![0.0; mdp.n_states * c.arity()]; c.agents()],
            beta,
        }
    }

    pub fn value(&self, mdp: &DeterministicMdp, agent: usize, x: usize, a: usize) -> f64 {
        self.values[agent][x * mdp.controls.arity() + a]
    }

    pub fn max_at(&self, mdp: &DeterministicMdp, agent: usize, x: usize) -> f64 {
        let k = mdp.controls.arity();
        self.values[agent][x * k..(x + 1) * k].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `Q_N(x, u) = r(x, u) + beta * max_u' Q_{N-1}(next(x, u), u')` for every pair.
pub fn tabular_q_sweep(mdp: &DeterministicMdp, q: &TabularQ) -> TabularQ {
    let n = mdp.controls.size();
    let values = (0..mdp.n_states * n)
        .map(|i| mdp.reward[i] + q.beta * q.max_at(mdp, mdp.next[i]))
        .collect();
    TabularQ { values, beta: q.beta }
}

/// `q^j_N(x, a) = max_{u : u(j) = a} max(q^j_{N-1}(x, a),
/// r(x, u) + beta * max_a' q^j_{N-1}(next(x, u), a'))` for every agent.
pub fn tabular_distributed_sweep(mdp: &DeterministicMdp, lq: &TabularLocalQ) -> TabularLocalQ {
    let c = mdp.controls;
    let mut values = lq.values.clone();
    for (agent, table) in values.iter_mut().enumerate() {
        for x in 0..mdp.n_states {
            for u in 0..c.size() {
                let a = c.component(u, agent);
                let i = mdp.at(x, u);
                let candidate = mdp.reward[i] + lq.beta * lq.max_at(mdp, agent, mdp.next[i]);
                let slot = &mut table[x * c.arity() + a];
                *slot = slot.max(candidate);
            }
        }
    }
    TabularLocalQ { values, beta: lq.beta }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub holds: bool,
    pub max_deviation: f64,
    pub sweeps: usize,
}

/// Largest value of `|q^j_N(x, a) - max_{u : u(j) = a} Q_N(x, u)|` over
/// `N = 0..=n_max` and every agent, state and local control.
pub fn proposition1_check(mdp: &DeterministicMdp, beta: f64, n_max: usize) -> Prop1Report {
    let c = mdp.controls;
    let mut q = TabularQ::zeros(mdp, beta);
    let mut lq = TabularLocalQ::zeros(mdp, beta);
    let mut worst: f64 = 0.0;
    for n in 0..=n_max {
        if n > 0 {
            q = tabular_q_sweep(mdp, &q);
            lq = tabular_distributed_sweep(mdp, &lq);
        }
        for j in 0..c.agents() {
            for x in 0..mdp.n_states {
                for a in 0..c.arity() {
                    worst = worst.max((lq.value(mdp, j, x, a) - q.projected(mdp, x, j, a)).abs());
                }
            }
        }
    }
    Prop1Report {
        holds: worst <= 1e-12,
        max_deviation: worst,
        sweeps: n_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    fn toy() -> DeterministicMdp {
        // 2 states, 2 agents, binary controls; u = u0 + 2 u1
        let c = ControlSpace::new(2, 2).unwrap();
        let next = vec![0, 1, 1, 0, 1, 0, 0, 1];
        let reward = vec![0.0, 1.0, 2.0, 3.0, 1.0, 0.0, 0.0, 4.0];
        DeterministicMdp::new(2, c, next, reward).unwrap()
    }

    #[test]
    fn first_sweep_is_reward() {
        let mdp = toy();
        let q = tabular_q_sweep(&mdp, &TabularQ::zeros(&mdp, 0.5));
        assert_eq!(q.values, mdp.reward);
        let lq = tabular_distributed_sweep(&mdp, &TabularLocalQ::zeros(&mdp, 0.5));
        // agent 0, state 0, a = 1: controls 1 and 3 -> max(1, 3)
        assert_eq!(lq.value(&mdp, 0, 0, 1), 3.0);
        assert_eq!(lq.value(&mdp, 1, 1, 0), 1.0);
    }

    #[test]
    fn three_sweeps_by_hand() {
        let mdp = toy();
        let mut q = TabularQ::zeros(&mdp, 0.5);
        for _ in 0..3 {
            q = tabular_q_sweep(&mdp, &q);
        }
        // N=1: max_0 = 3, max_1 = 4
        // N=2: Q = r + 0.5 * max(next): state 0 -> [0+1.5, 1+2, 2+2, 3+1.5] = [1.5, 3, 4, 4.5]
        //                               state 1 -> [1+2, 0+1.5, 0+1.5, 4+2] = [3, 1.5, 1.5, 6]
        // N=3: max_0 = 4.5, max_1 = 6
        let expected = [2.25, 4.0, 5.0, 5.25, 4.0, 2.25, 2.25, 7.0];
        assert_eq!(q.values, expected);
    }

    #[test]
    fn beta_zero_fixed_after_one_sweep() {
        let mdp = toy();
        let q1 = tabular_q_sweep(&mdp, &TabularQ::zeros(&mdp, 0.0));
        assert_eq!(tabular_q_sweep(&mdp, &q1), q1);
    }

    #[test]
    fn single_agent_matches_central() {
        let mut rng = rng_from_seed(3);
        let mdp = DeterministicMdp::random(1, 4, 3, &mut rng).unwrap();
        let mut q = TabularQ::zeros(&mdp, 0.7);
        let mut lq = TabularLocalQ::zeros(&mdp, 0.7);
        for _ in 0..15 {
            q = tabular_q_sweep(&mdp, &q);
            lq = tabular_distributed_sweep(&mdp, &lq);
            assert_eq!(lq.values[0], q.values);
        }
    }

    #[test]
    fn toy_satisfies_equality() {
        let r = proposition1_check(&toy(), 0.5, 20);
        assert!(r.holds);
        assert_eq!(r.max_deviation, 0.0);
    }

    #[test]
    fn rejects_bad_tables() {
        let c = ControlSpace::new(1, 2).unwrap();
        assert!(DeterministicMdp::new(1, c, vec![0], vec![0.0, 0.0]).is_err());
        assert!(DeterministicMdp::new(1, c, vec![0, 1], vec![0.0, 0.0]).is_err());
        assert!(DeterministicMdp::new(1, c, vec![0, 0], vec![0.0, -1.0]).is_err());
    }
}
