//! Joint control encoding.
//!
//! A joint control is a vector of `agents` local control ids, each in
//! `0..arity`. Joint controls are totally ordered by their mixed-radix index
//! with agent 0 as the least significant digit. Every tie-break in the crate
//! ("smallest control wins") refers to this ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest joint control space the crate will enumerate.
pub const MAX_JOINT_CONTROLS: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawControlSpace")]
pub struct ControlSpace {
    agents: usize,
    arity: usize,
    #[serde(skip_serializing)]
    size: usize,
}

#[derive(Deserialize)]
struct RawControlSpace {
    agents: usize,
    arity: usize,
}

impl TryFrom<RawControlSpace> for ControlSpace {
    type Error = Error;

    fn try_from(raw: RawControlSpace) -> Result<Self> {
        ControlSpace::new(raw.agents, raw.arity)
    }
}

impl ControlSpace {
    pub fn new(agents: usize, arity: usize) -> Result<Self> {
        if agents == 0 {
            return Err(Error::config("agent count must be at least 1"));
        }
        if arity == 0 {
            return Err(Error::config("local control cardinality must be at least 1"));
        }
        let mut size = 1usize;
        for _ in 0..agents {
            size = size
                .checked_mul(arity)
                .filter(|&s| s <= MAX_JOINT_CONTROLS)
                .ok_or_else(|| {
                    Error::config(format!(
                        "joint control space {arity}^{agents} exceeds {MAX_JOINT_CONTROLS}"
                    ))
                })?;
        }
        Ok(ControlSpace {
            agents,
            arity,
            size,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    /// Local control cardinality `|A^j|`, shared by all agents.
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Joint control cardinality `|U| = arity^agents`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn validate(&self, u: &[usize]) -> Result<()> {
        if u.len() != self.agents {
            return Err(Error::Dimension {
                expected: self.agents,
                got: u.len(),
            });
        }
        for &a in u {
            crate::error::check_range("local control", a, self.arity)?;
        }
        Ok(())
    }

    /// Mixed-radix index of a joint control. The control must be valid.
    pub fn encode(&self, u: &[usize]) -> usize {
        debug_assert_eq!(u.len(), self.agents);
        u.iter().rev().fold(0, |acc, &a| acc * self.arity + a)
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        debug_assert!(index < self.size);
        let mut rest = index;
        (0..self.agents)
            .map(|_| {
                let a = rest % self.arity;
                rest /= self.arity;
                a
            })
            .collect()
    }

    /// Local control of `agent` inside the joint control `index`.
    pub fn component(&self, index: usize, agent: usize) -> usize {
        let mut rest = index;
        for _ in 0..agent {
            rest /= self.arity;
        }
        rest % self.arity
    }
}
