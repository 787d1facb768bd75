//! Finite-horizon MDP abstraction.
//!
//! Models report costs in their natural sense (costs when minimizing,
//! contributions when maximizing). The solvers work internally with costs to
//! be minimized; [`Sense::to_internal`] negates maximization objectives at the
//! model boundary and [`Sense::from_internal`] maps values back.
//!
//! The noise `W_{t+1}` drawn at stage `t` is assumed independent across
//! stages and of the state; models are responsible for honouring that.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    #[default]
    Minimize,
    Maximize,
}

impl Sense {
    #[inline]
    pub fn to_internal(self, v: f64) -> f64 {
        match self {
            Sense::Minimize => v,
            Sense::Maximize => -v,
        }
    }

    #[inline]
    pub fn from_internal(self, v: f64) -> f64 {
        self.to_internal(v)
    }
}

/// A realization of the exogenous noise as a small vector of coordinates.
pub trait NoisePoint: Copy + Send + Sync + std::fmt::Debug + 'static {
    const DIM: usize;
    fn coords(&self) -> &[f64];
    fn from_coords(c: &[f64]) -> Self;
}

impl<const N: usize> NoisePoint for [f64; N] {
    const DIM: usize = N;

    fn coords(&self) -> &[f64] {
        self
    }

    fn from_coords(c: &[f64]) -> Self {
        let mut out = [0.0; N];
        out.copy_from_slice(c);
        out
    }
}

/// A finite-horizon MDP with exogenous noise.
///
/// Stages are `0..horizon()`; `sample_noise(t, _)` draws the information
/// `W_{t+1}` revealed after the decision at stage `t`, and
/// `noise_density(t, w)` is its density.
pub trait MdpModel: Sync {
    type Noise: NoisePoint;

    fn horizon(&self) -> usize;
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Feasible actions of `state`, in increasing order. Never empty.
    fn feasible_actions(&self, state: usize) -> &[usize];
    fn sense(&self) -> Sense;

    /// Cost (or contribution, when maximizing) `c_t(s, a, w)`.
    fn cost(&self, t: usize, state: usize, action: usize, w: &Self::Noise) -> f64;
    /// System model `S^M(s, a, w)`.
    fn transition(&self, t: usize, state: usize, action: usize, w: &Self::Noise) -> usize;

    fn sample_noise<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Self::Noise;
    fn noise_density(&self, t: usize, w: &Self::Noise) -> f64;

    /// Marginal `p`-quantile of noise coordinate `dim` at stage `t`, if known.
    fn noise_marginal_quantile(&self, _t: usize, _dim: usize, _p: f64) -> Option<f64> {
        None
    }

    /// Bound on `|c_t|`, used to size default projection boxes.
    fn stage_cost_bound(&self) -> Option<f64> {
        None
    }

    /// Cost in the solver's internal minimization convention.
    #[inline]
    fn internal_cost(&self, t: usize, state: usize, action: usize, w: &Self::Noise) -> f64 {
        self.sense().to_internal(self.cost(t, state, action, w))
    }
}

/// Checked single transition: returns `(c_t(s, a, w), S^M(s, a, w))`.
pub fn step<M: MdpModel>(
    model: &M,
    t: usize,
    state: usize,
    action: usize,
    w: &M::Noise,
) -> Result<(f64, usize)> {
    if t >= model.horizon() {
        return Err(Error::TimeOutOfRange {
            t,
            horizon: model.horizon(),
        });
    }
    if state >= model.num_states() || model.feasible_actions(state).binary_search(&action).is_err() {
        return Err(Error::InfeasibleAction { state, action });
    }
    let cost = model.cost(t, state, action, w);
    let next = model.transition(t, state, action, w);
    debug_assert!(next < model.num_states());
    Ok((cost, next))
}

/// Enumeration of all feasible state-action pairs.
///
/// Pairs of a state are contiguous and ordered by action, so the pair index
/// range of state `s` is `offsets[s]..offsets[s + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionSpace {
    pairs: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    /// `(state, action) -> pair` lookup, `usize::MAX` where infeasible.
    lookup: Vec<usize>,
    num_actions: usize,
}

impl StateActionSpace {
    pub fn new<M: MdpModel>(model: &M) -> Result<Self> {
        let ns = model.num_states();
        let na = model.num_actions();
        let mut pairs = Vec::new();
        let mut offsets = Vec::with_capacity(ns + 1);
        let mut lookup = vec![usize::MAX; ns * na];
        for s in 0..ns {
            offsets.push(pairs.len());
            let acts = model.feasible_actions(s);
            if acts.is_empty() {
                return Err(crate::error::config(format!("state {s} has no feasible action")));
            }
            if acts.windows(2).any(|w| w[0] >= w[1]) || acts.iter().any(|&a| a >= na) {
                return Err(crate::error::config(format!(
                    "feasible actions of state {s} must be increasing and below {na}"
                )));
            }
            for &a in acts {
                lookup[s * na + a] = pairs.len();
                pairs.push((s, a));
            }
        }
        offsets.push(pairs.len());
        Ok(Self {
            pairs,
            offsets,
            lookup,
            num_actions: na,
        })
    }

    /// Number of pairs `d`.
    #[inline]
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn pair(&self, index: usize) -> (usize, usize) {
        self.pairs[index]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    #[inline]
    pub fn index(&self, state: usize, action: usize) -> Option<usize> {
        if action >= self.num_actions || state >= self.num_states() {
            return None;
        }
        match self.lookup[state * self.num_actions + action] {
            usize::MAX => None,
            i => Some(i),
        }
    }

    #[inline]
    pub fn state_range(&self, state: usize) -> std::ops::Range<usize> {
        self.offsets[state]..self.offsets[state + 1]
    }

    /// Minimum of `q_slice` over the pairs of `state` and the achieving pair
    /// index. Ties go to the lowest action.
    #[inline]
    pub fn greedy_pair(&self, q_slice: &[f64], state: usize) -> (f64, usize) {
        let r = self.state_range(state);
        let mut best = r.start;
        let mut v = q_slice[best];
        for i in r.start + 1..r.end {
            if q_slice[i] < v {
                v = q_slice[i];
                best = i;
            }
        }
        (v, best)
    }

    /// Minimum of `q_slice` over the feasible actions of `state` and the
    /// achieving action (lowest action on ties).
    #[inline]
    pub fn greedy_value(&self, q_slice: &[f64], state: usize) -> (f64, usize) {
        let (v, i) = self.greedy_pair(q_slice, state);
        (v, self.pairs[i].1)
    }
}

/// See [`StateActionSpace::greedy_value`]. `q_slice` is in the internal
/// minimization convention.
pub fn greedy_value(space: &StateActionSpace, q_slice: &[f64], state: usize) -> (f64, usize) {
    space.greedy_value(q_slice, state)
}

/// A deterministic Markov policy: one action per `(t, state)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    num_states: usize,
    actions: Vec<usize>,
}

impl PolicyTable {
    pub fn new(horizon: usize, num_states: usize, actions: Vec<usize>) -> Result<Self> {
        if actions.len() != horizon * num_states {
            return Err(crate::error::invalid("policy table has the wrong size"));
        }
        Ok(Self { num_states, actions })
    }

    /// Checks every action against the model's feasible sets.
    pub fn validate<M: MdpModel>(&self, model: &M) -> Result<()> {
        if self.num_states != model.num_states() || self.horizon() != model.horizon() {
            return Err(crate::error::invalid("policy table does not match the model"));
        }
        for t in 0..self.horizon() {
            for s in 0..self.num_states {
                let a = self.action(t, s);
                if model.feasible_actions(s).binary_search(&a).is_err() {
                    return Err(Error::InfeasibleAction { state: s, action: a });
                }
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        if self.num_states == 0 {
            0
        } else {
            self.actions.len() / self.num_states
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn action(&self, t: usize, state: usize) -> usize {
        self.actions[t * self.num_states + state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}
