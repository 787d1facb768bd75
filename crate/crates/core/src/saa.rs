//! Sample-average backward recursion.
//!
//! With the noise law replaced by a fixed equally weighted scenario set per
//! stage, the nested risk-measure recursion can be solved exactly:
//! `V_t(s) = ρ̂(c_t(s, a, W) + V_{t+1}(S'))`, with `a` fixed by a policy or
//! chosen optimally. Scenario sets are shared across states and policies so
//! that values of different policies are directly comparable.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::mdp::{MdpModel, NoisePoint, PolicyTable, StateActionSpace};
use crate::risk::{uniform_qbrm, QbrmSpec};
use crate::rng::{Purpose, RngStreams};

/// Equally weighted noise draws for each stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet<N> {
    draws: Vec<Vec<N>>,
}

impl<N: NoisePoint> ScenarioSet<N> {
    pub fn from_draws(draws: Vec<Vec<N>>) -> Result<Self> {
        if draws.is_empty() || draws.iter().any(|d| d.is_empty()) {
            return Err(invalid("every stage needs at least one scenario"));
        }
        Ok(Self { draws })
    }

    /// `count` independent draws per stage from the model's noise law.
    pub fn generate<M: MdpModel<Noise = N>>(model: &M, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(invalid("scenario count must be positive"));
        }
        let streams = RngStreams::new(seed);
        let draws = (0..model.horizon())
            .map(|t| {
                let mut rng: ChaCha8Rng = streams.stream(0, t, Purpose::Scenario);
                (0..count).map(|_| model.sample_noise(t, &mut rng)).collect()
            })
            .collect();
        Self::from_draws(draws)
    }

    /// The same scenario set for every one of `horizon` stages.
    pub fn repeated(stage: Vec<N>, horizon: usize) -> Result<Self> {
        Self::from_draws(vec![stage; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.draws.len()
    }

    pub fn stage(&self, t: usize) -> &[N] {
        &self.draws[t]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.draws.iter().map(Vec::len).collect()
    }

    /// CSV with columns `t,draw,w0,w1,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "draw".to_string()];
        header.extend((0..N::DIM).map(|j| format!("w{j}")));
        w.write_record(&header).map_err(io_err)?;
        for (t, stage) in self.draws.iter().enumerate() {
            for (i, x) in stage.iter().enumerate() {
                let mut rec = vec![t.to_string(), i.to_string()];
                rec.extend(x.coords().iter().map(|v| format!("{v:?}")));
                w.write_record(&rec).map_err(io_err)?;
            }
        }
        w.flush().map_err(|e| invalid(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut draws: Vec<Vec<N>> = Vec::new();
        let mut coords = vec![0.0; N::DIM];
        for rec in r.records() {
            let rec = rec.map_err(io_err)?;
            if rec.len() != 2 + N::DIM {
                return Err(invalid("scenario row has the wrong number of columns"));
            }
            let t: usize = rec[0].parse().map_err(|_| invalid("bad stage index"))?;
            for (j, c) in coords.iter_mut().enumerate() {
                *c = rec[2 + j].parse().map_err(|_| invalid("bad noise value"))?;
            }
            if t >= draws.len() {
                draws.resize_with(t + 1, Vec::new);
            }
            draws[t].push(N::from_coords(&coords));
        }
        Self::from_draws(draws)
    }
}

fn io_err(e: csv::Error) -> Error {
    invalid(format!("scenario csv: {e}"))
}

/// `V_t(s)` for `t = 0..=T` in the model's natural sense; `V_T ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctionSaa {
    num_states: usize,
    values: Vec<f64>,
}

impl ValueFunctionSaa {
    #[inline]
    pub fn value(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.num_states + s]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
}

/// Optimal values, an optimal policy and the optimal Q-factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SaaSolution {
    pub values: ValueFunctionSaa,
    pub policy: PolicyTable,
    /// `Q*_t(s, a)` in the internal minimization convention, laid out like
    /// [`crate::adp::ValueTable::entries`].
    pub q: Vec<f64>,
}

fn check<M: MdpModel>(model: &M, scenarios: &ScenarioSet<M::Noise>) -> Result<()> {
    if scenarios.horizon() != model.horizon() {
        return Err(invalid("scenario set horizon differs from the model"));
    }
    Ok(())
}

/// Internal-sense `ρ̂(c_t(s, a, W) + V_{t+1}(S'))` over the stage-`t` scenarios.
fn stage_value<M: MdpModel>(
    model: &M,
    spec: &QbrmSpec,
    draws: &[M::Noise],
    next: Option<&[f64]>,
    t: usize,
    s: usize,
    a: usize,
    buf: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
) -> f64 {
    buf.clear();
    buf.extend(draws.iter().map(|w| {
        let c = model.internal_cost(t, s, a, w);
        match next {
            Some(v) => c + v[model.transition(t, s, a, w)],
            None => c,
        }
    }));
    uniform_qbrm(buf, spec, scratch)
}

fn to_natural<M: MdpModel>(model: &M, num_states: usize, internal: Vec<f64>) -> ValueFunctionSaa {
    let sense = model.sense();
    ValueFunctionSaa {
        num_states,
        values: internal.into_iter().map(|v| sense.from_internal(v)).collect(),
    }
}

/// Value of a fixed policy on the scenario set.
pub fn evaluate_policy<M: MdpModel>(
    model: &M,
    spec: &QbrmSpec,
    policy: &PolicyTable,
    scenarios: &ScenarioSet<M::Noise>,
) -> Result<ValueFunctionSaa> {
    check(model, scenarios)?;
    policy.validate(model)?;
    let ns = model.num_states();
    let horizon = model.horizon();
    let mut v = vec![0.0; (horizon + 1) * ns];
    for t in (0..horizon).rev() {
        let (head, tail) = v.split_at_mut((t + 1) * ns);
        let next = &tail[..ns];
        let draws = scenarios.stage(t);
        head[t * ns..].par_iter_mut().enumerate().for_each_init(
            || (Vec::new(), Vec::new()),
            |(buf, scratch), (s, out)| {
                *out = stage_value(model, spec, draws, Some(next), t, s, policy.action(t, s), buf, scratch);
            },
        );
    }
    Ok(to_natural(model, ns, v))
}

/// Optimal values and policy on the scenario set (lowest action on ties).
pub fn saa_optimal<M: MdpModel>(
    model: &M,
    spec: &QbrmSpec,
    scenarios: &ScenarioSet<M::Noise>,
) -> Result<SaaSolution> {
    check(model, scenarios)?;
    let space = StateActionSpace::new(model)?;
    let ns = model.num_states();
    let horizon = model.horizon();
    let d = space.len();
    let mut v = vec![0.0; (horizon + 1) * ns];
    let mut q = vec![0.0; (horizon + 1) * d];
    let mut actions = vec![0usize; horizon * ns];
    for t in (0..horizon).rev() {
        let draws = scenarios.stage(t);
        let next = &v[(t + 1) * ns..(t + 2) * ns];
        let q_t: Vec<f64> = (0..d)
            .into_par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(buf, scratch), p| {
                    let (s, a) = space.pair(p);
                    stage_value(model, spec, draws, Some(next), t, s, a, buf, scratch)
                },
            )
            .collect();
        for s in 0..ns {
            let (value, a) = space.greedy_value(&q_t, s);
            v[t * ns + s] = value;
            actions[t * ns + s] = a;
        }
        q[t * d..(t + 1) * d].copy_from_slice(&q_t);
    }
    Ok(SaaSolution {
        values: to_natural(model, ns, v),
        policy: PolicyTable::new(horizon, ns, actions)?,
        q,
    })
}

/// Per-stage best action for the one-stage cost alone.
pub fn myopic_policy<M: MdpModel>(
    model: &M,
    spec: &QbrmSpec,
    scenarios: &ScenarioSet<M::Noise>,
) -> Result<PolicyTable> {
    check(model, scenarios)?;
    let space = StateActionSpace::new(model)?;
    let ns = model.num_states();
    let horizon = model.horizon();
    let mut actions = Vec::with_capacity(horizon * ns);
    for t in 0..horizon {
        let draws = scenarios.stage(t);
        let q_t: Vec<f64> = (0..space.len())
            .into_par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(buf, scratch), p| {
                    let (s, a) = space.pair(p);
                    stage_value(model, spec, draws, None, t, s, a, buf, scratch)
                },
            )
            .collect();
        actions.extend((0..ns).map(|s| space.greedy_value(&q_t, s).1));
    }
    PolicyTable::new(horizon, ns, actions)
}

/// `(v_π − v_myopic)/(v* − v_myopic)`: 0 for the myopic policy, 1 for the
/// optimal one.
pub fn percent_optimality(v_pi: f64, v_myopic: f64, v_star: f64) -> Result<f64> {
    let span = v_star - v_myopic;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::DegenerateBenchmark(v_star));
    }
    // `+ 0.0` turns a negative zero into zero.
    Ok((v_pi - v_myopic) / span + 0.0)
}

/// Draws for one stage on a stratified midpoint grid of a scalar noise with
/// the given quantile function.
pub fn stratified_scalar(count: usize, quantile: impl Fn(f64) -> f64) -> Vec<[f64; 1]> {
    (0..count)
        .map(|j| [quantile((j as f64 + 0.5) / count as f64)])
        .collect()
}
