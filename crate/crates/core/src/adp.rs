//! Dynamic-QBRM approximate dynamic programming.
//!
//! Each outer iteration `n` walks one trajectory `t = 0..T-1`. At every stage
//! the visited pair `(s, a)` receives
//!
//! 1. a projected stochastic-gradient step on each auxiliary quantile
//!    estimate `ū_i`, driven by the sample `W^u`;
//! 2. a Bellman sample `q̂ = Φ(c + min_a' Q̄_{t+1}(s', a'), ū)` from an
//!    independent sample `W^q`, evaluated with the quantiles from *before*
//!    step 1;
//! 3. a projected smoothing step `Q̄ ← Q̄ − η (Q̄ − q̂)`.
//!
//! The next pair is then chosen ε-greedily. Stepsizes are deterministic and
//! harmonic in the global iteration counter and vanish away from the visited
//! pair. With risk-directed sampling enabled ([`crate::rds`]), `W^q` comes
//! from a learned mixture and `q̂` carries the likelihood ratio.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, Result};
use crate::mdp::{MdpModel, NoisePoint, PolicyTable, StateActionSpace};
use crate::rds::{self, MixtureCoefficients, RdsConfig, RdsState};
use crate::risk::QbrmSpec;
use crate::rng::{Purpose, RngStreams};
use crate::trace::{TraceCadence, TraceRecord, TraceSink};

/// `Q̄_t(s, a)` for `t = 0..=T`; the terminal slice stays at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    d: usize,
    horizon: usize,
    entries: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(horizon: usize, d: usize) -> Self {
        Self {
            d,
            horizon,
            entries: vec![0.0; (horizon + 1) * d],
        }
    }

    /// Builds a table from `(T + 1)·d` entries; the terminal slice must be zero.
    pub fn from_entries(horizon: usize, d: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != (horizon + 1) * d {
            return Err(invalid("value table has the wrong size"));
        }
        if entries[horizon * d..].iter().any(|&x| x != 0.0) {
            return Err(invalid("terminal value slice must be zero"));
        }
        Ok(Self { d, horizon, entries })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn slice(&self, t: usize) -> &[f64] {
        &self.entries[t * self.d..(t + 1) * self.d]
    }

    #[inline]
    pub fn get(&self, t: usize, pair: usize) -> f64 {
        self.entries[t * self.d + pair]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// `(‖Q̄ − reference‖∞, ‖Q̄ − reference‖₂)` over all entries.
    pub fn distance(&self, reference: &[f64]) -> (f64, f64) {
        let mut inf: f64 = 0.0;
        let mut sq = 0.0;
        for (a, b) in self.entries.iter().zip(reference) {
            let e = a - b;
            inf = inf.max(e.abs());
            sq += e * e;
        }
        (inf, sq.sqrt())
    }
}

/// `ū_i,t(s, a)` for `i = 0..m`, `t = 0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxQuantileTable {
    m: usize,
    d: usize,
    horizon: usize,
    entries: Vec<f64>,
}

impl AuxQuantileTable {
    pub fn zeros(m: usize, horizon: usize, d: usize) -> Self {
        Self {
            m,
            d,
            horizon,
            entries: vec![0.0; m * horizon * d],
        }
    }

    pub fn from_entries(m: usize, horizon: usize, d: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != m * horizon * d {
            return Err(invalid("auxiliary table has the wrong size"));
        }
        Ok(Self {
            m,
            d,
            horizon,
            entries,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    fn offset(&self, i: usize, t: usize, pair: usize) -> usize {
        (i * self.horizon + t) * self.d + pair
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize, pair: usize) -> f64 {
        self.entries[self.offset(i, t, pair)]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Copies `ū_{·,t}(pair)` into `out`.
    #[inline]
    pub fn read(&self, t: usize, pair: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.get(i, t, pair);
        }
    }
}

/// Compact projection intervals for both tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBoxes {
    d: usize,
    horizon: usize,
    u_lo: Vec<f64>,
    u_hi: Vec<f64>,
    q_lo: Vec<f64>,
    q_hi: Vec<f64>,
}

impl ProjectionBoxes {
    /// Symmetric boxes `[-B_t, B_t]` for every pair at stage `t`; the terminal
    /// value box is `[0, 0]`.
    pub fn symmetric(bounds: &[f64], d: usize) -> Result<Self> {
        let horizon = bounds.len();
        if bounds.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(config("projection bounds must be finite and nonnegative"));
        }
        let mut u_hi = Vec::with_capacity(horizon * d);
        for &b in bounds {
            u_hi.extend(std::iter::repeat_n(b, d));
        }
        let mut q_hi = u_hi.clone();
        q_hi.extend(std::iter::repeat_n(0.0, d));
        let neg = |v: &Vec<f64>| v.iter().map(|x| -x).collect::<Vec<_>>();
        Ok(Self {
            d,
            horizon,
            u_lo: neg(&u_hi),
            q_lo: neg(&q_hi),
            u_hi,
            q_hi,
        })
    }

    /// `B_t = (T − t)·bound·(1 + Σᵢ (1 − αᵢ)⁻¹)`, which contains `Q*` and the
    /// optimal quantiles whenever `|c_t| ≤ bound`.
    pub fn from_cost_bound(bound: f64, horizon: usize, d: usize, spec: &QbrmSpec) -> Result<Self> {
        let factor = 1.0 + spec.alphas().iter().map(|a| 1.0 / (1.0 - a)).sum::<f64>();
        let bounds: Vec<f64> = (0..horizon)
            .map(|t| (horizon - t) as f64 * bound * factor)
            .collect();
        Self::symmetric(&bounds, d)
    }

    pub fn for_model<M: MdpModel>(model: &M, d: usize, spec: &QbrmSpec) -> Result<Self> {
        let bound = model
            .stage_cost_bound()
            .ok_or_else(|| config("model has no stage cost bound; configure boxes explicitly"))?;
        Self::from_cost_bound(bound, model.horizon(), d, spec)
    }

    pub fn validate(&self, horizon: usize, d: usize) -> Result<()> {
        if self.horizon != horizon || self.d != d {
            return Err(config("projection boxes do not match the state-action space"));
        }
        let ok = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).all(|(l, h)| l.is_finite() && h.is_finite() && l <= h);
        if !ok(&self.u_lo, &self.u_hi) || !ok(&self.q_lo, &self.q_hi) {
            return Err(config("projection boxes need finite endpoints with lo <= hi"));
        }
        Ok(())
    }

    #[inline]
    pub fn clamp_u(&self, t: usize, pair: usize, x: f64) -> f64 {
        let k = t * self.d + pair;
        x.clamp(self.u_lo[k], self.u_hi[k])
    }

    #[inline]
    pub fn clamp_q(&self, t: usize, pair: usize, x: f64) -> f64 {
        let k = t * self.d + pair;
        x.clamp(self.q_lo[k], self.q_hi[k])
    }

    pub fn u_interval(&self, t: usize, pair: usize) -> (f64, f64) {
        let k = t * self.d + pair;
        (self.u_lo[k], self.u_hi[k])
    }

    pub fn q_interval(&self, t: usize, pair: usize) -> (f64, f64) {
        let k = t * self.d + pair;
        (self.q_lo[k], self.q_hi[k])
    }
}

/// Deterministic stepsize `min(cap, c_t / n^p)` at the visited pair.
///
/// `p = 1` is the harmonic rule; `p ∈ (1/2, 1)` gives the polynomial rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub numerators: Vec<f64>,
    #[serde(default = "one")]
    pub exponent: f64,
    #[serde(default = "infinity", skip_serializing_if = "is_infinite")]
    pub cap: f64,
}

fn one() -> f64 {
    1.0
}

fn infinity() -> f64 {
    f64::INFINITY
}

fn is_infinite(x: &f64) -> bool {
    x.is_infinite()
}

impl StepRule {
    pub fn harmonic(horizon: usize, numerator: f64) -> Self {
        Self {
            numerators: vec![numerator; horizon],
            exponent: 1.0,
            cap: f64::INFINITY,
        }
    }

    pub fn polynomial(horizon: usize, numerator: f64, exponent: f64) -> Self {
        Self {
            exponent,
            ..Self::harmonic(horizon, numerator)
        }
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.cap = cap;
        self
    }

    pub fn validate(&self, horizon: usize, what: &str) -> Result<()> {
        if self.numerators.len() != horizon {
            return Err(config(format!("{what}: need one numerator per stage ({horizon})")));
        }
        if self.numerators.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(config(format!("{what}: numerators must be positive")));
        }
        if !(self.exponent > 0.5 && self.exponent <= 1.0) {
            return Err(config(format!("{what}: exponent must lie in (0.5, 1]")));
        }
        if !(self.cap > 0.0) {
            return Err(config(format!("{what}: cap must be positive")));
        }
        Ok(())
    }

    #[inline]
    pub fn step(&self, t: usize, n: u64) -> f64 {
        let nf = n as f64;
        let base = if self.exponent == 1.0 { nf } else { nf.powf(self.exponent) };
        (self.numerators[t] / base).min(self.cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeSchedule {
    /// Quantile steps `γ_t / n`.
    pub gamma: StepRule,
    /// Value steps `η_t / n`.
    pub eta: StepRule,
}

impl StepsizeSchedule {
    pub fn harmonic(horizon: usize, gamma: f64, eta: f64) -> Self {
        Self {
            gamma: StepRule::harmonic(horizon, gamma),
            eta: StepRule::harmonic(horizon, eta),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicyConfig {
    /// Minimum probability of visiting each pair; exploration happens with
    /// probability `ε·d`.
    pub epsilon: f64,
}

impl SamplingPolicyConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.epsilon >= 0.0) || self.epsilon * d as f64 > 1.0 + 1e-12 {
            return Err(config(format!(
                "epsilon {} violates 0 <= epsilon*d <= 1 with d = {d}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Everything [`run`] needs besides the model and the risk measure.
#[derive(Debug, Clone, PartialEq)]
pub struct AdpSettings {
    pub schedule: StepsizeSchedule,
    pub sampling: SamplingPolicyConfig,
    pub boxes: ProjectionBoxes,
}

impl AdpSettings {
    /// Harmonic steps with unit numerators, `ε·d = 1/2` and boxes sized from
    /// the model's stage cost bound.
    pub fn default_for<M: MdpModel>(model: &M, spec: &QbrmSpec) -> Result<Self> {
        let space = StateActionSpace::new(model)?;
        let d = space.len();
        Ok(Self {
            schedule: StepsizeSchedule::harmonic(model.horizon(), 1.0, 1.0),
            sampling: SamplingPolicyConfig {
                epsilon: 0.5 / d as f64,
            },
            boxes: ProjectionBoxes::for_model(model, d, spec)?,
        })
    }

    pub fn validate(&self, horizon: usize, d: usize) -> Result<()> {
        self.schedule.gamma.validate(horizon, "gamma")?;
        self.schedule.eta.validate(horizon, "eta")?;
        self.sampling.validate(d)?;
        self.boxes.validate(horizon, d)
    }
}

/// `c_t(s, a, w) + min_a' Q_{t+1}(S^M(s, a, w), a')` in the internal cost
/// convention, together with the successor state.
#[inline]
pub fn future_cost<M: MdpModel>(
    model: &M,
    space: &StateActionSpace,
    q_next: &[f64],
    t: usize,
    state: usize,
    action: usize,
    w: &M::Noise,
) -> (f64, usize) {
    let c = model.internal_cost(t, state, action, w);
    let next = model.transition(t, state, action, w);
    (c + space.greedy_pair(q_next, next).0, next)
}

/// `1 − (1 − α)⁻¹·𝟙{future ≥ u}`.
#[inline]
pub fn psi(future: f64, u: f64, alpha: f64) -> f64 {
    if future >= u {
        1.0 - 1.0 / (1.0 - alpha)
    } else {
        1.0
    }
}

/// Stochastic gradient of `u ↦ u + (1 − α)⁻¹ E(X − u)⁺` at `(t, s, a)` from
/// one noise draw.
#[allow(clippy::too_many_arguments)]
pub fn psi_gradient<M: MdpModel>(
    model: &M,
    space: &StateActionSpace,
    u: f64,
    q_next: &[f64],
    t: usize,
    state: usize,
    action: usize,
    w: &M::Noise,
    alpha: f64,
) -> f64 {
    let (x, _) = future_cost(model, space, q_next, t, state, action, w);
    psi(x, u, alpha)
}

/// Single-sample stochastic Bellman operator `Φ(future, u₁, …, u_m)`.
#[allow(clippy::too_many_arguments)]
pub fn bellman_sample<M: MdpModel>(
    model: &M,
    space: &StateActionSpace,
    spec: &QbrmSpec,
    u_all: &[f64],
    q_next: &[f64],
    t: usize,
    state: usize,
    action: usize,
    w: &M::Noise,
) -> Result<f64> {
    let (x, _) = future_cost(model, space, q_next, t, state, action, w);
    spec.phi(x, u_all)
}

/// `ūᵢ ← Π[ūᵢ − step·ψᵢ]` at `(t, pair)` for every `i`.
pub fn update_aux(
    table: &mut AuxQuantileTable,
    boxes: &ProjectionBoxes,
    t: usize,
    pair: usize,
    psi: &[f64],
    step: f64,
) {
    for (i, &g) in psi.iter().enumerate() {
        let k = table.offset(i, t, pair);
        table.entries[k] = boxes.clamp_u(t, pair, table.entries[k] - step * g);
    }
}

/// `Q̄ ← Π[(1 − step)·Q̄ + step·q̂]` at `(t, pair)`.
pub fn update_value(
    table: &mut ValueTable,
    boxes: &ProjectionBoxes,
    t: usize,
    pair: usize,
    q_hat: f64,
    step: f64,
) {
    let k = t * table.d + pair;
    let old = table.entries[k];
    table.entries[k] = boxes.clamp_q(t, pair, old - step * (old - q_hat));
}

/// ε-greedy successor pair index: with probability `1 − ε·d` the greedy pair
/// of `next_state` under `q_next`, otherwise a uniform pair.
#[inline]
pub fn epsilon_greedy_pair<R: Rng + ?Sized>(
    space: &StateActionSpace,
    q_next: &[f64],
    next_state: usize,
    epsilon: f64,
    rng: &mut R,
) -> usize {
    let d = space.len();
    let explore = epsilon * d as f64;
    if explore > 0.0 && rng.random::<f64>() < explore {
        rng.random_range(0..d)
    } else {
        space.greedy_pair(q_next, next_state).1
    }
}

/// Moves from `(s, a)` at stage `t` with noise `w` and picks the next
/// `(state, action)` ε-greedily under `Q̄_{t+1}`.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_greedy_next<M: MdpModel, R: Rng + ?Sized>(
    model: &M,
    space: &StateActionSpace,
    q: &ValueTable,
    t: usize,
    state: usize,
    action: usize,
    w: &M::Noise,
    config: &SamplingPolicyConfig,
    rng: &mut R,
) -> Result<(usize, usize)> {
    config.validate(space.len())?;
    let next = model.transition(t, state, action, w);
    let pair = epsilon_greedy_pair(space, q.slice(t + 1), next, config.epsilon, rng);
    Ok(space.pair(pair))
}

/// Greedy policy under `Q̄` (lowest action on ties).
pub fn extract_policy(space: &StateActionSpace, q: &ValueTable) -> PolicyTable {
    let ns = space.num_states();
    let mut actions = Vec::with_capacity(q.horizon() * ns);
    for t in 0..q.horizon() {
        for s in 0..ns {
            actions.push(space.greedy_value(q.slice(t), s).1);
        }
    }
    PolicyTable::new(q.horizon(), ns, actions).expect("sizes agree")
}

/// Stateful Dynamic-QBRM ADP run that can be advanced in chunks.
pub struct Solver<'m, M: MdpModel> {
    model: &'m M,
    space: StateActionSpace,
    spec: QbrmSpec,
    settings: AdpSettings,
    streams: RngStreams,
    q: ValueTable,
    u: AuxQuantileTable,
    rds: Option<RdsState>,
    n: u64,
    reference: Option<Vec<f64>>,
    watched: Vec<(usize, usize)>,
    last_initial_pair: usize,
}

impl<'m, M: MdpModel> Solver<'m, M> {
    pub fn new(model: &'m M, spec: QbrmSpec, settings: AdpSettings, seed: u64) -> Result<Self> {
        let space = StateActionSpace::new(model)?;
        let horizon = model.horizon();
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        let d = space.len();
        settings.validate(horizon, d)?;
        let mut q = ValueTable::zeros(horizon, d);
        let mut u = AuxQuantileTable::zeros(spec.m(), horizon, d);
        // Zero initial tables, clamped into the boxes.
        for t in 0..horizon {
            for p in 0..d {
                q.entries[t * d + p] = settings.boxes.clamp_q(t, p, 0.0);
                for i in 0..spec.m() {
                    let k = u.offset(i, t, p);
                    u.entries[k] = settings.boxes.clamp_u(t, p, 0.0);
                }
            }
        }
        Ok(Self {
            model,
            space,
            spec,
            settings,
            streams: RngStreams::new(seed),
            q,
            u,
            rds: None,
            n: 0,
            reference: None,
            watched: Vec::new(),
            last_initial_pair: 0,
        })
    }

    /// Replaces the initial tables; both must lie inside their boxes.
    pub fn with_initial(mut self, q: ValueTable, u: AuxQuantileTable) -> Result<Self> {
        let (horizon, d) = (self.model.horizon(), self.space.len());
        if q.horizon != horizon || q.d != d || u.horizon != horizon || u.d != d || u.m != self.spec.m() {
            return Err(invalid("initial tables do not match the model"));
        }
        let b = &self.settings.boxes;
        for t in 0..horizon {
            for p in 0..d {
                let (lo, hi) = b.q_interval(t, p);
                let x = q.get(t, p);
                if x < lo || x > hi {
                    return Err(invalid(format!("initial Q({t}, {p}) = {x} outside its box")));
                }
                for i in 0..u.m {
                    let (lo, hi) = b.u_interval(t, p);
                    let x = u.get(i, t, p);
                    if x < lo || x > hi {
                        return Err(invalid(format!("initial u{i}({t}, {p}) = {x} outside its box")));
                    }
                }
            }
        }
        self.q = q;
        self.u = u;
        Ok(self)
    }

    /// Enables risk-directed sampling for the value-function samples.
    pub fn with_rds(mut self, config: RdsConfig) -> Result<Self> {
        self.rds = Some(RdsState::new(self.model, &self.space, config)?);
        Ok(self)
    }

    /// Reference `Q*` (same layout as [`ValueTable::entries`]) for error traces.
    pub fn with_reference(mut self, reference: Vec<f64>) -> Result<Self> {
        if reference.len() != self.q.entries.len() {
            return Err(invalid("reference table has the wrong size"));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    /// `(t, pair)` entries whose `Q̄`/`ū` values are copied into each trace record.
    pub fn watch(mut self, watched: Vec<(usize, usize)>) -> Result<Self> {
        if watched
            .iter()
            .any(|&(t, p)| t >= self.model.horizon() || p >= self.space.len())
        {
            return Err(invalid("watched pair out of range"));
        }
        self.watched = watched;
        Ok(self)
    }

    pub fn space(&self) -> &StateActionSpace {
        &self.space
    }

    pub fn spec(&self) -> &QbrmSpec {
        &self.spec
    }

    pub fn settings(&self) -> &AdpSettings {
        &self.settings
    }

    pub fn iterations_done(&self) -> u64 {
        self.n
    }

    pub fn value_table(&self) -> &ValueTable {
        &self.q
    }

    pub fn aux_table(&self) -> &AuxQuantileTable {
        &self.u
    }

    pub fn coefficients(&self) -> Option<&MixtureCoefficients> {
        self.rds.as_ref().map(|r| &r.theta)
    }

    /// Number of likelihood ratios clipped at `L_max` so far.
    pub fn lr_cap_hits(&self) -> u64 {
        self.rds.as_ref().map_or(0, |r| r.cap_hits)
    }

    pub fn policy(&self) -> PolicyTable {
        extract_policy(&self.space, &self.q)
    }

    pub fn into_tables(self) -> (ValueTable, AuxQuantileTable, Option<MixtureCoefficients>) {
        (self.q, self.u, self.rds.map(|r| r.theta))
    }

    /// Runs `iterations` more outer iterations.
    pub fn advance(
        &mut self,
        iterations: u64,
        cadence: &TraceCadence,
        sink: &mut dyn TraceSink,
    ) -> Result<()> {
        for _ in 0..iterations {
            self.n += 1;
            self.iterate()?;
            if cadence.is_due(self.n) {
                sink.record(self.trace_record());
            }
        }
        Ok(())
    }

    fn trace_record(&self) -> TraceRecord {
        let (err_inf, err_l2) = match &self.reference {
            Some(r) => {
                let (a, b) = self.q.distance(r);
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let m = self.spec.m();
        let watched = self
            .watched
            .iter()
            .map(|&(t, p)| {
                let mut u = vec![0.0; m];
                self.u.read(t, p, &mut u);
                (self.q.get(t, p), u)
            })
            .collect();
        TraceRecord {
            n: self.n,
            visited_pair: self.last_initial_pair,
            err_inf,
            err_l2,
            watched,
            lr_cap_hits: self.lr_cap_hits(),
        }
    }

    fn iterate(&mut self) -> Result<()> {
        let n = self.n;
        let horizon = self.model.horizon();
        let d = self.space.len();
        let m = self.spec.m();
        let mut u_old = [0.0f64; 8];
        let mut u_heap;
        let u_old: &mut [f64] = if m <= u_old.len() {
            &mut u_old[..m]
        } else {
            u_heap = vec![0.0; m];
            &mut u_heap
        };

        let mut pair = self
            .streams
            .stream(n, 0, Purpose::InitState)
            .random_range(0..d);
        self.last_initial_pair = pair;

        for t in 0..horizon {
            let (s, a) = self.space.pair(pair);
            let w_u = self
                .model
                .sample_noise(t, &mut self.streams.stream(n, t, Purpose::USample));
            let mut q_rng = self.streams.stream(n, t, Purpose::QSample);

            // Step 3: W^q from the true law or from the learned mixture.
            let (w_q, is) = match &mut self.rds {
                None => (self.model.sample_noise(t, &mut q_rng), None),
                Some(r) => {
                    let row = r.theta.row(t, pair);
                    let w = rds::sample_mixture(row, &r.basis, self.model, t, &mut q_rng);
                    r.basis.eval(self.model, t, &w, &mut r.phi_buf);
                    let p_mix = rds::mixture_pdf_from_values(r.theta.row(t, pair), &r.phi_buf);
                    let p_true = self.model.noise_density(t, &w);
                    let (lr, capped) = rds::likelihood_ratio(p_true, p_mix, r.l_max)?;
                    if capped {
                        r.cap_hits += 1;
                    }
                    (w, Some((lr, p_true, p_mix)))
                }
            };

            let q_next = self.q.slice(t + 1);
            self.u.read(t, pair, u_old);

            // Step 4: quantile updates from W^u, using ū^{n-1} and Q̄^{n-1}_{t+1}.
            let (x_u, next_state) = future_cost(self.model, &self.space, q_next, t, s, a, &w_u);
            let gamma = self.settings.schedule.gamma.step(t, n);
            for (i, &alpha) in self.spec.alphas().iter().enumerate() {
                let k = self.u.offset(i, t, pair);
                let g = psi(x_u, u_old[i], alpha);
                self.u.entries[k] = self.settings.boxes.clamp_u(t, pair, u_old[i] - gamma * g);
            }

            // Step 5: Bellman sample from W^q with the pre-update quantiles.
            let (x_q, _) = future_cost(self.model, &self.space, q_next, t, s, a, &w_q);
            let h = self.spec.phi_unchecked(x_q, u_old);
            let q_hat = match is {
                Some((lr, _, _)) => lr * h,
                None => h,
            };

            // Step 6.
            let eta = self.settings.schedule.eta.step(t, n);
            update_value(&mut self.q, &self.settings.boxes, t, pair, q_hat, eta);

            // Step 7: sampling coefficients of the visited pair.
            if let (Some(r), Some((_, p_true, p_mix))) = (&mut self.rds, is) {
                let beta = r.beta_step(t, n);
                let p_u = r.basis.uniform_density(w_q.coords());
                rds::update_coefficients(
                    r.theta.row_mut(t, pair),
                    &r.phi_buf,
                    h.abs(),
                    p_true,
                    p_u,
                    p_mix,
                    beta,
                );
            }

            if t + 1 < horizon {
                let mut rng = self.streams.stream(n, t + 1, Purpose::Explore);
                pair = epsilon_greedy_pair(
                    &self.space,
                    self.q.slice(t + 1),
                    next_state,
                    self.settings.sampling.epsilon,
                    &mut rng,
                );
            }
        }
        Ok(())
    }
}

/// Runs `iterations` iterations of Dynamic-QBRM ADP from zero tables.
///
/// `iterations == 0` returns the initial tables. Trace records are emitted
/// every `⌈N/1000⌉` iterations and at `n ∈ {1, 10, 100}`.
pub fn run<M: MdpModel>(
    model: &M,
    spec: &QbrmSpec,
    settings: &AdpSettings,
    iterations: u64,
    seed: u64,
    sink: &mut dyn TraceSink,
) -> Result<(ValueTable, AuxQuantileTable)> {
    let mut solver = Solver::new(model, spec.clone(), settings.clone(), seed)?;
    solver.advance(iterations, &TraceCadence::for_total(iterations), sink)?;
    let (q, u, _) = solver.into_tables();
    Ok((q, u))
}
