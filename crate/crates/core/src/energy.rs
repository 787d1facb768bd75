//! Energy storage, trading and bidding model.
//!
//! The state is the storage level `S ∈ {0..S_max}`. An action is a pair of
//! hour-ahead bids `b⁻ ≤ b⁺`. After the decision the spot price `P` and a
//! backup-demand shock `U` are revealed: if `P < b⁻` one unit is bought, if
//! `P > b⁺` one unit is sold (selling from empty storage forfeits the
//! revenue), and a storage-dependent penalty or reward `F` is assessed. The
//! objective maximizes contributions under a mean-CVaR measure.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, LogNormal, Normal};

use crate::error::{config, invalid, Result};
use crate::mdp::{MdpModel, Sense};
use crate::rds::{BasisComponent, BasisSet, SupportBox};
use crate::risk::QbrmSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub horizon: usize,
    pub s_max: usize,
    /// `P(μ_S(S) + U < 0)` for `S = 0..=S_max`.
    pub penalty_probs: Vec<f64>,
    pub sigma_u: f64,
    /// Reward rate.
    pub a: f64,
    /// Penalty rate.
    pub b: f64,
    /// `m(t) = amplitude·sin(4πt/T) + base`.
    pub price_amplitude: f64,
    pub price_base: f64,
    pub price_var: f64,
    pub bid_max: f64,
    pub bid_step: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub initial_state: usize,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            s_max: 6,
            penalty_probs: vec![0.1, 0.05, 0.02, 0.01, 0.01, 0.001, 0.001],
            sigma_u: 1.0,
            a: 5.0,
            b: 500.0,
            price_amplitude: 50.0,
            price_base: 100.0,
            price_var: 3000.0,
            bid_max: 500.0,
            bid_step: 50.0,
            lambda: 0.5,
            alpha: 0.99,
            initial_state: 0,
        }
    }
}

impl EnergyConfig {
    /// Coarser bids (step 100) and six stages.
    pub fn small() -> Self {
        Self {
            horizon: 6,
            bid_step: 100.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(config("energy.horizon must be at least 1"));
        }
        if self.penalty_probs.len() != self.s_max + 1 {
            return Err(config("energy.penalty_probs needs s_max + 1 entries"));
        }
        if self.penalty_probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(config("energy.penalty_probs must lie in (0, 1)"));
        }
        if self.penalty_probs.windows(2).any(|w| w[1] > w[0]) {
            return Err(config("energy.penalty_probs must be nonincreasing"));
        }
        if !(self.a > 0.0 && self.a < self.b) {
            return Err(config("energy: need 0 < a < b"));
        }
        if !(self.sigma_u > 0.0) {
            return Err(config("energy.sigma_u must be positive"));
        }
        if !(self.price_var > 0.0) {
            return Err(config("energy.price_var must be positive"));
        }
        if !(self.price_base - self.price_amplitude.abs() > 0.0) {
            return Err(config("energy: mean price must stay positive"));
        }
        if !(self.bid_step > 0.0 && self.bid_max >= 0.0) {
            return Err(config("energy: bid grid needs a positive step"));
        }
        if self.initial_state > self.s_max {
            return Err(config("energy.initial_state exceeds s_max"));
        }
        QbrmSpec::mean_cvar(self.lambda, self.alpha).map(|_| ())
    }

    /// Mean-CVaR measure with this config's `λ` and `α`.
    pub fn qbrm_spec(&self) -> Result<QbrmSpec> {
        QbrmSpec::mean_cvar(self.lambda, self.alpha)
    }

    /// `m(t)`.
    pub fn price_mean(&self, t: usize) -> f64 {
        let x = 4.0 * std::f64::consts::PI * t as f64 / self.horizon as f64;
        self.price_amplitude * x.sin() + self.price_base
    }

    pub fn bid_grid(&self) -> Vec<f64> {
        let n = (self.bid_max / self.bid_step + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.bid_step).collect()
    }
}

/// `(μ_P, σ_P)` of the lognormal with mean `m` and variance `v`.
pub fn lognormal_params(m: f64, v: f64) -> Result<(f64, f64)> {
    if !(m > 0.0) || !(v >= 0.0) {
        return Err(config("lognormal needs a positive mean and nonnegative variance"));
    }
    let r = 1.0 + v / (m * m);
    Ok(((m / r.sqrt()).ln(), r.ln().sqrt()))
}

/// `μ_S(S) = −σ_U·Φ⁻¹(p_S)`, so that `P(μ_S(S) + U < 0) = p_S`.
pub fn mu_s_from_probs(probs: &[f64], sigma_u: f64) -> Result<Vec<f64>> {
    let n = Normal::standard();
    probs
        .iter()
        .map(|&p| {
            if p > 0.0 && p < 1.0 {
                Ok(-sigma_u * n.inverse_cdf(p))
            } else {
                Err(config(format!("penalty probability {p} outside (0, 1)")))
            }
        })
        .collect()
}

/// `F = |x|·(b·1{x<0} − a·1{x≥0})` with `x = μ_S(s) + u`.
#[inline]
pub fn penalty(x: f64, a: f64, b: f64) -> f64 {
    if x < 0.0 {
        -x * b
    } else {
        -x * a
    }
}

/// `−F + P·(1{b⁺<P} − 1{b⁻>P} − 1{s=0}·1{b⁺<P})`.
#[inline]
pub fn contribution(s: usize, bid_lo: f64, bid_hi: f64, price: f64, f: f64) -> f64 {
    let sell = (bid_hi < price) as u8 as f64;
    let buy = (bid_lo > price) as u8 as f64;
    let empty = (s == 0) as u8 as f64;
    -f + price * (sell - buy - empty * sell)
}

/// `[min(s + 1{b⁻>P} − 1{b⁺<P}, S_max)]⁺`.
#[inline]
pub fn storage_transition(s: usize, bid_lo: f64, bid_hi: f64, price: f64, s_max: usize) -> usize {
    let mut next = s as i64;
    if bid_lo > price {
        next += 1;
    }
    if bid_hi < price {
        next -= 1;
    }
    next.clamp(0, s_max as i64) as usize
}

/// The energy model. Noise is `[P, U]`; `sample_noise(t, _)` draws the price
/// of stage `t + 1`.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    cfg: EnergyConfig,
    bids: Vec<(f64, f64)>,
    actions: Vec<usize>,
    mu_s: Vec<f64>,
    /// Lognormal parameters of `P_{t+1}` for `t = 0..T`.
    price_params: Vec<(f64, f64)>,
    price_laws: Vec<LogNormal>,
    u_law: Normal,
}

impl EnergyModel {
    pub fn new(cfg: EnergyConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.bid_grid();
        let mut bids = Vec::new();
        for (i, &lo) in grid.iter().enumerate() {
            for &hi in &grid[i..] {
                bids.push((lo, hi));
            }
        }
        let mu_s = mu_s_from_probs(&cfg.penalty_probs, cfg.sigma_u)?;
        let mut price_params = Vec::with_capacity(cfg.horizon);
        let mut price_laws = Vec::with_capacity(cfg.horizon);
        for t in 0..cfg.horizon {
            let (mu, sigma) = lognormal_params(cfg.price_mean(t + 1), cfg.price_var)?;
            price_params.push((mu, sigma));
            price_laws.push(LogNormal::new(mu, sigma).map_err(|e| config(e.to_string()))?);
        }
        let u_law = Normal::new(0.0, cfg.sigma_u).map_err(|e| config(e.to_string()))?;
        Ok(Self {
            actions: (0..bids.len()).collect(),
            bids,
            mu_s,
            price_params,
            price_laws,
            u_law,
            cfg,
        })
    }

    pub fn config(&self) -> &EnergyConfig {
        &self.cfg
    }

    /// `(b⁻, b⁺)` of an action index.
    pub fn bids(&self, action: usize) -> (f64, f64) {
        self.bids[action]
    }

    pub fn action_of(&self, bid_lo: f64, bid_hi: f64) -> Result<usize> {
        self.bids
            .iter()
            .position(|&(l, h)| l == bid_lo && h == bid_hi)
            .ok_or_else(|| invalid(format!("bid pair ({bid_lo}, {bid_hi}) is not on the grid")))
    }

    pub fn mu_s(&self) -> &[f64] {
        &self.mu_s
    }

    pub fn initial_state(&self) -> usize {
        self.cfg.initial_state
    }

    /// `(μ_P, σ_P)` of the price revealed after stage `t`.
    pub fn price_params(&self, t: usize) -> (f64, f64) {
        self.price_params[t]
    }

    /// The model's stage costs are unbounded; this is a high-probability
    /// bound: the largest 0.99995 price quantile plus `b·(max|μ_S| + 5σ_U)`.
    pub fn cost_bound(&self) -> f64 {
        let price = self
            .price_laws
            .iter()
            .map(|l| l.inverse_cdf(0.99995))
            .fold(0.0, f64::max);
        let mu = self.mu_s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        price + self.cfg.b * (mu + 5.0 * self.cfg.sigma_u)
    }
}

impl MdpModel for EnergyModel {
    type Noise = [f64; 2];

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn num_states(&self) -> usize {
        self.cfg.s_max + 1
    }

    fn num_actions(&self) -> usize {
        self.bids.len()
    }

    fn feasible_actions(&self, _state: usize) -> &[usize] {
        &self.actions
    }

    fn sense(&self) -> Sense {
        Sense::Maximize
    }

    #[inline]
    fn cost(&self, _t: usize, s: usize, a: usize, w: &[f64; 2]) -> f64 {
        let (lo, hi) = self.bids[a];
        let f = penalty(self.mu_s[s] + w[1], self.cfg.a, self.cfg.b);
        contribution(s, lo, hi, w[0], f)
    }

    #[inline]
    fn transition(&self, _t: usize, s: usize, a: usize, w: &[f64; 2]) -> usize {
        let (lo, hi) = self.bids[a];
        storage_transition(s, lo, hi, w[0], self.cfg.s_max)
    }

    fn sample_noise<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> [f64; 2] {
        let (mu, sigma) = self.price_params[t];
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        [(mu + sigma * z1).exp(), self.cfg.sigma_u * z2]
    }

    #[inline]
    fn noise_density(&self, t: usize, w: &[f64; 2]) -> f64 {
        if !(w[0] > 0.0) {
            return 0.0;
        }
        self.price_laws[t].pdf(w[0]) * self.u_law.pdf(w[1])
    }

    fn noise_marginal_quantile(&self, t: usize, dim: usize, p: f64) -> Option<f64> {
        match dim {
            0 => Some(self.price_laws[t].inverse_cdf(p)),
            1 => Some(self.u_law.inverse_cdf(p)),
            _ => None,
        }
    }

    fn stage_cost_bound(&self) -> Option<f64> {
        Some(self.cost_bound())
    }
}

/// The true noise density plus a 3×3 grid of bivariate normals with price
/// means {50, 175, 300}, shock means {−3, −1, 1} and sds (750, 0.25).
pub fn default_basis(model: &EnergyModel) -> Result<BasisSet> {
    let mut components = vec![BasisComponent::StageNoise];
    for p in [50.0, 175.0, 300.0] {
        for u in [-3.0, -1.0, 1.0] {
            components.push(BasisComponent::Gaussian {
                mean: vec![p, u],
                sd: vec![750.0, 0.25],
            });
        }
    }
    BasisSet::new(components, SupportBox::from_model_quantiles(model)?)
}
