use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::mdp::{MdpModel, Sense};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToyNoise {
    /// `W ~ Uniform(0, 1)`.
    Uniform,
    /// `W ≡ value`; the reported density is that of a point mass (1 at the
    /// atom, 0 elsewhere).
    Degenerate(f64),
}

/// Three states, two actions, horizon three, scalar noise on `[0, 1]`.
///
/// * action 0: cost `1 + s/4 + w/2`, stay with probability 0.6, else advance;
/// * action 1: cost `0.2 + s/4 + 2w²`, jump two states ahead when `w < 0.3`,
///   else fall back to state 0.
///
/// Costs grow by 10% per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyChain {
    pub noise: ToyNoise,
    /// Multiplier applied to every cost (0 gives the zero-cost model).
    pub cost_scale: f64,
    pub sense: Sense,
    actions: [usize; 2],
}

impl ToyChain {
    pub const HORIZON: usize = 3;

    pub fn new(noise: ToyNoise, cost_scale: f64, sense: Sense) -> Self {
        Self {
            noise,
            cost_scale,
            sense,
            actions: [0, 1],
        }
    }

    pub fn stochastic() -> Self {
        Self::new(ToyNoise::Uniform, 1.0, Sense::Minimize)
    }

    pub fn deterministic(w: f64) -> Self {
        Self::new(ToyNoise::Degenerate(w), 1.0, Sense::Minimize)
    }

    pub fn zero_cost() -> Self {
        Self::new(ToyNoise::Uniform, 0.0, Sense::Minimize)
    }

    fn base_cost(t: usize, s: usize, a: usize, w: f64) -> f64 {
        let growth = 1.0 + 0.1 * t as f64;
        let c = match a {
            0 => 1.0 + 0.25 * s as f64 + 0.5 * w,
            _ => 0.2 + 0.25 * s as f64 + 2.0 * w * w,
        };
        growth * c
    }
}

impl MdpModel for ToyChain {
    type Noise = [f64; 1];

    fn horizon(&self) -> usize {
        Self::HORIZON
    }

    fn num_states(&self) -> usize {
        3
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn feasible_actions(&self, _state: usize) -> &[usize] {
        &self.actions
    }

    fn sense(&self) -> Sense {
        self.sense
    }

    fn cost(&self, t: usize, s: usize, a: usize, w: &[f64; 1]) -> f64 {
        self.cost_scale * Self::base_cost(t, s, a, w[0])
    }

    fn transition(&self, _t: usize, s: usize, a: usize, w: &[f64; 1]) -> usize {
        let w = w[0];
        match a {
            0 if w < 0.6 => s,
            0 => (s + 1) % 3,
            _ if w < 0.3 => (s + 2) % 3,
            _ => 0,
        }
    }

    fn sample_noise<R: Rng + ?Sized>(&self, _t: usize, rng: &mut R) -> [f64; 1] {
        match self.noise {
            ToyNoise::Uniform => [rng.random::<f64>()],
            ToyNoise::Degenerate(v) => [v],
        }
    }

    fn noise_density(&self, _t: usize, w: &[f64; 1]) -> f64 {
        match self.noise {
            ToyNoise::Uniform => {
                if (0.0..=1.0).contains(&w[0]) {
                    1.0
                } else {
                    0.0
                }
            }
            ToyNoise::Degenerate(v) => {
                if w[0] == v {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn noise_marginal_quantile(&self, _t: usize, _dim: usize, p: f64) -> Option<f64> {
        match self.noise {
            ToyNoise::Uniform => Some(p),
            ToyNoise::Degenerate(v) => Some(v),
        }
    }

    fn stage_cost_bound(&self) -> Option<f64> {
        let growth = 1.0 + 0.1 * (Self::HORIZON - 1) as f64;
        Some(self.cost_scale.abs() * growth * 2.7)
    }
}

/// One stage, one state, one action; cost `shift + scale·W` with
/// `W ~ N(0, 1)`. Used to study the sampling-coefficient limit, where the
/// target `|H*|·p` is known in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStage {
    pub shift: f64,
    pub scale: f64,
    actions: [usize; 1],
}

impl GaussianStage {
    pub fn new(shift: f64, scale: f64) -> Self {
        Self {
            shift,
            scale,
            actions: [0],
        }
    }

    /// Exact `p`-quantile of the stage cost.
    pub fn cost_quantile(&self, p: f64) -> f64 {
        let z = Normal::standard().inverse_cdf(p);
        self.shift + self.scale * z
    }
}

impl MdpModel for GaussianStage {
    type Noise = [f64; 1];

    fn horizon(&self) -> usize {
        1
    }

    fn num_states(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        1
    }

    fn feasible_actions(&self, _state: usize) -> &[usize] {
        &self.actions
    }

    fn sense(&self) -> Sense {
        Sense::Minimize
    }

    fn cost(&self, _t: usize, _s: usize, _a: usize, w: &[f64; 1]) -> f64 {
        self.shift + self.scale * w[0]
    }

    fn transition(&self, _t: usize, _s: usize, _a: usize, _w: &[f64; 1]) -> usize {
        0
    }

    fn sample_noise<R: Rng + ?Sized>(&self, _t: usize, rng: &mut R) -> [f64; 1] {
        [StandardNormal.sample(rng)]
    }

    fn noise_density(&self, _t: usize, w: &[f64; 1]) -> f64 {
        Normal::standard().pdf(w[0])
    }

    fn noise_marginal_quantile(&self, _t: usize, _dim: usize, p: f64) -> Option<f64> {
        Some(Normal::standard().inverse_cdf(p))
    }

    fn stage_cost_bound(&self) -> Option<f64> {
        Some(self.shift.abs() + 6.0 * self.scale.abs())
    }
}
