//! Quantile-based risk measures (QBRMs).
//!
//! A QBRM is the expectation of a function `Φ(X, q_{α₁}(X), …, q_{α_m}(X))`
//! of a cost `X` and finitely many of its quantiles. VaR, CVaR and the
//! mean-CVaR mixture are provided as built-in combiners, together with a
//! general nonnegative affine mix of the mean, VaR and CVaR terms.
//!
//! All quantiles use the left-continuous convention
//! `q^α(X) = inf { u : P(X ≤ u) ≥ α }`. On a discrete sample this is the
//! first sorted value whose cumulative weight reaches `α`; cumulative sums are
//! compared against `α − QUANTILE_TOL` so that exact-boundary cases do not
//! depend on floating-point accumulation order.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Slack used when comparing cumulative weights against a risk level.
pub const QUANTILE_TOL: f64 = 1e-12;

/// Weight-normalization tolerance for [`WeightedSample`].
pub const WEIGHT_TOL: f64 = 1e-12;

/// Strictly increasing risk levels `0 < α₁ < … < α_m < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskLevels(Vec<f64>);

impl RiskLevels {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(invalid("at least one risk level is required"));
        }
        for &a in &alphas {
            if !(a > 0.0 && a < 1.0) {
                return Err(invalid(format!("risk level {a} outside (0, 1)")));
            }
        }
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("risk levels must be strictly increasing"));
        }
        Ok(Self(alphas))
    }

    pub fn single(alpha: f64) -> Result<Self> {
        Self::new(vec![alpha])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Nonnegative affine mix of the mean, the VaRs and the CVaRs at each level.
///
/// The weights must sum to one so that the resulting measure is translation
/// invariant. Coherence is not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMix {
    pub mean: f64,
    pub var: Vec<f64>,
    pub cvar: Vec<f64>,
}

/// How `Φ` combines the realization with its quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Combiner {
    /// `Φ(x, q) = q`.
    Var,
    /// `Φ(x, q) = q + (x − q)⁺ / (1 − α)`.
    Cvar,
    /// `(1 − λ)·x + λ·[q + (x − q)⁺ / (1 − α)]`.
    MeanCvar { lambda: f64 },
    CustomAffineMix(AffineMix),
}

/// A validated quantile-based risk measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QbrmSpecRepr", into = "QbrmSpecRepr")]
pub struct QbrmSpec {
    levels: RiskLevels,
    combiner: Combiner,
    lipschitz_phi: f64,
}

#[derive(Serialize, Deserialize)]
struct QbrmSpecRepr {
    alphas: Vec<f64>,
    combiner: Combiner,
}

impl TryFrom<QbrmSpecRepr> for QbrmSpec {
    type Error = crate::Error;

    fn try_from(r: QbrmSpecRepr) -> Result<Self> {
        QbrmSpec::new(RiskLevels::new(r.alphas)?, r.combiner)
    }
}

impl From<QbrmSpec> for QbrmSpecRepr {
    fn from(s: QbrmSpec) -> Self {
        QbrmSpecRepr {
            alphas: s.levels.0,
            combiner: s.combiner,
        }
    }
}

impl QbrmSpec {
    pub fn new(levels: RiskLevels, combiner: Combiner) -> Result<Self> {
        let m = levels.len();
        match &combiner {
            Combiner::Var | Combiner::Cvar => {
                if m != 1 {
                    return Err(invalid("VaR and CVaR combiners take exactly one risk level"));
                }
            }
            Combiner::MeanCvar { lambda } => {
                if m != 1 {
                    return Err(invalid("mean-CVaR combiner takes exactly one risk level"));
                }
                if !(0.0..=1.0).contains(lambda) {
                    return Err(invalid(format!("mean-CVaR weight {lambda} outside [0, 1]")));
                }
            }
            Combiner::CustomAffineMix(mix) => {
                if mix.var.len() != m || mix.cvar.len() != m {
                    return Err(invalid(format!(
                        "affine mix needs {m} VaR and {m} CVaR weights"
                    )));
                }
                let all = std::iter::once(mix.mean).chain(mix.var.iter().copied()).chain(mix.cvar.iter().copied());
                let mut total = 0.0;
                for w in all {
                    if !(w >= 0.0) || !w.is_finite() {
                        return Err(invalid(format!("affine mix weight {w} must be nonnegative")));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("affine mix weights sum to {total}, expected 1")));
                }
            }
        }
        let lipschitz_phi = lipschitz_bound(&levels, &combiner);
        Ok(Self {
            levels,
            combiner,
            lipschitz_phi,
        })
    }

    pub fn var(alpha: f64) -> Result<Self> {
        Self::new(RiskLevels::single(alpha)?, Combiner::Var)
    }

    pub fn cvar(alpha: f64) -> Result<Self> {
        Self::new(RiskLevels::single(alpha)?, Combiner::Cvar)
    }

    pub fn mean_cvar(lambda: f64, alpha: f64) -> Result<Self> {
        Self::new(RiskLevels::single(alpha)?, Combiner::MeanCvar { lambda })
    }

    pub fn levels(&self) -> &RiskLevels {
        &self.levels
    }

    pub fn alphas(&self) -> &[f64] {
        self.levels.as_slice()
    }

    /// Number of quantiles `m` the combiner consumes.
    pub fn m(&self) -> usize {
        self.levels.len()
    }

    pub fn combiner(&self) -> &Combiner {
        &self.combiner
    }

    /// Lipschitz constant of `Φ` with respect to the l1 norm on `(x, q₁, …, q_m)`.
    pub fn lipschitz_phi(&self) -> f64 {
        self.lipschitz_phi
    }

    /// Evaluates `Φ(x, q₁, …, q_m)`.
    pub fn phi(&self, x: f64, quantiles: &[f64]) -> Result<f64> {
        if quantiles.len() != self.m() {
            return Err(invalid(format!(
                "expected {} quantiles, got {}",
                self.m(),
                quantiles.len()
            )));
        }
        Ok(self.phi_unchecked(x, quantiles))
    }

    #[inline]
    pub(crate) fn phi_unchecked(&self, x: f64, q: &[f64]) -> f64 {
        let alphas = self.levels.as_slice();
        match &self.combiner {
            Combiner::Var => q[0],
            Combiner::Cvar => cvar_term(x, q[0], alphas[0]),
            Combiner::MeanCvar { lambda } => {
                (1.0 - lambda) * x + lambda * cvar_term(x, q[0], alphas[0])
            }
            Combiner::CustomAffineMix(mix) => {
                let mut v = mix.mean * x;
                for i in 0..alphas.len() {
                    v += mix.var[i] * q[i] + mix.cvar[i] * cvar_term(x, q[i], alphas[i]);
                }
                v
            }
        }
    }
}

/// Free-function form of [`QbrmSpec::phi`].
pub fn phi(x: f64, quantiles: &[f64], spec: &QbrmSpec) -> Result<f64> {
    spec.phi(x, quantiles)
}

#[inline]
fn cvar_term(x: f64, q: f64, alpha: f64) -> f64 {
    q + (x - q).max(0.0) / (1.0 - alpha)
}

// Largest sup-norm of a partial derivative of Φ, which bounds the l1
// Lipschitz constant.
fn lipschitz_bound(levels: &RiskLevels, combiner: &Combiner) -> f64 {
    let alphas = levels.as_slice();
    let tail = |a: f64| 1.0 / (1.0 - a);
    let q_slope = |a: f64| 1.0f64.max(a / (1.0 - a));
    match combiner {
        Combiner::Var => 1.0,
        Combiner::Cvar => tail(alphas[0]).max(q_slope(alphas[0])),
        Combiner::MeanCvar { lambda } => {
            let dx = (1.0 - lambda) + lambda * tail(alphas[0]);
            dx.max(lambda * q_slope(alphas[0]))
        }
        Combiner::CustomAffineMix(mix) => {
            let mut dx = mix.mean;
            let mut best: f64 = 0.0;
            for (i, &a) in alphas.iter().enumerate() {
                dx += mix.cvar[i] * tail(a);
                let hi = mix.var[i] + mix.cvar[i];
                let lo = (mix.var[i] - mix.cvar[i] * a / (1.0 - a)).abs();
                best = best.max(hi).max(lo);
            }
            best.max(dx)
        }
    }
}

/// Empirical distribution with nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedSample {
    /// Builds a sample, renormalizing the weights when their sum is off by
    /// more than [`WEIGHT_TOL`].
    pub fn new(values: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(invalid("values and weights differ in length"));
        }
        if values.is_empty() {
            return Err(invalid("empty sample"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sample values must be finite"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("sample weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("sample weights sum to zero"));
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Self { values, weights })
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(invalid("empty sample"));
        }
        Self::new(values, vec![1.0 / n as f64; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    fn sorted_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        idx
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("risk level {alpha} outside (0, 1)")))
    }
}

fn quantile_sorted(sample: &WeightedSample, order: &[usize], alpha: f64) -> f64 {
    let mut cum = 0.0;
    for &j in order {
        cum += sample.weights[j];
        if cum >= alpha - QUANTILE_TOL {
            return sample.values[j];
        }
    }
    // Rounding left the total just short of alpha.
    sample.values[*order.last().expect("nonempty sample")]
}

/// Left-continuous weighted quantile.
pub fn empirical_quantile(sample: &WeightedSample, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let order = sample.sorted_order();
    Ok(quantile_sorted(sample, &order, alpha))
}

/// `q + (1 − α)⁻¹ Σ wⱼ (xⱼ − q)⁺` with `q` the empirical α-quantile.
pub fn empirical_cvar(sample: &WeightedSample, alpha: f64) -> Result<f64> {
    let q = empirical_quantile(sample, alpha)?;
    let tail: f64 = sample
        .values
        .iter()
        .zip(&sample.weights)
        .map(|(x, w)| w * (x - q).max(0.0))
        .sum();
    Ok(q + tail / (1.0 - alpha))
}

/// `Σⱼ wⱼ Φ(xⱼ, q₁, …, q_m)` with the quantiles taken from the sample itself.
pub fn empirical_qbrm(sample: &WeightedSample, spec: &QbrmSpec) -> Result<f64> {
    let order = sample.sorted_order();
    let q: Vec<f64> = spec
        .alphas()
        .iter()
        .map(|&a| quantile_sorted(sample, &order, a))
        .collect();
    Ok(sample
        .values
        .iter()
        .zip(&sample.weights)
        .map(|(&x, w)| w * spec.phi_unchecked(x, &q))
        .sum())
}

/// Index of the α-quantile order statistic of an equally weighted sample of
/// size `n`, consistent with the cumulative-weight scan.
pub(crate) fn uniform_quantile_rank(n: usize, alpha: f64) -> usize {
    let k = ((alpha - QUANTILE_TOL) * n as f64).ceil();
    (k.max(1.0) as usize - 1).min(n - 1)
}

/// Equally weighted QBRM of `outcomes`, using selection instead of a full
/// sort. `scratch` is reused between calls to avoid allocation.
///
/// Agrees with [`empirical_qbrm`] on a uniform [`WeightedSample`] up to
/// floating-point summation order.
pub fn uniform_qbrm(outcomes: &[f64], spec: &QbrmSpec, scratch: &mut Vec<f64>) -> f64 {
    let n = outcomes.len();
    assert!(n > 0, "empty outcome set");
    let mut q = [0.0f64; 8];
    let mut qv;
    let quantiles: &mut [f64] = if spec.m() <= q.len() {
        &mut q[..spec.m()]
    } else {
        qv = vec![0.0; spec.m()];
        &mut qv
    };
    for (i, &a) in spec.alphas().iter().enumerate() {
        scratch.clear();
        scratch.extend_from_slice(outcomes);
        let k = uniform_quantile_rank(n, a);
        let (_, v, _) = scratch.select_nth_unstable_by(k, |x, y| x.total_cmp(y));
        quantiles[i] = *v;
    }
    if matches!(spec.combiner(), Combiner::Var) {
        return quantiles[0];
    }
    let inv = 1.0 / n as f64;
    outcomes
        .iter()
        .map(|&x| spec.phi_unchecked(x, quantiles))
        .sum::<f64>()
        * inv
}
