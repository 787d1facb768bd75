//! Risk-directed sampling: adaptive importance sampling for the Bellman
//! samples.
//!
//! For every `(t, s, a)` a nonnegative coefficient vector `θ` over `K` basis
//! densities is fitted online so that `θᵀφ(w)` tracks `|H(w)|·p_t(w)`, the
//! integrand of the value update. The normalized mixture `θᵀφ / ‖θ‖₁` is
//! used to draw `W^q`, and the Bellman sample is reweighted by the likelihood
//! ratio `p_t / p̄`. The fit is a stochastic gradient step on the mean squared
//! error under a uniform reference law `p^u` on a compact box `W̄`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adp::{AdpSettings, AuxQuantileTable, Solver, StepRule, ValueTable};
use crate::error::{config, invalid, Error, Result};
use crate::mdp::{MdpModel, NoisePoint, StateActionSpace};
use crate::nnls;
use crate::risk::QbrmSpec;
use crate::trace::{TraceCadence, TraceSink};

/// Default cap on the likelihood ratio.
pub const DEFAULT_L_MAX: f64 = 1e6;

/// Relative eigenvalue threshold below which a Gram matrix counts as singular.
pub const GRAM_TOL: f64 = 1e-10;

const MAX_DIM: usize = 8;

/// One basis density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisComponent {
    /// The model's own noise density `p_t`.
    StageNoise,
    /// Product of independent normals.
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
}

impl BasisComponent {
    #[inline]
    fn pdf<M: MdpModel>(&self, model: &M, t: usize, w: &M::Noise) -> f64 {
        match self {
            Self::StageNoise => model.noise_density(t, w),
            Self::Gaussian { mean, sd } => {
                let mut log = 0.0;
                for ((x, m), s) in w.coords().iter().zip(mean).zip(sd) {
                    let z = (x - m) / s;
                    log -= 0.5 * z * z + s.ln();
                }
                let k = mean.len() as f64;
                (log - 0.5 * k * (2.0 * std::f64::consts::PI).ln()).exp()
            }
        }
    }

    fn sample<M: MdpModel, R: Rng + ?Sized>(&self, model: &M, t: usize, rng: &mut R) -> M::Noise {
        match self {
            Self::StageNoise => model.sample_noise(t, rng),
            Self::Gaussian { mean, sd } => {
                let mut c = [0.0; MAX_DIM];
                for (j, (m, s)) in mean.iter().zip(sd).enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    c[j] = m + s * z;
                }
                M::Noise::from_coords(&c[..mean.len()])
            }
        }
    }
}

/// Axis-aligned compact box in noise space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SupportBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(config("support box bounds must be nonempty and of equal length"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(config("support box needs finite bounds with lo < hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Per-dimension `[q(0.0005), q(0.9995)]` of the noise marginals at each
    /// stage, intersected across stages.
    pub fn from_model_quantiles<M: MdpModel>(model: &M) -> Result<Self> {
        let dim = M::Noise::DIM;
        let mut lo = vec![f64::NEG_INFINITY; dim];
        let mut hi = vec![f64::INFINITY; dim];
        for t in 0..model.horizon() {
            for j in 0..dim {
                let (a, b) = model
                    .noise_marginal_quantile(t, j, 0.0005)
                    .zip(model.noise_marginal_quantile(t, j, 0.9995))
                    .ok_or_else(|| config("model exposes no marginal quantiles; configure the support box"))?;
                lo[j] = lo[j].max(a);
                hi[j] = hi[j].min(b);
            }
        }
        Self::new(lo, hi)
    }
}

/// Basis densities together with the uniform reference law on `W̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    components: Vec<BasisComponent>,
    support: SupportBox,
}

impl BasisSet {
    pub fn new(components: Vec<BasisComponent>, support: SupportBox) -> Result<Self> {
        if components.is_empty() {
            return Err(config("basis needs at least one component"));
        }
        let dim = support.dim();
        if dim > MAX_DIM {
            return Err(config(format!("noise dimension above {MAX_DIM} is not supported")));
        }
        for (k, c) in components.iter().enumerate() {
            if let BasisComponent::Gaussian { mean, sd } = c {
                if mean.len() != dim || sd.len() != dim {
                    return Err(config(format!("basis component {k}: dimension differs from the support box")));
                }
                if mean.iter().any(|m| !m.is_finite()) || sd.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(config(format!("basis component {k}: need finite means and positive sds")));
                }
            }
        }
        Ok(Self { components, support })
    }

    pub fn components(&self) -> &[BasisComponent] {
        &self.components
    }

    pub fn support(&self) -> &SupportBox {
        &self.support
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// `p^u(w)`: `1/vol(W̄)` inside the box, 0 outside.
    #[inline]
    pub fn uniform_density(&self, w: &[f64]) -> f64 {
        if self.support.contains(w) {
            1.0 / self.support.volume()
        } else {
            0.0
        }
    }

    /// Writes `φ¹(w)..φᴷ(w)` into `out`.
    #[inline]
    pub fn eval<M: MdpModel>(&self, model: &M, t: usize, w: &M::Noise, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.components.iter().map(|c| c.pdf(model, t, w)));
    }

    fn check_model<M: MdpModel>(&self, _model: &M) -> Result<()> {
        if self.support.dim() != M::Noise::DIM {
            return Err(config("support box dimension differs from the model's noise dimension"));
        }
        Ok(())
    }
}

/// `θ` rows over `(t, pair)`, each of length `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureCoefficients {
    k: usize,
    d: usize,
    data: Vec<f64>,
}

impl MixtureCoefficients {
    pub fn filled(horizon: usize, d: usize, row: &[f64]) -> Result<Self> {
        if row.is_empty() || row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(config("initial coefficients must be finite and nonnegative"));
        }
        let mut data = Vec::with_capacity(horizon * d * row.len());
        for _ in 0..horizon * d {
            data.extend_from_slice(row);
        }
        Ok(Self { k: row.len(), d, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, t: usize, pair: usize) -> &[f64] {
        let o = (t * self.d + pair) * self.k;
        &self.data[o..o + self.k]
    }

    #[inline]
    pub fn row_mut(&mut self, t: usize, pair: usize) -> &mut [f64] {
        let o = (t * self.d + pair) * self.k;
        &mut self.data[o..o + self.k]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    /// Rows that are identically zero and therefore sample from the
    /// equal-weight mixture.
    pub fn zero_rows(&self) -> usize {
        self.data.chunks(self.k).filter(|r| r.iter().all(|&x| x == 0.0)).count()
    }
}

/// `θᵀφ / ‖θ‖₁` from precomputed basis values; `Σφ/K` when `θ = 0`.
#[inline]
pub fn mixture_pdf_from_values(theta: &[f64], phi: &[f64]) -> f64 {
    let total: f64 = theta.iter().sum();
    if total > 0.0 {
        theta.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>() / total
    } else {
        phi.iter().sum::<f64>() / phi.len() as f64
    }
}

pub fn mixture_pdf<M: MdpModel>(theta: &[f64], basis: &BasisSet, model: &M, t: usize, w: &M::Noise) -> f64 {
    let mut phi = Vec::with_capacity(basis.k());
    basis.eval(model, t, w, &mut phi);
    mixture_pdf_from_values(theta, &phi)
}

/// Draws a component with probability `θ_k/‖θ‖₁` (uniform when `θ = 0`) and
/// then a point from it. A single-component basis consumes no randomness for
/// the component choice.
pub fn sample_mixture<M: MdpModel, R: Rng + ?Sized>(
    theta: &[f64],
    basis: &BasisSet,
    model: &M,
    t: usize,
    rng: &mut R,
) -> M::Noise {
    let k = pick_component(theta, rng);
    basis.components[k].sample(model, t, rng)
}

fn pick_component<R: Rng + ?Sized>(theta: &[f64], rng: &mut R) -> usize {
    let k = theta.len();
    if k == 1 {
        return 0;
    }
    let total: f64 = theta.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..k);
    }
    let mut target = rng.random::<f64>() * total;
    let mut last = 0;
    for (j, &x) in theta.iter().enumerate() {
        if x > 0.0 {
            if target < x {
                return j;
            }
            target -= x;
            last = j;
        }
    }
    last
}

/// `min(p_t(w)/p̄(w), l_max)` and whether the cap was hit.
#[inline]
pub fn likelihood_ratio(p_true: f64, p_mix: f64, l_max: f64) -> Result<(f64, bool)> {
    if !(p_mix > 0.0) || !p_mix.is_finite() {
        return Err(Error::SamplingSupport);
    }
    let r = p_true / p_mix;
    if r > l_max {
        Ok((l_max, true))
    } else {
        Ok((r, false))
    }
}

/// `θ ← [θ − β·(θᵀφ − |H|·p_t)·φ·p^u/p̄]⁺`.
#[inline]
pub fn update_coefficients(
    theta: &mut [f64],
    phi: &[f64],
    abs_h: f64,
    p_true: f64,
    p_u: f64,
    p_mix: f64,
    beta: f64,
) {
    if p_u == 0.0 || beta == 0.0 {
        return;
    }
    let fit: f64 = theta.iter().zip(phi).map(|(a, b)| a * b).sum();
    let g = beta * (fit - abs_h * p_true) * p_u / p_mix;
    for (th, &f) in theta.iter_mut().zip(phi) {
        *th = (*th - g * f).max(0.0);
    }
}

/// Midpoint rule on the support box with `n` points per dimension.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    dim: usize,
    coords: Vec<f64>,
}

impl QuadratureGrid {
    pub fn midpoint(support: &SupportBox, per_dim: usize) -> Result<Self> {
        if per_dim == 0 {
            return Err(invalid("quadrature needs at least one point per dimension"));
        }
        let dim = support.dim();
        let total = per_dim.checked_pow(dim as u32).filter(|&n| n <= 50_000_000).ok_or_else(|| invalid("quadrature grid too large"))?;
        let mut coords = Vec::with_capacity(total * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            for j in 0..dim {
                let h = (support.hi[j] - support.lo[j]) / per_dim as f64;
                coords.push(support.lo[j] + (idx[j] as f64 + 0.5) * h);
            }
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < per_dim {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(Self { dim, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }
}

/// `E_u[φφᵀ]` and `E_u[f·φ]` on the grid.
pub fn moments<M: MdpModel>(
    basis: &BasisSet,
    model: &M,
    t: usize,
    grid: &QuadratureGrid,
    target: impl Fn(&M::Noise) -> f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let k = basis.k();
    let mut g = DMatrix::zeros(k, k);
    let mut b = DVector::zeros(k);
    let mut phi = Vec::with_capacity(k);
    for p in grid.points() {
        let w = M::Noise::from_coords(p);
        basis.eval(model, t, &w, &mut phi);
        let f = target(&w);
        for i in 0..k {
            b[i] += f * phi[i];
            for j in 0..=i {
                g[(i, j)] += phi[i] * phi[j];
            }
        }
    }
    let n = grid.len() as f64;
    for i in 0..k {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    (g / n, b / n)
}

pub fn gram_matrix<M: MdpModel>(basis: &BasisSet, model: &M, t: usize, grid: &QuadratureGrid) -> DMatrix<f64> {
    moments(basis, model, t, grid, |_| 0.0).0
}

/// Largest eigenvalue of a positive definite Gram matrix, or the components
/// spanning its near-null space.
pub fn check_gram(g: &DMatrix<f64>) -> Result<f64> {
    let eig = g.clone().symmetric_eigen();
    let (mut imin, mut imax) = (0, 0);
    for i in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let (lmin, lmax) = (eig.eigenvalues[imin], eig.eigenvalues[imax]);
    if !(lmax > 0.0) || lmin <= GRAM_TOL * lmax {
        let v = eig.eigenvectors.column(imin);
        let top = v.amax();
        let components = (0..v.len()).filter(|&j| v[j].abs() >= 0.1 * top).collect();
        return Err(Error::SingularGram { components });
    }
    Ok(lmax)
}

/// `Π_φ f = argmin_{θ ≥ 0} E_u[(θᵀφ(W) − f(W))²]` by quadrature and NNLS.
pub fn project_phi<M: MdpModel>(
    basis: &BasisSet,
    model: &M,
    t: usize,
    per_dim: usize,
    target: impl Fn(&M::Noise) -> f64,
) -> Result<Vec<f64>> {
    basis.check_model(model)?;
    let grid = QuadratureGrid::midpoint(&basis.support, per_dim)?;
    let (g, b) = moments(basis, model, t, &grid, target);
    check_gram(&g)?;
    Ok(nnls::solve(&g, &b).iter().copied().collect())
}

/// Settings for risk-directed sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdsConfig {
    pub basis: BasisSet,
    /// Coefficient steps. With `beta_relative` the step is additionally
    /// divided by the largest Gram eigenvalue of stage `t`, which makes the
    /// numerators dimensionless.
    pub beta: StepRule,
    #[serde(default = "yes")]
    pub beta_relative: bool,
    #[serde(default = "default_l_max")]
    pub l_max: f64,
    /// Starting row for every pair; zero (equal-weight sampling) when absent.
    #[serde(default)]
    pub initial_theta: Option<Vec<f64>>,
    /// Quadrature points per dimension for the Gram check.
    #[serde(default = "default_gram_points")]
    pub gram_points: usize,
}

fn yes() -> bool {
    true
}

fn default_l_max() -> f64 {
    DEFAULT_L_MAX
}

fn default_gram_points() -> usize {
    200
}

impl RdsConfig {
    pub fn new(basis: BasisSet, beta: StepRule) -> Self {
        Self {
            basis,
            beta,
            beta_relative: true,
            l_max: DEFAULT_L_MAX,
            initial_theta: None,
            gram_points: default_gram_points(),
        }
    }
}

/// Per-run sampling state.
pub struct RdsState {
    pub(crate) basis: BasisSet,
    pub(crate) theta: MixtureCoefficients,
    pub(crate) l_max: f64,
    pub(crate) cap_hits: u64,
    pub(crate) phi_buf: Vec<f64>,
    beta: StepRule,
    beta_scale: Vec<f64>,
}

impl RdsState {
    pub(crate) fn new<M: MdpModel>(model: &M, space: &StateActionSpace, cfg: RdsConfig) -> Result<Self> {
        let horizon = model.horizon();
        cfg.basis.check_model(model)?;
        cfg.beta.validate(horizon, "beta")?;
        if !(cfg.l_max > 0.0) {
            return Err(config("l_max must be positive"));
        }
        let k = cfg.basis.k();
        let init = cfg.initial_theta.clone().unwrap_or_else(|| vec![0.0; k]);
        if init.len() != k {
            return Err(config(format!("initial_theta needs {k} entries")));
        }
        let grid = QuadratureGrid::midpoint(&cfg.basis.support, cfg.gram_points)?;
        let mut beta_scale = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let lmax = check_gram(&gram_matrix(&cfg.basis, model, t, &grid))?;
            beta_scale.push(if cfg.beta_relative { 1.0 / lmax } else { 1.0 });
        }
        Ok(Self {
            theta: MixtureCoefficients::filled(horizon, space.len(), &init)?,
            basis: cfg.basis,
            l_max: cfg.l_max,
            cap_hits: 0,
            phi_buf: Vec::with_capacity(k),
            beta: cfg.beta,
            beta_scale,
        })
    }

    #[inline]
    pub(crate) fn beta_step(&self, t: usize, n: u64) -> f64 {
        self.beta.step(t, n) * self.beta_scale[t]
    }
}

/// Dynamic-QBRM ADP with risk-directed sampling, from zero tables.
pub fn run_with_rds<M: MdpModel>(
    model: &M,
    spec: &QbrmSpec,
    settings: &AdpSettings,
    rds: RdsConfig,
    iterations: u64,
    seed: u64,
    sink: &mut dyn TraceSink,
) -> Result<(ValueTable, AuxQuantileTable, MixtureCoefficients)> {
    let mut solver = Solver::new(model, spec.clone(), settings.clone(), seed)?.with_rds(rds)?;
    solver.advance(iterations, &TraceCadence::for_total(iterations), sink)?;
    let (q, u, theta) = solver.into_tables();
    Ok((q, u, theta.expect("sampling enabled")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adp::{run, StepsizeSchedule};
    use crate::models::{GaussianStage, ToyChain};
    use crate::trace::NullSink;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn gauss(m: f64, s: f64) -> BasisComponent {
        BasisComponent::Gaussian {
            mean: vec![m],
            sd: vec![s],
        }
    }

    fn line_basis(components: Vec<BasisComponent>) -> BasisSet {
        BasisSet::new(components, SupportBox::new(vec![-6.0], vec![6.0]).unwrap()).unwrap()
    }

    #[test]
    fn mixture_pdf_examples() {
        let m = GaussianStage::new(0.0, 1.0);
        let b = line_basis(vec![gauss(-1.0, 1.0), gauss(2.0, 0.5), gauss(0.0, 3.0)]);
        let w = [0.3];
        let mut phi = Vec::new();
        b.eval(&m, 0, &w, &mut phi);
        assert_eq!(mixture_pdf(&[1.0, 0.0, 0.0], &b, &m, 0, &w), phi[0]);
        let half = mixture_pdf(&[2.0, 2.0, 0.0], &b, &m, 0, &w);
        assert!((half - (phi[0] + phi[1]) / 2.0).abs() < 1e-15);
        let fallback = mixture_pdf(&[0.0; 3], &b, &m, 0, &w);
        assert!((fallback - phi.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        // Gaussian pdf against statrs.
        let n = statrs::distribution::Normal::new(2.0, 0.5).unwrap();
        use statrs::distribution::Continuous;
        assert!((phi[1] - n.pdf(0.3)).abs() < 1e-14);
    }

    #[test]
    fn sample_mixture_components() {
        let m = GaussianStage::new(0.0, 1.0);
        let b = line_basis(vec![gauss(-100.0, 1.0), gauss(100.0, 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(sample_mixture(&[0.0, 1.0], &b, &m, 0, &mut rng)[0] > 0.0);
        }
        let draws = 100_000;
        for theta in [[1.0, 1.0], [0.0, 0.0]] {
            let right = (0..draws)
                .filter(|_| sample_mixture(&theta, &b, &m, 0, &mut rng)[0] > 0.0)
                .count() as f64
                / draws as f64;
            assert!((right - 0.5).abs() < 3.0 * (0.25 / draws as f64).sqrt());
        }
    }

    #[test]
    fn sample_mixture_ks() {
        let m = GaussianStage::new(0.0, 1.0);
        let b = line_basis(vec![gauss(-1.0, 0.7), gauss(1.5, 1.2), BasisComponent::StageNoise]);
        let theta = [0.2, 0.5, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_mixture(&theta, &b, &m, 0, &mut rng)[0]).collect();
        xs.sort_by(f64::total_cmp);
        let cdfs = [
            Normal::new(-1.0, 0.7).unwrap(),
            Normal::new(1.5, 1.2).unwrap(),
            Normal::new(0.0, 1.0).unwrap(),
        ];
        let cdf = |x: f64| theta.iter().zip(&cdfs).map(|(w, d)| w * d.cdf(x)).sum::<f64>();
        let mut dmax: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = cdf(x);
            dmax = dmax.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
        }
        // 1% critical value of the one-sample KS statistic.
        assert!(dmax < 1.63 / (n as f64).sqrt(), "{dmax}");
    }

    #[test]
    fn likelihood_ratio_contract() {
        assert_eq!(likelihood_ratio(0.3, 0.3, 1e6).unwrap(), (1.0, false));
        assert_eq!(likelihood_ratio(1.0, 1e-9, 1e6).unwrap(), (1e6, true));
        assert_eq!(likelihood_ratio(0.5, 0.0, 1e6), Err(Error::SamplingSupport));
    }

    #[test]
    fn likelihood_ratio_corrects_the_mean() {
        let m = GaussianStage::new(0.0, 1.0);
        let b = line_basis(vec![gauss(1.0, 1.5), BasisComponent::StageNoise]);
        let theta = [0.8, 0.2];
        let f = |x: f64| (x * 1.3).sin() + (x > 1.0) as u8 as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut phi = Vec::new();
        for _ in 0..n {
            let w = sample_mixture(&theta, &b, &m, 0, &mut rng);
            b.eval(&m, 0, &w, &mut phi);
            let (l, _) = likelihood_ratio(m.noise_density(0, &w), mixture_pdf_from_values(&theta, &phi), 1e6).unwrap();
            let v = l * f(w[0]);
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        // E f(Z) for Z ~ N(0,1): E sin(1.3 Z) = 0, P(Z > 1) = 0.158655.
        let exact = 1.0 - Normal::new(0.0, 1.0).unwrap().cdf(1.0);
        assert!((mean - exact).abs() < 3.0 * se + 1e-12, "{mean} vs {exact}");
        // Identical densities give exactly one.
        let w = [0.4];
        let only_true = line_basis(vec![BasisComponent::StageNoise]);
        let p = mixture_pdf(&[1.0], &only_true, &m, 0, &w);
        assert_eq!(likelihood_ratio(m.noise_density(0, &w), p, 1e6).unwrap().0, 1.0);
    }

    #[test]
    fn update_coefficients_examples() {
        let mut th = [0.5];
        update_coefficients(&mut th, &[1.0], 1.0, 1.0, 1.0, 1.0, 0.1);
        assert!((th[0] - 0.55).abs() < 1e-15);
        let mut th = [0.5, 0.2];
        update_coefficients(&mut th, &[1.0, 2.0], 3.0, 1.0, 0.0, 1.0, 0.1);
        assert_eq!(th, [0.5, 0.2]);
        update_coefficients(&mut th, &[1.0, 2.0], 3.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(th, [0.5, 0.2]);
        update_coefficients(&mut th, &[1.0, 2.0], 0.0, 1.0, 1.0, 1.0, 10.0);
        assert_eq!(th, [0.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn coefficients_stay_nonnegative(
            theta in prop::collection::vec(0.0f64..5.0, 3),
            phi in prop::collection::vec(0.0f64..2.0, 3),
            h in 0.0f64..10.0, p in 0.0f64..2.0, pu in 0.0f64..1.0,
            pmix in 0.01f64..2.0, beta in 0.0f64..10.0,
        ) {
            let mut th = theta.clone();
            update_coefficients(&mut th, &phi, h, p, pu, pmix, beta);
            prop_assert!(th.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn mixture_pdf_scale_invariant(
            theta in prop::collection::vec(0.0f64..5.0, 3),
            phi in prop::collection::vec(0.0f64..2.0, 3),
            c in 0.01f64..100.0,
        ) {
            let scaled: Vec<f64> = theta.iter().map(|x| x * c).collect();
            let a = mixture_pdf_from_values(&theta, &phi);
            let b = mixture_pdf_from_values(&scaled, &phi);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn projection_examples() {
        let m = GaussianStage::new(0.0, 1.0);
        let b = line_basis(vec![gauss(-1.0, 1.0), gauss(1.0, 1.0)]);
        let theta = project_phi(&b, &m, 0, 4000, |w| b.components[0].pdf(&m, 0, w)).unwrap();
        assert!((theta[0] - 1.0).abs() < 1e-9 && theta[1].abs() < 1e-9, "{theta:?}");
        let zero = project_phi(&b, &m, 0, 500, |_| 0.0).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn projection_kkt_and_oracle() {
        let m = GaussianStage::new(0.0, 1.0);
        let b = line_basis(vec![gauss(-0.5, 0.8), gauss(1.5, 1.3)]);
        let target = |w: &[f64; 1]| (w[0] * 0.7).cos().powi(2) * (-0.1 * w[0] * w[0]).exp() + 0.05 * w[0].abs();
        let theta = project_phi(&b, &m, 0, 3000, target).unwrap();
        let grid = QuadratureGrid::midpoint(b.support(), 3000).unwrap();
        let (g, rhs) = moments(&b, &m, 0, &grid, target);
        let grad = &g * DVector::from_column_slice(&theta) - &rhs;
        for j in 0..2 {
            if theta[j] > 0.0 {
                assert!(grad[j].abs() < 1e-8);
            } else {
                assert!(grad[j] > -1e-8);
            }
        }
        // Projected-gradient oracle.
        let lip = g.clone().symmetric_eigen().eigenvalues.max();
        let mut x = DVector::zeros(2);
        for _ in 0..1_000_000 {
            let next = (&x - (&g * &x - &rhs) / lip).map(|v: f64| v.max(0.0));
            let moved = (&next - &x).amax();
            x = next;
            if moved < 1e-14 {
                break;
            }
        }
        assert!((x[0] - theta[0]).abs() < 1e-6 && (x[1] - theta[1]).abs() < 1e-6);
    }

    #[test]
    fn singular_gram_names_components() {
        let m = GaussianStage::new(0.0, 1.0);
        let b = line_basis(vec![gauss(-1.0, 1.0), gauss(0.0, 1.0), gauss(-1.0, 1.0)]);
        match project_phi(&b, &m, 0, 500, |_| 1.0) {
            Err(Error::SingularGram { components }) => assert_eq!(components, vec![0, 2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn true_density_basis_reproduces_plain_run() {
        let model = ToyChain::stochastic();
        let spec = QbrmSpec::mean_cvar(0.5, 0.9).unwrap();
        let mut settings = AdpSettings::default_for(&model, &spec).unwrap();
        settings.schedule = StepsizeSchedule::harmonic(3, 2.0, 5.0);
        settings.sampling.epsilon = 0.1;
        let basis = BasisSet::new(vec![BasisComponent::StageNoise], SupportBox::new(vec![0.0], vec![1.0]).unwrap()).unwrap();
        let cfg = RdsConfig::new(basis, StepRule::harmonic(3, 1.0));
        let (q1, u1) = run(&model, &spec, &settings, 5_000, 4, &mut NullSink).unwrap();
        let (q2, u2, _) = run_with_rds(&model, &spec, &settings, cfg.clone(), 5_000, 4, &mut NullSink).unwrap();
        assert_eq!(q1, q2);
        assert_eq!(u1, u2);
        let (q0, _, th) = run_with_rds(&model, &spec, &settings, cfg, 0, 4, &mut NullSink).unwrap();
        assert!(q0.entries().iter().all(|&x| x == 0.0));
        assert!(th.entries().iter().all(|&x| x == 0.0));
    }
}
