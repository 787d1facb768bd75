//! Named models and their default solver settings.
//!
//! | name           | model                                   |
//! |----------------|-----------------------------------------|
//! | `toy-chain`    | three-state chain, `W ~ Uniform(0, 1)`  |
//! | `energy`       | energy storage and bidding, `T = 12`    |
//! | `energy-small` | the same with `T = 6` and bid step 100  |

use dqbrm_core::adp::{AdpSettings, ProjectionBoxes, SamplingPolicyConfig, StepRule, StepsizeSchedule};
use dqbrm_core::energy::{default_basis, EnergyConfig, EnergyModel};
use dqbrm_core::models::{ToyChain, ToyNoise};
use dqbrm_core::rds::{BasisComponent, BasisSet, RdsConfig, SupportBox};
use dqbrm_core::{Combiner, MdpModel, QbrmSpec, Sense, StateActionSpace};
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::config_err;

pub const MODEL_NAMES: [&str; 3] = ["toy-chain", "energy", "energy-small"];

pub enum Model {
    Toy(ToyChain),
    Energy(EnergyModel),
}

/// Runs `$body` with `$m` bound to the concrete model.
#[macro_export]
macro_rules! with_model {
    ($model:expr, $m:ident => $body:expr) => {
        match $model {
            $crate::registry::Model::Toy($m) => $body,
            $crate::registry::Model::Energy($m) => $body,
        }
    };
}

impl Model {
    pub fn build(name: &str, overrides: &Map<String, Value>) -> anyhow::Result<Self> {
        match name {
            "toy-chain" => {
                let o: ToyOverrides = serde_json::from_value(Value::Object(overrides.clone()))
                    .map_err(|e| config_err(format!("model.overrides: {e}")))?;
                Ok(Model::Toy(o.build()))
            }
            "energy" | "energy-small" => {
                let base = if name == "energy" {
                    EnergyConfig::default()
                } else {
                    EnergyConfig::small()
                };
                let mut merged = match serde_json::to_value(base)? {
                    Value::Object(m) => m,
                    _ => unreachable!("struct serializes to an object"),
                };
                merged.extend(overrides.clone());
                let cfg: EnergyConfig = serde_json::from_value(Value::Object(merged))
                    .map_err(|e| config_err(format!("model.overrides: {e}")))?;
                let model = EnergyModel::new(cfg).map_err(|e| config_err(format!("model.overrides: {e}")))?;
                Ok(Model::Energy(model))
            }
            other => Err(config_err(format!(
                "model.name: unknown model \"{other}\" (known: {})",
                MODEL_NAMES.join(", ")
            ))),
        }
    }

    pub fn horizon(&self) -> usize {
        with_model!(self, m => m.horizon())
    }

    pub fn space(&self) -> StateActionSpace {
        with_model!(self, m => StateActionSpace::new(m).expect("registry models enumerate"))
    }

    /// State whose value is reported as `V_0`.
    pub fn initial_state(&self) -> usize {
        match self {
            Model::Toy(_) => 0,
            Model::Energy(m) => m.initial_state(),
        }
    }

    fn default_spec(&self) -> QbrmSpec {
        match self {
            Model::Toy(_) => QbrmSpec::mean_cvar(0.5, 0.9).expect("valid"),
            Model::Energy(m) => m.config().qbrm_spec().expect("validated config"),
        }
    }

    /// `(γ numerator, γ cap)`: the quantile steps carry cost units.
    fn default_gamma(&self) -> (f64, f64) {
        match self {
            Model::Toy(_) => (10.0, 0.1),
            Model::Energy(_) => (100.0, 10.0),
        }
    }

    fn default_basis(&self) -> anyhow::Result<BasisSet> {
        Ok(match self {
            Model::Toy(m) => {
                let mut components = vec![BasisComponent::StageNoise];
                for mean in [0.15, 0.5, 0.85] {
                    components.push(BasisComponent::Gaussian {
                        mean: vec![mean],
                        sd: vec![0.15],
                    });
                }
                BasisSet::new(components, SupportBox::from_model_quantiles(m)?)?
            }
            Model::Energy(m) => default_basis(m)?,
        })
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum NoiseChoice {
    Uniform,
    Degenerate(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyOverrides {
    #[serde(default)]
    noise: Option<NoiseChoice>,
    #[serde(default)]
    cost_scale: Option<f64>,
    #[serde(default)]
    sense: Option<Sense>,
}

impl ToyOverrides {
    fn build(self) -> ToyChain {
        let noise = match self.noise {
            None | Some(NoiseChoice::Uniform) => ToyNoise::Uniform,
            Some(NoiseChoice::Degenerate(v)) => ToyNoise::Degenerate(v),
        };
        ToyChain::new(noise, self.cost_scale.unwrap_or(1.0), self.sense.unwrap_or_default())
    }
}

/// A validated experiment: the model plus everything the solver needs.
pub struct Prepared {
    pub model: Model,
    pub spec: QbrmSpec,
    pub settings: AdpSettings,
    /// Present whenever a basis could be configured, even with RDS disabled,
    /// so that `compare-rds` can run both variants.
    pub rds: Option<RdsConfig>,
}

impl Prepared {
    /// `spec` with its mean-CVaR weight replaced by `lambda`.
    pub fn spec_for_lambda(&self, lambda: f64) -> anyhow::Result<QbrmSpec> {
        match self.spec.combiner() {
            Combiner::MeanCvar { .. } => QbrmSpec::new(self.spec.levels().clone(), Combiner::MeanCvar { lambda })
                .map_err(|e| config_err(format!("lambdas: {e}"))),
            _ => Err(config_err("lambdas: sweeping requires a mean-cvar risk measure")),
        }
    }

    /// `λ` values swept by `benchmark` and `compare-rds`.
    pub fn lambdas(&self, cfg: &ExperimentConfig) -> anyhow::Result<Vec<f64>> {
        if !cfg.lambdas.is_empty() {
            return Ok(cfg.lambdas.clone());
        }
        match self.spec.combiner() {
            Combiner::MeanCvar { lambda } => Ok(vec![*lambda]),
            _ => Err(config_err("lambdas: required unless the risk measure is mean-cvar")),
        }
    }
}

fn field(name: &str) -> impl Fn(dqbrm_core::Error) -> anyhow::Error + '_ {
    move |e| config_err(format!("{name}: {e}"))
}

/// Builds the model, fills every unset field of `cfg` with registry defaults
/// and validates the result.
pub fn prepare(cfg: &mut ExperimentConfig) -> anyhow::Result<Prepared> {
    cfg.validate_shape()?;
    let model = Model::build(&cfg.model.name, &cfg.model.overrides)?;
    let horizon = model.horizon();
    let space = model.space();
    let d = space.len();

    let spec = cfg.risk.get_or_insert_with(|| model.default_spec()).clone();

    let (g, g_cap) = model.default_gamma();
    let gamma = cfg
        .solver
        .gamma
        .get_or_insert_with(|| StepRule::harmonic(horizon, g).with_cap(g_cap))
        .clone();
    gamma.validate(horizon, "solver.gamma").map_err(field("solver.gamma"))?;
    let eta = cfg
        .solver
        .eta
        .get_or_insert_with(|| StepRule::harmonic(horizon, 20.0).with_cap(1.0))
        .clone();
    eta.validate(horizon, "solver.eta").map_err(field("solver.eta"))?;
    let epsilon = *cfg.solver.epsilon.get_or_insert(0.5 / d as f64);
    let sampling = SamplingPolicyConfig { epsilon };
    sampling.validate(d).map_err(field("solver.epsilon"))?;
    let boxes = match &cfg.solver.box_bounds {
        Some(b) => {
            if b.len() != horizon {
                return Err(config_err(format!("solver.box_bounds: need {horizon} entries")));
            }
            ProjectionBoxes::symmetric(b, d).map_err(field("solver.box_bounds"))?
        }
        None => with_model!(&model, m => ProjectionBoxes::for_model(m, d, &spec)).map_err(field("solver.box_bounds"))?,
    };
    let settings = AdpSettings {
        schedule: StepsizeSchedule { gamma, eta },
        sampling,
        boxes,
    };

    let rds = prepare_rds(cfg, &model)?;
    if cfg.rds.enabled && rds.is_none() {
        return Err(config_err("rds.basis: no basis available for this model"));
    }

    for &[t, s, a] in &cfg.trace.watch {
        if t >= horizon || space.index(s, a).is_none() {
            return Err(config_err(format!("trace.watch: [{t}, {s}, {a}] is not a state-action pair")));
        }
    }
    if let Some(dc) = &cfg.density {
        if dc.t >= horizon || space.index(dc.state, dc.action).is_none() {
            return Err(config_err("density: (t, state, action) is not a state-action pair"));
        }
    }

    Ok(Prepared {
        model,
        spec,
        settings,
        rds,
    })
}

fn prepare_rds(cfg: &mut ExperimentConfig, model: &Model) -> anyhow::Result<Option<RdsConfig>> {
    let horizon = model.horizon();
    let section = &mut cfg.rds;
    if section.basis.is_none() {
        match model.default_basis() {
            Ok(b) => section.basis = Some(b),
            Err(_) if !section.enabled => return Ok(None),
            Err(e) => return Err(config_err(format!("rds.basis: {e}"))),
        }
    }
    let given = section.basis.clone().expect("set above");
    // Rebuild to run the constructor checks on deserialized input.
    let basis = BasisSet::new(given.components().to_vec(), given.support().clone()).map_err(field("rds.basis"))?;
    let beta = section
        .beta
        .get_or_insert_with(|| StepRule::harmonic(horizon, 10.0))
        .clone();
    beta.validate(horizon, "rds.beta").map_err(field("rds.beta"))?;
    if section.initial_theta.is_none() {
        // Start from plain sampling when the first component is the true law.
        let mut theta = vec![0.0; basis.k()];
        if matches!(basis.components()[0], BasisComponent::StageNoise) {
            theta[0] = 1.0;
        }
        section.initial_theta = Some(theta);
    }
    let theta = section.initial_theta.clone().expect("set above");
    if theta.len() != basis.k() || theta.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(config_err(format!(
            "rds.initial_theta: need {} finite nonnegative entries",
            basis.k()
        )));
    }
    if !(section.l_max > 0.0) {
        return Err(config_err("rds.l_max: must be positive"));
    }
    if section.gram_points == 0 {
        return Err(config_err("rds.gram_points: must be positive"));
    }
    Ok(Some(RdsConfig {
        basis,
        beta,
        beta_relative: section.beta_relative,
        l_max: section.l_max,
        initial_theta: Some(theta),
        gram_points: section.gram_points,
    }))
}
