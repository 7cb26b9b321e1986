//! Turning config specs into models and sampler settings.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use discrete_langevin::dlp::{DlpConfig, Preconditioner};
use discrete_langevin::models::{
    synthetic_prototype_data, CdConfig, IsingLatticeModel, LatticeSpec, LogQuadraticModel,
    Perturbed1DModel, RbmModel, SpinEncoding,
};
use discrete_langevin::rng::{seeded, ChainRng};
use discrete_langevin::samplers::{CoordOrder, SamplerKind};
use discrete_langevin::{Domain, DomainKind, EnergyModel, Error, MinibatchSpec, Result, State};
use rand::Rng;

use crate::config::{DomainName, Encoding, ModelSpec, Order, PreconditionerKind, SamplerName, SamplerSpec};

/// A model built from a [`ModelSpec`].
#[derive(Debug, Clone)]
pub enum BuiltModel {
    Ising(IsingLatticeModel),
    LogQuadratic(LogQuadraticModel),
    Perturbed(Perturbed1DModel),
    Rbm(RbmModel),
}

impl BuiltModel {
    fn inner(&self) -> &dyn EnergyModel {
        match self {
            BuiltModel::Ising(m) => m,
            BuiltModel::LogQuadratic(m) => m,
            BuiltModel::Perturbed(m) => m,
            BuiltModel::Rbm(m) => m,
        }
    }

    pub fn as_log_quadratic(&self) -> Option<&LogQuadraticModel> {
        match self {
            BuiltModel::Ising(m) => Some(m.as_log_quadratic()),
            BuiltModel::LogQuadratic(m) => Some(m),
            _ => None,
        }
    }
}

impl EnergyModel for BuiltModel {
    fn domain(&self) -> &Domain {
        self.inner().domain()
    }

    fn energy_at(&self, x: &[f64]) -> f64 {
        self.inner().energy_at(x)
    }

    fn grad_at(&self, x: &[f64], out: &mut [f64]) {
        self.inner().grad_at(x, out)
    }

    fn energy_grad_at(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.inner().energy_grad_at(x, out)
    }

    fn energy(&self, state: &State) -> f64 {
        self.inner().energy(state)
    }

    fn supports_stochastic_grad(&self) -> bool {
        self.inner().supports_stochastic_grad()
    }

    fn stoch_grad_at(&self, x: &[f64], batch: &MinibatchSpec, rng: &mut ChainRng, out: &mut [f64]) -> Result<()> {
        self.inner().stoch_grad_at(x, batch, rng, out)
    }

    fn as_rbm(&self) -> Option<&RbmModel> {
        self.inner().as_rbm()
    }
}

/// Build the model. Relative weight files resolve against `base_dir`.
pub fn build_model(spec: &ModelSpec, base_dir: Option<&Path>) -> Result<BuiltModel> {
    match spec {
        ModelSpec::Ising {
            rows,
            cols,
            a,
            b,
            periodic,
            encoding,
        } => {
            let enc = match encoding {
                Encoding::Spin => SpinEncoding::Spin,
                Encoding::Binary => SpinEncoding::Binary,
            };
            let lattice = LatticeSpec::open(*rows, *cols, *a, *b).periodic(*periodic).encoding(enc);
            Ok(BuiltModel::Ising(IsingLatticeModel::new(lattice)?))
        }
        ModelSpec::Perturbed1d { a, b, epsilon } => Ok(BuiltModel::Perturbed(Perturbed1DModel::new(*a, *b, *epsilon))),
        ModelSpec::LogQuadratic { domain, levels, w, b } => {
            let n = w.len();
            let domain = match (domain, levels) {
                (DomainName::Binary, _) => Domain::binary(n)?,
                (DomainName::Spin, _) => Domain::spin(n)?,
                (DomainName::Categorical, Some(s)) => Domain::new(DomainKind::Categorical(*s), n)?,
                (DomainName::OneHot, Some(s)) if *s > 0 && n % s == 0 => {
                    Domain::new(DomainKind::OneHot(*s), n / s)?
                }
                _ => return Err(Error::InvalidConfig("categorical domains need a valid level count".into())),
            };
            let b = b.clone().unwrap_or_else(|| vec![0.0; n]);
            Ok(BuiltModel::LogQuadratic(LogQuadraticModel::from_rows(domain, w, b)?))
        }
        ModelSpec::Rbm {
            visible,
            hidden,
            weight_scale,
            model_seed,
            weights_file,
            train,
        } => {
            let mut rng = seeded(*model_seed);
            let model = if let Some(path) = weights_file {
                let full = match base_dir {
                    Some(dir) if Path::new(path).is_relative() => dir.join(path),
                    _ => Path::new(path).to_path_buf(),
                };
                let m = RbmModel::read_text(BufReader::new(File::open(&full)?))?;
                if m.visible() != *visible || m.hidden() != *hidden {
                    return Err(Error::Shape(format!(
                        "{} holds a {}x{} RBM, config says {visible}x{hidden}",
                        full.display(),
                        m.visible(),
                        m.hidden()
                    )));
                }
                m
            } else if let Some(t) = train {
                let data = synthetic_prototype_data(
                    *visible,
                    t.prototypes,
                    t.density,
                    (t.noise_min, t.noise_max),
                    t.samples,
                    &mut rng,
                )?;
                let cd = CdConfig {
                    epochs: t.epochs,
                    learning_rate: t.learning_rate,
                    batch_size: t.batch_size,
                    gibbs_steps: t.gibbs_steps,
                    ..CdConfig::default()
                };
                RbmModel::train_cd(&data, *hidden, &cd, &mut rng)?
            } else {
                RbmModel::random(*visible, *hidden, *weight_scale, &mut rng)?
            };
            Ok(BuiltModel::Rbm(model))
        }
    }
}

/// One concrete sampler setting out of a [`SamplerSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerRun {
    pub label: String,
    pub alpha: Option<f64>,
    pub kind: SamplerKind,
}

/// Expand a sampler entry over its stepsizes.
pub fn sampler_runs(spec: &SamplerSpec) -> Vec<SamplerRun> {
    let label = spec.display_label();
    spec.alpha_values()
        .into_iter()
        .map(|alpha| {
            let dlp = || {
                let mut cfg = DlpConfig::new(alpha.unwrap_or(f64::NAN));
                if let Some(p) = &spec.preconditioner {
                    cfg = cfg.with_preconditioner(match p.kind {
                        PreconditionerKind::Coordinate => Preconditioner::Coordinate(p.values.clone()),
                        PreconditionerKind::Stepsize => Preconditioner::Stepsize(p.values.clone()),
                    });
                }
                if let Some(b) = spec.batch_size {
                    cfg = cfg.with_stochastic(MinibatchSpec { batch_size: b });
                }
                if !spec.stepsize_term {
                    cfg = cfg.without_stepsize_term();
                }
                cfg
            };
            let kind = match spec.kind {
                SamplerName::Dula => SamplerKind::Dula(dlp()),
                SamplerName::Dmala => SamplerKind::Dmala(dlp()),
                SamplerName::Gibbs1 => SamplerKind::Gibbs1(match spec.order {
                    Some(Order::Random) => CoordOrder::Random,
                    _ => CoordOrder::Systematic,
                }),
                SamplerName::Lb1 => SamplerKind::Lb1 {
                    alpha: alpha.unwrap_or(f64::INFINITY),
                },
                SamplerName::Gradflip1 => SamplerKind::GradFlip1,
                SamplerName::RbmBlockGibbs => SamplerKind::RbmBlockGibbs,
            };
            SamplerRun {
                label: label.clone(),
                alpha,
                kind,
            }
        })
        .collect()
}

/// Uniform random starting state.
pub fn random_state(domain: &Domain, rng: &mut ChainRng) -> State {
    let s = domain.levels() as u32;
    State::new((0..domain.dim()).map(|_| rng.random_range(0..s)).collect())
}

/// `alpha` as written in output rows: empty when unused.
pub fn alpha_field(alpha: Option<f64>) -> String {
    alpha.map(|a| a.to_string()).unwrap_or_default()
}
