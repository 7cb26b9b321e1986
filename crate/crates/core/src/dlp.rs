//! The discrete Langevin proposal.
//!
//! For a coordinate `i` currently at `x_i` and a candidate value `y`, the
//! unnormalized log-probability is
//!
//! ```text
//! 0.5 * grad_i * (y - x_i) - (y - x_i)^2 / (2 * alpha * m_i)
//! ```
//!
//! where `m_i` is the preconditioner multiplier (1 without one). One-hot
//! coordinates use the vector form: the linear term is half the difference
//! of the gradient entries of the candidate and current categories, and the
//! squared distance is 2 for every move. Each coordinate is normalized
//! independently, so the joint proposal is a product of small categoricals.

use std::sync::OnceLock;

use rand::Rng;

use crate::domain::{Domain, DomainKind, State};
use crate::energy::{EnergyModel, MinibatchSpec};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_in_place, sigmoid, FLUSH_THRESHOLD};
use crate::rng::ChainRng;

/// Per-coordinate scale applied to the stepsize in the locality penalty.
#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner {
    /// Penalty uses `alpha * g_i^2`, the form obtained by rescaling each
    /// coordinate by `g_i`.
    Coordinate(Vec<f64>),
    /// Penalty uses `alpha * g_i`: each coordinate gets its own stepsize.
    Stepsize(Vec<f64>),
}

impl Preconditioner {
    pub fn values(&self) -> &[f64] {
        match self {
            Preconditioner::Coordinate(g) | Preconditioner::Stepsize(g) => g,
        }
    }

    /// Multiplier on `alpha` for coordinate `i`.
    pub fn multiplier(&self, i: usize) -> f64 {
        match self {
            Preconditioner::Coordinate(g) => g[i] * g[i],
            Preconditioner::Stepsize(g) => g[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSource {
    FullBatch,
    Stochastic(MinibatchSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DlpConfig {
    pub alpha: f64,
    pub preconditioner: Option<Preconditioner>,
    pub gradient: GradientSource,
    /// Include the `-(y - x)^2 / (2 alpha)` locality term. Turning it off
    /// leaves only the gradient term.
    pub stepsize_term: bool,
}

impl DlpConfig {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            preconditioner: None,
            gradient: GradientSource::FullBatch,
            stepsize_term: true,
        }
    }

    pub fn with_preconditioner(mut self, p: Preconditioner) -> Self {
        self.preconditioner = Some(p);
        self
    }

    pub fn with_stochastic(mut self, batch: MinibatchSpec) -> Self {
        self.gradient = GradientSource::Stochastic(batch);
        self
    }

    pub fn without_stepsize_term(mut self) -> Self {
        self.stepsize_term = false;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "stepsize must be positive, got {}",
                self.alpha
            )));
        }
        if let Some(p) = &self.preconditioner {
            let g = p.values();
            if g.len() != dim {
                return Err(Error::InvalidConfig(format!(
                    "preconditioner has {} entries for {dim} coordinates",
                    g.len()
                )));
            }
            if let Some(v) = g.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!(
                    "preconditioner entries must be positive and finite, got {v}"
                )));
            }
        }
        if let GradientSource::Stochastic(b) = self.gradient {
            if b.batch_size == 0 {
                return Err(Error::InvalidConfig("batch size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A factorized proposal built at one state.
///
/// The tables are `dim x levels`; entry `(i, k)` is the probability of
/// moving coordinate `i` to level `k`. On two-level domains the log table is
/// filled on first use from the stored flip logits.
#[derive(Debug, Clone)]
pub struct Proposal {
    levels: usize,
    probs: Vec<f64>,
    log_probs: OnceLock<Vec<f64>>,
    flip_logits: Option<Vec<f64>>,
    current: State,
    grad: Vec<f64>,
}

impl PartialEq for Proposal {
    fn eq(&self, other: &Self) -> bool {
        self.levels == other.levels
            && self.current == other.current
            && self.grad == other.grad
            && self.probs == other.probs
            && self.log_table() == other.log_table()
    }
}

impl Proposal {
    pub fn dim(&self) -> usize {
        self.current.len()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn current(&self) -> &State {
        &self.current
    }

    /// Gradient the proposal was built from.
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    fn log_table(&self) -> &[f64] {
        self.log_probs.get_or_init(|| {
            let z = self.flip_logits.as_ref().expect("two-level proposal keeps its logits");
            let mut out = vec![0.0; self.probs.len()];
            for (i, (&z, &cur)) in z.iter().zip(self.current.levels()).enumerate() {
                let log1p = (-z.abs()).exp().ln_1p();
                let (lp_flip, lp_stay) = if z > 0.0 { (-log1p, -z - log1p) } else { (z - log1p, -log1p) };
                let c = cur as usize;
                out[2 * i + c] = if self.probs[2 * i + c] == 0.0 { f64::NEG_INFINITY } else { lp_stay };
                out[2 * i + 1 - c] = if self.probs[2 * i + 1 - c] == 0.0 { f64::NEG_INFINITY } else { lp_flip };
            }
            out
        })
    }

    pub fn log_probs(&self, i: usize) -> &[f64] {
        &self.log_table()[i * self.levels..(i + 1) * self.levels]
    }

    pub fn probs(&self, i: usize) -> &[f64] {
        &self.probs[i * self.levels..(i + 1) * self.levels]
    }

    /// Probability that coordinate `i` keeps its current level.
    pub fn stay_prob(&self, i: usize) -> f64 {
        self.probs(i)[self.current.levels()[i] as usize]
    }
}

/// Evaluate the full-batch or stochastic gradient as the config asks.
pub(crate) fn proposal_grad<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    cfg: &DlpConfig,
    rng: &mut ChainRng,
) -> Result<Vec<f64>> {
    let g = match cfg.gradient {
        GradientSource::FullBatch => model.grad(state),
        GradientSource::Stochastic(batch) => model.stoch_grad(state, &batch, rng)?,
    };
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(g)
}

/// Energy plus proposal gradient; the full-batch case shares work between
/// the two.
pub(crate) fn energy_and_proposal_grad<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    cfg: &DlpConfig,
    rng: &mut ChainRng,
) -> Result<(f64, Vec<f64>)> {
    match cfg.gradient {
        GradientSource::FullBatch => {
            let (u, g) = model.energy_grad(state);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("gradient"));
            }
            Ok((u, g))
        }
        GradientSource::Stochastic(_) => {
            let u = model.energy(state);
            Ok((u, proposal_grad(model, state, cfg, rng)?))
        }
    }
}

pub fn build_proposal<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    cfg: &DlpConfig,
    rng: &mut ChainRng,
) -> Result<Proposal> {
    let domain = model.domain();
    domain.check(state)?;
    cfg.validate(domain.dim())?;
    let grad = proposal_grad(model, state, cfg, rng)?;
    proposal_from_grad(domain, state, grad, cfg)
}

/// Build the proposal from an already evaluated gradient.
pub fn proposal_from_grad(
    domain: &Domain,
    state: &State,
    grad: Vec<f64>,
    cfg: &DlpConfig,
) -> Result<Proposal> {
    let s = domain.levels();
    let (log_probs, probs, flip_logits) = if domain.is_two_level() {
        let (probs, z) = two_level_tables(domain, state, &grad, cfg)?;
        (OnceLock::new(), probs, Some(z))
    } else {
        let log_probs = categorical_log_probs(domain, state, &grad, cfg)?;
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        (OnceLock::from(log_probs), probs, None)
    };
    Ok(Proposal {
        levels: s,
        log_probs,
        probs,
        flip_logits,
        current: state.clone(),
        grad,
    })
}

/// Normalized `dim x levels` log-probability tables through the general
/// categorical form, for any domain.
pub fn categorical_log_probs(
    domain: &Domain,
    state: &State,
    grad: &[f64],
    cfg: &DlpConfig,
) -> Result<Vec<f64>> {
    let mut log_probs = proposal_logits(domain, state, grad, cfg)?;
    for row in log_probs.chunks_mut(domain.levels()) {
        log_softmax_in_place(row);
    }
    Ok(log_probs)
}

/// Probability rows and flip logits `z`, with `q(flip) = sigmoid(z)`.
fn two_level_tables(
    domain: &Domain,
    state: &State,
    grad: &[f64],
    cfg: &DlpConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if grad.len() != domain.dim() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, expected {}",
            grad.len(),
            domain.dim()
        )));
    }
    let flush = |p: f64| if p < FLUSH_THRESHOLD { 0.0 } else { p };
    let mut logits = Vec::with_capacity(grad.len());
    let mut probs = vec![0.0; 2 * grad.len()];
    let step = domain.level_value(1) - domain.level_value(0);
    for (i, (&g, &cur)) in grad.iter().zip(state.levels()).enumerate() {
        let penalty = if cfg.stepsize_term {
            let m = cfg.preconditioner.as_ref().map_or(1.0, |p| p.multiplier(i));
            step * step / (2.0 * cfg.alpha * m)
        } else {
            0.0
        };
        let direction = if cur == 0 { step } else { -step };
        let z = 0.5 * g * direction - penalty;
        if z.is_nan() || z == f64::INFINITY {
            return Err(Error::NonFinite("proposal logits"));
        }
        let e = (-z.abs()).exp();
        let big = 1.0 / (1.0 + e);
        let small = flush(e * big);
        let (p_flip, p_stay) = if z > 0.0 { (big, small) } else { (small, big) };
        let c = cur as usize;
        probs[2 * i + c] = p_stay;
        probs[2 * i + 1 - c] = p_flip;
        logits.push(z);
    }
    Ok((probs, logits))
}

/// Unnormalized `dim x levels` logits of the proposal.
pub fn proposal_logits(
    domain: &Domain,
    state: &State,
    grad: &[f64],
    cfg: &DlpConfig,
) -> Result<Vec<f64>> {
    if grad.len() != domain.embed_dim() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, expected {}",
            grad.len(),
            domain.embed_dim()
        )));
    }
    let s = domain.levels();
    let mut logits = vec![0.0; domain.dim() * s];
    for (i, &cur) in state.levels().iter().enumerate() {
        let denom = match &cfg.preconditioner {
            Some(p) => 2.0 * cfg.alpha * p.multiplier(i),
            None => 2.0 * cfg.alpha,
        };
        let row = &mut logits[i * s..(i + 1) * s];
        for (k, slot) in row.iter_mut().enumerate() {
            let k32 = k as u32;
            let linear = match domain.kind() {
                DomainKind::OneHot(_) => 0.5 * (grad[i * s + k] - grad[i * s + cur as usize]),
                _ => 0.5 * grad[i] * (domain.level_value(k32) - domain.level_value(cur)),
            };
            let penalty = if cfg.stepsize_term && k32 != cur {
                domain.level_sq_dist(cur, k32) / denom
            } else {
                0.0
            };
            *slot = linear - penalty;
        }
        if row.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::NonFinite("proposal logits"));
        }
    }
    Ok(logits)
}

/// Draw each coordinate independently by inverse CDF over its table.
pub fn sample_proposal(p: &Proposal, rng: &mut ChainRng) -> State {
    let levels = p
        .probs
        .chunks(p.levels)
        .map(|row| {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut last = 0;
            for (k, &q) in row.iter().enumerate() {
                if q == 0.0 {
                    continue;
                }
                cum += q;
                last = k;
                if u < cum {
                    return k as u32;
                }
            }
            last as u32
        })
        .collect();
    State::new(levels)
}

/// Inverse-CDF draw from a table of log-probabilities.
pub(crate) fn sample_index(log_probs: &[f64], rng: &mut ChainRng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (k, lp) in log_probs.iter().enumerate() {
        if *lp == f64::NEG_INFINITY {
            continue;
        }
        cum += lp.exp();
        last = k;
        if u < cum {
            return k;
        }
    }
    last
}

/// `sum_i log q_i(target_i)`; `-inf` if any coordinate has zero probability.
pub fn proposal_logprob(p: &Proposal, target: &State) -> f64 {
    if p.flip_logits.is_none() {
        return target
            .levels()
            .iter()
            .enumerate()
            .map(|(i, &l)| p.log_probs(i)[l as usize])
            .sum();
    }
    // Running product, rescaled before it can underflow.
    const RESCALE: f64 = 1e200;
    let mut product = 1.0;
    let mut shifts = 0i32;
    for (row, &l) in p.probs.chunks(2).zip(target.levels()) {
        let q = row[l as usize];
        if q == 0.0 {
            return f64::NEG_INFINITY;
        }
        product *= q;
        if product < 1.0 / RESCALE {
            product *= RESCALE;
            shifts += 1;
        }
    }
    product.ln() - f64::from(shifts) * RESCALE.ln()
}

/// Closed-form flip probabilities on two-level domains.
///
/// Binary: `sigmoid(-0.5 * g_i * (2 x_i - 1) - 1 / (2 alpha))`.
/// Spin: a flip moves by `-2 x_i` with squared length 4, giving
/// `sigmoid(-g_i * x_i - 2 / alpha)`.
pub fn binary_flip_probs<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    alpha: f64,
) -> Result<Vec<f64>> {
    let grad = model.grad(state);
    flip_probs_from_grad(model.domain(), state, &grad, alpha)
}

pub fn flip_probs_from_grad(
    domain: &Domain,
    state: &State,
    grad: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    domain.check(state)?;
    let x = domain.embed(state);
    match domain.kind() {
        DomainKind::Binary01 => Ok(x
            .iter()
            .zip(grad)
            .map(|(xi, g)| sigmoid(-0.5 * g * (2.0 * xi - 1.0) - 1.0 / (2.0 * alpha)))
            .collect()),
        DomainKind::SpinPm1 => Ok(x
            .iter()
            .zip(grad)
            .map(|(xi, g)| sigmoid(-g * xi - 2.0 / alpha))
            .collect()),
        kind => Err(Error::Unsupported(format!(
            "closed-form flip probabilities need a two-level domain, got {kind:?}"
        ))),
    }
}

/// Output of [`stochastic_proposal_bias_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct BiasProbe {
    /// `|| mean_draws q_hat_i - q_i ||_1` per coordinate.
    pub distance: Vec<f64>,
    /// `2 sigma_i exp(-1/(2 alpha) + L_i)` per coordinate.
    pub bound: Vec<f64>,
    /// Root mean squared gradient error per coordinate.
    pub sigma: Vec<f64>,
    /// Largest absolute full or stochastic gradient entry seen per coordinate.
    pub lipschitz: Vec<f64>,
}

impl BiasProbe {
    pub fn within_bound(&self) -> bool {
        self.distance.iter().zip(&self.bound).all(|(d, b)| d <= b)
    }
}

/// Compare the average proposal built from `n_draws` stochastic gradients
/// with the full-batch proposal at one state of a binary model.
pub fn stochastic_proposal_bias_probe<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    alpha: f64,
    n_draws: usize,
    batch: MinibatchSpec,
    rng: &mut ChainRng,
) -> Result<BiasProbe> {
    let domain = model.domain();
    if domain.kind() != DomainKind::Binary01 {
        return Err(Error::Unsupported("the bias probe needs a binary domain".into()));
    }
    if !model.supports_stochastic_grad() {
        return Err(Error::Unsupported("model has no stochastic gradient".into()));
    }
    if n_draws == 0 {
        return Err(Error::Empty("stochastic draws"));
    }
    let cfg = DlpConfig::new(alpha);
    cfg.validate(domain.dim())?;
    let d = domain.dim();
    let full_grad = model.grad(state);
    let full = proposal_from_grad(domain, state, full_grad.clone(), &cfg)?;
    let mut diff = vec![0.0; d * 2];
    let mut sq_err = vec![0.0; d];
    let mut lipschitz: Vec<f64> = full_grad.iter().map(|g| g.abs()).collect();
    let stoch_cfg = cfg.clone().with_stochastic(batch);
    for _ in 0..n_draws {
        let g = proposal_grad(model, state, &stoch_cfg, rng)?;
        for i in 0..d {
            let e = g[i] - full_grad[i];
            sq_err[i] += e * e;
            lipschitz[i] = lipschitz[i].max(g[i].abs());
        }
        let q = proposal_from_grad(domain, state, g, &cfg)?;
        for ((acc, p), p_full) in diff.iter_mut().zip(&q.probs).zip(&full.probs) {
            *acc += p - p_full;
        }
    }
    let n = n_draws as f64;
    let mut distance = Vec::with_capacity(d);
    let mut sigma = Vec::with_capacity(d);
    let mut bound = Vec::with_capacity(d);
    for i in 0..d {
        let dist: f64 = (0..2)
            .map(|k| (diff[i * 2 + k] / n).abs())
            .sum();
        let s = (sq_err[i] / n).sqrt();
        distance.push(dist);
        sigma.push(s);
        bound.push(2.0 * s * (-1.0 / (2.0 * alpha) + lipschitz[i]).exp());
    }
    Ok(BiasProbe {
        distance,
        bound,
        sigma,
        lipschitz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::enumerate_states;
    use crate::models::{AdditiveNoiseModel, LogQuadraticModel, MinibatchQuadraticModel};
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn zero_model(domain: Domain) -> LogQuadraticModel {
        let n = domain.embed_dim();
        LogQuadraticModel::new(domain, vec![0.0; n * n], vec![0.0; n]).unwrap()
    }

    fn random_quadratic(domain: Domain, seed: u64) -> LogQuadraticModel {
        let mut rng = seeded(seed);
        let n = domain.embed_dim();
        let w = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        LogQuadraticModel::new(domain, w, b).unwrap()
    }

    #[test]
    fn zero_gradient_flip_probability() {
        let m = zero_model(Domain::binary(3).unwrap());
        let p = build_proposal(&m, &State::zeros(3), &DlpConfig::new(0.5), &mut seeded(0)).unwrap();
        let e = (-1f64).exp();
        for i in 0..3 {
            assert!((p.probs(i)[1] - e / (e + 1.0)).abs() < 1e-15);
            assert!((p.probs(i)[1] - 0.26894).abs() < 1e-5);
        }
    }

    #[test]
    fn tiny_stepsize_freezes() {
        let m = random_quadratic(Domain::spin(4).unwrap(), 3);
        let s = State::new(vec![1, 0, 1, 1]);
        let p = build_proposal(&m, &s, &DlpConfig::new(1e-6), &mut seeded(0)).unwrap();
        for i in 0..4 {
            assert_eq!(p.stay_prob(i), 1.0);
        }
        assert_eq!(sample_proposal(&p, &mut seeded(1)), s);
        assert_eq!(proposal_logprob(&p, &s), 0.0);
    }

    #[test]
    fn stay_logprob_zero_gradient() {
        let d = 5;
        let m = zero_model(Domain::binary(d).unwrap());
        let s = State::new(vec![0, 1, 0, 1, 1]);
        let p = build_proposal(&m, &s, &DlpConfig::new(0.5), &mut seeded(0)).unwrap();
        let expected = d as f64 * (1.0 / (1.0 + (-1f64).exp())).ln();
        assert!((proposal_logprob(&p, &s) - expected).abs() < 1e-12);
    }

    #[test]
    fn proposal_normalizes_over_all_states() {
        let m = random_quadratic(Domain::binary(10).unwrap(), 5);
        let s = State::new(vec![1, 0, 0, 1, 1, 0, 1, 0, 1, 1]);
        let p = build_proposal(&m, &s, &DlpConfig::new(0.7), &mut seeded(0)).unwrap();
        let total: f64 = enumerate_states(m.domain())
            .unwrap()
            .map(|t| proposal_logprob(&p, &t).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn logprob_matches_product_of_tables() {
        let m = random_quadratic(Domain::new(DomainKind::Categorical(3), 3).unwrap(), 7);
        let s = State::new(vec![2, 0, 1]);
        let p = build_proposal(&m, &s, &DlpConfig::new(0.4), &mut seeded(0)).unwrap();
        for t in enumerate_states(m.domain()).unwrap() {
            let prod: f64 = (0..3).map(|i| p.probs(i)[t.levels()[i] as usize]).product();
            assert!((proposal_logprob(&p, &t).exp() - prod).abs() < 1e-14);
        }
    }

    #[test]
    fn flushed_entries_give_neg_infinity() {
        let domain = Domain::binary(1).unwrap();
        let m = LogQuadraticModel::new(domain, vec![0.0], vec![-2000.0]).unwrap();
        let p = build_proposal(&m, &State::zeros(1), &DlpConfig::new(1.0), &mut seeded(0)).unwrap();
        assert_eq!(proposal_logprob(&p, &State::new(vec![1])), f64::NEG_INFINITY);
        assert_eq!(p.probs(0), &[1.0, 0.0]);
    }

    #[test]
    fn sampling_frequencies_match_table() {
        let table = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        let mut rng = seeded(123);
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_index(&table, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 3.0 * sd, "{c} vs {p}");
        }
    }

    #[test]
    fn certain_flip_is_taken() {
        let domain = Domain::binary(1).unwrap();
        let m = LogQuadraticModel::new(domain, vec![0.0], vec![2000.0]).unwrap();
        let p = build_proposal(&m, &State::zeros(1), &DlpConfig::new(1.0), &mut seeded(0)).unwrap();
        assert_eq!(sample_proposal(&p, &mut seeded(9)), State::new(vec![1]));
    }

    #[test]
    fn unit_preconditioner_is_bitwise_identity() {
        let m = random_quadratic(Domain::spin(6).unwrap(), 11);
        let s = State::new(vec![0, 1, 1, 0, 0, 1]);
        let plain = build_proposal(&m, &s, &DlpConfig::new(0.3), &mut seeded(0)).unwrap();
        for pre in [
            Preconditioner::Coordinate(vec![1.0; 6]),
            Preconditioner::Stepsize(vec![1.0; 6]),
        ] {
            let cfg = DlpConfig::new(0.3).with_preconditioner(pre);
            let q = build_proposal(&m, &s, &cfg, &mut seeded(0)).unwrap();
            assert_eq!(plain.log_table(), q.log_table());
        }
    }

    #[test]
    fn preconditioner_conventions() {
        let m = zero_model(Domain::binary(1).unwrap());
        let s = State::zeros(1);
        let sq = DlpConfig::new(0.5).with_preconditioner(Preconditioner::Coordinate(vec![2.0]));
        let lin = DlpConfig::new(2.0).with_preconditioner(Preconditioner::Stepsize(vec![1.0]));
        let a = build_proposal(&m, &s, &sq, &mut seeded(0)).unwrap();
        let b = build_proposal(&m, &s, &lin, &mut seeded(0)).unwrap();
        assert!((a.probs(0)[1] - b.probs(0)[1]).abs() < 1e-15);
    }

    #[test]
    fn one_hot_logit_differences() {
        let domain = Domain::new(DomainKind::OneHot(4), 2).unwrap();
        let m = random_quadratic(domain, 13);
        let s = State::new(vec![1, 3]);
        let p = build_proposal(&m, &s, &DlpConfig::new(0.8), &mut seeded(0)).unwrap();
        let g = m.grad(&s);
        for i in 0..2 {
            let lp = p.log_probs(i);
            let cur = s.levels()[i] as usize;
            for k in 0..4 {
                for l in 0..4 {
                    if k == cur || l == cur {
                        continue;
                    }
                    let expected = 0.5 * (g[i * 4 + k] - g[i * 4 + l]);
                    assert!((lp[k] - lp[l] - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stepsize_term_off_leaves_gradient_only() {
        let m = zero_model(Domain::binary(2).unwrap());
        let cfg = DlpConfig::new(0.01).without_stepsize_term();
        let p = build_proposal(&m, &State::zeros(2), &cfg, &mut seeded(0)).unwrap();
        assert_eq!(p.probs(0), &[0.5, 0.5]);
    }

    #[test]
    fn invalid_configs() {
        let m = zero_model(Domain::binary(2).unwrap());
        let s = State::zeros(2);
        for cfg in [
            DlpConfig::new(-0.1),
            DlpConfig::new(0.0),
            DlpConfig::new(f64::NAN),
            DlpConfig::new(1.0).with_preconditioner(Preconditioner::Stepsize(vec![1.0])),
            DlpConfig::new(1.0).with_preconditioner(Preconditioner::Coordinate(vec![1.0, -1.0])),
        ] {
            assert!(matches!(
                build_proposal(&m, &s, &cfg, &mut seeded(0)),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let m = crate::models::Perturbed1DModel::new(f64::INFINITY, 0.0, 0.0);
        let r = build_proposal(&m, &State::new(vec![1]), &DlpConfig::new(1.0), &mut seeded(0));
        assert!(r.is_err());
    }

    #[test]
    fn large_stepsize_balanced_gradient_gives_half() {
        let m = zero_model(Domain::binary(3).unwrap());
        let p = binary_flip_probs(&m, &State::new(vec![0, 1, 0]), 1e12).unwrap();
        for v in p {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_probe_is_exactly_zero() {
        let domain = Domain::binary(4).unwrap();
        let base = random_quadratic(domain.clone(), 17);
        let noisy = AdditiveNoiseModel::new(base, 0.0).unwrap();
        let s = State::new(vec![1, 0, 1, 0]);
        let probe = stochastic_proposal_bias_probe(
            &noisy,
            &s,
            0.5,
            200,
            MinibatchSpec { batch_size: 1 },
            &mut seeded(1),
        )
        .unwrap();
        assert!(probe.distance.iter().all(|d| *d == 0.0));

        let terms: Vec<Vec<f64>> = (0..6).map(|k| vec![0.1 * k as f64; 4]).collect();
        let mb = MinibatchQuadraticModel::new(domain, vec![0.0; 16], terms).unwrap();
        let probe = stochastic_proposal_bias_probe(
            &mb,
            &s,
            0.5,
            50,
            MinibatchSpec { batch_size: 6 },
            &mut seeded(1),
        )
        .unwrap();
        assert!(probe.distance.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn probe_stays_within_bound() {
        let base = random_quadratic(Domain::binary(5).unwrap(), 19);
        let s = State::new(vec![0, 1, 1, 0, 1]);
        for sigma in [0.1, 0.5, 2.0] {
            let noisy = AdditiveNoiseModel::new(base.clone(), sigma).unwrap();
            for alpha in [1.0, 0.5, 0.1] {
                let probe = stochastic_proposal_bias_probe(
                    &noisy,
                    &s,
                    alpha,
                    500,
                    MinibatchSpec { batch_size: 1 },
                    &mut seeded(2),
                )
                .unwrap();
                assert!(probe.within_bound(), "{probe:?}");
            }
        }
    }

    fn two_level_case() -> impl Strategy<Value = (bool, Vec<f64>, Vec<bool>, f64)> {
        (1usize..8).prop_flat_map(|d| {
            (
                any::<bool>(),
                prop::collection::vec(-20.0f64..20.0, d),
                prop::collection::vec(any::<bool>(), d),
                0.01f64..10.0,
            )
        })
    }

    proptest! {
        #[test]
        fn closed_form_matches_tables((spin, grad, bits, alpha) in two_level_case()) {
            let d = grad.len();
            let domain = if spin { Domain::spin(d) } else { Domain::binary(d) }.unwrap();
            let s = State::new(bits.iter().map(|b| u32::from(*b)).collect());
            let cfg = DlpConfig::new(alpha);
            let general = categorical_log_probs(&domain, &s, &grad, &cfg).unwrap();
            let fast = proposal_from_grad(&domain, &s, grad.clone(), &cfg).unwrap();
            let closed = flip_probs_from_grad(&domain, &s, &grad, alpha).unwrap();
            for i in 0..d {
                let flip = 1 - s.levels()[i] as usize;
                prop_assert!((general[2 * i + flip].exp() - closed[i]).abs() <= 1e-12);
                prop_assert!((fast.probs(i)[flip] - closed[i]).abs() <= 1e-12);
                for k in 0..2 {
                    let (a, b) = (general[2 * i + k], fast.log_probs(i)[k]);
                    prop_assert!(a == b || (a - b).abs() <= 1e-12 * a.abs().max(1.0), "{} vs {}", a, b);
                    prop_assert!((fast.probs(i)[k] - b.exp()).abs() <= 1e-15);
                }
            }
        }

        #[test]
        fn product_logprob_matches_sum((spin, grad, bits, alpha) in two_level_case(), target_bits in prop::collection::vec(any::<bool>(), 8)) {
            let d = grad.len();
            let domain = if spin { Domain::spin(d) } else { Domain::binary(d) }.unwrap();
            let s = State::new(bits.iter().map(|b| u32::from(*b)).collect());
            let t = State::new(target_bits[..d].iter().map(|b| u32::from(*b)).collect());
            let p = proposal_from_grad(&domain, &s, grad, &DlpConfig::new(alpha)).unwrap();
            let sum: f64 = (0..d).map(|i| p.log_probs(i)[t.levels()[i] as usize]).sum();
            let prod = proposal_logprob(&p, &t);
            prop_assert!((sum - prod).abs() <= 1e-12 * sum.abs().max(1.0), "{} vs {}", sum, prod);
        }

        #[test]
        fn gradient_shift_moves_flip_log_odds((_spin, grad, bits, alpha) in two_level_case(), c in -3.0f64..3.0) {
            let d = grad.len();
            let domain = Domain::binary(d).unwrap();
            let s = State::new(bits.iter().map(|b| u32::from(*b)).collect());
            let cfg = DlpConfig::new(alpha);
            let p = proposal_from_grad(&domain, &s, grad.clone(), &cfg).unwrap();
            let shifted: Vec<f64> = grad.iter().map(|g| g + c).collect();
            let q = proposal_from_grad(&domain, &s, shifted, &cfg).unwrap();
            for i in 0..d {
                let cur = s.levels()[i] as usize;
                let odds = |t: &Proposal| t.log_probs(i)[1 - cur] - t.log_probs(i)[cur];
                let step = if cur == 0 { 1.0 } else { -1.0 };
                prop_assert!((odds(&q) - odds(&p) - 0.5 * c * step).abs() < 1e-9);
            }
        }

        #[test]
        fn tables_sum_to_one(grad in prop::collection::vec(-50.0f64..50.0, 9), alpha in 0.001f64..100.0) {
            let domain = Domain::new(DomainKind::OneHot(3), 3).unwrap();
            let s = State::new(vec![0, 2, 1]);
            let p = proposal_from_grad(&domain, &s, grad, &DlpConfig::new(alpha)).unwrap();
            for i in 0..3 {
                prop_assert!((p.probs(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }
}
