//! Chain drivers sharing one step interface.
//!
//! [`ChainSampler`] owns the current state and caches whatever the next step
//! can reuse: the energy, the DLP proposal (or local move table) built at the
//! current state. A rejected step therefore costs one gradient and one
//! energy evaluation at the proposed state.

mod chain;

pub use chain::{
    read_sample_dump, run_chain, BinarySampleWriter, CsvTraceWriter, Recorder, SampleStore, Trace,
    SAMPLE_DUMP_MAGIC,
};

use rand::Rng;

use crate::dlp::{
    energy_and_proposal_grad, proposal_from_grad, proposal_grad, proposal_logprob, sample_index, sample_proposal, DlpConfig,
    GradientSource, Proposal,
};
use crate::domain::{DomainKind, State};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::numerics::log_softmax_in_place;
use crate::rng::ChainRng;

/// What happened in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEvent {
    pub proposed: State,
    pub accepted: bool,
    /// Hamming distance between the states before and after the step.
    pub n_coords_changed: usize,
    /// Hamming distance between the state before the step and the proposal.
    pub n_coords_proposed: usize,
    /// Log Metropolis-Hastings ratio, for adjusted samplers.
    pub log_accept_ratio: Option<f64>,
    pub energy_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordOrder {
    #[default]
    Systematic,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerKind {
    Dula(DlpConfig),
    Dmala(DlpConfig),
    /// Single-site Gibbs. One step updates one coordinate.
    Gibbs1(CoordOrder),
    /// Locally balanced proposal over the Hamming-1 ball, MH corrected.
    /// `alpha = inf` drops the distance penalty.
    Lb1 { alpha: f64 },
    /// One coordinate change chosen by softmax of half the first-order
    /// Taylor estimate of the energy change, MH corrected. A simplified
    /// gradient-with-Gibbs proposal.
    GradFlip1,
    RbmBlockGibbs,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Dula(_) => "dula",
            SamplerKind::Dmala(_) => "dmala",
            SamplerKind::Gibbs1(_) => "gibbs1",
            SamplerKind::Lb1 { .. } => "lb1",
            SamplerKind::GradFlip1 => "gradflip1",
            SamplerKind::RbmBlockGibbs => "rbm_block_gibbs",
        }
    }

    /// Whether the chain leaves the target exactly invariant.
    pub fn is_exact(&self) -> bool {
        !matches!(self, SamplerKind::Dula(_))
    }

    pub fn validate<M: EnergyModel + ?Sized>(&self, model: &M) -> Result<()> {
        let domain = model.domain();
        match self {
            SamplerKind::Dula(cfg) => {
                cfg.validate(domain.dim())?;
                if matches!(cfg.gradient, GradientSource::Stochastic(_))
                    && !model.supports_stochastic_grad()
                {
                    return Err(Error::Unsupported(
                        "stochastic-gradient DULA needs a model with stochastic gradients".into(),
                    ));
                }
            }
            SamplerKind::Dmala(cfg) => {
                cfg.validate(domain.dim())?;
                if matches!(cfg.gradient, GradientSource::Stochastic(_)) {
                    return Err(Error::Unsupported(
                        "DMALA needs exact gradients; stochastic gradients are DULA only".into(),
                    ));
                }
            }
            SamplerKind::Lb1 { alpha } => {
                if !(*alpha > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "stepsize must be positive, got {alpha}"
                    )));
                }
            }
            SamplerKind::RbmBlockGibbs => {
                if model.as_rbm().is_none() {
                    return Err(Error::Unsupported("block Gibbs needs an RBM model".into()));
                }
            }
            SamplerKind::Gibbs1(_) | SamplerKind::GradFlip1 => {}
        }
        Ok(())
    }
}

/// Single-coordinate moves out of one state, with their log-probabilities.
///
/// Moves are listed coordinate by coordinate, each coordinate's new levels
/// in increasing order skipping the current one. When `has_stay` is true the
/// first entry is the null move.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMoves {
    pub has_stay: bool,
    pub levels: usize,
    pub log_probs: Vec<f64>,
    /// Energies of the target states, when they were needed to build the table.
    pub energies: Option<Vec<f64>>,
}

impl LocalMoves {
    fn offset(&self) -> usize {
        usize::from(self.has_stay)
    }

    /// Index of the move setting coordinate `i` to `level`, from `current`.
    pub fn index_of(&self, current: &State, i: usize, level: u32) -> usize {
        let cur = current.levels()[i];
        debug_assert_ne!(cur, level);
        let pos = if level < cur { level } else { level - 1 } as usize;
        self.offset() + i * (self.levels - 1) + pos
    }

    /// The move at `index` applied to `current`, or `None` for the null move.
    pub fn apply(&self, current: &State, index: usize) -> Option<State> {
        if self.has_stay && index == 0 {
            return None;
        }
        let k = index - self.offset();
        let i = k / (self.levels - 1);
        let pos = (k % (self.levels - 1)) as u32;
        let cur = current.levels()[i];
        let level = if pos < cur { pos } else { pos + 1 };
        let mut next = current.clone();
        next.levels_mut()[i] = level;
        Some(next)
    }

    /// Log-probability of moving from `from` to `to`; `-inf` unless they
    /// differ in at most one coordinate.
    pub fn log_prob_to(&self, from: &State, to: &State) -> f64 {
        let diff: Vec<usize> = (0..from.len())
            .filter(|&i| from.levels()[i] != to.levels()[i])
            .collect();
        match diff.as_slice() {
            [] if self.has_stay => self.log_probs[0],
            [i] => self.log_probs[self.index_of(from, *i, to.levels()[*i])],
            _ => f64::NEG_INFINITY,
        }
    }
}

fn for_each_neighbor(state: &State, levels: usize, mut f: impl FnMut(usize, u32, &State)) {
    let mut probe = state.clone();
    for i in 0..state.len() {
        let cur = state.levels()[i];
        for k in 0..levels as u32 {
            if k == cur {
                continue;
            }
            probe.levels_mut()[i] = k;
            f(i, k, &probe);
        }
        probe.levels_mut()[i] = cur;
    }
}

/// Locally balanced moves: weight `exp(U(y)/2 - U(x)/2 - |y - x|^2 / (2 alpha))`
/// over the state itself and every single-coordinate change.
pub fn lb1_moves<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    energy: f64,
    alpha: f64,
) -> Result<LocalMoves> {
    let domain = model.domain();
    let s = domain.levels();
    let mut log_probs = Vec::with_capacity(1 + state.len() * (s - 1));
    let mut energies = Vec::with_capacity(state.len() * (s - 1));
    log_probs.push(0.0);
    for_each_neighbor(state, s, |i, k, next| {
        let u = model.energy(next);
        let penalty = if alpha.is_infinite() {
            0.0
        } else {
            domain.level_sq_dist(state.levels()[i], k) / (2.0 * alpha)
        };
        energies.push(u);
        log_probs.push(0.5 * (u - energy) - penalty);
    });
    if log_probs.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("locally balanced weights"));
    }
    log_softmax_in_place(&mut log_probs);
    Ok(LocalMoves {
        has_stay: true,
        levels: s,
        log_probs,
        energies: Some(energies),
    })
}

/// Gradient single-change moves: weight `exp(d_tilde / 2)` where `d_tilde`
/// is the first-order estimate of `U(y) - U(x)` from the gradient at `x`.
pub fn gradflip_moves<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    grad: &[f64],
) -> Result<LocalMoves> {
    let domain = model.domain();
    let s = domain.levels();
    let mut log_probs = Vec::with_capacity(state.len() * (s - 1));
    for_each_neighbor(state, s, |i, k, _| {
        let cur = state.levels()[i];
        let change = match domain.kind() {
            DomainKind::OneHot(_) => grad[i * s + k as usize] - grad[i * s + cur as usize],
            _ => grad[i] * (domain.level_value(k) - domain.level_value(cur)),
        };
        log_probs.push(0.5 * change);
    });
    if log_probs.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("gradient flip weights"));
    }
    log_softmax_in_place(&mut log_probs);
    Ok(LocalMoves {
        has_stay: false,
        levels: s,
        log_probs,
        energies: None,
    })
}

/// Exact conditional of coordinate `i` given the rest, as log-probabilities.
pub fn gibbs_conditional<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    energy: f64,
    i: usize,
) -> Result<Vec<f64>> {
    let s = model.domain().levels();
    let cur = state.levels()[i];
    let mut probe = state.clone();
    let mut logits: Vec<f64> = (0..s as u32)
        .map(|k| {
            if k == cur {
                energy
            } else {
                probe.levels_mut()[i] = k;
                model.energy(&probe)
            }
        })
        .collect();
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("conditional energies"));
    }
    log_softmax_in_place(&mut logits);
    Ok(logits)
}

/// MH acceptance: `u < exp(log_ratio)`, false for NaN.
fn mh_accept(log_ratio: f64, u: f64) -> bool {
    u < log_ratio.exp()
}

/// A running chain over one model.
pub struct ChainSampler<'m, M: EnergyModel + ?Sized> {
    model: &'m M,
    kind: SamplerKind,
    state: State,
    energy: f64,
    proposal: Option<Proposal>,
    moves: Option<LocalMoves>,
    cursor: usize,
}

impl<'m, M: EnergyModel + ?Sized> ChainSampler<'m, M> {
    pub fn new(model: &'m M, kind: SamplerKind, init: State) -> Result<Self> {
        model.domain().check(&init)?;
        kind.validate(model)?;
        let energy = model.energy(&init);
        if !energy.is_finite() {
            return Err(Error::NonFinite("initial energy"));
        }
        Ok(Self {
            model,
            kind,
            state: init,
            energy,
            proposal: None,
            moves: None,
            cursor: 0,
        })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn kind(&self) -> &SamplerKind {
        &self.kind
    }

    pub fn step(&mut self, rng: &mut ChainRng) -> Result<StepEvent> {
        match self.kind.clone() {
            SamplerKind::Dula(cfg) => self.step_dula(&cfg, rng),
            SamplerKind::Dmala(cfg) => self.step_dmala(&cfg, rng),
            SamplerKind::Gibbs1(order) => self.step_gibbs(order, rng),
            SamplerKind::Lb1 { alpha } => self.step_local(Some(alpha), rng),
            SamplerKind::GradFlip1 => self.step_local(None, rng),
            SamplerKind::RbmBlockGibbs => self.step_block_gibbs(rng),
        }
    }

    fn current_proposal(&mut self, cfg: &DlpConfig, rng: &mut ChainRng) -> Result<Proposal> {
        if let Some(p) = self.proposal.take() {
            return Ok(p);
        }
        let grad = proposal_grad(self.model, &self.state, cfg, rng)?;
        proposal_from_grad(self.model.domain(), &self.state, grad, cfg)
    }

    fn moved(&mut self, next: State, energy: f64, accepted: bool, proposed: State, lr: Option<f64>) -> StepEvent {
        let n_coords_proposed = self.state.hamming(&proposed);
        let n_coords_changed = self.state.hamming(&next);
        self.state = next;
        self.energy = energy;
        StepEvent {
            proposed,
            accepted,
            n_coords_changed,
            n_coords_proposed,
            log_accept_ratio: lr,
            energy_after: energy,
        }
    }

    fn step_dula(&mut self, cfg: &DlpConfig, rng: &mut ChainRng) -> Result<StepEvent> {
        let proposal = self.current_proposal(cfg, rng)?;
        let next = sample_proposal(&proposal, rng);
        if next == self.state {
            if cfg.gradient == GradientSource::FullBatch {
                self.proposal = Some(proposal);
            }
            let e = self.energy;
            return Ok(self.moved(next.clone(), e, true, next, None));
        }
        let energy = if cfg.gradient == GradientSource::FullBatch {
            let (u, grad) = energy_and_proposal_grad(self.model, &next, cfg, rng)?;
            self.proposal = Some(proposal_from_grad(self.model.domain(), &next, grad, cfg)?);
            u
        } else {
            self.model.energy(&next)
        };
        Ok(self.moved(next.clone(), energy, true, next, None))
    }

    fn step_dmala(&mut self, cfg: &DlpConfig, rng: &mut ChainRng) -> Result<StepEvent> {
        let forward = self.current_proposal(cfg, rng)?;
        let proposed = sample_proposal(&forward, rng);
        let u: f64 = rng.random();
        if proposed == self.state {
            self.proposal = Some(forward);
            let e = self.energy;
            return Ok(self.moved(proposed.clone(), e, true, proposed, Some(0.0)));
        }
        let (energy, grad) = energy_and_proposal_grad(self.model, &proposed, cfg, rng)?;
        let reverse = proposal_from_grad(self.model.domain(), &proposed, grad, cfg)?;
        let log_ratio = energy - self.energy + proposal_logprob(&reverse, &self.state)
            - proposal_logprob(&forward, &proposed);
        if mh_accept(log_ratio, u) {
            self.proposal = Some(reverse);
            Ok(self.moved(proposed.clone(), energy, true, proposed, Some(log_ratio)))
        } else {
            self.proposal = Some(forward);
            let (cur, e) = (self.state.clone(), self.energy);
            Ok(self.moved(cur, e, false, proposed, Some(log_ratio)))
        }
    }

    fn step_gibbs(&mut self, order: CoordOrder, rng: &mut ChainRng) -> Result<StepEvent> {
        let d = self.state.len();
        let i = match order {
            CoordOrder::Systematic => {
                let i = self.cursor;
                self.cursor = (self.cursor + 1) % d;
                i
            }
            CoordOrder::Random => rng.random_range(0..d),
        };
        let cond = gibbs_conditional(self.model, &self.state, self.energy, i)?;
        let k = sample_index(&cond, rng) as u32;
        let mut next = self.state.clone();
        next.levels_mut()[i] = k;
        let energy = if k == self.state.levels()[i] {
            self.energy
        } else {
            self.model.energy(&next)
        };
        Ok(self.moved(next.clone(), energy, true, next, None))
    }

    fn local_moves(&self, state: &State, energy: f64, alpha: Option<f64>) -> Result<LocalMoves> {
        match alpha {
            Some(a) => lb1_moves(self.model, state, energy, a),
            None => gradflip_moves(self.model, state, &self.model.grad(state)),
        }
    }

    fn step_local(&mut self, alpha: Option<f64>, rng: &mut ChainRng) -> Result<StepEvent> {
        let forward = match self.moves.take() {
            Some(m) => m,
            None => self.local_moves(&self.state, self.energy, alpha)?,
        };
        let idx = sample_index(&forward.log_probs, rng);
        let u: f64 = rng.random();
        let Some(proposed) = forward.apply(&self.state, idx) else {
            self.moves = Some(forward);
            let (cur, e) = (self.state.clone(), self.energy);
            return Ok(self.moved(cur.clone(), e, true, cur, Some(0.0)));
        };
        let energy = match &forward.energies {
            Some(es) => es[idx - 1],
            None => self.model.energy(&proposed),
        };
        let reverse = self.local_moves(&proposed, energy, alpha)?;
        let log_ratio = energy - self.energy + reverse.log_prob_to(&proposed, &self.state)
            - forward.log_probs[idx];
        if mh_accept(log_ratio, u) {
            self.moves = Some(reverse);
            Ok(self.moved(proposed.clone(), energy, true, proposed, Some(log_ratio)))
        } else {
            self.moves = Some(forward);
            let (cur, e) = (self.state.clone(), self.energy);
            Ok(self.moved(cur, e, false, proposed, Some(log_ratio)))
        }
    }

    fn step_block_gibbs(&mut self, rng: &mut ChainRng) -> Result<StepEvent> {
        let rbm = self
            .model
            .as_rbm()
            .ok_or_else(|| Error::Unsupported("block Gibbs needs an RBM model".into()))?;
        let h = rbm.sample_hidden(&self.state, rng);
        let next = rbm.sample_visible(&h, rng);
        let energy = rbm.energy(&next);
        Ok(self.moved(next.clone(), energy, true, next, None))
    }
}

fn one_step<M: EnergyModel + ?Sized>(
    model: &M,
    kind: SamplerKind,
    state: &State,
    rng: &mut ChainRng,
) -> Result<(State, StepEvent)> {
    let mut chain = ChainSampler::new(model, kind, state.clone())?;
    let event = chain.step(rng)?;
    Ok((chain.state, event))
}

pub fn step_dula<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    cfg: &DlpConfig,
    rng: &mut ChainRng,
) -> Result<(State, StepEvent)> {
    one_step(model, SamplerKind::Dula(cfg.clone()), state, rng)
}

pub fn step_dmala<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    cfg: &DlpConfig,
    rng: &mut ChainRng,
) -> Result<(State, StepEvent)> {
    one_step(model, SamplerKind::Dmala(cfg.clone()), state, rng)
}

/// One single-site update. With `Systematic` order a fresh call always
/// updates coordinate 0; use [`ChainSampler`] to sweep.
pub fn step_gibbs1<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    rng: &mut ChainRng,
    order: CoordOrder,
) -> Result<(State, StepEvent)> {
    one_step(model, SamplerKind::Gibbs1(order), state, rng)
}

pub fn step_lb1<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    alpha: f64,
    rng: &mut ChainRng,
) -> Result<(State, StepEvent)> {
    one_step(model, SamplerKind::Lb1 { alpha }, state, rng)
}

pub fn step_gradflip1<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    rng: &mut ChainRng,
) -> Result<(State, StepEvent)> {
    one_step(model, SamplerKind::GradFlip1, state, rng)
}

pub fn step_rbm_block_gibbs<M: EnergyModel + ?Sized>(
    model: &M,
    state: &State,
    rng: &mut ChainRng,
) -> Result<(State, StepEvent)> {
    one_step(model, SamplerKind::RbmBlockGibbs, state, rng)
}
