//! Brute-force ground truth for small state spaces.
//!
//! Every state of the domain is enumerated in lexicographic order, so state
//! `i` of a distribution or kernel is `domain.state_at(i)`.

use std::io::Write;

use rayon::prelude::*;

use crate::dlp::{proposal_from_grad, proposal_logits, proposal_logprob, DlpConfig, GradientSource, Proposal};
use crate::domain::{Domain, State, DEFAULT_STATE_CAP};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::models::{
    build_lattice_ising, LatticeSpec, IsingLatticeModel, LogQuadraticModel, Perturbed1DModel, RbmModel,
    SpinEncoding,
};
use crate::numerics::{log_sigmoid, logsumexp};
use crate::rng::seeded;
use crate::samplers::{gibbs_conditional, gradflip_moves, lb1_moves, LocalMoves, SamplerKind};

/// Largest state count for which dense kernels are built.
pub const KERNEL_STATE_CAP: usize = 4096;
/// Iteration cap for power iteration.
pub const POWER_MAX_ITER: usize = 1_000_000;
/// Power iteration stops once `||v K - v||_1` falls to this value.
pub const POWER_TOL: f64 = 1e-12;
/// Work budget (multiply-adds) for power iteration before the direct solver
/// takes over.
const POWER_WORK_BUDGET: f64 = 2e10;
/// Row sums of a kernel must be within this of one.
const ROW_SUM_TOL: f64 = 1e-10;

/// A normalized distribution over every state of a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    domain: Domain,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
    log_z: f64,
}

impl ExactDistribution {
    /// Normalize log-weights given in lexicographic state order.
    pub fn from_log_weights(domain: &Domain, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::NonFinite("log weights"));
        }
        let log_z = logsumexp(&log_weights);
        if !log_z.is_finite() {
            return Err(Error::NonFinite("normalizing constant"));
        }
        let log_probs: Vec<f64> = log_weights.iter().map(|w| w - log_z).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(Self {
            domain: domain.clone(),
            log_probs,
            probs,
            log_z,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn prob_of(&self, state: &State) -> f64 {
        self.probs[self.domain.index_of(state)]
    }

    /// Mean of the embedded coordinates.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.domain.embed_dim()];
        let mut buf = vec![0.0; self.domain.embed_dim()];
        for (i, p) in self.probs.iter().enumerate() {
            self.domain.embed_into(&self.domain.state_at(i), &mut buf);
            out.iter_mut().zip(&buf).for_each(|(o, x)| *o += p * x);
        }
        out
    }
}

fn all_states(domain: &Domain, cap: u128) -> Result<Vec<State>> {
    Ok(domain.enumerate(cap)?.collect())
}

pub fn exact_target<M: EnergyModel + ?Sized>(model: &M) -> Result<ExactDistribution> {
    exact_target_with_cap(model, DEFAULT_STATE_CAP)
}

/// `pi_i = exp(U(x_i) - logsumexp_j U(x_j))`.
pub fn exact_target_with_cap<M: EnergyModel + ?Sized>(model: &M, cap: u128) -> Result<ExactDistribution> {
    let domain = model.domain();
    let count = domain.num_states().unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::StateCapExceeded { count, cap });
    }
    let n = count as usize;
    let energies: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| model.energy(&domain.state_at(i)))
        .collect();
    ExactDistribution::from_log_weights(domain, energies)
}

/// Dense row-stochastic matrix over the enumerated states.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    n: usize,
    data: Vec<f64>,
    provenance: String,
}

impl TransitionKernel {
    /// Check non-negativity and row sums before accepting the matrix.
    pub fn new(n: usize, data: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(format!("kernel data has {} entries for n = {n}", data.len())));
        }
        for (i, row) in data.chunks(n.max(1)).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::NonFinite("kernel entries"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidState(format!("kernel row {i} sums to {sum}")));
            }
        }
        Ok(Self {
            n,
            data,
            provenance: provenance.into(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            n,
            data,
            provenance: "identity".into(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_error(&self) -> f64 {
        self.data
            .chunks(self.n)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `self * other`: one step of `self` followed by one step of `other`.
    pub fn then(&self, other: &TransitionKernel) -> Result<TransitionKernel> {
        if self.n != other.n {
            return Err(Error::Shape("kernels act on different state spaces".into()));
        }
        let n = self.n;
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
            for (k, a) in self.row(i).iter().enumerate() {
                if *a != 0.0 {
                    out.iter_mut().zip(other.row(k)).for_each(|(o, b)| *o += a * b);
                }
            }
        });
        Ok(TransitionKernel {
            n,
            data,
            provenance: format!("{} then {}", self.provenance, other.provenance),
        })
    }

    /// `v K` for a row vector `v`.
    pub fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, vi) in v.iter().enumerate() {
            if *vi != 0.0 {
                out.iter_mut().zip(self.row(i)).for_each(|(o, k)| *o += vi * k);
            }
        }
        out
    }
}

fn kernel_states<M: EnergyModel + ?Sized>(model: &M, cap: usize) -> Result<Vec<State>> {
    all_states(model.domain(), cap as u128)
}

pub fn exact_kernel<M: EnergyModel + ?Sized>(model: &M, kind: &SamplerKind) -> Result<TransitionKernel> {
    exact_kernel_with_cap(model, kind, KERNEL_STATE_CAP)
}

/// Exact one-step transition matrix of a sampler.
///
/// Single-site Gibbs is built as the random-scan kernel whatever the
/// configured order; see [`systematic_gibbs_kernel`] for a full sweep.
pub fn exact_kernel_with_cap<M: EnergyModel + ?Sized>(
    model: &M,
    kind: &SamplerKind,
    cap: usize,
) -> Result<TransitionKernel> {
    kind.validate(model)?;
    let states = kernel_states(model, cap)?;
    let provenance = kind.name();
    let data = match kind {
        SamplerKind::Dula(cfg) => dula_log_kernel_states(model, cfg, &states)?
            .into_iter()
            .map(f64::exp)
            .collect(),
        SamplerKind::Dmala(cfg) => dmala_kernel(model, cfg, &states)?,
        SamplerKind::Gibbs1(_) => random_scan_gibbs_kernel(model, &states)?,
        SamplerKind::Lb1 { alpha } => local_mh_kernel(model, &states, |s, u| lb1_moves(model, s, u, *alpha))?,
        SamplerKind::GradFlip1 => local_mh_kernel(model, &states, |s, _| gradflip_moves(model, s, &model.grad(s)))?,
        SamplerKind::RbmBlockGibbs => {
            let rbm = model
                .as_rbm()
                .ok_or_else(|| Error::Unsupported("block Gibbs needs an RBM model".into()))?;
            block_gibbs_kernel(rbm, &states)?
        }
    };
    TransitionKernel::new(states.len(), data, provenance)
}

fn full_batch(cfg: &DlpConfig) -> Result<()> {
    if cfg.gradient != GradientSource::FullBatch {
        return Err(Error::Unsupported(
            "exact kernels need full-batch gradients".into(),
        ));
    }
    Ok(())
}

fn proposals_at<M: EnergyModel + ?Sized>(model: &M, cfg: &DlpConfig, states: &[State]) -> Result<Vec<Proposal>> {
    full_batch(cfg)?;
    states
        .par_iter()
        .map(|s| proposal_from_grad(model.domain(), s, model.grad(s), cfg))
        .collect()
}

fn dula_log_kernel_states<M: EnergyModel + ?Sized>(
    model: &M,
    cfg: &DlpConfig,
    states: &[State],
) -> Result<Vec<f64>> {
    let proposals = proposals_at(model, cfg, states)?;
    let n = states.len();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).zip(&proposals).for_each(|(row, p)| {
        for (slot, t) in row.iter_mut().zip(states) {
            *slot = proposal_logprob(p, t);
        }
    });
    Ok(data)
}

/// Log-entries of the DULA kernel: `log prod_i q_i(y_i | x)`.
pub fn dula_log_kernel<M: EnergyModel + ?Sized>(model: &M, cfg: &DlpConfig) -> Result<Vec<f64>> {
    let states = kernel_states(model, KERNEL_STATE_CAP)?;
    dula_log_kernel_states(model, cfg, &states)
}

/// Fill one MH row from forward log-probabilities and the matching reverse
/// ones. The diagonal is the null-move mass plus all rejected mass.
fn mh_row(row: &mut [f64], s: usize, stay: f64, moves: impl Iterator<Item = (usize, f64, f64, f64)>) {
    let mut rejected = 0.0;
    for (t, lq_fwd, lq_rev, d_energy) in moves {
        if lq_fwd == f64::NEG_INFINITY {
            continue;
        }
        let la = (d_energy + lq_rev - lq_fwd).min(0.0);
        let q = lq_fwd.exp();
        row[t] += (lq_fwd + la).exp();
        rejected += q * -la.exp_m1();
    }
    row[s] += stay + rejected;
}

fn dmala_kernel<M: EnergyModel + ?Sized>(model: &M, cfg: &DlpConfig, states: &[State]) -> Result<Vec<f64>> {
    let proposals = proposals_at(model, cfg, states)?;
    let energies: Vec<f64> = states.par_iter().map(|s| model.energy(s)).collect();
    let n = states.len();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(s, row)| {
        let fwd = &proposals[s];
        let stay = proposal_logprob(fwd, &states[s]).exp();
        let moves = (0..n).filter(|&t| t != s).map(|t| {
            (
                t,
                proposal_logprob(fwd, &states[t]),
                proposal_logprob(&proposals[t], &states[s]),
                energies[t] - energies[s],
            )
        });
        mh_row(row, s, stay, moves);
    });
    Ok(data)
}

fn random_scan_gibbs_kernel<M: EnergyModel + ?Sized>(model: &M, states: &[State]) -> Result<Vec<f64>> {
    let domain = model.domain();
    let d = domain.dim();
    let n = states.len();
    let conds: Vec<Vec<Vec<f64>>> = states
        .par_iter()
        .map(|s| {
            let u = model.energy(s);
            (0..d).map(|i| gibbs_conditional(model, s, u, i)).collect()
        })
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(s, row)| {
        let mut t_state = states[s].clone();
        for (i, cond) in conds[s].iter().enumerate() {
            for (k, lp) in cond.iter().enumerate() {
                t_state.levels_mut()[i] = k as u32;
                row[domain.index_of(&t_state)] += lp.exp() / d as f64;
            }
            t_state.levels_mut()[i] = states[s].levels()[i];
        }
    });
    Ok(data)
}

/// Kernel of one systematic sweep: coordinates updated in order `0..d`.
pub fn systematic_gibbs_kernel<M: EnergyModel + ?Sized>(model: &M) -> Result<TransitionKernel> {
    let domain = model.domain();
    let states = kernel_states(model, KERNEL_STATE_CAP)?;
    let n = states.len();
    let mut sweep: Option<TransitionKernel> = None;
    for i in 0..domain.dim() {
        let mut data = vec![0.0; n * n];
        for (s, state) in states.iter().enumerate() {
            let cond = gibbs_conditional(model, state, model.energy(state), i)?;
            let mut t = state.clone();
            for (k, lp) in cond.iter().enumerate() {
                t.levels_mut()[i] = k as u32;
                data[s * n + domain.index_of(&t)] += lp.exp();
            }
        }
        let k = TransitionKernel::new(n, data, format!("gibbs coordinate {i}"))?;
        sweep = Some(match sweep {
            None => k,
            Some(prev) => prev.then(&k)?,
        });
    }
    let mut k = sweep.expect("domain has at least one coordinate");
    k.provenance = "gibbs1 systematic sweep".into();
    Ok(k)
}

fn local_mh_kernel<M, F>(model: &M, states: &[State], build: F) -> Result<Vec<f64>>
where
    M: EnergyModel + ?Sized,
    F: Fn(&State, f64) -> Result<LocalMoves> + Sync,
{
    let domain = model.domain();
    let energies: Vec<f64> = states.par_iter().map(|s| model.energy(s)).collect();
    let tables: Vec<LocalMoves> = states
        .par_iter()
        .zip(&energies)
        .map(|(s, u)| build(s, *u))
        .collect::<Result<_>>()?;
    let n = states.len();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(s, row)| {
        let fwd = &tables[s];
        let stay = if fwd.has_stay { fwd.log_probs[0].exp() } else { 0.0 };
        let start = usize::from(fwd.has_stay);
        let moves = (start..fwd.log_probs.len()).map(|idx| {
            let target = fwd.apply(&states[s], idx).expect("non-null move");
            let t = domain.index_of(&target);
            (
                t,
                fwd.log_probs[idx],
                tables[t].log_prob_to(&target, &states[s]),
                energies[t] - energies[s],
            )
        });
        mh_row(row, s, stay, moves);
    });
    Ok(data)
}

fn block_gibbs_kernel(rbm: &RbmModel, states: &[State]) -> Result<Vec<f64>> {
    let hidden = rbm.hidden();
    if hidden > 20 {
        return Err(Error::StateCapExceeded {
            count: 1u128 << hidden,
            cap: 1 << 20,
        });
    }
    let hdomain = Domain::binary(hidden)?;
    let h_states: Vec<Vec<f64>> = hdomain.enumerate(1 << 20)?.map(|h| hdomain.embed(&h)).collect();
    let n = states.len();
    let nh = h_states.len();
    let log_bern = |p_logit: f64, bit: f64| {
        if bit == 1.0 {
            log_sigmoid(p_logit)
        } else {
            log_sigmoid(-p_logit)
        }
    };
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let hidden_given_x = nalgebra::DMatrix::from_fn(n, nh, |x, h| {
        let probs = rbm.hidden_probs(&states[x]);
        let lp: f64 = probs
            .iter()
            .zip(&h_states[h])
            .map(|(p, b)| log_bern(logit(*p), *b))
            .sum();
        lp.exp()
    });
    let visible_given_h = nalgebra::DMatrix::from_fn(nh, n, |h, x| {
        let probs = rbm.visible_probs(&h_states[h]);
        let lp: f64 = probs
            .iter()
            .zip(states[x].levels())
            .map(|(p, b)| log_bern(logit(*p), *b as f64))
            .sum();
        lp.exp()
    });
    let k = hidden_given_x * visible_given_h;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = k[(i, j)];
        }
    }
    Ok(data)
}

/// Forward and reverse reachability from state 0 over positive entries.
pub fn check_irreducible(k: &TransitionKernel) -> Result<()> {
    let n = k.n();
    if n == 0 {
        return Err(Error::Empty("kernel"));
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let p = if forward { k.get(i, j) } else { k.get(j, i) };
                if p > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().filter(|s| **s).count()
    };
    let (f, b) = (reach(true), reach(false));
    if f < n || b < n {
        return Err(Error::Reducible(format!(
            "{} of {n} states reachable from state 0, {} reach it; the proposal may have underflowed",
            f, b
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StationaryMethod {
    /// Power iteration, falling back to the direct solver.
    #[default]
    Auto,
    Power,
    Direct,
}

pub fn stationary_distribution(k: &TransitionKernel) -> Result<Vec<f64>> {
    stationary_with(k, StationaryMethod::Auto)
}

pub fn stationary_with(k: &TransitionKernel, method: StationaryMethod) -> Result<Vec<f64>> {
    check_irreducible(k)?;
    match method {
        StationaryMethod::Power => stationary_power(k, POWER_MAX_ITER),
        StationaryMethod::Direct => stationary_direct(k),
        StationaryMethod::Auto => {
            let nnz = k.data().iter().filter(|p| **p > 0.0).count().max(1) as f64;
            let budget = ((POWER_WORK_BUDGET / nnz) as usize).clamp(1000, POWER_MAX_ITER);
            match stationary_power(k, budget) {
                Err(Error::NotConverged(_)) => stationary_direct(k),
                other => other,
            }
        }
    }
}

/// Power iteration from the uniform vector until `||v K - v||_1 <= POWER_TOL`.
///
/// Kernels with a zero on the diagonal are iterated in lazy form
/// `(I + K) / 2`, which has the same stationary vector and is aperiodic.
pub fn stationary_power(k: &TransitionKernel, max_iter: usize) -> Result<Vec<f64>> {
    let n = k.n();
    let lazy = (0..n).any(|i| k.get(i, i) == 0.0);
    let columns: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|j| (0..n).filter_map(|i| (k.get(i, j) > 0.0).then(|| (i, k.get(i, j)))).collect())
        .collect();
    let mut v = vec![1.0 / n as f64; n];
    let mut w = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        w.par_iter_mut()
            .with_min_len(64)
            .zip(&columns)
            .for_each(|(out, col)| *out = col.iter().map(|(i, p)| v[*i] * p).sum());
        residual = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        if residual <= POWER_TOL {
            let total: f64 = w.iter().sum();
            return Ok(w.iter().map(|x| x / total).collect());
        }
        if lazy {
            v.iter_mut().zip(&w).for_each(|(a, b)| *a = 0.5 * (*a + b));
        } else {
            std::mem::swap(&mut v, &mut w);
        }
        let total: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= total);
    }
    Err(Error::NotConverged(format!(
        "power iteration residual {residual:e} after {max_iter} iterations"
    )))
}

/// Grassmann-Taksar-Heyman elimination. Uses only additions, products and
/// divisions of non-negative numbers, so it stays accurate for nearly
/// reducible chains.
pub fn stationary_direct(k: &TransitionKernel) -> Result<Vec<f64>> {
    let n = k.n();
    let mut p = k.data().to_vec();
    for m in (1..n).rev() {
        let s: f64 = p[m * n..m * n + m].iter().sum();
        if !(s > 0.0) {
            return Err(Error::Reducible(format!("state {m} cannot reach lower-indexed states")));
        }
        for i in 0..m {
            p[i * n + m] /= s;
        }
        let (head, tail) = p.split_at_mut(m * n);
        let row_m = &tail[..m];
        head.par_chunks_mut(n).for_each(|row_i| {
            let f = row_i[m];
            if f != 0.0 {
                row_i[..m].iter_mut().zip(row_m).for_each(|(a, b)| *a += f * b);
            }
        });
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for j in 1..n {
        pi[j] = (0..j).map(|i| pi[i] * p[i * n + j]).sum();
    }
    let total: f64 = pi.iter().sum();
    Ok(pi.iter().map(|x| x / total).collect())
}

/// `sum_i |p_i - q_i|`.
pub fn l1_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("lengths {} and {} differ", p.len(), q.len())));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

/// Total variation, half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(0.5 * l1_distance(p, q)?)
}

/// Largest relative violation of `pi_s K_st = pi_t K_ts` over all pairs.
pub fn detailed_balance_defect(k: &TransitionKernel, pi: &[f64]) -> f64 {
    let n = k.n();
    let mut worst: f64 = 0.0;
    for s in 0..n {
        for t in (s + 1)..n {
            let a = pi[s] * k.get(s, t);
            let b = pi[t] * k.get(t, s);
            let m = a.max(b);
            if m > 0.0 {
                worst = worst.max((a - b).abs() / m);
            }
        }
    }
    worst
}

/// `Z exp(-(1 + alpha lambda_min) / (2 alpha))` with `Z = sum_x exp(x^T W x + b^T x)`.
pub fn theorem1_bound(model: &LogQuadraticModel, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("stepsize must be positive, got {alpha}")));
    }
    let domain = model.domain();
    let weights: Vec<f64> = domain
        .enumerate(DEFAULT_STATE_CAP)?
        .map(|s| model.quadratic_form(&domain.embed(&s)))
        .collect();
    let log_z = logsumexp(&weights);
    let lambda = model.lambda_min();
    let proof_form = (log_z - (1.0 + alpha * lambda) / (2.0 * alpha)).exp();
    let statement_form = (log_z - 1.0 / (2.0 * alpha) - lambda / 2.0).exp();
    let scale = proof_form.abs().max(statement_form.abs());
    assert!(
        (proof_form - statement_form).abs() <= 1e-12 * scale,
        "bound forms disagree: {proof_form} vs {statement_form}"
    );
    Ok(proof_form)
}

/// Stationary distribution of exact DULA.
pub fn dula_stationary<M: EnergyModel + ?Sized>(
    model: &M,
    cfg: &DlpConfig,
    method: StationaryMethod,
) -> Result<Vec<f64>> {
    let k = exact_kernel(model, &SamplerKind::Dula(cfg.clone()))?;
    stationary_with(&k, method)
}

/// `|| pi_alpha - pi ||_1` for exact DULA at stepsize `alpha`.
pub fn dula_bias<M: EnergyModel + ?Sized>(model: &M, alpha: f64, method: StationaryMethod) -> Result<f64> {
    let pi = exact_target(model)?;
    let pi_alpha = dula_stationary(model, &DlpConfig::new(alpha), method)?;
    l1_distance(&pi_alpha, pi.probs())
}

/// `log pi_alpha` up to a constant, from `pi_alpha(x) ∝ Z_alpha(x) pi(x)`
/// where `Z_alpha(x)` is the normalizer of the DULA proposal at `x`. Valid
/// for log-quadratic targets, where the DULA kernel is reversible.
pub fn log_quadratic_pi_alpha(model: &LogQuadraticModel, cfg: &DlpConfig) -> Result<ExactDistribution> {
    full_batch(cfg)?;
    let domain = model.domain();
    let s = domain.levels();
    let states = all_states(domain, KERNEL_STATE_CAP as u128)?;
    let log_w = states
        .iter()
        .map(|x| {
            let logits = proposal_logits(domain, x, &model.grad(x), cfg)?;
            let log_norm: f64 = logits.chunks(s).map(logsumexp).sum();
            Ok(model.energy(x) + log_norm)
        })
        .collect::<Result<Vec<f64>>>()?;
    ExactDistribution::from_log_weights(domain, log_w)
}

/// Largest relative violation of `pi_alpha(x) q(y|x) = pi_alpha(y) q(x|y)`,
/// evaluated in log space. A pair where exactly one side is zero counts as
/// an infinite violation.
pub fn dula_reversibility_defect(model: &LogQuadraticModel, cfg: &DlpConfig) -> Result<f64> {
    let pi_alpha = log_quadratic_pi_alpha(model, cfg)?;
    let log_k = dula_log_kernel(model, cfg)?;
    let n = pi_alpha.len();
    let lp = pi_alpha.log_probs();
    let mut worst: f64 = 0.0;
    for x in 0..n {
        for y in (x + 1)..n {
            let a = lp[x] + log_k[x * n + y];
            let b = lp[y] + log_k[y * n + x];
            match (a == f64::NEG_INFINITY, b == f64::NEG_INFINITY) {
                (true, true) => {}
                (false, false) => worst = worst.max((a - b).abs().exp_m1()),
                _ => return Ok(f64::INFINITY),
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Probe {
    pub alpha: f64,
    /// `(epsilon, || pi_alpha - pi ||_1)` in input order.
    pub rows: Vec<(f64, f64)>,
    /// Distances are non-decreasing in the listed order.
    pub monotone: bool,
}

/// Exact DULA bias on the one-spin perturbed quadratic for each `epsilon`.
pub fn theorem2_probe(eps_values: &[f64], a: f64, b: f64, alpha: f64) -> Result<Theorem2Probe> {
    if eps_values.is_empty() {
        return Err(Error::Empty("epsilon values"));
    }
    let rows = eps_values
        .iter()
        .map(|&eps| {
            let m = Perturbed1DModel::new(a, b, eps);
            Ok((eps, dula_bias(&m, alpha, StationaryMethod::Direct)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let monotone = rows.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-15);
    Ok(Theorem2Probe { alpha, rows, monotone })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBlindCheck {
    /// Gradients at both states for each epsilon.
    pub gradients: Vec<[f64; 2]>,
    /// DULA proposal tables are bitwise equal across epsilon.
    pub proposal_invariant: bool,
    /// Exact targets `pi(+1)` per epsilon.
    pub p_plus: Vec<f64>,
    /// The targets differ across epsilon.
    pub target_varies: bool,
}

/// With `a = b = 0` the gradient vanishes at both spins for every epsilon, so
/// DULA cannot see epsilon while the target depends on it.
pub fn gradient_blind_check(eps_values: &[f64], alpha: f64) -> Result<GradientBlindCheck> {
    let cfg = DlpConfig::new(alpha);
    let mut gradients = Vec::new();
    let mut kernels = Vec::new();
    let mut p_plus = Vec::new();
    for &eps in eps_values {
        let m = Perturbed1DModel::new(0.0, 0.0, eps);
        let g: Vec<f64> = (0..2).map(|l| m.grad(&State::new(vec![l]))[0]).collect();
        gradients.push([g[0], g[1]]);
        kernels.push(dula_log_kernel(&m, &cfg)?);
        p_plus.push(exact_target(&m)?.probs()[1]);
    }
    let proposal_invariant = kernels.windows(2).all(|w| w[0] == w[1]);
    let target_varies = p_plus.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-12);
    Ok(GradientBlindCheck {
        gradients,
        proposal_invariant,
        p_plus,
        target_varies,
    })
}

/// CSV with columns `index,state,prob`; the state is written as its level
/// values joined by spaces.
pub fn write_distribution_csv<W: Write>(mut out: W, dist: &ExactDistribution) -> Result<()> {
    writeln!(out, "index,state,prob")?;
    for (i, p) in dist.probs().iter().enumerate() {
        let s = dist.domain().state_at(i);
        let vals: Vec<String> = s
            .levels()
            .iter()
            .map(|l| dist.domain().level_value(*l).to_string())
            .collect();
        writeln!(out, "{i},{},{p:e}", vals.join(" "))?;
    }
    Ok(())
}

/// CSV with columns `from,to,prob`, non-zero entries only.
pub fn write_kernel_csv<W: Write>(mut out: W, k: &TransitionKernel) -> Result<()> {
    writeln!(out, "from,to,prob")?;
    for i in 0..k.n() {
        for (j, p) in k.row(i).iter().enumerate() {
            if *p > 0.0 {
                writeln!(out, "{i},{j},{p:e}")?;
            }
        }
    }
    Ok(())
}

/// The 2x2 lattice Ising model (a = 0.1, b = 0.2) in the `{0, 1}` encoding.
/// Flips cost `1/(2 alpha)` rather than `2/alpha`, which keeps the kernel
/// well conditioned at small stepsizes.
pub fn theorem1_ising() -> Result<LogQuadraticModel> {
    Ok(IsingLatticeModel::new(LatticeSpec::open(2, 2, 0.1, 0.2).encoding(SpinEncoding::Binary))?.into_log_quadratic())
}

/// Small log-quadratic models with at most 512 states.
pub fn bundled_log_quadratic_models() -> Result<Vec<(&'static str, LogQuadraticModel)>> {
    let mut rng = seeded(20_240_601);
    use rand::Rng;
    let mut random_w = |n: usize, scale: f64| -> Vec<f64> {
        (0..n * n).map(|_| rng.random_range(-scale..scale)).collect()
    };
    let cat = crate::domain::DomainKind::Categorical(3);
    let one_hot = crate::domain::DomainKind::OneHot(3);
    Ok(vec![
        ("ising_2x2_spin", build_lattice_ising(2, 2, 0.1, 0.2)?.into_log_quadratic()),
        ("ising_2x2_binary", theorem1_ising()?),
        ("ising_3x3_spin", build_lattice_ising(3, 3, 0.3, 0.2)?.into_log_quadratic()),
        (
            "preconditioner_demo",
            LogQuadraticModel::diagonal(Domain::spin(2)?, &[-0.001, -1000.0], vec![0.0, 0.0])?,
        ),
        (
            "categorical_3x3",
            LogQuadraticModel::new(Domain::new(cat, 3)?, random_w(3, 0.3), vec![0.2, -0.1, 0.3])?,
        ),
        (
            "one_hot_3x3",
            LogQuadraticModel::new(Domain::new(one_hot, 3)?, random_w(9, 0.5), vec![0.1; 9])?,
        ),
    ])
}

/// Every bundled small model, including non-quadratic ones.
pub fn bundled_small_models() -> Result<Vec<(&'static str, Box<dyn EnergyModel>)>> {
    let mut out: Vec<(&'static str, Box<dyn EnergyModel>)> = bundled_log_quadratic_models()?
        .into_iter()
        .map(|(name, m)| (name, Box::new(m) as Box<dyn EnergyModel>))
        .collect();
    out.push(("perturbed_1d", Box::new(Perturbed1DModel::new(1.0, 0.1, 0.5))));
    let mut rng = seeded(7);
    let mut rbm = RbmModel::random(6, 3, 0.8, &mut rng)?;
    rbm = RbmModel::new(
        6,
        3,
        rbm.weights().to_vec(),
        vec![0.2, -0.3, 0.1],
        vec![-0.2, 0.1, 0.0, 0.3, -0.1, 0.2],
    )?;
    out.push(("rbm_6x3", Box::new(rbm)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LogQuadraticModel;

    #[test]
    fn uniform_and_two_state_targets() {
        let m = LogQuadraticModel::new(Domain::binary(2).unwrap(), vec![0.0; 4], vec![0.0; 2]).unwrap();
        assert_eq!(exact_target(&m).unwrap().probs(), &[0.25; 4]);
        let m = LogQuadraticModel::new(Domain::spin(1).unwrap(), vec![0.0], vec![0.5]).unwrap();
        let p = exact_target(&m).unwrap().probs()[1];
        let e = 0.5f64.exp();
        assert!((p - e / (e + 1.0 / e)).abs() < 1e-15);
        assert!((p - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn ising_2x2_target_by_hand() {
        let m = build_lattice_ising(2, 2, 0.1, 0.2).unwrap();
        let d = exact_target(m.as_log_quadratic()).unwrap();
        let edges = [(0, 1), (0, 2), (1, 3), (2, 3)];
        let weights: Vec<f64> = (0..16)
            .map(|i| {
                let s: Vec<f64> = (0..4).map(|k| if (i >> (3 - k)) & 1 == 1 { 1.0 } else { -1.0 }).collect();
                let pair: f64 = edges.iter().map(|(a, b)| s[*a] * s[*b]).sum();
                (0.1 * 2.0 * pair + 0.2 * s.iter().sum::<f64>()).exp()
            })
            .collect();
        let z: f64 = weights.iter().sum();
        for (p, w) in d.probs().iter().zip(&weights) {
            assert!((p - w / z).abs() < 1e-14);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let m = LogQuadraticModel::new(Domain::binary(3).unwrap(), vec![0.0; 9], vec![0.0; 3]).unwrap();
        assert!(matches!(exact_target_with_cap(&m, 4), Err(Error::StateCapExceeded { .. })));
        assert!(exact_kernel_with_cap(&m, &SamplerKind::GradFlip1, 4).is_err());
    }

    #[test]
    fn identity_kernel_is_reducible() {
        assert!(matches!(
            stationary_distribution(&TransitionKernel::identity(3)),
            Err(Error::Reducible(_))
        ));
    }

    #[test]
    fn tiny_stepsize_dula_is_identity() {
        let m = build_lattice_ising(2, 2, 0.1, 0.2).unwrap();
        let k = exact_kernel(m.as_log_quadratic(), &SamplerKind::Dula(DlpConfig::new(1e-4))).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((k.get(i, j) - expected).abs() < 1e-12);
            }
        }
        assert!(stationary_distribution(&k).is_err());
    }

    #[test]
    fn random_walk_on_cycle_is_uniform() {
        let n = 4;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + (i + 1) % n] = 0.5;
            data[i * n + (i + n - 1) % n] = 0.5;
        }
        let k = TransitionKernel::new(n, data, "walk").unwrap();
        for method in [StationaryMethod::Power, StationaryMethod::Direct] {
            let pi = stationary_with(&k, method).unwrap();
            for p in pi {
                assert!((p - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_validation() {
        assert!(TransitionKernel::new(2, vec![0.5, 0.4, 0.0, 1.0], "bad").is_err());
        assert!(TransitionKernel::new(2, vec![1.5, -0.5, 0.0, 1.0], "bad").is_err());
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(l1_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(l1_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn bound_for_free_binary_spin() {
        let m = LogQuadraticModel::new(Domain::binary(1).unwrap(), vec![0.0], vec![0.0]).unwrap();
        for alpha in [0.1, 0.5, 2.0] {
            let b = theorem1_bound(&m, alpha).unwrap();
            assert!((b - 2.0 * (-1.0 / (2.0 * alpha)).exp()).abs() < 1e-14);
        }
        assert!(theorem1_bound(&m, 1e-4).unwrap() < 1e-100);
    }

    #[test]
    fn power_and_direct_agree() {
        let m = theorem1_ising().unwrap();
        for kind in [
            SamplerKind::Dula(DlpConfig::new(0.3)),
            SamplerKind::Dmala(DlpConfig::new(0.5)),
            SamplerKind::Gibbs1(Default::default()),
        ] {
            let k = exact_kernel(&m, &kind).unwrap();
            let a = stationary_with(&k, StationaryMethod::Power).unwrap();
            let b = stationary_with(&k, StationaryMethod::Direct).unwrap();
            assert!(tv_distance(&a, &b).unwrap() < 1e-10);
        }
    }

    #[test]
    fn dmala_rows_sum_to_one() {
        let m = build_lattice_ising(3, 3, 0.3, 0.2).unwrap();
        let k = exact_kernel(m.as_log_quadratic(), &SamplerKind::Dmala(DlpConfig::new(0.7))).unwrap();
        assert!(k.max_row_error() < 1e-12);
    }

    #[test]
    fn dula_pi_alpha_two_ways() {
        let m = build_lattice_ising(2, 2, 0.1, 0.2).unwrap().into_log_quadratic();
        let cfg = DlpConfig::new(0.5);
        let from_kernel = dula_stationary(&m, &cfg, StationaryMethod::Direct).unwrap();
        let constructed = log_quadratic_pi_alpha(&m, &cfg).unwrap();
        assert!(l1_distance(&from_kernel, constructed.probs()).unwrap() < 1e-12);
        let pi = exact_target(&m).unwrap();
        let a = l1_distance(&from_kernel, pi.probs()).unwrap();
        let b = l1_distance(constructed.probs(), pi.probs()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradient_blind() {
        for alpha in [0.2, 0.5, 1.0, 2.0] {
            let c = gradient_blind_check(&[0.0, 0.25, 0.5, 1.0], alpha).unwrap();
            assert!(c.gradients.iter().all(|g| g[0] == 0.0 && g[1] == 0.0));
            assert!(c.proposal_invariant);
            assert!(c.target_varies);
        }
    }

    #[test]
    fn csv_dumps() {
        let m = build_lattice_ising(1, 2, 0.1, 0.2).unwrap();
        let d = exact_target(m.as_log_quadratic()).unwrap();
        let mut buf = Vec::new();
        write_distribution_csv(&mut buf, &d).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("0,-1 -1,"));
        let k = exact_kernel(m.as_log_quadratic(), &SamplerKind::Gibbs1(Default::default())).unwrap();
        let mut buf = Vec::new();
        write_kernel_csv(&mut buf, &k).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("from,to,prob\n"));
    }
}
