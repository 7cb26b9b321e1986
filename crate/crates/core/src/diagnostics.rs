//! Chain quality metrics: moment estimates, RMSE, effective sample size,
//! acceptance and flip statistics, and a Hamming-kernel MMD.

use rand::seq::SliceRandom;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::domain::{Domain, State};
use crate::error::{Error, Result};
use crate::rng::ChainRng;
use crate::samplers::{Recorder, StepEvent, Trace};

/// Floor applied to MMD² before taking its log.
pub const MMD_FLOOR: f64 = 1e-12;

/// Running per-coordinate sums of the embedded states.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    domain: Domain,
    count: u64,
    sums: Vec<f64>,
    buf: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(domain: &Domain) -> Self {
        Self {
            domain: domain.clone(),
            count: 0,
            sums: vec![0.0; domain.embed_dim()],
            buf: vec![0.0; domain.embed_dim()],
        }
    }

    pub fn push(&mut self, state: &State) {
        self.domain.embed_into(state, &mut self.buf);
        self.sums.iter_mut().zip(&self.buf).for_each(|(s, x)| *s += x);
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::Empty("moment accumulator"));
        }
        Ok(self.sums.iter().map(|s| s / self.count as f64).collect())
    }

    /// Combine two accumulators over the same domain.
    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::Shape("cannot merge accumulators over different domains".into()));
        }
        self.count += other.count;
        self.sums.iter_mut().zip(&other.sums).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

impl Recorder for MomentAccumulator {
    fn record(&mut self, _step: usize, state: &State, _event: &StepEvent) -> Result<()> {
        self.push(state);
        Ok(())
    }
}

/// `sqrt(mean_i (est_i - truth_i)^2)`.
pub fn mean_rmse(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() {
        return Err(Error::Shape(format!(
            "estimate has {} entries, truth has {}",
            estimated.len(),
            truth.len()
        )));
    }
    if estimated.is_empty() {
        return Err(Error::Empty("mean vectors"));
    }
    let sq: f64 = estimated.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / estimated.len() as f64).sqrt())
}

/// Autocovariances `gamma_0 .. gamma_{n-1}` (divided by `n`) via FFT.
fn autocovariance(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    buf.iter_mut().for_each(|c| *c = Complex::new(c.norm_sqr(), 0.0));
    planner.plan_fft_inverse(size).process(&mut buf);
    buf.iter()
        .take(n)
        .map(|c| c.re / (size as f64 * n as f64))
        .collect()
}

/// Effective sample size by Geyer's initial positive sequence.
///
/// Pairs `Gamma_m = rho_{2m} + rho_{2m+1}` are summed while positive and
/// `tau = -1 + 2 sum Gamma_m` (`tau = 1` if the first pair is not positive).
/// The result `N / tau` is clamped to `[1, N]`; antithetic series with
/// `tau <= 0` and constant series return `N`.
pub fn ess(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 10 {
        return Err(Error::InvalidConfig(format!(
            "ESS needs at least 10 values, got {n}"
        )));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ESS series"));
    }
    let gamma = autocovariance(series);
    let var = gamma[0];
    let scale = series.iter().map(|x| x * x).sum::<f64>() / n as f64;
    if var <= f64::EPSILON * f64::EPSILON * scale {
        return Ok(n as f64);
    }
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (gamma[2 * m] + gamma[2 * m + 1]) / var;
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = if m == 0 { 1.0 } else { -1.0 + 2.0 * sum };
    if tau <= 0.0 {
        return Ok(n as f64);
    }
    Ok((n as f64 / tau).clamp(1.0, n as f64))
}

/// ESS of each embedded coordinate across a sample set.
pub fn ess_per_coordinate(domain: &Domain, samples: &[State]) -> Result<Vec<f64>> {
    let cols = domain.embed_dim();
    let embedded: Vec<Vec<f64>> = samples.iter().map(|s| domain.embed(s)).collect();
    (0..cols)
        .map(|j| ess(&embedded.iter().map(|row| row[j]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdEstimate {
    /// Unbiased MMD² (may be slightly negative).
    pub mmd2: f64,
    /// `ln(max(mmd2, MMD_FLOOR))`.
    pub log_mmd2: f64,
}

fn hamming_kernel_table(d: usize) -> Vec<f64> {
    (0..=d).map(|h| (-(h as f64) / d as f64).exp()).collect()
}

fn check_samples(a: &[State], b: &[State]) -> Result<usize> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Empty("MMD needs at least two samples per set"));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|s| s.len() != d) {
        return Err(Error::Shape("samples have different dimensions".into()));
    }
    Ok(d)
}

/// Unbiased MMD² between two sample sets under `k(x, y) = exp(-H(x, y) / d)`.
pub fn mmd_hamming(a: &[State], b: &[State]) -> Result<MmdEstimate> {
    let d = check_samples(a, b)?;
    let table = hamming_kernel_table(d);
    let k = |x: &State, y: &State| table[x.hamming(y)];
    let within = |s: &[State]| {
        let mut total = 0.0;
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                total += k(&s[i], &s[j]);
            }
        }
        2.0 * total / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += k(x, y);
        }
    }
    let mmd2 = within(a) + within(b) - 2.0 * cross / (a.len() * b.len()) as f64;
    Ok(MmdEstimate {
        mmd2,
        log_mmd2: mmd2.max(MMD_FLOOR).ln(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    /// 95th percentile of the permutation null.
    pub threshold_95: f64,
    pub p_value: f64,
}

impl PermutationTest {
    pub fn rejects_at_5_percent(&self) -> bool {
        self.statistic > self.threshold_95
    }
}

/// Permutation null for [`mmd_hamming`]: pool both sets, reshuffle the labels
/// `n_permutations` times and recompute the statistic.
pub fn mmd_permutation_test(
    a: &[State],
    b: &[State],
    n_permutations: usize,
    rng: &mut ChainRng,
) -> Result<PermutationTest> {
    let d = check_samples(a, b)?;
    if n_permutations == 0 {
        return Err(Error::InvalidConfig("need at least one permutation".into()));
    }
    let table = hamming_kernel_table(d);
    let pooled: Vec<&State> = a.iter().chain(b).collect();
    let n = pooled.len();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = table[pooled[i].hamming(pooled[j])];
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    let (na, nb) = (a.len(), b.len());
    let stat = |idx: &[usize]| {
        let (xa, xb) = idx.split_at(na);
        let block = |p: &[usize], q: &[usize]| {
            p.iter()
                .map(|&i| q.iter().map(|&j| gram[i * n + j]).sum::<f64>())
                .sum::<f64>()
        };
        block(xa, xa) / (na * (na - 1)) as f64 + block(xb, xb) / (nb * (nb - 1)) as f64
            - 2.0 * block(xa, xb) / (na * nb) as f64
    };
    let mut idx: Vec<usize> = (0..n).collect();
    let statistic = stat(&idx);
    let mut null = Vec::with_capacity(n_permutations);
    for _ in 0..n_permutations {
        idx.shuffle(rng);
        null.push(stat(&idx));
    }
    null.sort_by(|x, y| x.total_cmp(y));
    let rank = ((0.95 * n_permutations as f64).ceil() as usize).clamp(1, n_permutations) - 1;
    let exceed = null.iter().filter(|v| **v >= statistic).count();
    Ok(PermutationTest {
        statistic,
        threshold_95: null[rank],
        p_value: (exceed + 1) as f64 / (n_permutations + 1) as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipStats {
    pub acceptance_rate: f64,
    /// Mean coordinates changed per accepted step.
    pub coords_per_accepted: f64,
    /// Mean coordinates changed per step, rejected steps counting zero.
    pub coords_per_step: f64,
    /// Mean Hamming size of the proposals.
    pub coords_proposed: f64,
}

/// Post-burn-in acceptance and flip statistics.
pub fn flip_stats(trace: &Trace) -> Result<FlipStats> {
    if trace.post_steps == 0 {
        return Err(Error::Empty("trace has no post-burn-in steps"));
    }
    let steps = trace.post_steps as f64;
    Ok(FlipStats {
        acceptance_rate: trace.post_accepted as f64 / steps,
        coords_per_accepted: if trace.post_accepted == 0 {
            0.0
        } else {
            trace.post_coords_changed as f64 / trace.post_accepted as f64
        },
        coords_per_step: trace.post_coords_changed as f64 / steps,
        coords_proposed: trace.post_coords_proposed as f64 / steps,
    })
}
