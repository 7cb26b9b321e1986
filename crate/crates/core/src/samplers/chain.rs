use std::io::Write;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::{ChainSampler, SamplerKind, StepEvent};
use crate::domain::State;
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::rng::ChainRng;

/// Magic bytes opening a binary sample dump.
pub const SAMPLE_DUMP_MAGIC: &[u8; 8] = b"DLPSAMP1";

/// Receives the post-burn-in, thinned states of a chain.
pub trait Recorder {
    fn record(&mut self, step: usize, state: &State, event: &StepEvent) -> Result<()>;

    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Summary of one chain run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub sampler: String,
    pub n_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub accepted_total: usize,
    /// Steps after burn-in.
    pub post_steps: usize,
    pub post_accepted: usize,
    /// Sum over post-burn-in steps of coordinates changed.
    pub post_coords_changed: usize,
    /// Sum over post-burn-in steps of coordinates changed by the proposal.
    pub post_coords_proposed: usize,
    /// Energies of the recorded states.
    pub energies: Vec<f64>,
    pub final_state: State,
    pub elapsed: Duration,
    /// SHA-256 over every step's resulting state and acceptance flag.
    pub digest: [u8; 32],
}

impl Trace {
    pub fn n_recorded(&self) -> usize {
        self.energies.len()
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.post_steps > 0).then(|| self.post_accepted as f64 / self.post_steps as f64)
    }

    pub fn digest_hex(&self) -> String {
        self.digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Mean wall time per step.
    pub fn time_per_step(&self) -> Duration {
        if self.n_steps == 0 {
            Duration::ZERO
        } else {
            self.elapsed / self.n_steps as u32
        }
    }
}

/// Run `n_steps` steps. States from step `burn_in` on, every `thin`-th one,
/// are passed to the recorders.
#[allow(clippy::too_many_arguments)]
pub fn run_chain<M: EnergyModel + ?Sized>(
    model: &M,
    kind: &SamplerKind,
    init: State,
    n_steps: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut ChainRng,
    recorders: &mut [&mut dyn Recorder],
) -> Result<Trace> {
    if burn_in > n_steps {
        return Err(Error::InvalidConfig(format!(
            "burn-in {burn_in} exceeds the {n_steps} steps"
        )));
    }
    if thin == 0 {
        return Err(Error::InvalidConfig("thinning interval must be positive".into()));
    }
    let mut chain = ChainSampler::new(model, kind.clone(), init)?;
    let mut hasher = Sha256::new();
    let mut trace = Trace {
        sampler: kind.name().to_string(),
        n_steps,
        burn_in,
        thin,
        accepted_total: 0,
        post_steps: 0,
        post_accepted: 0,
        post_coords_changed: 0,
        post_coords_proposed: 0,
        energies: Vec::with_capacity((n_steps - burn_in).div_ceil(thin)),
        final_state: chain.state().clone(),
        elapsed: Duration::ZERO,
        digest: [0; 32],
    };
    let start = Instant::now();
    for t in 0..n_steps {
        let event = chain.step(rng)?;
        for l in chain.state().levels() {
            hasher.update(l.to_le_bytes());
        }
        hasher.update([u8::from(event.accepted)]);
        trace.accepted_total += usize::from(event.accepted);
        if t < burn_in {
            continue;
        }
        trace.post_steps += 1;
        trace.post_accepted += usize::from(event.accepted);
        trace.post_coords_changed += event.n_coords_changed;
        trace.post_coords_proposed += event.n_coords_proposed;
        if (t - burn_in) % thin == 0 {
            trace.energies.push(event.energy_after);
            for r in recorders.iter_mut() {
                r.record(t, chain.state(), &event)?;
            }
        }
    }
    trace.elapsed = start.elapsed();
    for r in recorders.iter_mut() {
        r.finish()?;
    }
    trace.final_state = chain.state().clone();
    trace.digest = hasher.finalize().into();
    Ok(trace)
}

/// Keeps every recorded state in memory.
#[derive(Debug, Clone, Default)]
pub struct SampleStore {
    pub samples: Vec<State>,
}

impl Recorder for SampleStore {
    fn record(&mut self, _step: usize, state: &State, _event: &StepEvent) -> Result<()> {
        self.samples.push(state.clone());
        Ok(())
    }
}

/// CSV rows `step,energy,accepted,coords_changed`.
pub struct CsvTraceWriter<W: Write> {
    out: W,
    header_done: bool,
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            header_done: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn header(&mut self) -> Result<()> {
        if !self.header_done {
            writeln!(self.out, "step,energy,accepted,coords_changed")?;
            self.header_done = true;
        }
        Ok(())
    }
}

impl<W: Write> Recorder for CsvTraceWriter<W> {
    fn record(&mut self, step: usize, _state: &State, event: &StepEvent) -> Result<()> {
        self.header()?;
        writeln!(
            self.out,
            "{step},{},{},{}",
            event.energy_after,
            u8::from(event.accepted),
            event.n_coords_changed
        )?;
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.header()?;
        self.out.flush()?;
        Ok(())
    }
}

/// Compact binary dump of recorded states.
///
/// Header: the 8 magic bytes, then `d`, `count` as little-endian u64, then
/// the value width in bytes as one u8 (1, 2 or 4). Each state follows as `d`
/// little-endian level indices of that width.
pub struct BinarySampleWriter<W: Write> {
    out: W,
    dim: usize,
    expected: u64,
    written: u64,
    width: u8,
}

impl<W: Write> BinarySampleWriter<W> {
    /// `count` must equal the number of states that will be recorded.
    pub fn new(mut out: W, dim: usize, levels: usize, count: u64) -> Result<Self> {
        let width: u8 = if levels <= 1 << 8 {
            1
        } else if levels <= 1 << 16 {
            2
        } else {
            4
        };
        out.write_all(SAMPLE_DUMP_MAGIC)?;
        out.write_all(&(dim as u64).to_le_bytes())?;
        out.write_all(&count.to_le_bytes())?;
        out.write_all(&[width])?;
        Ok(Self {
            out,
            dim,
            expected: count,
            written: 0,
            width,
        })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> Recorder for BinarySampleWriter<W> {
    fn record(&mut self, _step: usize, state: &State, _event: &StepEvent) -> Result<()> {
        if state.len() != self.dim {
            return Err(Error::Shape("state dimension differs from dump header".into()));
        }
        for &l in state.levels() {
            match self.width {
                1 => self.out.write_all(&[l as u8])?,
                2 => self.out.write_all(&(l as u16).to_le_bytes())?,
                _ => self.out.write_all(&l.to_le_bytes())?,
            }
        }
        self.written += 1;
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.out.flush()?;
        if self.written != self.expected {
            return Err(Error::Io(format!(
                "sample dump header promised {} states, wrote {}",
                self.expected, self.written
            )));
        }
        Ok(())
    }
}

/// Read a dump written by [`BinarySampleWriter`].
pub fn read_sample_dump(bytes: &[u8]) -> Result<Vec<State>> {
    let bad = || Error::Parse("truncated or malformed sample dump".into());
    if bytes.len() < 25 || &bytes[..8] != SAMPLE_DUMP_MAGIC {
        return Err(bad());
    }
    let dim = u64::from_le_bytes(bytes[8..16].try_into().map_err(|_| bad())?) as usize;
    let count = u64::from_le_bytes(bytes[16..24].try_into().map_err(|_| bad())?) as usize;
    let width = bytes[24] as usize;
    let body = &bytes[25..];
    if ![1, 2, 4].contains(&width) || body.len() != dim * count * width {
        return Err(bad());
    }
    Ok(body
        .chunks(dim * width.max(1))
        .take(count)
        .map(|row| {
            State::new(
                row.chunks(width)
                    .map(|c| match width {
                        1 => c[0] as u32,
                        2 => u16::from_le_bytes([c[0], c[1]]) as u32,
                        _ => u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                    })
                    .collect(),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dlp::DlpConfig;
    use crate::models::build_lattice_ising;
    use crate::rng::seeded;

    fn run(n: usize, burn: usize, thin: usize, seed: u64, rec: &mut [&mut dyn Recorder]) -> Trace {
        let m = build_lattice_ising(3, 3, 0.2, 0.1).unwrap();
        run_chain(
            m.as_log_quadratic(),
            &SamplerKind::Dmala(DlpConfig::new(0.5)),
            State::zeros(9),
            n,
            burn,
            thin,
            &mut seeded(seed),
            rec,
        )
        .unwrap()
    }

    #[test]
    fn burn_in_equal_to_steps_records_nothing() {
        let mut store = SampleStore::default();
        let t = run(50, 50, 1, 1, &mut [&mut store]);
        assert_eq!(t.n_recorded(), 0);
        assert!(store.samples.is_empty());
        assert_eq!(t.post_steps, 0);
        assert!(t.accepted_total > 0);
    }

    #[test]
    fn no_burn_in_records_every_step() {
        let mut store = SampleStore::default();
        let t = run(123, 0, 1, 1, &mut [&mut store]);
        assert_eq!(t.n_recorded(), 123);
        assert_eq!(store.samples.len(), 123);
    }

    #[test]
    fn thinning_count() {
        let t = run(100, 10, 7, 1, &mut []);
        assert_eq!(t.n_recorded(), 90usize.div_ceil(7));
    }

    #[test]
    fn digest_depends_only_on_seed() {
        assert_eq!(run(200, 20, 1, 4, &mut []).digest, run(200, 20, 1, 4, &mut []).digest);
        assert_ne!(run(200, 20, 1, 4, &mut []).digest, run(200, 20, 1, 5, &mut []).digest);
    }

    #[test]
    fn rejects_bad_run_shapes() {
        let m = build_lattice_ising(2, 2, 0.1, 0.2).unwrap();
        let kind = SamplerKind::Dula(DlpConfig::new(0.5));
        let mut rng = seeded(0);
        assert!(run_chain(m.as_log_quadratic(), &kind, State::zeros(4), 5, 6, 1, &mut rng, &mut []).is_err());
        assert!(run_chain(m.as_log_quadratic(), &kind, State::zeros(4), 5, 0, 0, &mut rng, &mut []).is_err());
    }

    #[test]
    fn csv_and_binary_dumps() {
        let mut csv = CsvTraceWriter::new(Vec::new());
        let mut store = SampleStore::default();
        let mut bin = BinarySampleWriter::new(Vec::new(), 9, 2, 20).unwrap();
        let t = run(40, 20, 1, 3, &mut [&mut csv, &mut store, &mut bin]);
        let text = String::from_utf8(csv.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,energy,accepted,coords_changed");
        assert_eq!(lines.len(), 21);
        assert!(lines[1].starts_with("20,"));
        assert_eq!(t.energies.len(), 20);
        let dumped = read_sample_dump(&bin.into_inner()).unwrap();
        assert_eq!(dumped, store.samples);
    }

    #[test]
    fn binary_dump_count_mismatch_is_an_error() {
        let m = build_lattice_ising(2, 2, 0.1, 0.2).unwrap();
        let mut bin = BinarySampleWriter::new(Vec::new(), 4, 2, 3).unwrap();
        let r = run_chain(
            m.as_log_quadratic(),
            &SamplerKind::Dula(DlpConfig::new(0.5)),
            State::zeros(4),
            5,
            0,
            1,
            &mut seeded(0),
            &mut [&mut bin],
        );
        assert!(r.is_err());
    }
}
