use std::io::{BufRead, Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::{Domain, State};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus};
use crate::rng::ChainRng;

const BINARY_MAGIC: &[u8; 8] = b"RBMW0001";

/// Binary RBM with hidden units marginalized out:
/// `U(x) = sum_j softplus((W x + a)_j) + b^T x`.
///
/// The continuous extension is the same softplus expression on real `x`, so
/// `grad U(x) = W^T sigmoid(W x + a) + b`.
///
/// `w` is stored row-major with shape `hidden x visible`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmModel {
    visible: usize,
    hidden: usize,
    w: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    domain: Domain,
}

/// Contrastive-divergence training settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub gibbs_steps: usize,
    pub init_scale: f64,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.05,
            batch_size: 50,
            gibbs_steps: 1,
            init_scale: 0.01,
        }
    }
}

impl RbmModel {
    pub fn new(visible: usize, hidden: usize, w: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if visible == 0 || hidden == 0 {
            return Err(Error::Shape("RBM needs at least one visible and one hidden unit".into()));
        }
        if w.len() != visible * hidden || a.len() != hidden || b.len() != visible {
            return Err(Error::Shape(format!(
                "RBM {hidden}x{visible}: got W {}, a {}, b {}",
                w.len(),
                a.len(),
                b.len()
            )));
        }
        if w.iter().chain(&a).chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RBM parameters"));
        }
        Ok(Self {
            visible,
            hidden,
            w,
            a,
            b,
            domain: Domain::binary(visible)?,
        })
    }

    /// I.i.d. `N(0, scale^2)` weights and zero biases.
    pub fn random(visible: usize, hidden: usize, scale: f64, rng: &mut ChainRng) -> Result<Self> {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let w = (0..visible * hidden).map(|_| normal.sample(rng)).collect();
        Self::new(visible, hidden, w, vec![0.0; hidden], vec![0.0; visible])
    }

    pub fn visible(&self) -> usize {
        self.visible
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.a
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.b
    }

    fn hidden_preactivation(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.w[j * self.visible..(j + 1) * self.visible];
            *o = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.a[j];
        }
    }

    /// `p(h_j = 1 | x) = sigmoid(W x + a)_j`.
    pub fn hidden_probs(&self, x: &State) -> Vec<f64> {
        let xv = self.domain.embed(x);
        let mut pre = vec![0.0; self.hidden];
        self.hidden_preactivation(&xv, &mut pre);
        pre.into_iter().map(sigmoid).collect()
    }

    /// `p(x_i = 1 | h) = sigmoid(W^T h + b)_i`.
    pub fn visible_probs(&self, h: &[f64]) -> Vec<f64> {
        (0..self.visible)
            .map(|i| {
                let s: f64 = (0..self.hidden).map(|j| self.w[j * self.visible + i] * h[j]).sum();
                sigmoid(s + self.b[i])
            })
            .collect()
    }

    pub fn sample_hidden(&self, x: &State, rng: &mut ChainRng) -> Vec<f64> {
        self.hidden_probs(x)
            .into_iter()
            .map(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn sample_visible(&self, h: &[f64], rng: &mut ChainRng) -> State {
        State::new(
            self.visible_probs(h)
                .into_iter()
                .map(|p| u32::from(rng.random::<f64>() < p))
                .collect(),
        )
    }

    /// Unnormalized joint log-density `h^T W x + a^T h + b^T x`.
    pub fn joint_log_weight(&self, x: &State, h: &[f64]) -> f64 {
        let xv = self.domain.embed(x);
        let mut pre = vec![0.0; self.hidden];
        self.hidden_preactivation(&xv, &mut pre);
        let hx: f64 = pre.iter().zip(h).map(|(p, hj)| p * hj).sum();
        let bx: f64 = self.b.iter().zip(&xv).map(|(b, x)| b * x).sum();
        hx + bx
    }

    /// Train on binary rows with CD-k, starting from `N(0, init_scale^2)` weights.
    pub fn train_cd(data: &[State], hidden: usize, cfg: &CdConfig, rng: &mut ChainRng) -> Result<Self> {
        let first = data.first().ok_or(Error::Empty("RBM training data"))?;
        let visible = first.len();
        if cfg.batch_size == 0 || cfg.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("batch size and learning rate must be positive".into()));
        }
        let mut model = Self::random(visible, hidden, cfg.init_scale, rng)?;
        model.domain.check(first)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut grad_w = vec![0.0; visible * hidden];
        let mut grad_a = vec![0.0; hidden];
        let mut grad_b = vec![0.0; visible];
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for batch in order.chunks(cfg.batch_size) {
                grad_w.iter_mut().for_each(|g| *g = 0.0);
                grad_a.iter_mut().for_each(|g| *g = 0.0);
                grad_b.iter_mut().for_each(|g| *g = 0.0);
                for &n in batch {
                    let x0 = &data[n];
                    let ph0 = model.hidden_probs(x0);
                    let mut h: Vec<f64> = ph0
                        .iter()
                        .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                        .collect();
                    let mut xk = x0.clone();
                    let mut phk = ph0.clone();
                    for _ in 0..cfg.gibbs_steps.max(1) {
                        xk = model.sample_visible(&h, rng);
                        phk = model.hidden_probs(&xk);
                        h = phk
                            .iter()
                            .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                            .collect();
                    }
                    let v0 = model.domain.embed(x0);
                    let vk = model.domain.embed(&xk);
                    for j in 0..hidden {
                        for i in 0..visible {
                            grad_w[j * visible + i] += ph0[j] * v0[i] - phk[j] * vk[i];
                        }
                        grad_a[j] += ph0[j] - phk[j];
                    }
                    for i in 0..visible {
                        grad_b[i] += v0[i] - vk[i];
                    }
                }
                let scale = cfg.learning_rate / batch.len() as f64;
                model.w.iter_mut().zip(&grad_w).for_each(|(w, g)| *w += scale * g);
                model.a.iter_mut().zip(&grad_a).for_each(|(w, g)| *w += scale * g);
                model.b.iter_mut().zip(&grad_b).for_each(|(w, g)| *w += scale * g);
            }
        }
        Ok(model)
    }

    /// Text format: a line `hidden visible`, then `hidden` lines of `visible`
    /// weights, one line of `hidden` hidden biases, one line of `visible`
    /// visible biases. Values are whitespace separated.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.hidden, self.visible)?;
        for j in 0..self.hidden {
            let row = &self.w[j * self.visible..(j + 1) * self.visible];
            writeln!(out, "{}", join(row))?;
        }
        writeln!(out, "{}", join(&self.a))?;
        writeln!(out, "{}", join(&self.b))?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut text = String::new();
        for line in input.lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        let values: Vec<&str> = text.split_whitespace().collect();
        if values.len() < 2 {
            return Err(Error::Parse("missing RBM dimensions".into()));
        }
        let parse_dim = |s: Option<&&str>| -> Result<usize> {
            s.ok_or_else(|| Error::Parse("missing RBM dimensions".into()))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(e.to_string()))
        };
        let hidden = parse_dim(values.first())?;
        let visible = parse_dim(values.get(1))?;
        let nums = values[2..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{t}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        let expected = hidden * visible + hidden + visible;
        if nums.len() != expected {
            return Err(Error::Parse(format!(
                "expected {expected} values for a {hidden}x{visible} RBM, found {}",
                nums.len()
            )));
        }
        let (w, rest) = nums.split_at(hidden * visible);
        let (a, b) = rest.split_at(hidden);
        Self::new(visible, hidden, w.to_vec(), a.to_vec(), b.to_vec())
    }

    /// Binary format: magic `RBMW0001`, `hidden` and `visible` as little-endian
    /// u64, then W (row-major), a, b as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(self.hidden as u64).to_le_bytes())?;
        out.write_all(&(self.visible as u64).to_le_bytes())?;
        for v in self.w.iter().chain(&self.a).chain(&self.b) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("not an RBM weight file".into()));
        }
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let hidden = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let visible = u64::from_le_bytes(word) as usize;
        let count = hidden
            .checked_mul(visible)
            .and_then(|n| n.checked_add(hidden + visible))
            .ok_or_else(|| Error::Parse("RBM dimensions overflow".into()))?;
        let mut nums = Vec::with_capacity(count);
        for _ in 0..count {
            input.read_exact(&mut word)?;
            nums.push(f64::from_le_bytes(word));
        }
        let (w, rest) = nums.split_at(hidden * visible);
        let (a, b) = rest.split_at(hidden);
        Self::new(visible, hidden, w.to_vec(), a.to_vec(), b.to_vec())
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

/// Noisy copies of random binary prototypes.
///
/// `n_prototypes` patterns are drawn with each bit on with probability
/// `density`; every sample copies a uniformly chosen prototype and flips each
/// bit independently. Prototype `k` uses a flip rate spaced linearly over
/// `noise = (low, high)`.
pub fn synthetic_prototype_data(
    visible: usize,
    n_prototypes: usize,
    density: f64,
    noise: (f64, f64),
    n_samples: usize,
    rng: &mut ChainRng,
) -> Result<Vec<State>> {
    if n_prototypes == 0 || visible == 0 {
        return Err(Error::Empty("prototypes"));
    }
    let in_unit = |p: f64| (0.0..=1.0).contains(&p);
    if !in_unit(density) || !in_unit(noise.0) || !in_unit(noise.1) || noise.0 > noise.1 {
        return Err(Error::InvalidConfig(format!(
            "density {density} and noise range {noise:?} must lie in [0, 1]"
        )));
    }
    let prototypes: Vec<Vec<bool>> = (0..n_prototypes)
        .map(|_| (0..visible).map(|_| rng.random_bool(density)).collect())
        .collect();
    let rate = |k: usize| {
        if n_prototypes == 1 {
            noise.0
        } else {
            noise.0 + (noise.1 - noise.0) * k as f64 / (n_prototypes - 1) as f64
        }
    };
    Ok((0..n_samples)
        .map(|_| {
            let k = rng.random_range(0..n_prototypes);
            let flip = rate(k);
            State::new(
                prototypes[k]
                    .iter()
                    .map(|&bit| u32::from(bit != rng.random_bool(flip)))
                    .collect(),
            )
        })
        .collect())
}

impl EnergyModel for RbmModel {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn energy_at(&self, x: &[f64]) -> f64 {
        let mut total: f64 = self.b.iter().zip(x).map(|(b, v)| b * v).sum();
        for j in 0..self.hidden {
            let row = &self.w[j * self.visible..(j + 1) * self.visible];
            let pre = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.a[j];
            total += softplus(pre);
        }
        total
    }

    fn grad_at(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for j in 0..self.hidden {
            let row = &self.w[j * self.visible..(j + 1) * self.visible];
            let pre = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.a[j];
            let s = sigmoid(pre);
            out.iter_mut().zip(row).for_each(|(o, w)| *o += w * s);
        }
    }

    fn energy_grad_at(&self, x: &[f64], out: &mut [f64]) -> f64 {
        out.copy_from_slice(&self.b);
        let mut total: f64 = self.b.iter().zip(x).map(|(b, v)| b * v).sum();
        for j in 0..self.hidden {
            let row = &self.w[j * self.visible..(j + 1) * self.visible];
            let pre = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.a[j];
            total += softplus(pre);
            let s = sigmoid(pre);
            out.iter_mut().zip(row).for_each(|(o, w)| *o += w * s);
        }
        total
    }

    fn as_rbm(&self) -> Option<&RbmModel> {
        Some(self)
    }
}
