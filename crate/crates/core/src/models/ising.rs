use std::collections::BTreeSet;

use crate::domain::Domain;
use crate::energy::EnergyModel;
use crate::error::{Error, Result};

use super::log_quadratic::LogQuadraticModel;

/// How lattice spins are represented to the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinEncoding {
    /// Coordinates take values in `{-1, +1}` directly.
    Spin,
    /// Coordinates take values `x` in `{0, 1}` with spin `s = 2x - 1`.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub rows: usize,
    pub cols: usize,
    pub a: f64,
    pub b: f64,
    pub periodic: bool,
    pub encoding: SpinEncoding,
}

impl LatticeSpec {
    pub fn open(rows: usize, cols: usize, a: f64, b: f64) -> Self {
        Self {
            rows,
            cols,
            a,
            b,
            periodic: false,
            encoding: SpinEncoding::Spin,
        }
    }

    pub fn periodic(mut self, periodic: bool) -> Self {
        self.periodic = periodic;
        self
    }

    pub fn encoding(mut self, encoding: SpinEncoding) -> Self {
        self.encoding = encoding;
        self
    }
}

/// 2-D lattice Ising model `U(s) = a s^T J s + b sum(s)` with `J` the
/// lattice adjacency matrix.
///
/// With [`SpinEncoding::Binary`] the same energy is expressed in `x = (s+1)/2`,
/// which is still log-quadratic: `W = 4aJ`, `b_x = 2b 1 - 4a J 1`, plus a
/// constant offset so energies agree state for state.
#[derive(Debug, Clone)]
pub struct IsingLatticeModel {
    spec: LatticeSpec,
    edges: Vec<(usize, usize)>,
    quad: LogQuadraticModel,
}

/// Open-boundary spin lattice.
pub fn build_lattice_ising(rows: usize, cols: usize, a: f64, b: f64) -> Result<IsingLatticeModel> {
    IsingLatticeModel::new(LatticeSpec::open(rows, cols, a, b))
}

impl IsingLatticeModel {
    pub fn new(spec: LatticeSpec) -> Result<Self> {
        if spec.rows == 0 || spec.cols == 0 {
            return Err(Error::InvalidConfig("lattice sides must be at least 1".into()));
        }
        let d = spec.rows * spec.cols;
        let idx = |r: usize, c: usize| r * spec.cols + c;
        let mut edges = BTreeSet::new();
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let here = idx(r, c);
                let mut neighbours = Vec::with_capacity(2);
                if c + 1 < spec.cols {
                    neighbours.push(idx(r, c + 1));
                } else if spec.periodic {
                    neighbours.push(idx(r, 0));
                }
                if r + 1 < spec.rows {
                    neighbours.push(idx(r + 1, c));
                } else if spec.periodic {
                    neighbours.push(idx(0, c));
                }
                for n in neighbours {
                    // Wrapping a side of length <= 2 revisits an existing edge or the site itself.
                    if n != here {
                        edges.insert((here.min(n), here.max(n)));
                    }
                }
            }
        }
        let edges: Vec<(usize, usize)> = edges.into_iter().collect();
        let mut j = vec![0.0; d * d];
        for &(u, v) in &edges {
            j[u * d + v] = 1.0;
            j[v * d + u] = 1.0;
        }
        let quad = match spec.encoding {
            SpinEncoding::Spin => {
                let w = j.iter().map(|v| spec.a * v).collect();
                LogQuadraticModel::new(Domain::spin(d)?, w, vec![spec.b; d])?
            }
            SpinEncoding::Binary => {
                let w = j.iter().map(|v| 4.0 * spec.a * v).collect();
                let degree: Vec<f64> = (0..d).map(|i| j[i * d..(i + 1) * d].iter().sum()).collect();
                let b = degree.iter().map(|k| 2.0 * spec.b - 4.0 * spec.a * k).collect();
                let total_degree: f64 = degree.iter().sum();
                LogQuadraticModel::new(Domain::binary(d)?, w, b)?
                    .with_offset(spec.a * total_degree - spec.b * d as f64)
            }
        };
        Ok(Self { spec, edges, quad })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.rows * self.spec.cols
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Dense 0/1 adjacency matrix, row-major.
    pub fn adjacency(&self) -> Vec<f64> {
        let d = self.dim();
        let mut j = vec![0.0; d * d];
        for &(u, v) in &self.edges {
            j[u * d + v] = 1.0;
            j[v * d + u] = 1.0;
        }
        j
    }

    pub fn as_log_quadratic(&self) -> &LogQuadraticModel {
        &self.quad
    }

    pub fn into_log_quadratic(self) -> LogQuadraticModel {
        self.quad
    }

    pub fn lambda_min(&self) -> f64 {
        self.quad.lambda_min()
    }
}

impl EnergyModel for IsingLatticeModel {
    fn domain(&self) -> &Domain {
        self.quad.domain()
    }

    fn energy_at(&self, x: &[f64]) -> f64 {
        self.quad.energy_at(x)
    }

    fn grad_at(&self, x: &[f64], out: &mut [f64]) {
        self.quad.grad_at(x, out)
    }

    fn energy_grad_at(&self, x: &[f64], out: &mut [f64]) -> f64 {
        self.quad.energy_grad_at(x, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{enumerate_states, State};
    use crate::energy::finite_diff_grad;
    use crate::rng::seeded;
    use rand::Rng;

    fn spins(model: &IsingLatticeModel, s: &State) -> Vec<f64> {
        let x = model.domain().embed(s);
        match model.spec().encoding {
            SpinEncoding::Spin => x,
            SpinEncoding::Binary => x.iter().map(|v| 2.0 * v - 1.0).collect(),
        }
    }

    fn direct_energy(model: &IsingLatticeModel, s: &State) -> f64 {
        let sp = spins(model, s);
        let pair: f64 = model.edges().iter().map(|&(u, v)| sp[u] * sp[v]).sum();
        2.0 * model.spec().a * pair + model.spec().b * sp.iter().sum::<f64>()
    }

    #[test]
    fn edge_counts() {
        assert_eq!(build_lattice_ising(2, 2, 0.1, 0.2).unwrap().edges().len(), 4);
        assert_eq!(build_lattice_ising(5, 5, 0.1, 0.2).unwrap().edges().len(), 40);
        let periodic = IsingLatticeModel::new(LatticeSpec::open(5, 5, 0.1, 0.2).periodic(true)).unwrap();
        assert_eq!(periodic.edges().len(), 50);
        let small = IsingLatticeModel::new(LatticeSpec::open(2, 2, 0.1, 0.2).periodic(true)).unwrap();
        assert_eq!(small.edges().len(), 4);
    }

    #[test]
    fn single_site_is_pure_bias() {
        let m = build_lattice_ising(1, 1, 0.7, 0.2).unwrap();
        assert!(m.edges().is_empty());
        assert_eq!(m.adjacency(), vec![0.0]);
        let d = m.domain().clone();
        assert_eq!(m.energy(&d.state_from_values(&[1.0]).unwrap()), 0.2);
        assert_eq!(m.energy(&d.state_from_values(&[-1.0]).unwrap()), -0.2);
    }

    #[test]
    fn adjacency_is_symmetric_binary_zero_diagonal() {
        let m = build_lattice_ising(3, 4, 0.1, 0.2).unwrap();
        let d = m.dim();
        let j = m.adjacency();
        for i in 0..d {
            assert_eq!(j[i * d + i], 0.0);
            for k in 0..d {
                assert_eq!(j[i * d + k], j[k * d + i]);
                assert!(j[i * d + k] == 0.0 || j[i * d + k] == 1.0);
            }
        }
    }

    #[test]
    fn encodings_agree_with_direct_energy() {
        for periodic in [false, true] {
            for enc in [SpinEncoding::Spin, SpinEncoding::Binary] {
                let m = IsingLatticeModel::new(
                    LatticeSpec::open(3, 3, 0.13, -0.4).periodic(periodic).encoding(enc),
                )
                .unwrap();
                for s in enumerate_states(m.domain()).unwrap() {
                    let e = m.energy(&s);
                    assert!((e - direct_energy(&m, &s)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn binary_gradient_is_chain_rule_of_spin_gradient() {
        let spec = LatticeSpec::open(2, 3, 0.1, 0.2);
        let spin = IsingLatticeModel::new(spec).unwrap();
        let bin = IsingLatticeModel::new(spec.encoding(SpinEncoding::Binary)).unwrap();
        for s in enumerate_states(bin.domain()).unwrap() {
            let gs = spin.grad(&s);
            let gb = bin.grad(&s);
            for (a, b) in gs.iter().zip(gb.iter()) {
                assert!((2.0 * a - b).abs() < 1e-12);
            }
            for (a, b) in finite_diff_grad(&bin, &s, 1e-5).iter().zip(gb.iter()) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rotation_invariance_on_square_lattice() {
        let n = 4;
        let m = build_lattice_ising(n, n, 0.3, -0.1).unwrap();
        let mut rng = seeded(11);
        for _ in 0..50 {
            let levels: Vec<u32> = (0..n * n).map(|_| rng.random_range(0..2)).collect();
            let s = State::new(levels.clone());
            // (r, c) -> (c, n-1-r)
            let mut rotated = vec![0u32; n * n];
            for r in 0..n {
                for c in 0..n {
                    rotated[c * n + (n - 1 - r)] = levels[r * n + c];
                }
            }
            let e1 = m.energy(&s);
            let e2 = m.energy(&State::new(rotated));
            assert!((e1 - e2).abs() < 1e-12);
        }
    }
}
