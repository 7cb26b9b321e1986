//! Factorized finite domains and the states that live in them.
//!
//! A [`State`] stores one level index per coordinate. The real-valued
//! coordinates seen by energy models come from [`Domain::embed`]: binary
//! levels map to `{0, 1}`, spin levels to `{-1, +1}`, categorical levels to
//! `{0, .., S-1}`, and one-hot levels to unit vectors of length `S`.

use std::fmt;

use crate::error::{Error, Result};

/// Default cap on the number of states that may be enumerated.
pub const DEFAULT_STATE_CAP: u128 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainKind {
    Binary01,
    SpinPm1,
    Categorical(usize),
    OneHot(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Domain {
    kind: DomainKind,
    dim: usize,
}

impl Domain {
    pub fn new(kind: DomainKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDomain("dimension must be at least 1".into()));
        }
        match kind {
            DomainKind::Categorical(s) | DomainKind::OneHot(s) if s < 2 => {
                return Err(Error::InvalidDomain(format!(
                    "categorical domains need at least 2 levels, got {s}"
                )))
            }
            DomainKind::Categorical(s) | DomainKind::OneHot(s) if s > u32::MAX as usize => {
                return Err(Error::InvalidDomain(format!("too many levels: {s}")))
            }
            _ => {}
        }
        Ok(Self { kind, dim })
    }

    pub fn binary(dim: usize) -> Result<Self> {
        Self::new(DomainKind::Binary01, dim)
    }

    pub fn spin(dim: usize) -> Result<Self> {
        Self::new(DomainKind::SpinPm1, dim)
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of values each coordinate can take.
    pub fn levels(&self) -> usize {
        match self.kind {
            DomainKind::Binary01 | DomainKind::SpinPm1 => 2,
            DomainKind::Categorical(s) | DomainKind::OneHot(s) => s,
        }
    }

    pub fn is_two_level(&self) -> bool {
        matches!(self.kind, DomainKind::Binary01 | DomainKind::SpinPm1)
    }

    pub fn is_one_hot(&self) -> bool {
        matches!(self.kind, DomainKind::OneHot(_))
    }

    /// Length of the real vector produced by [`Domain::embed`].
    pub fn embed_dim(&self) -> usize {
        match self.kind {
            DomainKind::OneHot(s) => self.dim * s,
            _ => self.dim,
        }
    }

    /// Scalar value of a level. Not meaningful for one-hot domains, where it
    /// returns the level index.
    pub fn level_value(&self, level: u32) -> f64 {
        match self.kind {
            DomainKind::SpinPm1 => {
                if level == 0 {
                    -1.0
                } else {
                    1.0
                }
            }
            _ => level as f64,
        }
    }

    /// Squared Euclidean distance in embedding space between two levels of one coordinate.
    pub fn level_sq_dist(&self, from: u32, to: u32) -> f64 {
        if from == to {
            return 0.0;
        }
        match self.kind {
            DomainKind::OneHot(_) => 2.0,
            _ => {
                let d = self.level_value(to) - self.level_value(from);
                d * d
            }
        }
    }

    /// Total number of states, or `None` if it overflows `u128`.
    pub fn num_states(&self) -> Option<u128> {
        (self.levels() as u128).checked_pow(self.dim.try_into().ok()?)
    }

    pub fn check(&self, state: &State) -> Result<()> {
        if state.len() != self.dim {
            return Err(Error::InvalidState(format!(
                "expected {} coordinates, got {}",
                self.dim,
                state.len()
            )));
        }
        let s = self.levels() as u32;
        if let Some((i, l)) = state.levels().iter().enumerate().find(|(_, &l)| l >= s) {
            return Err(Error::InvalidState(format!(
                "coordinate {i} has level {l}, domain has {s} levels"
            )));
        }
        Ok(())
    }

    /// Build a state from scalar coordinate values (`0/1`, `-1/+1` or `0..S`).
    pub fn state_from_values(&self, values: &[f64]) -> Result<State> {
        if values.len() != self.dim {
            return Err(Error::InvalidState(format!(
                "expected {} values, got {}",
                self.dim,
                values.len()
            )));
        }
        let levels = values
            .iter()
            .map(|&v| match self.kind {
                DomainKind::Binary01 if v == 0.0 || v == 1.0 => Ok(v as u32),
                DomainKind::SpinPm1 if v == -1.0 => Ok(0),
                DomainKind::SpinPm1 if v == 1.0 => Ok(1),
                DomainKind::Categorical(s) | DomainKind::OneHot(s)
                    if v >= 0.0 && v.fract() == 0.0 && (v as usize) < s =>
                {
                    Ok(v as u32)
                }
                _ => Err(Error::InvalidState(format!(
                    "value {v} is not in {:?}",
                    self.kind
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(State::new(levels))
    }

    pub fn embed(&self, state: &State) -> Vec<f64> {
        let mut out = vec![0.0; self.embed_dim()];
        self.embed_into(state, &mut out);
        out
    }

    pub fn embed_into(&self, state: &State, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.embed_dim());
        match self.kind {
            DomainKind::OneHot(s) => {
                out.iter_mut().for_each(|x| *x = 0.0);
                for (i, &l) in state.levels().iter().enumerate() {
                    out[i * s + l as usize] = 1.0;
                }
            }
            _ => {
                for (x, &l) in out.iter_mut().zip(state.levels()) {
                    *x = self.level_value(l);
                }
            }
        }
    }

    /// Lexicographic index of a state (first coordinate most significant).
    pub fn index_of(&self, state: &State) -> usize {
        let s = self.levels();
        state
            .levels()
            .iter()
            .fold(0usize, |acc, &l| acc * s + l as usize)
    }

    pub fn state_at(&self, mut index: usize) -> State {
        let s = self.levels();
        let mut levels = vec![0u32; self.dim];
        for slot in levels.iter_mut().rev() {
            *slot = (index % s) as u32;
            index /= s;
        }
        State::new(levels)
    }

    /// Every state in lexicographic order, provided the count is within `cap`.
    pub fn enumerate(&self, cap: u128) -> Result<StateIter> {
        let count = self.num_states().unwrap_or(u128::MAX);
        if count > cap {
            return Err(Error::StateCapExceeded { count, cap });
        }
        Ok(StateIter {
            levels: self.levels() as u32,
            next: Some(vec![0; self.dim]),
        })
    }
}

/// Enumerate all states of `domain` under the default cap.
pub fn enumerate_states(domain: &Domain) -> Result<StateIter> {
    domain.enumerate(DEFAULT_STATE_CAP)
}

/// Odometer-style iterator over a domain.
#[derive(Debug, Clone)]
pub struct StateIter {
    levels: u32,
    next: Option<Vec<u32>>,
}

impl Iterator for StateIter {
    type Item = State;

    fn next(&mut self) -> Option<State> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut carry = true;
        for slot in succ.iter_mut().rev() {
            *slot += 1;
            if *slot == self.levels {
                *slot = 0;
            } else {
                carry = false;
                break;
            }
        }
        if !carry {
            self.next = Some(succ);
        }
        Some(State::new(current))
    }
}

/// A point of a factorized discrete domain, stored as per-coordinate level indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    levels: Vec<u32>,
}

impl State {
    pub fn new(levels: Vec<u32>) -> Self {
        Self { levels }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0; dim])
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [u32] {
        &mut self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn hamming(&self, other: &State) -> usize {
        self.levels
            .iter()
            .zip(other.levels.iter())
            .filter(|(a, b)| a != b)
            .count()
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, l) in self.levels.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn binary_pairs_in_lexicographic_order() {
        let d = Domain::binary(2).unwrap();
        let states: Vec<Vec<f64>> = enumerate_states(&d).unwrap().map(|s| d.embed(&s)).collect();
        assert_eq!(
            states,
            vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]
        );
    }

    #[test]
    fn spin_single_coordinate() {
        let d = Domain::spin(1).unwrap();
        let states: Vec<Vec<f64>> = enumerate_states(&d).unwrap().map(|s| d.embed(&s)).collect();
        assert_eq!(states, vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn categorical_count_and_distinctness() {
        let d = Domain::new(DomainKind::Categorical(3), 2).unwrap();
        let states: Vec<State> = enumerate_states(&d).unwrap().collect();
        assert_eq!(states.len(), 9);
        let unique: HashSet<_> = states.iter().cloned().collect();
        assert_eq!(unique.len(), 9);
        for (i, s) in states.iter().enumerate() {
            assert_eq!(d.index_of(s), i);
            assert_eq!(&d.state_at(i), s);
        }
    }

    #[test]
    fn cap_exceeded_is_an_error() {
        let d = Domain::binary(30).unwrap();
        match d.enumerate(DEFAULT_STATE_CAP) {
            Err(Error::StateCapExceeded { count, cap }) => {
                assert_eq!(count, 1 << 30);
                assert_eq!(cap, DEFAULT_STATE_CAP);
            }
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_domains() {
        assert!(Domain::binary(0).is_err());
        assert!(Domain::new(DomainKind::Categorical(1), 3).is_err());
        assert!(Domain::new(DomainKind::OneHot(0), 3).is_err());
    }

    #[test]
    fn one_hot_embedding() {
        let d = Domain::new(DomainKind::OneHot(3), 2).unwrap();
        let s = State::new(vec![2, 0]);
        assert_eq!(d.embed(&s), vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(d.level_sq_dist(0, 2), 2.0);
        assert_eq!(d.level_sq_dist(1, 1), 0.0);
    }

    #[test]
    fn state_validation() {
        let d = Domain::spin(3).unwrap();
        assert!(d.check(&State::new(vec![0, 1, 1])).is_ok());
        assert!(d.check(&State::new(vec![0, 2, 1])).is_err());
        assert!(d.check(&State::new(vec![0, 1])).is_err());
        let s = d.state_from_values(&[-1.0, 1.0, -1.0]).unwrap();
        assert_eq!(s.levels(), &[0, 1, 0]);
        assert!(d.state_from_values(&[0.0, 1.0, 1.0]).is_err());
        assert_eq!(d.level_sq_dist(0, 1), 4.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn enumeration_yields_every_state_once(levels in 2usize..5, dim in 1usize..6) {
                let d = Domain::new(DomainKind::Categorical(levels), dim).unwrap();
                let states: Vec<State> = enumerate_states(&d).unwrap().collect();
                prop_assert_eq!(states.len() as u128, d.num_states().unwrap());
                let unique: HashSet<_> = states.iter().collect();
                prop_assert_eq!(unique.len(), states.len());
                prop_assert!(states.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
