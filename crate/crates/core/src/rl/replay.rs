use std::collections::VecDeque;

use ndarray::Array2;
use rand::Rng as _;

use super::stack::{Blended, IntrinsicStack, RawIntrinsic, TransitionView};
use crate::error::{Error, Result};
use crate::numerics::{Rng, VecNorm};

/// Raw stored features of one environment step. Intrinsic rewards are never
/// stored; they are recomputed from these with the current models.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_extrinsic: Vec<f64>,
    pub extrinsic_reward: f64,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayStore {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, count: usize, rng: &mut Rng) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..count).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

/// Recomputed rewards for a sampled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Recomputed {
    pub raw: RawIntrinsic,
    pub blended: Blended,
}

/// Recomputes intrinsic rewards of stored transitions with the current
/// model parameters and normalisation statistics, then re-blends them with
/// the stored extrinsic rewards. Reads only; repeated calls agree bitwise.
pub fn recompute_intrinsic(store: &ReplayStore, indices: &[usize], stack: &IntrinsicStack, obs_norm: &VecNorm) -> Result<Recomputed> {
    let first = indices
        .first()
        .and_then(|&i| store.get(i))
        .ok_or_else(|| Error::Config("no stored transitions selected".into()))?;
    let (sd, ad, ed) = (first.state.len(), first.action.len(), first.next_extrinsic.len());
    let mut states = Array2::zeros((indices.len(), sd));
    let mut actions = Array2::zeros((indices.len(), ad));
    let mut next_ex = Array2::zeros((indices.len(), ed));
    let mut extrinsic = Vec::with_capacity(indices.len());
    for (r, &i) in indices.iter().enumerate() {
        let t = store.get(i).ok_or_else(|| Error::Config(format!("replay index {i} out of range")))?;
        states.row_mut(r).assign(&ndarray::aview1(&t.state));
        actions.row_mut(r).assign(&ndarray::aview1(&t.action));
        next_ex.row_mut(r).assign(&ndarray::aview1(&t.next_extrinsic));
        extrinsic.push(t.extrinsic_reward);
    }
    let states = obs_norm.normalize_rows(states.view());
    let next_ex = obs_norm.columns(sd - ed..sd).normalize_rows(next_ex.view());
    let view = TransitionView {
        states: states.view(),
        actions: actions.view(),
        next_extrinsic: next_ex.view(),
    };
    let raw = stack.raw(&view)?;
    let blended = stack.blend(&raw, &extrinsic);
    Ok(Recomputed { raw, blended })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: f64) -> Transition {
        Transition {
            state: vec![v; 3],
            action: vec![v],
            next_extrinsic: vec![v],
            extrinsic_reward: v,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut s = ReplayStore::new(2).unwrap();
        s.push(t(1.0));
        s.push(t(2.0));
        s.push(t(3.0));
        assert_eq!(s.len(), 2);
        assert_eq!(s.get(0).unwrap().extrinsic_reward, 2.0);
        assert_eq!(s.get(1).unwrap().extrinsic_reward, 3.0);
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(ReplayStore::new(0).is_err());
    }
}
