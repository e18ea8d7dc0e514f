use serde::{Deserialize, Serialize};

use crate::vec2::Vec2;

/// Overlay (MAP) kinematic state. Failed MAPs keep their last position and
/// velocity but take no further part in the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapState {
    pub q: Vec<Vec2>,
    pub p: Vec<Vec2>,
    pub active: Vec<bool>,
}

impl MapState {
    pub fn new(q: Vec<Vec2>, p: Vec<Vec2>) -> Self {
        assert_eq!(q.len(), p.len(), "positions and velocities must align");
        let active = vec![true; q.len()];
        Self { q, p, active }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Original ids of the active MAPs, ascending.
    pub fn active_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.active[i]).collect()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_positions(&self) -> Vec<Vec2> {
        self.q
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(&q, _)| q)
            .collect()
    }
}

/// Underlay (MSD) positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdState {
    pub y: Vec<Vec2>,
}

impl MsdState {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}
