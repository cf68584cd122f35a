use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing time nodes `0 = t_0 < ... < t_n = T`.
///
/// Cloning is cheap; trajectories of one ensemble share the same node buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    nodes: Arc<[f64]>,
}

impl TimeGrid {
    /// Uniform grid `t_i = i * horizon / steps`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|i| i as f64 * horizon / steps as f64)
            .collect();
        nodes[steps] = horizon;
        Ok(Self {
            nodes: nodes.into(),
        })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("time grid needs at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::invalid(format!("first node must be 0, got {}", nodes[0])));
        }
        if let Some(w) = nodes.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::invalid(format!(
                "time nodes must be strictly increasing and finite ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self {
            nodes: nodes.into(),
        })
    }

    /// Number of steps `n` (one less than the node count).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn time(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// `t_{i+1} - t_i`.
    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    /// Index of the node equal to `t`. Only exact node times are accepted.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let i = self.nodes.partition_point(|&s| s < t);
        if i < self.nodes.len() && self.nodes[i] == t {
            Ok(i)
        } else {
            Err(Error::invalid(format!("time {t} is not a grid node")))
        }
    }

    pub fn same_nodes(&self, other: &TimeGrid) -> bool {
        Arc::ptr_eq(&self.nodes, &other.nodes) || self.nodes == other.nodes
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        TimeGrid::from_nodes(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.nodes.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_quarter_grid() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn fine_grids() {
        let g = TimeGrid::uniform(1.0, 1000).unwrap();
        assert_eq!(g.len(), 1001);
        assert!((g.dt(0) - 0.001).abs() < 1e-15);
        let g = TimeGrid::uniform(10.0, 10_000).unwrap();
        assert_eq!(g.horizon(), 10.0);
        assert!((g.dt(9_999) - 0.001).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TimeGrid::uniform(0.0, 3).is_err());
        assert!(TimeGrid::uniform(-1.0, 3).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 0.5]).is_err());
    }

    #[test]
    fn node_lookup_is_exact() {
        let g = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.index_of(0.75).unwrap(), 3);
        assert!(g.index_of(0.7).is_err());
    }
}
