use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pairwise-distinct collocation nodes inside a bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    dim: usize,
    /// Row-major, one node per row.
    nodes: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl CollocationSet {
    pub fn new(dim: usize, nodes: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if dim == 0 || nodes.is_empty() || !nodes.len().is_multiple_of(dim) {
            return Err(Error::invalid("node array does not match the dimension"));
        }
        if lo.len() != dim || hi.len() != dim || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::invalid("bounding box must satisfy lo <= hi in every dimension"));
        }
        let set = Self { dim, nodes, lo, hi };
        for j in 0..set.len() {
            if !set.contains(set.node(j)) {
                return Err(Error::invalid(format!("node {j} lies outside the bounding box")));
            }
        }
        if set.len() > 1 && !(set.min_pairwise_distance() > 0.0) {
            return Err(Error::invalid("collocation nodes must be pairwise distinct"));
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                let d2: f64 = self
                    .node(a)
                    .iter()
                    .zip(self.node(b))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                best = best.min(d2);
            }
        }
        best.sqrt()
    }
}

/// Tensor grid with `points_per_dim` equispaced points per axis, endpoints
/// included. The first axis varies slowest.
pub fn build_collocation_grid(lo: &[f64], hi: &[f64], points_per_dim: usize) -> Result<CollocationSet> {
    let dim = lo.len();
    if dim == 0 || hi.len() != dim {
        return Err(Error::invalid("box bounds must have matching, positive length"));
    }
    if let Some(i) = (0..dim).find(|&i| !(lo[i] < hi[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
        return Err(Error::invalid(format!(
            "degenerate box in dimension {i}: [{}, {}]",
            lo[i], hi[i]
        )));
    }
    if points_per_dim < 2 {
        return Err(Error::invalid("need at least two points per dimension"));
    }
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let m = points_per_dim - 1;
            (0..points_per_dim)
                .map(|p| {
                    if p == m {
                        hi[i]
                    } else {
                        lo[i] + (hi[i] - lo[i]) * p as f64 / m as f64
                    }
                })
                .collect()
        })
        .collect();
    let total = points_per_dim.pow(dim as u32);
    let mut nodes = Vec::with_capacity(total * dim);
    for flat in 0..total {
        let mut rem = flat;
        let mut idx = vec![0; dim];
        for i in (0..dim).rev() {
            idx[i] = rem % points_per_dim;
            rem /= points_per_dim;
        }
        nodes.extend(idx.iter().enumerate().map(|(i, &p)| axes[i][p]));
    }
    CollocationSet::new(dim, nodes, lo.to_vec(), hi.to_vec())
}
