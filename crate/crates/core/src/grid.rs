use crate::error::{Error, Result};

/// Default node count for solve grids.
pub const DEFAULT_NODES: usize = 101;

/// Strictly increasing time nodes with exact endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// `count` uniform nodes; the endpoints are stored exactly as given.
    pub fn uniform(t0: f64, tf: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes, got {count}")));
        }
        if !(t0.is_finite() && tf.is_finite()) || t0 >= tf {
            return Err(Error::InvalidGrid(format!("require t0 < tf, got [{t0}, {tf}]")));
        }
        let last = count - 1;
        let span = tf - t0;
        let mut nodes: Vec<f64> = (0..count)
            .map(|i| t0 + span * (i as f64) / (last as f64))
            .collect();
        nodes[last] = tf;
        Self::from_nodes(nodes)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite node".into()));
        }
        if let Some(i) = nodes.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "nodes not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.nodes[0]
    }

    pub fn tf(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Length of interval `i`, i.e. `nodes[i + 1] - nodes[i]`.
    pub fn step(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Index of the node equal to `t` (up to rounding), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * (1.0 + t.abs());
        let i = self.nodes.partition_point(|&s| s < t - tol);
        (i < self.nodes.len() && (self.nodes[i] - t).abs() <= tol).then_some(i)
    }

    pub fn require_index(&self, t: f64) -> Result<usize> {
        self.index_of(t).ok_or(Error::NotOnGrid(t))
    }

    /// Interval `i` with `nodes[i] <= t < nodes[i + 1]`, clamped to the valid range.
    pub fn interval_containing(&self, t: f64) -> usize {
        let i = self.nodes.partition_point(|&s| s <= t);
        i.saturating_sub(1).min(self.intervals() - 1)
    }

    /// Grid with every interval split into `factor` equal pieces.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidGrid("refinement factor must be positive".into()));
        }
        let mut nodes = Vec::with_capacity(self.intervals() * factor + 1);
        for w in self.nodes.windows(2) {
            for j in 0..factor {
                nodes.push(w[0] + (w[1] - w[0]) * (j as f64) / (factor as f64));
            }
        }
        nodes.push(self.tf());
        Self::from_nodes(nodes)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.nodes == other.nodes
    }
}
