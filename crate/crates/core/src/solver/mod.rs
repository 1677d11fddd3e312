//! Factor-graph container and Levenberg-Marquardt optimization on SE(3).

mod linear;
mod lm;

use std::collections::BTreeMap;

pub use linear::{linearize, NormalEquations};
pub use lm::{incremental_update, optimize, SolveStats, SolverSettings};

use crate::error::{Error, Result};
use crate::factors::{Factor, NodeId};
use crate::geometry::Pose3;

/// Ordered list of factors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Graph {
    factors: Vec<Factor>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, factor: impl Into<Factor>) {
        self.factors.push(factor.into());
    }

    pub fn extend(&mut self, factors: impl IntoIterator<Item = Factor>) {
        self.factors.extend(factors);
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Keeps only the factors for which `keep` returns true.
    pub fn retain(&mut self, keep: impl FnMut(&Factor) -> bool) {
        self.factors.retain(keep);
    }

    /// Distinct node ids referenced by any factor, ascending.
    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.factors.iter().flat_map(|f| f.keys().to_vec()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Sum of squared whitened residuals.
    pub fn total_cost(&self, values: &Values) -> Result<f64> {
        let mut cost = 0.0;
        for factor in &self.factors {
            cost += factor.cost(&values.gather(factor)?);
        }
        Ok(cost)
    }
}

/// Assignment of poses to node ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Values {
    poses: BTreeMap<NodeId, Pose3>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a pose; fails if the id is already assigned.
    pub fn insert(&mut self, id: NodeId, pose: Pose3) -> Result<()> {
        if self.poses.contains_key(&id) {
            return Err(Error::DuplicateNode(id));
        }
        self.poses.insert(id, pose);
        Ok(())
    }

    /// Inserts or overwrites a pose.
    pub fn set(&mut self, id: NodeId, pose: Pose3) {
        self.poses.insert(id, pose);
    }

    pub fn get(&self, id: NodeId) -> Result<&Pose3> {
        self.poses.get(&id).ok_or(Error::MissingNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.poses.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Pose3)> {
        self.poses.iter().map(|(k, v)| (*k, v))
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.poses.keys().copied()
    }

    /// Poses of the factor's keys, in key order.
    pub(crate) fn gather(&self, factor: &Factor) -> Result<Vec<Pose3>> {
        factor.keys().iter().map(|id| self.get(*id).copied()).collect()
    }

    /// Largest [`Pose3::max_abs_diff`] over ids present in both assignments.
    pub fn max_abs_diff(&self, other: &Values) -> f64 {
        self.poses
            .iter()
            .filter_map(|(id, p)| other.poses.get(id).map(|q| p.max_abs_diff(q)))
            .fold(0.0, f64::max)
    }
}

impl FromIterator<(NodeId, Pose3)> for Values {
    fn from_iter<I: IntoIterator<Item = (NodeId, Pose3)>>(iter: I) -> Self {
        Self {
            poses: iter.into_iter().collect(),
        }
    }
}

/// Free-function form of [`Graph::total_cost`].
pub fn total_cost(graph: &Graph, values: &Values) -> Result<f64> {
    graph.total_cost(values)
}
