//! Residuals and diagonal noise models for the factor kinds in the dual-lane graph.
//!
//! Every residual follows the convention `log(measured^-1 * predicted)` and every
//! Jacobian is taken with respect to a right perturbation `x <- x * exp(delta)`.
//! Residuals are carried in a `Vector6`; scalar factors only use row 0 and leave
//! the remaining rows at zero, so they contribute nothing to the normal equations.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{between, inverse, log, compose, Pose3, Twist};

pub type NodeId = usize;

/// Central-difference step for numeric Jacobians.
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Diagonal noise model given as standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalNoise {
    sigmas: Vec<f64>,
}

impl DiagonalNoise {
    pub fn new(sigmas: &[f64]) -> Result<Self> {
        if sigmas.is_empty() || sigmas.len() > 6 {
            return Err(Error::Validation(format!(
                "noise model must have 1..=6 sigmas, got {}",
                sigmas.len()
            )));
        }
        if let Some((i, s)) = sigmas
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > 0.0))
        {
            return Err(Error::Validation(format!(
                "sigma[{i}] = {s} must be positive and finite"
            )));
        }
        Ok(Self {
            sigmas: sigmas.to_vec(),
        })
    }

    pub fn isotropic(dim: usize, sigma: f64) -> Result<Self> {
        Self::new(&vec![sigma; dim])
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn dim(&self) -> usize {
        self.sigmas.len()
    }

    /// `r[i] / sigma[i]` on the first `dim` rows; trailing rows are zeroed.
    pub fn whiten(&self, r: &Vector6<f64>) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        for (i, s) in self.sigmas.iter().enumerate() {
            out[i] = r[i] / s;
        }
        out
    }

    /// Same noise model with every sigma multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.sigmas.iter().map(|s| s * c).collect::<Vec<_>>())
    }
}

/// Per-axis sigmas of the cross-lane coupling factor: tight on z, loose elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct CouplingSigmas([f64; 6]);

impl CouplingSigmas {
    pub const DEFAULT: [f64; 6] = [10.0, 10.0, 0.02, 10.0, 10.0, 10.0];

    pub fn new(sigmas: [f64; 6]) -> Result<Self> {
        DiagonalNoise::new(&sigmas)?;
        let z = sigmas[2];
        if sigmas
            .iter()
            .enumerate()
            .any(|(i, s)| i != 2 && *s <= z)
        {
            return Err(Error::Validation(format!(
                "coupling sigma on z ({z}) must be strictly smaller than every other sigma"
            )));
        }
        Ok(Self(sigmas))
    }

    pub fn sigmas(&self) -> [f64; 6] {
        self.0
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }
}

impl Default for CouplingSigmas {
    fn default() -> Self {
        Self(Self::DEFAULT)
    }
}

impl TryFrom<[f64; 6]> for CouplingSigmas {
    type Error = Error;

    fn try_from(value: [f64; 6]) -> Result<Self> {
        Self::new(value)
    }
}

impl From<CouplingSigmas> for [f64; 6] {
    fn from(value: CouplingSigmas) -> Self {
        value.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorFactor {
    pub node: NodeId,
    pub measured: Pose3,
    pub noise: DiagonalNoise,
}

impl PriorFactor {
    pub fn new(node: NodeId, measured: Pose3, noise: DiagonalNoise) -> Result<Self> {
        expect_dim(&noise, 6, "prior")?;
        Ok(Self {
            node,
            measured,
            noise,
        })
    }

    pub fn residual(&self, x: &Pose3) -> Twist {
        log(&between(&self.measured, x))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetweenFactor {
    pub node_a: NodeId,
    pub node_b: NodeId,
    /// Relative pose from `node_a` to `node_b`.
    pub measured: Pose3,
    pub noise: DiagonalNoise,
}

impl BetweenFactor {
    pub fn new(node_a: NodeId, node_b: NodeId, measured: Pose3, noise: DiagonalNoise) -> Result<Self> {
        if node_a == node_b {
            return Err(Error::Construction(format!(
                "between factor connects node {node_a} to itself"
            )));
        }
        expect_dim(&noise, 6, "between")?;
        Ok(Self {
            node_a,
            node_b,
            measured,
            noise,
        })
    }

    pub fn residual(&self, x_a: &Pose3, x_b: &Pose3) -> Twist {
        log(&compose(&inverse(&self.measured), &between(x_a, x_b)))
    }
}

/// Unary factor on the absolute z of a node.
#[derive(Clone, Debug, PartialEq)]
pub struct ElevationPriorFactor {
    pub node: NodeId,
    pub measured_z: f64,
    pub noise: DiagonalNoise,
}

impl ElevationPriorFactor {
    pub fn new(node: NodeId, measured_z: f64, sigma: f64) -> Result<Self> {
        if !measured_z.is_finite() {
            return Err(Error::Validation(format!("elevation {measured_z} is not finite")));
        }
        Ok(Self {
            node,
            measured_z,
            noise: DiagonalNoise::new(&[sigma])?,
        })
    }

    pub fn residual(&self, x: &Pose3) -> f64 {
        x.translation().z - self.measured_z
    }
}

fn expect_dim(noise: &DiagonalNoise, dim: usize, kind: &str) -> Result<()> {
    if noise.dim() != dim {
        return Err(Error::Validation(format!(
            "{kind} factor needs a {dim}-dim noise model, got {}",
            noise.dim()
        )));
    }
    Ok(())
}

/// Identity between factor tying a LiDAR-lane node to its kinematic-lane twin.
pub fn make_coupling_factor(x_id: NodeId, y_id: NodeId, sigmas: &CouplingSigmas) -> Result<BetweenFactor> {
    if x_id == y_id {
        return Err(Error::Construction(format!(
            "coupling factor needs two distinct nodes, got {x_id} twice"
        )));
    }
    BetweenFactor::new(
        x_id,
        y_id,
        Pose3::identity(),
        DiagonalNoise::new(&sigmas.sigmas())?,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    Prior(PriorFactor),
    Between(BetweenFactor),
    Elevation(ElevationPriorFactor),
}

impl From<PriorFactor> for Factor {
    fn from(f: PriorFactor) -> Self {
        Factor::Prior(f)
    }
}

impl From<BetweenFactor> for Factor {
    fn from(f: BetweenFactor) -> Self {
        Factor::Between(f)
    }
}

impl From<ElevationPriorFactor> for Factor {
    fn from(f: ElevationPriorFactor) -> Self {
        Factor::Elevation(f)
    }
}

/// One or two node ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Keys {
    ids: [NodeId; 2],
    len: usize,
}

impl Keys {
    fn unary(id: NodeId) -> Self {
        Self { ids: [id, id], len: 1 }
    }
}

impl std::ops::Deref for Keys {
    type Target = [NodeId];

    fn deref(&self) -> &[NodeId] {
        &self.ids[..self.len]
    }
}

/// Whitened residual and per-node Jacobians of one factor.
#[derive(Clone, Debug)]
pub struct Linearized {
    pub residual: Vector6<f64>,
    pub jacobians: [Matrix6<f64>; 2],
}

impl Factor {
    /// Node ids this factor reads, in argument order.
    pub fn keys(&self) -> Keys {
        match self {
            Factor::Prior(f) => Keys::unary(f.node),
            Factor::Elevation(f) => Keys::unary(f.node),
            Factor::Between(f) => Keys {
                ids: [f.node_a, f.node_b],
                len: 2,
            },
        }
    }

    pub fn noise(&self) -> &DiagonalNoise {
        match self {
            Factor::Prior(f) => &f.noise,
            Factor::Between(f) => &f.noise,
            Factor::Elevation(f) => &f.noise,
        }
    }

    pub fn dim(&self) -> usize {
        self.noise().dim()
    }

    /// Raw (unwhitened) residual, zero-padded to six rows.
    pub fn raw_residual(&self, poses: &[Pose3]) -> Vector6<f64> {
        match self {
            Factor::Prior(f) => f.residual(&poses[0]).to_vector(),
            Factor::Between(f) => f.residual(&poses[0], &poses[1]).to_vector(),
            Factor::Elevation(f) => {
                let mut r = Vector6::zeros();
                r[0] = f.residual(&poses[0]);
                r
            }
        }
    }

    pub fn whitened_residual(&self, poses: &[Pose3]) -> Vector6<f64> {
        self.noise().whiten(&self.raw_residual(poses))
    }

    /// Squared Mahalanobis norm of the residual.
    pub fn cost(&self, poses: &[Pose3]) -> f64 {
        self.whitened_residual(poses).norm_squared()
    }

    /// Whitened residual plus central-difference Jacobians with respect to a right
    /// perturbation of each node.
    pub fn linearize(&self, poses: &[Pose3]) -> Linearized {
        let residual = self.whitened_residual(poses);
        let mut jacobians = [Matrix6::zeros(); 2];
        let mut perturbed = [Pose3::identity(); 2];
        perturbed[..poses.len()].copy_from_slice(poses);
        for (slot, jac) in jacobians.iter_mut().enumerate().take(poses.len()) {
            for j in 0..6 {
                let mut delta = [0.0; 6];
                delta[j] = JACOBIAN_STEP;
                perturbed[slot] = poses[slot].retract(&Twist::from_slice(&delta));
                let plus = self.whitened_residual(&perturbed[..poses.len()]);
                delta[j] = -JACOBIAN_STEP;
                perturbed[slot] = poses[slot].retract(&Twist::from_slice(&delta));
                let minus = self.whitened_residual(&perturbed[..poses.len()]);
                jac.set_column(j, &((plus - minus) / (2.0 * JACOBIAN_STEP)));
            }
            perturbed[slot] = poses[slot];
        }
        Linearized {
            residual,
            jacobians,
        }
    }

    /// Returns a copy with every sigma scaled by `c`.
    pub fn with_scaled_noise(&self, c: f64) -> Result<Factor> {
        Ok(match self {
            Factor::Prior(f) => Factor::Prior(PriorFactor {
                noise: f.noise.scaled(c)?,
                ..f.clone()
            }),
            Factor::Between(f) => Factor::Between(BetweenFactor {
                noise: f.noise.scaled(c)?,
                ..f.clone()
            }),
            Factor::Elevation(f) => Factor::Elevation(ElevationPriorFactor {
                noise: f.noise.scaled(c)?,
                ..f.clone()
            }),
        })
    }
}
