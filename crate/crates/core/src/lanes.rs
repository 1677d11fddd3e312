//! Construction of the three graph variants from timestamped odometry streams.
//!
//! * `baseline`: the LiDAR lane alone, a chain of between factors anchored by a
//!   full prior on the first keyframe.
//! * `serial`: the baseline chain with leg-odometry between factors and
//!   elevation priors attached directly to the LiDAR nodes.
//! * `parallel`: a second chain of kinematic nodes `y_k` carrying the
//!   leg-odometry factors, tied to each `x_k` by an identity coupling factor
//!   that is tight on z only.
//!
//! Whatever the variant, the published trajectory is read from the `x_k` nodes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{
    make_coupling_factor, BetweenFactor, CouplingSigmas, DiagonalNoise, ElevationPriorFactor,
    Factor, NodeId, PriorFactor,
};
use crate::geometry::{between, interpolate, Pose3};
use crate::solver::{Graph, Values};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometrySample {
    /// Stream time, seconds.
    pub t: f64,
    pub pose: Pose3,
}

impl OdometrySample {
    pub fn new(t: f64, pose: Pose3) -> Self {
        Self { t, pose }
    }
}

fn check_increasing(samples: &[OdometrySample], what: &str) -> Result<()> {
    for (i, w) in samples.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(Error::Validation(format!(
                "{what} timestamps must be strictly increasing (sample {} at {} after {})",
                i + 1,
                w[1].t,
                w[0].t
            )));
        }
    }
    Ok(())
}

/// LiDAR odometry sampled at keyframes.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeStream {
    samples: Vec<OdometrySample>,
}

impl KeyframeStream {
    pub fn new(samples: Vec<OdometrySample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Validation(format!(
                "a keyframe stream needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        check_increasing(&samples, "keyframe")?;
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[OdometrySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn into_samples(self) -> Vec<OdometrySample> {
        self.samples
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Serial,
    Parallel,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::Serial, Variant::Parallel];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Serial => "serial",
            Variant::Parallel => "parallel",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "serial" => Ok(Variant::Serial),
            "parallel" => Ok(Variant::Parallel),
            other => Err(Error::Validation(format!(
                "unknown variant `{other}` (expected baseline, serial or parallel)"
            ))),
        }
    }
}

/// Graph-construction parameters for one variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneConfig {
    pub variant: Variant,
    pub lidar_between_sigmas: [f64; 6],
    pub fk_between_sigmas: [f64; 6],
    pub coupling: CouplingSigmas,
    /// Sigma of the elevation prior, meters.
    pub elevation_sigma: f64,
    /// Sigmas of the full prior on the first LiDAR node.
    pub anchor_sigmas: [f64; 6],
    /// Keyframe stride between coupling factors.
    pub couple_every: usize,
}

impl Default for LaneConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Parallel,
            lidar_between_sigmas: [0.02, 0.02, 0.1, 0.002, 0.002, 0.002],
            fk_between_sigmas: [0.05, 0.05, 0.03, 0.005, 0.005, 0.005],
            coupling: CouplingSigmas::default(),
            elevation_sigma: 0.05,
            anchor_sigmas: [1e-3; 6],
            couple_every: 1,
        }
    }
}

impl LaneConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, r: Result<DiagonalNoise>| {
            r.map(|_| ()).map_err(|e| Error::Config {
                path: format!("lanes.{name}"),
                message: e.to_string(),
            })
        };
        field("lidar_between_sigmas", DiagonalNoise::new(&self.lidar_between_sigmas))?;
        field("fk_between_sigmas", DiagonalNoise::new(&self.fk_between_sigmas))?;
        field("anchor_sigmas", DiagonalNoise::new(&self.anchor_sigmas))?;
        field("elevation_sigma", DiagonalNoise::new(&[self.elevation_sigma]))?;
        field("coupling", DiagonalNoise::new(&self.coupling.sigmas()))?;
        if self.couple_every == 0 {
            return Err(Error::Config {
                path: "lanes.couple_every".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// A built graph plus the node bookkeeping needed to read the output back.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridGraph {
    pub graph: Graph,
    /// Initial values.
    pub values: Values,
    /// LiDAR-lane node per keyframe.
    pub x_ids: Vec<NodeId>,
    /// Kinematic-lane node per keyframe; empty unless the variant is parallel.
    pub y_ids: Vec<NodeId>,
    /// Keyframe timestamps.
    pub times: Vec<f64>,
}

/// Interpolates leg odometry at each keyframe time.
pub fn align_fk_to_keyframes(fk: &[OdometrySample], keyframe_times: &[f64]) -> Result<Vec<Pose3>> {
    if fk.is_empty() {
        return Err(Error::Validation("leg odometry stream is empty".into()));
    }
    check_increasing(fk, "leg odometry")?;
    let (t_first, t_last) = (fk[0].t, fk[fk.len() - 1].t);
    keyframe_times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if !(t >= t_first && t <= t_last) {
                return Err(Error::OutOfRange(format!(
                    "keyframe {k} at t={t} lies outside leg odometry range [{t_first}, {t_last}]"
                )));
            }
            // first sample with time >= t
            let hi = fk.partition_point(|s| s.t < t);
            if fk[hi].t == t {
                return Ok(fk[hi].pose);
            }
            let (a, b) = (&fk[hi - 1], &fk[hi]);
            let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
            interpolate(&a.pose, &b.pose, s)
        })
        .collect()
}

/// Adds keyframes one at a time, emitting the factors and initial values each one
/// contributes. Building a whole stream through it gives the same graph as
/// [`build_graph`].
#[derive(Clone, Debug)]
pub struct LaneBuilder {
    cfg: LaneConfig,
    lidar_noise: DiagonalNoise,
    fk_noise: DiagonalNoise,
    anchor_noise: DiagonalNoise,
    last: Option<(Pose3, Option<Pose3>)>,
    x_ids: Vec<NodeId>,
    y_ids: Vec<NodeId>,
    times: Vec<f64>,
}

impl LaneBuilder {
    pub fn new(cfg: &LaneConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            lidar_noise: DiagonalNoise::new(&cfg.lidar_between_sigmas)?,
            fk_noise: DiagonalNoise::new(&cfg.fk_between_sigmas)?,
            anchor_noise: DiagonalNoise::new(&cfg.anchor_sigmas)?,
            cfg: cfg.clone(),
            last: None,
            x_ids: Vec::new(),
            y_ids: Vec::new(),
            times: Vec::new(),
        })
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn keyframe_count(&self) -> usize {
        self.times.len()
    }

    /// Node ids of keyframe `k`: LiDAR lane `k` for the chain-only variants,
    /// interleaved `2k` / `2k + 1` when the kinematic lane exists.
    fn ids_for(&self, k: usize) -> (NodeId, Option<NodeId>) {
        match self.cfg.variant {
            Variant::Parallel => (2 * k, Some(2 * k + 1)),
            _ => (k, None),
        }
    }

    /// Appends keyframe `(t, lidar)` with its aligned leg-odometry pose.
    /// `fk` is required for the serial and parallel variants.
    pub fn push(&mut self, t: f64, lidar: Pose3, fk: Option<Pose3>) -> Result<(Vec<Factor>, Values)> {
        let k = self.times.len();
        if let Some(&prev) = self.times.last() {
            if !(t > prev) {
                return Err(Error::Validation(format!(
                    "keyframe {k} at t={t} does not follow t={prev}"
                )));
            }
        }
        let fk = match (self.cfg.variant, fk) {
            (Variant::Baseline, _) => None,
            (_, Some(p)) => Some(p),
            (v, None) => {
                return Err(Error::Validation(format!(
                    "{v} variant needs a leg odometry pose for keyframe {k}"
                )))
            }
        };
        let (x, y) = self.ids_for(k);
        let mut factors: Vec<Factor> = Vec::new();
        let mut values = Values::new();
        values.insert(x, lidar)?;

        match self.last {
            None => factors.push(PriorFactor::new(x, lidar, self.anchor_noise.clone())?.into()),
            Some((prev_lidar, _)) => {
                let x_prev = self.x_ids[k - 1];
                factors.push(
                    BetweenFactor::new(x_prev, x, between(&prev_lidar, &lidar), self.lidar_noise.clone())?
                        .into(),
                );
            }
        }

        if let Some(fk_pose) = fk {
            let prev_fk = self.last.and_then(|(_, f)| f);
            match self.cfg.variant {
                Variant::Serial => {
                    if let Some(prev_fk) = prev_fk {
                        factors.push(
                            BetweenFactor::new(
                                self.x_ids[k - 1],
                                x,
                                between(&prev_fk, &fk_pose),
                                self.fk_noise.clone(),
                            )?
                            .into(),
                        );
                    }
                    factors.push(
                        ElevationPriorFactor::new(x, fk_pose.translation().z, self.cfg.elevation_sigma)?
                            .into(),
                    );
                }
                Variant::Parallel => {
                    let y = y.expect("parallel keyframes have a kinematic node");
                    values.insert(y, fk_pose)?;
                    if let Some(prev_fk) = prev_fk {
                        factors.push(
                            BetweenFactor::new(
                                self.y_ids[k - 1],
                                y,
                                between(&prev_fk, &fk_pose),
                                self.fk_noise.clone(),
                            )?
                            .into(),
                        );
                    }
                    factors.push(
                        ElevationPriorFactor::new(y, fk_pose.translation().z, self.cfg.elevation_sigma)?
                            .into(),
                    );
                    if k.is_multiple_of(self.cfg.couple_every) {
                        factors.push(make_coupling_factor(x, y, &self.cfg.coupling)?.into());
                    }
                    self.y_ids.push(y);
                }
                Variant::Baseline => unreachable!("baseline drops leg odometry above"),
            }
        }

        self.x_ids.push(x);
        self.times.push(t);
        self.last = Some((lidar, fk));
        Ok((factors, values))
    }

    /// Bookkeeping for everything pushed so far, around the given graph and values.
    pub fn finish(self, graph: Graph, values: Values) -> HybridGraph {
        HybridGraph {
            graph,
            values,
            x_ids: self.x_ids,
            y_ids: self.y_ids,
            times: self.times,
        }
    }
}

/// Builds the graph of the configured variant over the whole stream.
pub fn build_graph(keyframes: &KeyframeStream, fk: &[OdometrySample], cfg: &LaneConfig) -> Result<HybridGraph> {
    let mut builder = LaneBuilder::new(cfg)?;
    let times = keyframes.times();
    let aligned = match cfg.variant {
        Variant::Baseline => None,
        _ => Some(align_fk_to_keyframes(fk, &times)?),
    };
    let mut graph = Graph::new();
    let mut values = Values::new();
    for (k, sample) in keyframes.samples().iter().enumerate() {
        let fk_pose = aligned.as_ref().map(|a| a[k]);
        let (factors, new_values) = builder.push(sample.t, sample.pose, fk_pose)?;
        graph.extend(factors);
        for (id, pose) in new_values.iter() {
            values.insert(id, *pose)?;
        }
    }
    Ok(builder.finish(graph, values))
}

/// Published trajectory: keyframe times paired with the LiDAR-lane poses only.
pub fn extract_output_trajectory(h: &HybridGraph, values: &Values) -> Result<Vec<OdometrySample>> {
    h.times
        .iter()
        .zip(&h.x_ids)
        .map(|(t, id)| values.get(*id).map(|p| OdometrySample::new(*t, *p)))
        .collect()
}

/// Closed-form factor count of a variant over `n` keyframes.
pub fn expected_factor_count(variant: Variant, n: usize, couple_every: usize) -> usize {
    let chain = 1 + (n - 1);
    match variant {
        Variant::Baseline => chain,
        Variant::Serial => chain + (n - 1) + n,
        Variant::Parallel => chain + (n - 1) + n + n.div_ceil(couple_every),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp;
    use crate::geometry::Twist;
    use nalgebra::Vector3;

    fn stream(n: usize) -> (KeyframeStream, Vec<OdometrySample>) {
        let step = exp(&Twist::from_slice(&[2.0, 0.0, 0.05, 0.0, 0.0, 0.02]));
        let mut pose = Pose3::identity();
        let mut kf = Vec::new();
        for k in 0..n {
            kf.push(OdometrySample::new(2.0 * k as f64, pose));
            pose = pose.compose(&step);
        }
        let fk = kf.clone();
        (KeyframeStream::new(kf).unwrap(), fk)
    }

    fn cfg(variant: Variant, couple_every: usize) -> LaneConfig {
        LaneConfig {
            couple_every,
            ..LaneConfig::for_variant(variant)
        }
    }

    #[test]
    fn factor_counts_match_closed_form() {
        for n in [2, 3, 10, 350] {
            let (kf, fk) = stream(n);
            for variant in Variant::ALL {
                for every in [1, 2, 3, 7] {
                    let h = build_graph(&kf, &fk, &cfg(variant, every)).unwrap();
                    assert_eq!(h.graph.len(), expected_factor_count(variant, n, every), "{variant} n={n} every={every}");
                    let nodes = if variant == Variant::Parallel { 2 * n } else { n };
                    assert_eq!(h.values.len(), nodes);
                    assert_eq!(h.graph.node_ids().len(), nodes);
                }
            }
        }
    }

    #[test]
    fn five_keyframe_examples() {
        let (kf, fk) = stream(5);
        let p = build_graph(&kf, &fk, &cfg(Variant::Parallel, 1)).unwrap();
        assert_eq!((p.values.len(), p.graph.len()), (10, 19));
        let b = build_graph(&kf, &fk, &cfg(Variant::Baseline, 1)).unwrap();
        assert_eq!((b.values.len(), b.graph.len()), (5, 5));
        assert!(b.y_ids.is_empty());
    }

    #[test]
    fn align_returns_exact_samples_verbatim() {
        let p = Pose3::from_yaw(0.3).with_translation(Vector3::new(1.0, 2.0, 3.0));
        let fk = vec![OdometrySample::new(0.0, Pose3::identity()), OdometrySample::new(1.0, p)];
        assert_eq!(align_fk_to_keyframes(&fk, &[1.0]).unwrap()[0], p);
    }

    #[test]
    fn align_interpolates_translation_and_rotation() {
        let fk = vec![
            OdometrySample::new(0.0, Pose3::identity()),
            OdometrySample::new(2.0, Pose3::from_translation(0.0, 0.0, 2.0)),
        ];
        let a = align_fk_to_keyframes(&fk, &[1.0]).unwrap();
        assert!(a[0].max_abs_diff(&Pose3::from_translation(0.0, 0.0, 1.0)) < 1e-12);

        let fk = vec![
            OdometrySample::new(0.0, Pose3::identity()),
            OdometrySample::new(4.0, Pose3::from_yaw(std::f64::consts::FRAC_PI_2)),
        ];
        let a = align_fk_to_keyframes(&fk, &[1.0]).unwrap();
        // slerp oracle: a quarter of the way along a 90 degree yaw
        let half = 22.5f64.to_radians() / 2.0;
        let q = a[0].quaternion_wxyz();
        assert!((q[0] - half.cos()).abs() < 1e-12 && (q[3] - half.sin()).abs() < 1e-12);
    }

    #[test]
    fn align_errors() {
        let fk = vec![OdometrySample::new(0.0, Pose3::identity()), OdometrySample::new(1.0, Pose3::identity())];
        match align_fk_to_keyframes(&fk, &[0.5, 1.5]) {
            Err(Error::OutOfRange(m)) => assert!(m.contains("keyframe 1"), "{m}"),
            other => panic!("{other:?}"),
        }
        let unsorted = vec![fk[1], fk[0]];
        assert!(matches!(align_fk_to_keyframes(&unsorted, &[0.5]), Err(Error::Validation(_))));
        assert!(align_fk_to_keyframes(&[], &[0.5]).is_err());
    }

    #[test]
    fn keyframe_stream_needs_two_increasing_samples() {
        assert!(KeyframeStream::new(vec![OdometrySample::new(0.0, Pose3::identity())]).is_err());
        let s = OdometrySample::new(1.0, Pose3::identity());
        assert!(KeyframeStream::new(vec![s, s]).is_err());
    }

    #[test]
    fn output_uses_lidar_lane_only() {
        let (kf, fk) = stream(5);
        let h = build_graph(&kf, &fk, &cfg(Variant::Parallel, 1)).unwrap();
        assert!(h.x_ids.iter().all(|x| !h.y_ids.contains(x)));
        let mut v = h.values.clone();
        for &y in &h.y_ids {
            v.set(y, Pose3::from_translation(99.0, 99.0, 99.0));
        }
        let out = extract_output_trajectory(&h, &v).unwrap();
        assert_eq!(out.len(), 5);
        for (k, s) in out.iter().enumerate() {
            assert_eq!(s.pose, *v.get(h.x_ids[k]).unwrap());
            assert_eq!(s.t, kf.samples()[k].t);
        }
    }

    #[test]
    fn baseline_output_is_all_nodes_in_order() {
        let (kf, fk) = stream(4);
        let h = build_graph(&kf, &fk, &cfg(Variant::Baseline, 1)).unwrap();
        let out = extract_output_trajectory(&h, &h.values).unwrap();
        let all: Vec<Pose3> = h.values.iter().map(|(_, p)| *p).collect();
        assert_eq!(out.iter().map(|s| s.pose).collect::<Vec<_>>(), all);
    }

    #[test]
    fn missing_x_value_is_a_lookup_error() {
        let (kf, fk) = stream(3);
        let h = build_graph(&kf, &fk, &cfg(Variant::Baseline, 1)).unwrap();
        assert!(matches!(extract_output_trajectory(&h, &Values::new()), Err(Error::MissingNode(_))));
    }

    #[test]
    fn builder_requires_leg_odometry_for_fk_variants() {
        let mut b = LaneBuilder::new(&cfg(Variant::Serial, 1)).unwrap();
        assert!(b.push(0.0, Pose3::identity(), None).is_err());
        let mut b = LaneBuilder::new(&cfg(Variant::Baseline, 1)).unwrap();
        assert!(b.push(0.0, Pose3::identity(), None).is_ok());
        assert!(b.push(0.0, Pose3::identity(), None).is_err());
    }

    #[test]
    fn config_validation() {
        let c = LaneConfig {
            couple_every: 0,
            ..LaneConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let mut c = LaneConfig::default();
        c.fk_between_sigmas[4] = 0.0;
        assert!(c.validate().is_err());
        assert!(LaneConfig::default().validate().is_ok());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("hybrid".parse::<Variant>().is_err());
    }
}
