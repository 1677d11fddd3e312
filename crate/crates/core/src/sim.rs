//! Closed-loop ground truth and corrupted odometry streams.
//!
//! The LiDAR stream drifts upward by a fixed amount per keyframe on top of white
//! noise, reproducing accumulated elevation drift. The leg-odometry stream
//! random-walks horizontally but its height is re-anchored to the true terrain
//! at every sample, so its z error stays bounded.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{between, compose, exp, Pose3, Twist};
use crate::lanes::{KeyframeStream, OdometrySample};

/// Identifier of the pseudo-random generator, recorded with every run.
pub const RNG_ALGORITHM: &str = "rand_chacha::ChaCha8Rng seed_from_u64, stream 1 = lidar, stream 2 = leg odometry";

const LIDAR_STREAM: u64 = 1;
const FK_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopShape {
    Circle,
    RoundedRectangle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(rename = "loop")]
    pub loop_shape: LoopShape,
    /// Loop length, meters.
    pub path_length: f64,
    /// Peak-to-peak amplitude of the sinusoidal terrain, meters.
    pub relief_amplitude: f64,
    /// Nominal arc length between keyframes, meters.
    pub keyframe_spacing: f64,
    /// Leg-odometry sample rate, Hz.
    pub fk_rate: f64,
    /// m/s
    pub speed: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoiseSpec {
    /// Systematic z offset added to every LiDAR relative step, meters.
    pub lidar_z_bias_per_keyframe: f64,
    pub lidar_white_sigmas: [f64; 6],
    /// Per-sample relative-step noise of the leg odometry.
    pub fk_white_sigmas: [f64; 6],
    /// Noise on the re-anchored leg-odometry height, meters.
    pub fk_z_sigma: f64,
}

impl Default for SensorNoiseSpec {
    fn default() -> Self {
        Self {
            lidar_z_bias_per_keyframe: 0.1,
            lidar_white_sigmas: [0.01, 0.01, 0.005, 0.0002, 0.0002, 0.0005],
            fk_white_sigmas: [0.002, 0.002, 0.001, 1e-4, 1e-4, 1e-4],
            fk_z_sigma: 0.02,
        }
    }
}

impl SensorNoiseSpec {
    /// No corruption at all.
    pub fn noiseless() -> Self {
        Self {
            lidar_z_bias_per_keyframe: 0.0,
            lidar_white_sigmas: [0.0; 6],
            fk_white_sigmas: [0.0; 6],
            fk_z_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |path: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config {
                    path: format!("noise.{path}"),
                    message: format!("must be finite and non-negative, got {v}"),
                })
            }
        };
        check("lidar_z_bias_per_keyframe", self.lidar_z_bias_per_keyframe)?;
        check("fk_z_sigma", self.fk_z_sigma)?;
        for (i, v) in self.lidar_white_sigmas.iter().enumerate() {
            check(&format!("lidar_white_sigmas[{i}]"), *v)?;
        }
        for (i, v) in self.fk_white_sigmas.iter().enumerate() {
            check(&format!("fk_white_sigmas[{i}]"), *v)?;
        }
        Ok(())
    }

    fn lidar_is_clean(&self) -> bool {
        self.lidar_z_bias_per_keyframe == 0.0 && self.lidar_white_sigmas.iter().all(|s| *s == 0.0)
    }

    fn fk_is_clean(&self) -> bool {
        self.fk_z_sigma == 0.0 && self.fk_white_sigmas.iter().all(|s| *s == 0.0)
    }
}

/// Named scenario presets shaped like the two field missions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Flat loop around buildings.
    Factory,
    /// Hilly park loop.
    Cocopark,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Factory, Preset::Cocopark];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Factory => "factory",
            Preset::Cocopark => "cocopark",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "factory" => Ok(Preset::Factory),
            "cocopark" => Ok(Preset::Cocopark),
            other => Err(Error::Validation(format!(
                "unknown preset `{other}` (expected factory or cocopark)"
            ))),
        }
    }

    pub fn scenario(&self) -> ScenarioSpec {
        match self {
            Preset::Factory => ScenarioSpec {
                loop_shape: LoopShape::RoundedRectangle,
                path_length: 700.0,
                relief_amplitude: 4.0,
                keyframe_spacing: 2.0,
                fk_rate: 50.0,
                speed: 1.0,
                seed: 1,
            },
            Preset::Cocopark => ScenarioSpec {
                loop_shape: LoopShape::Circle,
                path_length: 600.0,
                relief_amplitude: 15.0,
                keyframe_spacing: 2.0,
                fk_rate: 50.0,
                speed: 1.0,
                seed: 1,
            },
        }
    }

    pub fn noise(&self) -> SensorNoiseSpec {
        let bias = match self {
            Preset::Factory => 0.1,
            Preset::Cocopark => 0.12,
        };
        SensorNoiseSpec {
            lidar_z_bias_per_keyframe: bias,
            ..SensorNoiseSpec::default()
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, message: String| Error::Config {
            path: format!("scenario.{path}"),
            message,
        };
        if !(self.path_length.is_finite() && self.path_length > 0.0) {
            return Err(err("path_length", format!("must be positive, got {}", self.path_length)));
        }
        if !(self.keyframe_spacing.is_finite() && self.keyframe_spacing > 0.0) {
            return Err(err(
                "keyframe_spacing",
                format!("must be positive, got {}", self.keyframe_spacing),
            ));
        }
        if self.keyframe_spacing >= self.path_length {
            return Err(err(
                "keyframe_spacing",
                format!(
                    "spacing {} must be shorter than the loop ({})",
                    self.keyframe_spacing, self.path_length
                ),
            ));
        }
        if !(self.relief_amplitude.is_finite() && self.relief_amplitude >= 0.0) {
            return Err(err(
                "relief_amplitude",
                format!("must be non-negative, got {}", self.relief_amplitude),
            ));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(err("speed", format!("must be positive, got {}", self.speed)));
        }
        let keyframe_rate = self.speed / self.keyframe_spacing;
        if !(self.fk_rate.is_finite() && self.fk_rate >= keyframe_rate) {
            return Err(err(
                "fk_rate",
                format!(
                    "must be at least the keyframe rate {keyframe_rate} Hz, got {}",
                    self.fk_rate
                ),
            ));
        }
        Ok(())
    }

    /// Number of keyframe intervals around the loop.
    pub fn interval_count(&self) -> usize {
        ((self.path_length / self.keyframe_spacing).round() as usize).max(1)
    }

    /// Keyframes including the closing one that returns to the start.
    pub fn keyframe_count(&self) -> usize {
        self.interval_count() + 1
    }

    pub fn duration(&self) -> f64 {
        self.path_length / self.speed
    }

    /// Terrain height at arc length `s`.
    pub fn elevation_at(&self, s: f64) -> f64 {
        0.5 * self.relief_amplitude * (TAU * s / self.path_length).sin()
    }

    /// Ground-truth pose at arc length `s`; `s = path_length` maps back to the start.
    pub fn pose_at(&self, s: f64) -> Pose3 {
        let s = if s >= self.path_length { s - self.path_length } else { s };
        let (x, y, yaw) = match self.loop_shape {
            LoopShape::Circle => circle_at(self.path_length, s),
            LoopShape::RoundedRectangle => rounded_rectangle_at(self.path_length, s),
        };
        Pose3::from_yaw(yaw).with_translation(Vector3::new(x, y, self.elevation_at(s)))
    }
}

fn circle_at(length: f64, s: f64) -> (f64, f64, f64) {
    let r = length / TAU;
    let phi = s / r;
    (r * phi.sin(), r * (1.0 - phi.cos()), phi)
}

/// Counter-clockwise rounded rectangle with a 2:1 aspect and corner radius
/// `length / 20`, starting at the beginning of the long bottom edge.
fn rounded_rectangle_at(length: f64, s: f64) -> (f64, f64, f64) {
    let rc = length / 20.0;
    let short = (length - TAU * rc) / 6.0;
    let long = 2.0 * short;
    let arc = FRAC_PI_2 * rc;
    let edges = [long, short, long, short];
    let (mut x, mut y, mut heading) = (0.0, 0.0, 0.0f64);
    let mut remaining = s;
    for edge in edges {
        if remaining <= edge {
            return (x + remaining * heading.cos(), y + remaining * heading.sin(), heading);
        }
        x += edge * heading.cos();
        y += edge * heading.sin();
        remaining -= edge;
        // left-turning quarter arc
        let (cx, cy) = (x - rc * heading.sin(), y + rc * heading.cos());
        if remaining <= arc {
            let phi = remaining / rc;
            let h = heading + phi;
            return (cx + rc * h.sin(), cy - rc * h.cos(), h);
        }
        heading += FRAC_PI_2;
        x = cx + rc * heading.sin();
        y = cy - rc * heading.cos();
        remaining -= arc;
    }
    // only reachable through rounding at the very end of the last arc
    (x, y, heading)
}

/// Ground truth, LiDAR odometry and leg odometry of one mission.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedRun {
    pub ground_truth: Vec<OdometrySample>,
    pub lidar_odom: KeyframeStream,
    pub fk_odom: Vec<OdometrySample>,
}

/// Keyframes at equal arc-length steps; the last keyframe closes the loop.
pub fn generate_ground_truth(spec: &ScenarioSpec) -> Result<Vec<OdometrySample>> {
    spec.validate()?;
    let n = spec.interval_count();
    let step = spec.path_length / n as f64;
    Ok((0..=n)
        .map(|k| {
            let s = k as f64 * step;
            OdometrySample::new(s / spec.speed, spec.pose_at(s))
        })
        .collect())
}

fn gaussian_twist(rng: &mut impl Rng, sigmas: &[f64; 6]) -> [f64; 6] {
    let mut out = [0.0; 6];
    for (o, s) in out.iter_mut().zip(sigmas) {
        let n: f64 = rng.sample(StandardNormal);
        *o = n * s;
    }
    out
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Composes each true keyframe step with a biased, noisy corruption twist.
pub fn simulate_lidar_odometry(
    gt: &[OdometrySample],
    noise: &SensorNoiseSpec,
    seed: u64,
) -> Result<KeyframeStream> {
    noise.validate()?;
    if noise.lidar_is_clean() {
        return KeyframeStream::new(gt.to_vec());
    }
    let mut rng = rng_for(seed, LIDAR_STREAM);
    let mut samples = Vec::with_capacity(gt.len());
    let mut current = gt.first().map(|s| s.pose).unwrap_or_default();
    for (k, sample) in gt.iter().enumerate() {
        if k > 0 {
            let truth = between(&gt[k - 1].pose, &sample.pose);
            let mut c = gaussian_twist(&mut rng, &noise.lidar_white_sigmas);
            c[2] += noise.lidar_z_bias_per_keyframe;
            current = compose(&current, &compose(&truth, &exp(&Twist::from_slice(&c))));
        }
        samples.push(OdometrySample::new(sample.t, current));
    }
    KeyframeStream::new(samples)
}

/// Dense leg odometry: random-walk relative steps, height re-anchored to the terrain.
pub fn simulate_fk_odometry(
    spec: &ScenarioSpec,
    noise: &SensorNoiseSpec,
    seed: u64,
) -> Result<Vec<OdometrySample>> {
    spec.validate()?;
    noise.validate()?;
    let duration = spec.duration();
    let whole = (duration * spec.fk_rate).floor() as usize;
    let mut times: Vec<f64> = (0..=whole).map(|j| j as f64 / spec.fk_rate).collect();
    if *times.last().expect("at least one sample") < duration {
        times.push(duration);
    }
    let truth: Vec<Pose3> = times.iter().map(|t| spec.pose_at(t * spec.speed)).collect();
    if noise.fk_is_clean() {
        return Ok(times
            .into_iter()
            .zip(truth)
            .map(|(t, p)| OdometrySample::new(t, p))
            .collect());
    }
    let mut rng = rng_for(seed, FK_STREAM);
    let mut samples = Vec::with_capacity(times.len());
    let mut current = truth[0];
    for (j, t) in times.iter().enumerate() {
        if j > 0 {
            let step = between(&truth[j - 1], &truth[j]);
            let c = gaussian_twist(&mut rng, &noise.fk_white_sigmas);
            current = compose(&current, &compose(&step, &exp(&Twist::from_slice(&c))));
            let z_noise: f64 = rng.sample(StandardNormal);
            let mut translation = *current.translation();
            translation.z = truth[j].translation().z + noise.fk_z_sigma * z_noise;
            current = current.with_translation(translation);
        }
        samples.push(OdometrySample::new(*t, current));
    }
    Ok(samples)
}

/// Runs the whole scenario with one seed.
pub fn simulate(spec: &ScenarioSpec, noise: &SensorNoiseSpec, seed: u64) -> Result<SimulatedRun> {
    let ground_truth = generate_ground_truth(spec)?;
    let lidar_odom = simulate_lidar_odometry(&ground_truth, noise, seed)?;
    let fk_odom = simulate_fk_odometry(spec, noise, seed)?;
    Ok(SimulatedRun {
        ground_truth,
        lidar_odom,
        fk_odom,
    })
}
