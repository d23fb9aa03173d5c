//! Poses, procedural motion clips and shape sampling.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SurrogateBody, NUM_JOINTS, SHAPE_DIM};
use crate::error::{Result, SomaError};
use crate::mocap::Point3;

/// Body parameters for one frame: per-joint axis-angle rotations (root
/// first), global translation, and shape vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub theta: Vec<Point3>,
    pub translation: Point3,
    pub beta: [f64; SHAPE_DIM],
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            theta: vec![[0.0; 3]; NUM_JOINTS],
            translation: [0.0; 3],
            beta: [0.0; SHAPE_DIM],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.theta.iter().flatten().all(|x| x.is_finite())
            && self.translation.iter().all(|x| x.is_finite())
            && self.beta.iter().all(|x| x.is_finite());
        if finite {
            Ok(())
        } else {
            Err(SomaError::NonFinite("pose"))
        }
    }

    /// Flattened `3 (J + 1)` axis-angle vector.
    pub fn theta_flat(&self) -> Vec<f64> {
        self.theta.iter().flatten().copied().collect()
    }
}

/// Rotation by `angle` radians about the vertical (`+y`) axis.
pub fn rotation_about_up(angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), angle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    /// Global amplitude multiplier; 0 yields the identity pose.
    pub amplitude: f64,
    pub harmonics: usize,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    /// Peak horizontal root drift, meters.
    pub translation_m: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            amplitude: 1.0,
            harmonics: 3,
            min_freq_hz: 0.1,
            max_freq_hz: 1.2,
            translation_m: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Wave {
    fn at(&self, t: f64) -> f64 {
        self.amp * (2.0 * std::f64::consts::PI * self.freq * t + self.phase).sin()
    }
}

/// Band-limited joint trajectories: per joint axis, a random center plus a
/// sum of low-frequency sinusoids, scaled by the amplitude and clamped to the
/// joint's limit box.
#[derive(Debug, Clone)]
pub struct MotionClip {
    amplitude: f64,
    centers: Vec<[f64; 3]>,
    waves: Vec<[Vec<Wave>; 3]>,
    limits: Vec<[[f64; 2]; 3]>,
    drift: [Vec<Wave>; 2],
    beta: [f64; SHAPE_DIM],
}

impl MotionClip {
    pub fn random(
        body: &SurrogateBody,
        config: &MotionConfig,
        beta: [f64; SHAPE_DIM],
        rng: &mut impl Rng,
    ) -> Self {
        let freq = |rng: &mut dyn rand::RngCore| {
            rng.gen_range(config.min_freq_hz..=config.max_freq_hz.max(config.min_freq_hz))
        };
        let mut centers = Vec::with_capacity(body.joints.len());
        let mut waves = Vec::with_capacity(body.joints.len());
        for joint in &body.joints {
            let mut c = [0.0; 3];
            let mut w: [Vec<Wave>; 3] = Default::default();
            for axis in 0..3 {
                let [lo, hi] = joint.limits[axis];
                c[axis] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                let span = (hi - lo) / 4.0;
                for _ in 0..config.harmonics {
                    w[axis].push(Wave {
                        amp: rng.gen_range(0.0..=span.max(0.0)),
                        freq: freq(rng),
                        phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                    });
                }
            }
            centers.push(c);
            waves.push(w);
        }
        let mut drift: [Vec<Wave>; 2] = Default::default();
        for d in drift.iter_mut() {
            for _ in 0..config.harmonics {
                d.push(Wave {
                    amp: rng.gen_range(0.0..=config.translation_m / config.harmonics.max(1) as f64),
                    freq: freq(rng) * 0.5,
                    phase: rng.gen_range(0.0..2.0 * std::f64::consts::PI),
                });
            }
        }
        MotionClip {
            amplitude: config.amplitude,
            centers,
            waves,
            limits: body.joints.iter().map(|j| j.limits).collect(),
            drift,
            beta,
        }
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        let theta = self
            .centers
            .iter()
            .zip(&self.waves)
            .zip(&self.limits)
            .map(|((c, w), lim)| {
                let mut out = [0.0; 3];
                for axis in 0..3 {
                    let raw = c[axis] + w[axis].iter().map(|wave| wave.at(t)).sum::<f64>();
                    out[axis] = (self.amplitude * raw).clamp(lim[axis][0], lim[axis][1]);
                }
                out
            })
            .collect();
        let sum = |ws: &[Wave]| ws.iter().map(|w| w.at(t)).sum::<f64>();
        Pose {
            theta,
            translation: [
                self.amplitude * sum(&self.drift[0]),
                0.0,
                self.amplitude * sum(&self.drift[1]),
            ],
            beta: self.beta,
        }
    }
}

/// Samples `round(duration_s * rate_hz)` poses of one motion clip with the
/// given shape vector.
pub fn sample_motion(
    body: &SurrogateBody,
    config: &MotionConfig,
    beta: [f64; SHAPE_DIM],
    duration_s: f64,
    rate_hz: f64,
    rng_seed: u64,
) -> Result<Vec<Pose>> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SomaError::InvalidArgument(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(SomaError::InvalidArgument(format!(
            "rate must be positive, got {rate_hz}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let clip = MotionClip::random(body, config, beta, &mut rng);
    let n = (duration_s * rate_hz).round() as usize;
    Ok((0..n).map(|i| clip.pose_at(i as f64 / rate_hz)).collect())
}

/// Diagonal Gaussian prior over the shape vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapePrior {
    pub sigma: [f64; SHAPE_DIM],
}

impl Default for ShapePrior {
    fn default() -> Self {
        ShapePrior {
            sigma: [1.0; SHAPE_DIM],
        }
    }
}

impl ShapePrior {
    /// Draws `beta ~ N(0, diag(sigma^2))`, clamped to `±3 sigma`.
    pub fn sample(&self, rng: &mut impl Rng) -> [f64; SHAPE_DIM] {
        let mut beta = [0.0; SHAPE_DIM];
        for (b, &s) in beta.iter_mut().zip(&self.sigma) {
            if s > 0.0 {
                let z: f64 = Normal::new(0.0, s).expect("positive sigma").sample(rng);
                *b = z.clamp(-3.0 * s, 3.0 * s);
            }
        }
        beta
    }
}

pub fn sample_shape(prior: &ShapePrior, rng_seed: u64) -> [f64; SHAPE_DIM] {
    prior.sample(&mut ChaCha8Rng::seed_from_u64(rng_seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_at_30hz_is_30_poses() {
        let body = SurrogateBody::new_default();
        let poses =
            sample_motion(&body, &MotionConfig::default(), [0.0; SHAPE_DIM], 1.0, 30.0, 7).unwrap();
        assert_eq!(poses.len(), 30);
    }

    #[test]
    fn motion_is_deterministic() {
        let body = SurrogateBody::new_default();
        let cfg = MotionConfig::default();
        let a = sample_motion(&body, &cfg, [0.0; SHAPE_DIM], 2.0, 30.0, 11).unwrap();
        let b = sample_motion(&body, &cfg, [0.0; SHAPE_DIM], 2.0, 30.0, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_motion(&body, &cfg, [0.0; SHAPE_DIM], 2.0, 30.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_amplitude_is_identity() {
        let body = SurrogateBody::new_default();
        let cfg = MotionConfig {
            amplitude: 0.0,
            ..MotionConfig::default()
        };
        let poses = sample_motion(&body, &cfg, [0.0; SHAPE_DIM], 1.0, 30.0, 3).unwrap();
        assert!(poses.iter().all(|p| *p == Pose::identity()));
    }

    #[test]
    fn motion_respects_limits_and_is_smooth() {
        let body = SurrogateBody::new_default();
        let poses =
            sample_motion(&body, &MotionConfig::default(), [0.0; SHAPE_DIM], 4.0, 30.0, 5).unwrap();
        for p in &poses {
            for (theta, joint) in p.theta.iter().zip(&body.joints) {
                for a in 0..3 {
                    assert!(theta[a] >= joint.limits[a][0] && theta[a] <= joint.limits[a][1]);
                }
            }
        }
        for w in poses.windows(2) {
            let step = w[0]
                .theta_flat()
                .iter()
                .zip(w[1].theta_flat())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(step < 0.3, "joint jumped by {step} rad between frames");
        }
    }

    #[test]
    fn invalid_duration() {
        let body = SurrogateBody::new_default();
        assert!(sample_motion(&body, &MotionConfig::default(), [0.0; SHAPE_DIM], 0.0, 30.0, 1).is_err());
    }

    #[test]
    fn shape_zero_sigma_and_determinism() {
        let zero = ShapePrior {
            sigma: [0.0; SHAPE_DIM],
        };
        assert_eq!(sample_shape(&zero, 9), [0.0; SHAPE_DIM]);
        let p = ShapePrior::default();
        assert_eq!(sample_shape(&p, 9), sample_shape(&p, 9));
    }

    #[test]
    fn shape_sample_mean_near_zero() {
        let prior = ShapePrior {
            sigma: [0.5; SHAPE_DIM],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mut sum = [0.0; SHAPE_DIM];
        for _ in 0..n {
            let b = prior.sample(&mut rng);
            for k in 0..SHAPE_DIM {
                sum[k] += b[k];
            }
        }
        let bound = 3.0 * 0.5 / (n as f64).sqrt();
        for s in sum {
            assert!((s / n as f64).abs() < bound);
        }
    }

    #[test]
    fn rotation_about_up_keeps_height() {
        let r = rotation_about_up(1.0);
        let v = r * Vector3::new(1.0, 2.0, 3.0);
        assert!((v.y - 2.0).abs() < 1e-15);
    }
}
