//! Corruption of clean virtual markers into realistic point clouds, and
//! synthesis of labeled training corpora and test sequences.
//!
//! Every stage draws from an explicit RNG. Corpus frame `i` uses its own
//! ChaCha stream `i` under the master seed, so parallel and serial generation
//! produce identical frames.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::{
    place_virtual_markers, rotation_about_up, MotionClip, MotionConfig, Pose, ShapePrior,
    SurrogateBody,
};
use crate::error::{Result, SomaError};
use crate::mocap::{coordinate_median, Frame, LabeledFrame, Labeling, MarkerLayout, MoCapSequence, Point3};

/// How a per-frame count is drawn from its configured maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Uniform on `{0, ..., max}`.
    #[default]
    UpTo,
    /// Always exactly `max`.
    Exact,
}

impl CountMode {
    pub fn draw(self, max: usize, rng: &mut impl Rng) -> usize {
        match self {
            CountMode::UpTo => rng.gen_range(0..=max),
            CountMode::Exact => max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GhostDistribution {
    /// Isotropic Gaussian at the marker median with the markers' spread.
    #[default]
    MarkerGaussian,
    /// Per ghost, one of: the marker Gaussian, uniform in a `[-2, 2]^3` m
    /// cube, or a per-frame Gaussian with random mean in the cube and random
    /// covariance.
    Extreme,
}

/// Named noise regimes: base noise, plus occlusions (C) and/or ghosts (G).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "B")]
    Base,
    #[serde(rename = "B+C")]
    Occlusion,
    #[serde(rename = "B+G")]
    Ghost,
    #[serde(rename = "B+C+G")]
    Full,
    #[serde(rename = "extreme")]
    Extreme,
}

impl Regime {
    pub const GRID: [Regime; 4] = [Regime::Base, Regime::Occlusion, Regime::Ghost, Regime::Full];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Base => "B",
            Regime::Occlusion => "B+C",
            Regime::Ghost => "B+G",
            Regime::Full => "B+C+G",
            Regime::Extreme => "extreme",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub max_occlusions: usize,
    pub occlusion_mode: CountMode,
    pub max_ghosts: usize,
    pub ghost_mode: CountMode,
    pub ghost_distribution: GhostDistribution,
    pub jitter_enabled: bool,
    pub rotation_augment: bool,
    /// Default positional noise sigma, meters.
    pub positional_sigma_m: f64,
    /// Per-label overrides of the positional sigma, meters.
    pub per_label_sigma_m: BTreeMap<String, f64>,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::preset(Regime::Base)
    }
}

impl NoiseConfig {
    pub const DEFAULT_SIGMA_M: f64 = 0.005;

    /// Everything off except the point permutation, which always applies.
    pub fn clean() -> Self {
        NoiseConfig {
            max_occlusions: 0,
            occlusion_mode: CountMode::UpTo,
            max_ghosts: 0,
            ghost_mode: CountMode::UpTo,
            ghost_distribution: GhostDistribution::MarkerGaussian,
            jitter_enabled: false,
            rotation_augment: false,
            positional_sigma_m: 0.0,
            per_label_sigma_m: BTreeMap::new(),
            rng_seed: 0,
        }
    }

    /// Base noise (layout jitter, rotation, 5 mm positional noise) plus up to
    /// 5 occlusions for C and up to 3 ghosts for G. The extreme preset allows
    /// up to 60 ghosts from mixed distributions.
    pub fn preset(regime: Regime) -> Self {
        let base = NoiseConfig {
            jitter_enabled: true,
            rotation_augment: true,
            positional_sigma_m: Self::DEFAULT_SIGMA_M,
            ..NoiseConfig::clean()
        };
        match regime {
            Regime::Base => base,
            Regime::Occlusion => NoiseConfig {
                max_occlusions: 5,
                ..base
            },
            Regime::Ghost => NoiseConfig {
                max_ghosts: 3,
                ..base
            },
            Regime::Full => NoiseConfig {
                max_occlusions: 5,
                max_ghosts: 3,
                ..base
            },
            Regime::Extreme => NoiseConfig {
                max_occlusions: 5,
                max_ghosts: 60,
                ghost_distribution: GhostDistribution::Extreme,
                ..base
            },
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: f64| !(s >= 0.0 && s.is_finite());
        if bad(self.positional_sigma_m) || self.per_label_sigma_m.values().any(|&s| bad(s)) {
            return Err(SomaError::InvalidArgument(
                "positional noise sigma must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Per-marker sigma table for a layout.
    pub fn sigma_table(&self, layout: &MarkerLayout) -> Vec<f64> {
        layout
            .label_set
            .names()
            .iter()
            .map(|n| {
                self.per_label_sigma_m
                    .get(n)
                    .copied()
                    .unwrap_or(self.positional_sigma_m)
            })
            .collect()
    }
}

/// Replaces each marker vertex with a uniform draw from itself and its
/// 1-ring neighbors.
pub fn jitter_layout(
    layout: &MarkerLayout,
    body: &SurrogateBody,
    rng: &mut impl Rng,
) -> MarkerLayout {
    let mut out = layout.clone();
    for v in out.vertex_ids.iter_mut() {
        *v = jitter_vertex(*v, body.one_ring(*v), rng);
    }
    out
}

fn jitter_vertex(v: usize, ring: &[usize], rng: &mut impl Rng) -> usize {
    let pick = rng.gen_range(0..=ring.len());
    if pick < ring.len() {
        ring[pick]
    } else {
        v
    }
}

/// Composes the root orientation with a yaw of `angle` radians about `+y`.
pub fn rotate_globally_by(pose: &Pose, angle: f64) -> Pose {
    let root = pose.theta[0];
    let current = Rotation3::from_scaled_axis(Vector3::new(root[0], root[1], root[2]));
    let composed = rotation_about_up(angle) * current;
    let aa = composed.scaled_axis();
    let mut out = pose.clone();
    out.theta[0] = [aa.x, aa.y, aa.z];
    out
}

/// Random global yaw `r ~ U[0, 2 pi)`; returns the pose and `r`.
pub fn rotate_globally(pose: &Pose, rng: &mut impl Rng) -> (Pose, f64) {
    let r = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    (rotate_globally_by(pose, r), r)
}

/// Adds zero-mean Gaussian noise with per-marker sigma.
pub fn positional_noise(markers: &[Point3], sigmas: &[f64], rng: &mut impl Rng) -> Result<Vec<Point3>> {
    if sigmas.len() != markers.len() {
        return Err(SomaError::LengthMismatch {
            what: "sigma table vs markers",
            left: sigmas.len(),
            right: markers.len(),
        });
    }
    Ok(markers
        .iter()
        .zip(sigmas)
        .map(|(p, &s)| {
            let mut q = *p;
            for c in q.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *c += s * z;
            }
            q
        })
        .collect())
}

/// Scalar spread of a point set: RMS deviation per coordinate about the
/// per-axis mean.
pub fn isotropic_std(points: &[Point3]) -> f64 {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    let ss: f64 = points
        .iter()
        .map(|p| (0..3).map(|k| (p[k] - mean[k]).powi(2)).sum::<f64>())
        .sum();
    (ss / (3.0 * n)).sqrt()
}

fn gaussian_point(mean: Point3, std: f64, rng: &mut impl Rng) -> Point3 {
    let mut p = mean;
    for c in p.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *c += std * z;
    }
    p
}

/// Appends `count` ghost points labeled null and untracked.
pub fn add_ghost_points(
    frame: &LabeledFrame,
    count: usize,
    distribution: GhostDistribution,
    rng: &mut impl Rng,
) -> Result<LabeledFrame> {
    let median = coordinate_median(&frame.frame.points)?;
    let std = isotropic_std(&frame.frame.points);
    let mut out = frame.clone();
    if count == 0 {
        return Ok(out);
    }
    let cube = |rng: &mut dyn rand::RngCore| -> Point3 {
        [
            rng.gen_range(-2.0..=2.0),
            rng.gen_range(-2.0..=2.0),
            rng.gen_range(-2.0..=2.0),
        ]
    };
    // per-frame skewed Gaussian for the extreme distribution
    let skewed = match distribution {
        GhostDistribution::Extreme => {
            let mean = cube(rng);
            let a = Matrix3::from_fn(|_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
            Some((Vector3::new(mean[0], mean[1], mean[2]), a))
        }
        GhostDistribution::MarkerGaussian => None,
    };
    for _ in 0..count {
        let p = match &skewed {
            None => gaussian_point(median, std, rng),
            Some((mean, a)) => match rng.gen_range(0..3) {
                0 => gaussian_point(median, std, rng),
                1 => cube(rng),
                _ => {
                    let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    let q = mean + a * z;
                    [q.x, q.y, q.z]
                }
            },
        };
        out.frame.points.push(p);
        out.labels.0.push(None);
        if let Some(ids) = out.frame.tracklet_ids.as_mut() {
            ids.push(None);
        }
    }
    Ok(out)
}

/// Drops `count` distinct uniformly chosen points and records the labels
/// they carried as occluded.
pub fn occlude_markers(frame: &LabeledFrame, count: usize, rng: &mut impl Rng) -> Result<LabeledFrame> {
    let n = frame.len();
    if count > n {
        return Err(SomaError::InvalidArgument(format!(
            "cannot occlude {count} of {n} points"
        )));
    }
    let mut drop = rand::seq::index::sample(rng, n, count).into_vec();
    drop.sort_unstable();
    let keep: Vec<usize> = (0..n).filter(|i| drop.binary_search(i).is_err()).collect();
    let mut occluded = frame.occluded.clone();
    occluded.extend(drop.iter().filter_map(|&i| frame.labels.0[i]));
    occluded.sort_unstable();
    Ok(LabeledFrame {
        frame: frame.frame.reordered(&keep),
        labels: frame.labels.reordered(&keep),
        occluded,
    })
}

/// Uniform random permutation applied to points, tracklet ids and labels.
/// Returns the frame and `order`, where new point `i` is old point
/// `order[i]`.
pub fn permute_points(frame: &LabeledFrame, rng: &mut impl Rng) -> (LabeledFrame, Vec<usize>) {
    let mut order: Vec<usize> = (0..frame.len()).collect();
    order.shuffle(rng);
    (
        LabeledFrame {
            frame: frame.frame.reordered(&order),
            labels: frame.labels.reordered(&order),
            occluded: frame.occluded.clone(),
        },
        order,
    )
}

/// Inverse of a permutation order.
pub fn invert_order(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}

/// Splits tracklets at random `(tracklet, frame)` pairs: from the break
/// frame on, the tracklet's points carry a fresh id. Positions never change.
pub fn break_tracklets(seq: &MoCapSequence, n_breaks: usize, rng: &mut impl Rng) -> MoCapSequence {
    let mut out = seq.clone();
    let mut next_id = out
        .frames
        .iter()
        .filter_map(|f| f.tracklet_ids.as_ref())
        .flatten()
        .flatten()
        .max()
        .map_or(0, |m| m + 1);
    for _ in 0..n_breaks {
        // candidate breaks: frames where a tracklet continues from earlier
        let mut first_seen: HashMap<u64, usize> = HashMap::new();
        let mut candidates = Vec::new();
        for (t, f) in out.frames.iter().enumerate() {
            for id in f.tracklet_ids.iter().flatten().flatten() {
                match first_seen.get(id) {
                    None => {
                        first_seen.insert(*id, t);
                    }
                    Some(_) => candidates.push((*id, t)),
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        let (id, t0) = candidates[rng.gen_range(0..candidates.len())];
        for f in out.frames.iter_mut().skip(t0) {
            if let Some(ids) = f.tracklet_ids.as_mut() {
                for x in ids.iter_mut().filter(|x| **x == Some(id)) {
                    *x = Some(next_id);
                }
            }
        }
        next_id += 1;
    }
    out
}

/// Everything besides noise that shapes synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub motion: MotionConfig,
    pub shape_prior: ShapePrior,
    /// Clip time from which corpus poses are drawn, seconds.
    pub pose_time_span_s: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            motion: MotionConfig::default(),
            shape_prior: ShapePrior::default(),
            pose_time_span_s: 10.0,
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Occlusion, ghosts and permutation for one frame of clean markers.
fn corrupt_frame(
    markers: Vec<Point3>,
    tracklets: Option<Vec<Option<u64>>>,
    layout: &MarkerLayout,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<LabeledFrame> {
    let sigmas = noise.sigma_table(layout);
    let markers = positional_noise(&markers, &sigmas, rng)?;
    let m = markers.len();
    let mut lf = LabeledFrame {
        frame: Frame {
            points: markers,
            tracklet_ids: tracklets,
        },
        labels: Labeling((0..m).map(Some).collect()),
        occluded: Vec::new(),
    };
    let n_occ = noise.occlusion_mode.draw(noise.max_occlusions, rng).min(m);
    lf = occlude_markers(&lf, n_occ, rng)?;
    let n_ghost = noise.ghost_mode.draw(noise.max_ghosts, rng);
    if n_ghost > 0 {
        if lf.is_empty() {
            // nothing to center ghosts on; fall back to the clean markers' origin
            lf.frame.points.push([0.0; 3]);
            lf.labels.0.push(None);
            if let Some(ids) = lf.frame.tracklet_ids.as_mut() {
                ids.push(None);
            }
            lf = add_ghost_points(&lf, n_ghost - 1, noise.ghost_distribution, rng)?;
        } else {
            lf = add_ghost_points(&lf, n_ghost, noise.ghost_distribution, rng)?;
        }
    }
    Ok(permute_points(&lf, rng).0)
}

/// One independent training frame.
fn synth_frame(
    body: &SurrogateBody,
    layout: &MarkerLayout,
    noise: &NoiseConfig,
    synth: &SynthesisConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LabeledFrame> {
    let beta = synth.shape_prior.sample(rng);
    let clip = MotionClip::random(body, &synth.motion, beta, rng);
    let mut pose = clip.pose_at(rng.gen_range(0.0..synth.pose_time_span_s.max(1e-9)));
    let layout_v = if noise.jitter_enabled {
        jitter_layout(layout, body, rng)
    } else {
        layout.clone()
    };
    if noise.rotation_augment {
        pose = rotate_globally(&pose, rng).0;
    }
    let surface = body.skin(&pose)?;
    let markers = place_virtual_markers(&surface, &layout_v)?;
    corrupt_frame(markers, None, layout, noise, rng)
}

/// Independent noisy frames with ground-truth labels. Ground-truth augmented
/// assignments follow from each frame's labels and occluded list (see
/// [`crate::train::build_gt_assignment`]).
pub fn generate_training_corpus(
    body: &SurrogateBody,
    layout: &MarkerLayout,
    noise: &NoiseConfig,
    synth: &SynthesisConfig,
    n_frames: usize,
) -> Result<Vec<LabeledFrame>> {
    noise.validate()?;
    layout.validate(Some(body.num_vertices()))?;
    (0..n_frames)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(noise.rng_seed, i as u64);
            synth_frame(body, layout, noise, synth, &mut rng)
        })
        .collect()
}

/// A labeled sequence: one body, one motion clip, one jittered layout and one
/// global rotation, with per-frame noise. Marker `m` carries tracklet id `m`
/// until broken; ghosts are untracked.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub frames: Vec<LabeledFrame>,
    pub rate_hz: f64,
}

impl LabeledSequence {
    pub fn to_sequence(&self) -> MoCapSequence {
        MoCapSequence {
            frames: self.frames.iter().map(|f| f.frame.clone()).collect(),
            rate_hz: self.rate_hz,
        }
    }

    pub fn labelings(&self) -> Vec<Labeling> {
        self.frames.iter().map(|f| f.labels.clone()).collect()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn generate_sequence(
    body: &SurrogateBody,
    layout: &MarkerLayout,
    noise: &NoiseConfig,
    synth: &SynthesisConfig,
    n_frames: usize,
    rate_hz: f64,
    tracklet_breaks: usize,
    stream: u64,
) -> Result<LabeledSequence> {
    noise.validate()?;
    let mut rng = stream_rng(noise.rng_seed, stream);
    let beta = synth.shape_prior.sample(&mut rng);
    let clip = MotionClip::random(body, &synth.motion, beta, &mut rng);
    let layout_v = if noise.jitter_enabled {
        jitter_layout(layout, body, &mut rng)
    } else {
        layout.clone()
    };
    let yaw = if noise.rotation_augment {
        rng.gen_range(0.0..2.0 * std::f64::consts::PI)
    } else {
        0.0
    };
    let m = layout.num_markers();
    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let pose = rotate_globally_by(&clip.pose_at(i as f64 / rate_hz), yaw);
        let surface = body.skin(&pose)?;
        let markers = place_virtual_markers(&surface, &layout_v)?;
        let ids = (0..m as u64).map(Some).collect();
        frames.push(corrupt_frame(markers, Some(ids), layout, noise, &mut rng)?);
    }
    let mut seq = LabeledSequence { frames, rate_hz };
    if tracklet_breaks > 0 {
        let broken = break_tracklets(&seq.to_sequence(), tracklet_breaks, &mut rng);
        for (lf, f) in seq.frames.iter_mut().zip(broken.frames) {
            lf.frame.tracklet_ids = f.tracklet_ids;
        }
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{layout_from_specs, LAYOUT_12};
    use crate::mocap::LabelSet;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn frame_of(points: Vec<Point3>) -> LabeledFrame {
        let n = points.len();
        LabeledFrame {
            frame: Frame::new(points).unwrap(),
            labels: Labeling((0..n).map(Some).collect()),
            occluded: vec![],
        }
    }

    /// `|count/n - p| <= 3 sqrt(p (1 - p) / n)`
    fn within_3_sigma(count: usize, n: usize, p: f64) -> bool {
        let freq = count as f64 / n as f64;
        (freq - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn jitter_keeps_isolated_vertex() {
        let mut r = rng(1);
        for _ in 0..10 {
            assert_eq!(jitter_vertex(42, &[], &mut r), 42);
        }
    }

    #[test]
    fn jitter_is_seeded_and_stays_in_ring() {
        let body = SurrogateBody::new_default();
        let layout = MarkerLayout::new(LabelSet::new(["A"]).unwrap(), vec![5], vec![0.0]).unwrap();
        let a = jitter_layout(&layout, &body, &mut rng(1));
        let b = jitter_layout(&layout, &body, &mut rng(1));
        assert_eq!(a, b);
        let v = a.vertex_ids[0];
        assert!(v == 5 || body.one_ring(5).contains(&v));
    }

    #[test]
    fn jitter_frequencies_uniform() {
        let body = SurrogateBody::new_default();
        let v = (0..body.num_vertices())
            .find(|&v| body.one_ring(v).len() == 5)
            .expect("a vertex with 5 neighbors");
        let layout = MarkerLayout::new(LabelSet::new(["A"]).unwrap(), vec![v], vec![0.0]).unwrap();
        let mut r = rng(7);
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let n = 10_000;
        for _ in 0..n {
            *counts.entry(jitter_layout(&layout, &body, &mut r).vertex_ids[0]).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, c) in counts {
            assert!(within_3_sigma(c, n, 1.0 / 6.0));
        }
    }

    #[test]
    fn rotation_by_zero_is_identity_and_pi_twice_returns() {
        let mut pose = Pose::identity();
        pose.theta[0] = [0.2, 0.4, -0.1];
        let same = rotate_globally_by(&pose, 0.0);
        for k in 0..3 {
            assert!((same.theta[0][k] - pose.theta[0][k]).abs() < 1e-12);
        }
        let twice = rotate_globally_by(&rotate_globally_by(&pose, std::f64::consts::PI), std::f64::consts::PI);
        let r = |p: &Pose| {
            let t = p.theta[0];
            Rotation3::from_scaled_axis(Vector3::new(t[0], t[1], t[2]))
        };
        assert!((r(&twice).matrix() - r(&pose).matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn rotated_cloud_equals_rotated_markers() {
        let body = SurrogateBody::new_default();
        let layout = layout_from_specs(&body, &LAYOUT_12, 0.0095).unwrap();
        let poses = crate::body::sample_motion(&body, &MotionConfig { translation_m: 0.0, ..Default::default() }, [0.0; 10], 1.0, 30.0, 4).unwrap();
        let pose = &poses[10];
        let x = place_virtual_markers(&body.skin(pose).unwrap(), &layout).unwrap();
        let (rotated, r) = rotate_globally(pose, &mut rng(3));
        let y = place_virtual_markers(&body.skin(&rotated).unwrap(), &layout).unwrap();
        let (s, c) = r.sin_cos();
        for (a, b) in x.iter().zip(&y) {
            // yaw about +y
            let expect = [c * a[0] + s * a[2], a[1], -s * a[0] + c * a[2]];
            for k in 0..3 {
                assert!((expect[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn positional_noise_cases() {
        let pts = vec![[1.0, 2.0, 3.0]; 4];
        assert_eq!(positional_noise(&pts, &[0.0; 4], &mut rng(1)).unwrap(), pts);
        assert_eq!(
            positional_noise(&pts, &[0.01; 4], &mut rng(2)).unwrap(),
            positional_noise(&pts, &[0.01; 4], &mut rng(2)).unwrap()
        );
        assert!(positional_noise(&pts, &[0.01; 3], &mut rng(2)).is_err());

        let sigma = 0.005;
        let n = 10_000;
        let noisy = positional_noise(&vec![[0.0; 3]; n], &vec![sigma; n], &mut rng(9)).unwrap();
        let var = noisy.iter().flatten().map(|x| x * x).sum::<f64>() / (3 * n) as f64;
        assert!((var.sqrt() - sigma).abs() < 0.05 * sigma);
    }

    #[test]
    fn ghost_cases() {
        let f = frame_of((0..40).map(|i| [i as f64 * 0.01, 1.0, -0.5]).collect());
        let same = add_ghost_points(&f, 0, GhostDistribution::MarkerGaussian, &mut rng(1)).unwrap();
        assert_eq!(same, f);
        let g = add_ghost_points(&f, 3, GhostDistribution::MarkerGaussian, &mut rng(1)).unwrap();
        assert_eq!(g.len(), 43);
        assert!(g.labels.0[40..].iter().all(|l| l.is_none()));
        assert!(add_ghost_points(&frame_of(vec![]), 1, GhostDistribution::MarkerGaussian, &mut rng(1)).is_err());
    }

    #[test]
    fn ghost_mean_is_marker_median() {
        let f = frame_of(vec![[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [3.0, 0.1, 1.0], [0.5, -1.0, 0.3]]);
        let median = coordinate_median(&f.frame.points).unwrap();
        let std = isotropic_std(&f.frame.points);
        let n = 10_000;
        let g = add_ghost_points(&f, n, GhostDistribution::MarkerGaussian, &mut rng(5)).unwrap();
        for k in 0..3 {
            let mean = g.frame.points[4..].iter().map(|p| p[k]).sum::<f64>() / n as f64;
            assert!((mean - median[k]).abs() < 3.0 * std / (n as f64).sqrt());
        }
    }

    #[test]
    fn occlusion_cases() {
        let f = frame_of(vec![[0.0; 3], [1.0; 3], [2.0; 3]]);
        assert_eq!(occlude_markers(&f, 0, &mut rng(1)).unwrap(), f);
        let all = occlude_markers(&f, 3, &mut rng(1)).unwrap();
        assert!(all.is_empty());
        assert_eq!(all.occluded, vec![0, 1, 2]);
        assert!(occlude_markers(&f, 4, &mut rng(1)).is_err());

        let one = occlude_markers(&f, 1, &mut rng(4)).unwrap();
        let gone = one.occluded[0];
        assert!(!one.labels.0.contains(&Some(gone)));
        for (p, l) in one.frame.points.iter().zip(&one.labels.0) {
            assert_eq!(p[0] as usize, l.unwrap());
        }
    }

    #[test]
    fn permutation_cases() {
        let single = frame_of(vec![[1.0; 3]]);
        assert_eq!(permute_points(&single, &mut rng(1)).0, single);

        let f = frame_of(vec![[0.0; 3], [1.0; 3], [2.0; 3], [3.0; 3]]);
        let (p, order) = permute_points(&f, &mut rng(8));
        let inv = invert_order(&order);
        assert_eq!(p.frame.reordered(&inv), f.frame);
        assert_eq!(p.labels.reordered(&inv), f.labels);

        let three = frame_of(vec![[0.0; 3], [1.0; 3], [2.0; 3]]);
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut r = rng(99);
        let n = 6 * 720;
        for _ in 0..n {
            *counts.entry(permute_points(&three, &mut r).1).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!(within_3_sigma(*c, n, 1.0 / 6.0));
        }
    }

    fn tracked_sequence(frames: usize, tracklets: u64) -> MoCapSequence {
        let frames = (0..frames)
            .map(|t| {
                Frame::with_tracklets(
                    (0..tracklets).map(|k| [t as f64, k as f64, 0.0]).collect(),
                    (0..tracklets).map(Some).collect(),
                )
                .unwrap()
            })
            .collect();
        MoCapSequence::new(frames, 30.0).unwrap()
    }

    #[test]
    fn break_tracklets_partition() {
        let seq = tracked_sequence(20, 3);
        assert_eq!(break_tracklets(&seq, 0, &mut rng(1)), seq);

        let broken = break_tracklets(&seq, 1, &mut rng(2));
        let mut changed = vec![];
        for (t, (a, b)) in seq.frames.iter().zip(&broken.frames).enumerate() {
            assert_eq!(a.points, b.points);
            for (x, y) in a.tracklet_ids.as_ref().unwrap().iter().zip(b.tracklet_ids.as_ref().unwrap()) {
                if x != y {
                    assert_eq!(*y, Some(3));
                    changed.push((x.unwrap(), t));
                }
            }
        }
        assert!(!changed.is_empty());
        let k = changed[0].0;
        let t0 = changed.iter().map(|c| c.1).min().unwrap();
        assert!(changed.iter().all(|c| c.0 == k));
        // old id only before t0, new id from t0 on
        for (t, f) in broken.frames.iter().enumerate() {
            let ids = f.tracklet_ids.as_ref().unwrap();
            assert_eq!(ids.contains(&Some(k)), t < t0);
            assert_eq!(ids.contains(&Some(3)), t >= t0);
        }
    }

    #[test]
    fn clean_corpus_is_exact_markers() {
        let body = SurrogateBody::new_default();
        let layout = layout_from_specs(&body, &LAYOUT_12, 0.0095).unwrap();
        let synth = SynthesisConfig::default();
        let corpus = generate_training_corpus(&body, &layout, &NoiseConfig::clean(), &synth, 4).unwrap();
        for lf in &corpus {
            assert_eq!(lf.len(), 12);
            assert!(lf.occluded.is_empty());
            let mut seen: Vec<usize> = lf.labels.0.iter().map(|l| l.unwrap()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn corpus_is_deterministic_and_counts_consistent() {
        let body = SurrogateBody::new_default();
        let layout = layout_from_specs(&body, &LAYOUT_12, 0.0095).unwrap();
        let noise = NoiseConfig::preset(Regime::Full).with_seed(17);
        let synth = SynthesisConfig::default();
        let a = generate_training_corpus(&body, &layout, &noise, &synth, 50).unwrap();
        let b = generate_training_corpus(&body, &layout, &noise, &synth, 50).unwrap();
        assert_eq!(a, b);
        for lf in &a {
            let ghosts = lf.labels.0.iter().filter(|l| l.is_none()).count();
            assert!(ghosts <= 3 && lf.occluded.len() <= 5);
            assert_eq!(lf.len(), 12 - lf.occluded.len() + ghosts);
            assert!(lf.labels.is_injective());
            for m in &lf.occluded {
                assert!(!lf.labels.0.contains(&Some(*m)));
            }
        }
    }

    #[test]
    fn occlusion_counts_uniform() {
        let body = SurrogateBody::new_default();
        let layout = layout_from_specs(&body, &LAYOUT_12, 0.0095).unwrap();
        let noise = NoiseConfig {
            max_occlusions: 5,
            ..NoiseConfig::clean()
        }
        .with_seed(3);
        let n = 3000;
        let corpus =
            generate_training_corpus(&body, &layout, &noise, &SynthesisConfig::default(), n).unwrap();
        let mut hist = [0usize; 6];
        for lf in &corpus {
            hist[lf.occluded.len()] += 1;
        }
        for h in hist {
            assert!(within_3_sigma(h, n, 1.0 / 6.0), "{hist:?}");
        }
    }

    #[test]
    fn sequence_tracklets_follow_markers() {
        let body = SurrogateBody::new_default();
        let layout = layout_from_specs(&body, &LAYOUT_12, 0.0095).unwrap();
        let noise = NoiseConfig::preset(Regime::Full).with_seed(5);
        let seq = generate_sequence(&body, &layout, &noise, &SynthesisConfig::default(), 30, 30.0, 0, 0).unwrap();
        assert_eq!(seq.frames.len(), 30);
        for lf in &seq.frames {
            let ids = lf.frame.tracklet_ids.as_ref().unwrap();
            for (id, l) in ids.iter().zip(&lf.labels.0) {
                assert_eq!(id.map(|x| x as usize), *l);
            }
        }
    }
}
