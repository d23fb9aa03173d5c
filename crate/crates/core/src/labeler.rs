//! Hard decoding of assignment matrices, sequence labeling and tracklet
//! majority relabeling.

use std::collections::HashMap;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SomaError};
use crate::mocap::{Label, Labeling, MoCapSequence};
use crate::net::NetParams;
use crate::ot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Per-point argmax; may assign a label twice.
    Argmax,
    /// Commit the largest remaining entry until every point is labeled.
    #[default]
    Greedy,
    /// Maximum total log-mass under the one-label-per-point constraint.
    Exact,
}

impl FromStr for DecodeMode {
    type Err = SomaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(DecodeMode::Argmax),
            "greedy" => Ok(DecodeMode::Greedy),
            "exact" => Ok(DecodeMode::Exact),
            other => Err(SomaError::InvalidArgument(format!("unknown decode mode {other:?}"))),
        }
    }
}

const LOG_FLOOR: f64 = -690.0; // about ln(1e-300)

fn log_mass(x: f64) -> f64 {
    if x > 0.0 {
        x.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    }
}

/// Decodes `A` (`n x (M+1)`, last column null) into one label per row.
pub fn decode_frame(a: &Array2<f64>, mode: DecodeMode) -> Result<Labeling> {
    let (n, cols) = a.dim();
    if n == 0 || cols < 2 {
        return Err(SomaError::InvalidArgument(format!("cannot decode a {n}x{cols} assignment")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(SomaError::NonFinite("assignment matrix"));
    }
    let m = cols - 1;
    let to_label = |j: usize| if j == m { None } else { Some(j) };
    Ok(Labeling(match mode {
        DecodeMode::Argmax => a
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for j in 1..cols {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                to_label(best)
            })
            .collect(),
        DecodeMode::Greedy => {
            let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
            entries.sort_by(|&(i, j), &(k, l)| a[[k, l]].total_cmp(&a[[i, j]]).then((i, j).cmp(&(k, l))));
            let mut out: Vec<Option<Label>> = vec![None; n];
            let mut col_used = vec![false; m];
            let mut left = n;
            for (i, j) in entries {
                if out[i].is_some() || (j < m && col_used[j]) {
                    continue;
                }
                if j < m {
                    col_used[j] = true;
                }
                out[i] = Some(to_label(j));
                left -= 1;
                if left == 0 {
                    break;
                }
            }
            out.into_iter().map(|l| l.expect("null column is always free")).collect()
        }
        DecodeMode::Exact => {
            // Null gets one column per point so any number of points can be null.
            let cost = Array2::from_shape_fn((n, m + n), |(i, j)| -log_mass(a[[i, j.min(m)]]));
            hungarian(&cost)?
                .into_iter()
                .map(|j| if j < m { Some(j) } else { None })
                .collect()
        }
    }))
}

/// Sum of `log A[i, label_i]` over points.
pub fn total_log_mass(a: &Array2<f64>, labels: &Labeling) -> f64 {
    let m = a.ncols() - 1;
    labels
        .0
        .iter()
        .enumerate()
        .map(|(i, l)| log_mass(a[[i, l.unwrap_or(m)]]))
        .sum()
}

/// Assigned-entry mass per point.
pub fn confidences(a: &Array2<f64>, labels: &Labeling) -> Vec<f64> {
    let m = a.ncols() - 1;
    labels.0.iter().enumerate().map(|(i, l)| a[[i, l.unwrap_or(m)]]).collect()
}

/// Minimum-cost assignment of every row to a distinct column
/// (`rows <= cols`). Returns the column of each row.
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n > m {
        return Err(SomaError::Shape(format!("assignment needs rows <= columns, got {n}x{m}")));
    }
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(SomaError::NonFinite("assignment cost"));
    }
    // Potentials-based shortest augmenting path, 1-indexed with a virtual
    // row/column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

/// Assignment matrix (`n x (M+1)`) of one frame under `params`.
pub fn assignment(params: &NetParams, frame: &crate::mocap::Frame, iters: usize) -> Result<Array2<f64>> {
    let scores = params.forward(frame)?.scores;
    let aug = ot::augment(&scores, params.alpha())?;
    Ok(ot::drop_unmatched_row(&ot::sinkhorn_log(&aug, iters)?))
}

/// Labels and per-point confidences of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub labels: Labeling,
    pub confidence: Vec<f64>,
}

pub fn label_frame(
    params: &NetParams,
    frame: &crate::mocap::Frame,
    mode: DecodeMode,
    iters: usize,
) -> Result<FrameLabels> {
    let a = assignment(params, frame, iters)?;
    let labels = decode_frame(&a, mode)?;
    let confidence = confidences(&a, &labels);
    Ok(FrameLabels { labels, confidence })
}

/// Labels every frame independently.
pub fn label_sequence(
    params: &NetParams,
    seq: &MoCapSequence,
    mode: DecodeMode,
    iters: usize,
) -> Result<Vec<FrameLabels>> {
    seq.frames
        .par_iter()
        .map(|f| {
            if f.is_empty() {
                Ok(FrameLabels {
                    labels: Labeling(vec![]),
                    confidence: vec![],
                })
            } else {
                label_frame(params, f, mode, iters)
            }
        })
        .collect()
}

/// Result of tracklet relabeling.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletOutcome {
    pub labelings: Vec<Labeling>,
    /// Frames where relabeling assigned a label twice.
    pub inconsistent_frames: Vec<usize>,
}

/// Overwrites every tracked point with its tracklet's most frequent label.
/// Ties go to the smallest label index, null last. Untracked points keep
/// their per-frame label.
pub fn tracklet_label(per_frame: &[Labeling], seq: &MoCapSequence, num_markers: usize) -> Result<TrackletOutcome> {
    if per_frame.len() != seq.frames.len() {
        return Err(SomaError::LengthMismatch {
            what: "labelings vs frames",
            left: per_frame.len(),
            right: seq.frames.len(),
        });
    }
    let slot = |l: &Label| l.unwrap_or(num_markers);
    let mut counts: HashMap<u64, Vec<usize>> = HashMap::new();
    for (labels, frame) in per_frame.iter().zip(&seq.frames) {
        if labels.len() != frame.len() {
            return Err(SomaError::LengthMismatch {
                what: "labels vs points",
                left: labels.len(),
                right: frame.len(),
            });
        }
        let Some(ids) = &frame.tracklet_ids else { continue };
        for (l, id) in labels.0.iter().zip(ids) {
            if let Some(id) = id {
                if let Some(index) = l {
                    if *index >= num_markers {
                        return Err(SomaError::InvalidArgument(format!("label {index} out of range")));
                    }
                }
                counts.entry(*id).or_insert_with(|| vec![0; num_markers + 1])[slot(l)] += 1;
            }
        }
    }
    let modal: HashMap<u64, Label> = counts
        .into_iter()
        .map(|(id, c)| {
            let mut best = 0;
            for (k, &n) in c.iter().enumerate() {
                if n > c[best] {
                    best = k;
                }
            }
            (id, if best == num_markers { None } else { Some(best) })
        })
        .collect();
    let mut labelings = Vec::with_capacity(per_frame.len());
    let mut inconsistent_frames = Vec::new();
    for (t, (labels, frame)) in per_frame.iter().zip(&seq.frames).enumerate() {
        let out = match &frame.tracklet_ids {
            Some(ids) => Labeling(
                labels
                    .0
                    .iter()
                    .zip(ids)
                    .map(|(l, id)| id.map_or(*l, |id| modal[&id]))
                    .collect(),
            ),
            None => labels.clone(),
        };
        if !out.is_injective() {
            inconsistent_frames.push(t);
        }
        labelings.push(out);
    }
    Ok(TrackletOutcome {
        labelings,
        inconsistent_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mocap::Frame;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_assignment(n: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Array2::from_shape_fn((n, m), |_| rng.gen_range(-3.0..3.0));
        ot::drop_unmatched_row(&ot::sinkhorn_log(&ot::augment(&s, 0.0).unwrap(), 35).unwrap())
    }

    /// Exhaustive search over injective labelings.
    fn brute_force(a: &Array2<f64>) -> f64 {
        fn go(a: &Array2<f64>, i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let m = a.ncols() - 1;
            if i == a.nrows() {
                *best = best.max(acc);
                return;
            }
            go(a, i + 1, used, acc + log_mass(a[[i, m]]), best);
            for j in 0..m {
                if !used[j] {
                    used[j] = true;
                    go(a, i + 1, used, acc + log_mass(a[[i, j]]), best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::NEG_INFINITY;
        go(a, 0, &mut vec![false; a.ncols() - 1], 0.0, &mut best);
        best
    }

    #[test]
    fn permutation_matrix_all_modes_agree() {
        let a = array![[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0]];
        let expect = Labeling(vec![Some(1), None, Some(0)]);
        for mode in [DecodeMode::Argmax, DecodeMode::Greedy, DecodeMode::Exact] {
            assert_eq!(decode_frame(&a, mode).unwrap(), expect, "{mode:?}");
        }
    }

    #[test]
    fn greedy_and_exact_are_injective() {
        for seed in 0..50 {
            let a = random_assignment(8, 5, seed);
            assert!(decode_frame(&a, DecodeMode::Greedy).unwrap().is_injective());
            assert!(decode_frame(&a, DecodeMode::Exact).unwrap().is_injective());
        }
    }

    #[test]
    fn exact_matches_brute_force() {
        for seed in 0..100 {
            let (n, m) = if seed % 2 == 0 { (6, 5) } else { (7, 6) };
            let a = random_assignment(n, m, seed);
            let exact = decode_frame(&a, DecodeMode::Exact).unwrap();
            let greedy = decode_frame(&a, DecodeMode::Greedy).unwrap();
            let best = brute_force(&a);
            assert!((total_log_mass(&a, &exact) - best).abs() < 1e-9, "seed {seed}");
            assert!(total_log_mass(&a, &greedy) <= best + 1e-9);
        }
    }

    #[test]
    fn hungarian_small() {
        let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        assert_eq!(hungarian(&cost).unwrap(), vec![1, 0, 2]);
        assert!(hungarian(&Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn decode_errors() {
        assert!(decode_frame(&Array2::zeros((0, 3)), DecodeMode::Greedy).is_err());
        assert!(decode_frame(&array![[f64::NAN, 0.0]], DecodeMode::Greedy).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("exact".parse::<DecodeMode>().unwrap(), DecodeMode::Exact);
        assert!("best".parse::<DecodeMode>().is_err());
    }

    fn tracked(ids: &[&[Option<u64>]]) -> MoCapSequence {
        let frames = ids
            .iter()
            .map(|f| Frame::with_tracklets(vec![[0.0; 3]; f.len()], f.to_vec()).unwrap())
            .collect();
        MoCapSequence::new(frames, 30.0).unwrap()
    }

    #[test]
    fn tracklet_majority() {
        let seq = tracked(&[&[Some(1), Some(2)], &[Some(1), Some(2)], &[Some(1), None]]);
        let per = vec![
            Labeling(vec![Some(0), Some(2)]),
            Labeling(vec![Some(0), Some(2)]),
            Labeling(vec![Some(1), Some(3)]),
        ];
        let out = tracklet_label(&per, &seq, 4).unwrap();
        assert_eq!(out.labelings[2], Labeling(vec![Some(0), Some(3)]));
        assert!(out.inconsistent_frames.is_empty());
    }

    #[test]
    fn tracklet_constant_is_unchanged() {
        let seq = tracked(&[&[Some(7), Some(8)], &[Some(8), Some(7)]]);
        let per = vec![Labeling(vec![Some(0), None]), Labeling(vec![None, Some(0)])];
        assert_eq!(tracklet_label(&per, &seq, 2).unwrap().labelings, per);
    }

    #[test]
    fn tracklet_ties_prefer_small_index_null_last() {
        let seq = tracked(&[&[Some(1)], &[Some(1)], &[Some(1)], &[Some(1)]]);
        let tie = |a: Label, b: Label| vec![Labeling(vec![a]), Labeling(vec![b]), Labeling(vec![b]), Labeling(vec![a])];
        let out = tracklet_label(&tie(Some(3), Some(1)), &seq, 4).unwrap();
        assert!(out.labelings.iter().all(|l| l.0 == vec![Some(1)]));
        let out = tracklet_label(&tie(None, Some(2)), &seq, 4).unwrap();
        assert!(out.labelings.iter().all(|l| l.0 == vec![Some(2)]));
    }

    #[test]
    fn tracklet_mode_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 3;
        for _ in 0..50 {
            let len = rng.gen_range(1..12);
            let labels: Vec<Label> = (0..len)
                .map(|_| {
                    let k = rng.gen_range(0..=m);
                    (k < m).then_some(k)
                })
                .collect();
            let ids: Vec<Vec<Option<u64>>> = (0..len).map(|_| vec![Some(5)]).collect();
            let id_refs: Vec<&[Option<u64>]> = ids.iter().map(|v| v.as_slice()).collect();
            let seq = tracked(&id_refs);
            let per: Vec<Labeling> = labels.iter().map(|&l| Labeling(vec![l])).collect();
            let got = tracklet_label(&per, &seq, m).unwrap().labelings[0].0[0];

            let order: Vec<Label> = (0..m).map(Some).chain([None]).collect();
            let count = |c: &Label| labels.iter().filter(|l| *l == c).count();
            let top = order.iter().map(count).max().unwrap();
            let expect = *order.iter().find(|c| count(c) == top).unwrap();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn tracklet_flags_inconsistent_frames() {
        let seq = tracked(&[&[Some(1), Some(2)], &[Some(1), Some(2)]]);
        let per = vec![Labeling(vec![Some(0), Some(1)]), Labeling(vec![Some(0), Some(0)])];
        let out = tracklet_label(&per, &seq, 2).unwrap();
        // tracklet 2 ties 1-1 between labels 1 and 0; 0 wins and collides.
        assert_eq!(out.inconsistent_frames, vec![0, 1]);
    }
}
