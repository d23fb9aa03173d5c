//! Per-frame labeling metrics.
//!
//! Null counts as a label for accuracy. For F1 the non-null labels are the
//! positive class and null is the negative class.

use crate::error::{Result, SomaError};
use crate::mocap::Labeling;

fn check_lengths(pred: &Labeling, gt: &Labeling) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(SomaError::LengthMismatch {
            what: "predicted vs ground-truth labels",
            left: pred.len(),
            right: gt.len(),
        });
    }
    Ok(())
}

/// Fraction of points whose predicted label equals the ground truth.
/// An empty frame scores 1.0.
pub fn accuracy(pred: &Labeling, gt: &Labeling) -> Result<f64> {
    check_lengths(pred, gt)?;
    if gt.is_empty() {
        return Ok(1.0);
    }
    let correct = pred.0.iter().zip(&gt.0).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / gt.len() as f64)
}

/// Precision, recall, and their harmonic mean for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn frame_scores(pred: &Labeling, gt: &Labeling) -> Result<FrameScores> {
    check_lengths(pred, gt)?;
    let predicted = pred.0.iter().filter(|p| p.is_some()).count();
    let actual = gt.0.iter().filter(|g| g.is_some()).count();
    let correct = pred
        .0
        .iter()
        .zip(&gt.0)
        .filter(|(p, g)| p.is_some() && p == g)
        .count();
    // nothing to find and nothing claimed: vacuously perfect
    if predicted == 0 && actual == 0 {
        return Ok(FrameScores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        });
    }
    let precision = if predicted == 0 {
        0.0
    } else {
        correct as f64 / predicted as f64
    };
    let recall = if actual == 0 {
        0.0
    } else {
        correct as f64 / actual as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(FrameScores {
        precision,
        recall,
        f1,
    })
}

pub fn f1_frame(pred: &Labeling, gt: &Labeling) -> Result<f64> {
    Ok(frame_scores(pred, gt)?.f1)
}

/// Mean of per-frame F1 scores.
pub fn f1_sequence(per_frame: &[f64]) -> Result<f64> {
    if per_frame.is_empty() {
        return Err(SomaError::InvalidArgument(
            "F1 of an empty sequence".into(),
        ));
    }
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

/// Mean and population standard deviation (Welford's update).
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(SomaError::InvalidArgument("mean of no values".into()));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok((mean, (m2 / values.len() as f64).sqrt()))
}

/// Accuracy and F1 summary over a set of frames, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub frames: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

impl MetricSummary {
    pub fn from_frames<'a>(
        pairs: impl IntoIterator<Item = (&'a Labeling, &'a Labeling)>,
    ) -> Result<Self> {
        let mut accs = Vec::new();
        let mut f1s = Vec::new();
        for (pred, gt) in pairs {
            accs.push(accuracy(pred, gt)?);
            f1s.push(f1_frame(pred, gt)?);
        }
        let (am, asd) = mean_std(&accs)?;
        let (fm, fsd) = mean_std(&f1s)?;
        Ok(MetricSummary {
            frames: accs.len(),
            acc_mean: 100.0 * am,
            acc_std: 100.0 * asd,
            f1_mean: 100.0 * fm,
            f1_std: 100.0 * fsd,
        })
    }

    /// `Acc.` and `F1` cells as `mean ± std`, two decimals.
    pub fn cells(&self) -> (String, String) {
        (
            format!("{:.2} ± {:.2}", self.acc_mean, self.acc_std),
            format!("{:.2} ± {:.2}", self.f1_mean, self.f1_std),
        )
    }
}
