//! Point-cloud data model: frames, sequences, label sets, marker layouts and
//! labelings.
//!
//! A frame holds an unordered set of reconstructed 3D points. Occluded markers
//! are absent from a frame; ghost points are present but carry the null label.

use std::collections::HashSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SomaError};

pub type Point3 = [f64; 3];

/// Per-point label: `Some(m)` for marker `m`, `None` for the null label.
pub type Label = Option<usize>;

/// One time step of a point cloud.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Frame {
    pub points: Vec<Point3>,
    /// Optional per-point tracklet ids. `None` entries are untracked points.
    pub tracklet_ids: Option<Vec<Option<u64>>>,
}

impl Frame {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        let frame = Frame {
            points,
            tracklet_ids: None,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn with_tracklets(points: Vec<Point3>, tracklet_ids: Vec<Option<u64>>) -> Result<Self> {
        let frame = Frame {
            points,
            tracklet_ids: Some(tracklet_ids),
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(SomaError::NonFinite("frame points"));
        }
        if let Some(ids) = &self.tracklet_ids {
            if ids.len() != self.points.len() {
                return Err(SomaError::LengthMismatch {
                    what: "tracklet ids vs points",
                    left: ids.len(),
                    right: self.points.len(),
                });
            }
        }
        Ok(())
    }

    /// Number of points `n_t`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reorders points (and tracklet ids) so that new index `i` holds old
    /// index `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Frame {
        Frame {
            points: order.iter().map(|&i| self.points[i]).collect(),
            tracklet_ids: self
                .tracklet_ids
                .as_ref()
                .map(|ids| order.iter().map(|&i| ids[i]).collect()),
        }
    }

    pub fn translated(&self, offset: Point3) -> Frame {
        Frame {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
            tracklet_ids: self.tracklet_ids.clone(),
        }
    }
}

/// Time-ordered frames sampled at `rate_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoCapSequence {
    pub frames: Vec<Frame>,
    pub rate_hz: f64,
}

impl MoCapSequence {
    pub const DEFAULT_RATE_HZ: f64 = 30.0;

    pub fn new(frames: Vec<Frame>, rate_hz: f64) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(SomaError::InvalidArgument(format!(
                "rate_hz must be positive, got {rate_hz}"
            )));
        }
        Ok(MoCapSequence { frames, rate_hz })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Ordered marker names; the null label is implicit and sits after the last
/// marker (index `M`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub const NULL_NAME: &'static str = "null";

    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for name in &names {
            if name == Self::NULL_NAME {
                return Err(SomaError::InvalidArgument(
                    "marker name 'null' is reserved".into(),
                ));
            }
            if !seen.insert(name.as_str()) {
                return Err(SomaError::InvalidArgument(format!(
                    "duplicate marker name {name}"
                )));
            }
        }
        Ok(LabelSet { names })
    }

    /// Number of real markers `M`.
    pub fn num_markers(&self) -> usize {
        self.names.len()
    }

    /// `|L| = M + 1`.
    pub fn len(&self) -> usize {
        self.names.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn null_index(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, label: Label) -> &str {
        match label {
            Some(m) => &self.names[m],
            None => Self::NULL_NAME,
        }
    }

    /// Parses a label name; `None`/"null" map to the null label.
    pub fn parse(&self, name: Option<&str>) -> Result<Label> {
        match name {
            None | Some(Self::NULL_NAME) => Ok(None),
            Some(n) => self
                .index_of(n)
                .map(Some)
                .ok_or_else(|| SomaError::InvalidArgument(format!("unknown label {n}"))),
        }
    }
}

/// Label-to-surface binding: marker `m` sits `offsets[m]` meters along the
/// normal of surface vertex `vertex_ids[m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerLayout {
    pub label_set: LabelSet,
    pub vertex_ids: Vec<usize>,
    pub offsets: Vec<f64>,
}

impl MarkerLayout {
    pub const DEFAULT_OFFSET_M: f64 = 0.0095;

    pub fn new(label_set: LabelSet, vertex_ids: Vec<usize>, offsets: Vec<f64>) -> Result<Self> {
        let layout = MarkerLayout {
            label_set,
            vertex_ids,
            offsets,
        };
        layout.validate(None)?;
        Ok(layout)
    }

    pub fn num_markers(&self) -> usize {
        self.label_set.num_markers()
    }

    /// Checks shapes, offsets, and (when given) vertex ids against a surface
    /// with `num_vertices` vertices.
    pub fn validate(&self, num_vertices: Option<usize>) -> Result<()> {
        let m = self.label_set.num_markers();
        if self.vertex_ids.len() != m {
            return Err(SomaError::LengthMismatch {
                what: "layout vertex ids vs labels",
                left: self.vertex_ids.len(),
                right: m,
            });
        }
        if self.offsets.len() != m {
            return Err(SomaError::LengthMismatch {
                what: "layout offsets vs labels",
                left: self.offsets.len(),
                right: m,
            });
        }
        if let Some(&d) = self.offsets.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
            return Err(SomaError::InvalidArgument(format!(
                "marker offset must be finite and >= 0, got {d}"
            )));
        }
        if let Some(nv) = num_vertices {
            if let Some(&v) = self.vertex_ids.iter().find(|&&v| v >= nv) {
                return Err(SomaError::InvalidArgument(format!(
                    "vertex id {v} out of range for surface with {nv} vertices"
                )));
            }
        }
        Ok(())
    }

    /// Restricts the layout to the named markers, keeping this layout's order.
    pub fn subset(&self, keep: &[&str]) -> Result<MarkerLayout> {
        let mut names = Vec::new();
        let mut vertex_ids = Vec::new();
        let mut offsets = Vec::new();
        for (m, name) in self.label_set.names().iter().enumerate() {
            if keep.contains(&name.as_str()) {
                names.push(name.clone());
                vertex_ids.push(self.vertex_ids[m]);
                offsets.push(self.offsets[m]);
            }
        }
        MarkerLayout::new(LabelSet::new(names)?, vertex_ids, offsets)
    }
}

/// One label per point of a frame.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Labeling(pub Vec<Label>);

impl Labeling {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.0
    }

    /// Each non-null label appears at most once; null may repeat.
    pub fn is_injective(&self) -> bool {
        let mut seen = HashSet::new();
        self.0.iter().flatten().all(|m| seen.insert(*m))
    }

    pub fn check_injective(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for m in self.0.iter().flatten() {
            if !seen.insert(*m) {
                return Err(SomaError::Constraint(format!(
                    "label {m} assigned to more than one point"
                )));
            }
        }
        Ok(())
    }

    pub fn reordered(&self, order: &[usize]) -> Labeling {
        Labeling(order.iter().map(|&i| self.0[i]).collect())
    }
}

/// A frame together with its ground-truth labels and the markers missing
/// from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: Frame,
    pub labels: Labeling,
    /// Marker indices that are occluded in this frame, ascending.
    pub occluded: Vec<usize>,
}

impl LabeledFrame {
    pub fn len(&self) -> usize {
        self.frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame.is_empty()
    }
}

/// Soft point-to-label assignment. The plain form is `n_t x (M+1)`; the
/// augmented form carries one extra dustbin row for unmatched labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    pub values: Array2<f64>,
    pub augmented: bool,
}

impl AssignmentMatrix {
    pub fn num_points(&self) -> usize {
        if self.augmented {
            self.values.nrows() - 1
        } else {
            self.values.nrows()
        }
    }

    pub fn num_markers(&self) -> usize {
        self.values.ncols() - 1
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Coordinate-wise median of the points.
pub fn coordinate_median(points: &[Point3]) -> Result<Point3> {
    if points.is_empty() {
        return Err(SomaError::EmptyFrame);
    }
    let mut out = [0.0; 3];
    let mut buf = Vec::with_capacity(points.len());
    for (axis, o) in out.iter_mut().enumerate() {
        buf.clear();
        buf.extend(points.iter().map(|p| p[axis]));
        *o = median(&mut buf);
    }
    Ok(out)
}

/// Subtracts the coordinate-wise median. The returned offset restores the
/// original frame via [`Frame::translated`].
pub fn median_center(frame: &Frame) -> Result<(Frame, Point3)> {
    let med = coordinate_median(&frame.points)?;
    Ok((frame.translated([-med[0], -med[1], -med[2]]), med))
}
