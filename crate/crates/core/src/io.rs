//! File formats: mpc-jsonl point-cloud sequences, sparse ground-truth
//! sidecars, layout JSON, confidence CSV, and configuration hashing.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SomaError};
use crate::labeler::FrameLabels;
use crate::mocap::{Frame, LabelSet, LabeledFrame, Labeling, MarkerLayout, MoCapSequence, Point3};
use crate::train::build_gt_assignment;

pub const MPC_FORMAT: &str = "mpc-jsonl/1";
pub const GT_FORMAT: &str = "mpc-gt/1";
pub const LAYOUT_FORMAT: &str = "soma-layout/1";

/// Hex SHA-256 of a value's JSON encoding.
pub fn config_hash(value: &impl Serialize) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| SomaError::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SomaError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| SomaError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcHeader {
    pub format: String,
    pub rate_hz: f64,
    pub label_set: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameLine {
    t: usize,
    points: Vec<Point3>,
    tracklets: Vec<Option<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Option<String>>>,
}

/// A parsed mpc-jsonl file.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcFile {
    pub header: MpcHeader,
    pub label_set: LabelSet,
    pub sequence: MoCapSequence,
    pub labels: Option<Vec<Labeling>>,
}

impl MpcFile {
    /// Frames paired with their labels; labels absent from a frame count as
    /// occluded.
    pub fn labeled_frames(&self) -> Result<Vec<LabeledFrame>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| SomaError::InvalidArgument("file carries no labels".into()))?;
        let m = self.label_set.num_markers();
        Ok(self
            .sequence
            .frames
            .iter()
            .zip(labels)
            .map(|(f, l)| LabeledFrame {
                frame: f.clone(),
                labels: l.clone(),
                occluded: (0..m).filter(|k| !l.0.contains(&Some(*k))).collect(),
            })
            .collect())
    }
}

pub fn mpc_to_string(
    seq: &MoCapSequence,
    label_set: &LabelSet,
    labels: Option<&[Labeling]>,
    config_hash: Option<&str>,
) -> Result<String> {
    if let Some(l) = labels {
        if l.len() != seq.frames.len() {
            return Err(SomaError::LengthMismatch {
                what: "labelings vs frames",
                left: l.len(),
                right: seq.frames.len(),
            });
        }
    }
    let header = MpcHeader {
        format: MPC_FORMAT.to_string(),
        rate_hz: seq.rate_hz,
        label_set: label_set.names().to_vec(),
        config_hash: config_hash.map(str::to_string),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for (t, frame) in seq.frames.iter().enumerate() {
        let line = FrameLine {
            t,
            points: frame.points.clone(),
            tracklets: frame.tracklet_ids.clone().unwrap_or_else(|| vec![None; frame.len()]),
            labels: labels.map(|l| {
                l[t].0
                    .iter()
                    .map(|x| x.map(|m| label_set.name(Some(m)).to_string()))
                    .collect()
            }),
        };
        if let Some(names) = &line.labels {
            if names.len() != frame.len() {
                return Err(SomaError::LengthMismatch {
                    what: "labels vs points",
                    left: names.len(),
                    right: frame.len(),
                });
            }
        }
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_mpc(text: &str) -> Result<MpcFile> {
    let bad = |line: usize, message: String| SomaError::format(format!("mpc-jsonl line {}", line + 1), message);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| bad(0, "missing header".into()))?;
    let header: MpcHeader = serde_json::from_str(first).map_err(|e| bad(0, e.to_string()))?;
    if header.format != MPC_FORMAT {
        return Err(bad(0, format!("expected format {MPC_FORMAT}, found {}", header.format)));
    }
    let label_set = LabelSet::new(header.label_set.clone())?;
    let mut frames = Vec::new();
    let mut labels: Option<Vec<Labeling>> = None;
    for (k, (no, line)) in lines.enumerate() {
        let fl: FrameLine = serde_json::from_str(line).map_err(|e| bad(no, e.to_string()))?;
        if fl.t != k {
            return Err(bad(no, format!("expected t = {k}, found {}", fl.t)));
        }
        if fl.tracklets.len() != fl.points.len() {
            return Err(bad(no, "tracklets and points differ in length".into()));
        }
        let tracked = fl.tracklets.iter().any(Option::is_some);
        let frame = if tracked {
            Frame::with_tracklets(fl.points, fl.tracklets)?
        } else {
            Frame::new(fl.points)?
        };
        match (&mut labels, fl.labels) {
            (None, Some(names)) if k == 0 => labels = Some(vec![parse_labels(&label_set, &names, frame.len(), no)?]),
            (Some(acc), Some(names)) => acc.push(parse_labels(&label_set, &names, frame.len(), no)?),
            (None, None) => {}
            _ => return Err(bad(no, "labels must be present on every frame or none".into())),
        }
        frames.push(frame);
    }
    Ok(MpcFile {
        sequence: MoCapSequence::new(frames, header.rate_hz)?,
        header,
        label_set,
        labels,
    })
}

fn parse_labels(set: &LabelSet, names: &[Option<String>], n: usize, line: usize) -> Result<Labeling> {
    if names.len() != n {
        return Err(SomaError::format(
            format!("mpc-jsonl line {}", line + 1),
            format!("{} labels for {n} points", names.len()),
        ));
    }
    Ok(Labeling(names.iter().map(|s| set.parse(s.as_deref())).collect::<Result<_>>()?))
}

pub fn read_mpc(path: impl AsRef<Path>) -> Result<MpcFile> {
    parse_mpc(&read_text(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GtHeader {
    format: String,
    num_markers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GtLine {
    t: usize,
    shape: [usize; 2],
    /// `[row, col, value]` for every non-zero entry.
    entries: Vec<(usize, usize, f64)>,
}

/// Sparse augmented ground-truth assignments, one line per frame.
pub fn gt_to_string(frames: &[LabeledFrame], num_markers: usize, config_hash: Option<&str>) -> Result<String> {
    let mut out = serde_json::to_string(&GtHeader {
        format: GT_FORMAT.to_string(),
        num_markers,
        config_hash: config_hash.map(str::to_string),
    })?;
    out.push('\n');
    for (t, f) in frames.iter().enumerate() {
        let gt = build_gt_assignment(&f.labels, &f.occluded, num_markers)?;
        let entries = gt
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|((i, j), &v)| (i, j, v))
            .collect();
        out.push_str(&serde_json::to_string(&GtLine {
            t,
            shape: [gt.nrows(), gt.ncols()],
            entries,
        })?);
        out.push('\n');
    }
    Ok(out)
}

/// Dense augmented assignments from a `.gt.jsonl` text.
pub fn parse_gt(text: &str) -> Result<Vec<ndarray::Array2<f64>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: GtHeader = serde_json::from_str(lines.next().ok_or_else(|| SomaError::format("gt", "missing header"))?)?;
    if header.format != GT_FORMAT {
        return Err(SomaError::format("gt", format!("expected format {GT_FORMAT}, found {}", header.format)));
    }
    lines
        .map(|l| {
            let line: GtLine = serde_json::from_str(l)?;
            let mut a = ndarray::Array2::zeros((line.shape[0], line.shape[1]));
            for (i, j, v) in line.entries {
                *a.get_mut((i, j)).ok_or_else(|| SomaError::format("gt", format!("entry ({i}, {j}) outside shape")))? = v;
            }
            Ok(a)
        })
        .collect()
}

/// `t,point,label,confidence` rows.
pub fn confidence_csv(results: &[FrameLabels], label_set: &LabelSet, config_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = config_hash {
        let _ = writeln!(out, "# config_hash={h}");
    }
    out.push_str("t,point,label,confidence\n");
    for (t, r) in results.iter().enumerate() {
        for (i, (l, c)) in r.labels.0.iter().zip(&r.confidence).enumerate() {
            let _ = writeln!(out, "{t},{i},{},{c:.6}", label_set.name(*l));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayoutFile {
    format: String,
    labels: Vec<String>,
    vertex_ids: Vec<usize>,
    offsets: Vec<f64>,
}

pub fn layout_to_json(layout: &MarkerLayout) -> Result<String> {
    Ok(serde_json::to_string_pretty(&LayoutFile {
        format: LAYOUT_FORMAT.to_string(),
        labels: layout.label_set.names().to_vec(),
        vertex_ids: layout.vertex_ids.clone(),
        offsets: layout.offsets.clone(),
    })?)
}

pub fn layout_from_json(text: &str) -> Result<MarkerLayout> {
    let file: LayoutFile = serde_json::from_str(text)?;
    if file.format != LAYOUT_FORMAT {
        return Err(SomaError::format("layout", format!("expected format {LAYOUT_FORMAT}, found {}", file.format)));
    }
    MarkerLayout::new(LabelSet::new(file.labels)?, file.vertex_ids, file.offsets)
}
