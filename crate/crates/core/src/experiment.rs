//! Desk-scale experiment protocols: the train/test noise grid, the exact
//! occlusion sweep, per-frame versus tracklet labeling, and marker-layout
//! robustness. Every protocol returns a [`ResultsTable`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body::{layout_from_specs, SurrogateBody, LAYOUT_12, LAYOUT_20};
use crate::error::{Result, SomaError};
use crate::labeler::{label_sequence, tracklet_label, DecodeMode};
use crate::metrics::MetricSummary;
use crate::mocap::{LabelSet, LabeledFrame, Labeling, MarkerLayout, MoCapSequence};
use crate::net::{NetConfig, NetParams};
use crate::noise::{
    generate_sequence, generate_training_corpus, CountMode, LabeledSequence, NoiseConfig, Regime, SynthesisConfig,
};
use crate::train::{predict, train, TrainConfig, TrainState};

/// Built-in marker layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutPreset {
    #[default]
    Layout12,
    Layout20,
}

impl LayoutPreset {
    pub fn build(self, body: &SurrogateBody) -> Result<MarkerLayout> {
        let specs: &[_] = match self {
            LayoutPreset::Layout12 => &LAYOUT_12,
            LayoutPreset::Layout20 => &LAYOUT_20,
        };
        layout_from_specs(body, specs, MarkerLayout::DEFAULT_OFFSET_M)
    }

    /// The preset whose labels are exactly `names`, in order.
    pub fn matching(names: &[String]) -> Option<Self> {
        [LayoutPreset::Layout12, LayoutPreset::Layout20].into_iter().find(|p| {
            let specs: &[_] = match p {
                LayoutPreset::Layout12 => &LAYOUT_12,
                LayoutPreset::Layout20 => &LAYOUT_20,
            };
            specs.len() == names.len() && specs.iter().zip(names).all(|(s, n)| s.name == n)
        })
    }
}

/// Markers dropped from [`LAYOUT_20`] to form nested subsets; the first `k`
/// entries are removed for a subset of size `20 - k`.
pub const REMOVAL_ORDER: [&str; 12] = [
    "HEAD", "LTOE", "RTOE", "T10", "LTHI", "RTHI", "LASI", "RASI", "LELB", "RELB", "LKNE", "RKNE",
];

/// Stable 64-bit seed for a named purpose.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Corpus sizes, network and optimizer settings shared by the protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub layout: LayoutPreset,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub synthesis: SynthesisConfig,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
    /// Sequences for the tracklet comparison.
    pub sequences: usize,
    pub sequence_frames: usize,
    pub sequence_rate_hz: f64,
    pub tracklet_breaks: usize,
    /// Marker counts removed from the superset in the layout protocol.
    pub removals: Vec<usize>,
    pub decode: DecodeMode,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            layout: LayoutPreset::Layout12,
            net: NetConfig::desk(),
            train: TrainConfig {
                batch_size: 8,
                weight_cap: 1.0,
                ..TrainConfig::default()
            },
            synthesis: SynthesisConfig::default(),
            train_frames: 10_000,
            val_frames: 500,
            test_frames: 500,
            sequences: 5,
            sequence_frames: 120,
            sequence_rate_hz: 30.0,
            tracklet_breaks: 6,
            removals: vec![3, 5, 6, 12],
            decode: DecodeMode::Greedy,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// A configuration small enough to finish within seconds.
    pub fn smoke() -> Self {
        ExperimentConfig {
            net: NetConfig {
                d_model: 8,
                heads: 2,
                layers: 2,
                feature_width: 16,
            },
            train: TrainConfig {
                max_epochs: 2,
                batch_size: 8,
                ..TrainConfig::default()
            },
            train_frames: 48,
            val_frames: 16,
            test_frames: 16,
            sequences: 2,
            sequence_frames: 30,
            tracklet_breaks: 2,
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        if self.train_frames == 0 || self.val_frames == 0 || self.test_frames == 0 {
            return Err(SomaError::InvalidArgument("corpus sizes must be positive".into()));
        }
        if !(self.sequence_rate_hz > 0.0) {
            return Err(SomaError::InvalidArgument("sequence rate must be positive".into()));
        }
        if let Some(&k) = self.removals.iter().find(|&&k| k == 0 || k > REMOVAL_ORDER.len()) {
            return Err(SomaError::InvalidArgument(format!(
                "can remove 1..={} markers, got {k}",
                REMOVAL_ORDER.len()
            )));
        }
        Ok(())
    }
}

/// Body, layout and configuration for one experiment run.
#[derive(Debug, Clone)]
pub struct DeskSetup {
    pub body: SurrogateBody,
    pub layout: MarkerLayout,
    pub config: ExperimentConfig,
}

impl DeskSetup {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let body = SurrogateBody::new_default();
        let layout = config.layout.build(&body)?;
        Ok(DeskSetup { body, layout, config })
    }

    pub fn noise(&self, regime: Regime, tag: &str) -> NoiseConfig {
        NoiseConfig::preset(regime).with_seed(derive_seed(self.config.seed, tag))
    }

    /// Independent frames on this setup's layout.
    pub fn corpus(&self, noise: &NoiseConfig, n: usize) -> Result<Vec<LabeledFrame>> {
        self.corpus_on(&self.layout, noise, n)
    }

    pub fn corpus_on(&self, layout: &MarkerLayout, noise: &NoiseConfig, n: usize) -> Result<Vec<LabeledFrame>> {
        generate_training_corpus(&self.body, layout, noise, &self.config.synthesis, n)
    }

    /// Trains on `regime` data over `layout`; validation uses the same regime.
    pub fn train_model_on(&self, layout: &MarkerLayout, regime: Regime, tag: &str) -> Result<TrainState> {
        let c = &self.config;
        let train_set = self.corpus_on(layout, &self.noise(regime, &format!("{tag}/train")), c.train_frames)?;
        let val = self.corpus_on(layout, &self.noise(regime, &format!("{tag}/val")), c.val_frames)?;
        train(c.net, layout.num_markers(), &train_set, &val, &c.train)
    }

    pub fn train_model(&self, regime: Regime) -> Result<TrainState> {
        self.train_model_on(&self.layout, regime, regime.name())
    }

    /// Held-out frames of `regime` for testing.
    pub fn test_set(&self, regime: Regime) -> Result<Vec<LabeledFrame>> {
        self.corpus(&self.noise(regime, &format!("test/{}", regime.name())), self.config.test_frames)
    }
}

/// Accuracy and F1 of `params` on labeled frames.
pub fn evaluate_frames(params: &NetParams, frames: &[LabeledFrame], mode: DecodeMode, iters: usize) -> Result<MetricSummary> {
    use rayon::prelude::*;
    let preds: Vec<Labeling> = frames
        .par_iter()
        .map(|f| predict(params, &f.frame, mode, iters))
        .collect::<Result<_>>()?;
    MetricSummary::from_frames(preds.iter().zip(frames.iter().map(|f| &f.labels)))
}

/// Rewrites labels from one label set to another by name; markers unknown
/// to `to` become null, and `to` labels without a point become occluded.
pub fn remap_frames(frames: &[LabeledFrame], from: &LabelSet, to: &LabelSet) -> Vec<LabeledFrame> {
    let map: Vec<Option<usize>> = from.names().iter().map(|n| to.index_of(n)).collect();
    frames
        .iter()
        .map(|f| {
            let labels = Labeling(f.labels.0.iter().map(|l| l.and_then(|m| map[m])).collect());
            let present: HashSet<usize> = labels.0.iter().flatten().copied().collect();
            LabeledFrame {
                frame: f.frame.clone(),
                occluded: (0..to.num_markers()).filter(|m| !present.contains(m)).collect(),
                labels,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub name: String,
    pub cells: Vec<MetricSummary>,
}

/// Rows of conditions by columns of conditions, each cell an accuracy and
/// F1 summary in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub title: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    /// Seeds and config hashes written as `# key=value` lines.
    pub meta: BTreeMap<String, String>,
}

impl ResultsTable {
    pub fn new(title: &str, row_header: &str, columns: Vec<String>) -> Self {
        ResultsTable {
            title: title.to_string(),
            row_header: row_header.to_string(),
            columns,
            rows: Vec::new(),
            meta: BTreeMap::new(),
        }
    }

    pub fn push_row(&mut self, name: &str, cells: Vec<MetricSummary>) -> Result<()> {
        if cells.len() != self.columns.len() {
            return Err(SomaError::LengthMismatch {
                what: "table cells vs columns",
                left: cells.len(),
                right: self.columns.len(),
            });
        }
        self.rows.push(TableRow {
            name: name.to_string(),
            cells,
        });
        Ok(())
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<&MetricSummary> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.name == row).map(|r| &r.cells[c])
    }

    pub fn row(&self, name: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// `row,<col> acc,<col> acc_std,<col> f1,<col> f1_std,...` after the
    /// metadata comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# title={}", self.title);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        out.push_str(&csv_field(&self.row_header));
        for c in &self.columns {
            for suffix in ["acc", "acc_std", "f1", "f1_std"] {
                let _ = write!(out, ",{}", csv_field(&format!("{c} {suffix}")));
            }
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&csv_field(&r.name));
            for s in &r.cells {
                let _ = write!(out, ",{:.4},{:.4},{:.4},{:.4}", s.acc_mean, s.acc_std, s.f1_mean, s.f1_std);
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width text rendering with `Acc.` and `F1` sub-columns.
    pub fn render(&self) -> String {
        let mut header = vec![self.row_header.clone()];
        let mut sub = vec![String::new()];
        for c in &self.columns {
            header.extend([c.clone(), String::new()]);
            sub.extend(["Acc.".to_string(), "F1".to_string()]);
        }
        let mut lines = vec![header, sub];
        for r in &self.rows {
            let mut line = vec![r.name.clone()];
            for s in &r.cells {
                let (a, f) = s.cells();
                line.extend([a, f]);
            }
            lines.push(line);
        }
        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|k| lines.iter().map(|l| l[k].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{}\n", self.title);
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if i == 1 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("-+-"));
                out.push('\n');
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn regime_columns() -> Vec<String> {
    Regime::GRID.iter().map(|r| r.name().to_string()).collect()
}

/// Train regimes by test regimes. `models` supplies a trained network per
/// train regime; missing rows are skipped.
pub fn noise_grid(setup: &DeskSetup, models: &[(Regime, &NetParams)]) -> Result<ResultsTable> {
    let c = &setup.config;
    let mut table = ResultsTable::new("Per-frame labeling under train/test noise", "train \\ test", regime_columns());
    let tests = Regime::GRID
        .iter()
        .map(|&r| setup.test_set(r))
        .collect::<Result<Vec<_>>>()?;
    for regime in Regime::GRID {
        let Some((_, params)) = models.iter().find(|(r, _)| *r == regime) else { continue };
        let cells = tests
            .iter()
            .map(|t| evaluate_frames(params, t, c.decode, c.train.sinkhorn_iters))
            .collect::<Result<Vec<_>>>()?;
        table.push_row(regime.name(), cells)?;
    }
    table.meta.insert("seed".into(), c.seed.to_string());
    table.meta.insert("config_hash".into(), crate::io::config_hash(c)?);
    Ok(table)
}

/// Trains one model per grid regime and evaluates the full grid.
pub fn train_noise_grid(setup: &DeskSetup) -> Result<(ResultsTable, Vec<(Regime, NetParams)>)> {
    let models = Regime::GRID
        .iter()
        .map(|&r| Ok((r, setup.train_model(r)?.best)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<(Regime, &NetParams)> = models.iter().map(|(r, p)| (*r, p)).collect();
    Ok((noise_grid(setup, &refs)?, models))
}

/// Column names of the occlusion sweep.
pub const OCCLUSION_COLUMNS: [&str; 7] = ["0", "1", "2", "3", "4", "5", "5+G"];

/// Base noise with exactly 0..=5 occluded markers per frame, then 5
/// occlusions plus up to 3 ghosts.
pub fn occlusion_sweep(setup: &DeskSetup, params: &NetParams) -> Result<ResultsTable> {
    let c = &setup.config;
    let mut cells = Vec::new();
    for (k, name) in OCCLUSION_COLUMNS.iter().enumerate() {
        let mut noise = setup.noise(Regime::Base, &format!("occlusion/{name}"));
        noise.occlusion_mode = CountMode::Exact;
        noise.max_occlusions = k.min(5);
        if *name == "5+G" {
            noise.max_ghosts = 3;
        }
        let frames = setup.corpus(&noise, c.test_frames)?;
        cells.push(evaluate_frames(params, &frames, c.decode, c.train.sinkhorn_iters)?);
    }
    let mut table = ResultsTable::new(
        "Per-frame labeling by number of exact occlusions",
        "model",
        OCCLUSION_COLUMNS.iter().map(|s| s.to_string()).collect(),
    );
    table.push_row("desk", cells)?;
    table.meta.insert("seed".into(), c.seed.to_string());
    table.meta.insert("config_hash".into(), crate::io::config_hash(c)?);
    Ok(table)
}

/// Length in frames of the shortest tracklet in a sequence.
pub fn shortest_tracklet(seq: &MoCapSequence) -> Option<usize> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for f in &seq.frames {
        for id in f.tracklet_ids.iter().flatten().flatten() {
            *counts.entry(*id).or_default() += 1;
        }
    }
    counts.into_values().min()
}

/// One test sequence of the tracklet comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletRun {
    pub per_frame: MetricSummary,
    pub tracklet: MetricSummary,
    pub shortest_tracklet: usize,
    pub inconsistent_frames: usize,
}

pub fn tracklet_sequences(setup: &DeskSetup, regime: Regime) -> Result<Vec<LabeledSequence>> {
    let c = &setup.config;
    let noise = setup.noise(regime, "tracklets");
    (0..c.sequences as u64)
        .map(|s| {
            generate_sequence(
                &setup.body,
                &setup.layout,
                &noise,
                &c.synthesis,
                c.sequence_frames,
                c.sequence_rate_hz,
                c.tracklet_breaks,
                s,
            )
        })
        .collect()
}

/// Per-frame labels against tracklet majority labels on one sequence.
pub fn compare_tracklets(params: &NetParams, seq: &LabeledSequence, mode: DecodeMode, iters: usize) -> Result<TrackletRun> {
    let mocap = seq.to_sequence();
    let gt = seq.labelings();
    let per_frame: Vec<Labeling> = label_sequence(params, &mocap, mode, iters)?
        .into_iter()
        .map(|r| r.labels)
        .collect();
    let outcome = tracklet_label(&per_frame, &mocap, params.num_markers)?;
    Ok(TrackletRun {
        per_frame: MetricSummary::from_frames(per_frame.iter().zip(&gt))?,
        tracklet: MetricSummary::from_frames(outcome.labelings.iter().zip(&gt))?,
        shortest_tracklet: shortest_tracklet(&mocap).unwrap_or(0),
        inconsistent_frames: outcome.inconsistent_frames.len(),
    })
}

/// One row per test sequence: per-frame and tracklet labeling.
pub fn tracklet_comparison(setup: &DeskSetup, params: &NetParams, regime: Regime) -> Result<(ResultsTable, Vec<TrackletRun>)> {
    let c = &setup.config;
    let mut table = ResultsTable::new(
        "Per-frame versus tracklet labeling",
        "sequence",
        vec!["per-frame".into(), "tracklet".into()],
    );
    let mut runs = Vec::new();
    for (s, seq) in tracklet_sequences(setup, regime)?.iter().enumerate() {
        let run = compare_tracklets(params, seq, c.decode, c.train.sinkhorn_iters)?;
        table.push_row(&format!("seq{s}"), vec![run.per_frame, run.tracklet])?;
        table
            .meta
            .insert(format!("seq{s}.shortest_tracklet"), run.shortest_tracklet.to_string());
        runs.push(run);
    }
    table.meta.insert("noise".into(), regime.name().into());
    table.meta.insert("seed".into(), c.seed.to_string());
    table.meta.insert("config_hash".into(), crate::io::config_hash(c)?);
    Ok((table, runs))
}

/// Superset layout minus the first `k` markers of [`REMOVAL_ORDER`].
pub fn subset_layout(superset: &MarkerLayout, k: usize) -> Result<MarkerLayout> {
    let removed = &REMOVAL_ORDER[..k.min(REMOVAL_ORDER.len())];
    let keep: Vec<&str> = superset
        .label_set
        .names()
        .iter()
        .map(String::as_str)
        .filter(|n| !removed.contains(n))
        .collect();
    superset.subset(&keep)
}

/// Row `superset`: one model on the 20-marker layout tested on each subset
/// (structured occlusions). Row `subset`: one model per subset tested on
/// superset data (structured ghosts). Training and test noise is B+C+G.
pub fn layout_robustness(setup: &DeskSetup) -> Result<ResultsTable> {
    let c = &setup.config;
    let superset = LayoutPreset::Layout20.build(&setup.body)?;
    let columns: Vec<String> = c.removals.iter().map(|k| format!("-{k}")).collect();
    let mut table = ResultsTable::new("Robustness to marker layout changes", "trained on", columns);
    let iters = c.train.sinkhorn_iters;

    let base = setup.train_model_on(&superset, Regime::Full, "layout/superset")?.best;
    let super_test = setup.corpus_on(&superset, &setup.noise(Regime::Full, "layout/test/superset"), c.test_frames)?;
    let mut row_super = Vec::new();
    let mut row_sub = Vec::new();
    for &k in &c.removals {
        let sub = subset_layout(&superset, k)?;
        let sub_test = setup.corpus_on(&sub, &setup.noise(Regime::Full, &format!("layout/test/-{k}")), c.test_frames)?;
        let as_super = remap_frames(&sub_test, &sub.label_set, &superset.label_set);
        row_super.push(evaluate_frames(&base, &as_super, c.decode, iters)?);

        let model = setup.train_model_on(&sub, Regime::Full, &format!("layout/-{k}"))?.best;
        let as_sub = remap_frames(&super_test, &superset.label_set, &sub.label_set);
        row_sub.push(evaluate_frames(&model, &as_sub, c.decode, iters)?);
    }
    table.push_row("superset", row_super)?;
    table.push_row("subset", row_sub)?;
    table.meta.insert("removal_order".into(), REMOVAL_ORDER.join(" "));
    table.meta.insert("seed".into(), c.seed.to_string());
    table.meta.insert("config_hash".into(), crate::io::config_hash(c)?);
    Ok(table)
}
