//! Command implementations behind the `soma` binary. Each command reads a
//! JSON config, is deterministic given that config, and stamps its outputs
//! with the config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Result, SomaError};
use crate::experiment::{
    layout_robustness, occlusion_sweep, tracklet_comparison, train_noise_grid, DeskSetup, ExperimentConfig,
    LayoutPreset, ResultsTable,
};
use crate::io::{
    config_hash, confidence_csv, gt_to_string, layout_from_json, layout_to_json, mpc_to_string, read_mpc, read_text,
    write_text,
};
use crate::labeler::{label_sequence, tracklet_label, DecodeMode};
use crate::metrics::MetricSummary;
use crate::mocap::{LabeledFrame, MarkerLayout};
use crate::net::{attention_span, canonical_marker_distances, NetConfig, NetParams};
use crate::noise::{generate_sequence, generate_training_corpus, NoiseConfig, Regime, SynthesisConfig};
use crate::train::{history_csv, train_from, TrainConfig, TrainState};
use crate::body::SurrogateBody;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SOMA_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`]; unset or empty means
/// rayon's default. Returns the thread count in effect.
pub fn configure_threads() -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        if !v.trim().is_empty() {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| SomaError::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
            // a pool may already exist, e.g. in tests; keep it
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    Ok(rayon::current_num_threads())
}

pub fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| SomaError::format(p.display().to_string(), e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    /// Independent frames, each with its own body, pose and noise.
    #[default]
    Frames,
    /// One continuous capture with tracklet ids.
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub layout: LayoutPreset,
    /// Noise preset; ignored when `noise` is given.
    pub regime: Regime,
    pub noise: Option<NoiseConfig>,
    pub synthesis: SynthesisConfig,
    pub kind: CorpusKind,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub tracklet_breaks: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            layout: LayoutPreset::Layout12,
            regime: Regime::Full,
            noise: None,
            synthesis: SynthesisConfig::default(),
            kind: CorpusKind::Frames,
            duration_s: 10.0,
            rate_hz: 30.0,
            tracklet_breaks: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn frame_count(&self) -> Result<usize> {
        let n = self.duration_s * self.rate_hz;
        if !(n.is_finite() && n >= 0.0 && self.rate_hz > 0.0) {
            return Err(SomaError::InvalidArgument("duration and rate must be finite and positive".into()));
        }
        Ok(n.round() as usize)
    }

    pub fn noise_config(&self) -> NoiseConfig {
        self.noise
            .clone()
            .unwrap_or_else(|| NoiseConfig::preset(self.regime))
            .with_seed(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub frames: usize,
    pub num_markers: usize,
    pub files: Vec<String>,
    pub config: SynthConfig,
}

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const GT_FILE: &str = "corpus.gt.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LAYOUT_FILE: &str = "layout.json";

/// Writes the corpus, its ground-truth sidecar, the layout and a manifest
/// into `out_dir`.
pub fn cmd_synth(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let hash = config_hash(cfg)?;
    let body = SurrogateBody::new_default();
    let layout = cfg.layout.build(&body)?;
    let noise = cfg.noise_config();
    let n = cfg.frame_count()?;
    let (frames, seq) = match cfg.kind {
        CorpusKind::Frames => {
            let frames = generate_training_corpus(&body, &layout, &noise, &cfg.synthesis, n)?;
            let seq = crate::mocap::MoCapSequence::new(frames.iter().map(|f| f.frame.clone()).collect(), cfg.rate_hz)?;
            (frames, seq)
        }
        CorpusKind::Sequence => {
            let s = generate_sequence(&body, &layout, &noise, &cfg.synthesis, n, cfg.rate_hz, cfg.tracklet_breaks, 0)?;
            let seq = s.to_sequence();
            (s.frames, seq)
        }
    };
    let labels: Vec<_> = frames.iter().map(|f| f.labels.clone()).collect();
    let m = layout.num_markers();
    write_text(out_dir.join(CORPUS_FILE), &mpc_to_string(&seq, &layout.label_set, Some(&labels), Some(&hash))?)?;
    write_text(out_dir.join(GT_FILE), &gt_to_string(&frames, m, Some(&hash))?)?;
    write_text(out_dir.join(LAYOUT_FILE), &layout_to_json(&layout)?)?;
    let manifest = Manifest {
        seed: cfg.seed,
        config_hash: hash,
        frames: n,
        num_markers: m,
        files: [CORPUS_FILE, GT_FILE, LAYOUT_FILE].map(String::from).to_vec(),
        config: cfg.clone(),
    };
    write_text(out_dir.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCommandConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl TrainCommandConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.init_seed = seed;
        self.train.shuffle_seed = seed;
        self
    }
}

pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

fn labeled_corpus(path: &Path) -> Result<(Vec<LabeledFrame>, Vec<String>)> {
    let file = read_mpc(path)?;
    let frames = file.labeled_frames()?;
    Ok((frames, file.label_set.names().to_vec()))
}

/// Trains on `train_path`, validating on `val_path`. After every epoch
/// `last.ckpt` (with optimizer state), `best.ckpt` and `history.csv` are
/// rewritten in `out_dir`. With `resume`, training continues from that
/// checkpoint.
pub fn cmd_train(
    cfg: &TrainCommandConfig,
    train_path: &Path,
    val_path: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainState> {
    cfg.train.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| SomaError::io(out_dir, e))?;
    let hash = config_hash(cfg)?;
    let (train_set, names) = labeled_corpus(train_path)?;
    let (val, val_names) = labeled_corpus(val_path)?;
    if names != val_names {
        return Err(SomaError::InvalidArgument("training and validation corpora use different label sets".into()));
    }
    let state = match resume {
        None => TrainState::new(cfg.net, names.len(), &cfg.train)?,
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.label_names != names || ck.params.config != cfg.net {
                return Err(SomaError::InvalidArgument(format!(
                    "checkpoint {} does not match the corpus labels or network config",
                    p.display()
                )));
            }
            let best_path = p.with_file_name(BEST_CKPT);
            let best = best_path.exists().then(|| Checkpoint::load(&best_path)).transpose()?.map(|c| c.params);
            ck.resume_state(&cfg.train, best)?
        }
    };
    let mut io_error = None;
    let state = train_from(state, &train_set, &val, &cfg.train, |s| {
        if io_error.is_none() {
            io_error = save_run(s, &names, cfg, &hash, out_dir).err();
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    save_run(&state, &names, cfg, &hash, out_dir)?;
    Ok(state)
}

fn save_run(state: &TrainState, names: &[String], cfg: &TrainCommandConfig, hash: &str, out_dir: &Path) -> Result<()> {
    let last = Checkpoint::from_state(state, &state.params, names.to_vec(), &cfg.train, hash.to_string(), true)?;
    last.save(out_dir.join(LAST_CKPT))?;
    let best = Checkpoint::from_state(state, &state.best, names.to_vec(), &cfg.train, hash.to_string(), false)?;
    best.save(out_dir.join(BEST_CKPT))?;
    write_text(
        out_dir.join(HISTORY_FILE),
        &format!("# config_hash={hash}\n{}", history_csv(&state.history)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub mode: DecodeMode,
    pub sinkhorn_iters: usize,
    pub tracklets: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            mode: DecodeMode::Greedy,
            sinkhorn_iters: crate::ot::DEFAULT_ITERS,
            tracklets: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelReport {
    pub frames: usize,
    pub inconsistent_frames: Vec<usize>,
    pub seconds: f64,
}

/// Path of the confidence sidecar for a labeled output file.
pub fn confidence_path(mpc_out: &Path) -> PathBuf {
    let mut s = mpc_out.as_os_str().to_owned();
    s.push(".confidence.csv");
    PathBuf::from(s)
}

/// Labels `mpc_in` with the checkpoint and writes `mpc_out` plus the
/// `<mpc_out>.confidence.csv` sidecar.
pub fn cmd_label(cfg: &LabelConfig, checkpoint: &Path, mpc_in: &Path, mpc_out: &Path) -> Result<LabelReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let file = read_mpc(mpc_in)?;
    if file.label_set.names() != ck.label_names.as_slice() {
        return Err(SomaError::InvalidArgument(format!(
            "{} declares labels {:?} but the checkpoint was trained on {:?}",
            mpc_in.display(),
            file.label_set.names(),
            ck.label_names
        )));
    }
    let hash = config_hash(&(cfg, &ck.training.config_hash))?;
    let start = std::time::Instant::now();
    let mut results = label_sequence(&ck.params, &file.sequence, cfg.mode, cfg.sinkhorn_iters)?;
    let mut inconsistent = Vec::new();
    if cfg.tracklets {
        let per_frame: Vec<_> = results.iter().map(|r| r.labels.clone()).collect();
        let outcome = tracklet_label(&per_frame, &file.sequence, ck.params.num_markers)?;
        for (r, l) in results.iter_mut().zip(outcome.labelings) {
            r.labels = l;
        }
        inconsistent = outcome.inconsistent_frames;
    }
    let seconds = start.elapsed().as_secs_f64();
    let labels: Vec<_> = results.iter().map(|r| r.labels.clone()).collect();
    write_text(mpc_out, &mpc_to_string(&file.sequence, &file.label_set, Some(&labels), Some(&hash))?)?;
    let mut csv = confidence_csv(&results, &file.label_set, Some(&hash));
    if cfg.tracklets {
        let list: Vec<String> = inconsistent.iter().map(usize::to_string).collect();
        csv.insert_str(csv.find('\n').map_or(0, |i| i + 1), &format!("# inconsistent_frames={}\n", list.join(" ")));
    }
    write_text(confidence_path(mpc_out), &csv)?;
    Ok(LabelReport {
        frames: results.len(),
        inconsistent_frames: inconsistent,
        seconds,
    })
}

/// Accuracy and F1 of a labeled file against a ground-truth file with the
/// same points.
pub fn cmd_eval(pred_path: &Path, gt_path: &Path) -> Result<MetricSummary> {
    let pred = read_mpc(pred_path)?;
    let gt = read_mpc(gt_path)?;
    if pred.label_set != gt.label_set {
        return Err(SomaError::InvalidArgument("prediction and ground truth use different label sets".into()));
    }
    if pred.sequence != gt.sequence {
        return Err(SomaError::InvalidArgument("prediction and ground truth hold different point clouds".into()));
    }
    let missing = |p: &Path| SomaError::InvalidArgument(format!("{} carries no labels", p.display()));
    let p = pred.labels.as_ref().ok_or_else(|| missing(pred_path))?;
    let g = gt.labels.as_ref().ok_or_else(|| missing(gt_path))?;
    MetricSummary::from_frames(p.iter().zip(g))
}

/// Table-style report of an evaluation.
pub fn eval_report(s: &MetricSummary) -> String {
    let (acc, f1) = s.cells();
    let w = acc.chars().count().max(4);
    let v = f1.chars().count().max(2);
    format!("{:<w$} | {:<v$}\n{acc:<w$} | {f1:<v$}\nframes: {}\n", "Acc.", "F1", s.frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    NoiseGrid,
    OcclusionSweep,
    Tracklets,
    LayoutRobustness,
    #[default]
    All,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentCommandConfig {
    pub protocol: Protocol,
    pub setup: ExperimentConfig,
    /// Model for the occlusion and tracklet protocols. When absent a B+C+G
    /// model is trained from `setup`.
    pub checkpoint: Option<PathBuf>,
}

/// Runs the selected protocols, writing `<name>.csv` and `<name>.txt` per
/// table into `out_dir`.
pub fn cmd_experiment(cfg: &ExperimentCommandConfig, out_dir: &Path) -> Result<Vec<(String, ResultsTable)>> {
    let setup = DeskSetup::new(cfg.setup.clone())?;
    let wants = |p: Protocol| cfg.protocol == p || cfg.protocol == Protocol::All;
    let needs_model = wants(Protocol::OcclusionSweep) || wants(Protocol::Tracklets);
    let mut tables = Vec::new();
    let mut full_model: Option<NetParams> = match &cfg.checkpoint {
        Some(p) if needs_model => {
            if !p.exists() {
                return Err(SomaError::InvalidArgument(format!(
                    "checkpoint {} not found; train one with `soma train` or drop `checkpoint` to train within the experiment",
                    p.display()
                )));
            }
            let ck = Checkpoint::load(p)?;
            if ck.label_names != setup.layout.label_set.names() {
                return Err(SomaError::InvalidArgument(format!(
                    "checkpoint {} was trained on labels {:?}, the experiment layout has {:?}",
                    p.display(),
                    ck.label_names,
                    setup.layout.label_set.names()
                )));
            }
            Some(ck.params)
        }
        _ => None,
    };
    if wants(Protocol::NoiseGrid) {
        let (table, models) = train_noise_grid(&setup)?;
        if full_model.is_none() {
            full_model = models.into_iter().find(|(r, _)| *r == Regime::Full).map(|(_, p)| p);
        }
        tables.push(("noise_grid".to_string(), table));
    }
    if needs_model && full_model.is_none() {
        full_model = Some(setup.train_model(Regime::Full)?.best);
    }
    if wants(Protocol::OcclusionSweep) {
        let model = full_model.as_ref().expect("model prepared above");
        tables.push(("occlusion_sweep".to_string(), occlusion_sweep(&setup, model)?));
    }
    if wants(Protocol::Tracklets) {
        let model = full_model.as_ref().expect("model prepared above");
        tables.push(("tracklets".to_string(), tracklet_comparison(&setup, model, Regime::Full)?.0));
    }
    if wants(Protocol::LayoutRobustness) {
        tables.push(("layout_robustness".to_string(), layout_robustness(&setup)?));
    }
    for (name, t) in &tables {
        write_text(out_dir.join(format!("{name}.csv")), &t.to_csv())?;
        write_text(out_dir.join(format!("{name}.txt")), &t.render())?;
    }
    Ok(tables)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    /// Layout file; defaults to the built-in layout matching the
    /// checkpoint's labels.
    pub layout: Option<PathBuf>,
}

/// `layer,span` CSV of the per-layer attention span, computed over the
/// corpus frames that carry every marker and no ghosts.
pub fn cmd_attention_report(cfg: &AttentionConfig, checkpoint: &Path, corpus: &Path) -> Result<(Vec<f64>, String)> {
    let ck = Checkpoint::load(checkpoint)?;
    let body = SurrogateBody::new_default();
    let layout: MarkerLayout = match &cfg.layout {
        Some(p) => layout_from_json(&read_text(p)?)?,
        None => LayoutPreset::matching(&ck.label_names)
            .ok_or_else(|| {
                SomaError::InvalidArgument("no built-in layout matches the checkpoint labels; pass one in the config".into())
            })?
            .build(&body)?,
    };
    if layout.label_set.names() != ck.label_names.as_slice() {
        return Err(SomaError::InvalidArgument("layout labels differ from the checkpoint labels".into()));
    }
    let m = layout.num_markers();
    let frames: Vec<LabeledFrame> = read_mpc(corpus)?
        .labeled_frames()?
        .into_iter()
        .filter(|f| f.len() == m && f.occluded.is_empty() && f.labels.0.iter().all(Option::is_some))
        .collect();
    if frames.is_empty() {
        return Err(SomaError::InvalidArgument(format!(
            "{} has no frame with every marker and no ghosts",
            corpus.display()
        )));
    }
    let spans = attention_span(&ck.params, &frames, &canonical_marker_distances(&body, &layout)?)?;
    let hash = config_hash(&(cfg, &ck.training.config_hash))?;
    let mut csv = format!("# config_hash={hash}\n# frames={}\nlayer,span\n", frames.len());
    for (l, s) in spans.iter().enumerate() {
        csv.push_str(&format!("{},{s:.9}\n", l + 1));
    }
    Ok((spans, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_rounds_duration_times_rate() {
        let cfg = SynthConfig {
            duration_s: 1.25,
            rate_hz: 30.0,
            ..SynthConfig::default()
        };
        assert_eq!(cfg.frame_count().unwrap(), 38);
        let bad = SynthConfig {
            rate_hz: 0.0,
            ..SynthConfig::default()
        };
        assert!(bad.frame_count().is_err());
    }

    #[test]
    fn configs_parse_with_defaults() {
        let s: SynthConfig = serde_json::from_str(r#"{"regime": "B", "duration_s": 2}"#).unwrap();
        assert_eq!(s.regime, Regime::Base);
        assert_eq!(s.rate_hz, 30.0);
        let t: TrainCommandConfig = serde_json::from_str(r#"{"net": {"d_model": 8, "heads": 2, "layers": 1, "feature_width": 8}}"#).unwrap();
        assert_eq!(t.net.d_model, 8);
        assert_eq!(t.train, TrainConfig::default());
        let e: ExperimentCommandConfig = serde_json::from_str(r#"{"protocol": "occlusion_sweep"}"#).unwrap();
        assert_eq!(e.protocol, Protocol::OcclusionSweep);
    }

    #[test]
    fn eval_report_has_table_cells() {
        let s = MetricSummary {
            frames: 3,
            acc_mean: 100.0,
            acc_std: 0.0,
            f1_mean: 100.0,
            f1_std: 0.0,
        };
        let r = eval_report(&s);
        assert!(r.starts_with("Acc."));
        assert!(r.contains("100.00 ± 0.00 | 100.00 ± 0.00"));
    }

    #[test]
    fn confidence_sidecar_path() {
        assert_eq!(confidence_path(Path::new("out/x.jsonl")), PathBuf::from("out/x.jsonl.confidence.csv"));
    }
}
