//! Labels a synthetic capture frame by frame, then with tracklet majority
//! voting, and compares both against ground truth.
//!
//! cargo run --release --example label_sequence -- [model.ckpt]
//!
//! Without a checkpoint a small model is trained first.

use soma::checkpoint::Checkpoint;
use soma::experiment::{compare_tracklets, tracklet_sequences, DeskSetup, ExperimentConfig};
use soma::noise::Regime;

fn main() -> soma::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.sequences = 3;
    cfg.sequence_frames = 150;
    cfg.tracklet_breaks = 8;
    let params = match std::env::args().nth(1) {
        Some(path) => Checkpoint::load(path)?.params,
        None => {
            cfg.train_frames = 1000;
            cfg.train.max_epochs = 5;
            println!("no checkpoint given; training a small model");
            DeskSetup::new(cfg.clone())?.train_model(Regime::Full)?.best
        }
    };
    let setup = DeskSetup::new(cfg)?;
    for (s, seq) in tracklet_sequences(&setup, Regime::Full)?.iter().enumerate() {
        let run = compare_tracklets(&params, seq, setup.config.decode, setup.config.train.sinkhorn_iters)?;
        let (pa, pf) = run.per_frame.cells();
        let (ta, tf) = run.tracklet.cells();
        println!("sequence {s}: shortest tracklet {} frames", run.shortest_tracklet);
        println!("  per-frame  acc {pa}  f1 {pf}");
        println!("  tracklet   acc {ta}  f1 {tf}  ({} inconsistent frames)", run.inconsistent_frames);
    }
    Ok(())
}
