//! Per-layer attention span of a network: how far, in meters on the
//! canonical body, each layer's attention reaches.
//!
//! cargo run --release --example attention_span -- [model.ckpt]

use soma::checkpoint::Checkpoint;
use soma::experiment::{DeskSetup, ExperimentConfig};
use soma::net::{attention_span, canonical_marker_distances, NetParams};
use soma::noise::Regime;

fn main() -> soma::Result<()> {
    let setup = DeskSetup::new(ExperimentConfig::default())?;
    let params = match std::env::args().nth(1) {
        Some(path) => Checkpoint::load(path)?.params,
        None => {
            println!("no checkpoint given; reporting an untrained network");
            NetParams::init(setup.config.net, setup.layout.num_markers(), 0)?
        }
    };
    let frames = setup.corpus(&setup.noise(Regime::Base, "span"), 200)?;
    let distances = canonical_marker_distances(&setup.body, &setup.layout)?;
    for (l, s) in attention_span(&params, &frames, &distances)?.iter().enumerate() {
        println!("layer {}: {:.3} m", l + 1, s);
    }
    Ok(())
}
