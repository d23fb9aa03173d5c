//! Generates noisy training frames for each noise regime and prints what the
//! corruption did to them.
//!
//! cargo run --example synthesize_corpus -- [frames]

use soma::body::{layout_from_specs, SurrogateBody, LAYOUT_12};
use soma::mocap::MarkerLayout;
use soma::noise::{generate_training_corpus, NoiseConfig, Regime, SynthesisConfig};

fn main() -> soma::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let body = SurrogateBody::new_default();
    let layout = layout_from_specs(&body, &LAYOUT_12, MarkerLayout::DEFAULT_OFFSET_M)?;
    println!("body: {} joints, {} vertices; layout: {:?}", body.joints.len(), body.num_vertices(), layout.label_set.names());

    for regime in Regime::GRID.into_iter().chain([Regime::Extreme]) {
        let noise = NoiseConfig::preset(regime).with_seed(7);
        let frames = generate_training_corpus(&body, &layout, &noise, &SynthesisConfig::default(), n)?;
        let points: usize = frames.iter().map(|f| f.len()).sum();
        let ghosts: usize = frames.iter().map(|f| f.labels.0.iter().filter(|l| l.is_none()).count()).sum();
        let occluded: usize = frames.iter().map(|f| f.occluded.len()).sum();
        println!(
            "{:<8} {n} frames: {:.2} points/frame, {:.2} ghosts/frame, {:.2} occlusions/frame",
            regime.name(),
            points as f64 / n as f64,
            ghosts as f64 / n as f64,
            occluded as f64 / n as f64
        );
    }
    Ok(())
}
