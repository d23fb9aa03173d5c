//! Runs the experiment protocols (noise grid, occlusion sweep, tracklets,
//! layout robustness) and prints the tables.
//!
//! cargo run --release --example noise_experiments -- [smoke|desk]
//!
//! `smoke` finishes in seconds with meaningless numbers; `desk` trains
//! real models and takes hours on one core.

use soma::experiment::{
    layout_robustness, occlusion_sweep, tracklet_comparison, train_noise_grid, DeskSetup, ExperimentConfig,
};
use soma::noise::Regime;

fn main() -> soma::Result<()> {
    let cfg = match std::env::args().nth(1).as_deref() {
        Some("desk") => ExperimentConfig::default(),
        _ => ExperimentConfig::smoke(),
    };
    let setup = DeskSetup::new(cfg)?;
    let (grid, models) = train_noise_grid(&setup)?;
    println!("{}", grid.render());
    let full = &models.iter().find(|(r, _)| *r == Regime::Full).expect("grid trains B+C+G").1;
    println!("{}", occlusion_sweep(&setup, full)?.render());
    println!("{}", tracklet_comparison(&setup, full, Regime::Full)?.0.render());
    println!("{}", layout_robustness(&setup)?.render());
    Ok(())
}
