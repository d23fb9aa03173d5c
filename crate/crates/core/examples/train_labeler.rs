//! Trains a desk-scale labeler on synthetic B+C+G frames and saves it.
//!
//! cargo run --release --example train_labeler -- [frames] [epochs] [out.ckpt]

use soma::checkpoint::Checkpoint;
use soma::experiment::{DeskSetup, ExperimentConfig};
use soma::noise::Regime;
use soma::train::{train_from, TrainState};

fn main() -> soma::Result<()> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let out = args.next().unwrap_or_else(|| "labeler.ckpt".into());

    let mut cfg = ExperimentConfig::default();
    cfg.train_frames = frames;
    cfg.train.max_epochs = epochs;
    let setup = DeskSetup::new(cfg)?;
    let c = &setup.config;
    let train = setup.corpus(&setup.noise(Regime::Full, "train"), c.train_frames)?;
    let val = setup.corpus(&setup.noise(Regime::Full, "val"), c.val_frames)?;

    let state = TrainState::new(c.net, setup.layout.num_markers(), &c.train)?;
    println!("{} parameters", state.params.num_parameters());
    let state = train_from(state, &train, &val, &c.train, |s| {
        let r = s.history.last().expect("one record per epoch");
        println!("epoch {:>3}  lr {:.0e}  loss {:.4}  val acc {:.3}  f1 {:.3}", r.epoch, r.lr, r.train_loss, r.val_acc, r.val_f1);
    })?;

    let names = setup.layout.label_set.names().to_vec();
    Checkpoint::new(state.best.clone(), names)?.save(&out)?;
    println!("best epoch {} (val acc {:.3}) saved to {out}", state.best_epoch, state.best_val_acc);
    Ok(())
}
