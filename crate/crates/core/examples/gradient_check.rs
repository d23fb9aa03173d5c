//! Finite-difference check of the full pipeline gradient (attention
//! scorer, Sinkhorn and weighted loss) on a tiny network.

use soma::net::NetConfig;
use soma::train::gradient_check;

fn main() -> soma::Result<()> {
    let net = NetConfig {
        d_model: 8,
        heads: 2,
        layers: 2,
        feature_width: 8,
    };
    let checks = gradient_check(net, 4, 5, 1e-5, 0)?;
    for c in &checks {
        println!("{:<14} {:.2e}", c.name, c.max_rel_error);
    }
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    println!("worst relative error over {} tensors: {worst:.2e}", checks.len());
    Ok(())
}
