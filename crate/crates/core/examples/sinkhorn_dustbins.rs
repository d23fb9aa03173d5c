//! Dustbin-augmented Sinkhorn on a random score matrix: marginals and the
//! convergence of the log-domain iterations.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soma::ot::{augment, convergence_trace, sinkhorn_log, Marginals};

fn main() -> soma::Result<()> {
    let (n, m) = (14, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores = Array2::from_shape_fn((n, m), |_| rng.gen_range(-3.0..3.0));
    let aug = augment(&scores, 1.0)?;
    let a = sinkhorn_log(&aug, 35)?;

    let rows: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = a.columns().into_iter().map(|c| c.sum()).collect();
    println!("row sums   {:.6?}", rows);
    println!("col sums   {:.6?}", cols);
    println!("max marginal violation {:.2e}", Marginals::new(n, m)?.violation(&a));

    for (k, v) in convergence_trace(&aug, 35)?.iter().enumerate().step_by(5) {
        println!("iter {:>2}: violation {v:.3e}", k + 1);
    }
    Ok(())
}
