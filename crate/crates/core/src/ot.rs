//! Dustbin-augmented log-domain Sinkhorn normalization.
//!
//! Scores `S` (`n x M`) are augmented with a dustbin row and column holding
//! the scalar `alpha`. Row masses are `[1; n] ++ [M]` and column masses
//! `[1; M] ++ [n]`, so both sum to `n + M`. Each iteration rescales rows and
//! then columns in log space.

use ndarray::{s, Array2};

use crate::autodiff::{log_sum_exp, Tape, Var};
use crate::error::{Result, SomaError};

pub const DEFAULT_ITERS: usize = 35;

/// Target row and column masses of an augmented `(n+1) x (M+1)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

impl Marginals {
    pub fn new(num_points: usize, num_markers: usize) -> Result<Self> {
        if num_points == 0 || num_markers == 0 {
            return Err(SomaError::InvalidArgument(format!(
                "transport needs at least one point and one label, got {num_points}x{num_markers}"
            )));
        }
        let mut rows = vec![1.0; num_points + 1];
        rows[num_points] = num_markers as f64;
        let mut cols = vec![1.0; num_markers + 1];
        cols[num_markers] = num_points as f64;
        Ok(Marginals { rows, cols })
    }

    fn for_augmented(a: &Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r < 2 || c < 2 {
            return Err(SomaError::Shape(format!("augmented scores must be at least 2x2, got {r}x{c}")));
        }
        Marginals::new(r - 1, c - 1)
    }

    fn log_rows(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows.len(), 1), |(i, _)| self.rows[i].ln())
    }

    fn log_cols(&self) -> Array2<f64> {
        Array2::from_shape_fn((1, self.cols.len()), |(_, j)| self.cols[j].ln())
    }

    /// Largest absolute deviation of `a`'s row and column sums from target.
    pub fn violation(&self, a: &Array2<f64>) -> f64 {
        let rows = a.rows().into_iter().zip(&self.rows).map(|(r, t)| (r.sum() - t).abs());
        let cols = a.columns().into_iter().zip(&self.cols).map(|(c, t)| (c.sum() - t).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

/// `(n+1) x (M+1)` matrix with `scores` top-left and `alpha` elsewhere.
pub fn augment(scores: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    if !alpha.is_finite() {
        return Err(SomaError::NonFinite("dustbin score"));
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(SomaError::NonFinite("scores"));
    }
    let (n, m) = scores.dim();
    let mut out = Array2::from_elem((n + 1, m + 1), alpha);
    out.slice_mut(s![..n, ..m]).assign(scores);
    Ok(out)
}

fn check_iters(iters: usize) -> Result<()> {
    if iters == 0 {
        return Err(SomaError::InvalidArgument("Sinkhorn needs at least one iteration".into()));
    }
    Ok(())
}

struct Potentials {
    u: Vec<f64>,
    v: Vec<f64>,
}

fn row_update(z: &Array2<f64>, v: &[f64], log_rows: &[f64]) -> Vec<f64> {
    z.rows()
        .into_iter()
        .zip(log_rows)
        .map(|(row, lr)| lr - log_sum_exp(row.iter().zip(v).map(|(a, b)| a + b)))
        .collect()
}

fn col_update(z: &Array2<f64>, u: &[f64], log_cols: &[f64]) -> Vec<f64> {
    z.columns()
        .into_iter()
        .zip(log_cols)
        .map(|(col, lc)| lc - log_sum_exp(col.iter().zip(u).map(|(a, b)| a + b)))
        .collect()
}

fn log_plan(z: &Array2<f64>, p: &Potentials) -> Array2<f64> {
    Array2::from_shape_fn(z.dim(), |(i, j)| z[[i, j]] + p.u[i] + p.v[j])
}

fn run(z: &Array2<f64>, iters: usize, mut each: impl FnMut(&Potentials)) -> Result<Potentials> {
    check_iters(iters)?;
    if z.iter().any(|x| !x.is_finite()) {
        return Err(SomaError::NonFinite("augmented scores"));
    }
    let marg = Marginals::for_augmented(z)?;
    let log_rows: Vec<f64> = marg.rows.iter().map(|x| x.ln()).collect();
    let log_cols: Vec<f64> = marg.cols.iter().map(|x| x.ln()).collect();
    let mut p = Potentials {
        u: vec![0.0; z.nrows()],
        v: vec![0.0; z.ncols()],
    };
    for _ in 0..iters {
        p.u = row_update(z, &p.v, &log_rows);
        p.v = col_update(z, &p.u, &log_cols);
        each(&p);
    }
    Ok(p)
}

/// Log of the augmented assignment after `iters` row/column scalings.
pub fn sinkhorn_log_plan(augmented: &Array2<f64>, iters: usize) -> Result<Array2<f64>> {
    let p = run(augmented, iters, |_| {})?;
    Ok(log_plan(augmented, &p))
}

/// Augmented assignment `A'`. Every entry except the dustbin corner lies in
/// `[0, 1]`; the corner absorbs leftover mass.
pub fn sinkhorn_log(augmented: &Array2<f64>, iters: usize) -> Result<Array2<f64>> {
    Ok(sinkhorn_log_plan(augmented, iters)?.mapv(f64::exp))
}

/// Marginal violation after each iteration.
pub fn convergence_trace(augmented: &Array2<f64>, iters: usize) -> Result<Vec<f64>> {
    let marg = Marginals::for_augmented(augmented)?;
    let mut trace = Vec::with_capacity(iters);
    run(augmented, iters, |p| {
        trace.push(marg.violation(&log_plan(augmented, p).mapv(f64::exp)));
    })?;
    Ok(trace)
}

/// Removes the dustbin row, keeping the null column.
pub fn drop_unmatched_row(augmented: &Array2<f64>) -> Array2<f64> {
    let n = augmented.nrows().saturating_sub(1);
    augmented.slice(s![..n, ..]).to_owned()
}

/// Records augmentation and the unrolled iterations on `tape`; returns the
/// log of the augmented assignment.
pub fn sinkhorn_on_tape(tape: &mut Tape, scores: Var, alpha: Var, iters: usize) -> Result<Var> {
    check_iters(iters)?;
    if tape.value(scores).iter().any(|x| !x.is_finite()) {
        return Err(SomaError::NonFinite("scores"));
    }
    let (n, m) = tape.shape(scores);
    let marg = Marginals::new(n, m)?;
    let (log_rows, log_cols) = (marg.log_rows(), marg.log_cols());
    let z = tape.augment(scores, alpha)?;
    if !tape.scalar(alpha).is_finite() {
        return Err(SomaError::NonFinite("dustbin score"));
    }
    let mut v = tape.input(Array2::zeros((1, m + 1)));
    let mut u = v;
    for _ in 0..iters {
        let lr = tape.lse_rows_shifted(z, v)?;
        u = tape.sub_from_const(&log_rows, lr)?;
        let lc = tape.lse_cols_shifted(z, u)?;
        v = tape.sub_from_const(&log_cols, lc)?;
    }
    let zu = tape.add_col_vec(z, u)?;
    tape.add_row_vec(zu, v)
}
