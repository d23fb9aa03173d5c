//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records matrix operations as they are evaluated. Nodes are
//! appended in evaluation order, so walking the node list backwards visits
//! them in reverse topological order; each node is visited once.
//!
//! Parameters are borrowed, not copied: a parameter leaf refers to an index
//! into the slice the tape was created with.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Result, SomaError};

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    /// `a b^T`
    MatMulNT(Var, Var),
    /// `a + b` with `b` a `1 x c` row broadcast over rows.
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    /// Scores plus a dustbin row and column filled with a `1 x 1` scalar.
    Augment(Var, Var),
    /// `a + u` with `u` an `r x 1` column broadcast over columns.
    AddColVec(Var, Var),
    /// `a + v` with `v` a `1 x c` row broadcast over rows.
    AddRowVec(Var, Var),
    /// `y_i = log sum_j exp(z_ij + v_j)`, `r x 1`.
    LseRowsShifted(Var, Var),
    /// `y_j = log sum_i exp(z_ij + u_i)`, `1 x c`.
    LseColsShifted(Var, Var),
    /// `c - a` for a constant `c`.
    SubFromConst(Var),
    WeightedNll {
        logp: Var,
        target: Array2<f64>,
        weights: Array2<f64>,
        floor: f64,
    },
    SumSquares(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Array2<f64>>,
}

/// Gradients of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Array2<f64>>>,
    params: Vec<Array2<f64>>,
}

impl Gradients {
    /// Gradient with respect to a recorded node; `None` if the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].as_ref()
    }

    /// Gradient with respect to parameter `i` (zeros if unused).
    pub fn param(&self, i: usize) -> &Array2<f64> {
        &self.params[i]
    }

    pub fn into_params(self) -> Vec<Array2<f64>> {
        self.params
    }
}

pub struct Tape<'p> {
    params: &'p [Array2<f64>],
    nodes: Vec<Node>,
    consumed: bool,
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> SomaError {
    SomaError::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Array2<f64>]) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        match &self.nodes[v.0].op {
            Op::Param(i) => self.params[*i].view(),
            _ => self.nodes[v.0]
                .value
                .as_ref()
                .expect("non-parameter nodes hold values")
                .view(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len(), "parameter index out of range");
        self.nodes.push(Node {
            op: Op::Param(index),
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(shape_err("matmul", av.dim(), bv.dim()));
        }
        let out = av.dot(&bv);
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.ncols() {
            return Err(shape_err("matmul_nt", av.dim(), bv.dim()));
        }
        let out = av.dot(&bv.t());
        Ok(self.push(Op::MatMulNT(a, b), out))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.nrows() != 1 || bv.ncols() != av.ncols() {
            return Err(shape_err("add_bias", av.dim(), bv.dim()));
        }
        let out = &av + &bv;
        Ok(self.push(Op::AddBias(a, bias), out))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.dim() != bv.dim() {
            return Err(shape_err("add", av.dim(), bv.dim()));
        }
        let out = &av + &bv;
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = &self.value(a) * s;
        self.push(Op::Scale(a, s), out)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| {
            let u = GELU_K * (x + GELU_C * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(Op::Gelu(a), out)
    }

    /// Per-row normalization to zero mean and unit variance, then a learned
    /// per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.dim() != (1, xv.ncols()) || bv.dim() != (1, xv.ncols()) {
            return Err(shape_err("layer_norm", xv.dim(), gv.dim()));
        }
        let n = xv.ncols() as f64;
        let mut xhat = xv.to_owned();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let out = &(&xhat * &gv) + &bv;
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            out,
        ))
    }

    /// Row-wise softmax, max-shifted.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).to_owned();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(Op::SoftmaxRows(a), out)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = self.value(a);
        if start + width > av.ncols() {
            return Err(SomaError::Shape(format!(
                "slice_cols {start}..{} of {} columns",
                start + width,
                av.ncols()
            )));
        }
        let out = av.slice(s![.., start..start + width]).to_owned();
        Ok(self.push(Op::SliceCols(a, start), out))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| SomaError::Shape(format!("concat_cols: {e}")))?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    /// `(n+1) x (m+1)` matrix: `scores` top-left, scalar `alpha` elsewhere.
    pub fn augment(&mut self, scores: Var, alpha: Var) -> Result<Var> {
        let sv = self.value(scores);
        let av = self.value(alpha);
        if av.dim() != (1, 1) {
            return Err(shape_err("augment alpha", av.dim(), (1, 1)));
        }
        let a = av[[0, 0]];
        let (n, m) = sv.dim();
        let mut out = Array2::from_elem((n + 1, m + 1), a);
        out.slice_mut(s![..n, ..m]).assign(&sv);
        Ok(self.push(Op::Augment(scores, alpha), out))
    }

    pub fn add_col_vec(&mut self, a: Var, u: Var) -> Result<Var> {
        let (av, uv) = (self.value(a), self.value(u));
        if uv.dim() != (av.nrows(), 1) {
            return Err(shape_err("add_col_vec", av.dim(), uv.dim()));
        }
        let out = &av + &uv;
        Ok(self.push(Op::AddColVec(a, u), out))
    }

    pub fn add_row_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (av, vv) = (self.value(a), self.value(v));
        if vv.dim() != (1, av.ncols()) {
            return Err(shape_err("add_row_vec", av.dim(), vv.dim()));
        }
        let out = &av + &vv;
        Ok(self.push(Op::AddRowVec(a, v), out))
    }

    /// Row-wise log-sum-exp of `z + v` with `v` a `1 x c` row.
    pub fn lse_rows_shifted(&mut self, z: Var, v: Var) -> Result<Var> {
        let (zv, vv) = (self.value(z), self.value(v));
        if vv.dim() != (1, zv.ncols()) {
            return Err(shape_err("lse_rows_shifted", zv.dim(), vv.dim()));
        }
        let vrow = vv.row(0);
        let out = Array2::from_shape_fn((zv.nrows(), 1), |(i, _)| {
            log_sum_exp(zv.row(i).iter().zip(vrow.iter()).map(|(a, b)| a + b))
        });
        Ok(self.push(Op::LseRowsShifted(z, v), out))
    }

    /// Column-wise log-sum-exp of `z + u` with `u` an `r x 1` column.
    pub fn lse_cols_shifted(&mut self, z: Var, u: Var) -> Result<Var> {
        let (zv, uv) = (self.value(z), self.value(u));
        if uv.dim() != (zv.nrows(), 1) {
            return Err(shape_err("lse_cols_shifted", zv.dim(), uv.dim()));
        }
        let ucol = uv.column(0);
        let out = Array2::from_shape_fn((1, zv.ncols()), |(_, j)| {
            log_sum_exp(zv.column(j).iter().zip(ucol.iter()).map(|(a, b)| a + b))
        });
        Ok(self.push(Op::LseColsShifted(z, u), out))
    }

    pub fn sub_from_const(&mut self, c: &Array2<f64>, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.dim() != c.dim() {
            return Err(shape_err("sub_from_const", c.dim(), av.dim()));
        }
        let out = c - &av;
        Ok(self.push(Op::SubFromConst(a), out))
    }

    /// `-(1 / sum(target)) * sum(weights * target * max(logp, floor))`.
    pub fn weighted_nll(
        &mut self,
        logp: Var,
        target: Array2<f64>,
        weights: Array2<f64>,
        floor: f64,
    ) -> Result<Var> {
        let lv = self.value(logp);
        if target.dim() != lv.dim() || weights.dim() != lv.dim() {
            return Err(SomaError::Shape(format!(
                "weighted_nll: log-probabilities {:?}, target {:?}, weights {:?}",
                lv.dim(),
                target.dim(),
                weights.dim()
            )));
        }
        let total = target.sum();
        if total <= 0.0 {
            return Err(SomaError::InvalidArgument(
                "ground truth carries no mass".into(),
            ));
        }
        let mut acc = 0.0;
        Zip::from(&lv)
            .and(&target)
            .and(&weights)
            .for_each(|&l, &t, &w| acc += w * t * l.max(floor));
        let out = Array2::from_elem((1, 1), -acc / total);
        Ok(self.push(
            Op::WeightedNll {
                logp,
                target,
                weights,
                floor,
            },
            out,
        ))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).iter().map(|x| x * x).sum());
        self.push(Op::SumSquares(a), out)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    /// Runs the reverse pass from a `1 x 1` node. A tape supports one
    /// backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(SomaError::Tape("backward called before any forward evaluation"));
        }
        if self.consumed {
            return Err(SomaError::Tape("backward already ran on this tape"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(SomaError::Tape("loss node not recorded on this tape"));
        }
        if self.shape(loss) != (1, 1) {
            return Err(SomaError::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: Vec<Array2<f64>> = self
            .params
            .iter()
            .map(|p| Array2::zeros(p.dim()))
            .collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(i) => param_grads[*i] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    let ga = g.dot(&self.value(*b));
                    let gb = g.t().dot(&self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddBias(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.mapv(|x| x * s)),
                Op::Gelu(a) => {
                    let mut ga = self.value(*a).to_owned();
                    Zip::from(&mut ga).and(&g).for_each(|x, &gy| {
                        let v = *x;
                        let u = GELU_K * (v + GELU_C * v * v * v);
                        let t = u.tanh();
                        let du = GELU_K * (1.0 + 3.0 * GELU_C * v * v);
                        *x = gy * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let ggain = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * &gv;
                    let n = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for (i, mut row) in gx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(i);
                        let xh = xhat.row(i);
                        let sum_dh = dh.sum();
                        let sum_dh_xh = dh.dot(&xh);
                        for j in 0..row.len() {
                            row[j] = inv_std[i] / n * (n * dh[j] - sum_dh - xh[j] * sum_dh_xh);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gain, ggain);
                    acc(&mut grads, *bias, gbias);
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let mut ga = Array2::zeros(y.dim());
                    for (i, mut row) in ga.rows_mut().into_iter().enumerate() {
                        let dot = g.row(i).dot(&y.row(i));
                        for j in 0..row.len() {
                            row[j] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        acc(&mut grads, p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::Augment(scores, alpha) => {
                    let (n, m) = self.shape(*scores);
                    let gs = g.slice(s![..n, ..m]).to_owned();
                    let galpha = g.sum() - gs.sum();
                    acc(&mut grads, *scores, gs);
                    acc(&mut grads, *alpha, Array2::from_elem((1, 1), galpha));
                }
                Op::AddColVec(a, u) => {
                    let gu = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *u, gu);
                }
                Op::AddRowVec(a, v) => {
                    let gv = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *v, gv);
                }
                Op::LseRowsShifted(z, v) => {
                    let y = node.value.as_ref().expect("lse value");
                    let zv = self.value(*z);
                    let vv = self.value(*v);
                    let mut gz = Array2::zeros(zv.dim());
                    let mut gvec = Array2::zeros(vv.dim());
                    for i in 0..zv.nrows() {
                        let gi = g[[i, 0]];
                        if gi == 0.0 {
                            continue;
                        }
                        for j in 0..zv.ncols() {
                            let p = (zv[[i, j]] + vv[[0, j]] - y[[i, 0]]).exp() * gi;
                            gz[[i, j]] = p;
                            gvec[[0, j]] += p;
                        }
                    }
                    acc(&mut grads, *z, gz);
                    acc(&mut grads, *v, gvec);
                }
                Op::LseColsShifted(z, u) => {
                    let y = node.value.as_ref().expect("lse value");
                    let zv = self.value(*z);
                    let uv = self.value(*u);
                    let mut gz = Array2::zeros(zv.dim());
                    let mut gvec = Array2::zeros(uv.dim());
                    for i in 0..zv.nrows() {
                        for j in 0..zv.ncols() {
                            let p = (zv[[i, j]] + uv[[i, 0]] - y[[0, j]]).exp() * g[[0, j]];
                            gz[[i, j]] = p;
                            gvec[[i, 0]] += p;
                        }
                    }
                    acc(&mut grads, *z, gz);
                    acc(&mut grads, *u, gvec);
                }
                Op::SubFromConst(a) => acc(&mut grads, *a, g.mapv(|x| -x)),
                Op::WeightedNll {
                    logp,
                    target,
                    weights,
                    floor,
                } => {
                    let lv = self.value(*logp);
                    let scale = -g[[0, 0]] / target.sum();
                    let mut gl = Array2::zeros(lv.dim());
                    Zip::from(&mut gl)
                        .and(&lv)
                        .and(target)
                        .and(weights)
                        .for_each(|o, &l, &t, &w| {
                            if l > *floor {
                                *o = scale * w * t;
                            }
                        });
                    acc(&mut grads, *logp, gl);
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g[[0, 0]];
                    acc(&mut grads, *a, self.value(*a).mapv(|x| s * x));
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            nodes: grads,
            params: param_grads,
        })
    }
}
