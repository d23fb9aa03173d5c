//! Per-point scorer: embedding, stacked multi-head self-attention blocks and
//! a per-point head producing one score per marker label.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::body::{place_virtual_markers, Pose, SurrogateBody};
use crate::error::{Result, SomaError};
use crate::mocap::{median_center, Frame, LabeledFrame, MarkerLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub feature_width: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            d_model: 125,
            heads: 5,
            layers: 8,
            feature_width: 256,
        }
    }
}

impl NetConfig {
    /// Small configuration that trains in minutes on one core.
    pub fn desk() -> Self {
        NetConfig {
            d_model: 32,
            heads: 4,
            layers: 4,
            feature_width: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.layers == 0 || self.feature_width == 0 {
            return Err(SomaError::InvalidArgument(format!("all network sizes must be positive: {self:?}")));
        }
        if self.d_model % self.heads != 0 {
            return Err(SomaError::InvalidArgument(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Indices of one attention block's tensors in [`NetParams::tensors`].
#[derive(Debug, Clone, Copy)]
struct BlockIx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    ff_w1: usize,
    ff_b1: usize,
    ff_w2: usize,
    ff_b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

const BLOCK_TENSORS: usize = 13;
const EMBED_W: usize = 0;
const EMBED_B: usize = 1;

fn block_ix(layer: usize) -> BlockIx {
    let b = 2 + layer * BLOCK_TENSORS;
    BlockIx {
        wq: b,
        wk: b + 1,
        wv: b + 2,
        wo: b + 3,
        bo: b + 4,
        ln1_g: b + 5,
        ln1_b: b + 6,
        ff_w1: b + 7,
        ff_b1: b + 8,
        ff_w2: b + 9,
        ff_b2: b + 10,
        ln2_g: b + 11,
        ln2_b: b + 12,
    }
}

/// All trainable tensors, in a fixed declared order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub num_markers: usize,
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

/// Scores of one frame, rows in the frame's point order.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub scores: Array2<f64>,
    /// `attention[layer][head]`, `n x n`, when requested.
    pub attention: Option<Vec<Vec<Array2<f64>>>>,
}

/// Nodes recorded by [`NetParams::record`].
#[derive(Debug, Clone)]
pub struct Recorded {
    pub scores: Var,
    pub alpha: Var,
    pub attention: Vec<Vec<Var>>,
}

impl NetParams {
    /// Tensor names and shapes for a configuration.
    pub fn layout(config: &NetConfig, num_markers: usize) -> Vec<(String, (usize, usize))> {
        let (d, f) = (config.d_model, config.feature_width);
        let mut out = vec![
            ("embed.w".to_string(), (3, d)),
            ("embed.b".to_string(), (1, d)),
        ];
        for l in 0..config.layers {
            for (name, shape) in [
                ("wq", (d, d)),
                ("wk", (d, d)),
                ("wv", (d, d)),
                ("wo", (d, d)),
                ("bo", (1, d)),
                ("ln1.g", (1, d)),
                ("ln1.b", (1, d)),
                ("ff.w1", (d, d)),
                ("ff.b1", (1, d)),
                ("ff.w2", (d, d)),
                ("ff.b2", (1, d)),
                ("ln2.g", (1, d)),
                ("ln2.b", (1, d)),
            ] {
                out.push((format!("block{l}.{name}"), shape));
            }
        }
        out.push(("head.w1".to_string(), (d, f)));
        out.push(("head.b1".to_string(), (1, f)));
        out.push(("head.w2".to_string(), (f, num_markers)));
        out.push(("head.b2".to_string(), (1, num_markers)));
        out.push(("alpha".to_string(), (1, 1)));
        out
    }

    /// Uniform fan-in initialization; biases zero, norm gains one, dustbin
    /// score one.
    pub fn init(config: NetConfig, num_markers: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_markers == 0 {
            return Err(SomaError::InvalidArgument("label set has no markers".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Self::layout(&config, num_markers);
        let mut names = Vec::with_capacity(layout.len());
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, (r, c)) in layout {
            let t = if name == "alpha" {
                Array2::from_elem((1, 1), 1.0)
            } else if name.ends_with(".g") {
                Array2::ones((r, c))
            } else if r == 1 {
                Array2::zeros((r, c))
            } else {
                let bound = 1.0 / (r as f64).sqrt();
                Array2::from_shape_fn((r, c), |_| rng.gen_range(-bound..bound))
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(NetParams {
            config,
            num_markers,
            names,
            tensors,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn alpha_index(&self) -> usize {
        self.tensors.len() - 1
    }

    pub fn alpha(&self) -> f64 {
        self.tensors[self.alpha_index()][[0, 0]]
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let layout = Self::layout(&self.config, self.num_markers);
        if layout.len() != self.tensors.len() || self.names.len() != self.tensors.len() {
            return Err(SomaError::Shape(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&self.tensors) {
            if t.dim() != *shape {
                return Err(SomaError::Shape(format!("{name}: expected {shape:?}, found {:?}", t.dim())));
            }
            if t.iter().any(|x| !x.is_finite()) {
                return Err(SomaError::NonFinite("network parameters"));
            }
        }
        Ok(())
    }

    /// Median-centered point matrix, `n x 3`.
    pub fn centered_points(frame: &Frame) -> Result<Array2<f64>> {
        if frame.is_empty() {
            return Err(SomaError::EmptyFrame);
        }
        let (centered, _) = median_center(frame)?;
        Ok(Array2::from_shape_fn((centered.len(), 3), |(i, k)| centered.points[i][k]))
    }

    /// Per-point affine embedding `f_0 = x W + b`.
    pub fn embed(tape: &mut Tape, points: Var) -> Result<Var> {
        let (w, b) = (tape.param(EMBED_W), tape.param(EMBED_B));
        tape.affine(points, w, b)
    }

    /// One residual self-attention block. Returns the block output and the
    /// per-head attention weights.
    pub fn attention_block(&self, tape: &mut Tape, layer: usize, f: Var) -> Result<(Var, Vec<Var>)> {
        let ix = block_ix(layer);
        let hw = self.config.head_width();
        let scale = 1.0 / (self.config.d_model as f64).sqrt();
        let (wq, wk, wv) = (tape.param(ix.wq), tape.param(ix.wk), tape.param(ix.wv));
        let q = tape.matmul(f, wq)?;
        let k = tape.matmul(f, wk)?;
        let v = tape.matmul(f, wv)?;
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut weights = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * hw, hw)?;
            let kh = tape.slice_cols(k, h * hw, hw)?;
            let vh = tape.slice_cols(v, h * hw, hw)?;
            let logits = tape.matmul_nt(qh, kh)?;
            let logits = tape.scale(logits, scale);
            let a = tape.softmax_rows(logits);
            heads.push(tape.matmul(a, vh)?);
            weights.push(a);
        }
        let cat = tape.concat_cols(&heads)?;
        let (wo, bo) = (tape.param(ix.wo), tape.param(ix.bo));
        let proj = tape.affine(cat, wo, bo)?;
        let res = tape.add(f, proj)?;
        let (g1, b1) = (tape.param(ix.ln1_g), tape.param(ix.ln1_b));
        let h1 = tape.layer_norm(res, g1, b1)?;
        let (w1, c1, w2, c2) = (
            tape.param(ix.ff_w1),
            tape.param(ix.ff_b1),
            tape.param(ix.ff_w2),
            tape.param(ix.ff_b2),
        );
        let ff = tape.affine(h1, w1, c1)?;
        let ff = tape.gelu(ff);
        let ff = tape.affine(ff, w2, c2)?;
        let res = tape.add(h1, ff)?;
        let (g2, b2) = (tape.param(ix.ln2_g), tape.param(ix.ln2_b));
        Ok((tape.layer_norm(res, g2, b2)?, weights))
    }

    /// Records the full scorer on `tape`, which must borrow `self.tensors`.
    pub fn record(&self, tape: &mut Tape, frame: &Frame) -> Result<Recorded> {
        let x = tape.input(Self::centered_points(frame)?);
        let mut f = Self::embed(tape, x)?;
        let mut attention = Vec::with_capacity(self.config.layers);
        for layer in 0..self.config.layers {
            let (out, w) = self.attention_block(tape, layer, f)?;
            f = out;
            attention.push(w);
        }
        let base = 2 + self.config.layers * BLOCK_TENSORS;
        let (w1, b1, w2, b2) = (tape.param(base), tape.param(base + 1), tape.param(base + 2), tape.param(base + 3));
        let hidden = tape.affine(f, w1, b1)?;
        let hidden = tape.gelu(hidden);
        let scores = tape.affine(hidden, w2, b2)?;
        let alpha = tape.param(self.alpha_index());
        Ok(Recorded {
            scores,
            alpha,
            attention,
        })
    }

    pub fn forward(&self, frame: &Frame) -> Result<ForwardOutput> {
        self.forward_with(frame, false)
    }

    pub fn forward_with(&self, frame: &Frame, keep_attention: bool) -> Result<ForwardOutput> {
        let mut tape = Tape::new(&self.tensors);
        let rec = self.record(&mut tape, frame)?;
        let attention = keep_attention.then(|| {
            rec.attention
                .iter()
                .map(|layer| layer.iter().map(|&a| tape.value(a).to_owned()).collect())
                .collect()
        });
        Ok(ForwardOutput {
            scores: tape.value(rec.scores).to_owned(),
            attention,
        })
    }
}

/// Pairwise marker distances on the canonical pose (identity pose, zero
/// shape), `M x M`.
pub fn canonical_marker_distances(body: &SurrogateBody, layout: &MarkerLayout) -> Result<Array2<f64>> {
    let surface = body.skin(&Pose::identity())?;
    let x = place_virtual_markers(&surface, layout)?;
    let m = x.len();
    Ok(Array2::from_shape_fn((m, m), |(i, j)| {
        (0..3).map(|k| (x[i][k] - x[j][k]).powi(2)).sum::<f64>().sqrt()
    }))
}

/// Span of an `M x M` attention matrix: `(1/M) sum_ij W_ij D_ij`.
pub fn span_of(weights: &Array2<f64>, distances: &Array2<f64>) -> Result<f64> {
    if weights.dim() != distances.dim() || !weights.is_square() {
        return Err(SomaError::Shape(format!(
            "attention {:?} vs distances {:?}",
            weights.dim(),
            distances.dim()
        )));
    }
    Ok((weights * distances).sum() / weights.nrows() as f64)
}

/// Per-layer attention span in meters. Each frame must carry every marker
/// exactly once and no ghosts; rows are reordered by label, the per-head
/// maximum is taken, and the result is averaged over frames.
pub fn attention_span(params: &NetParams, frames: &[LabeledFrame], distances: &Array2<f64>) -> Result<Vec<f64>> {
    let m = params.num_markers;
    if frames.is_empty() {
        return Err(SomaError::InvalidArgument("attention span needs at least one frame".into()));
    }
    if distances.dim() != (m, m) {
        return Err(SomaError::Shape(format!("distance matrix {:?} for {m} markers", distances.dim())));
    }
    let mut sums = vec![Array2::<f64>::zeros((m, m)); params.config.layers];
    for lf in frames {
        let mut point_of = vec![usize::MAX; m];
        for (i, label) in lf.labels.0.iter().enumerate() {
            match label {
                Some(l) if *l < m && point_of[*l] == usize::MAX => point_of[*l] = i,
                _ => {
                    return Err(SomaError::InvalidArgument(
                        "attention span needs fully labeled frames without ghosts".into(),
                    ))
                }
            }
        }
        if lf.frame.len() != m || point_of.contains(&usize::MAX) {
            return Err(SomaError::InvalidArgument(
                "attention span needs every marker present in every frame".into(),
            ));
        }
        let out = params.forward_with(&lf.frame, true)?;
        for (sum, heads) in sums.iter_mut().zip(out.attention.expect("requested")) {
            for a in 0..m {
                for b in 0..m {
                    let (i, j) = (point_of[a], point_of[b]);
                    sum[[a, b]] += heads.iter().map(|h| h[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }
    }
    sums.iter()
        .map(|s| span_of(&(s / frames.len() as f64), distances))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mocap::Labeling;
    use ndarray::array;

    fn tiny() -> NetConfig {
        NetConfig {
            d_model: 8,
            heads: 2,
            layers: 2,
            feature_width: 6,
        }
    }

    fn random_frame(n: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new((0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0), rng.gen_range(-1.0..1.0)]).collect())
            .unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn affine_rows(x: &[Vec<f64>], w: &Array2<f64>, b: &Array2<f64>) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| (0..w.ncols()).map(|c| (0..w.nrows()).map(|r| row[r] * w[[r, c]]).sum::<f64>() + b[[0, c]]).collect())
            .collect()
    }

    fn matmul_rows(x: &[Vec<f64>], w: &Array2<f64>) -> Vec<Vec<f64>> {
        affine_rows(x, w, &Array2::zeros((1, w.ncols())))
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    fn norm(rows: &[Vec<f64>], g: &Array2<f64>, b: &Array2<f64>) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mean = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                r.iter()
                    .enumerate()
                    .map(|(j, x)| (x - mean) / (var + 1e-5).sqrt() * g[[0, j]] + b[[0, j]])
                    .collect()
            })
            .collect()
    }

    /// Straight-line re-implementation over nested vectors.
    fn naive_forward(p: &NetParams, frame: &Frame) -> Vec<Vec<f64>> {
        let t = &p.tensors;
        let (centered, _) = median_center(frame).unwrap();
        let x: Vec<Vec<f64>> = centered.points.iter().map(|q| q.to_vec()).collect();
        let n = x.len();
        let mut f = affine_rows(&x, &t[0], &t[1]);
        let (d, hw) = (p.config.d_model, p.config.head_width());
        for l in 0..p.config.layers {
            let ix = block_ix(l);
            let q = matmul_rows(&f, &t[ix.wq]);
            let k = matmul_rows(&f, &t[ix.wk]);
            let v = matmul_rows(&f, &t[ix.wv]);
            let mut cat = vec![vec![0.0; d]; n];
            for h in 0..p.config.heads {
                let cols = h * hw..(h + 1) * hw;
                for i in 0..n {
                    let logits: Vec<f64> = (0..n)
                        .map(|j| dot(&q[i][cols.clone()], &k[j][cols.clone()]) / (d as f64).sqrt())
                        .collect();
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
                    let s: f64 = e.iter().sum();
                    for c in cols.clone() {
                        cat[i][c] = (0..n).map(|j| e[j] / s * v[j][c]).sum();
                    }
                }
            }
            let proj = affine_rows(&cat, &t[ix.wo], &t[ix.bo]);
            let res: Vec<Vec<f64>> = f.iter().zip(&proj).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
            let h1 = norm(&res, &t[ix.ln1_g], &t[ix.ln1_b]);
            let ff: Vec<Vec<f64>> = affine_rows(&h1, &t[ix.ff_w1], &t[ix.ff_b1])
                .into_iter()
                .map(|r| r.into_iter().map(gelu).collect())
                .collect();
            let ff = affine_rows(&ff, &t[ix.ff_w2], &t[ix.ff_b2]);
            let res: Vec<Vec<f64>> = h1.iter().zip(&ff).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
            f = norm(&res, &t[ix.ln2_g], &t[ix.ln2_b]);
        }
        let base = 2 + p.config.layers * BLOCK_TENSORS;
        let hidden: Vec<Vec<f64>> = affine_rows(&f, &t[base], &t[base + 1])
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        affine_rows(&hidden, &t[base + 2], &t[base + 3])
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig::default().validate().is_ok());
        assert!(NetConfig::desk().validate().is_ok());
        assert!(NetConfig { d_model: 10, heads: 3, ..tiny() }.validate().is_err());
        assert!(NetConfig { layers: 0, ..tiny() }.validate().is_err());
    }

    #[test]
    fn init_shapes_and_alpha() {
        let p = NetParams::init(tiny(), 4, 1).unwrap();
        p.validate().unwrap();
        assert_eq!(p.alpha(), 1.0);
        assert_eq!(p.names.len(), p.tensors.len());
        assert_eq!(NetParams::init(tiny(), 4, 1).unwrap(), p);
    }

    #[test]
    fn embed_zero_weights_gives_bias() {
        let mut p = NetParams::init(tiny(), 4, 1).unwrap();
        p.tensors[EMBED_W].fill(0.0);
        p.tensors[EMBED_B] = Array2::from_shape_fn((1, 8), |(_, j)| j as f64);
        let mut tape = Tape::new(&p.tensors);
        let x = tape.input(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let f = NetParams::embed(&mut tape, x).unwrap();
        for row in tape.value(f).rows() {
            assert_eq!(row, p.tensors[EMBED_B].row(0));
        }
    }

    #[test]
    fn embed_matches_loop_and_duplicates_rows() {
        let p = NetParams::init(tiny(), 4, 2).unwrap();
        let pts = array![[0.1, 0.2, 0.3], [-0.5, 0.4, 0.0], [0.1, 0.2, 0.3]];
        let mut tape = Tape::new(&p.tensors);
        let x = tape.input(pts.clone());
        let fv = NetParams::embed(&mut tape, x).unwrap();
        let f = tape.value(fv).to_owned();
        let rows: Vec<Vec<f64>> = pts.rows().into_iter().map(|r| r.to_vec()).collect();
        let oracle = affine_rows(&rows, &p.tensors[EMBED_W], &p.tensors[EMBED_B]);
        for i in 0..3 {
            for j in 0..8 {
                assert!((f[[i, j]] - oracle[i][j]).abs() < 1e-12);
            }
        }
        assert_eq!(f.row(0), f.row(2));
    }

    #[test]
    fn single_point_attention_is_its_value_row() {
        let p = NetParams::init(tiny(), 4, 3).unwrap();
        let out = p.forward_with(&random_frame(1, 1), true).unwrap();
        assert_eq!(out.scores.dim(), (1, 4));
        for layer in out.attention.unwrap() {
            for head in layer {
                assert_eq!(head, array![[1.0]]);
            }
        }
    }

    #[test]
    fn identical_points_identical_rows() {
        let p = NetParams::init(tiny(), 4, 3).unwrap();
        let mut f = random_frame(4, 2);
        f.points[3] = f.points[1];
        let s = p.forward(&f).unwrap().scores;
        assert_eq!(s.row(1), s.row(3));
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let p = NetParams::init(tiny(), 4, 4).unwrap();
        let out = p.forward_with(&random_frame(9, 3), true).unwrap();
        for layer in out.attention.unwrap() {
            for head in layer {
                for row in head.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn matches_naive_oracle() {
        let p = NetParams::init(tiny(), 4, 5).unwrap();
        let frame = random_frame(5, 4);
        let s = p.forward(&frame).unwrap().scores;
        let oracle = naive_forward(&p, &frame);
        for i in 0..5 {
            for j in 0..4 {
                assert!((s[[i, j]] - oracle[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let p = NetParams::init(tiny(), 4, 6).unwrap();
        let frame = random_frame(7, 5);
        let order = [3, 0, 6, 2, 5, 1, 4];
        let s = p.forward(&frame).unwrap().scores;
        let sp = p.forward(&frame.reordered(&order)).unwrap().scores;
        for (row, &src) in order.iter().enumerate() {
            for j in 0..4 {
                assert!((sp[[row, j]] - s[[src, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let p = NetParams::init(tiny(), 4, 7).unwrap();
        let frame = random_frame(6, 6);
        let a = p.forward(&frame).unwrap().scores;
        let b = p.forward(&frame.translated([3.0, -1.0, 2.0])).unwrap().scores;
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn large_inputs_stay_finite() {
        let p = NetParams::init(tiny(), 4, 8).unwrap();
        let frame = Frame::new(vec![[1e3, -1e3, 0.0], [-1e3, 1e3, 5.0], [0.0, 0.0, -1e3]]).unwrap();
        assert!(p.forward(&frame).unwrap().scores.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn empty_frame_errors() {
        let p = NetParams::init(tiny(), 4, 8).unwrap();
        let empty = Frame {
            points: vec![],
            tracklet_ids: None,
        };
        assert!(p.forward(&empty).is_err());
    }

    #[test]
    fn finite_difference_gradients_of_score_sum() {
        let p = NetParams::init(tiny(), 4, 9).unwrap();
        let frame = random_frame(5, 7);
        let loss = |tensors: &[Array2<f64>]| {
            let mut tape = Tape::new(tensors);
            let rec = p.record(&mut tape, &frame).unwrap();
            let s = tape.sum(rec.scores);
            tape.scalar(s)
        };
        let mut tape = Tape::new(&p.tensors);
        let rec = p.record(&mut tape, &frame).unwrap();
        let l = tape.sum(rec.scores);
        let grads = tape.backward(l).unwrap();
        let eps = 1e-5;
        for ti in 0..p.tensors.len() - 1 {
            let mut worst = 0.0f64;
            for idx in 0..p.tensors[ti].len() {
                let mut plus = p.tensors.clone();
                plus[ti].as_slice_mut().unwrap()[idx] += eps;
                let mut minus = p.tensors.clone();
                minus[ti].as_slice_mut().unwrap()[idx] -= eps;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let analytic = grads.param(ti).as_slice().unwrap()[idx];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-4);
                worst = worst.max(err);
            }
            assert!(worst <= 1e-3, "{}: {worst}", p.names[ti]);
        }
    }

    #[test]
    fn span_algebra() {
        let d = array![[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]];
        let uniform = Array2::from_elem((3, 3), 1.0 / 3.0);
        assert!((span_of(&uniform, &d).unwrap() - d.mean().unwrap()).abs() < 1e-15);
        assert_eq!(span_of(&Array2::eye(3), &d).unwrap(), 0.0);
    }

    #[test]
    fn span_rejects_unlabeled_frames() {
        let p = NetParams::init(tiny(), 3, 1).unwrap();
        let frame = random_frame(3, 1);
        let lf = LabeledFrame {
            frame,
            labels: Labeling(vec![Some(0), None, Some(2)]),
            occluded: vec![1],
        };
        assert!(attention_span(&p, &[lf], &Array2::zeros((3, 3))).is_err());
        assert!(attention_span(&p, &[], &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn span_is_order_independent() {
        let p = NetParams::init(tiny(), 3, 1).unwrap();
        let frame = random_frame(3, 1);
        let d = array![[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]];
        let a = LabeledFrame {
            frame: frame.clone(),
            labels: Labeling(vec![Some(0), Some(1), Some(2)]),
            occluded: vec![],
        };
        let order = [2, 0, 1];
        let b = LabeledFrame {
            frame: frame.reordered(&order),
            labels: a.labels.reordered(&order),
            occluded: vec![],
        };
        let sa = attention_span(&p, &[a], &d).unwrap();
        let sb = attention_span(&p, &[b], &d).unwrap();
        for (x, y) in sa.iter().zip(&sb) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
