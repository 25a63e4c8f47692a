use std::collections::HashMap;

use crate::error::{shape_err, NeuralError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Contiguous run of rows `[start, start + len)` belonging to one sequence
/// inside a packed `[rows x dim]` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    /// Segments for sequences of the given lengths packed back to back.
    pub fn pack(lengths: &[usize]) -> Vec<Segment> {
        let mut start = 0;
        lengths
            .iter()
            .map(|&len| {
                let s = Segment { start, len };
                start += len;
                s
            })
            .collect()
    }
}

enum Op<F> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    ScaleRows(usize, Vec<F>),
    ConcatCols(usize, usize),
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    SelectRows {
        x: usize,
        emb: usize,
        flags: Vec<bool>,
    },
    LayerNorm {
        x: usize,
        gamma: Option<usize>,
        beta: Option<usize>,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Softmax(usize),
    LogSoftmax(usize),
    Relu(usize),
    Gelu(usize),
    Dropout {
        x: usize,
        mask: Vec<F>,
    },
    Gather {
        x: usize,
        idx: Vec<usize>,
    },
    Nll {
        logp: usize,
        targets: Vec<usize>,
        weights: Vec<F>,
        denom: F,
    },
    Sum(usize),
    DepthwiseConv {
        x: usize,
        w: usize,
        b: usize,
        segments: Vec<Segment>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        segments: Vec<Segment>,
        heads: usize,
        probs: Vec<F>,
    },
    Ctc {
        logp: usize,
        grad: Vec<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Tape of operations recorded during one forward pass.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, usize>,
    grads: Option<Vec<Option<Vec<F>>>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn c<F: Real>(v: f64) -> F {
    F::from_f64_lossy(v)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;
const LN_EPS: f64 = 1e-5;

pub(crate) fn log_sum_exp<F: Real>(a: F, b: F) -> F {
    if a == F::neg_infinity() {
        return b;
    }
    if b == F::neg_infinity() {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Free leaf that receives a gradient (used by checks and tests).
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Places a stored parameter on the tape. Repeated calls for the same id
    /// return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&i) = self.params.get(&id) {
            return Var(i);
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v.0);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads
            .as_ref()
            .and_then(|g| g[v.0].as_deref())
    }

    /// Gradients of every parameter placed on this tape.
    pub fn param_grads(&self) -> Vec<(ParamId, &[F])> {
        let mut out: Vec<(ParamId, &[F])> = self
            .params
            .iter()
            .filter_map(|(&id, &i)| self.grad(Var(i)).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    // ---- forward ops -------------------------------------------------

    /// `op(a) @ op(b)` for 2-D operands, optionally transposed.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims2(a)?;
        let (br, bc) = self.dims2(b)?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            ta,
            tb,
            m,
            k,
            n,
            F::one(),
            self.nodes[a.0].value.data(),
            self.nodes[b.0].value.data(),
            F::zero(),
            &mut out,
        );
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul {
                a: a.0,
                b: b.0,
                ta,
                tb,
                m,
                k,
                n,
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a.0, b.0), rg))
    }

    /// Adds a bias row `[cols]` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, cols) = self.dims2(x)?;
        if self.nodes[bias.0].value.len() != cols {
            return Err(shape_err("add_row", self.shape(x), self.shape(bias)));
        }
        let xv = self.nodes[x.0].value.data();
        let bv = self.nodes[bias.0].value.data();
        let mut out = Vec::with_capacity(r * cols);
        for row in xv.chunks_exact(cols.max(1)).take(r) {
            out.extend(row.iter().zip(bv).map(|(&a, &b)| a + b));
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0) || self.rg(bias.0);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(x.0, bias.0), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        let data = self.nodes[x.0].value.data().iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0);
        Ok(self.push(Tensor::new(shape, data)?, Op::Scale(x.0, s), rg))
    }

    /// Multiplies row `t` of `x` by the constant `scales[t]`.
    pub fn scale_rows(&mut self, x: Var, scales: Vec<F>) -> Result<Var> {
        let (r, cols) = self.dims2(x)?;
        if scales.len() != r {
            return Err(shape_err("scale_rows", self.shape(x), &[scales.len()]));
        }
        let xv = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(r * cols);
        for (t, &s) in scales.iter().enumerate() {
            out.extend(xv[t * cols..(t + 1) * cols].iter().map(|&v| v * s));
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0);
        Ok(self.push(Tensor::new(shape, out)?, Op::ScaleRows(x.0, scales), rg))
    }

    /// Channel-wise concatenation `[r x a] ++ [r x b] -> [r x (a+b)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2(a)?;
        let (rb, cb) = self.dims2(b)?;
        if ra != rb {
            return Err(shape_err("concat", self.shape(a), self.shape(b)));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for t in 0..ra {
            out.extend_from_slice(&av[t * ca..(t + 1) * ca]);
            out.extend_from_slice(&bv[t * cb..(t + 1) * cb]);
        }
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(
            Tensor::new(vec![ra, ca + cb], out)?,
            Op::ConcatCols(a.0, b.0),
            rg,
        ))
    }

    /// Row lookup into a `[vocab x dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.dims2(table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(NeuralError::Param(format!(
                "embedding id {bad} out of range for vocabulary {vocab}"
            )));
        }
        let tv = self.nodes[table.0].value.data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let rg = self.rg(table.0);
        Ok(self.push(
            Tensor::new(vec![ids.len(), dim], out)?,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Replaces every flagged row of `x` with the single embedding row `emb`.
    pub fn select_rows(&mut self, x: Var, emb: Var, flags: &[bool]) -> Result<Var> {
        let (r, cols) = self.dims2(x)?;
        if flags.len() != r || self.nodes[emb.0].value.len() != cols {
            return Err(shape_err("select_rows", self.shape(x), self.shape(emb)));
        }
        let xv = self.nodes[x.0].value.data();
        let ev = self.nodes[emb.0].value.data();
        let mut out = Vec::with_capacity(r * cols);
        for (t, &f) in flags.iter().enumerate() {
            if f {
                out.extend_from_slice(ev);
            } else {
                out.extend_from_slice(&xv[t * cols..(t + 1) * cols]);
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0) || self.rg(emb.0);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::SelectRows {
                x: x.0,
                emb: emb.0,
                flags: flags.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise layer normalization with optional affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Result<Var> {
        let (r, cols) = self.dims2(x)?;
        for p in [gamma, beta].into_iter().flatten() {
            if self.nodes[p.0].value.len() != cols {
                return Err(shape_err("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let eps = c::<F>(LN_EPS);
        let n = F::from_usize(cols).unwrap();
        let xv = self.nodes[x.0].value.data();
        let mut xhat = Vec::with_capacity(r * cols);
        let mut rstd = Vec::with_capacity(r);
        for row in xv.chunks_exact(cols) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let rs = F::one() / (var + eps).sqrt();
            rstd.push(rs);
            xhat.extend(row.iter().map(|&v| (v - mean) * rs));
        }
        let g = gamma.map(|g| self.nodes[g.0].value.data());
        let b = beta.map(|b| self.nodes[b.0].value.data());
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(cols) {
            for (j, v) in row.iter_mut().enumerate() {
                if let Some(g) = g {
                    *v *= g[j];
                }
                if let Some(b) = b {
                    *v += b[j];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0)
            || gamma.is_some_and(|g| self.rg(g.0))
            || beta.is_some_and(|b| self.rg(b.0));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.map(|g| g.0),
                beta: beta.map(|b| b.0),
                xhat,
                rstd,
            },
            rg,
        ))
    }

    fn rowwise(&mut self, x: Var, log: bool) -> Result<Tensor<F>> {
        let (_, cols) = self.dims2(x)?;
        let xv = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks_exact(cols) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let z = row.iter().map(|&v| (v - m).exp()).sum::<F>();
            if log {
                let lz = m + z.ln();
                out.extend(row.iter().map(|&v| v - lz));
            } else {
                out.extend(row.iter().map(|&v| (v - m).exp() / z));
            }
        }
        Tensor::new(self.shape(x).to_vec(), out)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = self.rowwise(x, false)?;
        let rg = self.rg(x.0);
        Ok(self.push(out, Op::Softmax(x.0), rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let out = self.rowwise(x, true)?;
        let rg = self.rg(x.0);
        Ok(self.push(out, Op::LogSoftmax(x.0), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|&v| v.max(F::zero()))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0);
        Ok(self.push(Tensor::new(shape, data)?, Op::Relu(x.0), rg))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let k = c::<F>(GELU_K);
        let a = c::<F>(GELU_A);
        let half = c::<F>(0.5);
        let data = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|&v| half * v * (F::one() + (k * (v + a * v * v * v)).tanh()))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0);
        Ok(self.push(Tensor::new(shape, data)?, Op::Gelu(x.0), rg))
    }

    /// Inverted dropout with an explicit keep mask (`true` keeps the entry).
    /// Kept entries are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, keep: &[bool], p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NeuralError::Param(format!("dropout probability {p}")));
        }
        if keep.len() != self.nodes[x.0].value.len() {
            return Err(shape_err("dropout", self.shape(x), &[keep.len()]));
        }
        let s = c::<F>(1.0 / (1.0 - p));
        let mask: Vec<F> = keep
            .iter()
            .map(|&k| if k { s } else { F::zero() })
            .collect();
        let data = self.nodes[x.0]
            .value
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x.0);
        Ok(self.push(Tensor::new(shape, data)?, Op::Dropout { x: x.0, mask }, rg))
    }

    /// Picks `x[i, idx[i]]` from every row, producing a `[rows]` vector.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, cols) = self.dims2(x)?;
        if idx.len() != r || idx.iter().any(|&i| i >= cols) {
            return Err(shape_err("gather", self.shape(x), &[idx.len()]));
        }
        let xv = self.nodes[x.0].value.data();
        let data = idx.iter().enumerate().map(|(t, &i)| xv[t * cols + i]).collect();
        let rg = self.rg(x.0);
        Ok(self.push(
            Tensor::new(vec![r], data)?,
            Op::Gather {
                x: x.0,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Weighted negative log-likelihood over rows of a log-probability
    /// matrix: `sum_t w_t * -logp[t, target_t] / denom`.
    pub fn nll(&mut self, logp: Var, targets: &[usize], weights: &[F], denom: F) -> Result<Var> {
        let (r, cols) = self.dims2(logp)?;
        if targets.len() != r || weights.len() != r {
            return Err(shape_err("nll", self.shape(logp), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&z| z >= cols) {
            return Err(NeuralError::Param(format!(
                "target {bad} out of range for {cols} classes"
            )));
        }
        if denom <= F::zero() {
            return Err(NeuralError::Loss("empty contributing set".into()));
        }
        let lv = self.nodes[logp.0].value.data();
        let mut total = F::zero();
        for (t, (&z, &w)) in targets.iter().zip(weights).enumerate() {
            if w != F::zero() {
                total -= w * lv[t * cols + z];
            }
        }
        let rg = self.rg(logp.0);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::Nll {
                logp: logp.0,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                denom,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.data().iter().copied().sum::<F>();
        let rg = self.rg(x.0);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x.0), rg))
    }

    /// Depthwise temporal convolution with "same" zero padding, applied
    /// independently inside every segment. `w` is `[width x channels]`
    /// (odd width), `b` is `[channels]`.
    pub fn depthwise_conv(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        segments: &[Segment],
    ) -> Result<Var> {
        let (rows, ch) = self.dims2(x)?;
        let (width, wch) = self.dims2(w)?;
        if wch != ch || width % 2 == 0 || self.nodes[b.0].value.len() != ch {
            return Err(shape_err("depthwise_conv", self.shape(x), self.shape(w)));
        }
        check_segments("depthwise_conv", segments, rows)?;
        let half = (width / 2) as isize;
        let xv = self.nodes[x.0].value.data();
        let wv = self.nodes[w.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let mut out = vec![F::zero(); rows * ch];
        for seg in segments {
            for t in 0..seg.len {
                let orow = &mut out[(seg.start + t) * ch..(seg.start + t + 1) * ch];
                orow.copy_from_slice(bv);
                for j in 0..width {
                    let src = t as isize + j as isize - half;
                    if src < 0 || src >= seg.len as isize {
                        continue;
                    }
                    let xr = &xv[(seg.start + src as usize) * ch..][..ch];
                    let wr = &wv[j * ch..(j + 1) * ch];
                    for ((o, &xi), &wi) in orow.iter_mut().zip(xr).zip(wr) {
                        *o += xi * wi;
                    }
                }
            }
        }
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        Ok(self.push(
            Tensor::new(vec![rows, ch], out)?,
            Op::DepthwiseConv {
                x: x.0,
                w: w.0,
                b: b.0,
                segments: segments.to_vec(),
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    /// Attention never crosses segment boundaries.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segments: &[Segment],
        heads: usize,
    ) -> Result<Var> {
        let (rows, d) = self.dims2(q)?;
        if self.shape(k) != self.shape(q) || self.shape(v) != self.shape(q) {
            return Err(shape_err("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NeuralError::Param(format!(
                "dim {d} not divisible by {heads} heads"
            )));
        }
        check_segments("attention", segments, rows)?;
        let dh = d / heads;
        let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
        let qv = self.nodes[q.0].value.data();
        let kv = self.nodes[k.0].value.data();
        let vv = self.nodes[v.0].value.data();
        let mut out = vec![F::zero(); rows * d];
        let mut probs = Vec::new();
        for seg in segments {
            let t = seg.len;
            for h in 0..heads {
                let qh = cols_block(qv, d, seg, h * dh, dh);
                let kh = cols_block(kv, d, seg, h * dh, dh);
                let vh = cols_block(vv, d, seg, h * dh, dh);
                let mut s = vec![F::zero(); t * t];
                F::gemm(false, true, t, dh, t, scale, &qh, &kh, F::zero(), &mut s);
                softmax_rows(&mut s, t);
                let mut oh = vec![F::zero(); t * dh];
                F::gemm(false, false, t, t, dh, F::one(), &s, &vh, F::zero(), &mut oh);
                for i in 0..t {
                    out[(seg.start + i) * d + h * dh..][..dh]
                        .copy_from_slice(&oh[i * dh..(i + 1) * dh]);
                }
                probs.extend_from_slice(&s);
            }
        }
        let rg = self.rg(q.0) || self.rg(k.0) || self.rg(v.0);
        Ok(self.push(
            Tensor::new(vec![rows, d], out)?,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean CTC loss over segments of a log-probability matrix
    /// `[rows x (vocab+1)]`. `targets[i]` is the label sequence of segment
    /// `i`; `blank` is the blank column.
    pub fn ctc_loss(
        &mut self,
        logp: Var,
        segments: &[Segment],
        targets: &[Vec<usize>],
        blank: usize,
    ) -> Result<Var> {
        let (rows, cols) = self.dims2(logp)?;
        check_segments("ctc_loss", segments, rows)?;
        if segments.len() != targets.len() || segments.is_empty() {
            return Err(NeuralError::Param(format!(
                "{} segments but {} targets",
                segments.len(),
                targets.len()
            )));
        }
        let lv = self.nodes[logp.0].value.data();
        let mut grad = vec![F::zero(); rows * cols];
        let mut total = F::zero();
        let inv = F::one() / F::from_usize(segments.len()).unwrap();
        for (seg, target) in segments.iter().zip(targets) {
            let block = &lv[seg.start * cols..(seg.start + seg.len) * cols];
            let (loss, g) = ctc_forward_backward(block, cols, target, blank)?;
            total += loss;
            for (dst, src) in grad[seg.start * cols..].iter_mut().zip(g) {
                *dst = src * inv;
            }
        }
        let rg = self.rg(logp.0);
        Ok(self.push(
            Tensor::scalar(total * inv),
            Op::Ctc {
                logp: logp.0,
                grad,
            },
            rg,
        ))
    }

    // ---- backward ----------------------------------------------------

    /// Populates gradients of `loss` with respect to every tracked node.
    /// A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(NeuralError::Param(
                "backward already ran on this graph".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NeuralError::Param(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads[..i]);
            }
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| self.nodes[j].value.data();
        // Parents always precede their child on the tape, so `grads` (the
        // prefix before node `i`) holds every slot this node writes to.
        macro_rules! with_grad {
            ($j:expr, |$buf:ident| $body:block) => {{
                let j = $j;
                if self.nodes[j].requires_grad {
                    let n = self.nodes[j].value.len();
                    let $buf: &mut Vec<F> = grads[j].get_or_insert_with(|| vec![F::zero(); n]);
                    $body
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                ta,
                tb,
                m,
                k,
                n,
            } => {
                with_grad!(a, |ga| {
                    if !ta {
                        F::gemm(false, !tb, m, n, k, F::one(), g, val(b), F::one(), ga);
                    } else {
                        F::gemm(tb, true, k, n, m, F::one(), val(b), g, F::one(), ga);
                    }
                });
                with_grad!(b, |gb| {
                    if !tb {
                        F::gemm(!ta, false, k, m, n, F::one(), val(a), g, F::one(), gb);
                    } else {
                        F::gemm(true, ta, n, m, k, F::one(), g, val(a), F::one(), gb);
                    }
                });
            }
            &Op::Add(a, b) => {
                for j in [a, b] {
                    with_grad!(j, |gj| {
                        add_into(gj, g);
                    });
                }
            }
            &Op::AddRow(x, bias) => {
                with_grad!(x, |gx| {
                    add_into(gx, g);
                });
                with_grad!(bias, |gb| {
                    let cols = gb.len();
                    for row in g.chunks_exact(cols) {
                        add_into(gb, row);
                    }
                });
            }
            &Op::Mul(a, b) => {
                with_grad!(a, |ga| {
                    for ((d, &gi), &bi) in ga.iter_mut().zip(g).zip(val(b)) {
                        *d += gi * bi;
                    }
                });
                with_grad!(b, |gb| {
                    for ((d, &gi), &ai) in gb.iter_mut().zip(g).zip(val(a)) {
                        *d += gi * ai;
                    }
                });
            }
            &Op::Scale(x, s) => {
                with_grad!(x, |gx| {
                    for (d, &gi) in gx.iter_mut().zip(g) {
                        *d += gi * s;
                    }
                });
            }
            Op::ScaleRows(x, scales) => {
                with_grad!(*x, |gx| {
                    let cols = gx.len() / scales.len().max(1);
                    for (t, &s) in scales.iter().enumerate() {
                        for j in 0..cols {
                            gx[t * cols + j] += g[t * cols + j] * s;
                        }
                    }
                });
            }
            &Op::ConcatCols(a, b) => {
                let (rows, total) = node.value.dims2().unwrap();
                let ca = self.nodes[a].value.len() / rows.max(1);
                let cb = total - ca;
                with_grad!(a, |ga| {
                    for t in 0..rows {
                        add_into(&mut ga[t * ca..(t + 1) * ca], &g[t * total..t * total + ca]);
                    }
                });
                with_grad!(b, |gb| {
                    for t in 0..rows {
                        add_into(
                            &mut gb[t * cb..(t + 1) * cb],
                            &g[t * total + ca..(t + 1) * total],
                        );
                    }
                });
            }
            Op::Embedding { table, ids } => {
                with_grad!(*table, |gt| {
                    let dim = node.value.dims2().unwrap().1;
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                });
            }
            Op::SelectRows { x, emb, flags } => {
                let cols = node.value.dims2().unwrap().1;
                with_grad!(*x, |gx| {
                    for (t, &f) in flags.iter().enumerate() {
                        if !f {
                            add_into(&mut gx[t * cols..(t + 1) * cols], &g[t * cols..(t + 1) * cols]);
                        }
                    }
                });
                with_grad!(*emb, |ge| {
                    for (t, &f) in flags.iter().enumerate() {
                        if f {
                            add_into(ge, &g[t * cols..(t + 1) * cols]);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = node.value.dims2().unwrap().1;
                let n = F::from_usize(cols).unwrap();
                if let Some(gm) = *gamma {
                    with_grad!(gm, |gg| {
                        for (grow, hrow) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                            for ((d, &gi), &hi) in gg.iter_mut().zip(grow).zip(hrow) {
                                *d += gi * hi;
                            }
                        }
                    });
                }
                if let Some(bt) = *beta {
                    with_grad!(bt, |gb| {
                        for grow in g.chunks_exact(cols) {
                            add_into(gb, grow);
                        }
                    });
                }
                with_grad!(*x, |gx| {
                    let gam = gamma.map(|gm| val(gm));
                    let mut dxhat = vec![F::zero(); cols];
                    for (r, (grow, hrow)) in g
                        .chunks_exact(cols)
                        .zip(xhat.chunks_exact(cols))
                        .enumerate()
                    {
                        for j in 0..cols {
                            dxhat[j] = grow[j] * gam.map_or(F::one(), |gv| gv[j]);
                        }
                        let mean_d = dxhat.iter().copied().sum::<F>() / n;
                        let mean_dh =
                            dxhat.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<F>() / n;
                        let out = &mut gx[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            out[j] += rstd[r] * (dxhat[j] - mean_d - hrow[j] * mean_dh);
                        }
                    }
                });
            }
            &Op::Softmax(x) => {
                let cols = node.value.dims2().unwrap().1;
                with_grad!(x, |gx| {
                    for ((grow, yrow), out) in g
                        .chunks_exact(cols)
                        .zip(node.value.data().chunks_exact(cols))
                        .zip(gx.chunks_exact_mut(cols))
                    {
                        let dot = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum::<F>();
                        for j in 0..cols {
                            out[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            &Op::LogSoftmax(x) => {
                let cols = node.value.dims2().unwrap().1;
                with_grad!(x, |gx| {
                    for ((grow, yrow), out) in g
                        .chunks_exact(cols)
                        .zip(node.value.data().chunks_exact(cols))
                        .zip(gx.chunks_exact_mut(cols))
                    {
                        let s = grow.iter().copied().sum::<F>();
                        for j in 0..cols {
                            out[j] += grow[j] - yrow[j].exp() * s;
                        }
                    }
                });
            }
            &Op::Relu(x) => {
                with_grad!(x, |gx| {
                    for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(val(x)) {
                        if xi > F::zero() {
                            *d += gi;
                        }
                    }
                });
            }
            &Op::Gelu(x) => {
                let k = c::<F>(GELU_K);
                let a = c::<F>(GELU_A);
                let half = c::<F>(0.5);
                let three = c::<F>(3.0);
                with_grad!(x, |gx| {
                    for ((d, &gi), &v) in gx.iter_mut().zip(g).zip(val(x)) {
                        let u = k * (v + a * v * v * v);
                        let th = u.tanh();
                        let du = k * (F::one() + three * a * v * v);
                        let dy = half * (F::one() + th) + half * v * (F::one() - th * th) * du;
                        *d += gi * dy;
                    }
                });
            }
            Op::Dropout { x, mask } => {
                with_grad!(*x, |gx| {
                    for ((d, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *d += gi * m;
                    }
                });
            }
            Op::Gather { x, idx } => {
                let cols = self.nodes[*x].value.dims2().unwrap().1;
                with_grad!(*x, |gx| {
                    for (t, &j) in idx.iter().enumerate() {
                        gx[t * cols + j] += g[t];
                    }
                });
            }
            Op::Nll {
                logp,
                targets,
                weights,
                denom,
            } => {
                let cols = self.nodes[*logp].value.dims2().unwrap().1;
                with_grad!(*logp, |gl| {
                    for (t, (&z, &w)) in targets.iter().zip(weights).enumerate() {
                        gl[t * cols + z] -= g[0] * w / *denom;
                    }
                });
            }
            &Op::Sum(x) => {
                with_grad!(x, |gx| {
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::DepthwiseConv { x, w, b, segments } => {
                let (width, ch) = self.nodes[*w].value.dims2().unwrap();
                let half = (width / 2) as isize;
                with_grad!(*b, |gb| {
                    for row in g.chunks_exact(ch) {
                        add_into(gb, row);
                    }
                });
                let xv = val(*x);
                let wv = val(*w);
                with_grad!(*w, |gw| {
                    for seg in segments {
                        for t in 0..seg.len {
                            let grow = &g[(seg.start + t) * ch..][..ch];
                            for j in 0..width {
                                let src = t as isize + j as isize - half;
                                if src < 0 || src >= seg.len as isize {
                                    continue;
                                }
                                let xr = &xv[(seg.start + src as usize) * ch..][..ch];
                                for ((d, &gi), &xi) in
                                    gw[j * ch..(j + 1) * ch].iter_mut().zip(grow).zip(xr)
                                {
                                    *d += gi * xi;
                                }
                            }
                        }
                    }
                });
                with_grad!(*x, |gx| {
                    for seg in segments {
                        for t in 0..seg.len {
                            let grow = &g[(seg.start + t) * ch..][..ch];
                            for j in 0..width {
                                let src = t as isize + j as isize - half;
                                if src < 0 || src >= seg.len as isize {
                                    continue;
                                }
                                let dst = &mut gx[(seg.start + src as usize) * ch..][..ch];
                                for ((d, &gi), &wi) in
                                    dst.iter_mut().zip(grow).zip(&wv[j * ch..(j + 1) * ch])
                                {
                                    *d += gi * wi;
                                }
                            }
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => {
                let d = node.value.dims2().unwrap().1;
                let dh = d / heads;
                let scale = F::one() / F::from_usize(dh).unwrap().sqrt();
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let mut dq = vec![F::zero(); qv.len()];
                let mut dk = vec![F::zero(); kv.len()];
                let mut dv = vec![F::zero(); vv.len()];
                let mut off = 0;
                for seg in segments {
                    let t = seg.len;
                    for h in 0..*heads {
                        let p = &probs[off..off + t * t];
                        off += t * t;
                        let qh = cols_block(qv, d, seg, h * dh, dh);
                        let kh = cols_block(kv, d, seg, h * dh, dh);
                        let vh = cols_block(vv, d, seg, h * dh, dh);
                        let go = cols_block(g, d, seg, h * dh, dh);
                        let mut gvh = vec![F::zero(); t * dh];
                        F::gemm(true, false, t, t, dh, F::one(), p, &go, F::zero(), &mut gvh);
                        let mut dp = vec![F::zero(); t * t];
                        F::gemm(false, true, t, dh, t, F::one(), &go, &vh, F::zero(), &mut dp);
                        for (prow, drow) in p.chunks_exact(t).zip(dp.chunks_exact_mut(t)) {
                            let dot = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum::<F>();
                            for (dd, &pp) in drow.iter_mut().zip(prow) {
                                *dd = pp * (*dd - dot);
                            }
                        }
                        let mut gqh = vec![F::zero(); t * dh];
                        F::gemm(false, false, t, t, dh, scale, &dp, &kh, F::zero(), &mut gqh);
                        let mut gkh = vec![F::zero(); t * dh];
                        F::gemm(true, false, t, t, dh, scale, &dp, &qh, F::zero(), &mut gkh);
                        scatter_cols(&mut dq, d, seg, h * dh, dh, &gqh);
                        scatter_cols(&mut dk, d, seg, h * dh, dh, &gkh);
                        scatter_cols(&mut dv, d, seg, h * dh, dh, &gvh);
                    }
                }
                with_grad!(*q, |gq| {
                    add_into(gq, &dq);
                });
                with_grad!(*k, |gk| {
                    add_into(gk, &dk);
                });
                with_grad!(*v, |gv| {
                    add_into(gv, &dv);
                });
            }
            Op::Ctc { logp, grad } => {
                with_grad!(*logp, |gl| {
                    for (d, &gi) in gl.iter_mut().zip(grad) {
                        *d += gi * g[0];
                    }
                });
            }
        }
    }
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn check_segments(op: &'static str, segments: &[Segment], rows: usize) -> Result<()> {
    for s in segments {
        if s.start + s.len > rows {
            return Err(shape_err(op, &[rows], &[s.start, s.len]));
        }
    }
    Ok(())
}

fn cols_block<F: Real>(m: &[F], d: usize, seg: &Segment, c0: usize, w: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(seg.len * w);
    for i in 0..seg.len {
        out.extend_from_slice(&m[(seg.start + i) * d + c0..][..w]);
    }
    out
}

fn scatter_cols<F: Real>(m: &mut [F], d: usize, seg: &Segment, c0: usize, w: usize, src: &[F]) {
    for i in 0..seg.len {
        add_into(&mut m[(seg.start + i) * d + c0..][..w], &src[i * w..(i + 1) * w]);
    }
}

fn softmax_rows<F: Real>(s: &mut [F], cols: usize) {
    for row in s.chunks_exact_mut(cols) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

/// Minimum number of frames a CTC alignment of `target` needs: one per label
/// plus one blank between each pair of equal neighbours.
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Log-space CTC forward-backward on one sequence. `logp` is `[T x cols]`
/// log-probabilities. Returns the loss `-log p(target)` and its gradient
/// with respect to `logp`.
pub(crate) fn ctc_forward_backward<F: Real>(
    logp: &[F],
    cols: usize,
    target: &[usize],
    blank: usize,
) -> Result<(F, Vec<F>)> {
    let t_len = logp.len() / cols;
    if blank >= cols {
        return Err(NeuralError::Param(format!("blank {blank} >= {cols} classes")));
    }
    if let Some(&bad) = target.iter().find(|&&z| z >= cols || z == blank) {
        return Err(NeuralError::Param(format!("invalid CTC target token {bad}")));
    }
    if ctc_min_frames(target) > t_len {
        return Err(NeuralError::Loss(format!(
            "target of length {} infeasible in {t_len} frames",
            target.len()
        )));
    }
    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { target[s / 2] })
        .collect();
    let ninf = F::neg_infinity();
    let lp = |t: usize, s: usize| logp[t * cols + ext[s]];
    let skip_ok = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_sum_exp(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if skip_ok(s) {
                a = log_sum_exp(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = if a == ninf { ninf } else { a + lp(t, s) };
        }
    }
    let last = (t_len - 1) * s_len;
    let mut log_z = alpha[last + s_len - 1];
    if s_len > 1 {
        log_z = log_sum_exp(log_z, alpha[last + s_len - 2]);
    }
    if log_z == ninf {
        return Err(NeuralError::Loss("zero-probability target".into()));
    }

    let mut beta = vec![ninf; t_len * s_len];
    beta[last + s_len - 1] = lp(t_len - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, s_len - 2);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                b = log_sum_exp(b, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_sum_exp(b, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = if b == ninf { ninf } else { b + lp(t, s) };
        }
    }

    // d(-log Z)/d logp[t,k] = -sum_{s: ext[s]=k} alpha*beta / (y_t(k) Z)
    let mut grad = vec![F::zero(); t_len * cols];
    let mut occ = vec![ninf; cols];
    for t in 0..t_len {
        occ.iter_mut().for_each(|o| *o = ninf);
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            if ab > ninf {
                occ[ext[s]] = log_sum_exp(occ[ext[s]], ab);
            }
        }
        for (k, &o) in occ.iter().enumerate() {
            if o > ninf {
                grad[t * cols + k] = -(o - logp[t * cols + k] - log_z).exp();
            }
        }
    }
    Ok((-log_z, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(vec![1, 4]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(vec![1, 5], vec![3.0; 5]));
        let y = g.layer_norm(x, None, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(vec![3], vec![1.0, -2.0, 5.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_self_dot_is_twice_input() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(vec![3], vec![1.0, -2.0, 5.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 10.0]);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(vec![2], vec![1.0, 2.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(NeuralError::Param(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(vec![2], vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![4, 2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn dropout_routes_gradient_through_kept_entries_only() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(vec![4], vec![1.0, 2.0, 3.0, 4.0]));
        let keep = [true, false, true, false];
        let y = g.dropout(x, &keep, 0.5).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 0.0, 6.0, 0.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn constant_nodes_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t(vec![2], vec![1.0, 2.0]));
        let k = g.constant(t(vec![2], vec![3.0, 4.0]));
        let y = g.mul(x, k).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(k).is_none());
        assert_eq!(g.grad(x).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn ctc_single_frame_single_token_uniform() {
        let lp = [0.5f64.ln(), 0.5f64.ln()];
        let (loss, _) = ctc_forward_backward(&lp, 2, &[0], 1).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ctc_infeasible_target_is_an_error() {
        let lp = vec![(1.0f64 / 3.0).ln(); 3 * 3];
        // [a, a] needs a separating blank: 3 frames minimum, 2 available
        assert!(ctc_forward_backward(&lp[..6], 3, &[0, 0], 2).is_err());
        assert!(ctc_forward_backward(&lp, 3, &[0, 0], 2).is_ok());
    }
}
