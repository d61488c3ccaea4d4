//! Eager reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every training step: leaves (`constant`,
//! `param`) copy their values in, each op records its inputs and computes
//! its output immediately, and [`Graph::backward`] walks the tape once in
//! reverse to fill per-node gradients. `param` leaves mark the subgraph as
//! differentiable; gradients never flow into `constant` leaves.

use super::matmul::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Epsilon added to the per-row variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Handle into a [`Graph`]. Only valid for the graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    /// y = x * w^T + b (b broadcast across rows).
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    /// y = c * x for a fixed scalar c.
    Scale { x: NodeId, c: f64 },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// Elementwise product with a constant array stored in `aux`.
    MulConst { x: NodeId },
    Square { x: NodeId },
    /// |x|, with derivative 0 at x == 0.
    Abs { x: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
    /// [a | b] along columns; rows must match.
    ConcatCols { a: NodeId, b: NodeId },
    /// Per-row normalization, then y = gamma .* xhat + beta.
    /// `aux` holds xhat (rows*cols) followed by inv_std (rows).
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    /// Scalar u^T W v for constant vectors u, v stored in `aux` (u then v).
    Bilinear { w: NodeId },
    /// Scalar y = 1 / max(x, floor); derivative 0 on the clamped branch.
    RecipFloor { x: NodeId, floor: f64 },
    /// y = x * s where s is a scalar node.
    MulScalarNode { x: NodeId, s: NodeId },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    aux: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. See the module docs for the usage pattern.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    ran_backward: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, aux: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, aux, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows, n.cols)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.node(id).value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let n = self.node(id);
        if n.rows * n.cols != 1 {
            return Err(Error::Usage(format!("scalar() on a {}x{} node", n.rows, n.cols)));
        }
        Ok(n.value[0])
    }

    /// Gradient of the last `backward` loss w.r.t. this node.
    pub fn grad(&self, id: NodeId) -> Result<&[f64]> {
        if !self.ran_backward {
            return Err(Error::Usage("grad() before backward()".into()));
        }
        if !self.node(id).needs_grad {
            return Err(Error::Usage("grad() on a node outside the differentiable subgraph".into()));
        }
        Ok(&self.grads[id.0])
    }

    // ── leaves ──────────────────────────────────────────────────────────

    pub fn constant(&mut self, rows: usize, cols: usize, data: &[f64]) -> Result<NodeId> {
        if data.len() != rows * cols {
            return Err(Error::Dim(format!(
                "constant {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(self.push(rows, cols, data.to_vec(), vec![], Op::Constant, false))
    }

    /// Copies a parameter tensor onto the tape as a differentiable leaf.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        self.push(t.rows(), t.cols(), t.data.clone(), vec![], Op::Param, true)
    }

    // ── ops ─────────────────────────────────────────────────────────────

    /// y[B,out] = x[B,in] * w[out,in]^T + b[1,out].
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (bsz, n_in) = self.shape(x);
        let (n_out, w_in) = self.shape(w);
        let (b_rows, b_cols) = self.shape(b);
        if w_in != n_in || b_rows != 1 || b_cols != n_out {
            return Err(Error::Dim(format!(
                "affine: x {bsz}x{n_in}, w {n_out}x{w_in}, b {b_rows}x{b_cols}"
            )));
        }
        let mut value = Vec::with_capacity(bsz * n_out);
        for _ in 0..bsz {
            value.extend_from_slice(&self.node(b).value);
        }
        // x[B,in] * w^T: w^T(i,o) lives at w[o*in + i], so rsb=1, csb=in.
        gemm(
            bsz, n_in, n_out, 1.0,
            &self.node(x).value, n_in, 1,
            &self.node(w).value, 1, n_in,
            1.0, &mut value, n_out, 1,
        );
        let ng = self.node(x).needs_grad || self.node(w).needs_grad || self.node(b).needs_grad;
        Ok(self.push(bsz, n_out, value, vec![], Op::Affine { x, w, b }, ng))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x);
        let value = n.value.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let (r, c, ng) = (n.rows, n.cols, n.needs_grad);
        self.push(r, c, value, vec![], Op::Relu { x }, ng)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x);
        let value = n.value.iter().map(|&v| v.tanh()).collect();
        let (r, c, ng) = (n.rows, n.cols, n.needs_grad);
        self.push(r, c, value, vec![], Op::Tanh { x }, ng)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let n = self.node(x);
        let value = n.value.iter().map(|&v| c * v).collect();
        let (r, co, ng) = (n.rows, n.cols, n.needs_grad);
        self.push(r, co, value, vec![], Op::Scale { x, c }, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_shapes("add", a, b)?;
        let value: Vec<f64> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| x + y)
            .collect();
        let (r, c) = self.shape(a);
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, value, vec![], Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_shapes("sub", a, b)?;
        let value: Vec<f64> = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| x - y)
            .collect();
        let (r, c) = self.shape(a);
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(r, c, value, vec![], Op::Sub { a, b }, ng))
    }

    /// Elementwise product with a fixed array (dropout masks, sample weights).
    pub fn mul_const(&mut self, x: NodeId, factors: &[f64]) -> Result<NodeId> {
        let n = self.node(x);
        if factors.len() != n.value.len() {
            return Err(Error::Dim(format!(
                "mul_const: node has {} elements, factors {}",
                n.value.len(),
                factors.len()
            )));
        }
        let value = n.value.iter().zip(factors).map(|(&v, &f)| v * f).collect();
        let (r, c, ng) = (n.rows, n.cols, n.needs_grad);
        Ok(self.push(r, c, value, factors.to_vec(), Op::MulConst { x }, ng))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x);
        let value = n.value.iter().map(|&v| v * v).collect();
        let (r, c, ng) = (n.rows, n.cols, n.needs_grad);
        self.push(r, c, value, vec![], Op::Square { x }, ng)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x);
        let value = n.value.iter().map(|&v| v.abs()).collect();
        let (r, c, ng) = (n.rows, n.cols, n.needs_grad);
        self.push(r, c, value, vec![], Op::Abs { x }, ng)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x);
        let value = vec![n.value.iter().sum()];
        let ng = n.needs_grad;
        self.push(1, 1, value, vec![], Op::Sum { x }, ng)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x);
        let value = vec![n.value.iter().sum::<f64>() / n.value.len() as f64];
        let ng = n.needs_grad;
        self.push(1, 1, value, vec![], Op::Mean { x }, ng)
    }

    /// [a | b]: row counts must match, columns concatenate.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::Dim(format!("concat_cols: {ra} rows vs {rb} rows")));
        }
        let mut value = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            value.extend_from_slice(&self.node(a).value[i * ca..(i + 1) * ca]);
            value.extend_from_slice(&self.node(b).value[i * cb..(i + 1) * cb]);
        }
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(ra, ca + cb, value, vec![], Op::ConcatCols { a, b }, ng))
    }

    /// Per-row layer normalization with learned gain and shift (both 1 x cols).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.shape(x);
        if self.shape(gamma) != (1, cols) || self.shape(beta) != (1, cols) {
            return Err(Error::Dim(format!(
                "layer_norm: x {rows}x{cols}, gamma {:?}, beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let mut value = vec![0.0; rows * cols];
        let mut aux = vec![0.0; rows * cols + rows];
        for i in 0..rows {
            let row = &self.node(x).value[i * cols..(i + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            aux[rows * cols + i] = inv_std;
            for j in 0..cols {
                let xhat = (row[j] - mean) * inv_std;
                aux[i * cols + j] = xhat;
                value[i * cols + j] =
                    self.node(gamma).value[j] * xhat + self.node(beta).value[j];
            }
        }
        let ng = self.node(x).needs_grad || self.node(gamma).needs_grad || self.node(beta).needs_grad;
        Ok(self.push(rows, cols, value, aux, Op::LayerNorm { x, gamma, beta }, ng))
    }

    /// Scalar u^T W v for fixed vectors u (len = rows of W) and v (len = cols).
    pub fn bilinear(&mut self, w: NodeId, u: &[f64], v: &[f64]) -> Result<NodeId> {
        let (rows, cols) = self.shape(w);
        if u.len() != rows || v.len() != cols {
            return Err(Error::Dim(format!(
                "bilinear: w {rows}x{cols}, u len {}, v len {}",
                u.len(),
                v.len()
            )));
        }
        let wv = self.node(w).value.as_slice();
        let mut acc = 0.0;
        for i in 0..rows {
            let mut dot = 0.0;
            for j in 0..cols {
                dot += wv[i * cols + j] * v[j];
            }
            acc += u[i] * dot;
        }
        let mut aux = u.to_vec();
        aux.extend_from_slice(v);
        let ng = self.node(w).needs_grad;
        Ok(self.push(1, 1, vec![acc], aux, Op::Bilinear { w }, ng))
    }

    /// Scalar 1 / max(x, floor).
    pub fn recip_floor(&mut self, x: NodeId, floor: f64) -> Result<NodeId> {
        let n = self.node(x);
        if n.rows * n.cols != 1 {
            return Err(Error::Usage("recip_floor expects a scalar node".into()));
        }
        let value = vec![1.0 / n.value[0].max(floor)];
        let ng = n.needs_grad;
        Ok(self.push(1, 1, value, vec![], Op::RecipFloor { x, floor }, ng))
    }

    /// y = x * s where s is a 1x1 node (both sides differentiable).
    pub fn mul_scalar_node(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let sn = self.node(s);
        if sn.rows * sn.cols != 1 {
            return Err(Error::Usage("mul_scalar_node expects a 1x1 scale node".into()));
        }
        let sv = sn.value[0];
        let n = self.node(x);
        let value = n.value.iter().map(|&v| v * sv).collect();
        let (r, c) = (n.rows, n.cols);
        let ng = n.needs_grad || self.node(s).needs_grad;
        Ok(self.push(r, c, value, vec![], Op::MulScalarNode { x, s }, ng))
    }

    fn zip_shapes(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(Error::Dim(format!("{op}: {ra}x{ca} vs {rb}x{cb}")));
        }
        Ok(())
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Fills gradients for every node in
    /// the differentiable subgraph; untouched nodes get zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let ln = self.node(loss);
        if ln.rows * ln.cols != 1 {
            return Err(Error::Usage(format!(
                "backward on a {}x{} node; reduce to a scalar first",
                ln.rows, ln.cols
            )));
        }
        if !ln.needs_grad {
            return Err(Error::Usage(
                "backward on a constant loss: no parameter leaf reaches it".into(),
            ));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| if n.needs_grad { vec![0.0; n.value.len()] } else { vec![] })
            .collect();
        self.grads[loss.0][0] = 1.0;
        let mut touched = vec![false; self.nodes.len()];
        touched[loss.0] = true;

        for idx in (0..=loss.0).rev() {
            if !touched[idx] || !self.nodes[idx].needs_grad {
                continue;
            }
            // Take this node's grad out to appease the borrow checker while
            // we write into input grads.
            let dy = std::mem::take(&mut self.grads[idx]);
            let (rows, cols) = (self.nodes[idx].rows, self.nodes[idx].cols);
            match self.nodes[idx].op {
                Op::Constant | Op::Param => {}
                Op::Affine { x, w, b } => {
                    let n_in = self.nodes[x.0].cols;
                    let bsz = rows;
                    let n_out = cols;
                    if self.nodes[x.0].needs_grad {
                        // dX[B,in] += dY[B,out] * W[out,in]
                        let wv = std::mem::take(&mut self.nodes[w.0].value);
                        gemm(
                            bsz, n_out, n_in, 1.0,
                            &dy, n_out, 1,
                            &wv, n_in, 1,
                            1.0, &mut self.grads[x.0], n_in, 1,
                        );
                        self.nodes[w.0].value = wv;
                        touched[x.0] = true;
                    }
                    if self.nodes[w.0].needs_grad {
                        // dW[out,in] += dY^T[out,B] * X[B,in]
                        let xv = std::mem::take(&mut self.nodes[x.0].value);
                        gemm(
                            n_out, bsz, n_in, 1.0,
                            &dy, 1, n_out,
                            &xv, n_in, 1,
                            1.0, &mut self.grads[w.0], n_in, 1,
                        );
                        self.nodes[x.0].value = xv;
                        touched[w.0] = true;
                    }
                    if self.nodes[b.0].needs_grad {
                        for r in 0..bsz {
                            for o in 0..n_out {
                                self.grads[b.0][o] += dy[r * n_out + o];
                            }
                        }
                        touched[b.0] = true;
                    }
                }
                Op::Relu { x } => {
                    if self.nodes[x.0].needs_grad {
                        for (i, &d) in dy.iter().enumerate() {
                            if self.nodes[idx].value[i] > 0.0 {
                                self.grads[x.0][i] += d;
                            }
                        }
                        touched[x.0] = true;
                    }
                }
                Op::Tanh { x } => {
                    if self.nodes[x.0].needs_grad {
                        for (i, &d) in dy.iter().enumerate() {
                            let y = self.nodes[idx].value[i];
                            self.grads[x.0][i] += d * (1.0 - y * y);
                        }
                        touched[x.0] = true;
                    }
                }
                Op::Scale { x, c } => {
                    if self.nodes[x.0].needs_grad {
                        for (i, &d) in dy.iter().enumerate() {
                            self.grads[x.0][i] += c * d;
                        }
                        touched[x.0] = true;
                    }
                }
                Op::Add { a, b } => {
                    for &inp in &[a, b] {
                        if self.nodes[inp.0].needs_grad {
                            for (i, &d) in dy.iter().enumerate() {
                                self.grads[inp.0][i] += d;
                            }
                            touched[inp.0] = true;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        for (i, &d) in dy.iter().enumerate() {
                            self.grads[a.0][i] += d;
                        }
                        touched[a.0] = true;
                    }
                    if self.nodes[b.0].needs_grad {
                        for (i, &d) in dy.iter().enumerate() {
                            self.grads[b.0][i] -= d;
                        }
                        touched[b.0] = true;
                    }
                }
                Op::MulConst { x } => {
                    if self.nodes[x.0].needs_grad {
                        for (i, &d) in dy.iter().enumerate() {
                            self.grads[x.0][i] += d * self.nodes[idx].aux[i];
                        }
                        touched[x.0] = true;
                    }
                }
                Op::Square { x } => {
                    if self.nodes[x.0].needs_grad {
                        for (i, &d) in dy.iter().enumerate() {
                            self.grads[x.0][i] += 2.0 * self.nodes[x.0].value[i] * d;
                        }
                        touched[x.0] = true;
                    }
                }
                Op::Abs { x } => {
                    if self.nodes[x.0].needs_grad {
                        for (i, &d) in dy.iter().enumerate() {
                            let v = self.nodes[x.0].value[i];
                            // signum(0) would be 0 anyway, but be explicit:
                            // the subgradient at 0 is defined as 0 here.
                            let s = if v > 0.0 {
                                1.0
                            } else if v < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            self.grads[x.0][i] += s * d;
                        }
                        touched[x.0] = true;
                    }
                }
                Op::Sum { x } => {
                    if self.nodes[x.0].needs_grad {
                        let d = dy[0];
                        for g in self.grads[x.0].iter_mut() {
                            *g += d;
                        }
                        touched[x.0] = true;
                    }
                }
                Op::Mean { x } => {
                    if self.nodes[x.0].needs_grad {
                        let d = dy[0] / self.nodes[x.0].value.len() as f64;
                        for g in self.grads[x.0].iter_mut() {
                            *g += d;
                        }
                        touched[x.0] = true;
                    }
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.nodes[a.0].cols;
                    let cb = self.nodes[b.0].cols;
                    if self.nodes[a.0].needs_grad {
                        for i in 0..rows {
                            for j in 0..ca {
                                self.grads[a.0][i * ca + j] += dy[i * (ca + cb) + j];
                            }
                        }
                        touched[a.0] = true;
                    }
                    if self.nodes[b.0].needs_grad {
                        for i in 0..rows {
                            for j in 0..cb {
                                self.grads[b.0][i * cb + j] += dy[i * (ca + cb) + ca + j];
                            }
                        }
                        touched[b.0] = true;
                    }
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let n = cols as f64;
                    for i in 0..rows {
                        let xhat = &self.nodes[idx].aux[i * cols..(i + 1) * cols];
                        let inv_std = self.nodes[idx].aux[rows * cols + i];
                        let dyr = &dy[i * cols..(i + 1) * cols];
                        if self.nodes[gamma.0].needs_grad {
                            for j in 0..cols {
                                self.grads[gamma.0][j] += dyr[j] * xhat[j];
                            }
                        }
                        if self.nodes[beta.0].needs_grad {
                            for j in 0..cols {
                                self.grads[beta.0][j] += dyr[j];
                            }
                        }
                        if self.nodes[x.0].needs_grad {
                            let gam = &self.nodes[gamma.0].value;
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for j in 0..cols {
                                let dxhat = dyr[j] * gam[j];
                                mean_dxhat += dxhat;
                                mean_dxhat_xhat += dxhat * xhat[j];
                            }
                            mean_dxhat /= n;
                            mean_dxhat_xhat /= n;
                            for j in 0..cols {
                                let dxhat = dyr[j] * gam[j];
                                self.grads[x.0][i * cols + j] +=
                                    inv_std * (dxhat - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                            }
                        }
                    }
                    if self.nodes[gamma.0].needs_grad {
                        touched[gamma.0] = true;
                    }
                    if self.nodes[beta.0].needs_grad {
                        touched[beta.0] = true;
                    }
                    if self.nodes[x.0].needs_grad {
                        touched[x.0] = true;
                    }
                }
                Op::Bilinear { w } => {
                    if self.nodes[w.0].needs_grad {
                        let (wr, wc) = (self.nodes[w.0].rows, self.nodes[w.0].cols);
                        let d = dy[0];
                        let (u, v) = self.nodes[idx].aux.split_at(wr);
                        for i in 0..wr {
                            for j in 0..wc {
                                self.grads[w.0][i * wc + j] += d * u[i] * v[j];
                            }
                        }
                        touched[w.0] = true;
                    }
                }
                Op::RecipFloor { x, floor } => {
                    if self.nodes[x.0].needs_grad {
                        let xv = self.nodes[x.0].value[0];
                        if xv > floor {
                            self.grads[x.0][0] += -dy[0] / (xv * xv);
                        }
                        touched[x.0] = true;
                    }
                }
                Op::MulScalarNode { x, s } => {
                    let sv = self.nodes[s.0].value[0];
                    if self.nodes[x.0].needs_grad {
                        for (i, &d) in dy.iter().enumerate() {
                            self.grads[x.0][i] += d * sv;
                        }
                        touched[x.0] = true;
                    }
                    if self.nodes[s.0].needs_grad {
                        let mut acc = 0.0;
                        for (i, &d) in dy.iter().enumerate() {
                            acc += d * self.nodes[x.0].value[i];
                        }
                        self.grads[s.0][0] += acc;
                        touched[s.0] = true;
                    }
                }
            }
            self.grads[idx] = dy;
        }
        self.ran_backward = true;
        Ok(())
    }
}
