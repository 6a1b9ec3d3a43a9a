//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order for the adjoint pass.

use super::mat::{gemm, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    AddRow { a: Var, bias: Var },
    Scale { a: Var, s: f64 },
    LeakyRelu { a: Var, slope: f64 },
    SoftmaxRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols { a: Var, start: usize },
    Reshape(Var),
    ColMax { a: Var, argmax: Vec<usize> },
    BroadcastRows(Var),
    LayerNorm { a: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    EdgeMax { p: Var, q: Var, bias: Var, slope: f64, argmax: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    /// A leaf whose gradient is reported under parameter slot `id`.
    pub fn param(&mut self, id: usize, m: &Mat) -> Var {
        self.push(m.clone(), Op::Param(id))
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let m = if ta { av.cols() } else { av.rows() };
        let n = if tb { bv.rows() } else { bv.cols() };
        let mut out = Mat::zeros(m, n);
        gemm(1.0, av, ta, bv, tb, 0.0, &mut out);
        self.push(out, Op::MatMul { a, b, ta, tb })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        let bv = self.value(b);
        assert_eq!(out.shape(), bv.shape());
        for (o, v) in out.data_mut().iter_mut().zip(bv.data()) {
            *o -= v;
        }
        self.push(out, Op::Sub(a, b))
    }

    /// Adds a `1 × C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((1, out.cols()), b.shape());
        for r in 0..out.rows() {
            for (o, v) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += v;
            }
        }
        self.push(out, Op::AddRow { a, bias })
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.scale_in_place(s);
        self.push(out, Op::Scale { a, s })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut()
            .iter_mut()
            .for_each(|v| *v = if *v > 0.0 { *v } else { slope * *v });
        self.push(out, Op::LeakyRelu { a, slope })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.rows(), rows);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a);
        assert!(start + width <= v.cols());
        let mut out = Mat::zeros(v.rows(), width);
        for r in 0..v.rows() {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols { a, start })
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let data = self.value(a).data().to_vec();
        self.push(Mat::from_vec(rows, cols, data), Op::Reshape(a))
    }

    /// Column-wise maximum over rows, `1 × C`. Ties go to the lowest row.
    pub fn col_max(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut out = Mat::filled(1, v.cols(), f64::NEG_INFINITY);
        let mut argmax = vec![0; v.cols()];
        for r in 0..v.rows() {
            for (c, &x) in v.row(r).iter().enumerate() {
                if x > out.get(0, c) {
                    out.set(0, c, x);
                    argmax[c] = r;
                }
            }
        }
        self.push(out, Op::ColMax { a, argmax })
    }

    /// Repeats a `1 × C` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.rows(), 1);
        let mut out = Mat::zeros(n, v.cols());
        for r in 0..n {
            out.row_mut(r).copy_from_slice(v.data());
        }
        self.push(out, Op::BroadcastRows(a))
    }

    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (g, b) = (self.value(gamma), self.value(beta));
        let (rows, cols) = x.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut out = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * g.get(0, c) + b.get(0, c));
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                a,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Edge convolution with max aggregation.
    ///
    /// `out[i, c] = lrelu(p[i, c] + bias[c] + max_{j ∈ nbrs(i)} q[j, c])`, which
    /// equals the max over neighbors of `lrelu(p_i + q_j + bias)` because the
    /// activation is monotone. `neighbors` is row-major `rows × k`.
    pub fn edge_max(
        &mut self,
        p: Var,
        q: Var,
        bias: Var,
        neighbors: &[usize],
        k: usize,
        slope: f64,
    ) -> Var {
        let (pv, qv, bv) = (self.value(p), self.value(q), self.value(bias));
        let (rows, cols) = pv.shape();
        assert_eq!(neighbors.len(), rows * k);
        assert_eq!(qv.cols(), cols);
        let mut out = Mat::zeros(rows, cols);
        let mut argmax = vec![0usize; rows * cols];
        for i in 0..rows {
            let nb = &neighbors[i * k..(i + 1) * k];
            let orow = out.row_mut(i);
            let arow = &mut argmax[i * cols..(i + 1) * cols];
            orow.copy_from_slice(qv.row(nb[0]));
            arow.fill(nb[0]);
            for &j in &nb[1..] {
                for (c, &v) in qv.row(j).iter().enumerate() {
                    if v > orow[c] {
                        orow[c] = v;
                        arow[c] = j;
                    }
                }
            }
            for (c, o) in orow.iter_mut().enumerate() {
                let z = *o + pv.get(i, c) + bv.get(0, c);
                *o = if z > 0.0 { z } else { slope * z };
            }
        }
        self.push(
            out,
            Op::EdgeMax {
                p,
                q,
                bias,
                slope,
                argmax,
            },
        )
    }

    /// Reverse pass from `output` seeded with `seed` (same shape as the output).
    pub fn backward(&self, output: Var, seed: Mat) -> Gradients {
        assert_eq!(seed.shape(), self.value(output).shape(), "seed shape");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[idx] = Some(gy);
                    continue;
                }
                Op::MatMul { a, b, ta, tb } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = Mat::zeros(av.rows(), av.cols());
                    if *ta {
                        gemm(1.0, bv, *tb, &gy, true, 0.0, &mut ga);
                    } else {
                        gemm(1.0, &gy, false, bv, !*tb, 0.0, &mut ga);
                    }
                    let mut gb = Mat::zeros(bv.rows(), bv.cols());
                    if *tb {
                        gemm(1.0, &gy, true, av, *ta, 0.0, &mut gb);
                    } else {
                        gemm(1.0, av, !*ta, &gy, false, 0.0, &mut gb);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, gy.clone());
                    acc(&mut grads, *b, gy);
                }
                Op::Sub(a, b) => {
                    let mut neg = gy.clone();
                    neg.scale_in_place(-1.0);
                    acc(&mut grads, *a, gy);
                    acc(&mut grads, *b, neg);
                }
                Op::AddRow { a, bias } => {
                    acc(&mut grads, *bias, col_sums(&gy));
                    acc(&mut grads, *a, gy);
                }
                Op::Scale { a, s } => {
                    let mut g = gy;
                    g.scale_in_place(*s);
                    acc(&mut grads, *a, g);
                }
                Op::LeakyRelu { a, slope } => {
                    let mut g = gy;
                    for (gv, y) in g.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *gv *= slope;
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut g = gy;
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row_mut(r);
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for (gv, yv) in gr.iter_mut().zip(yr) {
                            *gv = yv * (*gv - dot);
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Transpose(a) => acc(&mut grads, *a, gy.transpose()),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut g = Mat::zeros(gy.rows(), w);
                        for r in 0..gy.rows() {
                            g.row_mut(r).copy_from_slice(&gy.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, *p, g);
                    }
                }
                Op::SliceCols { a, start } => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut g = Mat::zeros(rows, cols);
                    let w = gy.cols();
                    for r in 0..rows {
                        g.row_mut(r)[*start..*start + w].copy_from_slice(gy.row(r));
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Reshape(a) => {
                    let (rows, cols) = self.value(*a).shape();
                    acc(&mut grads, *a, Mat::from_vec(rows, cols, gy.into_data()));
                }
                Op::ColMax { a, argmax } => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut g = Mat::zeros(rows, cols);
                    for (c, &r) in argmax.iter().enumerate() {
                        g.set(r, c, gy.get(0, c));
                    }
                    acc(&mut grads, *a, g);
                }
                Op::BroadcastRows(a) => acc(&mut grads, *a, col_sums(&gy)),
                Op::LayerNorm {
                    a,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let (rows, cols) = xhat.shape();
                    let mut ggamma = Mat::zeros(1, cols);
                    let mut gx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let (gr, hr) = (gy.row(r), xhat.row(r));
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..cols {
                            let d = gr[c] * gv.get(0, c);
                            mean_d += d;
                            mean_dh += d * hr[c];
                            ggamma.data_mut()[c] += gr[c] * hr[c];
                        }
                        mean_d /= cols as f64;
                        mean_dh /= cols as f64;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let d = gr[c] * gv.get(0, c);
                            out[c] = inv_std[r] * (d - mean_d - hr[c] * mean_dh);
                        }
                    }
                    acc(&mut grads, *beta, col_sums(&gy));
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *a, gx);
                }
                Op::EdgeMax {
                    p,
                    q,
                    bias,
                    slope,
                    argmax,
                } => {
                    let (rows, cols) = node.value.shape();
                    let mut g = gy;
                    for (gv, y) in g.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *gv *= slope;
                        }
                    }
                    let qrows = self.value(*q).rows();
                    let mut gq = Mat::zeros(qrows, cols);
                    for i in 0..rows {
                        for c in 0..cols {
                            let j = argmax[i * cols + c];
                            gq.data_mut()[j * cols + c] += g.get(i, c);
                        }
                    }
                    acc(&mut grads, *bias, col_sums(&g));
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *p, g);
                }
            }
        }
        Gradients { grads }
    }

    /// Parameter slot ids and the node carrying each.
    pub fn param_nodes(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((id, Var(i))),
            _ => None,
        })
    }
}

fn col_sums(m: &Mat) -> Mat {
    let mut out = Mat::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

/// Adjoints of every node reached by a backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Adds parameter gradients into `slots` (indexed by parameter id).
    pub fn accumulate_params(&self, graph: &Graph, slots: &mut [Mat]) {
        for (id, var) in graph.param_nodes() {
            if let Some(g) = self.wrt(var) {
                slots[id].add_assign(g);
            }
        }
    }
}
