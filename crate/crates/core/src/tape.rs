//! Tape-based reverse-mode differentiation.
//!
//! The tape records every operation during the forward pass and replays the
//! records in reverse to accumulate gradients. Values are nodes in an arena;
//! `Var` is a copyable handle. Each operation creates fresh output nodes, so
//! the recording is in SSA form and a reverse sweep visits each record once.
//!
//! Tensors are immutable once written to a node; only gradient buffers
//! accumulate. A tape is single-writer: all methods take `&mut self`.

use crate::error::{Error, Result};
use crate::kernels::{
    axis_split, broadcast_shape, conv2d_forward, for_each_broadcast, matmul_acc, ConvDims,
};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Sigmoid,
    Gelu,
    Exp,
    Relu,
}

pub(crate) enum OpRecord<T> {
    Binary { kind: BinaryKind, a: Var, b: Var, out: Var },
    Scale { a: Var, c: T, out: Var },
    AddScalar { a: Var, out: Var },
    Unary { kind: UnaryKind, a: Var, out: Var },
    Matmul { a: Var, b: Var, out: Var, m: usize, k: usize, n: usize },
    Transpose2d { a: Var, out: Var, rows: usize, cols: usize },
    Softmax { a: Var, axis: usize, out: Var },
    Layernorm { x: Var, gamma: Var, beta: Var, out: Var, mean: Vec<T>, rstd: Vec<T> },
    Conv2d { x: Var, w: Var, bias: Option<Var>, out: Var, stride: usize, pad: usize, groups: usize },
    ConvAxis3 { x: Var, w: Var, bias: Option<Var>, out: Var, fuse: bool },
    Reshape { a: Var, out: Var },
    Concat { parts: Vec<Var>, axis: usize, out: Var },
    Slice { a: Var, axis: usize, start: usize, out: Var },
    Down2Avg { x: Var, out: Var },
    Up2Nearest { x: Var, out: Var },
    Up2Bilinear { x: Var, out: Var },
    BlurAxis { x: Var, kernel: Vec<T>, axis: usize, out: Var },
    PadEdge2d { x: Var, out: Var },
    Dwt2 { x: Var, ll: Var, lh: Var, hl: Var, hh: Var },
    Idwt2 { ll: Var, lh: Var, hl: Var, hh: Var, out: Var },
    SumAll { a: Var, out: Var },
    SumAxis { a: Var, axis: usize, out: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, out: Var },
}

pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) ops: Vec<OpRecord<T>>,
    pub(crate) grads: Vec<Option<Vec<T>>>,
    // ParamId -> Var binding for this tape, plus registration order.
    param_slots: Vec<Option<Var>>,
    param_order: Vec<(ParamId, Var)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Tape<T> {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            param_slots: Vec::new(),
            param_order: Vec::new(),
        }
    }

    fn push_node(&mut self, shape: Vec<usize>, data: Vec<T>) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        let v = Var(self.nodes.len());
        self.nodes.push(Node { shape, data });
        self.grads.push(None);
        v
    }

    /// Record an input value (leaf; no backward rule).
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.push_node(t.shape().to_vec(), t.to_vec())
    }

    /// Register a parameter from a store; repeated calls return the same Var.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if id.0 < self.param_slots.len() {
            if let Some(v) = self.param_slots[id.0] {
                return v;
            }
        }
        let entry = store.entry(id);
        let v = self.push_node(entry.shape.clone(), entry.value.clone());
        if self.param_slots.len() <= id.0 {
            self.param_slots.resize(id.0 + 1, None);
        }
        self.param_slots[id.0] = Some(v);
        self.param_order.push((id, v));
        v
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("node invariant")
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&[T]> {
        let v = (*self.param_slots.get(id.0)?)?;
        self.grad(v)
    }

    /// Parameters touched by this tape, in registration order.
    pub fn touched_params(&self) -> &[(ParamId, Var)] {
        &self.param_order
    }

    // -- elementwise ---------------------------------------------------------

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let out_shape = broadcast_shape(self.shape(a), self.shape(b))?;
        let n = numel(&out_shape);
        let mut data = vec![T::ZERO; n];
        {
            let av = &self.nodes[a.0].data;
            let bv = &self.nodes[b.0].data;
            for_each_broadcast(
                &out_shape,
                &self.nodes[a.0].shape,
                &self.nodes[b.0].shape,
                |oi, ai, bi| {
                    data[oi] = match kind {
                        BinaryKind::Add => av[ai] + bv[bi],
                        BinaryKind::Sub => av[ai] - bv[bi],
                        BinaryKind::Mul => av[ai] * bv[bi],
                        BinaryKind::Div => av[ai] / bv[bi],
                    };
                },
            );
        }
        let out = self.push_node(out_shape, data);
        self.ops.push(OpRecord::Binary { kind, a, b, out });
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        let out = self.push_node(self.nodes[a.0].shape.clone(), data);
        self.ops.push(OpRecord::Scale { a, c, out });
        out
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let data: Vec<T> = self.nodes[a.0].data.iter().map(|&x| x + c).collect();
        let out = self.push_node(self.nodes[a.0].shape.clone(), data);
        self.ops.push(OpRecord::AddScalar { a, out });
        out
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| match kind {
                UnaryKind::Sigmoid => sigmoid(x),
                UnaryKind::Gelu => gelu(x),
                UnaryKind::Exp => x.min_val(T::EXP_CLAMP).exp(),
                UnaryKind::Relu => x.max_val(T::ZERO),
            })
            .collect();
        let out = self.push_node(self.nodes[a.0].shape.clone(), data);
        self.ops.push(OpRecord::Unary { kind, a, out });
        out
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, a)
    }
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Gelu, a)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Exp, a)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Relu, a)
    }

    // -- linear algebra ------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ash.len() != 2 || bsh.len() != 2 {
            return Err(Error::dim(format!(
                "matmul wants rank-2 operands, got {ash:?} and {bsh:?}"
            )));
        }
        let (m, k, k2, n) = (ash[0], ash[1], bsh[0], bsh[1]);
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions differ: {ash:?} x {bsh:?}"
            )));
        }
        let mut data = vec![T::ZERO; m * n];
        matmul_acc(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            &mut data,
            m,
            k,
            n,
        );
        let out = self.push_node(vec![m, n], data);
        self.ops.push(OpRecord::Matmul { a, b, out, m, k, n });
        Ok(out)
    }

    pub fn transpose2d(&mut self, a: Var) -> Result<Var> {
        let sh = &self.nodes[a.0].shape;
        if sh.len() != 2 {
            return Err(Error::dim(format!("transpose2d wants rank 2, got {sh:?}")));
        }
        let (rows, cols) = (sh[0], sh[1]);
        let src = &self.nodes[a.0].data;
        let mut data = vec![T::ZERO; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                data[j * rows + i] = src[i * cols + j];
            }
        }
        let out = self.push_node(vec![cols, rows], data);
        self.ops.push(OpRecord::Transpose2d { a, out, rows, cols });
        Ok(out)
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sh = self.nodes[a.0].shape.clone();
        if axis >= sh.len() {
            return Err(Error::dim(format!("softmax axis {axis} out of range for {sh:?}")));
        }
        let (outer, len, inner) = axis_split(&sh, axis);
        let src = &self.nodes[a.0].data;
        let mut data = vec![T::ZERO; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = src[base];
                for l in 1..len {
                    mx = mx.max_val(src[base + l * inner]);
                }
                let mut sum = T::ZERO;
                for l in 0..len {
                    let e = (src[base + l * inner] - mx).exp();
                    data[base + l * inner] = e;
                    sum += e;
                }
                for l in 0..len {
                    data[base + l * inner] = data[base + l * inner] / sum;
                }
            }
        }
        let out = self.push_node(sh, data);
        self.ops.push(OpRecord::Softmax { a, axis, out });
        Ok(out)
    }

    /// Layer normalization over the last axis with affine transform.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::config(format!("layernorm eps must be > 0, got {eps}")));
        }
        let sh = self.nodes[x.0].shape.clone();
        let d = *sh.last().ok_or_else(|| Error::dim("layernorm on rank-0"))?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.nodes[v.0].shape != [d] {
                return Err(Error::dim(format!(
                    "layernorm {name} shape {:?} must be [{d}] for input {sh:?}",
                    self.nodes[v.0].shape
                )));
            }
        }
        let rows = numel(&sh) / d;
        let eps = T::from_f64(eps);
        let inv_d = T::from_f64(1.0 / d as f64);
        let mut data = vec![T::ZERO; numel(&sh)];
        let mut means = vec![T::ZERO; rows];
        let mut rstds = vec![T::ZERO; rows];
        {
            let xs = &self.nodes[x.0].data;
            let gs = &self.nodes[gamma.0].data;
            let bs = &self.nodes[beta.0].data;
            for r in 0..rows {
                let row = &xs[r * d..(r + 1) * d];
                let mut mean = T::ZERO;
                for &v in row {
                    mean += v;
                }
                mean = mean * inv_d;
                let mut var = T::ZERO;
                for &v in row {
                    let c = v - mean;
                    var += c * c;
                }
                var = var * inv_d;
                let rstd = T::ONE / (var + eps).sqrt();
                means[r] = mean;
                rstds[r] = rstd;
                for j in 0..d {
                    let xhat = (row[j] - mean) * rstd;
                    data[r * d + j] = xhat * gs[j] + bs[j];
                }
            }
        }
        let out = self.push_node(sh, data);
        self.ops.push(OpRecord::Layernorm {
            x,
            gamma,
            beta,
            out,
            mean: means,
            rstd: rstds,
        });
        Ok(out)
    }

    // -- convolutions --------------------------------------------------------

    /// 2D cross-correlation on `[H,W,Cin]` with kernel `[kh,kw,Cin/groups,Cout]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let dims = ConvDims::new(
            &self.nodes[x.0].shape,
            &self.nodes[w.0].shape,
            stride,
            pad,
            groups,
        )?;
        if let Some(b) = bias {
            if self.nodes[b.0].shape != [dims.cout] {
                return Err(Error::dim(format!(
                    "conv2d bias shape {:?} must be [{}]",
                    self.nodes[b.0].shape, dims.cout
                )));
            }
        }
        let data = conv2d_forward(
            &self.nodes[x.0].data,
            &self.nodes[w.0].data,
            bias.map(|b| self.nodes[b.0].data.as_slice()),
            &dims,
        );
        let out = self.push_node(vec![dims.ho, dims.wo, dims.cout], data);
        self.ops.push(OpRecord::Conv2d {
            x,
            w,
            bias,
            out,
            stride,
            pad,
            groups,
        });
        Ok(out)
    }

    /// Per-channel convolution across the leading stack axis of `[3,H,W,C]`.
    /// Kernel `[3,C]`. `fuse` collapses the stack to `[H,W,C]`; otherwise the
    /// stack extent is preserved (same padding along the stack axis).
    pub fn conv_across_axis(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        fuse: bool,
    ) -> Result<Var> {
        let sh = self.nodes[x.0].shape.clone();
        if sh.len() != 4 || sh[0] != 3 {
            return Err(Error::dim(format!(
                "conv_across_axis wants [3,H,W,C], got {sh:?}"
            )));
        }
        let (h, wd, c) = (sh[1], sh[2], sh[3]);
        if self.nodes[w.0].shape != [3, c] {
            return Err(Error::dim(format!(
                "conv_across_axis kernel shape {:?} must be [3,{c}]",
                self.nodes[w.0].shape
            )));
        }
        if let Some(b) = bias {
            if self.nodes[b.0].shape != [c] {
                return Err(Error::dim(format!(
                    "conv_across_axis bias shape {:?} must be [{c}]",
                    self.nodes[b.0].shape
                )));
            }
        }
        let plane = h * wd * c;
        let xs = &self.nodes[x.0].data;
        let ws = &self.nodes[w.0].data;
        let data = if fuse {
            let mut out = vec![T::ZERO; plane];
            for p in 0..h * wd {
                for ch in 0..c {
                    let mut acc = match bias {
                        Some(b) => self.nodes[b.0].data[ch],
                        None => T::ZERO,
                    };
                    for t in 0..3 {
                        acc += ws[t * c + ch] * xs[t * plane + p * c + ch];
                    }
                    out[p * c + ch] = acc;
                }
            }
            out
        } else {
            let mut out = vec![T::ZERO; 3 * plane];
            for s in 0..3usize {
                for p in 0..h * wd {
                    for ch in 0..c {
                        let mut acc = match bias {
                            Some(b) => self.nodes[b.0].data[ch],
                            None => T::ZERO,
                        };
                        for (t, off) in [(0usize, -1isize), (1, 0), (2, 1)] {
                            let ss = s as isize + off;
                            if ss < 0 || ss >= 3 {
                                continue;
                            }
                            acc += ws[t * c + ch] * xs[ss as usize * plane + p * c + ch];
                        }
                        out[s * plane + p * c + ch] = acc;
                    }
                }
            }
            out
        };
        let shape = if fuse { vec![h, wd, c] } else { vec![3, h, wd, c] };
        let out = self.push_node(shape, data);
        self.ops.push(OpRecord::ConvAxis3 { x, w, bias, out, fuse });
        Ok(out)
    }

    // -- reshape family ------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.nodes[a.0].data.len() {
            return Err(Error::dim(format!(
                "reshape {:?} -> {shape:?} changes element count",
                self.nodes[a.0].shape
            )));
        }
        let data = self.nodes[a.0].data.clone();
        let out = self.push_node(shape, data);
        self.ops.push(OpRecord::Reshape { a, out });
        Ok(out)
    }

    /// `[H,W,C] -> [H*W, C]` (row-major, so this is a pure reshape).
    pub fn flatten_spatial(&mut self, a: Var) -> Result<Var> {
        let sh = self.nodes[a.0].shape.clone();
        if sh.len() != 3 {
            return Err(Error::dim(format!("flatten_spatial wants [H,W,C], got {sh:?}")));
        }
        self.reshape(a, vec![sh[0] * sh[1], sh[2]])
    }

    /// `[H*W, C] -> [H,W,C]`; inverse of `flatten_spatial`.
    pub fn unflatten_spatial(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let sh = self.nodes[a.0].shape.clone();
        if sh.len() != 2 || sh[0] != h * w {
            return Err(Error::dim(format!(
                "unflatten_spatial wants [{}x{}={}, C], got {sh:?}",
                h,
                w,
                h * w
            )));
        }
        self.reshape(a, vec![h, w, sh[1]])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat of zero parts"));
        }
        let first = self.nodes[parts[0].0].shape.clone();
        if axis >= first.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {first:?}")));
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let sh = &self.nodes[p.0].shape;
            if sh.len() != first.len()
                || sh
                    .iter()
                    .zip(first.iter())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::dim(format!(
                    "concat shapes {:?} and {first:?} differ outside axis {axis}",
                    sh
                )));
            }
            axis_total += sh[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut data = vec![T::ZERO; numel(&out_shape)];
        let lane_out = axis_total * inner;
        for o in 0..outer {
            let mut off = 0usize;
            for &p in parts {
                let len_p = self.nodes[p.0].shape[axis];
                let lane_p = len_p * inner;
                let src = &self.nodes[p.0].data[o * lane_p..(o + 1) * lane_p];
                data[o * lane_out + off..o * lane_out + off + lane_p].copy_from_slice(src);
                off += lane_p;
            }
        }
        let out = self.push_node(out_shape, data);
        self.ops.push(OpRecord::Concat {
            parts: parts.to_vec(),
            axis,
            out,
        });
        Ok(out)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let sh = self.nodes[a.0].shape.clone();
        if axis >= sh.len() || start + len > sh[axis] || len == 0 {
            return Err(Error::dim(format!(
                "slice [{start}, {start}+{len}) on axis {axis} out of range for {sh:?}"
            )));
        }
        let (outer, full, inner) = axis_split(&sh, axis);
        let mut out_shape = sh;
        out_shape[axis] = len;
        let mut data = vec![T::ZERO; outer * len * inner];
        let src = &self.nodes[a.0].data;
        for o in 0..outer {
            let src_base = (o * full + start) * inner;
            let dst_base = o * len * inner;
            data[dst_base..dst_base + len * inner]
                .copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let out = self.push_node(out_shape, data);
        self.ops.push(OpRecord::Slice { a, axis, start, out });
        Ok(out)
    }

    /// Split along `axis` into parts of the given sizes; inverse of `concat`.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        let sh = &self.nodes[a.0].shape;
        if axis >= sh.len() || total != sh[axis] {
            return Err(Error::dim(format!(
                "split sizes {sizes:?} do not cover axis {axis} of {sh:?}"
            )));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            out.push(self.slice(a, axis, start, s)?);
            start += s;
        }
        Ok(out)
    }

    // -- resampling ----------------------------------------------------------

    /// Halve both spatial extents of `[H,W,C]` by 2x2 mean pooling.
    pub fn down2_avg(&mut self, x: Var) -> Result<Var> {
        let sh = self.nodes[x.0].shape.clone();
        if sh.len() != 3 {
            return Err(Error::dim(format!("down2_avg wants [H,W,C], got {sh:?}")));
        }
        let (h, w, c) = (sh[0], sh[1], sh[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!(
                "down2_avg needs even extents, got {h}x{w}"
            )));
        }
        let quarter = T::from_f64(0.25);
        let src = &self.nodes[x.0].data;
        let mut data = vec![T::ZERO; (h / 2) * (w / 2) * c];
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                for ch in 0..c {
                    let i00 = ((2 * oy) * w + 2 * ox) * c + ch;
                    let i01 = i00 + c;
                    let i10 = i00 + w * c;
                    let i11 = i10 + c;
                    data[(oy * (w / 2) + ox) * c + ch] =
                        (src[i00] + src[i01] + src[i10] + src[i11]) * quarter;
                }
            }
        }
        let out = self.push_node(vec![h / 2, w / 2, c], data);
        self.ops.push(OpRecord::Down2Avg { x, out });
        Ok(out)
    }

    pub fn up2_nearest(&mut self, x: Var) -> Result<Var> {
        let sh = self.nodes[x.0].shape.clone();
        if sh.len() != 3 {
            return Err(Error::dim(format!("up2_nearest wants [H,W,C], got {sh:?}")));
        }
        let (h, w, c) = (sh[0], sh[1], sh[2]);
        let src = &self.nodes[x.0].data;
        let mut data = vec![T::ZERO; 4 * h * w * c];
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                let sbase = ((oy / 2) * w + ox / 2) * c;
                let dbase = (oy * 2 * w + ox) * c;
                data[dbase..dbase + c].copy_from_slice(&src[sbase..sbase + c]);
            }
        }
        let out = self.push_node(vec![2 * h, 2 * w, c], data);
        self.ops.push(OpRecord::Up2Nearest { x, out });
        Ok(out)
    }

    pub fn up2_bilinear(&mut self, x: Var) -> Result<Var> {
        let sh = self.nodes[x.0].shape.clone();
        if sh.len() != 3 {
            return Err(Error::dim(format!("up2_bilinear wants [H,W,C], got {sh:?}")));
        }
        let (h, w, c) = (sh[0], sh[1], sh[2]);
        let ty = bilinear_taps(h);
        let tx = bilinear_taps(w);
        let src = &self.nodes[x.0].data;
        let mut data = vec![T::ZERO; 4 * h * w * c];
        for oy in 0..2 * h {
            let (y0, y1, fy) = ty[oy];
            let wy0 = T::from_f64(1.0 - fy);
            let wy1 = T::from_f64(fy);
            for ox in 0..2 * w {
                let (x0, x1, fx) = tx[ox];
                let wx0 = T::from_f64(1.0 - fx);
                let wx1 = T::from_f64(fx);
                let dbase = (oy * 2 * w + ox) * c;
                let b00 = (y0 * w + x0) * c;
                let b01 = (y0 * w + x1) * c;
                let b10 = (y1 * w + x0) * c;
                let b11 = (y1 * w + x1) * c;
                for ch in 0..c {
                    data[dbase + ch] = wy0 * (wx0 * src[b00 + ch] + wx1 * src[b01 + ch])
                        + wy1 * (wx0 * src[b10 + ch] + wx1 * src[b11 + ch]);
                }
            }
        }
        let out = self.push_node(vec![2 * h, 2 * w, c], data);
        self.ops.push(OpRecord::Up2Bilinear { x, out });
        Ok(out)
    }

    /// Separable blur along a spatial axis of `[H,W,C]` with a fixed kernel
    /// and replicate padding. The kernel is not differentiated.
    pub fn blur_axis(&mut self, x: Var, kernel: &[f64], axis: usize) -> Result<Var> {
        let sh = self.nodes[x.0].shape.clone();
        if sh.len() != 3 || axis > 1 {
            return Err(Error::dim(format!(
                "blur_axis wants [H,W,C] and axis 0 or 1, got {sh:?} axis {axis}"
            )));
        }
        if kernel.len() % 2 == 0 {
            return Err(Error::config("blur kernel length must be odd"));
        }
        let k: Vec<T> = kernel.iter().map(|&v| T::from_f64(v)).collect();
        let (h, w, c) = (sh[0], sh[1], sh[2]);
        let r = kernel.len() / 2;
        let src = &self.nodes[x.0].data;
        let mut data = vec![T::ZERO; h * w * c];
        let len = if axis == 0 { h } else { w };
        let idx = |y: usize, x_: usize, ch: usize| (y * w + x_) * c + ch;
        for y in 0..h {
            for xx in 0..w {
                for ch in 0..c {
                    let mut acc = T::ZERO;
                    for (d, &kv) in k.iter().enumerate() {
                        let pos = (if axis == 0 { y } else { xx }) as isize + d as isize
                            - r as isize;
                        let pos = pos.clamp(0, len as isize - 1) as usize;
                        let s = if axis == 0 {
                            src[idx(pos, xx, ch)]
                        } else {
                            src[idx(y, pos, ch)]
                        };
                        acc += kv * s;
                    }
                    data[idx(y, xx, ch)] = acc;
                }
            }
        }
        let out = self.push_node(sh, data);
        self.ops.push(OpRecord::BlurAxis { x, kernel: k, axis, out });
        Ok(out)
    }

    /// Replicate-pad the bottom/right edges of `[H,W,C]`.
    pub fn pad_edge2d(&mut self, x: Var, pad_bottom: usize, pad_right: usize) -> Result<Var> {
        let sh = self.nodes[x.0].shape.clone();
        if sh.len() != 3 {
            return Err(Error::dim(format!("pad_edge2d wants [H,W,C], got {sh:?}")));
        }
        let (h, w, c) = (sh[0], sh[1], sh[2]);
        let (hp, wp) = (h + pad_bottom, w + pad_right);
        let src = &self.nodes[x.0].data;
        let mut data = vec![T::ZERO; hp * wp * c];
        for y in 0..hp {
            let sy = y.min(h - 1);
            for xx in 0..wp {
                let sx = xx.min(w - 1);
                let sbase = (sy * w + sx) * c;
                let dbase = (y * wp + xx) * c;
                data[dbase..dbase + c].copy_from_slice(&src[sbase..sbase + c]);
            }
        }
        let out = self.push_node(vec![hp, wp, c], data);
        self.ops.push(OpRecord::PadEdge2d { x, out });
        Ok(out)
    }

    // -- wavelet butterflies (used by the wavelet module) ----------------------

    /// One level of the orthonormal 2D Haar transform per channel.
    /// Returns (ll, lh, hl, hh), each `[H/2, W/2, C]`.
    pub fn dwt2_raw(&mut self, x: Var) -> Result<(Var, Var, Var, Var)> {
        let sh = self.nodes[x.0].shape.clone();
        if sh.len() != 3 {
            return Err(Error::dim(format!("dwt2 wants [H,W,C], got {sh:?}")));
        }
        let (h, w, c) = (sh[0], sh[1], sh[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!(
                "dwt2 needs even spatial extents, got {h}x{w}; pad the input (edge replication) first"
            )));
        }
        let half = T::from_f64(0.5);
        let (ho, wo) = (h / 2, w / 2);
        let src = &self.nodes[x.0].data;
        let mut ll = vec![T::ZERO; ho * wo * c];
        let mut lh = vec![T::ZERO; ho * wo * c];
        let mut hl = vec![T::ZERO; ho * wo * c];
        let mut hh = vec![T::ZERO; ho * wo * c];
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let a = src[((2 * oy) * w + 2 * ox) * c + ch];
                    let b = src[((2 * oy) * w + 2 * ox + 1) * c + ch];
                    let cc = src[((2 * oy + 1) * w + 2 * ox) * c + ch];
                    let d = src[((2 * oy + 1) * w + 2 * ox + 1) * c + ch];
                    let o = (oy * wo + ox) * c + ch;
                    ll[o] = (a + b + cc + d) * half;
                    lh[o] = (a + b - cc - d) * half;
                    hl[o] = (a - b + cc - d) * half;
                    hh[o] = (a - b - cc + d) * half;
                }
            }
        }
        let sub_shape = vec![ho, wo, c];
        let vll = self.push_node(sub_shape.clone(), ll);
        let vlh = self.push_node(sub_shape.clone(), lh);
        let vhl = self.push_node(sub_shape.clone(), hl);
        let vhh = self.push_node(sub_shape, hh);
        // One record drives all four outputs.
        self.ops.push(OpRecord::Dwt2 {
            x,
            ll: vll,
            lh: vlh,
            hl: vhl,
            hh: vhh,
        });
        Ok((vll, vlh, vhl, vhh))
    }

    /// Inverse of `dwt2_raw`; perfect reconstruction.
    pub fn idwt2_raw(&mut self, ll: Var, lh: Var, hl: Var, hh: Var) -> Result<Var> {
        let sh = self.nodes[ll.0].shape.clone();
        for (name, v) in [("lh", lh), ("hl", hl), ("hh", hh)] {
            if self.nodes[v.0].shape != sh {
                return Err(Error::dim(format!(
                    "idwt2 subband {name} shape {:?} differs from ll {sh:?}",
                    self.nodes[v.0].shape
                )));
            }
        }
        if sh.len() != 3 {
            return Err(Error::dim(format!("idwt2 wants [H,W,C] subbands, got {sh:?}")));
        }
        let (ho, wo, c) = (sh[0], sh[1], sh[2]);
        let (h, w) = (2 * ho, 2 * wo);
        let half = T::from_f64(0.5);
        let mut data = vec![T::ZERO; h * w * c];
        {
            let lls = &self.nodes[ll.0].data;
            let lhs = &self.nodes[lh.0].data;
            let hls = &self.nodes[hl.0].data;
            let hhs = &self.nodes[hh.0].data;
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        let o = (oy * wo + ox) * c + ch;
                        let (l, m, p, q) = (lls[o], lhs[o], hls[o], hhs[o]);
                        data[((2 * oy) * w + 2 * ox) * c + ch] = (l + m + p + q) * half;
                        data[((2 * oy) * w + 2 * ox + 1) * c + ch] = (l + m - p - q) * half;
                        data[((2 * oy + 1) * w + 2 * ox) * c + ch] = (l - m + p - q) * half;
                        data[((2 * oy + 1) * w + 2 * ox + 1) * c + ch] = (l - m - p + q) * half;
                    }
                }
            }
        }
        let out = self.push_node(vec![h, w, c], data);
        self.ops.push(OpRecord::Idwt2 { ll, lh, hl, hh, out });
        Ok(out)
    }

    // -- reductions ----------------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut acc = T::ZERO;
        for &v in &self.nodes[a.0].data {
            acc += v;
        }
        let out = self.push_node(vec![1], vec![acc]);
        self.ops.push(OpRecord::SumAll { a, out });
        out
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum out one axis.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sh = self.nodes[a.0].shape.clone();
        if axis >= sh.len() {
            return Err(Error::dim(format!("sum_axis axis {axis} out of range for {sh:?}")));
        }
        let (outer, len, inner) = axis_split(&sh, axis);
        let src = &self.nodes[a.0].data;
        let mut data = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    dst[i] += src[base + i];
                }
            }
        }
        let mut out_shape = sh;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = self.push_node(out_shape, data);
        self.ops.push(OpRecord::SumAxis { a, axis, out });
        Ok(out)
    }

    /// Mean over rows of `-log softmax(logits)[target]`; logits `[N,K]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let sh = self.nodes[logits.0].shape.clone();
        if sh.len() != 2 {
            return Err(Error::dim(format!("cross_entropy wants [N,K] logits, got {sh:?}")));
        }
        let (n, k) = (sh[0], sh[1]);
        if targets.len() != n {
            return Err(Error::dim(format!(
                "cross_entropy got {} targets for {n} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::dim(format!("target class {bad} out of range 0..{k}")));
        }
        let src = &self.nodes[logits.0].data;
        let mut acc = T::ZERO;
        for (r, &t) in targets.iter().enumerate() {
            let row = &src[r * k..(r + 1) * k];
            let mut mx = row[0];
            for &v in row.iter() {
                mx = mx.max_val(v);
            }
            let mut sum = T::ZERO;
            for &v in row.iter() {
                sum += (v - mx).exp();
            }
            acc += mx + sum.ln() - row[t];
        }
        let mean = acc * T::from_f64(1.0 / n as f64);
        let out = self.push_node(vec![1], vec![mean]);
        self.ops.push(OpRecord::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            out,
        });
        Ok(out)
    }
}

/// Output-pixel sampling taps for 2x bilinear upsampling of an axis of
/// extent `n` (half-pixel centers, clamped at the borders).
pub(crate) fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let s = src.clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let f = s - i0 as f64;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, f)
        })
        .collect()
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::ONE + u.tanh())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a3 = T::from_f64(3.0 * GELU_A);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::ONE - t * t;
    half * (T::ONE + t) + half * x * sech2 * c * (T::ONE + a3 * x * x)
}
