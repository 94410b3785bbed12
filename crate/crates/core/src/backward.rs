//! Reverse sweep over the tape: vector-Jacobian products for every record.

use crate::error::{Error, Result};
use crate::kernels::{
    axis_split, conv2d_backward, for_each_broadcast, matmul_grad_a, matmul_grad_b, ConvDims,
};
use crate::real::Real;
use crate::tape::{bilinear_taps, gelu_grad, BinaryKind, Node, OpRecord, Tape, UnaryKind, Var};

impl<T: Real> Tape<T> {
    /// Run the reverse sweep from a scalar output. Each recorded operation is
    /// visited exactly once, in reverse execution order; the seed gradient of
    /// the output with respect to itself is 1.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.nodes[out.0].data.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar output, got shape {:?}",
                self.nodes[out.0].shape
            )));
        }
        self.grads[out.0] = Some(vec![T::ONE]);
        let Tape { nodes, ops, grads, .. } = self;
        // Records are SSA: an output is written once and all its consumers sit
        // later on the tape, so by the time its producer is visited here the
        // output gradient is final.
        for op in ops.iter().rev() {
            step(nodes, grads, op);
        }
        Ok(())
    }
}

fn out_grad<T: Real>(grads: &[Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
    grads[v.0].clone()
}

/// Take the gradient buffer of `v` for accumulation (zeros if untouched).
/// Callers must `put` it back; take/put keeps aliased operands correct.
fn take<T: Real>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Vec<T> {
    grads[v.0]
        .take()
        .unwrap_or_else(|| vec![T::ZERO; nodes[v.0].data.len()])
}

fn put<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, buf: Vec<T>) {
    grads[v.0] = Some(buf);
}

fn step<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], op: &OpRecord<T>) {
    match op {
        OpRecord::Binary { kind, a, b, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let out_shape = &nodes[out.0].shape;
            let (a_shape, b_shape) = (&nodes[a.0].shape, &nodes[b.0].shape);
            let (av, bv) = (&nodes[a.0].data, &nodes[b.0].data);
            let mut da = take(grads, nodes, *a);
            match kind {
                BinaryKind::Add | BinaryKind::Sub => {
                    for_each_broadcast(out_shape, a_shape, b_shape, |oi, ai, _| {
                        da[ai] += dout[oi];
                    });
                }
                BinaryKind::Mul => {
                    for_each_broadcast(out_shape, a_shape, b_shape, |oi, ai, bi| {
                        da[ai] += dout[oi] * bv[bi];
                    });
                }
                BinaryKind::Div => {
                    for_each_broadcast(out_shape, a_shape, b_shape, |oi, ai, bi| {
                        da[ai] += dout[oi] / bv[bi];
                    });
                }
            }
            put(grads, *a, da);
            let mut db = take(grads, nodes, *b);
            match kind {
                BinaryKind::Add => {
                    for_each_broadcast(out_shape, a_shape, b_shape, |oi, _, bi| {
                        db[bi] += dout[oi];
                    });
                }
                BinaryKind::Sub => {
                    for_each_broadcast(out_shape, a_shape, b_shape, |oi, _, bi| {
                        db[bi] -= dout[oi];
                    });
                }
                BinaryKind::Mul => {
                    for_each_broadcast(out_shape, a_shape, b_shape, |oi, ai, bi| {
                        db[bi] += dout[oi] * av[ai];
                    });
                }
                BinaryKind::Div => {
                    for_each_broadcast(out_shape, a_shape, b_shape, |oi, ai, bi| {
                        let inv = T::ONE / bv[bi];
                        db[bi] -= dout[oi] * av[ai] * inv * inv;
                    });
                }
            }
            put(grads, *b, db);
        }
        OpRecord::Scale { a, c, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let mut da = take(grads, nodes, *a);
            for (d, g) in da.iter_mut().zip(dout.iter()) {
                *d += *c * *g;
            }
            put(grads, *a, da);
        }
        OpRecord::AddScalar { a, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let mut da = take(grads, nodes, *a);
            for (d, g) in da.iter_mut().zip(dout.iter()) {
                *d += *g;
            }
            put(grads, *a, da);
        }
        OpRecord::Unary { kind, a, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let xs = &nodes[a.0].data;
            let ys = &nodes[out.0].data;
            let mut da = take(grads, nodes, *a);
            match kind {
                UnaryKind::Sigmoid => {
                    for i in 0..da.len() {
                        da[i] += dout[i] * ys[i] * (T::ONE - ys[i]);
                    }
                }
                UnaryKind::Gelu => {
                    for i in 0..da.len() {
                        da[i] += dout[i] * gelu_grad(xs[i]);
                    }
                }
                UnaryKind::Exp => {
                    for i in 0..da.len() {
                        if xs[i] <= T::EXP_CLAMP {
                            da[i] += dout[i] * ys[i];
                        }
                    }
                }
                UnaryKind::Relu => {
                    // Subgradient at 0 is 0 by convention.
                    for i in 0..da.len() {
                        if xs[i] > T::ZERO {
                            da[i] += dout[i];
                        }
                    }
                }
            }
            put(grads, *a, da);
        }
        OpRecord::Matmul { a, b, out, m, k, n } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let (m, k, n) = (*m, *k, *n);
            let mut da = take(grads, nodes, *a);
            matmul_grad_a(&dout, &nodes[b.0].data, &mut da, m, k, n);
            put(grads, *a, da);
            let mut db = take(grads, nodes, *b);
            matmul_grad_b(&dout, &nodes[a.0].data, &mut db, m, k, n);
            put(grads, *b, db);
        }
        OpRecord::Transpose2d { a, out, rows, cols } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let mut da = take(grads, nodes, *a);
            for i in 0..*rows {
                for j in 0..*cols {
                    da[i * cols + j] += dout[j * rows + i];
                }
            }
            put(grads, *a, da);
        }
        OpRecord::Softmax { a, axis, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let (outer, len, inner) = axis_split(&nodes[out.0].shape, *axis);
            let ys = &nodes[out.0].data;
            let mut da = take(grads, nodes, *a);
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::ZERO;
                    for l in 0..len {
                        let idx = base + l * inner;
                        dot += dout[idx] * ys[idx];
                    }
                    for l in 0..len {
                        let idx = base + l * inner;
                        da[idx] += ys[idx] * (dout[idx] - dot);
                    }
                }
            }
            put(grads, *a, da);
        }
        OpRecord::Layernorm { x, gamma, beta, out, mean, rstd } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let d = *nodes[x.0].shape.last().unwrap();
            let rows = nodes[x.0].data.len() / d;
            let inv_d = T::from_f64(1.0 / d as f64);
            let xs = &nodes[x.0].data;
            let gs = &nodes[gamma.0].data;
            let mut dg = take(grads, nodes, *gamma);
            let mut db = take(grads, nodes, *beta);
            for r in 0..rows {
                for j in 0..d {
                    let xhat = (xs[r * d + j] - mean[r]) * rstd[r];
                    dg[j] += dout[r * d + j] * xhat;
                    db[j] += dout[r * d + j];
                }
            }
            put(grads, *gamma, dg);
            put(grads, *beta, db);
            let mut dx = take(grads, nodes, *x);
            for r in 0..rows {
                let mut sum1 = T::ZERO;
                let mut sum2 = T::ZERO;
                for j in 0..d {
                    let xhat = (xs[r * d + j] - mean[r]) * rstd[r];
                    let dxhat = dout[r * d + j] * gs[j];
                    sum1 += dxhat;
                    sum2 += dxhat * xhat;
                }
                sum1 = sum1 * inv_d;
                sum2 = sum2 * inv_d;
                for j in 0..d {
                    let xhat = (xs[r * d + j] - mean[r]) * rstd[r];
                    let dxhat = dout[r * d + j] * gs[j];
                    dx[r * d + j] += rstd[r] * (dxhat - sum1 - xhat * sum2);
                }
            }
            put(grads, *x, dx);
        }
        OpRecord::Conv2d { x, w, bias, out, stride, pad, groups } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let dims = ConvDims::new(
                &nodes[x.0].shape,
                &nodes[w.0].shape,
                *stride,
                *pad,
                *groups,
            )
            .expect("dims validated at record time");
            let mut dx = take(grads, nodes, *x);
            let mut dw = take(grads, nodes, *w);
            let mut dbias = bias.map(|b| take(grads, nodes, b));
            conv2d_backward(
                &dout,
                &nodes[x.0].data,
                &nodes[w.0].data,
                &dims,
                &mut dx,
                &mut dw,
                dbias.as_deref_mut(),
            );
            put(grads, *x, dx);
            put(grads, *w, dw);
            if let (Some(b), Some(dbv)) = (bias, dbias) {
                put(grads, *b, dbv);
            }
        }
        OpRecord::ConvAxis3 { x, w, bias, out, fuse } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let sh = &nodes[x.0].shape;
            let (h, wd, c) = (sh[1], sh[2], sh[3]);
            let plane = h * wd * c;
            let xs = &nodes[x.0].data;
            let ws = &nodes[w.0].data;
            let mut dx = take(grads, nodes, *x);
            let mut dw = take(grads, nodes, *w);
            let mut db = bias.map(|b| take(grads, nodes, b));
            if *fuse {
                for p in 0..h * wd {
                    for ch in 0..c {
                        let g = dout[p * c + ch];
                        if let Some(db) = db.as_mut() {
                            db[ch] += g;
                        }
                        for t in 0..3 {
                            dx[t * plane + p * c + ch] += ws[t * c + ch] * g;
                            dw[t * c + ch] += xs[t * plane + p * c + ch] * g;
                        }
                    }
                }
            } else {
                for s in 0..3usize {
                    for p in 0..h * wd {
                        for ch in 0..c {
                            let g = dout[s * plane + p * c + ch];
                            if let Some(db) = db.as_mut() {
                                db[ch] += g;
                            }
                            for (t, off) in [(0usize, -1isize), (1, 0), (2, 1)] {
                                let ss = s as isize + off;
                                if ss < 0 || ss >= 3 {
                                    continue;
                                }
                                let xi = ss as usize * plane + p * c + ch;
                                dx[xi] += ws[t * c + ch] * g;
                                dw[t * c + ch] += xs[xi] * g;
                            }
                        }
                    }
                }
            }
            put(grads, *x, dx);
            put(grads, *w, dw);
            if let (Some(b), Some(dbv)) = (bias, db) {
                put(grads, *b, dbv);
            }
        }
        OpRecord::Reshape { a, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let mut da = take(grads, nodes, *a);
            for (d, g) in da.iter_mut().zip(dout.iter()) {
                *d += *g;
            }
            put(grads, *a, da);
        }
        OpRecord::Concat { parts, axis, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let (outer, total, inner) = axis_split(&nodes[out.0].shape, *axis);
            let mut off = 0usize;
            for &p in parts {
                let len_p = nodes[p.0].shape[*axis];
                let mut dp = take(grads, nodes, p);
                for o in 0..outer {
                    let src = (o * total + off) * inner;
                    let dst = o * len_p * inner;
                    for i in 0..len_p * inner {
                        dp[dst + i] += dout[src + i];
                    }
                }
                put(grads, p, dp);
                off += len_p;
            }
        }
        OpRecord::Slice { a, axis, start, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let len = nodes[out.0].shape[*axis];
            let (outer, full, inner) = axis_split(&nodes[a.0].shape, *axis);
            let mut da = take(grads, nodes, *a);
            for o in 0..outer {
                let dst = (o * full + start) * inner;
                let src = o * len * inner;
                for i in 0..len * inner {
                    da[dst + i] += dout[src + i];
                }
            }
            put(grads, *a, da);
        }
        OpRecord::Down2Avg { x, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let sh = &nodes[x.0].shape;
            let (h, w, c) = (sh[0], sh[1], sh[2]);
            let quarter = T::from_f64(0.25);
            let mut dx = take(grads, nodes, *x);
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    for ch in 0..c {
                        let g = dout[(oy * (w / 2) + ox) * c + ch] * quarter;
                        let i00 = ((2 * oy) * w + 2 * ox) * c + ch;
                        dx[i00] += g;
                        dx[i00 + c] += g;
                        dx[i00 + w * c] += g;
                        dx[i00 + w * c + c] += g;
                    }
                }
            }
            put(grads, *x, dx);
        }
        OpRecord::Up2Nearest { x, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let sh = &nodes[x.0].shape;
            let (h, w, c) = (sh[0], sh[1], sh[2]);
            let mut dx = take(grads, nodes, *x);
            for oy in 0..2 * h {
                for ox in 0..2 * w {
                    let sbase = ((oy / 2) * w + ox / 2) * c;
                    let dbase = (oy * 2 * w + ox) * c;
                    for ch in 0..c {
                        dx[sbase + ch] += dout[dbase + ch];
                    }
                }
            }
            put(grads, *x, dx);
        }
        OpRecord::Up2Bilinear { x, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let sh = &nodes[x.0].shape;
            let (h, w, c) = (sh[0], sh[1], sh[2]);
            let ty = bilinear_taps(h);
            let tx = bilinear_taps(w);
            let mut dx = take(grads, nodes, *x);
            for oy in 0..2 * h {
                let (y0, y1, fy) = ty[oy];
                let wy0 = T::from_f64(1.0 - fy);
                let wy1 = T::from_f64(fy);
                for ox in 0..2 * w {
                    let (x0, x1, fx) = tx[ox];
                    let wx0 = T::from_f64(1.0 - fx);
                    let wx1 = T::from_f64(fx);
                    let dbase = (oy * 2 * w + ox) * c;
                    for ch in 0..c {
                        let g = dout[dbase + ch];
                        dx[(y0 * w + x0) * c + ch] += wy0 * wx0 * g;
                        dx[(y0 * w + x1) * c + ch] += wy0 * wx1 * g;
                        dx[(y1 * w + x0) * c + ch] += wy1 * wx0 * g;
                        dx[(y1 * w + x1) * c + ch] += wy1 * wx1 * g;
                    }
                }
            }
            put(grads, *x, dx);
        }
        OpRecord::BlurAxis { x, kernel, axis, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let sh = &nodes[x.0].shape;
            let (h, w, c) = (sh[0], sh[1], sh[2]);
            let r = kernel.len() / 2;
            let len = if *axis == 0 { h } else { w };
            let mut dx = take(grads, nodes, *x);
            let idx = |y: usize, x_: usize, ch: usize| (y * w + x_) * c + ch;
            for y in 0..h {
                for xx in 0..w {
                    for ch in 0..c {
                        let g = dout[idx(y, xx, ch)];
                        for (d, &kv) in kernel.iter().enumerate() {
                            let pos = (if *axis == 0 { y } else { xx }) as isize + d as isize
                                - r as isize;
                            let pos = pos.clamp(0, len as isize - 1) as usize;
                            let t = if *axis == 0 {
                                idx(pos, xx, ch)
                            } else {
                                idx(y, pos, ch)
                            };
                            dx[t] += kv * g;
                        }
                    }
                }
            }
            put(grads, *x, dx);
        }
        OpRecord::PadEdge2d { x, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let xsh = &nodes[x.0].shape;
            let osh = &nodes[out.0].shape;
            let (h, w, c) = (xsh[0], xsh[1], xsh[2]);
            let (hp, wp) = (osh[0], osh[1]);
            let mut dx = take(grads, nodes, *x);
            for y in 0..hp {
                let sy = y.min(h - 1);
                for xx in 0..wp {
                    let sx = xx.min(w - 1);
                    for ch in 0..c {
                        dx[(sy * w + sx) * c + ch] += dout[(y * wp + xx) * c + ch];
                    }
                }
            }
            put(grads, *x, dx);
        }
        OpRecord::Dwt2 { x, ll, lh, hl, hh } => {
            let dll = out_grad(grads, *ll);
            let dlh = out_grad(grads, *lh);
            let dhl = out_grad(grads, *hl);
            let dhh = out_grad(grads, *hh);
            if dll.is_none() && dlh.is_none() && dhl.is_none() && dhh.is_none() {
                return;
            }
            let n = nodes[ll.0].data.len();
            let zero = vec![T::ZERO; n];
            let dll = dll.unwrap_or_else(|| zero.clone());
            let dlh = dlh.unwrap_or_else(|| zero.clone());
            let dhl = dhl.unwrap_or_else(|| zero.clone());
            let dhh = dhh.unwrap_or(zero);
            let sh = &nodes[x.0].shape;
            let (h, w, c) = (sh[0], sh[1], sh[2]);
            let (ho, wo) = (h / 2, w / 2);
            let half = T::from_f64(0.5);
            let mut dx = take(grads, nodes, *x);
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        let o = (oy * wo + ox) * c + ch;
                        let (l, m, p, q) = (dll[o], dlh[o], dhl[o], dhh[o]);
                        dx[((2 * oy) * w + 2 * ox) * c + ch] += (l + m + p + q) * half;
                        dx[((2 * oy) * w + 2 * ox + 1) * c + ch] += (l + m - p - q) * half;
                        dx[((2 * oy + 1) * w + 2 * ox) * c + ch] += (l - m + p - q) * half;
                        dx[((2 * oy + 1) * w + 2 * ox + 1) * c + ch] += (l - m - p + q) * half;
                    }
                }
            }
            put(grads, *x, dx);
        }
        OpRecord::Idwt2 { ll, lh, hl, hh, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let sh = &nodes[out.0].shape;
            let (h, w, c) = (sh[0], sh[1], sh[2]);
            let (ho, wo) = (h / 2, w / 2);
            let half = T::from_f64(0.5);
            for (band, v) in [(0usize, *ll), (1, *lh), (2, *hl), (3, *hh)] {
                let mut db = take(grads, nodes, v);
                for oy in 0..ho {
                    for ox in 0..wo {
                        for ch in 0..c {
                            let a = dout[((2 * oy) * w + 2 * ox) * c + ch];
                            let b = dout[((2 * oy) * w + 2 * ox + 1) * c + ch];
                            let cc = dout[((2 * oy + 1) * w + 2 * ox) * c + ch];
                            let d = dout[((2 * oy + 1) * w + 2 * ox + 1) * c + ch];
                            let g = match band {
                                0 => a + b + cc + d,
                                1 => a + b - cc - d,
                                2 => a - b + cc - d,
                                _ => a - b - cc + d,
                            };
                            db[(oy * wo + ox) * c + ch] += g * half;
                        }
                    }
                }
                put(grads, v, db);
            }
        }
        OpRecord::SumAll { a, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let g = dout[0];
            let mut da = take(grads, nodes, *a);
            for d in da.iter_mut() {
                *d += g;
            }
            put(grads, *a, da);
        }
        OpRecord::SumAxis { a, axis, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let (outer, len, inner) = axis_split(&nodes[a.0].shape, *axis);
            let mut da = take(grads, nodes, *a);
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        da[base + i] += dout[o * inner + i];
                    }
                }
            }
            put(grads, *a, da);
        }
        OpRecord::CrossEntropy { logits, targets, out } => {
            let Some(dout) = out_grad(grads, *out) else { return };
            let g = dout[0];
            let sh = &nodes[logits.0].shape;
            let (n, k) = (sh[0], sh[1]);
            let xs = &nodes[logits.0].data;
            let inv_n = T::from_f64(1.0 / n as f64);
            let mut dl = take(grads, nodes, *logits);
            for (r, &t) in targets.iter().enumerate() {
                let row = &xs[r * k..(r + 1) * k];
                let mut mx = row[0];
                for &v in row.iter() {
                    mx = mx.max_val(v);
                }
                let mut sum = T::ZERO;
                for &v in row.iter() {
                    sum += (v - mx).exp();
                }
                for j in 0..k {
                    let p = (row[j] - mx).exp() / sum;
                    let delta = if j == t { T::ONE } else { T::ZERO };
                    dl[r * k + j] += g * (p - delta) * inv_n;
                }
            }
            put(grads, *logits, dl);
        }
    }
}
