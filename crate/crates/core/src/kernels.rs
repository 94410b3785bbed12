//! Shared index math and inner loops for tape operations.
//!
//! These are plain functions over slices; the tape calls them for both the
//! forward pass and the vector-Jacobian products. Oracles used by tests and
//! by the benchmark sanity gate deliberately do NOT call into this module.

use crate::error::{Error, Result};
use crate::real::Real;

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Trailing-dimension broadcast result shape, or a dimension error naming both.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::dim(format!(
                "shapes {a:?} and {b:?} are not broadcast-compatible"
            )));
        };
    }
    Ok(out)
}

/// Per-output-dimension element strides of an operand under broadcasting
/// (0 where the operand is broadcast along that output dimension).
fn broadcast_strides(operand: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - operand.len();
    let op_strides = strides(operand);
    let mut s = vec![0usize; rank];
    for i in 0..rank {
        if i >= offset && operand[i - offset] != 1 {
            s[i] = op_strides[i - offset];
        }
    }
    s
}

/// Visit every output index together with the matching operand indices.
/// Uses an odometer over output coordinates, so no per-element div/mod.
pub fn for_each_broadcast(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out_shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = out_shape.len();
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let mut coord = vec![0usize; rank];
    let mut ai = 0usize;
    let mut bi = 0usize;
    for oi in 0..n {
        f(oi, ai, bi);
        for d in (0..rank).rev() {
            coord[d] += 1;
            ai += sa[d];
            bi += sb[d];
            if coord[d] < out_shape[d] {
                break;
            }
            coord[d] = 0;
            ai -= sa[d] * out_shape[d];
            bi -= sb[d] * out_shape[d];
        }
    }
}

/// Decompose a shape around `axis` into (outer, len, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

// ---------------------------------------------------------------------------
// matmul

/// c[m,n] += a[m,k] * b[k,n]
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                crow[j] += aik * brow[j];
            }
        }
    }
}

/// da[m,k] += dc[m,n] * b[k,n]^T
pub fn matmul_grad_a<T: Real>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dcrow = &dc[i * n..(i + 1) * n];
        let darow = &mut da[i * k..(i + 1) * k];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = T::ZERO;
            for j in 0..n {
                acc += dcrow[j] * brow[j];
            }
            darow[kk] += acc;
        }
    }
}

/// db[k,n] += a[m,k]^T * dc[m,n]
pub fn matmul_grad_b<T: Real>(dc: &[T], a: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let dcrow = &dc[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let dbrow = &mut db[kk * n..(kk + 1) * n];
            for j in 0..n {
                dbrow[j] += aik * dcrow[j];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// conv2d: x[H,W,Cin], w[kh,kw,Cin/groups,Cout], zero padding, cross-correlation

pub struct ConvDims {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    pub fn new(
        x_shape: &[usize],
        w_shape: &[usize],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<ConvDims> {
        if x_shape.len() != 3 || w_shape.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d wants x[H,W,Cin] and w[kh,kw,Cin/groups,Cout], got {x_shape:?} and {w_shape:?}"
            )));
        }
        let (h, w, cin) = (x_shape[0], x_shape[1], x_shape[2]);
        let (kh, kw, wcin, cout) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::dim(format!(
                "groups {groups} must divide Cin {cin} and Cout {cout}"
            )));
        }
        if wcin != cin / groups {
            return Err(Error::dim(format!(
                "kernel expects {wcin} input channels per group, input has {} ({} channels, {} groups)",
                cin / groups,
                cin,
                groups
            )));
        }
        if stride == 0 {
            return Err(Error::dim("stride must be positive"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::dim(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(ConvDims {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            pad,
            groups,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }
}

pub fn conv2d_forward<T: Real>(x: &[T], w: &[T], bias: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let cing = d.cin / d.groups;
    let coutg = d.cout / d.groups;
    let mut out = vec![T::ZERO; d.ho * d.wo * d.cout];
    for oy in 0..d.ho {
        for ox in 0..d.wo {
            let orow = (oy * d.wo + ox) * d.cout;
            for oc in 0..d.cout {
                let g = oc / coutg;
                let mut acc = match bias {
                    Some(b) => b[oc],
                    None => T::ZERO,
                };
                for ky in 0..d.kh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..d.kw {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        let xbase = (iy as usize * d.w + ix as usize) * d.cin + g * cing;
                        let wbase = ((ky * d.kw + kx) * cing) * d.cout + oc;
                        for ic in 0..cing {
                            acc += x[xbase + ic] * w[wbase + ic * d.cout];
                        }
                    }
                }
                out[orow + oc] = acc;
            }
        }
    }
    out
}

pub fn conv2d_backward<T: Real>(
    dout: &[T],
    x: &[T],
    w: &[T],
    d: &ConvDims,
    dx: &mut [T],
    dw: &mut [T],
    mut dbias: Option<&mut [T]>,
) {
    let cing = d.cin / d.groups;
    let coutg = d.cout / d.groups;
    for oy in 0..d.ho {
        for ox in 0..d.wo {
            let orow = (oy * d.wo + ox) * d.cout;
            for oc in 0..d.cout {
                let g = oc / coutg;
                let go = dout[orow + oc];
                if let Some(db) = dbias.as_deref_mut() {
                    db[oc] += go;
                }
                for ky in 0..d.kh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..d.kw {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        let xbase = (iy as usize * d.w + ix as usize) * d.cin + g * cing;
                        let wbase = ((ky * d.kw + kx) * cing) * d.cout + oc;
                        for ic in 0..cing {
                            let wi = wbase + ic * d.cout;
                            let xi = xbase + ic;
                            dx[xi] += go * w[wi];
                            dw[wi] += go * x[xi];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes_follow_trailing_rules() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shape(&[4, 1], &[1, 5]).unwrap(), vec![4, 5]);
        assert_eq!(broadcast_shape(&[2, 3, 4], &[2, 3, 4]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shape(&[2, 3], &[4]).is_err());
    }

    #[test]
    fn broadcast_walk_matches_manual_tiling() {
        // a[2,3] + b[3]
        let out = broadcast_shape(&[2, 3], &[3]).unwrap();
        let mut pairs = Vec::new();
        for_each_broadcast(&out, &[2, 3], &[3], |o, a, b| pairs.push((o, a, b)));
        assert_eq!(
            pairs,
            vec![(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 3, 0), (4, 4, 1), (5, 5, 2)]
        );
    }

    #[test]
    fn matmul_identity() {
        let a = vec![1.0f64, 0.0, 0.0, 1.0];
        let b = vec![1.0f64, 2.0, 3.0, 4.0];
        let mut c = vec![0.0f64; 4];
        matmul_acc(&a, &b, &mut c, 2, 2, 2);
        assert_eq!(c, b);
    }
}
