//! Standard multi-head self-attention and linear-complexity efficient
//! attention, with brute-force references and a complexity probe.
//!
//! Standard attention costs Θ(n²D); efficient attention reorders the product
//! as ρ_q(Q)·(ρ_k(K)ᵀV), building a D×D global context first, which makes the
//! cost linear in token count. The normalizer pair is fixed: softmax over the
//! channel axis for queries, softmax over the position axis for keys.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Prng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Projection weights and head configuration.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub num_heads: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        num_heads: usize,
        init: Init,
        rng: &mut Prng,
    ) -> Result<AttentionParams> {
        if num_heads == 0 || dim % num_heads != 0 {
            return Err(Error::config(format!(
                "dim {dim} not divisible by {num_heads} heads"
            )));
        }
        Ok(AttentionParams {
            wq: store.register(&format!("{prefix}.wq"), &[dim, dim], init, rng),
            wk: store.register(&format!("{prefix}.wk"), &[dim, dim], init, rng),
            wv: store.register(&format!("{prefix}.wv"), &[dim, dim], init, rng),
            wo: store.register(&format!("{prefix}.wo"), &[dim, dim], init, rng),
            num_heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.num_heads
    }
}

/// The supported normalizer pair for efficient attention.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NormalizerChoice {
    pub for_q: QueryNormalizer,
    pub for_k: KeyNormalizer,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum QueryNormalizer {
    #[default]
    SoftmaxOverChannels,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum KeyNormalizer {
    #[default]
    SoftmaxOverPositions,
}

/// Softmax(Q_j K_jᵀ / √D_h) V_j per head, heads concatenated, projected.
pub fn standard_mhsa<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    p: &AttentionParams,
) -> Result<Var> {
    let sh = tape.shape(x);
    if sh.len() != 2 || sh[1] != p.dim {
        return Err(Error::dim(format!(
            "standard_mhsa wants [n,{}], got {sh:?}",
            p.dim
        )));
    }
    let wq = tape.param(store, p.wq);
    let wk = tape.param(store, p.wk);
    let wv = tape.param(store, p.wv);
    let wo = tape.param(store, p.wo);
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let dh = p.head_dim();
    let sizes = vec![dh; p.num_heads];
    let qs = tape.split(q, 1, &sizes)?;
    let ks = tape.split(k, 1, &sizes)?;
    let vs = tape.split(v, 1, &sizes)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(p.num_heads);
    for j in 0..p.num_heads {
        let kt = tape.transpose2d(ks[j])?;
        let scores = tape.matmul(qs[j], kt)?;
        let scaled = tape.scale(scores, scale);
        let weights = tape.softmax(scaled, 1)?;
        heads.push(tape.matmul(weights, vs[j])?);
    }
    let cat = tape.concat(&heads, 1)?;
    tape.matmul(cat, wo)
}

/// ρ_q(Q)·(ρ_k(K)ᵀ·V) on already-projected inputs. Queries and keys may have
/// different token counts; keys and values must share theirs.
pub fn efficient_attention<T: Real>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    _norm: NormalizerChoice,
) -> Result<Var> {
    let (qs, ks, vs) = (tape.shape(q), tape.shape(k), tape.shape(v));
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::dim(format!(
            "efficient_attention wants rank-2 q/k/v, got {qs:?} {ks:?} {vs:?}"
        )));
    }
    if ks[0] != vs[0] {
        return Err(Error::dim(format!(
            "keys have {} positions, values {}",
            ks[0], vs[0]
        )));
    }
    if qs[1] != ks[1] {
        return Err(Error::dim(format!(
            "query dim {} differs from key dim {}",
            qs[1], ks[1]
        )));
    }
    let rq = tape.softmax(q, 1)?; // over channels, per query row
    let rk = tape.softmax(k, 0)?; // over positions, per key channel
    let rkt = tape.transpose2d(rk)?;
    let global_ctx = tape.matmul(rkt, v)?; // D x Dv global context
    tape.matmul(rq, global_ctx)
}

/// Self-attention wrapper around the efficient kernel: projections, optional
/// head split (the kernel is reused per head), output projection.
pub fn efficient_self_attention<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    p: &AttentionParams,
) -> Result<Var> {
    let sh = tape.shape(x);
    if sh.len() != 2 || sh[1] != p.dim {
        return Err(Error::dim(format!(
            "efficient_self_attention wants [n,{}], got {sh:?}",
            p.dim
        )));
    }
    let wq = tape.param(store, p.wq);
    let wk = tape.param(store, p.wk);
    let wv = tape.param(store, p.wv);
    let wo = tape.param(store, p.wo);
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let out = if p.num_heads == 1 {
        efficient_attention(tape, q, k, v, NormalizerChoice::default())?
    } else {
        let sizes = vec![p.head_dim(); p.num_heads];
        let qs = tape.split(q, 1, &sizes)?;
        let ks = tape.split(k, 1, &sizes)?;
        let vs = tape.split(v, 1, &sizes)?;
        let mut heads = Vec::with_capacity(p.num_heads);
        for j in 0..p.num_heads {
            heads.push(efficient_attention(
                tape,
                qs[j],
                ks[j],
                vs[j],
                NormalizerChoice::default(),
            )?);
        }
        tape.concat(&heads, 1)?
    };
    tape.matmul(out, wo)
}

// ---------------------------------------------------------------------------
// Brute-force references. These stay loop-by-loop translations of the
// formulas and never touch the tape kernels; tests and the benchmark sanity
// gate compare against them.

pub mod reference {
    /// Plain softmax over a slice (no stabilization; reference route).
    fn softmax_inplace(row: &mut [f64]) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = v.exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }

    /// Naive multi-head self-attention: x[n,d] row-major, square projections.
    pub fn naive_standard_mhsa(
        x: &[f64],
        wq: &[f64],
        wk: &[f64],
        wv: &[f64],
        wo: &[f64],
        n: usize,
        d: usize,
        heads: usize,
    ) -> Vec<f64> {
        let proj = |w: &[f64]| {
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    let mut acc = 0.0;
                    for t in 0..d {
                        acc += x[i * d + t] * w[t * d + j];
                    }
                    out[i * d + j] = acc;
                }
            }
            out
        };
        let (q, k, v) = (proj(wq), proj(wk), proj(wv));
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut cat = vec![0.0; n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let mut row = vec![0.0; n];
                for j in 0..n {
                    let mut acc = 0.0;
                    for t in 0..dh {
                        acc += q[i * d + off + t] * k[j * d + off + t];
                    }
                    row[j] = acc * scale;
                }
                softmax_inplace(&mut row);
                for t in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += row[j] * v[j * d + off + t];
                    }
                    cat[i * d + off + t] = acc;
                }
            }
        }
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                let mut acc = 0.0;
                for t in 0..d {
                    acc += cat[i * d + t] * wo[t * d + j];
                }
                out[i * d + j] = acc;
            }
        }
        out
    }

    /// Naive evaluation of ρ_q(Q)(ρ_k(K)ᵀV) on projected inputs.
    pub fn naive_efficient_attention(
        q: &[f64],
        k: &[f64],
        v: &[f64],
        nq: usize,
        nkv: usize,
        d: usize,
        dv: usize,
    ) -> Vec<f64> {
        // rho_q: softmax across channels of each query row.
        let mut rq = q.to_vec();
        for i in 0..nq {
            softmax_inplace(&mut rq[i * d..(i + 1) * d]);
        }
        // rho_k: softmax across positions of each key channel.
        let mut rk = vec![0.0; nkv * d];
        for c in 0..d {
            let mut sum = 0.0;
            for p in 0..nkv {
                let e = k[p * d + c].exp();
                rk[p * d + c] = e;
                sum += e;
            }
            for p in 0..nkv {
                rk[p * d + c] /= sum;
            }
        }
        // Global context: G[c, t] = sum_p rk[p,c] * v[p,t]
        let mut g = vec![0.0; d * dv];
        for c in 0..d {
            for t in 0..dv {
                let mut acc = 0.0;
                for p in 0..nkv {
                    acc += rk[p * d + c] * v[p * dv + t];
                }
                g[c * dv + t] = acc;
            }
        }
        let mut out = vec![0.0; nq * dv];
        for i in 0..nq {
            for t in 0..dv {
                let mut acc = 0.0;
                for c in 0..d {
                    acc += rq[i * d + c] * g[c * dv + t];
                }
                out[i * dv + t] = acc;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Complexity probe

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeImpl {
    Standard,
    Efficient,
}

impl ProbeImpl {
    pub fn name(self) -> &'static str {
        match self {
            ProbeImpl::Standard => "standard",
            ProbeImpl::Efficient => "efficient",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeRow {
    pub impl_name: &'static str,
    pub n: usize,
    pub d: usize,
    pub median_seconds: f64,
}

/// Median wall time of each implementation over ascending sequence lengths.
/// Both implementations are checked against their brute-force references on
/// a small instance before any timing.
pub fn complexity_probe(
    which: ProbeImpl,
    n_list: &[usize],
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "n_list must be ascending with at least 2 points, got {n_list:?}"
        )));
    }
    sanity_gate(which, seed)?;

    let mut rng = Prng::derive(seed, &[0xbe11c4]);
    let mut store: ParamStore<f64> = ParamStore::new();
    let p = AttentionParams::register(
        &mut store,
        "probe",
        d,
        1,
        Init::TruncNormal { std: 0.1 },
        &mut rng,
    )?;
    let mut rows = Vec::new();
    for &n in n_list {
        let x = Tensor::<f64>::from_fn(&[n, d], |_| rng.normal());
        let run = || -> Result<f64> {
            let t0 = Instant::now();
            let mut tape = Tape::new();
            let xv = tape.input(&x);
            let out = match which {
                ProbeImpl::Standard => standard_mhsa(&mut tape, &store, xv, &p)?,
                ProbeImpl::Efficient => efficient_self_attention(&mut tape, &store, xv, &p)?,
            };
            std::hint::black_box(tape.value(out));
            Ok(t0.elapsed().as_secs_f64())
        };
        // Repeat fast instances so each sample is well above timer noise.
        let once = run()?;
        let reps = ((5e-3 / once.max(1e-9)).ceil() as usize).clamp(1, 64);
        let mut samples = Vec::with_capacity(trials);
        for _ in 0..trials {
            let mut total = 0.0;
            for _ in 0..reps {
                total += run()?;
            }
            samples.push(total / reps as f64);
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rows.push(ProbeRow {
            impl_name: which.name(),
            n,
            d,
            median_seconds: samples[samples.len() / 2],
        });
    }
    Ok(rows)
}

fn sanity_gate(which: ProbeImpl, seed: u64) -> Result<()> {
    let mut rng = Prng::derive(seed, &[0x9a7e]);
    let (n, d) = (8usize, 8usize);
    let mut store: ParamStore<f64> = ParamStore::new();
    let p = AttentionParams::register(
        &mut store,
        "gate",
        d,
        1,
        Init::TruncNormal { std: 0.4 },
        &mut rng,
    )?;
    let x = Tensor::<f64>::from_fn(&[n, d], |_| rng.normal());
    let mut tape = Tape::new();
    let xv = tape.input(&x);
    let err = match which {
        ProbeImpl::Standard => {
            let out = standard_mhsa(&mut tape, &store, xv, &p)?;
            let want = reference::naive_standard_mhsa(
                x.data(),
                store.value(p.wq),
                store.value(p.wk),
                store.value(p.wv),
                store.value(p.wo),
                n,
                d,
                1,
            );
            max_abs_diff(tape.value(out), &want)
        }
        ProbeImpl::Efficient => {
            let wq = tape.param(&store, p.wq);
            let wk = tape.param(&store, p.wk);
            let wv = tape.param(&store, p.wv);
            let q = tape.matmul(xv, wq)?;
            let k = tape.matmul(xv, wk)?;
            let v = tape.matmul(xv, wv)?;
            let out = efficient_attention(&mut tape, q, k, v, NormalizerChoice::default())?;
            let want = reference::naive_efficient_attention(
                tape.value(q),
                tape.value(k),
                tape.value(v),
                n,
                n,
                d,
                d,
            );
            max_abs_diff(tape.value(out), &want)
        }
    };
    if err > 1e-10 {
        return Err(Error::contract(format!(
            "{} implementation diverges from its oracle by {err:e} before timing",
            which.name()
        )));
    }
    Ok(())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Least-squares slope of log(time) against log(n).
pub fn fit_loglog_slope(rows: &[ProbeRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| ((r.n as f64).ln(), r.median_seconds.max(1e-12).ln()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// CSV rows in the schema `impl,n,D,median_seconds`.
pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("impl,n,D,median_seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.9}\n",
            r.impl_name, r.n, r.d, r.median_seconds
        ));
    }
    out
}
