//! Multi-scale context enhancement bridge for skip connections.
//!
//! Encoder stages are projected to a common depth, concatenated along the
//! token axis, fused with one efficient-attention transformer, and split
//! back; each stage is then refined by a FET block driven by a pooled global
//! query and recalibrated with squeeze-and-excitation.

use crate::attention::{efficient_self_attention, AttentionParams};
use crate::error::{Error, Result};
use crate::fet::{fet_block_with_query, FetBlockParams, InitScheme};
use crate::nn::{linear, linear_bias, LnParams};
use crate::params::{Init, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Prng;
use crate::tape::{Tape, Var};

pub const STAGES: usize = 4;

/// Ordered encoder features, strictly halving spatial extents.
#[derive(Debug, Clone)]
pub struct StagePyramid {
    pub stages: Vec<Var>,
}

impl StagePyramid {
    pub fn new<T: Real>(tape: &Tape<T>, stages: Vec<Var>) -> Result<StagePyramid> {
        if stages.len() != STAGES {
            return Err(Error::dim(format!(
                "stage pyramid wants {STAGES} stages, got {}",
                stages.len()
            )));
        }
        for win in stages.windows(2) {
            let a = tape.shape(win[0]);
            let b = tape.shape(win[1]);
            if a.len() != 3 || b.len() != 3 {
                return Err(Error::dim(format!(
                    "stages must be [H,W,C], got {a:?} and {b:?}"
                )));
            }
            if b[0] * 2 != a[0] || b[1] * 2 != a[1] {
                return Err(Error::dim(format!(
                    "stage extents must halve: {a:?} then {b:?}"
                )));
            }
        }
        Ok(StagePyramid { stages })
    }

    pub fn dims<T: Real>(&self, tape: &Tape<T>) -> Vec<usize> {
        self.stages.iter().map(|&s| tape.shape(s)[2]).collect()
    }
}

/// Squeeze-and-excitation weights for one stage.
#[derive(Debug, Clone)]
pub struct SeParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ratio: usize,
    pub dim: usize,
}

impl SeParams {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        ratio: usize,
        scheme: InitScheme,
        rng: &mut Prng,
    ) -> Result<SeParams> {
        if ratio == 0 || dim % ratio != 0 {
            return Err(Error::config(format!(
                "SE ratio {ratio} must divide channel count {dim}"
            )));
        }
        let mid = dim / ratio;
        Ok(SeParams {
            w1: store.register(&format!("{prefix}.w1"), &[dim, mid], scheme.proj(dim), rng),
            b1: store.register(&format!("{prefix}.b1"), &[mid], Init::Zeros, rng),
            w2: store.register(&format!("{prefix}.w2"), &[mid, dim], scheme.proj(mid), rng),
            b2: store.register(&format!("{prefix}.b2"), &[dim], Init::Zeros, rng),
            ratio,
            dim,
        })
    }
}

/// Squeeze (global average pool), excite (bottleneck MLP, logistic), scale
/// channels. Gates are strictly inside (0,1).
pub fn se_block<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    p: &SeParams,
) -> Result<Var> {
    let sh = tape.shape(x).to_vec();
    if sh.len() != 3 || sh[2] != p.dim {
        return Err(Error::dim(format!(
            "se_block wants [H,W,{}], got {sh:?}",
            p.dim
        )));
    }
    let (h, w) = (sh[0], sh[1]);
    let col_sum = tape.sum_axis(x, 0)?;
    let chan_sum = tape.sum_axis(col_sum, 0)?;
    let pooled = tape.scale(chan_sum, 1.0 / (h * w) as f64);
    let row = tape.reshape(pooled, vec![1, p.dim])?;
    let hidden = linear_bias(tape, store, row, p.w1, p.b1)?;
    let act = tape.relu(hidden);
    let excite = linear_bias(tape, store, act, p.w2, p.b2)?;
    let gate_row = tape.sigmoid(excite);
    let gate = tape.reshape(gate_row, vec![p.dim])?;
    tape.mul(x, gate)
}

/// All weights of the bridge.
#[derive(Debug, Clone)]
pub struct MsceParams {
    pub in_proj: Vec<ParamId>,
    pub back_proj: Vec<ParamId>,
    pub fusion_ln: LnParams,
    pub fusion_attn: AttentionParams,
    pub global_proj: ParamId,
    pub stage_query_proj: Vec<ParamId>,
    pub fet: Vec<FetBlockParams>,
    pub se: Vec<SeParams>,
    pub common: usize,
    pub dims: Vec<usize>,
}

impl MsceParams {
    /// Common fusion depth is the stage-1 depth.
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dims: &[usize],
        pyramid_levels: usize,
        gauss_sigma: f64,
        se_ratio: usize,
        scheme: InitScheme,
        rng: &mut Prng,
    ) -> Result<MsceParams> {
        if dims.len() != STAGES {
            return Err(Error::config(format!(
                "MSCE wants {STAGES} stage dims, got {dims:?}"
            )));
        }
        let common = dims[0];
        let mut in_proj = Vec::new();
        let mut back_proj = Vec::new();
        let mut stage_query_proj = Vec::new();
        let mut fet = Vec::new();
        let mut se = Vec::new();
        for (i, &c) in dims.iter().enumerate() {
            in_proj.push(store.register(
                &format!("{prefix}.stage{i}.in_proj"),
                &[c, common],
                scheme.proj(c),
                rng,
            ));
            back_proj.push(store.register(
                &format!("{prefix}.stage{i}.back_proj"),
                &[common, c],
                scheme.proj(common),
                rng,
            ));
            stage_query_proj.push(store.register(
                &format!("{prefix}.stage{i}.query_proj"),
                &[common, c / 4],
                scheme.proj(common),
                rng,
            ));
            fet.push(FetBlockParams::register(
                store,
                &format!("{prefix}.stage{i}.fet"),
                c,
                pyramid_levels,
                gauss_sigma,
                scheme,
                rng,
            )?);
            se.push(SeParams::register(
                store,
                &format!("{prefix}.stage{i}.se"),
                c,
                se_ratio,
                scheme,
                rng,
            )?);
        }
        Ok(MsceParams {
            in_proj,
            back_proj,
            fusion_ln: LnParams::register(store, &format!("{prefix}.fusion.ln"), common),
            fusion_attn: AttentionParams {
                wq: store.register(
                    &format!("{prefix}.fusion.wq"),
                    &[common, common],
                    scheme.proj(common),
                    rng,
                ),
                wk: store.register(
                    &format!("{prefix}.fusion.wk"),
                    &[common, common],
                    scheme.proj(common),
                    rng,
                ),
                wv: store.register(
                    &format!("{prefix}.fusion.wv"),
                    &[common, common],
                    scheme.proj(common),
                    rng,
                ),
                wo: store.register(
                    &format!("{prefix}.fusion.wo"),
                    &[common, common],
                    scheme.residual_proj(common),
                    rng,
                ),
                num_heads: 1,
                dim: common,
            },
            global_proj: store.register(
                &format!("{prefix}.global_proj"),
                &[common, common],
                scheme.proj(common),
                rng,
            ),
            stage_query_proj,
            fet,
            se,
            common,
            dims: dims.to_vec(),
        })
    }
}

/// Cross-stage token fusion. Returns the refreshed pyramid and the fused
/// token sequence at common depth (the "represented token space").
fn fuse_internals<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    pyr: &StagePyramid,
    p: &MsceParams,
) -> Result<(Vec<Var>, Var)> {
    let dims = pyr.dims(tape);
    if dims != p.dims {
        return Err(Error::dim(format!(
            "pyramid dims {dims:?} do not match bridge dims {:?}",
            p.dims
        )));
    }
    let mut token_counts = Vec::new();
    let mut projected = Vec::new();
    for (i, &stage) in pyr.stages.iter().enumerate() {
        let flat = tape.flatten_spatial(stage)?;
        token_counts.push(tape.shape(flat)[0]);
        projected.push(linear(tape, store, flat, p.in_proj[i])?);
    }
    let tokens = tape.concat(&projected, 0)?;
    let normed = p.fusion_ln.apply(tape, store, tokens)?;
    let delta = efficient_self_attention(tape, store, normed, &p.fusion_attn)?;
    let fused = tape.add(tokens, delta)?;

    let deltas = tape.split(delta, 0, &token_counts)?;
    let mut outs = Vec::with_capacity(STAGES);
    for (i, &stage) in pyr.stages.iter().enumerate() {
        let sh = tape.shape(stage).to_vec();
        let corr = linear(tape, store, deltas[i], p.back_proj[i])?;
        let corr_sp = tape.unflatten_spatial(corr, sh[0], sh[1])?;
        outs.push(tape.add(stage, corr_sp)?);
    }
    Ok((outs, fused))
}

/// Cross-stage fusion alone; zeroing the fusion attention's output projection
/// returns each stage unchanged.
pub fn fuse_stages<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    pyr: &StagePyramid,
    p: &MsceParams,
) -> Result<StagePyramid> {
    let (outs, _) = fuse_internals(tape, store, pyr, p)?;
    StagePyramid::new(tape, outs)
}

/// Mean-pool a token sequence and project: one `[1,C]` global query.
pub fn global_query<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    tokens: Var,
    proj: ParamId,
) -> Result<Var> {
    let sh = tape.shape(tokens).to_vec();
    if sh.len() != 2 {
        return Err(Error::dim(format!("global_query wants [N,C] tokens, got {sh:?}")));
    }
    let summed = tape.sum_axis(tokens, 0)?;
    let mean = tape.scale(summed, 1.0 / sh[0] as f64);
    let row = tape.reshape(mean, vec![1, sh[1]])?;
    linear(tape, store, row, proj)
}

/// The full bridge: fuse, per-stage FET refinement with the injected global
/// query, squeeze-and-excitation. Shape-preserving.
///
/// Stages whose extents are odd (the deepest stage of a tiny pyramid can be
/// 1x1) are edge-replicated to even extents for the wavelet split and cropped
/// back afterwards, which is the wavelet module's documented padding policy.
pub fn msce_bridge<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    pyr: &StagePyramid,
    p: &MsceParams,
) -> Result<StagePyramid> {
    let (fused_stages, fused_tokens) = fuse_internals(tape, store, pyr, p)?;
    let g = global_query(tape, store, fused_tokens, p.global_proj)?;
    let mut outs = Vec::with_capacity(STAGES);
    for (i, &stage) in fused_stages.iter().enumerate() {
        let gq = linear(tape, store, g, p.stage_query_proj[i])?;
        let sh = tape.shape(stage).to_vec();
        let (h, w) = (sh[0], sh[1]);
        let (pad_h, pad_w) = (h % 2, w % 2);
        let refined = if pad_h == 0 && pad_w == 0 {
            fet_block_with_query(tape, store, stage, &p.fet[i], Some(gq))?
        } else {
            let padded = tape.pad_edge2d(stage, pad_h, pad_w)?;
            let out = fet_block_with_query(tape, store, padded, &p.fet[i], Some(gq))?;
            let rows = tape.slice(out, 0, 0, h)?;
            tape.slice(rows, 1, 0, w)?
        };
        outs.push(se_block(tape, store, refined, &p.se[i])?);
    }
    StagePyramid::new(tape, outs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::tensor::Tensor;

    fn tiny_pyramid(
        tape: &mut Tape<f64>,
        rng: &mut Prng,
        spatial: [usize; 4],
        dims: [usize; 4],
        amplitude: f64,
    ) -> StagePyramid {
        let stages = (0..4)
            .map(|i| {
                let t = Tensor::from_fn(&[spatial[i], spatial[i], dims[i]], |_| {
                    amplitude * rng.normal()
                });
                tape.input(&t)
            })
            .collect();
        StagePyramid::new(tape, stages).unwrap()
    }

    fn bridge_setup(
        seed: u64,
        dims: [usize; 4],
        scheme: InitScheme,
    ) -> (ParamStore<f64>, MsceParams, Prng) {
        let mut rng = Prng::new(seed);
        let mut store = ParamStore::new();
        let p = MsceParams::register(&mut store, "msce", &dims, 1, 1.0, 4, scheme, &mut rng)
            .unwrap();
        (store, p, rng)
    }

    #[test]
    fn pyramid_shape_rules_are_enforced() {
        let mut tape: Tape<f64> = Tape::new();
        let a = tape.input(&Tensor::zeros(&[8, 8, 4]));
        let b = tape.input(&Tensor::zeros(&[4, 4, 8]));
        let c = tape.input(&Tensor::zeros(&[2, 2, 8]));
        let d = tape.input(&Tensor::zeros(&[1, 1, 8]));
        assert!(StagePyramid::new(&tape, vec![a, b, c, d]).is_ok());
        assert!(StagePyramid::new(&tape, vec![a, b, c]).is_err());
        assert!(StagePyramid::new(&tape, vec![a, c, b, d]).is_err());
    }

    #[test]
    fn fuse_is_identity_when_fusion_output_projection_is_zero() {
        let (store, p, mut rng) = bridge_setup(1, [4, 8, 12, 16], InitScheme::Train);
        // Train scheme zeroes fusion wo.
        let mut tape = Tape::new();
        let pyr = tiny_pyramid(&mut tape, &mut rng, [8, 4, 2, 1], [4, 8, 12, 16], 1.0);
        let out = fuse_stages(&mut tape, &store, &pyr, &p).unwrap();
        for (a, b) in pyr.stages.iter().zip(out.stages.iter()) {
            assert_eq!(tape.value(*a), tape.value(*b));
        }
    }

    #[test]
    fn fuse_round_trips_shapes_on_a_realistic_pyramid() {
        let (store, p, mut rng) = bridge_setup(2, [32, 64, 128, 256], InitScheme::Spectral);
        let mut tape = Tape::new();
        let pyr = tiny_pyramid(&mut tape, &mut rng, [56, 28, 14, 7], [32, 64, 128, 256], 0.3);
        let out = fuse_stages(&mut tape, &store, &pyr, &p).unwrap();
        for (a, b) in pyr.stages.iter().zip(out.stages.iter()) {
            assert_eq!(tape.shape(*a), tape.shape(*b));
        }
    }

    /// Perturbing the deepest stage must change the shallowest output: every
    /// token sees every stage through the shared global context.
    #[test]
    fn cross_stage_information_flows() {
        let mut hits = 0;
        for seed in 0..20u64 {
            let (store, p, mut rng) = bridge_setup(100 + seed, [4, 8, 12, 16], InitScheme::Spectral);
            let dims = [4usize, 8, 12, 16];
            let spatial = [8usize, 4, 2, 1];
            let base: Vec<Tensor<f64>> = (0..4)
                .map(|i| Tensor::from_fn(&[spatial[i], spatial[i], dims[i]], |_| rng.normal()))
                .collect();
            let run = |stages_data: &[Tensor<f64>], store: &ParamStore<f64>| {
                let mut tape = Tape::new();
                let stages = stages_data.iter().map(|t| tape.input(t)).collect();
                let pyr = StagePyramid::new(&tape, stages).unwrap();
                let out = fuse_stages(&mut tape, store, &pyr, &p).unwrap();
                tape.value(out.stages[0]).to_vec()
            };
            let before = run(&base, &store);
            let mut bumped = base.clone();
            bumped[3] = Tensor::from_fn(&[1, 1, 16], |i| base[3].data()[i] + 0.5);
            let after = run(&bumped, &store);
            let diff: f64 = before
                .iter()
                .zip(after.iter())
                .map(|(a, b)| (a - b).abs())
                .sum();
            if diff > 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 19, "cross-stage flow in only {hits}/20 seeds");
    }

    #[test]
    fn global_query_is_mean_pool_then_projection() {
        let (store, p, mut rng) = bridge_setup(3, [4, 8, 12, 16], InitScheme::Spectral);
        let n = 7usize;
        let c = 4usize;
        let t = Tensor::<f64>::from_fn(&[n, c], |_| rng.normal());
        let mut tape = Tape::new();
        let tokens = tape.input(&t);
        let g = global_query(&mut tape, &store, tokens, p.global_proj).unwrap();

        // Naive: mean then matmul.
        let w = store.value(p.global_proj);
        let mut mean = vec![0.0f64; c];
        for r in 0..n {
            for j in 0..c {
                mean[j] += t.data()[r * c + j] / n as f64;
            }
        }
        for j in 0..c {
            let want: f64 = (0..c).map(|k| mean[k] * w[k * c + j]).sum();
            assert!((tape.value(g)[j] - want).abs() < 1e-12);
        }

        // Permutation invariance.
        let perm: Vec<usize> = vec![6, 2, 0, 4, 1, 5, 3];
        let tp = Tensor::<f64>::from_fn(&[n, c], |i| t.data()[perm[i / c] * c + i % c]);
        let mut tape2 = Tape::new();
        let tokens2 = tape2.input(&tp);
        let g2 = global_query(&mut tape2, &store, tokens2, p.global_proj).unwrap();
        for j in 0..c {
            assert!((tape.value(g)[j] - tape2.value(g2)[j]).abs() < 1e-12);
        }

        // Identical tokens: global query equals the projection of that token.
        let row: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
        let same = Tensor::<f64>::from_fn(&[5, c], |i| row[i % c]);
        let mut tape3 = Tape::new();
        let tokens3 = tape3.input(&same);
        let g3 = global_query(&mut tape3, &store, tokens3, p.global_proj).unwrap();
        for j in 0..c {
            let want: f64 = (0..c).map(|k| row[k] * w[k * c + j]).sum();
            assert!((tape3.value(g3)[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn se_zero_excite_halves_the_input() {
        let mut rng = Prng::new(4);
        let mut store: ParamStore<f64> = ParamStore::new();
        let se = SeParams::register(&mut store, "se", 8, 4, InitScheme::Train, &mut rng).unwrap();
        store.set_value(se.w1, vec![0.0; 8 * 2]);
        store.set_value(se.w2, vec![0.0; 2 * 8]);
        let x = Tensor::<f64>::from_fn(&[4, 4, 8], |_| rng.normal());
        let mut tape = Tape::new();
        let xv = tape.input(&x);
        let out = se_block(&mut tape, &store, xv, &se).unwrap();
        for (o, i) in tape.value(out).iter().zip(x.data()) {
            assert!((o - 0.5 * i).abs() < 1e-14);
        }
    }

    #[test]
    fn se_matches_naive_pool_mlp_and_keeps_gates_bounded() {
        let mut rng = Prng::new(5);
        let mut store: ParamStore<f64> = ParamStore::new();
        let c = 8usize;
        let r = 4usize;
        let se =
            SeParams::register(&mut store, "se", c, r, InitScheme::Spectral, &mut rng).unwrap();
        let (h, w) = (3usize, 5usize);
        let x = Tensor::<f64>::from_fn(&[h, w, c], |_| rng.range(-2.0, 2.0));
        let mut tape = Tape::new();
        let xv = tape.input(&x);
        let out = se_block(&mut tape, &store, xv, &se).unwrap();

        // Naive route.
        let mid = c / r;
        let (w1, b1) = (store.value(se.w1).to_vec(), store.value(se.b1).to_vec());
        let (w2, b2) = (store.value(se.w2).to_vec(), store.value(se.b2).to_vec());
        let mut pool = vec![0.0f64; c];
        for p_ in 0..h * w {
            for ch in 0..c {
                pool[ch] += x.data()[p_ * c + ch] / (h * w) as f64;
            }
        }
        let mut hid = vec![0.0f64; mid];
        for m in 0..mid {
            let mut acc = b1[m];
            for ch in 0..c {
                acc += pool[ch] * w1[ch * mid + m];
            }
            hid[m] = acc.max(0.0);
        }
        for ch in 0..c {
            let mut acc = b2[ch];
            for m in 0..mid {
                acc += hid[m] * w2[m * c + ch];
            }
            let gate = 1.0 / (1.0 + (-acc).exp());
            assert!(gate > 0.0 && gate < 1.0);
            for p_ in 0..h * w {
                let want = x.data()[p_ * c + ch] * gate;
                let got = tape.value(out)[p_ * c + ch];
                assert!((got - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn se_rejects_bad_ratio() {
        let mut rng = Prng::new(6);
        let mut store: ParamStore<f64> = ParamStore::new();
        assert!(SeParams::register(&mut store, "se", 10, 4, InitScheme::Train, &mut rng).is_err());
    }

    /// With every residual output projection zero and zeroed SE excitation,
    /// the bridge reduces to scaling each stage by the 0.5 zero-gate.
    #[test]
    fn zeroed_bridge_halves_each_stage()  {
        let (mut store, p, mut rng) = bridge_setup(7, [4, 8, 12, 16], InitScheme::Train);
        for se in &p.se {
            let mid = se.dim / se.ratio;
            store.set_value(se.w1, vec![0.0; se.dim * mid]);
            store.set_value(se.w2, vec![0.0; mid * se.dim]);
        }
        let mut tape = Tape::new();
        let pyr = tiny_pyramid(&mut tape, &mut rng, [8, 4, 2, 1], [4, 8, 12, 16], 1.0);
        let out = msce_bridge(&mut tape, &store, &pyr, &p).unwrap();
        for (a, b) in pyr.stages.iter().zip(out.stages.iter()) {
            for (x, y) in tape.value(*a).iter().zip(tape.value(*b)) {
                assert!((y - 0.5 * x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bridge_preserves_shapes_on_default_config() {
        let (store, p, mut rng) = bridge_setup(8, [8, 16, 32, 64], InitScheme::Spectral);
        let mut tape = Tape::new();
        let pyr = tiny_pyramid(&mut tape, &mut rng, [16, 8, 4, 2], [8, 16, 32, 64], 0.5);
        let out = msce_bridge(&mut tape, &store, &pyr, &p).unwrap();
        for (a, b) in pyr.stages.iter().zip(out.stages.iter()) {
            assert_eq!(tape.shape(*a), tape.shape(*b));
        }
    }

    #[test]
    fn bridge_gradients_match_finite_differences_on_tiny_pyramid() {
        let (mut store, p, mut rng) = bridge_setup(9, [4, 8, 12, 16], InitScheme::Spectral);
        let dims = [4usize, 8, 12, 16];
        let spatial = [8usize, 4, 2, 1];
        let base: Vec<Tensor<f64>> = (0..4)
            .map(|i| Tensor::from_fn(&[spatial[i], spatial[i], dims[i]], |_| 0.5 * rng.normal()))
            .collect();
        let ids: Vec<_> = store.ids().collect();
        let rep = grad_check(
            &|tape, store| {
                let stages = base.iter().map(|t| tape.input(t)).collect();
                let pyr = StagePyramid::new(tape, stages)?;
                let out = msce_bridge(tape, store, &pyr, &p)?;
                let mut total: Option<Var> = None;
                for &s in &out.stages {
                    let sq = tape.mul(s, s)?;
                    let sum = tape.sum_all(sq);
                    total = Some(match total {
                        Some(t) => tape.add(t, sum)?,
                        None => sum,
                    });
                }
                Ok(total.unwrap())
            },
            &mut store,
            &ids,
            1e-5,
            Some(4),
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-4, "rel err {}", rep.max_rel_err);
        assert_eq!(rep.kinks_skipped, 0);
    }
}
