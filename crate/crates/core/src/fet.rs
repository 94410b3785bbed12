//! Frequency-enhancement transformer block and layer.
//!
//! The block routes three paths: queries come from the full-resolution
//! input, keys and values come from the wavelet-decomposed (and therefore
//! downsampled) input, and a Gaussian-pyramid boundary gate built from the
//! stacked high-frequency subbands is added to the values before attention.
//! The layer wraps the block in the usual pre-norm sandwich with a Mix-FFN
//! (pointwise expand, 3x3 depthwise conv, GELU, pointwise contract).

use crate::attention::{efficient_attention, standard_mhsa, AttentionParams, NormalizerChoice};
use crate::error::{Error, Result};
use crate::nn::{linear, linear_bias, LnParams, TokenMap};
use crate::params::{Init, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Prng;
use crate::tape::{Tape, Var};
use crate::wavelet::{dwt2, WaveletSubbands};

/// Weight initialization scheme.
///
/// `Train` zeroes the output projection of every residual branch so a fresh
/// stack starts near the identity; `Spectral` draws every projection at
/// 1/sqrt(fan_in) scale so that randomly initialized layers transform their
/// input with O(1) magnitude, which the spectral-response instrument needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    Train,
    Spectral,
}

impl InitScheme {
    pub(crate) fn proj(self, fan_in: usize) -> Init {
        match self {
            InitScheme::Train => Init::TruncNormal { std: 0.02 },
            InitScheme::Spectral => Init::ScaledNormal { fan_in },
        }
    }

    pub(crate) fn residual_proj(self, fan_in: usize) -> Init {
        match self {
            InitScheme::Train => Init::Zeros,
            InitScheme::Spectral => Init::ScaledNormal { fan_in },
        }
    }
}

// ---------------------------------------------------------------------------
// Gaussian pyramid

/// Normalized 1D Gaussian taps, radius ceil(3 sigma).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let r = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Deepest pyramid admissible for the given extents: every level must have
/// even extents before the next 2x downsample.
pub fn max_pyramid_levels(h: usize, w: usize) -> usize {
    (h.trailing_zeros().min(w.trailing_zeros())) as usize
}

/// Level 0 is the input itself; each next level is a separable Gaussian blur
/// (edge-replicate padding, kernel normalized to sum 1) followed by 2x mean
/// downsampling. Returns `levels + 1` tensors.
pub fn gaussian_pyramid<T: Real>(
    tape: &mut Tape<T>,
    hf: Var,
    levels: usize,
    sigma: f64,
) -> Result<Vec<Var>> {
    let sh = tape.shape(hf);
    if sh.len() != 3 {
        return Err(Error::dim(format!("gaussian_pyramid wants [H,W,C], got {sh:?}")));
    }
    let admissible = max_pyramid_levels(sh[0], sh[1]);
    if levels > admissible {
        return Err(Error::dim(format!(
            "{levels} pyramid levels too deep for {}x{} (max {admissible})",
            sh[0], sh[1]
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let mut out = vec![hf];
    let mut cur = hf;
    for _ in 0..levels {
        let by = tape.blur_axis(cur, &kernel, 0)?;
        let bx = tape.blur_axis(by, &kernel, 1)?;
        cur = tape.down2_avg(bx)?;
        out.push(cur);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// FET block

/// All learnable weights of one FET block over `[H,W,D]` inputs; the wavelet
/// path runs at `D/4` channels.
#[derive(Debug, Clone)]
pub struct FetBlockParams {
    pub reduce: ParamId,
    pub hf_mix_a_w: ParamId,
    pub hf_mix_a_b: ParamId,
    pub hf_mix_b_w: ParamId,
    pub hf_mix_b_b: ParamId,
    pub kv_conv_w: ParamId,
    pub kv_conv_b: ParamId,
    pub wq: ParamId,
    pub wo: ParamId,
    pub pyramid_levels: usize,
    pub gauss_sigma: f64,
    pub dim: usize,
}

/// Boundary gate over the wavelet grid, values squashed into [0,1].
#[derive(Debug, Clone, Copy)]
pub struct BoundaryMap {
    pub map: Var,
}

impl FetBlockParams {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        pyramid_levels: usize,
        gauss_sigma: f64,
        scheme: InitScheme,
        rng: &mut Prng,
    ) -> Result<FetBlockParams> {
        if dim % 4 != 0 {
            return Err(Error::config(format!(
                "FET block dim {dim} must be divisible by 4"
            )));
        }
        if pyramid_levels == 0 {
            return Err(Error::config("pyramid_levels must be at least 1"));
        }
        if gauss_sigma <= 0.0 {
            return Err(Error::config(format!("gauss_sigma must be > 0, got {gauss_sigma}")));
        }
        let c = dim / 4;
        Ok(FetBlockParams {
            reduce: store.register(
                &format!("{prefix}.reduce"),
                &[dim, c],
                scheme.proj(dim),
                rng,
            ),
            hf_mix_a_w: store.register(
                &format!("{prefix}.hf_mix_a.w"),
                &[3, c],
                Init::KaimingConv { fan_in: 3 },
                rng,
            ),
            hf_mix_a_b: store.register(&format!("{prefix}.hf_mix_a.b"), &[c], Init::Zeros, rng),
            hf_mix_b_w: store.register(
                &format!("{prefix}.hf_mix_b.w"),
                &[c],
                Init::KaimingConv { fan_in: 1 },
                rng,
            ),
            hf_mix_b_b: store.register(&format!("{prefix}.hf_mix_b.b"), &[c], Init::Zeros, rng),
            kv_conv_w: store.register(
                &format!("{prefix}.kv_conv.w"),
                &[3, 3, 2 * c, 2 * c],
                Init::KaimingConv { fan_in: 9 * 2 * c },
                rng,
            ),
            kv_conv_b: store.register(&format!("{prefix}.kv_conv.b"), &[2 * c], Init::Zeros, rng),
            wq: store.register(&format!("{prefix}.wq"), &[dim, c], scheme.proj(dim), rng),
            wo: store.register(
                &format!("{prefix}.wo"),
                &[c, dim],
                scheme.residual_proj(c),
                rng,
            ),
            pyramid_levels,
            gauss_sigma,
            dim,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.reduce,
            self.hf_mix_a_w,
            self.hf_mix_a_b,
            self.hf_mix_b_w,
            self.hf_mix_b_b,
            self.kv_conv_w,
            self.kv_conv_b,
            self.wq,
            self.wo,
        ]
    }
}

/// Stack {LH, HL, HH} on a new leading axis, recalibrate with the first
/// 3x1x1 convolution (fuse), pool a Gaussian pyramid back to full wavelet
/// resolution, mix pointwise with the second convolution, squash. Returns
/// the gate and the fused high-frequency features (the latter feed the K/V
/// convolution).
fn boundary_internals<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    sub: &WaveletSubbands,
    p: &FetBlockParams,
) -> Result<(BoundaryMap, Var)> {
    let sh = tape.shape(sub.lh).to_vec();
    let (h, w, c) = (sh[0], sh[1], sh[2]);
    let lh = tape.reshape(sub.lh, vec![1, h, w, c])?;
    let hl = tape.reshape(sub.hl, vec![1, h, w, c])?;
    let hh = tape.reshape(sub.hh, vec![1, h, w, c])?;
    let stack = tape.concat(&[lh, hl, hh], 0)?;

    let wa = tape.param(store, p.hf_mix_a_w);
    let ba = tape.param(store, p.hf_mix_a_b);
    let fused = tape.conv_across_axis(stack, wa, Some(ba), true)?;

    let levels = p.pyramid_levels.min(max_pyramid_levels(h, w));
    let pyramid = gaussian_pyramid(tape, fused, levels, p.gauss_sigma)?;
    let mut acc = pyramid[0];
    for (i, &level) in pyramid.iter().enumerate().skip(1) {
        let mut up = level;
        for _ in 0..i {
            up = tape.up2_bilinear(up)?;
        }
        acc = tape.add(acc, up)?;
    }

    let wb = tape.param(store, p.hf_mix_b_w);
    let bb = tape.param(store, p.hf_mix_b_b);
    let mixed = tape.mul(acc, wb)?;
    let shifted = tape.add(mixed, bb)?;
    let gate = tape.sigmoid(shifted);
    Ok((BoundaryMap { map: gate }, fused))
}

/// Boundary gate alone; zero high-frequency input yields the constant
/// sigma(bias) everywhere (0.5 when biases are zero).
pub fn boundary_attention<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    sub: &WaveletSubbands,
    p: &FetBlockParams,
) -> Result<BoundaryMap> {
    Ok(boundary_internals(tape, store, sub, p)?.0)
}

/// The FET block body without the outer residual: reduce channels, wavelet
/// split, boundary gate onto values, efficient cross-attention from
/// full-resolution queries to quarter-resolution keys/values, project back.
fn fet_branch<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    p: &FetBlockParams,
    global_q: Option<Var>,
) -> Result<Var> {
    let sh = tape.shape(x).to_vec();
    if sh.len() != 3 || sh[2] != p.dim {
        return Err(Error::dim(format!(
            "fet_block wants [H,W,{}], got {sh:?}",
            p.dim
        )));
    }
    let (h, w) = (sh[0], sh[1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!(
            "fet_block needs even spatial extents for the wavelet split, got {h}x{w}"
        )));
    }
    let c = p.dim / 4;

    // (1) channel reduction to D/4
    let flat = tape.flatten_spatial(x)?;
    let reduced = linear(tape, store, flat, p.reduce)?;
    let xt = tape.unflatten_spatial(reduced, h, w)?;

    // (2) wavelet split
    let sub = dwt2(tape, xt)?;

    // (3) boundary gate + fused HF features
    let (gate, fused) = boundary_internals(tape, store, &sub, p)?;

    // (4) LL and encoded boundary features side by side in the channel dim
    let kv_in = tape.concat(&[sub.ll, fused], 2)?;

    // (5) one 3x3 convolution makes both keys and values
    let kvw = tape.param(store, p.kv_conv_w);
    let kvb = tape.param(store, p.kv_conv_b);
    let kv = tape.conv2d(kv_in, kvw, Some(kvb), 1, 1, 1)?;
    let parts = tape.split(kv, 2, &[c, c])?;
    let (key_map, val_map) = (parts[0], parts[1]);

    // (6) boundary added to Value
    let val_gated = tape.add(val_map, gate.map)?;

    // (7) queries from the full-resolution input; keys/values from the
    // wavelet grid (a quarter of the query token count)
    let mut q = linear(tape, store, flat, p.wq)?;
    if let Some(g) = global_q {
        q = tape.add(q, g)?;
    }
    let k = tape.flatten_spatial(key_map)?;
    let v = tape.flatten_spatial(val_gated)?;
    debug_assert_eq!(tape.shape(k)[0] * 4, tape.shape(q)[0]);

    // (8) linear-complexity attention
    let att = efficient_attention(tape, q, k, v, NormalizerChoice::default())?;

    // (9) back to D channels
    let out = linear(tape, store, att, p.wo)?;
    tape.unflatten_spatial(out, h, w)
}

/// Full FET block: residual around the branch, shape preserved.
pub fn fet_block<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    p: &FetBlockParams,
) -> Result<Var> {
    fet_block_with_query(tape, store, x, p, None)
}

/// FET block with an optional global query token `[1, D/4]` added to every
/// projected query row (the skip bridge injects one).
pub fn fet_block_with_query<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    p: &FetBlockParams,
    global_q: Option<Var>,
) -> Result<Var> {
    let branch = fet_branch(tape, store, x, p, global_q)?;
    tape.add(x, branch)
}

// ---------------------------------------------------------------------------
// Mix-FFN

#[derive(Debug, Clone)]
pub struct MixFfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub dw_w: ParamId,
    pub dw_b: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub dim: usize,
    pub hidden: usize,
}

impl MixFfnParams {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        scheme: InitScheme,
        rng: &mut Prng,
    ) -> MixFfnParams {
        let hidden = 4 * dim;
        MixFfnParams {
            w1: store.register(&format!("{prefix}.w1"), &[dim, hidden], scheme.proj(dim), rng),
            b1: store.register(&format!("{prefix}.b1"), &[hidden], Init::Zeros, rng),
            dw_w: store.register(
                &format!("{prefix}.dw.w"),
                &[3, 3, 1, hidden],
                Init::KaimingConv { fan_in: 9 },
                rng,
            ),
            dw_b: store.register(&format!("{prefix}.dw.b"), &[hidden], Init::Zeros, rng),
            w2: store.register(
                &format!("{prefix}.w2"),
                &[hidden, dim],
                scheme.residual_proj(hidden),
                rng,
            ),
            b2: store.register(&format!("{prefix}.b2"), &[dim], Init::Zeros, rng),
            dim,
            hidden,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w1, self.b1, self.dw_w, self.dw_b, self.w2, self.b2]
    }
}

/// Pointwise expand (ratio 4), 3x3 depthwise convolution, GELU, pointwise
/// contract. The residual is the caller's.
pub fn mix_ffn<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    tokens: Var,
    h: usize,
    w: usize,
    p: &MixFfnParams,
) -> Result<Var> {
    let expanded = linear_bias(tape, store, tokens, p.w1, p.b1)?;
    let spatial = tape.unflatten_spatial(expanded, h, w)?;
    let dw_w = tape.param(store, p.dw_w);
    let dw_b = tape.param(store, p.dw_b);
    let mixed = tape.conv2d(spatial, dw_w, Some(dw_b), 1, 1, p.hidden)?;
    let act = tape.gelu(mixed);
    let flat = tape.flatten_spatial(act)?;
    linear_bias(tape, store, flat, p.w2, p.b2)
}

// ---------------------------------------------------------------------------
// Layers: LayerNorm -> block -> LayerNorm -> Mix-FFN, pre-norm residuals

#[derive(Debug, Clone)]
pub struct FetLayerParams {
    pub ln1: LnParams,
    pub block: FetBlockParams,
    pub ln2: LnParams,
    pub ffn: MixFfnParams,
}

impl FetLayerParams {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        pyramid_levels: usize,
        gauss_sigma: f64,
        scheme: InitScheme,
        rng: &mut Prng,
    ) -> Result<FetLayerParams> {
        Ok(FetLayerParams {
            ln1: LnParams::register(store, &format!("{prefix}.ln1"), dim),
            block: FetBlockParams::register(
                store,
                &format!("{prefix}.fet"),
                dim,
                pyramid_levels,
                gauss_sigma,
                scheme,
                rng,
            )?,
            ln2: LnParams::register(store, &format!("{prefix}.ln2"), dim),
            ffn: MixFfnParams::register(store, &format!("{prefix}.ffn"), dim, scheme, rng),
        })
    }
}

pub fn fet_layer<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    t: TokenMap,
    p: &FetLayerParams,
) -> Result<TokenMap> {
    let normed = p.ln1.apply(tape, store, t.var)?;
    let spatial = tape.unflatten_spatial(normed, t.h, t.w)?;
    let branch = fet_branch(tape, store, spatial, &p.block, None)?;
    let branch_flat = tape.flatten_spatial(branch)?;
    let mid = tape.add(t.var, branch_flat)?;
    let normed2 = p.ln2.apply(tape, store, mid)?;
    let ffn = mix_ffn(tape, store, normed2, t.h, t.w, &p.ffn)?;
    let out = tape.add(mid, ffn)?;
    TokenMap::new(tape, out, t.h, t.w)
}

/// Conventional transformer layer of matched width: standard multi-head
/// self-attention in place of the FET block, same Mix-FFN.
#[derive(Debug, Clone)]
pub struct StdLayerParams {
    pub ln1: LnParams,
    pub attn: AttentionParams,
    pub ln2: LnParams,
    pub ffn: MixFfnParams,
}

impl StdLayerParams {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        scheme: InitScheme,
        rng: &mut Prng,
    ) -> Result<StdLayerParams> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!("dim {dim} not divisible by {heads} heads")));
        }
        let attn = AttentionParams {
            wq: store.register(&format!("{prefix}.attn.wq"), &[dim, dim], scheme.proj(dim), rng),
            wk: store.register(&format!("{prefix}.attn.wk"), &[dim, dim], scheme.proj(dim), rng),
            wv: store.register(&format!("{prefix}.attn.wv"), &[dim, dim], scheme.proj(dim), rng),
            wo: store.register(
                &format!("{prefix}.attn.wo"),
                &[dim, dim],
                scheme.residual_proj(dim),
                rng,
            ),
            num_heads: heads,
            dim,
        };
        Ok(StdLayerParams {
            ln1: LnParams::register(store, &format!("{prefix}.ln1"), dim),
            attn,
            ln2: LnParams::register(store, &format!("{prefix}.ln2"), dim),
            ffn: MixFfnParams::register(store, &format!("{prefix}.ffn"), dim, scheme, rng),
        })
    }
}

pub fn std_layer<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    t: TokenMap,
    p: &StdLayerParams,
) -> Result<TokenMap> {
    let normed = p.ln1.apply(tape, store, t.var)?;
    let branch = standard_mhsa(tape, store, normed, &p.attn)?;
    let mid = tape.add(t.var, branch)?;
    let normed2 = p.ln2.apply(tape, store, mid)?;
    let ffn = mix_ffn(tape, store, normed2, t.h, t.w, &p.ffn)?;
    let out = tape.add(mid, ffn)?;
    TokenMap::new(tape, out, t.h, t.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::tensor::Tensor;

    #[test]
    fn blur_kernel_is_normalized_for_any_sigma() {
        for sigma in [0.3, 0.7, 1.0, 2.5] {
            let k = gaussian_kernel(sigma);
            let sum: f64 = k.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sigma {sigma}: sum {sum}");
        }
    }

    #[test]
    fn pyramid_preserves_constants() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.input(&Tensor::filled(&[8, 8, 2], 4.25));
        let levels = gaussian_pyramid(&mut tape, x, 3, 1.0).unwrap();
        assert_eq!(levels.len(), 4);
        for (i, &lv) in levels.iter().enumerate() {
            let sh = tape.shape(lv);
            assert_eq!(sh[0], 8 >> i);
            assert!(
                tape.value(lv).iter().all(|&v| (v - 4.25).abs() < 1e-12),
                "level {i} not constant"
            );
        }
    }

    #[test]
    fn pyramid_depth_is_validated() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.input(&Tensor::zeros(&[4, 4, 1]));
        assert!(gaussian_pyramid(&mut tape, x, 2, 1.0).is_ok());
        assert!(gaussian_pyramid(&mut tape, x, 3, 1.0).is_err());
        let y = tape.input(&Tensor::zeros(&[6, 12, 1]));
        assert!(gaussian_pyramid(&mut tape, y, 1, 1.0).is_ok());
        assert!(gaussian_pyramid(&mut tape, y, 2, 1.0).is_err());
    }

    /// Level 1 of an impulse image against a naive blur+downsample loop.
    #[test]
    fn impulse_pyramid_matches_naive_loop() {
        let (h, w) = (8usize, 8usize);
        let sigma = 1.0;
        let t = Tensor::<f64>::from_fn(&[h, w, 1], |i| if i == (3 * w + 4) { 1.0 } else { 0.0 });
        let mut tape = Tape::new();
        let x = tape.input(&t);
        let levels = gaussian_pyramid(&mut tape, x, 1, sigma).unwrap();

        // Naive: clamp-padded 2D blur then 2x2 mean, straight from the text.
        let k = gaussian_kernel(sigma);
        let r = k.len() / 2;
        let mut blurred = vec![0.0f64; h * w];
        for y in 0..h {
            for x_ in 0..w {
                let mut acc = 0.0;
                for (dy, ky) in k.iter().enumerate() {
                    for (dx, kx) in k.iter().enumerate() {
                        let sy = (y as isize + dy as isize - r as isize)
                            .clamp(0, h as isize - 1) as usize;
                        let sx = (x_ as isize + dx as isize - r as isize)
                            .clamp(0, w as isize - 1) as usize;
                        acc += ky * kx * t.data()[sy * w + sx];
                    }
                }
                blurred[y * w + x_] = acc;
            }
        }
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let want = 0.25
                    * (blurred[(2 * oy) * w + 2 * ox]
                        + blurred[(2 * oy) * w + 2 * ox + 1]
                        + blurred[(2 * oy + 1) * w + 2 * ox]
                        + blurred[(2 * oy + 1) * w + 2 * ox + 1]);
                let got = tape.value(levels[1])[oy * (w / 2) + ox];
                assert!((got - want).abs() < 1e-10, "({oy},{ox}): {got} vs {want}");
            }
        }
    }

    fn block_setup(
        seed: u64,
        dim: usize,
        levels: usize,
        scheme: InitScheme,
    ) -> (ParamStore<f64>, FetBlockParams, Prng) {
        let mut rng = Prng::new(seed);
        let mut store = ParamStore::new();
        let p =
            FetBlockParams::register(&mut store, "blk", dim, levels, 1.0, scheme, &mut rng)
                .unwrap();
        (store, p, rng)
    }

    #[test]
    fn zero_hf_gives_a_flat_half_gate() {
        let (store, p, _) = block_setup(1, 8, 2, InitScheme::Spectral);
        let mut tape = Tape::new();
        // Constant wavelet-path input: all HF subbands are exactly zero.
        let c = 2;
        let ll = tape.input(&Tensor::filled(&[4, 4, c], 1.3));
        let z = tape.input(&Tensor::zeros(&[4, 4, c]));
        let sub = WaveletSubbands {
            ll,
            lh: z,
            hl: z,
            hh: z,
            source_shape: (8, 8, c),
        };
        let gate = boundary_attention(&mut tape, &store, &sub, &p).unwrap();
        assert!(tape
            .value(gate.map)
            .iter()
            .all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn gate_stays_in_unit_interval() {
        let (store, p, mut rng) = block_setup(2, 8, 2, InitScheme::Spectral);
        for _ in 0..10 {
            let mut tape = Tape::new();
            let mk = |tape: &mut Tape<f64>, rng: &mut Prng| {
                let t = Tensor::from_fn(&[4, 4, 2], |_| rng.range(-30.0, 30.0));
                tape.input(&t)
            };
            let (ll, lh, hl, hh) = (
                mk(&mut tape, &mut rng),
                mk(&mut tape, &mut rng),
                mk(&mut tape, &mut rng),
                mk(&mut tape, &mut rng),
            );
            let sub = WaveletSubbands {
                ll,
                lh,
                hl,
                hh,
                source_shape: (8, 8, 2),
            };
            let gate = boundary_attention(&mut tape, &store, &sub, &p).unwrap();
            assert!(tape
                .value(gate.map)
                .iter()
                .all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    /// With nonnegative kernels, doubling the high-frequency magnitudes never
    /// decreases the gate.
    #[test]
    fn gate_is_monotone_under_nonnegative_kernels() {
        let mut rng = Prng::new(3);
        let mut store: ParamStore<f64> = ParamStore::new();
        let c = 2usize;
        let dim = 4 * c;
        let wa: Vec<f64> = (0..3 * c).map(|_| rng.uniform()).collect();
        let wb: Vec<f64> = (0..c).map(|_| rng.uniform()).collect();
        let mut p =
            FetBlockParams::register(&mut store, "blk", dim, 2, 1.0, InitScheme::Train, &mut rng)
                .unwrap();
        store.set_value(p.hf_mix_a_w, wa);
        store.set_value(p.hf_mix_b_w, wb);
        p.pyramid_levels = 2;

        for _ in 0..10 {
            let hf: Vec<f64> = (0..4 * 4 * c).map(|_| rng.uniform()).collect();
            let run = |scale: f64, store: &ParamStore<f64>| {
                let mut tape = Tape::new();
                let ll = tape.input(&Tensor::zeros(&[4, 4, c]));
                let band = |tape: &mut Tape<f64>| {
                    Tensor::from_f64_slice(
                        &[4, 4, c],
                        &hf.iter().map(|&v| v * scale).collect::<Vec<_>>(),
                    )
                    .map(|t| tape.input(&t))
                    .unwrap()
                };
                let (lh, hl, hh) = (band(&mut tape), band(&mut tape), band(&mut tape));
                let sub = WaveletSubbands {
                    ll,
                    lh,
                    hl,
                    hh,
                    source_shape: (8, 8, c),
                };
                let g = boundary_attention(&mut tape, store, &sub, &p).unwrap();
                tape.value(g.map).to_vec()
            };
            let g1 = run(1.0, &store);
            let g2 = run(2.0, &store);
            for (a, b) in g1.iter().zip(g2.iter()) {
                assert!(b + 1e-12 >= *a, "gate decreased: {a} -> {b}");
            }
        }
    }

    /// The gate concentrates on a step edge: its mean on the band around the
    /// edge exceeds its mean far from the edge.
    #[test]
    fn gate_highlights_a_step_edge() {
        let mut rng = Prng::new(4);
        let mut store: ParamStore<f64> = ParamStore::new();
        let c = 2usize;
        let dim = 4 * c;
        let p =
            FetBlockParams::register(&mut store, "blk", dim, 2, 1.0, InitScheme::Train, &mut rng)
                .unwrap();
        // Nonnegative mixing so edge responses stay positive.
        let wa: Vec<f64> = (0..3 * c).map(|_| 0.3 + rng.uniform()).collect();
        let wb: Vec<f64> = (0..c).map(|_| 0.3 + rng.uniform()).collect();
        store.set_value(p.hf_mix_a_w, wa);
        store.set_value(p.hf_mix_b_w, wb);

        // Step edge between columns 6 and 7 (an odd boundary, so wavelet
        // blocks straddle it and the high-frequency subbands light up).
        // Bright-to-dark polarity keeps the straddle response positive under
        // the nonnegative kernels above.
        let img = Tensor::<f64>::from_fn(&[16, 16, c], |i| {
            let x = (i / c) % 16;
            if x < 7 {
                2.0
            } else {
                0.0
            }
        });
        let mut tape = Tape::new();
        let xv = tape.input(&img);
        let sub = dwt2(&mut tape, xv).unwrap();
        let gate = boundary_attention(&mut tape, &store, &sub, &p).unwrap();
        let g = tape.value(gate.map);
        // Wavelet grid is 8x8; the straddling block is column 3.
        let (mut near, mut near_n, mut far, mut far_n) = (0.0, 0usize, 0.0, 0usize);
        for y in 0..8 {
            for x in 0..8 {
                for ch in 0..c {
                    let v = g[(y * 8 + x) * c + ch];
                    if (2..=4).contains(&x) {
                        near += v;
                        near_n += 1;
                    } else if !(1..=5).contains(&x) {
                        far += v;
                        far_n += 1;
                    }
                }
            }
        }
        let (near, far) = (near / near_n as f64, far / far_n as f64);
        assert!(
            near > far + 0.01,
            "edge band mean {near} not above background {far}"
        );
    }

    #[test]
    fn zeroed_output_projection_makes_the_block_an_identity() {
        let (store, p, mut rng) = block_setup(5, 8, 2, InitScheme::Train);
        // Train scheme zero-initializes wo already.
        let x = Tensor::<f64>::from_fn(&[8, 8, 8], |_| rng.normal());
        let mut tape = Tape::new();
        let xv = tape.input(&x);
        let out = fet_block(&mut tape, &store, xv, &p).unwrap();
        assert_eq!(tape.value(out), x.data(), "must be bit-identical");
    }

    #[test]
    fn constant_input_gives_spatially_constant_output() {
        let (store, p, _) = block_setup(6, 8, 2, InitScheme::Spectral);
        let x = Tensor::<f64>::from_fn(&[8, 8, 8], |i| 0.3 + 0.1 * (i % 8) as f64);
        let mut tape = Tape::new();
        let xv = tape.input(&x);
        let out = fet_block(&mut tape, &store, xv, &p).unwrap();
        let o = tape.value(out);
        for pix in 1..64 {
            for ch in 0..8 {
                assert!(
                    (o[pix * 8 + ch] - o[ch]).abs() < 1e-10,
                    "pixel {pix} channel {ch} differs"
                );
            }
        }
    }

    #[test]
    fn block_rejects_bad_geometry() {
        let (store, p, _) = block_setup(7, 8, 1, InitScheme::Train);
        let mut tape: Tape<f64> = Tape::new();
        let odd = tape.input(&Tensor::zeros(&[5, 8, 8]));
        assert!(fet_block(&mut tape, &store, odd, &p).is_err());
        let wrong_dim = tape.input(&Tensor::zeros(&[8, 8, 12]));
        assert!(fet_block(&mut tape, &store, wrong_dim, &p).is_err());
        assert!(FetBlockParams::register(
            &mut ParamStore::<f64>::new(),
            "x",
            10,
            1,
            1.0,
            InitScheme::Train,
            &mut Prng::new(0)
        )
        .is_err());
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut rng = Prng::new(8);
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = FetBlockParams::register(
            &mut store,
            "blk",
            4,
            1,
            0.8,
            InitScheme::Spectral,
            &mut rng,
        )
        .unwrap();
        let x = Tensor::<f64>::from_fn(&[4, 4, 4], |_| rng.normal());
        let ids = p.param_ids();
        let rep = grad_check(
            &|tape, store| {
                let xv = tape.input(&x);
                let out = fet_block(tape, store, xv, &p)?;
                let sq = tape.mul(out, out)?;
                Ok(tape.sum_all(sq))
            },
            &mut store,
            &ids,
            1e-5,
            None,
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-6, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn identity_layer_when_residual_outputs_are_zero() {
        let mut rng = Prng::new(9);
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = FetLayerParams::register(
            &mut store,
            "layer",
            8,
            2,
            1.0,
            InitScheme::Train,
            &mut rng,
        )
        .unwrap();
        // Train scheme zeroes wo and w2 (and biases) already.
        let x = Tensor::<f64>::from_fn(&[64, 8], |_| rng.normal());
        let mut tape = Tape::new();
        let xv = tape.input(&x);
        let t = TokenMap::new(&tape, xv, 8, 8).unwrap();
        let out = fet_layer(&mut tape, &store, t, &p).unwrap();
        assert_eq!(tape.value(out.var), x.data());
    }

    #[test]
    fn layer_preserves_shape_and_differentiates() {
        let mut rng = Prng::new(10);
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = FetLayerParams::register(
            &mut store,
            "layer",
            4,
            1,
            1.0,
            InitScheme::Spectral,
            &mut rng,
        )
        .unwrap();
        let x = Tensor::<f64>::from_fn(&[16, 4], |_| rng.normal());
        let mut tape = Tape::new();
        let xv = tape.input(&x);
        let t = TokenMap::new(&tape, xv, 4, 4).unwrap();
        let out = fet_layer(&mut tape, &store, t, &p).unwrap();
        assert_eq!(tape.shape(out.var), &[16, 4]);

        let ids: Vec<_> = store.ids().collect();
        let rep = grad_check(
            &|tape, store| {
                let xv = tape.input(&x);
                let t = TokenMap::new(tape, xv, 4, 4).unwrap();
                let out = fet_layer(tape, store, t, &p)?;
                let sq = tape.mul(out.var, out.var)?;
                Ok(tape.sum_all(sq))
            },
            &mut store,
            &ids,
            1e-5,
            Some(6),
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-5, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn std_layer_identity_and_shape() {
        let mut rng = Prng::new(11);
        let mut store: ParamStore<f64> = ParamStore::new();
        let p =
            StdLayerParams::register(&mut store, "layer", 8, 2, InitScheme::Train, &mut rng)
                .unwrap();
        let x = Tensor::<f64>::from_fn(&[16, 8], |_| rng.normal());
        let mut tape = Tape::new();
        let xv = tape.input(&x);
        let t = TokenMap::new(&tape, xv, 4, 4).unwrap();
        let out = std_layer(&mut tape, &store, t, &p).unwrap();
        assert_eq!(tape.value(out.var), x.data());
    }
// temp bisect test — appended to fet.rs tests
}
