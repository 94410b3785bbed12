//! U-shaped encoder-decoder segmentation model with FET layers and the MSCE
//! skip bridge, plus a matched standard-attention variant for comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fet::{fet_layer, std_layer, FetLayerParams, InitScheme, StdLayerParams};
use crate::loss::{combined_loss, CombinedLoss};
use crate::msce::{msce_bridge, MsceParams, StagePyramid};
use crate::nn::TokenMap;
use crate::params::{Init, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Prng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Fet,
    Standard,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub input_channels: usize,
    pub stage_depths: [usize; 4],
    pub stage_dims: [usize; 4],
    pub num_classes: usize,
    pub pyramid_levels: usize,
    pub gauss_sigma: f64,
    pub se_ratio: usize,
    pub w_dice: f64,
    pub w_ce: f64,
    pub attention: AttentionKind,
    pub use_msce: bool,
    pub mhsa_heads: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: minutes on one CPU core.
    pub fn toy() -> ModelConfig {
        ModelConfig {
            input_h: 64,
            input_w: 64,
            input_channels: 1,
            stage_depths: [1, 1, 1, 1],
            stage_dims: [16, 32, 64, 128],
            num_classes: 4,
            pyramid_levels: 3,
            gauss_sigma: 1.0,
            se_ratio: 4,
            w_dice: 0.6,
            w_ce: 0.4,
            attention: AttentionKind::Fet,
            use_msce: true,
            mhsa_heads: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_h % 32 != 0 || self.input_w % 32 != 0 {
            return Err(Error::config(format!(
                "input {}x{} must be divisible by 32 (stem plus three merges)",
                self.input_h, self.input_w
            )));
        }
        for w in self.stage_dims.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::config(format!(
                    "stage dims {:?} must be strictly increasing",
                    self.stage_dims
                )));
            }
        }
        for &d in &self.stage_dims {
            if d % 4 != 0 {
                return Err(Error::config(format!(
                    "stage dims {:?} must be divisible by 4",
                    self.stage_dims
                )));
            }
            if self.se_ratio == 0 || d % self.se_ratio != 0 {
                return Err(Error::config(format!(
                    "se_ratio {} must divide every stage dim {:?}",
                    self.se_ratio, self.stage_dims
                )));
            }
            if self.attention == AttentionKind::Standard
                && (self.mhsa_heads == 0 || d % self.mhsa_heads != 0)
            {
                return Err(Error::config(format!(
                    "mhsa_heads {} must divide every stage dim {:?}",
                    self.mhsa_heads, self.stage_dims
                )));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least 2 classes".to_string()));
        }
        if self.stage_depths.iter().any(|&d| d == 0) {
            return Err(Error::config("stage depths must be at least 1".to_string()));
        }
        if self.pyramid_levels == 0 || self.gauss_sigma <= 0.0 {
            return Err(Error::config(
                "pyramid_levels must be >= 1 and gauss_sigma > 0".to_string(),
            ));
        }
        if !(self.w_dice >= 0.0 && self.w_ce >= 0.0) {
            return Err(Error::config("loss weights must be nonnegative".to_string()));
        }
        Ok(())
    }

    pub fn stage_spatial(&self, stage: usize) -> (usize, usize) {
        (self.input_h / 4 / (1 << stage), self.input_w / 4 / (1 << stage))
    }
}

enum Layer {
    Fet(FetLayerParams),
    Std(StdLayerParams),
}

struct ConvWeights {
    w: ParamId,
    b: ParamId,
}

struct LinearWeights {
    w: ParamId,
    b: ParamId,
}

pub struct Model {
    pub cfg: ModelConfig,
    stem: ConvWeights,
    encoder: Vec<Vec<Layer>>,
    merges: Vec<ConvWeights>,
    msce: Option<MsceParams>,
    expands: Vec<LinearWeights>,
    fuses: Vec<LinearWeights>,
    decoder: Vec<Vec<Layer>>,
    head: LinearWeights,
}

/// 4x4 stride-4 convolution stem.
pub fn patch_embed<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    w: ParamId,
    b: ParamId,
) -> Result<Var> {
    let wv = tape.param(store, w);
    let bv = tape.param(store, b);
    tape.conv2d(x, wv, Some(bv), 4, 0, 1)
}

/// 2x2 stride-2 convolution between stages.
pub fn patch_merge<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    w: ParamId,
    b: ParamId,
) -> Result<Var> {
    let wv = tape.param(store, w);
    let bv = tape.param(store, b);
    tape.conv2d(x, wv, Some(bv), 2, 0, 1)
}

/// Bilinear 2x upsample plus pointwise channel projection.
pub fn patch_expand<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    w: ParamId,
    b: ParamId,
) -> Result<Var> {
    let up = tape.up2_bilinear(x)?;
    pointwise(tape, store, up, w, b)
}

/// 1x1 channel map implemented as a token-level linear layer.
fn pointwise<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    w: ParamId,
    b: ParamId,
) -> Result<Var> {
    let sh = tape.shape(x).to_vec();
    let flat = tape.flatten_spatial(x)?;
    let wv = tape.param(store, w);
    let bv = tape.param(store, b);
    let y = tape.matmul(flat, wv)?;
    let y = tape.add(y, bv)?;
    tape.unflatten_spatial(y, sh[0], sh[1])
}

impl Model {
    pub fn build<T: Real>(cfg: ModelConfig, seed: u64) -> Result<(Model, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Prng::derive(seed, &[0x30de1]);
        let scheme = InitScheme::Train;
        let dims = cfg.stage_dims;
        let cin = cfg.input_channels;

        let stem = ConvWeights {
            w: store.register(
                "stem.w",
                &[4, 4, cin, dims[0]],
                Init::KaimingConv { fan_in: 16 * cin },
                &mut rng,
            ),
            b: store.register("stem.b", &[dims[0]], Init::Zeros, &mut rng),
        };

        let mut encoder = Vec::new();
        for (i, &d) in dims.iter().enumerate() {
            let mut layers = Vec::new();
            for l in 0..cfg.stage_depths[i] {
                layers.push(register_layer(
                    &mut store,
                    &format!("enc.s{i}.l{l}"),
                    &cfg,
                    d,
                    scheme,
                    &mut rng,
                )?);
            }
            encoder.push(layers);
        }

        let mut merges = Vec::new();
        for i in 0..3 {
            merges.push(ConvWeights {
                w: store.register(
                    &format!("merge{i}.w"),
                    &[2, 2, dims[i], dims[i + 1]],
                    Init::KaimingConv { fan_in: 4 * dims[i] },
                    &mut rng,
                ),
                b: store.register(&format!("merge{i}.b"), &[dims[i + 1]], Init::Zeros, &mut rng),
            });
        }

        let msce = if cfg.use_msce {
            Some(MsceParams::register(
                &mut store,
                "msce",
                &dims,
                cfg.pyramid_levels,
                cfg.gauss_sigma,
                cfg.se_ratio,
                scheme,
                &mut rng,
            )?)
        } else {
            None
        };

        let mut expands = Vec::new();
        let mut fuses = Vec::new();
        let mut decoder = Vec::new();
        for i in (0..3).rev() {
            expands.push(LinearWeights {
                w: store.register(
                    &format!("dec.s{i}.expand.w"),
                    &[dims[i + 1], dims[i]],
                    Init::KaimingConv { fan_in: dims[i + 1] },
                    &mut rng,
                ),
                b: store.register(&format!("dec.s{i}.expand.b"), &[dims[i]], Init::Zeros, &mut rng),
            });
            fuses.push(LinearWeights {
                w: store.register(
                    &format!("dec.s{i}.fuse.w"),
                    &[2 * dims[i], dims[i]],
                    Init::KaimingConv { fan_in: 2 * dims[i] },
                    &mut rng,
                ),
                b: store.register(&format!("dec.s{i}.fuse.b"), &[dims[i]], Init::Zeros, &mut rng),
            });
            let mut layers = Vec::new();
            for l in 0..cfg.stage_depths[i] {
                layers.push(register_layer(
                    &mut store,
                    &format!("dec.s{i}.l{l}"),
                    &cfg,
                    dims[i],
                    scheme,
                    &mut rng,
                )?);
            }
            decoder.push(layers);
        }

        let head = LinearWeights {
            w: store.register(
                "head.w",
                &[dims[0], cfg.num_classes],
                Init::TruncNormal { std: 0.02 },
                &mut rng,
            ),
            b: store.register("head.b", &[cfg.num_classes], Init::Zeros, &mut rng),
        };

        Ok((
            Model {
                cfg,
                stem,
                encoder,
                merges,
                msce,
                expands,
                fuses,
                decoder,
                head,
            },
            store,
        ))
    }

    /// Full-resolution class logits `[H,W,num_classes]`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        image: &Tensor<T>,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        if image.shape() != [cfg.input_h, cfg.input_w, cfg.input_channels] {
            return Err(Error::config(format!(
                "image shape {:?} does not match configured {}x{}x{}",
                image.shape(),
                cfg.input_h,
                cfg.input_w,
                cfg.input_channels
            )));
        }
        let xv = tape.input(image);
        let mut cur = patch_embed(tape, store, xv, self.stem.w, self.stem.b)?;

        let mut skips = Vec::with_capacity(4);
        for (i, layers) in self.encoder.iter().enumerate() {
            cur = run_stage(tape, store, cur, layers)?;
            skips.push(cur);
            if i < 3 {
                cur = patch_merge(tape, store, cur, self.merges[i].w, self.merges[i].b)?;
            }
        }

        let refined = match &self.msce {
            Some(p) => {
                let pyr = StagePyramid::new(tape, skips)?;
                msce_bridge(tape, store, &pyr, p)?.stages
            }
            None => skips,
        };

        let mut dec = refined[3];
        for (k, stage) in (0..3).rev().enumerate() {
            dec = patch_expand(tape, store, dec, self.expands[k].w, self.expands[k].b)?;
            let cat = tape.concat(&[dec, refined[stage]], 2)?;
            let fused = pointwise(tape, store, cat, self.fuses[k].w, self.fuses[k].b)?;
            dec = run_stage(tape, store, fused, &self.decoder[k])?;
        }

        // 4x bilinear expansion back to input resolution, then classify.
        let up = tape.up2_bilinear(dec)?;
        let up = tape.up2_bilinear(up)?;
        pointwise(tape, store, up, self.head.w, self.head.b)
    }

    /// Forward plus combined loss against a flat label map.
    pub fn loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        image: &Tensor<T>,
        labels: &[usize],
    ) -> Result<(CombinedLoss, Var)> {
        let logits = self.forward(tape, store, image)?;
        let n = self.cfg.input_h * self.cfg.input_w;
        if labels.len() != n {
            return Err(Error::dim(format!(
                "label map has {} pixels, expected {n}",
                labels.len()
            )));
        }
        let flat = tape.reshape(logits, vec![n, self.cfg.num_classes])?;
        let loss = combined_loss(tape, flat, labels, self.cfg.w_dice, self.cfg.w_ce)?;
        Ok((loss, logits))
    }

    /// Hard label map by per-pixel argmax.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, image: &Tensor<T>) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, store, image)?;
        Ok(argmax_labels(
            tape.value(logits),
            self.cfg.num_classes,
        ))
    }
}

pub fn argmax_labels<T: Real>(logits: &[T], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0usize;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn register_layer<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &ModelConfig,
    dim: usize,
    scheme: InitScheme,
    rng: &mut Prng,
) -> Result<Layer> {
    Ok(match cfg.attention {
        AttentionKind::Fet => Layer::Fet(FetLayerParams::register(
            store,
            prefix,
            dim,
            cfg.pyramid_levels,
            cfg.gauss_sigma,
            scheme,
            rng,
        )?),
        AttentionKind::Standard => Layer::Std(StdLayerParams::register(
            store,
            prefix,
            dim,
            cfg.mhsa_heads,
            scheme,
            rng,
        )?),
    })
}

/// Run one stage's layers on a spatial map. Odd extents (e.g. 7x7 stages of a
/// 224 input) are edge-replicated to even for the wavelet split inside FET
/// layers and cropped back afterwards.
fn run_stage<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    mut sp: Var,
    layers: &[Layer],
) -> Result<Var> {
    for layer in layers {
        let sh = tape.shape(sp).to_vec();
        let (h, w) = (sh[0], sh[1]);
        match layer {
            Layer::Fet(p) => {
                let (ph, pw) = (h % 2, w % 2);
                if ph == 0 && pw == 0 {
                    let tokens = tape.flatten_spatial(sp)?;
                    let t = TokenMap::new(tape, tokens, h, w)?;
                    let out = fet_layer(tape, store, t, p)?;
                    sp = tape.unflatten_spatial(out.var, h, w)?;
                } else {
                    let padded = tape.pad_edge2d(sp, ph, pw)?;
                    let tokens = tape.flatten_spatial(padded)?;
                    let t = TokenMap::new(tape, tokens, h + ph, w + pw)?;
                    let out = fet_layer(tape, store, t, p)?;
                    let full = tape.unflatten_spatial(out.var, h + ph, w + pw)?;
                    let rows = tape.slice(full, 0, 0, h)?;
                    sp = tape.slice(rows, 1, 0, w)?;
                }
            }
            Layer::Std(p) => {
                let tokens = tape.flatten_spatial(sp)?;
                let t = TokenMap::new(tape, tokens, h, w)?;
                let out = std_layer(tape, store, t, p)?;
                sp = tape.unflatten_spatial(out.var, h, w)?;
            }
        }
    }
    Ok(sp)
}
