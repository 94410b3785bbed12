//! Synthetic segmentation data: anti-aliased ellipses, rectangles, and thin
//! rings over textured backgrounds, with per-pixel labels. Rings are 1-2 px
//! wide, so getting them right requires edge fidelity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub size: usize,
    pub classes: usize,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size % 32 != 0 {
            return Err(Error::config(format!(
                "image size {} must be divisible by 32",
                self.size
            )));
        }
        if self.classes < 2 || self.classes > 10 {
            return Err(Error::config(format!(
                "classes {} out of supported range 2..=10",
                self.classes
            )));
        }
        if self.n == 0 {
            return Err(Error::config("need at least one sample".to_string()));
        }
        Ok(())
    }
}

pub struct Dataset {
    pub images: Vec<Tensor<f64>>,
    pub labels: Vec<Vec<usize>>,
    pub size: usize,
    pub classes: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct IndexItem {
    image: String,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    n: usize,
    size: usize,
    classes: usize,
    seed: u64,
    items: Vec<IndexItem>,
}

enum ShapeKind {
    Ellipse,
    Rectangle,
    Ring,
}

impl ShapeKind {
    fn for_class(class: usize) -> ShapeKind {
        match (class - 1) % 3 {
            0 => ShapeKind::Ellipse,
            1 => ShapeKind::Rectangle,
            _ => ShapeKind::Ring,
        }
    }
}

/// Signed distance to the shape boundary (negative inside).
fn shape_sdf(kind: &ShapeKind, x: f64, y: f64, geo: &[f64]) -> f64 {
    match kind {
        ShapeKind::Ellipse => {
            let (cx, cy, a, b, rot) = (geo[0], geo[1], geo[2], geo[3], geo[4]);
            let (dx, dy) = (x - cx, y - cy);
            let (c, s) = (rot.cos(), rot.sin());
            let u = (c * dx + s * dy) / a;
            let v = (-s * dx + c * dy) / b;
            ((u * u + v * v).sqrt() - 1.0) * a.min(b)
        }
        ShapeKind::Rectangle => {
            let (cx, cy, hw, hh) = (geo[0], geo[1], geo[2], geo[3]);
            let dx = (x - cx).abs() - hw;
            let dy = (y - cy).abs() - hh;
            let ox = dx.max(0.0);
            let oy = dy.max(0.0);
            (ox * ox + oy * oy).sqrt() + dx.max(dy).min(0.0)
        }
        ShapeKind::Ring => {
            let (cx, cy, r, half_w) = (geo[0], geo[1], geo[2], geo[3]);
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            (d - r).abs() - half_w
        }
    }
}

/// One deterministic sample: `[S,S,1]` image in roughly [0,1] and a flat
/// label map.
pub fn generate_sample(cfg: &SynthConfig, index: usize) -> (Tensor<f64>, Vec<usize>) {
    let s = cfg.size;
    let sf = s as f64;
    let mut rng = Prng::derive(cfg.seed, &[0x5a17, index as u64]);

    // Bandlimited background texture from a handful of low-frequency waves.
    let mut waves = Vec::new();
    for _ in 0..3 {
        waves.push((
            rng.range(0.5, 2.5),
            rng.range(0.5, 2.5),
            rng.range(0.0, std::f64::consts::TAU),
            rng.range(0.02, 0.05),
        ));
    }
    let mut img = vec![0.0f64; s * s];
    for y in 0..s {
        for x in 0..s {
            let mut v = 0.22;
            for &(fu, fv, ph, amp) in &waves {
                v += amp
                    * (std::f64::consts::TAU * (fu * x as f64 + fv * y as f64) / sf + ph).cos();
            }
            img[y * s + x] = v;
        }
    }
    let mut labels = vec![0usize; s * s];

    // One shape per foreground class, centered in distinct image cells so
    // later classes rarely bury earlier ones.
    let n_shapes = cfg.classes - 1;
    let cells = rng.permutation(4);
    for class in 1..cfg.classes {
        let kind = ShapeKind::for_class(class);
        let cell = cells[(class - 1) % 4];
        let (cell_x, cell_y) = ((cell % 2) as f64, (cell / 2) as f64);
        let cx = sf * (0.25 + 0.5 * cell_x) + rng.range(-0.08, 0.08) * sf;
        let cy = sf * (0.25 + 0.5 * cell_y) + rng.range(-0.08, 0.08) * sf;
        let geo: Vec<f64> = match kind {
            ShapeKind::Ellipse => vec![
                cx,
                cy,
                rng.range(sf / 10.0, sf / 5.0),
                rng.range(sf / 10.0, sf / 5.0),
                rng.range(0.0, std::f64::consts::PI),
            ],
            ShapeKind::Rectangle => vec![
                cx,
                cy,
                rng.range(sf / 12.0, sf / 5.0),
                rng.range(sf / 12.0, sf / 5.0),
            ],
            ShapeKind::Ring => vec![cx, cy, rng.range(sf / 8.0, sf / 4.0), rng.range(0.5, 1.0)],
        };
        // Distinct intensity band per class with a small per-image jitter.
        let base = 0.45 + 0.5 * class as f64 / n_shapes.max(1) as f64 + rng.range(-0.03, 0.03);
        let tex_f = rng.range(2.0, 5.0);
        let tex_p = rng.range(0.0, std::f64::consts::TAU);
        for y in 0..s {
            for x in 0..s {
                let d = shape_sdf(&kind, x as f64 + 0.5, y as f64 + 0.5, &geo);
                // 1 px anti-aliased coverage.
                let alpha = (0.5 - d).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let tex = 0.03
                        * (std::f64::consts::TAU * tex_f * (x as f64 + y as f64) / sf + tex_p)
                            .cos();
                    let shade = base + tex;
                    let i = y * s + x;
                    img[i] = img[i] * (1.0 - alpha) + shade * alpha;
                    if alpha >= 0.5 {
                        labels[i] = class;
                    }
                }
            }
        }
    }

    // Additive pixel noise after labeling.
    for v in &mut img {
        *v += 0.02 * rng.normal();
    }
    (
        Tensor::new(vec![s, s, 1], img).expect("image shape"),
        labels,
    )
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut images = Vec::with_capacity(cfg.n);
    let mut labels = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let (img, lab) = generate_sample(cfg, i);
        images.push(img);
        labels.push(lab);
    }
    Ok(Dataset {
        images,
        labels,
        size: cfg.size,
        classes: cfg.classes,
        seed: cfg.seed,
    })
}

/// Write images and labels as FTEN v1 plus an index JSON.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut items = Vec::with_capacity(ds.images.len());
    for (i, (img, lab)) in ds.images.iter().zip(ds.labels.iter()).enumerate() {
        let image = format!("img_{i:05}.ften");
        let label = format!("lab_{i:05}.ften");
        img.write_ften(&dir.join(&image))?;
        let lab_t = Tensor::<f64>::new(
            vec![ds.size, ds.size, 1],
            lab.iter().map(|&v| v as f64).collect(),
        )?;
        lab_t.write_ften(&dir.join(&label))?;
        items.push(IndexItem { image, label });
    }
    let index = IndexFile {
        n: ds.images.len(),
        size: ds.size,
        classes: ds.classes,
        seed: ds.seed,
        items,
    };
    std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let raw = std::fs::read_to_string(dir.join("index.json"))?;
    let index: IndexFile = serde_json::from_str(&raw)?;
    let mut images = Vec::with_capacity(index.n);
    let mut labels = Vec::with_capacity(index.n);
    for item in &index.items {
        let img = Tensor::<f64>::read_ften(&dir.join(&item.image))?;
        if img.shape() != [index.size, index.size, 1] {
            return Err(Error::Format(format!(
                "image {} has shape {:?}, index says {}x{}x1",
                item.image,
                img.shape(),
                index.size,
                index.size
            )));
        }
        let lab_t = Tensor::<f64>::read_ften(&dir.join(&item.label))?;
        let lab: Vec<usize> = lab_t.data().iter().map(|&v| v as usize).collect();
        if let Some(&bad) = lab.iter().find(|&&v| v >= index.classes) {
            return Err(Error::Format(format!(
                "label {} holds class {bad}, index says {} classes",
                item.label, index.classes
            )));
        }
        images.push(img);
        labels.push(lab);
    }
    Ok(Dataset {
        images,
        labels,
        size: index.size,
        classes: index.classes,
        seed: index.seed,
    })
}
