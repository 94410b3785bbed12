//! Hard-label evaluation metrics: Dice similarity and Hausdorff distance.

/// Dice similarity coefficient of one class between two label maps.
/// Two empty masks count as a perfect match.
pub fn dsc(pred: &[usize], target: &[usize], class: usize) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let mut inter = 0usize;
    let mut p = 0usize;
    let mut t = 0usize;
    for (&a, &b) in pred.iter().zip(target.iter()) {
        let pa = a == class;
        let tb = b == class;
        inter += (pa && tb) as usize;
        p += pa as usize;
        t += tb as usize;
    }
    if p + t == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (p + t) as f64
}

pub fn mean_dsc(pred: &[usize], target: &[usize], classes: usize) -> f64 {
    (0..classes).map(|c| dsc(pred, target, c)).sum::<f64>() / classes as f64
}

/// Boundary pixels of a mask: mask pixels with a 4-neighbor outside the mask
/// (the image border counts as outside).
fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let edge = y == 0
                || x == 0
                || y == h - 1
                || x == w - 1
                || !mask[(y - 1) * w + x]
                || !mask[(y + 1) * w + x]
                || !mask[y * w + x - 1]
                || !mask[y * w + x + 1];
            if edge {
                out.push((y, x));
            }
        }
    }
    out
}

fn directed(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    a.iter()
        .map(|&(ay, ax)| {
            b.iter()
                .map(|&(by, bx)| {
                    let dy = ay as f64 - by as f64;
                    let dx = ax as f64 - bx as f64;
                    (dy * dy + dx * dx).sqrt()
                })
                .fold(f64::MAX, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Symmetric Hausdorff distance between mask boundaries (Euclidean,
/// max of directed min-distances). Conventions for degenerate masks: both
/// empty is 0 (identical boundaries); exactly one empty returns the image
/// diagonal as a documented sentinel.
pub fn hausdorff(pred: &[bool], target: &[bool], h: usize, w: usize) -> f64 {
    let pa = boundary(pred, h, w);
    let pb = boundary(target, h, w);
    match (pa.is_empty(), pb.is_empty()) {
        (true, true) => 0.0,
        (true, false) | (false, true) => {
            (((h - 1) * (h - 1) + (w - 1) * (w - 1)) as f64).sqrt()
        }
        (false, false) => directed(&pa, &pb).max(directed(&pb, &pa)),
    }
}

/// Hausdorff distance for one class of two label maps.
pub fn hausdorff_class(pred: &[usize], target: &[usize], class: usize, h: usize, w: usize) -> f64 {
    let pm: Vec<bool> = pred.iter().map(|&v| v == class).collect();
    let tm: Vec<bool> = target.iter().map(|&v| v == class).collect();
    hausdorff(&pm, &tm, h, w)
}
