//! Central-finite-difference verification of tape gradients.
//!
//! Meant for 64-bit tapes; at 32 bits the difference quotient drowns in
//! rounding noise.

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// A scalar-valued computation rebuilt from the current store contents.
pub type ScalarFn<'a> = dyn Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var> + 'a;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over checked coordinates of |a - n| / (|a| + |n| + 1e-12).
    /// Coordinates where the two sides agree within the central-difference
    /// noise floor 32*eps*max(1,|f|)/(2h) count as exact: a structurally
    /// zero or sub-nano derivative (softmax is shift-invariant in the keys,
    /// residual projections start at zero) leaves the quotient with no
    /// significant digits, and the relative form would report that rounding
    /// noise as an error no implementation could avoid.
    pub max_rel_err: f64,
    /// Coordinates skipped because the loss is locally kinked there
    /// (one-sided difference quotients disagree, e.g. a dead ReLU).
    pub kinks_skipped: usize,
    pub coords_checked: usize,
}

/// Check every coordinate of the listed parameters (or a deterministic
/// subsample when `max_coords_per_param` is set).
pub fn grad_check(
    f: &ScalarFn,
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    h: f64,
    max_coords_per_param: Option<usize>,
) -> Result<GradCheckReport> {
    assert!((1e-7..=1e-3).contains(&h), "step size h={h} outside [1e-7, 1e-3]");

    // Analytic pass.
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&id| {
            tape.param_grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; store.value(id).len()])
        })
        .collect();
    let f0 = tape.value(loss)[0];
    drop(tape);

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        Ok(t.value(l)[0])
    };

    let mut max_rel_err = 0.0f64;
    let mut kinks = 0usize;
    let mut checked = 0usize;
    let noise_floor = (32.0 * f64::EPSILON * f0.abs().max(1.0) / (2.0 * h)).max(1e-12);
    for (pi, &id) in params.iter().enumerate() {
        let n = store.value(id).len();
        let stride = match max_coords_per_param {
            Some(m) if n > m => n.div_euclid(m).max(1),
            _ => 1,
        };
        let mut coord = 0;
        while coord < n {
            store.nudge(id, coord, h);
            let fp = eval(store)?;
            store.nudge(id, coord, -2.0 * h);
            let fm = eval(store)?;
            store.nudge(id, coord, h);

            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pi][coord];
            // Kink detection: the two one-sided quotients around the base
            // point must agree, otherwise the loss is not differentiable
            // here and the central difference is meaningless.
            let right = (fp - f0) / h;
            let left = (f0 - fm) / h;
            let scale = right.abs().max(left.abs()).max(1.0);
            if (right - left).abs() > 1e-3 * scale {
                kinks += 1;
            } else {
                let diff = (a - numeric).abs();
                let rel = if diff <= noise_floor {
                    0.0
                } else {
                    diff / (a.abs() + numeric.abs() + 1e-12)
                };
                if rel > max_rel_err {
                    max_rel_err = rel;
                }
                checked += 1;
            }
            coord += stride;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        kinks_skipped: kinks,
        coords_checked: checked,
    })
}

/// One entry of the per-operation verification battery.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub kinks_skipped: usize,
    pub instances: usize,
}

/// Finite-difference checks for every differentiable tape operation, each on
/// `instances` random instances. Composite blocks are checked separately.
pub fn op_battery(seed: u64, instances: usize) -> Result<Vec<OpCheck>> {
    use crate::params::Init;
    use crate::rng::Prng;

    type Builder<'a> =
        Box<dyn Fn(&mut Tape<f64>, &ParamStore<f64>, &[ParamId]) -> Result<Var> + 'a>;

    // (name, shapes of the parameters, builder from registered params)
    let cases: Vec<(&'static str, Vec<Vec<usize>>, Builder)> = vec![
        (
            "add_broadcast",
            vec![vec![2, 3, 4], vec![4]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let b = t.param(s, p[1]);
                let y = t.add(a, b)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "sub_broadcast",
            vec![vec![3, 4], vec![1, 4]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let b = t.param(s, p[1]);
                let y = t.sub(a, b)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "mul_broadcast",
            vec![vec![2, 3, 4], vec![3, 1]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let b = t.param(s, p[1]);
                let y = t.mul(a, b)?;
                Ok(t.sum_all(y))
            }),
        ),
        (
            "div",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let b = t.param(s, p[1]);
                let shifted = t.add_scalar(b, 3.0); // keep denominators away from 0
                let y = t.div(a, shifted)?;
                Ok(t.sum_all(y))
            }),
        ),
        (
            "scale_add_scalar",
            vec![vec![5]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let y = t.scale(a, -1.7);
                let z = t.add_scalar(y, 0.4);
                let z2 = t.mul(z, z)?;
                Ok(t.sum_all(z2))
            }),
        ),
        (
            "sigmoid",
            vec![vec![2, 6]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let y = t.sigmoid(a);
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "gelu",
            vec![vec![2, 6]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let y = t.gelu(a);
                Ok(t.sum_all(y))
            }),
        ),
        (
            "exp",
            vec![vec![6]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let y = t.exp(a);
                Ok(t.sum_all(y))
            }),
        ),
        (
            "relu",
            vec![vec![8]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let y = t.relu(a);
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "matmul",
            vec![vec![4, 3], vec![3, 5]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let b = t.param(s, p[1]);
                let y = t.matmul(a, b)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "transpose2d",
            vec![vec![3, 5]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let y = t.transpose2d(a)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "softmax_rows",
            vec![vec![3, 5]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let y = t.softmax(a, 1)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "softmax_positions",
            vec![vec![4, 3]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let y = t.softmax(a, 0)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "layernorm",
            vec![vec![2, 6], vec![6], vec![6]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let g = t.param(s, p[1]);
                let b = t.param(s, p[2]);
                let y = t.layernorm(x, g, b, 1e-6)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "conv2d_1x1",
            vec![vec![4, 5, 3], vec![1, 1, 3, 2], vec![2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let w = t.param(s, p[1]);
                let b = t.param(s, p[2]);
                let y = t.conv2d(x, w, Some(b), 1, 0, 1)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "conv2d_3x3_pad1",
            vec![vec![5, 5, 2], vec![3, 3, 2, 3], vec![3]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let w = t.param(s, p[1]);
                let b = t.param(s, p[2]);
                let y = t.conv2d(x, w, Some(b), 1, 1, 1)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "conv2d_depthwise",
            vec![vec![5, 5, 4], vec![3, 3, 1, 4], vec![4]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let w = t.param(s, p[1]);
                let b = t.param(s, p[2]);
                let y = t.conv2d(x, w, Some(b), 1, 1, 4)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "conv2d_strided",
            vec![vec![6, 6, 2], vec![2, 2, 2, 3]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let w = t.param(s, p[1]);
                let y = t.conv2d(x, w, None, 2, 0, 1)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "conv_across_axis_fuse",
            vec![vec![3, 4, 4, 2], vec![3, 2], vec![2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let w = t.param(s, p[1]);
                let b = t.param(s, p[2]);
                let y = t.conv_across_axis(x, w, Some(b), true)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "conv_across_axis_preserve",
            vec![vec![3, 4, 4, 2], vec![3, 2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let w = t.param(s, p[1]);
                let y = t.conv_across_axis(x, w, None, false)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "reshape_concat_split",
            vec![vec![2, 6], vec![1, 6]],
            Box::new(|t, s, p| {
                let a = t.param(s, p[0]);
                let b = t.param(s, p[1]);
                let cat = t.concat(&[a, b], 0)?;
                let parts = t.split(cat, 0, &[1, 2])?;
                let r = t.reshape(parts[1], vec![3, 4])?;
                let y2 = t.mul(r, r)?;
                let scaled = t.scale(parts[0], 2.0);
                let s1 = t.sum_all(scaled);
                let s2 = t.sum_all(y2);
                t.add(s1, s2)
            }),
        ),
        (
            "down2_avg",
            vec![vec![4, 6, 2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let y = t.down2_avg(x)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "up2_nearest",
            vec![vec![3, 4, 2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let y = t.up2_nearest(x)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "up2_bilinear",
            vec![vec![3, 4, 2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let y = t.up2_bilinear(x)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "blur_axis",
            vec![vec![5, 4, 2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let k = crate::fet::gaussian_kernel(1.0);
                let y = t.blur_axis(x, &k, 0)?;
                let z = t.blur_axis(y, &k, 1)?;
                let z2 = t.mul(z, z)?;
                Ok(t.sum_all(z2))
            }),
        ),
        (
            "pad_edge2d",
            vec![vec![3, 3, 2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let y = t.pad_edge2d(x, 1, 1)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "dwt2",
            vec![vec![4, 4, 2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let sub = crate::wavelet::dwt2(t, x)?;
                let a = t.mul(sub.lh, sub.lh)?;
                let b = t.mul(sub.ll, sub.hl)?;
                let c = t.add(a, b)?;
                let d = t.add(c, sub.hh)?;
                Ok(t.sum_all(d))
            }),
        ),
        (
            "idwt2",
            vec![vec![2, 2, 2], vec![2, 2, 2], vec![2, 2, 2], vec![2, 2, 2]],
            Box::new(|t, s, p| {
                let bands: Vec<Var> = p.iter().map(|&id| t.param(s, id)).collect();
                let y = t.idwt2_raw(bands[0], bands[1], bands[2], bands[3])?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum_all(y2))
            }),
        ),
        (
            "sum_axis_mean",
            vec![vec![3, 4, 2]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                let y = t.sum_axis(x, 1)?;
                let y2 = t.mul(y, y)?;
                Ok(t.mean_all(y2))
            }),
        ),
        (
            "cross_entropy",
            vec![vec![4, 3]],
            Box::new(|t, s, p| {
                let x = t.param(s, p[0]);
                t.cross_entropy(x, &[0, 2, 1, 2])
            }),
        ),
    ];

    let mut out = Vec::with_capacity(cases.len());
    for (name, shapes, builder) in &cases {
        let mut worst = 0.0f64;
        let mut kinks = 0usize;
        for inst in 0..instances {
            let mut rng = Prng::derive(seed, &[0x0bba77e2, inst as u64, out.len() as u64]);
            let mut store: ParamStore<f64> = ParamStore::new();
            let ids: Vec<ParamId> = shapes
                .iter()
                .enumerate()
                .map(|(i, sh)| {
                    store.register(
                        &format!("p{i}"),
                        sh,
                        Init::TruncNormal { std: 0.8 },
                        &mut rng,
                    )
                })
                .collect();
            let rep = grad_check(
                &|tape, store| builder(tape, store, &ids),
                &mut store,
                &ids,
                1e-5,
                None,
            )?;
            worst = worst.max(rep.max_rel_err);
            kinks += rep.kinks_skipped;
        }
        out.push(OpCheck {
            name,
            max_rel_err: worst,
            kinks_skipped: kinks,
            instances,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use crate::rng::Prng;

    #[test]
    fn sum_of_sigmoid_matches_analytic() {
        let mut rng = Prng::new(9);
        let mut store: ParamStore<f64> = ParamStore::new();
        let x = store.register("x", &[6], Init::TruncNormal { std: 1.0 }, &mut rng);
        let rep = grad_check(
            &|tape, store| {
                let v = tape.param(store, x);
                let s = tape.sigmoid(v);
                Ok(tape.sum_all(s))
            },
            &mut store,
            &[x],
            1e-5,
            None,
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-7, "rel err {}", rep.max_rel_err);
        assert_eq!(rep.kinks_skipped, 0);
    }

    #[test]
    fn matmul_chain_matches_analytic() {
        let mut rng = Prng::new(10);
        let mut store: ParamStore<f64> = ParamStore::new();
        let a = store.register("a", &[4, 3], Init::TruncNormal { std: 0.8 }, &mut rng);
        let b = store.register("b", &[3, 5], Init::TruncNormal { std: 0.8 }, &mut rng);
        let rep = grad_check(
            &|tape, store| {
                let av = tape.param(store, a);
                let bv = tape.param(store, b);
                let c = tape.matmul(av, bv)?;
                let c2 = tape.mul(c, c)?;
                Ok(tape.sum_all(c2))
            },
            &mut store,
            &[a, b],
            1e-5,
            None,
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-6, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn battery_covers_every_op_below_tolerance() {
        let checks = op_battery(7, 2).unwrap();
        assert!(checks.len() >= 25);
        for c in &checks {
            assert!(
                c.max_rel_err <= 1e-5,
                "{}: rel err {:.3e}",
                c.name,
                c.max_rel_err
            );
        }
    }

    #[test]
    fn dead_relu_coordinate_is_reported_as_kink() {
        let mut store: ParamStore<f64> = ParamStore::new();
        // 0.0 sits exactly on the ReLU kink.
        let x = store.register_value("x", &[3], vec![-1.0, 0.0, 2.0]);
        let rep = grad_check(
            &|tape, store| {
                let v = tape.param(store, x);
                let r = tape.relu(v);
                Ok(tape.sum_all(r))
            },
            &mut store,
            &[x],
            1e-5,
            None,
        )
        .unwrap();
        assert_eq!(rep.kinks_skipped, 1);
        assert!(rep.max_rel_err <= 1e-9);
    }
}
