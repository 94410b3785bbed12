//! One-level 2D orthonormal Haar transform.
//!
//! `dwt2` splits `[H,W,C]` into four quarter-resolution subbands per channel:
//! LL keeps texture, LH holds horizontal details (variation across rows),
//! HL holds vertical details (variation across columns), HH holds diagonal
//! detail. The transform is orthonormal, so reconstruction is exact and
//! energy is preserved.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// The four subbands of one decomposition level, all `[H/2, W/2, C]`.
#[derive(Debug, Clone, Copy)]
pub struct WaveletSubbands {
    pub ll: Var,
    pub lh: Var,
    pub hl: Var,
    pub hh: Var,
    pub source_shape: (usize, usize, usize),
}

/// Orthonormal Haar analysis, rows then columns, stride 2, per channel.
/// Odd extents are rejected; pad with edge replication first
/// (`Tape::pad_edge2d`).
pub fn dwt2<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<WaveletSubbands> {
    let sh = tape.shape(x);
    if sh.len() != 3 {
        return Err(Error::dim(format!("dwt2 wants [H,W,C], got {sh:?}")));
    }
    let source_shape = (sh[0], sh[1], sh[2]);
    let (ll, lh, hl, hh) = tape.dwt2_raw(x)?;
    Ok(WaveletSubbands {
        ll,
        lh,
        hl,
        hh,
        source_shape,
    })
}

/// Perfect-reconstruction synthesis.
pub fn idwt2<T: Real>(tape: &mut Tape<T>, s: &WaveletSubbands) -> Result<Var> {
    let out = tape.idwt2_raw(s.ll, s.lh, s.hl, s.hh)?;
    let sh = tape.shape(out);
    if (sh[0], sh[1], sh[2]) != s.source_shape {
        return Err(Error::dim(format!(
            "subbands reconstruct to {:?}, source was {:?}",
            sh, s.source_shape
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, ParamStore};
    use crate::rng::Prng;
    use crate::tensor::Tensor;

    /// Naive separable filter-bank reference: low/high pass within each row
    /// (pairing adjacent columns), then low/high pass across rows, stride 2.
    /// Written from the filter definition; independent of the tape kernels.
    fn oracle_dwt2(x: &[f64], h: usize, w: usize, c: usize) -> [Vec<f64>; 4] {
        let s = 1.0 / 2.0f64.sqrt();
        let (ho, wo) = (h / 2, w / 2);
        // Row pass: [H, W/2, C] low and high.
        let mut lo = vec![0.0; h * wo * c];
        let mut hi = vec![0.0; h * wo * c];
        for y in 0..h {
            for k in 0..wo {
                for ch in 0..c {
                    let a = x[(y * w + 2 * k) * c + ch];
                    let b = x[(y * w + 2 * k + 1) * c + ch];
                    lo[(y * wo + k) * c + ch] = s * (a + b);
                    hi[(y * wo + k) * c + ch] = s * (a - b);
                }
            }
        }
        // Column pass across rows.
        let mut ll = vec![0.0; ho * wo * c];
        let mut lh = vec![0.0; ho * wo * c];
        let mut hl = vec![0.0; ho * wo * c];
        let mut hh = vec![0.0; ho * wo * c];
        for j in 0..ho {
            for k in 0..wo {
                for ch in 0..c {
                    let lt = lo[((2 * j) * wo + k) * c + ch];
                    let lb = lo[((2 * j + 1) * wo + k) * c + ch];
                    let ht = hi[((2 * j) * wo + k) * c + ch];
                    let hb = hi[((2 * j + 1) * wo + k) * c + ch];
                    let o = (j * wo + k) * c + ch;
                    ll[o] = s * (lt + lb);
                    lh[o] = s * (lt - lb);
                    hl[o] = s * (ht + hb);
                    hh[o] = s * (ht - hb);
                }
            }
        }
        [ll, lh, hl, hh]
    }

    fn run_dwt(t: &Tensor<f64>) -> (Tape<f64>, WaveletSubbands) {
        let mut tape = Tape::new();
        let x = tape.input(t);
        let s = dwt2(&mut tape, x).unwrap();
        (tape, s)
    }

    #[test]
    fn constant_image_concentrates_in_ll() {
        let t = Tensor::filled(&[4, 6, 2], 3.0f64);
        let (tape, s) = run_dwt(&t);
        assert!(tape.value(s.ll).iter().all(|&v| (v - 6.0).abs() < 1e-12));
        for band in [s.lh, s.hl, s.hh] {
            assert!(tape.value(band).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_by_two_block_matches_filter_bank_oracle() {
        let t = Tensor::from_f64_slice(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (tape, s) = run_dwt(&t);
        let [ll, lh, hl, hh] = oracle_dwt2(t.data(), 2, 2, 1);
        assert!((tape.value(s.ll)[0] - ll[0]).abs() < 1e-12);
        assert!((tape.value(s.lh)[0] - lh[0]).abs() < 1e-12);
        assert!((tape.value(s.hl)[0] - hl[0]).abs() < 1e-12);
        assert!((tape.value(s.hh)[0] - hh[0]).abs() < 1e-12);
        assert_eq!(tape.value(s.ll)[0], 5.0);
        assert_eq!(tape.value(s.lh)[0], -2.0);
        assert_eq!(tape.value(s.hl)[0], -1.0);
        assert_eq!(tape.value(s.hh)[0], 0.0);
    }

    /// Pins the orientation convention: a vertical edge (left half dark,
    /// right half bright, straddling blocks) puts energy in HL and leaves
    /// LH exactly zero.
    #[test]
    fn vertical_edge_energy_lands_in_hl() {
        let (h, w) = (6usize, 6usize);
        // Edge between columns 2 and 3 so the middle block straddles it.
        let t = Tensor::from_fn(&[h, w, 1], |i| {
            let x = i % w;
            if x < 3 {
                0.0f64
            } else {
                2.0
            }
        });
        let (tape, s) = run_dwt(&t);
        let energy = |v: Var| tape.value(v).iter().map(|&x| x * x).sum::<f64>();
        assert!(tape.value(s.lh).iter().all(|&v| v == 0.0), "LH must be zero");
        assert!(energy(s.hl) > 1.0, "HL carries the vertical edge");
        assert_eq!(energy(s.hh), 0.0);

        // Full-field agreement with the naive oracle.
        let [ll, lh, hl, hh] = oracle_dwt2(t.data(), h, w, 1);
        for (var, ora) in [(s.ll, ll), (s.lh, lh), (s.hl, hl), (s.hh, hh)] {
            for (a, b) in tape.value(var).iter().zip(ora.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_field_matches_oracle_and_preserves_energy() {
        let mut rng = Prng::new(42);
        let (h, w, c) = (8usize, 10usize, 3usize);
        let t = Tensor::from_fn(&[h, w, c], |_| rng.normal());
        let (tape, s) = run_dwt(&t);
        let [ll, lh, hl, hh] = oracle_dwt2(t.data(), h, w, c);
        for (var, ora) in [(s.ll, ll), (s.lh, lh), (s.hl, hl), (s.hh, hh)] {
            for (a, b) in tape.value(var).iter().zip(ora.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let e_in: f64 = t.data().iter().map(|&x| x * x).sum();
        let e_out: f64 = [s.ll, s.lh, s.hl, s.hh]
            .iter()
            .map(|&v| tape.value(v).iter().map(|&x| x * x).sum::<f64>())
            .sum();
        assert!((e_in - e_out).abs() / e_in < 1e-12, "Parseval violated");
    }

    #[test]
    fn round_trip_is_perfect() {
        let mut rng = Prng::new(7);
        let t = Tensor::from_fn(&[8, 8, 3], |_| rng.range(-5.0, 5.0));
        let mut tape = Tape::new();
        let x = tape.input(&t);
        let s = dwt2(&mut tape, x).unwrap();
        let back = idwt2(&mut tape, &s).unwrap();
        let max_err = tape
            .value(back)
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1e-12, "max abs err {max_err}");
    }

    #[test]
    fn ll_only_subbands_reconstruct_constant() {
        let mut tape: Tape<f64> = Tape::new();
        let ll = tape.input(&Tensor::filled(&[2, 2, 1], 6.0));
        let z = tape.input(&Tensor::zeros(&[2, 2, 1]));
        let s = WaveletSubbands {
            ll,
            lh: z,
            hl: z,
            hh: z,
            source_shape: (4, 4, 1),
        };
        let out = idwt2(&mut tape, &s).unwrap();
        assert!(tape.value(out).iter().all(|&v| (v - 3.0).abs() < 1e-14));
    }

    /// Zeroing the detail bands of a checkerboard reconstructs the 2x2
    /// block-mean image.
    #[test]
    fn zeroed_details_give_block_means() {
        let t = Tensor::from_fn(&[4, 4, 1], |i| {
            let (y, x) = (i / 4, i % 4);
            if (y + x) % 2 == 0 {
                1.0f64
            } else {
                0.0
            }
        });
        let mut tape = Tape::new();
        let x = tape.input(&t);
        let s = dwt2(&mut tape, x).unwrap();
        let z = tape.input(&Tensor::zeros(&[2, 2, 1]));
        let muted = WaveletSubbands {
            ll: s.ll,
            lh: z,
            hl: z,
            hh: z,
            source_shape: s.source_shape,
        };
        let out = idwt2(&mut tape, &muted).unwrap();
        assert!(tape.value(out).iter().all(|&v| (v - 0.5).abs() < 1e-14));
    }

    #[test]
    fn odd_extent_is_rejected_with_padding_hint() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.input(&Tensor::zeros(&[3, 4, 1]));
        let err = dwt2(&mut tape, x).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pad"), "message should instruct to pad: {msg}");
    }

    #[test]
    fn linearity_holds_subband_wise() {
        let mut rng = Prng::new(3);
        let a = Tensor::from_fn(&[4, 4, 2], |_| rng.normal());
        let b = Tensor::from_fn(&[4, 4, 2], |_| rng.normal());
        let (alpha, beta) = (1.7, -0.4);
        let combo = Tensor::from_fn(&[4, 4, 2], |i| alpha * a.data()[i] + beta * b.data()[i]);
        let (ta, sa) = run_dwt(&a);
        let (tb, sb) = run_dwt(&b);
        let (tc, sc) = run_dwt(&combo);
        for ((va, vb), vc) in [sa.ll, sa.lh, sa.hl, sa.hh]
            .into_iter()
            .zip([sb.ll, sb.lh, sb.hl, sb.hh])
            .zip([sc.ll, sc.lh, sc.hl, sc.hh])
        {
            for i in 0..ta.value(va).len() {
                let want = alpha * ta.value(va)[i] + beta * tb.value(vb)[i];
                assert!((tc.value(vc)[i] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gradients_pass_finite_differences() {
        let mut rng = Prng::new(12);
        let mut store: ParamStore<f64> = ParamStore::new();
        let x = store.register("x", &[4, 4, 2], Init::TruncNormal { std: 1.0 }, &mut rng);
        let rep = crate::gradcheck::grad_check(
            &|tape, store| {
                let v = tape.param(store, x);
                let s = dwt2(tape, v)?;
                // Weight the bands unevenly so each path is exercised.
                let lh2 = tape.mul(s.lh, s.lh)?;
                let hl3 = tape.scale(s.hl, 3.0);
                let rec = idwt2(
                    tape,
                    &WaveletSubbands {
                        ll: s.ll,
                        lh: lh2,
                        hl: hl3,
                        hh: s.hh,
                        source_shape: s.source_shape,
                    },
                )?;
                let sq = tape.mul(rec, rec)?;
                Ok(tape.sum_all(sq))
            },
            &mut store,
            &[x],
            1e-5,
            None,
        )
        .unwrap();
        assert!(rep.max_rel_err <= 1e-6, "rel err {}", rep.max_rel_err);
    }
}
