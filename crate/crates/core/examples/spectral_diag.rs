// Diagnostic sweep with adjustable init gains: reports standard-stack
// monotonicity and fet-vs-standard depth-4 wins, split by battery half.
use fetseg::analysis::{battery, hf_energy_ratio};
use fetseg::fet::{fet_layer, std_layer, FetLayerParams, InitScheme, StdLayerParams};
use fetseg::model::AttentionKind;
use fetseg::nn::TokenMap;
use fetseg::params::{ParamId, ParamStore};
use fetseg::rng::Prng;
use fetseg::tape::Tape;
use fetseg::tensor::Tensor;

fn scale_param(store: &mut ParamStore<f64>, id: ParamId, gain: f64) {
    let v: Vec<f64> = store.value(id).iter().map(|x| x * gain).collect();
    store.set_value(id, v);
}

enum L {
    F(FetLayerParams),
    S(StdLayerParams),
}

#[allow(clippy::too_many_arguments)]
fn trajectories(
    kind: AttentionKind,
    seed: u64,
    depth: usize,
    width: usize,
    qk: f64,
    vo: f64,
    ffn: f64,
    gate_bias: f64,
    bat: &[Tensor<f64>],
) -> Vec<Vec<f64>> {
    let mut rng = Prng::derive(seed, &[0x57ec, kind as u64]);
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut layers = Vec::new();
    for l in 0..depth {
        match kind {
            AttentionKind::Fet => {
                let p = FetLayerParams::register(
                    &mut store, &format!("l{l}"), width, 3, 1.0, InitScheme::Spectral, &mut rng,
                )
                .unwrap();
                scale_param(&mut store, p.block.wq, qk);
                scale_param(&mut store, p.block.wo, vo);
                scale_param(&mut store, p.ffn.w2, ffn);
                let c = width / 4;
                store.set_value(p.block.hf_mix_b_b, vec![gate_bias; c]);
                layers.push(L::F(p));
            }
            AttentionKind::Standard => {
                let heads: usize = std::env::var("HEADS").ok().and_then(|s| s.parse().ok()).unwrap_or(4);
                let p = StdLayerParams::register(
                    &mut store, &format!("l{l}"), width, heads, InitScheme::Spectral, &mut rng,
                )
                .unwrap();
                scale_param(&mut store, p.attn.wq, qk);
                scale_param(&mut store, p.attn.wk, qk);
                scale_param(&mut store, p.attn.wo, vo);
                scale_param(&mut store, p.ffn.w2, ffn);
                layers.push(L::S(p));
            }
        }
    }
    let lift_u: Vec<f64> = (0..width).map(|_| rng.normal()).collect();
    let lift_scale: f64 = std::env::var("LIFT_B").ok().and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let lift_b: Vec<f64> = (0..width).map(|_| lift_scale * rng.normal()).collect();
    let mut out = Vec::new();
    for img in bat {
        let (h, w) = (32usize, 32usize);
        let n = (h * w) as f64;
        let mean = img.data().iter().sum::<f64>() / n;
        let var = img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-9);
        let mut tokens = vec![0.0f64; h * w * width];
        for p in 0..h * w {
            let v = (img.data()[p] - mean) / std;
            for c in 0..width {
                tokens[p * width + c] = v * lift_u[c] + lift_b[c];
            }
        }
        let mut feature = Tensor::new(vec![h * w, width], tokens).unwrap();
        let mut traj = vec![hf_energy_ratio(img.data(), h, w, 1, 0.5)];
        for layer in &layers {
            let mut tape = Tape::new();
            let var = tape.input(&feature);
            let t = TokenMap::new(&tape, var, h, w).unwrap();
            let o = match layer {
                L::F(p) => fet_layer(&mut tape, &store, t, p).unwrap(),
                L::S(p) => std_layer(&mut tape, &store, t, p).unwrap(),
            };
            feature = tape.tensor(o.var);
            traj.push(hf_energy_ratio(feature.data(), h, w, width, 0.5));
        }
        out.push(traj);
    }
    out
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let qk: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let vo: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let ffn: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let seeds: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3);
    let width: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(16);
    let gate_bias: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let fet_qk: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(qk);
    let depth = 4usize;
    let bat = battery(0);

    let mut mono = [0usize; 2];
    let mut wins = [0usize; 2];
    let mut total = [0usize; 2];
    let mut std_means = vec![0.0f64; depth + 1];
    let mut fet_means = vec![0.0f64; depth + 1];
    for seed in 0..seeds {
        let st = trajectories(AttentionKind::Standard, seed, depth, width, qk, vo, ffn, gate_bias, &bat);
        let fe = trajectories(AttentionKind::Fet, seed, depth, width, fet_qk, vo, ffn, gate_bias, &bat);
        for (i, (ts, tf)) in st.iter().zip(fe.iter()).enumerate() {
            let half = if i < 8 { 0 } else { 1 };
            total[half] += 1;
            if ts[1..].windows(2).all(|w| w[1] <= w[0] + 1e-12) {
                mono[half] += 1;
            }
            if tf[depth] >= ts[depth] {
                wins[half] += 1;
            }
            for d in 0..=depth {
                std_means[d] += ts[d];
                fet_means[d] += tf[d];
            }
        }
    }
    let c = (seeds as usize * 16) as f64;
    let fmt = |v: &[f64]| -> Vec<String> { v.iter().map(|x| format!("{:.4}", x / c)).collect() };
    println!(
        "qk {qk} vo {vo} ffn {ffn} w {width} gb {gate_bias}: std {:?} fet {:?}",
        fmt(&std_means),
        fmt(&fet_means)
    );
    println!(
        "  mono noise {}/{} shapes {}/{} | wins noise {}/{} shapes {}/{}",
        mono[0], total[0], mono[1], total[1], wins[0], total[0], wins[1], total[1]
    );
}
