use fetseg::analysis::{battery, fet_wins_at_depth, spectral_sweep, standard_monotone, SweepConfig};
use fetseg::model::AttentionKind;

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let depth = 4;
    let bat = battery(0);
    let cfg = SweepConfig::default();
    let t0 = std::time::Instant::now();
    let mut reports = Vec::new();
    for seed in 0..seeds {
        for kind in [AttentionKind::Standard, AttentionKind::Fet] {
            reports.push(spectral_sweep(kind, depth, &bat, 0, seed, &cfg).unwrap());
        }
    }
    let (wins, total) = fet_wins_at_depth(&reports, depth);
    let (mono, mono_total) = standard_monotone(&reports);
    println!(
        "seeds {seeds}: fet wins {wins}/{total} ({:.1}%), std monotone {mono}/{mono_total} ({:.1}%)  [{:.1?}]",
        100.0 * wins as f64 / total as f64,
        100.0 * mono as f64 / mono_total as f64,
        t0.elapsed()
    );
    // Depth trajectory of means for a quick feel.
    for kind in ["standard", "fet"] {
        let mut means = vec![0.0f64; depth + 1];
        let mut counts = vec![0usize; depth + 1];
        for rep in &reports {
            let k = match rep.kind { AttentionKind::Standard => "standard", AttentionKind::Fet => "fet" };
            if k != kind { continue; }
            for row in &rep.rows {
                means[row.depth] += row.hf_ratio;
                counts[row.depth] += 1;
            }
        }
        let m: Vec<String> = means.iter().zip(&counts).map(|(s, &c)| format!("{:.4}", s / c.max(1) as f64)).collect();
        println!("{kind}: mean hf_ratio by depth {m:?}");
    }
}
