use fetseg::model::{AttentionKind, Model, ModelConfig};
use fetseg::optim::Sgd;
use fetseg::synth::{generate, SynthConfig};
use fetseg::train::{train_loop, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = if args.get(1).map(|s| s.as_str()) == Some("std") {
        AttentionKind::Standard
    } else {
        AttentionKind::Fet
    };
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.05);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(30);
    let scfg = SynthConfig { n: 200, size: 64, classes: 4, seed: 42 };
    let data = generate(&scfg).unwrap();
    let mcfg = ModelConfig {
        attention: kind,
        use_msce: kind == AttentionKind::Fet,
        ..ModelConfig::toy()
    };
    let t0 = std::time::Instant::now();
    let (model, mut store) = Model::build::<f32>(mcfg, seed).unwrap();
    let mut opt = Sgd::new(&store, lr, 0.9, 1e-4);
    let tc = TrainConfig { epochs, seed, lr, ..TrainConfig::default() };
    match train_loop(&model, &mut store, &mut opt, &data, &tc, 0, |rec, _, _| {
        if rec.epoch % 3 == 0 || rec.epoch == epochs - 1 {
            println!(
                "epoch {:2} loss {:.4} dice {:.4} ce {:.4} val_dsc {:.4}  [{:.0?}]",
                rec.epoch, rec.loss, rec.dice, rec.ce, rec.val_dsc, t0.elapsed()
            );
        }
        Ok(())
    }) {
        Ok(r) => println!(
            "kind {:?} seed {seed} lr {lr}: best val {:.4}; final per-class {:?} in {:.1?}",
            kind, r.best_val_dsc,
            r.final_per_class_dsc.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            t0.elapsed()
        ),
        Err(e) => println!("kind {:?} seed {seed} lr {lr}: DIVERGED: {e}", kind),
    }
}
