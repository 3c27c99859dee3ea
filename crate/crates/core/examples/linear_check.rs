use geovit_core::geometry::FieldKind;
use geovit_core::io::checkpoint::{load_model, save_model};
use geovit_core::refine::GeoVit;
use geovit_core::synth::{make_synthetic, SynthParams};
use geovit_core::train::*;
use geovit_core::no_grad;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(300);
    let lr: f64 = std::env::args().nth(2).and_then(|v| v.parse().ok()).unwrap_or(1e-2);
    let params = SynthParams { max_disp: 3.0, ..SynthParams::default() };
    let data: Vec<_> = (0..20u64).map(|i| make_synthetic(FieldKind::Flow, 64, 96, i, &params).unwrap()).collect();
    let ckpt = std::path::Path::new("/tmp/geovit_toy.gvck");
    let model = if ckpt.exists() {
        load_model(ckpt).unwrap()
    } else {
        let (vit, dec, mut cfg) = toy_preset();
        cfg.peak_lr = 1e-3;
        cfg.seed = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let m = GeoVit::random_init(vit, dec, &mut rng).unwrap();
        let out = train_toy(m, &cfg, &data).unwrap();
        save_model(ckpt, &out.model).unwrap();
        println!("trained refine model, saved");
        out.model
    };
    let (_, _, mut cfg) = toy_preset();
    cfg.head = HeadMode::Linear;
    cfg.freeze_encoder = true;
    cfg.steps = steps;
    cfg.peak_lr = lr;
    cfg.seed = 7;
    let loss_of = |m: &GeoVit<f32>| -> f64 {
        no_grad(|| data.iter().map(|s| sample_loss(m, s, &cfg).unwrap().item() as f64).sum::<f64>() / 20.0)
    };
    let before = loss_of(&model);
    let t = std::time::Instant::now();
    let out = train_toy(model, &cfg, &data).unwrap();
    let after = loss_of(&out.model);
    println!("linear: steps {steps} lr {lr}: {before:.4} -> {after:.4} (ratio {:.3}) in {:?}", after/before, t.elapsed());
}
