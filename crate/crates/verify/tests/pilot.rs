use std::time::Instant;

use gel_verify::{desk_config, font_subset, recon_bce, ACTIVE_KL, DESK_SUBSET};
use gel_core::vce::{export_embeddings, train_vce};

/// Calibration run behind `BCE_THRESHOLD`; seed 1 so the acceptance run (seed 0) is independent.
#[test]
#[ignore = "takes about 20 minutes; run by hand to re-derive the threshold"]
fn desk_scale_pilot() {
    let ds = font_subset(DESK_SUBSET).expect("font");
    let t = Instant::now();
    let (model, log) = train_vce(&ds, &desk_config(1)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let bce = recon_bce(&model, &ds).unwrap();
    let table = export_embeddings(&model, &ds).unwrap();
    println!("pilot: {secs:.0} s, best step {}, mean per-pixel BCE {bce:.5}", log.best_step);
    println!("pilot: threshold (+10%) {:.5}", bce * 1.1);
    println!("pilot: active dims {:?}", table.active_dims(ACTIVE_KL));
    for (i, s) in table.dim_stats().iter().enumerate() {
        println!("pilot: dim {i}: mean {:+.3} std {:.3} kl {:.3}", s.mean, s.std, s.mean_kl);
    }
}
