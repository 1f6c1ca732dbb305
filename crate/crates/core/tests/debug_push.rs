use goalmask::curriculum::CurriculumConfig;
use goalmask::ddpg::*;
use goalmask::env::*;
use goalmask::replay::HERConfig;
use std::time::Instant;

fn envu(k: &str, d: usize) -> usize {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}
fn envf(k: &str, d: f64) -> f64 {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

#[test]
fn probe_training() {
    let epochs = envu("EPOCHS", 40);
    let opt_steps = envu("OPT_STEPS", 40);
    let batch = envu("BATCH", 128);
    let cgm = envu("CGM", 0) == 1;
    let her_k = envu("HER_K", 6) as u32;
    let seed = envu("SEED", 1) as u64;
    let hidden = envu("HIDDEN", 64);
    let cg = envf("CG", 0.1);
    let kappa = envf("KAPPA", 32.0);
    let mut learner = Learner::new(
        EnvTag::LiftWorld,
        EnvConfig::default(),
        &[hidden, hidden],
        CurriculumConfig { target_success: cg, sharpness: kappa, ..CurriculumConfig::default() },
        cgm,
        HERConfig { k: her_k },
        ExplorationConfig::default(),
        RolloutConfig { opt_steps, batch_size: batch, ..RolloutConfig::default() },
        1_000_000,
        10,
        10,
        seed,
    )
    .unwrap();
    println!("cfg: epochs={epochs} opt={opt_steps} batch={batch} cgm={cgm} k={her_k} seed={seed} hidden={hidden}");
    let t0 = Instant::now();
    for epoch in 0..epochs {
        let s = run_epoch(&mut learner).unwrap();
        println!(
            "epoch {epoch}: eval={:.2} rates=[{:.2},{:.2},{:.2}] cm_full={:.3} hist={:?} dt={:.0}s",
            s.eval_success_rate,
            s.per_dim_rates[0], s.per_dim_rates[1], s.per_dim_rates[2],
            s.mask_estimates[6],
            s.mask_histogram,
            t0.elapsed().as_secs_f64()
        );
    }
}
