use gc_core::gradcheck::{run, GradcheckConfig};

#[test]
fn every_check_passes_default_config() {
    let t = std::time::Instant::now();
    let results = run(&GradcheckConfig::default(), None).unwrap();
    for r in &results {
        println!(
            "{:<18} coords={:<6} skipped={} max_rel={:.3e} {} {}",
            r.name,
            r.coords,
            r.skipped,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" },
            r.worst
        );
    }
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    assert!(results.iter().all(|r| r.passed));
}
