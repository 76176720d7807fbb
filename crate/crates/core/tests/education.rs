use sensan_core::education::{replicate_education, EducationConfig};

#[test]
fn default_run_hits_the_median_target() {
    let t = std::time::Instant::now();
    let r = replicate_education(&EducationConfig::default()).unwrap();
    for row in &r.rows {
        let c = &row.report;
        eprintln!(
            "{}: S={:.6} dpsi={:.6} h={:.4} h1={:.4} dnu={:.6} dpsi_obs={:.6} gap={:.5} R={:.4} Lambda={:.4}",
            row.label,
            c.sensitivity.S,
            c.sensitivity.dpsi_dnu,
            c.h,
            c.h_first_order,
            c.achieved_increment(),
            c.psi_change(),
            row.prediction_gap(),
            c.sensitivity.R,
            c.sensitivity.Lambda
        );
        assert!((c.achieved_increment() - 0.1).abs() < 0.01);
        c.sensitivity.validate().unwrap();
    }
    assert_eq!(r.rows.len(), 4);
    assert!(r.rows[0].report.sensitivity.S > 0.0);
    eprintln!("{:?}", t.elapsed());
}
