use std::time::Instant;

use studyhook_core::config::EngineConfig;
use studyhook_core::sim::{default_profiles, simulate, StudentProfile};

fn solo(m: f64, seed: u64) -> StudentProfile {
    StudentProfile { noise_seed: Some(seed), ..StudentProfile::new(m, 0.7) }
}

#[test]
fn thirty_students_twelve_weeks_conserve_sessions() {
    let profiles = default_profiles(30, 7);
    let t = Instant::now();
    let report = simulate(&profiles, 12, 7, EngineConfig::default()).unwrap();
    eprintln!("30x12 simulated in {:?}", t.elapsed());
    assert_eq!(report.students.len(), 30);
    for s in &report.students {
        assert_eq!(s.scheduled, s.checked_out + s.missed + s.still_open, "{}", s.student_id);
        assert!((0.0..=1.0).contains(&s.adherence_rate));
        assert!(s.scheduled >= 2 * 12, "{} scheduled {}", s.student_id, s.scheduled);
    }
    let again = simulate(&profiles, 12, 7, EngineConfig::default()).unwrap();
    assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn higher_motivation_adheres_more_under_paired_seeds() {
    let wins = (0..100u64)
        .filter(|&seed| {
            let high = simulate(&[solo(0.9, seed)], 12, seed, EngineConfig::default()).unwrap();
            let low = simulate(&[solo(0.2, seed)], 12, seed, EngineConfig::default()).unwrap();
            high.students[0].adherence_rate > low.students[0].adherence_rate
        })
        .count();
    assert!(wins >= 95, "{wins}/100");
}

#[test]
fn mean_adherence_non_decreasing_over_motivation_grid() {
    let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let means: Vec<f64> = grid
        .iter()
        .map(|&m| {
            let profiles: Vec<StudentProfile> = (0..20).map(|i| solo(m, i)).collect();
            simulate(&profiles, 8, 99, EngineConfig::default()).unwrap().mean_adherence()
        })
        .collect();
    for w in means.windows(2) {
        assert!(w[1] >= w[0], "{means:?}");
    }
}

#[test]
fn gate_defers_only_when_enabled() {
    let profiles = default_profiles(30, 3);
    let gated = simulate(&profiles, 12, 3, EngineConfig::default()).unwrap();
    let mut baseline = EngineConfig::default();
    baseline.notifier.gate_enabled = false;
    let ungated = simulate(&profiles, 12, 3, baseline).unwrap();
    assert!(gated.total_deferred() > 0);
    assert_eq!(ungated.total_deferred(), 0);
}
