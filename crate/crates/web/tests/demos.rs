use msloc_web::{ambiguity, heading, matching};

#[test]
fn heading_recovers_rotation() {
    for (seed, deg) in [(1, 3.0), (2, -4.5), (3, 0.0)] {
        let d = heading(seed, deg, 0.3, 4.0).unwrap();
        assert!((d.estimate_deg() - deg).abs() < 0.2, "{} vs {deg}", d.estimate_deg());
        assert_eq!(d.template().len(), d.size() * d.size());
    }
}

#[test]
fn heading_is_reproducible() {
    let a = heading(9, 2.0, 0.3, 4.0).unwrap();
    let b = heading(9, 2.0, 0.3, 4.0).unwrap();
    assert_eq!(a.estimate_deg(), b.estimate_deg());
}

#[test]
fn matching_finds_the_shift() {
    let d = matching(4, 3, -2, 0.0, "adaptive").unwrap();
    assert!((d.offset_x() - d.truth_x()).abs() < 0.07);
    assert!((d.offset_y() - d.truth_y()).abs() < 0.07);
    let n = 2 * d.half_width() + 1;
    assert_eq!(d.posterior().len(), n * n);
    assert!((d.posterior().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn repainting_shifts_weight_to_altitude() {
    let clean = matching(5, 1, 1, 0.0, "adaptive").unwrap();
    let changed = matching(5, 1, 1, 0.9, "adaptive").unwrap();
    assert!(
        changed.gamma() < clean.gamma(),
        "{} vs {}",
        changed.gamma(),
        clean.gamma()
    );
    let fixed = matching(5, 1, 1, 0.9, "0.5").unwrap();
    assert_eq!(fixed.gamma(), 0.5);
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(matching(1, 0, 0, 0.0, "sideways").is_err());
    assert!(matching(1, 40, 0, 0.0, "adaptive").is_err());
    assert!(ambiguity(1, 10, 0.5, 0.05).is_err());
}

#[test]
fn ins_prior_helps_under_multipath() {
    let d = ambiguity(6, 200, 4.0, 0.05).unwrap();
    assert_eq!(d.epochs(), 200);
    assert!(d.aided() >= d.unaided(), "{} vs {}", d.aided(), d.unaided());
    assert!(d.aided() > 0);
}
