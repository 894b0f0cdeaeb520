//! Forced-prefix and threshold schedules plus the difficulty weight.
//!
//! Endpoint values and interior points are computed by hand from the
//! schedule formulas; the property block checks the monotone shape over
//! arbitrary configurations.

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rcpa_core::{difficulty_weight, CurriculumConfig64, CurriculumState64};

const TOL: f64 = 1e-12;

fn default_config() -> CurriculumConfig64 {
    CurriculumConfig64::default()
}

fn state(step: usize) -> CurriculumState64 {
    CurriculumState64::new(step, default_config())
}

// ---------------------------------------------------------------------------
// Prefix schedule k(s)
// ---------------------------------------------------------------------------

#[test]
fn prefix_starts_at_full_answer_length() {
    assert_eq!(state(0).prefix_length(10), 10);
    assert_eq!(state(0).prefix_length(6), 6);
    assert_eq!(state(0).prefix_length(1), 1);
}

#[test]
fn prefix_reaches_zero_at_phase_boundary_and_stays() {
    // S = 1600, sigma = 16: boundary at s = 100.
    assert_eq!(state(100).prefix_length(10), 0);
    assert_eq!(state(101).prefix_length(10), 0);
    assert_eq!(state(1600).prefix_length(10), 0);
}

#[test]
fn prefix_interior_point() {
    // s = 50: 1 - (50/1600)*16 = 0.5, floor(0.5 * 10) = 5.
    assert_eq!(state(50).prefix_length(10), 5);
    // floor(0.5 * 7) = 3.
    assert_eq!(state(50).prefix_length(7), 3);
}

#[test]
fn prefix_stage_windows_for_six_token_answers() {
    // With |y| = 6 the phase splits into k = 5, 4, 3, 2, 1 windows of
    // roughly S / (sigma * |y|) = 16.67 steps each.
    assert_eq!(state(1).prefix_length(6), 5);
    assert_eq!(state(16).prefix_length(6), 5);
    assert_eq!(state(17).prefix_length(6), 4);
    assert_eq!(state(34).prefix_length(6), 3);
    assert_eq!(state(51).prefix_length(6), 2);
    assert_eq!(state(67).prefix_length(6), 1);
    assert_eq!(state(84).prefix_length(6), 0);
}

// ---------------------------------------------------------------------------
// Threshold schedule delta(s)
// ---------------------------------------------------------------------------

#[test]
fn threshold_endpoints() {
    assert_abs_diff_eq!(state(0).threshold(), 0.7, epsilon = TOL);
    assert_abs_diff_eq!(state(100).threshold(), 0.8, epsilon = TOL);
    assert_abs_diff_eq!(state(1600).threshold(), 0.8, epsilon = TOL);
}

#[test]
fn threshold_midpoint_of_the_ramp() {
    // s = S / (2 * sigma) = 50: halfway up the ramp.
    assert_abs_diff_eq!(state(50).threshold(), 0.75, epsilon = TOL);
}

// ---------------------------------------------------------------------------
// Phase boundary
// ---------------------------------------------------------------------------

#[test]
fn pre_alignment_covers_exactly_ceil_s_over_sigma_steps() {
    assert_eq!(default_config().pre_alignment_steps(), 100);
    let cfg = CurriculumConfig64 { total_steps: 1601, ..default_config() };
    assert_eq!(cfg.pre_alignment_steps(), 101);
    // The boundary never exceeds the run itself.
    let cfg = CurriculumConfig64 { total_steps: 10, sigma: 0.5, ..default_config() };
    assert_eq!(cfg.pre_alignment_steps(), 10);
}

#[test]
fn in_pre_alignment_flips_at_the_boundary() {
    assert!(state(0).in_pre_alignment());
    assert!(state(99).in_pre_alignment());
    assert!(!state(100).in_pre_alignment());
    assert!(!state(1600).in_pre_alignment());
}

// ---------------------------------------------------------------------------
// Difficulty weight
// ---------------------------------------------------------------------------

#[test]
fn difficulty_weight_oracle_values() {
    // w = 1 / (1.5 + mean_reward).
    assert_abs_diff_eq!(difficulty_weight(-1.0, 1.5).unwrap(), 2.0, epsilon = TOL);
    assert_abs_diff_eq!(difficulty_weight(1.0, 1.5).unwrap(), 0.4, epsilon = TOL);
    assert_abs_diff_eq!(difficulty_weight(0.0, 1.5).unwrap(), 2.0 / 3.0, epsilon = TOL);
}

#[test]
fn difficulty_weight_rejects_non_positive_denominator() {
    assert!(difficulty_weight(-1.5, 1.5).is_err());
    assert!(difficulty_weight(-2.0, 1.5).is_err());
    assert!(difficulty_weight(f64::NAN, 1.5).is_err());
}

#[test]
fn difficulty_weight_favors_hard_groups() {
    let hard = difficulty_weight(-0.8, 1.5).unwrap();
    let easy = difficulty_weight(0.8, 1.5).unwrap();
    assert!(hard > easy);
}

// ---------------------------------------------------------------------------
// Config validation
// ---------------------------------------------------------------------------

#[test]
fn config_validation_rejects_bad_shapes() {
    let ok = default_config();
    assert!(ok.validate().is_ok());
    let bad = CurriculumConfig64 { total_steps: 0, ..ok.clone() };
    assert!(bad.validate().is_err());
    let bad = CurriculumConfig64 { sigma: 0.0, ..ok.clone() };
    assert!(bad.validate().is_err());
    let bad = CurriculumConfig64 { delta_min: 0.9, delta_max: 0.8, ..ok.clone() };
    assert!(bad.validate().is_err());
    let bad = CurriculumConfig64 { delta_max: 1.5, ..ok.clone() };
    assert!(bad.validate().is_err());
    let bad = CurriculumConfig64 { offset: 1.0, ..ok };
    assert!(bad.validate().is_err());
}

// ---------------------------------------------------------------------------
// Properties
// ---------------------------------------------------------------------------

fn arb_config() -> impl Strategy<Value = CurriculumConfig64> {
    (1usize..4000, 0.5f64..64.0, 0.0f64..0.5, 0.5f64..=1.0, 1.01f64..4.0).prop_map(
        |(total_steps, sigma, delta_min, delta_max, offset)| CurriculumConfig64 {
            total_steps,
            sigma,
            delta_min,
            delta_max,
            offset,
        },
    )
}

proptest! {
    #[test]
    fn prefix_is_nonincreasing_and_bounded(cfg in arb_config(), answer_len in 1usize..12) {
        let mut prev = answer_len;
        for step in 0..=cfg.total_steps {
            let k = CurriculumState64::new(step, cfg.clone()).prefix_length(answer_len);
            prop_assert!(k <= answer_len);
            prop_assert!(k <= prev, "k(s) increased from {prev} to {k} at step {step}");
            prev = k;
        }
        prop_assert_eq!(CurriculumState64::new(0, cfg.clone()).prefix_length(answer_len), answer_len);
        if cfg.sigma >= 1.0 {
            prop_assert_eq!(
                CurriculumState64::new(cfg.total_steps, cfg).prefix_length(answer_len),
                0
            );
        }
    }

    #[test]
    fn threshold_is_nondecreasing_within_bounds(cfg in arb_config()) {
        let mut prev = cfg.delta_min;
        for step in 0..=cfg.total_steps {
            let d = CurriculumState64::new(step, cfg.clone()).threshold();
            prop_assert!(d >= cfg.delta_min - TOL && d <= cfg.delta_max + TOL);
            prop_assert!(d >= prev - TOL, "delta(s) decreased at step {step}");
            prev = d;
        }
    }

    #[test]
    fn pre_alignment_flag_flips_at_most_once(cfg in arb_config()) {
        let mut seen_false = false;
        for step in 0..=cfg.total_steps {
            let flag = CurriculumState64::new(step, cfg.clone()).in_pre_alignment();
            if step == 0 {
                prop_assert!(flag, "step 0 must be in the pre-alignment phase");
            }
            if seen_false {
                prop_assert!(!flag, "phase flag returned to true at step {step}");
            }
            seen_false |= !flag;
        }
        if cfg.sigma >= 1.0 {
            prop_assert!(seen_false, "phase must end by total_steps when sigma >= 1");
        }
    }

    #[test]
    fn weight_is_positive_and_monotone(offset in 1.01f64..4.0, r1 in -1.0f64..=1.0, r2 in -1.0f64..=1.0) {
        let w1 = difficulty_weight(r1, offset).unwrap();
        let w2 = difficulty_weight(r2, offset).unwrap();
        prop_assert!(w1 > 0.0 && w2 > 0.0);
        if r1 < r2 {
            prop_assert!(w1 >= w2, "weight must not increase with reward");
        }
    }
}
