//! The descent checker on the real driver, and on corrupted drivers that it
//! must catch.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use ricsp_core::driver::initial_assignment;
use ricsp_core::landscape::{check_descent_with, DescentChecker};
use ricsp_core::repair::repair_with;
use ricsp_core::{
    descent_equivalence_check, generate_stream, init_state, ConstraintStream, InitRule, MoveRule, ProblemKind,
    RepairParams, Result, RunObserver, StepRecord,
};

const COL3: ProblemKind = ProblemKind::Coloring { q: 3 };

#[derive(Clone, Copy, PartialEq)]
enum Fault {
    None,
    /// Make one uphill move right after the first satisfied activation.
    UphillMove,
    /// Record the first violated step as a success without repairing it.
    SkipRepair,
}

/// A hand-written driver mirroring the real one, with an optional fault.
fn faulty_run(stream: &ConstraintStream, trial: usize, fault: Fault, checker: &mut DescentChecker<'_>) -> Result<()> {
    let params = RepairParams::new(5_000, 0, MoveRule::Focused, trial as u64)?;
    let start = initial_assignment(stream, InitRule::UniformRandom, trial as u64);
    let mut state = init_state(stream, start)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(trial as u64);
    let mut injected = false;
    let mut total = 0;
    while !state.is_exhausted() {
        let violated = state.activate_next()?;
        checker.on_activate(&state);
        let m = state.active_prefix() as u64;
        if fault == Fault::UphillMove && !injected && !violated && m > 1 {
            let (var, value) = uphill_move(&state).expect("some move breaks a satisfied constraint");
            let d = state.flip(var, value)?;
            assert!(d > 0);
            checker.on_move(&state, d);
            injected = true;
        }
        let (flips, success) = if fault == Fault::SkipRepair && !injected && violated {
            injected = true;
            (0, true)
        } else if state.energy() > 0 {
            let out = repair_with(&mut state, &params, &mut rng, |s, d| checker.on_move(s, d));
            (out.flips_used, out.success)
        } else {
            (0, true)
        };
        total += flips;
        let record = StepRecord {
            m,
            n_vars: stream.n_vars as u64,
            flips,
            total_flips: total,
            success,
        };
        checker.on_step(&record, &state);
        if !success {
            break;
        }
    }
    Ok(())
}

fn uphill_move(state: &ricsp_core::ViolationState<'_>) -> Option<(usize, u32)> {
    (0..state.n_vars()).find_map(|v| {
        (0..state.domain())
            .filter(|&x| x != state.assignment().get(v))
            .find(|&x| state.energy_delta_if(v, x).unwrap() > 0)
            .map(|x| (v, x))
    })
}

#[test]
fn real_driver_passes_on_small_instances() {
    for seed in 0..4 {
        let stream = generate_stream(COL3, 10, 25, seed).unwrap();
        for rule in [MoveRule::Focused, MoveRule::Greedy] {
            let params = RepairParams::new(3_000, 0, rule, seed).unwrap();
            let report = descent_equivalence_check(&stream, &params, 50).unwrap();
            assert!(report.passed(), "{rule} seed {seed}: {report:?}");
            assert_eq!(report.trials, 50);
            assert!(report.steps_checked > 0);
        }
    }
    let stream = generate_stream(ProblemKind::KSat { k: 3 }, 12, 60, 9).unwrap();
    let report = descent_equivalence_check(&stream, &RepairParams::default_for(12, 9), 30).unwrap();
    assert!(report.passed(), "{report:?}");
    assert!(report.moves_checked > 0);
}

#[test]
fn faithful_fixture_passes() {
    let stream = generate_stream(COL3, 10, 20, 2).unwrap();
    let report = check_descent_with(&stream, 10, |t, c| faulty_run(&stream, t, Fault::None, c)).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn checker_flags_an_uphill_move() {
    let stream = generate_stream(COL3, 10, 20, 2).unwrap();
    let report = check_descent_with(&stream, 10, |t, c| faulty_run(&stream, t, Fault::UphillMove, c)).unwrap();
    assert!(!report.passed());
    assert_eq!(report.uphill_moves, 10, "{report:?}");
}

#[test]
fn checker_flags_a_skipped_repair() {
    let stream = generate_stream(COL3, 10, 20, 2).unwrap();
    let report = check_descent_with(&stream, 10, |t, c| faulty_run(&stream, t, Fault::SkipRepair, c)).unwrap();
    assert!(!report.passed());
    assert!(
        report.unsatisfied_steps >= 1 && report.envelope_violations >= 1,
        "{report:?}"
    );
}

#[test]
fn checker_refuses_large_instances() {
    let stream = generate_stream(COL3, 30, 10, 1).unwrap();
    let err = descent_equivalence_check(&stream, &RepairParams::default_for(30, 1), 1).unwrap_err();
    assert!(matches!(err, ricsp_core::Error::Capacity(_)), "{err}");
}
