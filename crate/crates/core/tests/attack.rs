use std::collections::BTreeMap;

use gridward::attack::{
    attack_stream_sample, compute_initial_attack, record_replay_series, reported_currents, sample_at, validate_attack,
    AttackOptions, AttackSpec, AttackStream, InitialAttackSolution,
};
use gridward::grid::{bus_injection, Bus, End, Generator, Line, Network, OperatingPoint};
use gridward::Error;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bus(id: usize, p: f64, q: f64) -> Bus {
    Bus {
        id,
        v_min: 0.94,
        v_max: 1.06,
        p_load: p,
        q_load: q,
        is_generator: false,
    }
}

fn gen(bus: usize, p: f64) -> Generator {
    Generator {
        bus,
        p_min: 0.0,
        p_max: 3.0,
        q_min: -2.0,
        q_max: 2.0,
        p_set: p,
        q_set: 0.0,
        v_set: 1.02,
    }
}

fn line(f: usize, t: usize, s_max: f64) -> Line {
    Line {
        s_max,
        b_charge: 0.02,
        ..Line::series(f, t, 0.01, 0.1)
    }
}

/// Two generators feeding a four-bus zone {3, 4, 5, 6}. Line 5-6 (index 5)
/// carries almost nothing at the base point and has a tight limit.
fn six_bus(target_limit: f64) -> Network {
    let mut buses = vec![
        Bus {
            is_generator: true,
            ..bus(1, 0.0, 0.0)
        },
        Bus {
            is_generator: true,
            ..bus(2, 0.0, 0.0)
        },
    ];
    buses.extend([bus(3, 0.2, 0.05), bus(4, 0.2, 0.05), bus(5, 0.3, 0.1), bus(6, 0.3, 0.1)]);
    let lines = vec![
        line(1, 2, 2.0),
        line(1, 3, 2.0),
        line(2, 4, 2.0),
        line(3, 5, 2.0),
        line(4, 6, 2.0),
        line(5, 6, target_limit),
        line(3, 4, 2.0),
    ];
    Network::new("six", 100.0, buses, lines, vec![gen(1, 0.0), gen(2, 0.5)], 1, None).unwrap()
}

fn fixture() -> (Network, AttackSpec, OperatingPoint) {
    let net = six_bus(0.05);
    let base = OperatingPoint::solve(&net).unwrap();
    (net, AttackSpec::new([3, 4, 5, 6], 5), base)
}

fn solved() -> (Network, InitialAttackSolution) {
    let (net, spec, base) = fixture();
    let sol = compute_initial_attack(&net, &spec, &base, &AttackOptions::default()).unwrap();
    (net, sol)
}

#[test]
fn six_bus_attack_hides_an_overload() {
    let (net, sol) = solved();
    let report = validate_attack(&net, &sol.spec, &sol, 1e-6);
    assert!(report.all_passed(), "{report}");
    let s_max = net.lines[5].s_max;
    assert!(sol.objective.sqrt() >= 1.1 * s_max - 1e-9, "{}", sol.objective.sqrt());

    // the reported flow on the target stays within its limit at both ends
    let (f, t) = (net.index_of(5).unwrap(), net.index_of(6).unwrap());
    let r = &sol.reported_state;
    assert!((r.v[f] * r.i[5][0].conj()).norm() <= s_max + 1e-6);
    assert!((r.v[t] * r.i[5][1].conj()).norm() <= s_max + 1e-6);
}

#[test]
fn active_bookkeeping_matches_the_agc_shift() {
    // Δ covers the change in zone load plus the change in losses.
    let (net, sol) = solved();
    let losses = |state: &gridward::grid::PhasorState| -> f64 {
        net.bus_ids().map(|b| bus_injection(&net, state, b).unwrap().re).sum()
    };
    let load_change: f64 = sol
        .true_loads
        .iter()
        .map(|(&k, s)| s.re - net.bus(k).unwrap().p_load)
        .sum();
    let loss_change = losses(&sol.true_state) - losses(&sol.base.state);
    assert!((sol.agc_delta - load_change - loss_change).abs() < 1e-6);
}

#[test]
fn unlimited_target_is_infeasible() {
    let net = six_bus(f64::INFINITY);
    let base = OperatingPoint::solve(&net).unwrap();
    let spec = AttackSpec::new([3, 4, 5, 6], 5);
    let err = compute_initial_attack(&net, &spec, &base, &AttackOptions::default()).unwrap_err();
    assert!(matches!(err, Error::AttackInfeasible { .. }), "{err}");
}

#[test]
fn unreachable_overload_is_infeasible() {
    // no load shift inside the zone can push 201 times the limit
    let net = six_bus(0.05);
    let base = OperatingPoint::solve(&net).unwrap();
    let mut spec = AttackSpec::new([3, 4, 5, 6], 5);
    spec.overload_margin = 200.0;
    let opts = AttackOptions {
        max_outer: 20,
        ..AttackOptions::default()
    };
    match compute_initial_attack(&net, &spec, &base, &opts).unwrap_err() {
        Error::AttackInfeasible { best_objective, required } => {
            assert!(best_objective < required);
            assert!(best_objective > 0.0);
        }
        e => panic!("{e}"),
    }
}

#[test]
fn passive_solution_fails_only_the_overload_check() {
    let (net, spec, base) = fixture();
    let sol = InitialAttackSolution::passive(&net, &spec, &base).unwrap();
    let report = validate_attack(&net, &spec, &sol, 1e-6);
    for c in &report.checks {
        assert_eq!(c.passed, c.name != "overload", "{report}");
    }
}

#[test]
fn perturbed_load_breaks_balance() {
    let (net, sol) = solved();
    let mut bad = sol.clone();
    *bad.true_loads.get_mut(&5).unwrap() += 0.1;
    let report = validate_attack(&net, &bad.spec, &bad, 1e-6);
    let c = report.check("balance").unwrap();
    assert!(!c.passed);
    assert!((c.residual - 0.1).abs() < 1e-6, "{}", c.residual);
}

#[test]
fn reported_currents_follow_the_reported_picture() {
    let (net, sol) = solved();
    let cur = reported_currents(&sol, &net).unwrap();
    // 3-4 joins two boundary buses: reported equals true
    for end in [End::From, End::To] {
        let d = cur[&(6, end)] - sol.true_state.current(6, end).unwrap();
        assert!(d.norm() < 1e-9);
    }
    // the target is interior and carries a different current
    let d = cur[&(5, End::From)] - sol.true_state.current(5, End::From).unwrap();
    assert!(d.norm() > 1e-3);
    // the reported injections reproduce the reported loads
    let mut state = sol.reported_state.clone();
    for (&(l, end), &i) in &cur {
        state.i[l][end.index()] = i;
    }
    for (&k, s) in &sol.reported_loads {
        let inj = bus_injection(&net, &state, k).unwrap();
        assert!((inj + s).norm() < 1e-6);
    }
}

#[test]
fn noiseless_stream_repeats_the_reported_picture() {
    let (net, sol) = solved();
    let cur = reported_currents(&sol, &net).unwrap();
    let stream = AttackStream::noisy(sol.clone(), 0.0, 0.0);
    for t in 0..20 {
        let frame = sample_at(&stream, &net, t, 7).unwrap();
        for (&k, v) in &frame.v {
            assert_eq!(*v, sol.reported_state.voltage(&net, k).unwrap());
        }
        for (key, i) in &frame.i {
            assert!((i - cur[key]).norm() < 1e-12);
        }
    }
}

#[test]
fn noisy_stream_has_no_drift() {
    let (net, sol) = solved();
    let sigma = 1e-3;
    let stream = AttackStream::noisy(sol.clone(), sigma, sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut sum: BTreeMap<usize, Complex64> = BTreeMap::new();
    for t in 0..n {
        let frame = attack_stream_sample(&stream, &net, t, &mut rng).unwrap();
        for (&k, v) in &frame.v {
            *sum.entry(k).or_default() += v;
        }
    }
    // each component has standard deviation σ/√2
    let bound = 3.0 * sigma / (n as f64).sqrt();
    for (&k, s) in &sum {
        let d = s / n as f64 - sol.reported_state.voltage(&net, k).unwrap();
        assert!(d.re.abs() < bound && d.im.abs() < bound, "bus {k}: {d}");
    }
}

#[test]
fn interior_stream_currents_match_the_voltages() {
    let (net, sol) = solved();
    let stream = AttackStream::noisy(sol, 1e-3, 1e-3);
    let frame = sample_at(&stream, &net, 3, 1).unwrap();
    for l in [3, 4, 5, 6] {
        let line = &net.lines[l];
        let y = gridward::grid::branch_admittance(line).unwrap();
        let (a, b) = y.currents(frame.v[&line.from], frame.v[&line.to]);
        assert_eq!(frame.i[&(l, End::From)], a);
        assert_eq!(frame.i[&(l, End::To)], b);
    }
}

#[test]
fn enhanced_override_is_emitted_exactly() {
    let (net, sol) = solved();
    let v3 = sol.reported_state.voltage(&net, 3).unwrap() * 1.01;
    let stream = AttackStream::enhanced(sol, 1e-3, 1e-3, BTreeMap::from([(3, v3)]));
    for t in 0..10 {
        assert_eq!(sample_at(&stream, &net, t, 5).unwrap().v[&3], v3);
    }
}

#[test]
fn replay_cycles_through_recorded_frames() {
    let (net, sol) = solved();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let series = record_replay_series(&net, &sol, 4, 0.003, &mut rng).unwrap();
    let stream = AttackStream::replay(sol.clone(), series.clone());
    let a = sample_at(&stream, &net, 1, 0).unwrap();
    let b = sample_at(&stream, &net, 5, 99).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.v[&5], series[1].voltage(&net, 5).unwrap());
    // without noise the recording reproduces the reported picture
    let quiet = record_replay_series(&net, &sol, 1, 0.0, &mut rng).unwrap();
    for (x, y) in quiet[0].v.iter().zip(&sol.reported_state.v) {
        assert!((x - y).norm() < 1e-6);
    }
    let empty = AttackStream::replay(sol, Vec::new());
    assert!(matches!(sample_at(&empty, &net, 0, 0), Err(Error::InvalidStream(_))));
}

#[test]
fn sampling_is_reproducible_per_tick() {
    let (net, sol) = solved();
    let stream = AttackStream::noisy(sol, 1e-4, 1e-4);
    assert_eq!(sample_at(&stream, &net, 42, 9).unwrap(), sample_at(&stream, &net, 42, 9).unwrap());
    assert_ne!(sample_at(&stream, &net, 42, 9).unwrap(), sample_at(&stream, &net, 43, 9).unwrap());
}
