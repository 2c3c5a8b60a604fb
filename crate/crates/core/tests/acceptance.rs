//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gridward::attack::{
    compute_initial_attack, reported_currents, validate_attack, AttackOptions, AttackSpec,
};
use gridward::defense::{
    covariance_defense, criterion1_check, criterion2_check, dc_phase_shift, hoo_ratio, predicted_cov_shift,
    voltage_change_score, CovarianceOptions, InjectionCommand, LineSide, TrustedSet,
};
use gridward::grid::{Bus, BusId, End, Generator, Line, Network, OperatingPoint};
use gridward::io::{parse_case, write_reports, ReportBundle, ScenarioConfig};
use gridward::sim::{run_scenario, sensor_sample, voltage_experiments, DcSource, SensorModel, TruePhysics};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn case(name: &str) -> Network {
    parse_case(fixtures().join(format!("{name}.m"))).expect("fixture parses")
}

fn within(limit: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    if took > limit {
        Err(format!("{detail}; took {took:.1?}, limit {limit:?}"))
    } else {
        Ok(detail)
    }
}

// ---------------------------------------------------------------------------
// DC injection lemmas

fn bus(id: BusId, is_generator: bool) -> Bus {
    Bus {
        id,
        v_min: 0.9,
        v_max: 1.1,
        p_load: 0.0,
        q_load: 0.0,
        is_generator,
    }
}

/// Random tree with a few chords, so that cut vertices are common.
fn random_network(rng: &mut ChaCha8Rng, n: usize) -> Network {
    let mut edges = BTreeSet::new();
    for k in 2..=n {
        edges.insert((rng.random_range(1..k), k));
    }
    for _ in 0..n / 5 {
        let a = rng.random_range(1..=n);
        let b = rng.random_range(1..=n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let lines = edges
        .iter()
        .map(|&(a, b)| Line::series(a, b, 0.0, rng.random_range(0.02..0.5)))
        .collect();
    let buses = (1..=n).map(|k| bus(k, k == 1)).collect();
    let gen = Generator {
        bus: 1,
        p_min: 0.0,
        p_max: 10.0,
        q_min: -10.0,
        q_max: 10.0,
        p_set: 0.0,
        q_set: 0.0,
        v_set: 1.0,
    };
    Network::new("random", 100.0, buses, lines, vec![gen], 1, None).expect("valid network")
}

/// Buses reachable from `s` without passing through `t`.
fn reachable_avoiding(net: &Network, s: BusId, t: BusId) -> BTreeSet<BusId> {
    let mut seen = BTreeSet::from([s]);
    let mut queue = VecDeque::from([s]);
    while let Some(k) = queue.pop_front() {
        for m in net.neighbors(k).unwrap() {
            if m != t && seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

fn dc_lemmas() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut strict, mut exact) = (0usize, 0usize);
    for g in 0..120 {
        let n = rng.random_range(4..=50);
        let net = random_network(&mut rng, n);
        for _ in 0..60 {
            let s = rng.random_range(1..=n);
            let mut t = rng.random_range(1..=n);
            while t == s {
                t = rng.random_range(1..=n);
            }
            let gamma = Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
            let shift = dc_phase_shift(&net, &InjectionCommand { s, t, gamma }).map_err(|e| e.to_string())?;
            let reach = reachable_avoiding(&net, s, t);
            for k in net.bus_ids().filter(|&k| k != t) {
                let d = shift[net.index_of(k).unwrap()];
                if reach.contains(&k) {
                    if d * gamma.signum() <= 1e-12 {
                        return Err(format!("graph {g}: bus {k} moved {d:e} for s={s} t={t} Γ={gamma}"));
                    }
                    strict += 1;
                } else {
                    if d.abs() > 1e-12 {
                        return Err(format!("graph {g}: separated bus {k} moved {d:e} for s={s} t={t}"));
                    }
                    exact += 1;
                }
            }
        }
    }
    if exact == 0 {
        return Err("no separated bus was ever exercised".into());
    }
    within(
        Duration::from_secs(10),
        started,
        format!("120 graphs x 60 commands: {strict} strict, {exact} exact"),
    )
}

// ---------------------------------------------------------------------------
// Covariance shift

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|&&x| x > 1e-9 * top).count()
}

fn covariance_shift() -> Outcome {
    let started = Instant::now();
    let net = case("case14");
    let sigma = 0.3;
    let mut details = Vec::new();
    for members in [vec![1, 2], vec![1, 2, 3], vec![1, 2, 3, 6]] {
        let trusted = TrustedSet::new(members.clone(), (1, 2)).unwrap();
        let mut src = DcSource::new(&net, 0.003, 17).map_err(|e| e.to_string())?;
        let opts = CovarianceOptions {
            dist_sigma: sigma,
            phase1_samples: 100_000,
            phase2_samples: 200_000,
            dwell: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(members.len() as u64);
        let (est, report, _) = covariance_defense(&mut src, &trusted, &opts, 0, &mut rng).map_err(|e| e.to_string())?;
        if !report.flagged_buses.is_empty() {
            return Err(format!("T={members:?}: honest buses flagged {:?}", report.bus_set()));
        }
        for (i, &anchor) in est.anchors.iter().enumerate() {
            let predicted = predicted_cov_shift(&net, &trusted, anchor, sigma * sigma).map_err(|e| e.to_string())?;
            let err = (est.shift(i) - &predicted).norm() / predicted.norm();
            if err > 0.02 {
                return Err(format!("T={members:?} anchor {anchor}: relative error {err:.4}"));
            }
            let rank = numerical_rank(&predicted);
            if rank != members.len() - 1 {
                return Err(format!("T={members:?} anchor {anchor}: rank {rank}"));
            }
            details.push(format!("{err:.4}"));
        }
    }
    within(
        Duration::from_secs(60),
        started,
        format!("relative errors {}; ranks |T|-1", details.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// Attack synthesis

fn attack_synthesis() -> Outcome {
    let started = Instant::now();
    let net = case("case30");
    let base = OperatingPoint::solve(&net).map_err(|e| e.to_string())?;
    let spec = AttackSpec::new([6, 8, 28], 39);
    let sol = compute_initial_attack(&net, &spec, &base, &AttackOptions::default()).map_err(|e| e.to_string())?;
    let report = validate_attack(&net, &spec, &sol, 1e-6);
    if !report.all_passed() || report.checks.len() != 6 {
        return Err(report.to_string());
    }
    let line = &net.lines[39];
    let s_true = sol.objective.sqrt();
    if s_true < 1.1 * line.s_max {
        return Err(format!("true flow {s_true:.4} below 1.1 x {:.4}", line.s_max));
    }
    let cur = reported_currents(&sol, &net).map_err(|e| e.to_string())?;
    let r = &sol.reported_state;
    for (end, bus) in [(End::From, line.from), (End::To, line.to)] {
        let s = r.v[net.index_of(bus).unwrap()] * cur[&(39, end)].conj();
        if s.norm() > line.s_max + 1e-6 {
            return Err(format!("reported flow {:.4} at bus {bus} over the limit", s.norm()));
        }
    }
    within(
        Duration::from_secs(60),
        started,
        format!(
            "case30 line {}-{}: true {:.2} MVA, limit {:.2} MVA, six checks pass",
            line.from,
            line.to,
            s_true * net.base_power,
            line.s_max * net.base_power
        ),
    )
}

// ---------------------------------------------------------------------------
// Detection correctness

fn detection(file: &str, seeds: u64) -> Result<(usize, Duration), String> {
    let started = Instant::now();
    let mut cfg = ScenarioConfig::load(fixtures().join("scenarios").join(file)).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    for seed in 0..seeds {
        cfg.seed = seed;
        let built = cfg.build(None, &AttackOptions::default()).map_err(|e| e.to_string())?;
        let out = run_scenario(&built.scenario).map_err(|e| format!("seed {seed}: {e}"))?;
        let m = &out.metrics;
        if m.precision != 1.0 || m.recall != 1.0 {
            failures.push(format!(
                "seed {seed}: precision {} recall {} flagged {:?}",
                m.precision, m.recall, m.flagged_buses
            ));
        }
    }
    if failures.is_empty() {
        Ok((seeds as usize, started.elapsed()))
    } else {
        Err(format!("{file}: {}", failures.join("; ")))
    }
}

fn detection_correctness() -> Outcome {
    let started = Instant::now();
    let (n1, t1) = detection("noisy-pairs.toml", 50)?;
    let (n2, t2) = detection("replay-covariance.toml", 50)?;
    within(
        Duration::from_secs(300),
        started,
        format!("noisy+pairs {n1} seeds ({t1:.1?}), replay+covariance {n2} seeds ({t2:.1?}); precision = recall = 1"),
    )
}

// ---------------------------------------------------------------------------
// Criteria soundness

fn criteria_soundness() -> Outcome {
    let started = Instant::now();
    let net = case("case30");
    let base = OperatingPoint::solve(&net).map_err(|e| e.to_string())?;
    let model = SensorModel {
        tau: 0.01,
        error_scale: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let state = &base.state;
    let mut flags = 0;
    let samples = 100_000;
    for j in 0..samples {
        let l = j % net.lines.len();
        let line = &net.lines[l];
        let (f, t) = (net.index_of(line.from).unwrap(), net.index_of(line.to).unwrap());
        let mut sense = |z: Complex64| sensor_sample(z, &model, &mut rng);
        let (vf, vt) = (sense(state.v[f]), sense(state.v[t]));
        let (ift, itf) = (sense(state.i[l][0]), sense(state.i[l][1]));
        let checks = [
            criterion1_check(vf, vt, itf, line, End::From, model.tau).map(|c| c.flag),
            criterion1_check(vt, vf, ift, line, End::To, model.tau).map(|c| c.flag),
            Some(criterion2_check(ift, vf, vt, line, End::From, model.tau).flag),
            Some(criterion2_check(itf, vt, vf, line, End::To, model.tau).flag),
        ];
        flags += checks.iter().filter(|c| **c == Some(true)).count();
    }
    if flags > 0 {
        return Err(format!("{flags} flags on honest lines"));
    }
    within(
        Duration::from_secs(60),
        started,
        format!("{samples} samples at tau = 0.01, full error disk: 0 flags"),
    )
}

// ---------------------------------------------------------------------------
// Boundary displacement bound

fn boundary_bound() -> Outcome {
    let started = Instant::now();
    let net = case("case30");
    let base = OperatingPoint::solve(&net).map_err(|e| e.to_string())?;
    let spec = AttackSpec::new([6, 8, 9, 10, 11, 28], 39);
    let sol = compute_initial_attack(&net, &spec, &base, &AttackOptions::default()).map_err(|e| e.to_string())?;
    let tau = 0.01;
    // boundary bus 6, interior neighbor 8 over line 6-8, exterior neighbor 4
    // over line 4-6
    let (k, a, m) = (6, 8, 4);
    let ka = net.lines.iter().position(|l| (l.from, l.to) == (k, a)).unwrap();
    let km = net.lines.iter().position(|l| (l.from, l.to) == (m, k)).unwrap();
    let (ik, ia, im) = (net.index_of(k).unwrap(), net.index_of(a).unwrap(), net.index_of(m).unwrap());

    let stale = reported_currents(&sol, &net).map_err(|e| e.to_string())?;
    let v_a = sol.reported_state.v[ia];
    let i_ak = stale[&(ka, End::To)];
    let v_k_r0 = sol.reported_state.v[ik];

    // the defender pushes a large injection from 2 into 13
    let mut physics = TruePhysics::attacked(&net, &gridward::attack::AttackStream::noisy(sol.clone(), 0.0, 0.0))
        .map_err(|e| e.to_string())?;
    let cmd = InjectionCommand {
        s: 2,
        t: 13,
        gamma: 0.3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let truth = physics.step(Some(&cmd), &mut rng, 0.0).map_err(|e| e.to_string())?;
    let v_k_star = truth.v[ik];
    let (v_m, i_mk) = (truth.v[im], truth.i[km][0]);

    let side_ka = LineSide::new(&net.lines[ka], End::From, i_ak, v_a);
    let side_km = LineSide::new(&net.lines[km], End::To, i_mk, v_m);
    let ratio = hoo_ratio(v_k_star, v_k_r0, &side_ka, &side_km, tau);
    if ratio <= 1.0 {
        return Err(format!("constructed ratio {ratio:.3} does not exceed 1"));
    }

    // replies on a grid over a box around both candidate voltages
    let (lo_re, hi_re) = (v_k_star.re.min(v_k_r0.re) - 0.05, v_k_star.re.max(v_k_r0.re) + 0.05);
    let (lo_im, hi_im) = (v_k_star.im.min(v_k_r0.im) - 0.05, v_k_star.im.max(v_k_r0.im) + 0.05);
    let (nx, ny) = (40, 25);
    let mut escaped = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let reply = Complex64::new(
                lo_re + (hi_re - lo_re) * i as f64 / (nx - 1) as f64,
                lo_im + (hi_im - lo_im) * j as f64 / (ny - 1) as f64,
            );
            let c_ka = criterion1_check(reply, v_a, i_ak, &net.lines[ka], End::From, tau).unwrap();
            let c_km = criterion1_check(reply, v_m, i_mk, &net.lines[km], End::To, tau).unwrap();
            if !c_ka.flag && !c_km.flag {
                escaped.push(reply);
            }
        }
    }
    if !escaped.is_empty() {
        return Err(format!("{} of {} replies pass both lines", escaped.len(), nx * ny));
    }
    within(
        Duration::from_secs(60),
        started,
        format!(
            "ratio {ratio:.3} at bus {k} (|dV| = {:.4} p.u.); all {} replies flagged",
            (v_k_star - v_k_r0).norm(),
            nx * ny
        ),
    )
}

// ---------------------------------------------------------------------------
// Voltage-change experiment

fn voltage_change() -> Outcome {
    let started = Instant::now();
    let net = case("case118");
    let base = OperatingPoint::solve(&net).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let states = voltage_experiments(&net, &base, 10, &mut rng).map_err(|e| e.to_string())?;
    let score = voltage_change_score(&net, &base.state, &states).map_err(|e| e.to_string())?;
    if !(score.min > 0.0 && score.mean >= score.min) {
        return Err(format!("min {:.4} mean {:.4}", score.min, score.mean));
    }
    within(
        Duration::from_secs(60),
        started,
        format!(
            "case118, 10 redispatches: min {:.2}%, mean {:.2}%",
            100.0 * score.min,
            100.0 * score.mean
        ),
    )
}

// ---------------------------------------------------------------------------
// Determinism

fn report_bytes(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let built = cfg.build(None, &AttackOptions::default()).map_err(|e| e.to_string())?;
    let out = run_scenario(&built.scenario).map_err(|e| e.to_string())?;
    let bundle = ReportBundle {
        metrics: vec![out.metrics],
        flows: Vec::new(),
        checks: built.validation.map(|v| v.checks).unwrap_or_default(),
        reports: out.report.into_iter().collect(),
    };
    let paths = write_reports(&bundle, dir).map_err(|e| e.to_string())?;
    paths.iter().map(|p| std::fs::read(p).map_err(|e| e.to_string())).collect()
}

fn determinism() -> Outcome {
    let started = Instant::now();
    let mut compared = 0;
    for file in ["noisy-pairs.toml", "replay-covariance.toml", "quiet.toml"] {
        let mut cfg = ScenarioConfig::load(fixtures().join("scenarios").join(file)).map_err(|e| e.to_string())?;
        cfg.seed = 99;
        let a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let b = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (x, y) = (report_bytes(&cfg, a.path())?, report_bytes(&cfg, b.path())?);
        if x != y {
            return Err(format!("{file}: reports differ between runs"));
        }
        compared += x.len();
    }
    within(
        Duration::from_secs(120),
        started,
        format!("{compared} report files byte-identical across reruns"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("dc-injection-lemmas", dc_lemmas),
        ("covariance-shift", covariance_shift),
        ("attack-synthesis", attack_synthesis),
        ("detection-correctness", detection_correctness),
        ("criteria-soundness", criteria_soundness),
        ("boundary-bound", boundary_bound),
        ("voltage-change", voltage_change),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let outcome = run();
        let took = started.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{took:.1?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{took:.1?}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
