use std::path::PathBuf;

use gridward::grid::{ac_solve, AcOptions, Network, PowerFlowSpec};
use gridward::io::{parse_case, parse_case_str, write_case, CaseFile};
use gridward::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn case14_counts() {
    let case = CaseFile::load(fixture("case14.m")).unwrap();
    assert_eq!((case.meta.buses, case.meta.lines, case.meta.generators), (14, 20, 5));
    assert_eq!(case.meta.name, "case14");
}

#[test]
fn bundled_cases_parse() {
    for (name, buses) in [("case9.m", 9), ("case30.m", 30), ("case118.m", 118)] {
        let net = parse_case(fixture(name)).unwrap();
        assert_eq!(net.n_buses(), buses, "{name}");
    }
}

#[test]
fn case14_converges_from_flat_start() {
    let net = parse_case(fixture("case14.m")).unwrap();
    let spec = PowerFlowSpec::from_network(&net).unwrap();
    let sol = ac_solve(&net, &spec, &AcOptions::default()).unwrap();
    assert!(sol.residual <= 1e-8);
    // regression fixture: the dense Newton solve takes 4 iterations here
    assert!(sol.iterations <= 10, "took {} iterations", sol.iterations);
    assert_eq!(sol.iterations, 4);
}

fn assert_same(a: &Network, b: &Network) {
    let close = |x: f64, y: f64| x == y || (x - y).abs() <= 1e-12 * x.abs().max(y.abs());
    assert_eq!(a.name, b.name);
    assert_eq!(a.slack, b.slack);
    assert_eq!(a.buses.len(), b.buses.len());
    for (p, q) in a.buses.iter().zip(&b.buses) {
        assert_eq!(p.id, q.id);
        assert_eq!(p.is_generator, q.is_generator);
        for (x, y) in [(p.v_min, q.v_min), (p.v_max, q.v_max), (p.p_load, q.p_load), (p.q_load, q.q_load)] {
            assert!(close(x, y), "bus {}: {x} vs {y}", p.id);
        }
    }
    for (p, q) in a.generators.iter().zip(&b.generators) {
        assert_eq!(p.bus, q.bus);
        let fields = [
            (p.p_min, q.p_min),
            (p.p_max, q.p_max),
            (p.q_min, q.q_min),
            (p.q_max, q.q_max),
            (p.p_set, q.p_set),
            (p.q_set, q.q_set),
            (p.v_set, q.v_set),
        ];
        for (x, y) in fields {
            assert!(close(x, y), "gen {}: {x} vs {y}", p.bus);
        }
    }
    for (p, q) in a.lines.iter().zip(&b.lines) {
        assert_eq!((p.from, p.to, p.in_service), (q.from, q.to, q.in_service));
        let fields = [
            (p.r, q.r),
            (p.x, q.x),
            (p.b_charge, q.b_charge),
            (p.tap_ratio, q.tap_ratio),
            (p.phase_shift, q.phase_shift),
            (p.s_max, q.s_max),
            (p.theta_max, q.theta_max),
        ];
        for (x, y) in fields {
            assert!(close(x, y), "line {}-{}: {x} vs {y}", p.from, p.to);
        }
    }
    assert_eq!(a.participation, b.participation);
}

#[test]
fn serialize_round_trip() {
    for name in ["case9.m", "case14.m", "case30.m", "case118.m"] {
        let net = parse_case(fixture(name)).unwrap();
        let again = parse_case_str(&write_case(&net), "unused").unwrap();
        assert_same(&net, &again);
        // a second pass is exact
        let third = parse_case_str(&write_case(&again), "unused").unwrap();
        assert_eq!(write_case(&again), write_case(&third));
    }
}

/// Byte ranges of numeric tokens inside the bus/gen/branch tables, with
/// each token's position in its row.
fn numeric_tokens(text: &str) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut in_table = false;
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let body = line.split('%').next().unwrap();
        if body.contains("mpc.bus =") || body.contains("mpc.gen =") || body.contains("mpc.branch =") {
            in_table = true;
        } else if in_table && body.contains(']') {
            in_table = false;
        } else if in_table {
            let mut i = 0;
            let mut idx = 0;
            let bytes = body.as_bytes();
            while i < bytes.len() {
                if bytes[i].is_ascii_whitespace() || bytes[i] == b';' {
                    i += 1;
                    continue;
                }
                let s = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b';' {
                    i += 1;
                }
                out.push((pos + s, pos + i, idx));
                idx += 1;
            }
        }
        pos += line.len();
    }
    out
}

#[test]
fn fuzzed_numeric_fields_give_structured_errors() {
    let text = std::fs::read_to_string(fixture("case30.m")).unwrap();
    let tokens = numeric_tokens(&text);
    assert!(tokens.len() > 500);
    let garbage = ["x", "1.2.3", "--4", "nan", "NaN", "1e", "e5", "0x10", "+-1", "inf5", "1e999", "∞", "1_0"];
    let suffixes = ["x", ".2.", "--4", "nan", "1e", "0x10", "+-1", "inf", "∞", "_0", "e"];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut parse_errors = 0;
    for _ in 0..1500 {
        let (s, e, _) = tokens[rng.random_range(0..tokens.len())];
        let tok = &text[s..e];
        let replacement = match rng.random_range(0..3) {
            0 => garbage[rng.random_range(0..garbage.len())].to_string(),
            1 => format!("{tok}{}", suffixes[rng.random_range(0..suffixes.len())]),
            _ => {
                let cut = rng.random_range(0..tok.len());
                format!("{}q{}", &tok[..cut], &tok[cut..])
            }
        };
        let mutant = format!("{}{}{}", &text[..s], replacement, &text[e..]);
        match parse_case_str(&mutant, "fuzz") {
            Err(Error::Parse { line, column, .. }) => {
                assert!(line >= 1 && column >= 1);
                parse_errors += 1;
            }
            Err(other) => panic!("`{tok}` -> `{replacement}` gave {other:?}"),
            Ok(_) => panic!("`{tok}` -> `{replacement}` was accepted"),
        }
    }
    assert_eq!(parse_errors, 1500);
}

#[test]
fn truncated_rows_are_rejected() {
    let text = std::fs::read_to_string(fixture("case9.m")).unwrap();
    let tokens = numeric_tokens(&text);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let early: Vec<_> = tokens.iter().filter(|t| (1..9).contains(&t.2)).collect();
    for _ in 0..200 {
        let &(s, _, _) = early[rng.random_range(0..early.len())];
        // end the row just before this token
        let line_end = s + text[s..].find('\n').unwrap();
        let mutant = format!("{};{}", &text[..s], &text[line_end..]);
        assert!(parse_case_str(&mutant, "fuzz").is_err());
    }
}
