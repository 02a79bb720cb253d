use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;

const MINIMAL: &str = r#"
map straight(lanes = 1, length = 100)
ego car on "lane0" at 0 speed 5
behavior car: FollowLane(target_speed = 5)
predict car at 20
"#;

const TWO_AGENTS: &str = r#"
# two cars on a straight road
map straight(lanes = 2, length = 200, lane_width = lw)
param lw = Constant(3.5)
param s = Range(2, 6)
param timepoint = Choice(20, 40, 60, 80)
ego ego on "lane0" at 50 speed s
agent adv on "lane0" at gap speed 6
param gap = Range(0, 100)
behavior ego: FollowLane(s)
behavior adv: FollowLane(target_speed = 6) for 2.5 until dist(adv, ego) < 8 and lead(adv, ego) < 0
behavior adv: LaneChange(left, duration = 3)
behavior adv: BrakeOnCollisionRisk()
predict adv at timepoint
require initial_dist(ego, adv) > 2
"#;

fn assign(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn minimal_program() {
    let p = parse(MINIMAL).unwrap();
    assert_eq!(p.agents.len(), 1);
    assert!(p.agents[0].is_ego);
    assert!(feature_space(&p)
        .iter()
        .all(|f| f.interval_length.is_none()));
    assert!(feature_space(&p).is_empty());
}

#[test]
fn range_param_feature() {
    let src = MINIMAL.replace("at 0 speed 5", "at 0 speed s") + "param s = Range(2, 6)\n";
    let p = parse(&src).unwrap();
    let fs = feature_space(&p);
    assert_eq!(fs.len(), 1);
    assert_eq!(fs[0].name, "s");
    assert_eq!(fs[0].interval_length, Some(4.0));
}

#[test]
fn reversed_range_is_rejected() {
    let src = MINIMAL.to_string() + "param s = Range(6, 2)\n";
    let e = parse(&src).unwrap_err();
    assert_eq!(e.message, "Range requires lo < hi");
    assert_eq!(e.line, 6);
}

#[test]
fn constants_are_not_features() {
    let p = parse(TWO_AGENTS).unwrap();
    let names: Vec<_> = feature_space(&p).into_iter().map(|f| f.name).collect();
    assert_eq!(names, ["s", "timepoint", "gap"]);
}

#[test]
fn inline_distribution_is_hoisted() {
    let src = MINIMAL.replace("at 0 speed 5", "at Range(-30, -10) speed 5");
    let p = parse(&src).unwrap();
    let fs = feature_space(&p);
    assert_eq!(fs.len(), 1);
    assert_eq!(fs[0].name, "agent0.init.offset");
    assert_eq!(fs[0].interval_length, Some(20.0));
}

#[test]
fn multiple_inline_distributions_in_one_expression() {
    let src = MINIMAL.replace("speed 5", "speed Range(1, 2) + Range(3, 4) + Constant(1)");
    let names: Vec<_> = feature_space(&parse(&src).unwrap())
        .into_iter()
        .map(|f| f.name)
        .collect();
    assert_eq!(names, ["agent0.init.speed", "agent0.init.speed#2"]);
}

#[test]
fn feature_space_is_stable_under_reparse() {
    let a = feature_space(&parse(TWO_AGENTS).unwrap());
    let b = feature_space(&parse(TWO_AGENTS).unwrap());
    assert_eq!(a, b);
}

fn kind(src: &str) -> ParseErrorKind {
    parse(src).unwrap_err().kind
}

#[test]
fn error_kinds() {
    assert_eq!(
        kind(&MINIMAL.replace("at 0", "at $")),
        ParseErrorKind::Lexical
    );
    assert_eq!(kind(&MINIMAL.replace("at 0", "at")), ParseErrorKind::Syntax);
    assert_eq!(
        kind(&MINIMAL.replace("speed 5", "speed zz")),
        ParseErrorKind::UnknownIdentifier
    );
    assert_eq!(
        kind(&MINIMAL.replace("at 20", "at 20.0")),
        ParseErrorKind::TypeMismatch
    );
    assert_eq!(
        kind(&(MINIMAL.to_string() + "param a = Range(0,1)\nparam a = Range(0,2)\n")),
        ParseErrorKind::DuplicateFeature
    );
    assert_eq!(
        kind(&MINIMAL.replace("ego car", "agent car")),
        ParseErrorKind::MissingEgo
    );
    assert_eq!(
        kind(&MINIMAL.replace("predict car at 20", "")),
        ParseErrorKind::MissingPredict
    );
    assert_eq!(
        kind(&MINIMAL.replace("map straight(lanes = 1, length = 100)", "")),
        ParseErrorKind::MissingMap
    );
    assert_eq!(
        kind(&(MINIMAL.to_string() + "param c = Choice(1, 2.5)\n")),
        ParseErrorKind::TypeMismatch
    );
    assert_eq!(
        kind(&(MINIMAL.to_string() + "require car > 1\n")),
        ParseErrorKind::TypeMismatch
    );
}

#[test]
fn semantic_rules() {
    // timepoint below the history length
    assert_eq!(
        kind(&MINIMAL.replace("at 20", "at 19")),
        ParseErrorKind::Invalid
    );
    assert_eq!(
        kind(&(MINIMAL.replace("at 20", "at tp") + "param tp = Choice(10, 20)\n")),
        ParseErrorKind::Invalid
    );
    // Range-valued timepoint is not an integer
    assert_eq!(
        kind(&(MINIMAL.replace("at 20", "at tp") + "param tp = Range(20, 40)\n")),
        ParseErrorKind::TypeMismatch
    );
    // unknown lane
    assert_eq!(
        kind(&MINIMAL.replace("\"lane0\"", "\"lane7\"")),
        ParseErrorKind::UnknownIdentifier
    );
    // non-positive behavior argument
    assert_eq!(
        kind(&MINIMAL.replace("target_speed = 5", "target_speed = 0")),
        ParseErrorKind::Invalid
    );
    // query outside a condition
    assert_eq!(
        kind(&MINIMAL.replace("speed 5", "speed speed(car)")),
        ParseErrorKind::Invalid
    );
    // distribution inside a condition
    assert_eq!(
        kind(&(MINIMAL.to_string() + "require Range(0, 1) > 0\n")),
        ParseErrorKind::Invalid
    );
    // agent without behavior
    assert_eq!(
        kind(&(MINIMAL.to_string() + "agent b on \"lane0\" at 1 speed 1\n")),
        ParseErrorKind::Invalid
    );
    // two egos
    assert_eq!(
        kind(
            &(MINIMAL.to_string() + "ego b on \"lane0\" at 1 speed 1\nbehavior b: FollowLane(1)\n")
        ),
        ParseErrorKind::Invalid
    );
}

#[test]
fn errors_carry_line_and_column() {
    let e = parse("map straight()\nego car on \"lane0\" at 0 speed 5 5\n").unwrap_err();
    assert_eq!((e.line, e.col, e.kind), (2, 33, ParseErrorKind::Syntax));
    assert!(e.to_string().starts_with("2:33: syntax error"));
}

#[test]
fn deep_nesting_is_a_diagnostic() {
    let deep = "(".repeat(5000) + "1" + &")".repeat(5000);
    let src = MINIMAL.replace("speed 5", &alloc::format!("speed {deep}"));
    assert_eq!(kind(&src), ParseErrorKind::Syntax);
    let negs = "-".repeat(5000) + "1";
    assert_eq!(
        kind(&MINIMAL.replace("speed 5", &alloc::format!("speed {negs}"))),
        ParseErrorKind::Syntax
    );
}

#[test]
fn invalid_utf8_is_lexical() {
    let e = parse_bytes("x", b"map straight()\n\xff").unwrap_err();
    assert_eq!((e.kind, e.line, e.col), (ParseErrorKind::Lexical, 2, 1));
}

#[test]
fn pretty_print_round_trip() {
    for src in [MINIMAL, TWO_AGENTS] {
        let p = parse(src).unwrap();
        let printed = p.to_string();
        let q = parse(&printed).unwrap_or_else(|e| panic!("{e}\n{printed}"));
        assert_eq!(
            serde_json::to_value(&p).unwrap(),
            serde_json::to_value(&q).unwrap()
        );
        assert_eq!(printed, q.to_string());
    }
}

#[test]
fn precedence_survives_printing() {
    let src = MINIMAL.replace("speed 5", "speed (1 + 2) * 3 - -(4 - 5) / (6 / 2)")
        + "require not (dist(car, car) < 1 or speed(car) > 2) and true\n";
    let p = parse(&src).unwrap();
    let q = parse(&p.to_string()).unwrap();
    assert_eq!(
        serde_json::to_value(&p).unwrap(),
        serde_json::to_value(&q).unwrap()
    );
}

#[test]
fn concretize_accepts_and_rejects_on_requirement() {
    let src = r#"
map straight(lanes = 1, length = 100)
param gap = Range(0, 50)
ego ego on "lane0" at 20 speed 5
agent adv on "lane0" at 20 + gap speed 5
behavior ego: FollowLane(5)
behavior adv: FollowLane(5)
predict adv at 20
require initial_dist(ego, adv) > 2
"#;
    let p = parse(src).unwrap();
    match concretize(&p, &assign(&[("gap", 10.0)]), 1).unwrap() {
        Concretized::Accepted(s) => {
            assert_eq!(s.agents[1].arc_offset, 30.0);
            assert_eq!(s.timepoint, 20);
            assert_eq!(s.target, 1);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(
        concretize(&p, &assign(&[("gap", 1.0)]), 1).unwrap(),
        Concretized::Rejected { requirement: 0 }
    );
    assert_eq!(
        concretize(&p, &assign(&[]), 1).unwrap_err(),
        ConcretizeError::MissingFeature("gap".into())
    );
    assert!(matches!(
        concretize(&p, &assign(&[("gap", 51.0)]), 1).unwrap_err(),
        ConcretizeError::OutOfSupport { .. }
    ));
    assert!(matches!(
        concretize(&p, &assign(&[("gap", 5.0), ("zzz", 1.0)]), 1).unwrap_err(),
        ConcretizeError::ExtraFeature(_)
    ));
}

#[test]
fn negative_offset_counts_from_lane_end() {
    let src = MINIMAL.replace("at 0 speed 5", "at -30 speed 5");
    let p = parse(&src).unwrap();
    let Concretized::Accepted(s) = concretize(&p, &BTreeMap::new(), 0).unwrap() else {
        panic!()
    };
    assert_eq!(s.agents[0].arc_offset, 70.0);
    let p = parse(&MINIMAL.replace("at 0 speed 5", "at 130 speed 5")).unwrap();
    assert!(concretize(&p, &BTreeMap::new(), 0).is_err());
}

#[test]
fn concretize_is_pure_in_assignment() {
    let p = parse(TWO_AGENTS).unwrap();
    let a = assign(&[("s", 3.0), ("timepoint", 40.0), ("gap", 20.0)]);
    let Concretized::Accepted(x) = concretize(&p, &a, 1).unwrap() else {
        panic!()
    };
    let Concretized::Accepted(y) = concretize(&p, &a, 999).unwrap() else {
        panic!()
    };
    assert_eq!(x.agents, y.agents);
    assert_eq!(x.timepoint, 40);
    assert_eq!(x.agents[1].behavior.len(), 3);
    assert!(
        matches!(x.agents[1].behavior[2].action, Action::BrakeOnCollisionRisk { ttc } if ttc == 2.0)
    );
}

#[test]
fn choice_support_is_exact() {
    let p = parse(TWO_AGENTS).unwrap();
    let a = assign(&[("s", 3.0), ("timepoint", 41.0), ("gap", 20.0)]);
    assert!(matches!(
        concretize(&p, &a, 1).unwrap_err(),
        ConcretizeError::OutOfSupport { .. }
    ));
}

fn mutate(src: &[u8], ops: &[(u8, usize, u8)]) -> Vec<u8> {
    let mut v = src.to_vec();
    for &(op, pos, byte) in ops {
        if v.is_empty() {
            v.push(byte);
            continue;
        }
        let i = pos % v.len();
        match op % 4 {
            0 => v[i] = byte,
            1 => v.insert(i, byte),
            2 => {
                v.remove(i);
            }
            _ => {
                let j = (i + byte as usize) % v.len();
                v.swap(i, j);
            }
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn parser_never_panics_on_mutations(ops in proptest::collection::vec((any::<u8>(), any::<usize>(), any::<u8>()), 1..12)) {
        let bytes = mutate(TWO_AGENTS.as_bytes(), &ops);
        if let Ok(p) = parse_bytes("fuzz", &bytes) {
            // whatever parses must print back to something that parses identically
            let q = parse_with_id("fuzz", &p.to_string()).expect("printed program reparses");
            prop_assert_eq!(serde_json::to_value(&p).unwrap(), serde_json::to_value(&q).unwrap());
        }
    }

    #[test]
    fn parser_never_panics_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        let _ = parse_bytes("fuzz", &bytes);
    }
}

#[test]
fn timepoint_feature_lookup() {
    assert_eq!(
        timepoint_feature(&parse(TWO_AGENTS).unwrap()).as_deref(),
        Some("timepoint")
    );
    assert_eq!(timepoint_feature(&parse(MINIMAL).unwrap()), None);
    let inline = MINIMAL.replace("at 20", "at Choice(20, 40)");
    assert_eq!(
        timepoint_feature(&parse(&inline).unwrap()).as_deref(),
        Some("predict.timepoint")
    );
}
