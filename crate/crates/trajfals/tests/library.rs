mod common;

use std::collections::BTreeSet;

use trajfals::library::{load_library, Category};
use trajfals_core::falsify::{Falsifier, FalsifyConfig, SamplerKind};
use trajfals_core::lang::{feature_space, parse_with_id, Distribution};
use trajfals_core::metrics::MetricSpec;
use trajfals_core::sim::{collision_check, simulate};

use common::{scenario, scenarios_dir};

#[test]
fn shipped_library_loads() {
    let lib = load_library(&scenarios_dir()).unwrap();
    assert!(lib.len() >= 8, "{} entries", lib.len());
    let ids: BTreeSet<&str> = lib.iter().map(|e| e.id.as_str()).collect();
    for s in ["s1", "s2", "s3", "s4", "s5"] {
        assert!(
            ids.iter().any(|id| id.starts_with(&format!("{s}_"))),
            "missing {s}"
        );
    }
    let cats: BTreeSet<Category> = lib.iter().filter_map(|e| e.category).collect();
    for c in [
        Category::IntersectionYield,
        Category::UnprotectedLeft,
        Category::Bypassing,
        Category::Merging,
        Category::LaneChange,
    ] {
        assert!(cats.contains(&c), "no {c:?} entry");
    }
    let mut sorted: Vec<&str> = lib.iter().map(|e| e.id.as_str()).collect();
    sorted.sort();
    assert_eq!(
        sorted,
        lib.iter().map(|e| e.id.as_str()).collect::<Vec<_>>()
    );
}

#[test]
fn every_program_batches_by_timepoint_and_has_two_ranges() {
    for e in load_library(&scenarios_dir()).unwrap() {
        let features = feature_space(&e.program);
        let tp = features
            .iter()
            .find(|f| f.name == "timepoint")
            .unwrap_or_else(|| panic!("{} has no timepoint", e.id));
        match &tp.distribution {
            Distribution::Choice { values } => assert_eq!(
                values.iter().map(|v| v.value).collect::<Vec<_>>(),
                vec![20.0, 40.0, 60.0, 80.0],
                "{}",
                e.id
            ),
            d => panic!("{}: timepoint is {d:?}", e.id),
        }
        let ranges = features
            .iter()
            .filter(|f| matches!(f.distribution, Distribution::Range { .. }))
            .count();
        assert!(ranges >= 2, "{} has {ranges} ranges", e.id);
    }
}

fn collision_count(src: &str, seed: u64) -> usize {
    let p = parse_with_id("s4", src).unwrap();
    let cfg = FalsifyConfig::new(SamplerKind::Uniform, 100, seed);
    let mut f = Falsifier::new(&p, MetricSpec::default(), cfg).unwrap();
    let mut n = 0;
    while let Some(s) = f.next().unwrap() {
        let tr = simulate(&s.scenario, 100).unwrap();
        if collision_check(&tr, 1.0).is_some() {
            n += 1;
        }
        f.complete(s.index, Err("unused".into())).unwrap();
    }
    n
}

#[test]
fn s4_braking_prevents_collisions() {
    let src = std::fs::read_to_string(scenario("s4_unprotected_left")).unwrap();
    let line = "behavior car: BrakeOnCollisionRisk(2)\n";
    assert!(src.contains(line));
    let without = src.replace(line, "");
    let with_brake = collision_count(&src, 11);
    let no_brake = collision_count(&without, 11);
    assert!(with_brake <= 5, "{with_brake} collisions with braking");
    assert!(no_brake >= 20, "{no_brake} collisions without braking");
}
