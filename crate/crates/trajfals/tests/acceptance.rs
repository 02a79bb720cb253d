//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajfals::bench::{run_benchmark, BenchConfig};
use trajfals::config::RunConfig;
use trajfals::library::{load_library, load_program};
use trajfals::replay::replay_run;
use trajfals::runner::run_falsification;
use trajfals_core::falsify::{
    falsify, Evaluation, Falsifier, FalsifyConfig, FalsifyResult, SamplerKind,
};
use trajfals_core::geom::Vec2;
use trajfals_core::lang::{feature_space, parse, parse_with_id, ScenarioProgram};
use trajfals_core::metrics::{
    min_ade, min_fde, miss_rate, rho, scenario_diversity, MetricSpec, RhoTuple,
};
use trajfals_core::pipeline::{evaluate, EvalConfig};
use trajfals_core::predict::{AlwaysMiss, Oracle, Predictor};
use trajfals_core::sim::{simulate, split_trace, WindowError};

use common::{scenario, scenarios_dir};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------------------
// metric oracle

fn oracle_ade(c: &[Vec2], t: &[Vec2]) -> f64 {
    let mut total = 0.0;
    for i in 0..t.len() {
        let dx = c[i].x - t[i].x;
        let dy = c[i].y - t[i].y;
        total += (dx * dx + dy * dy).sqrt();
    }
    total / t.len() as f64
}

fn oracle_fde(c: &[Vec2], t: &[Vec2]) -> f64 {
    let n = t.len() - 1;
    ((c[n].x - t[n].x).powi(2) + (c[n].y - t[n].y).powi(2)).sqrt()
}

fn oracle_min(values: Vec<f64>) -> f64 {
    let mut v = values;
    v.sort_by(|a, b| a.total_cmp(b));
    v[0]
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let d = 1.0;
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let horizon = rng.random_range(1..=30);
        let k = rng.random_range(1..=8);
        let truth: Vec<Vec2> = (0..horizon)
            .map(|_| Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        let candidates: Vec<Vec<Vec2>> = (0..k)
            .map(|_| {
                let scale = [0.0, 0.01, 0.5, 3.0][rng.random_range(0..4)];
                truth
                    .iter()
                    .map(|p| {
                        Vec2::new(
                            p.x + scale * rng.random_range(-1.0..1.0),
                            p.y + scale * rng.random_range(-1.0..1.0),
                        )
                    })
                    .collect()
            })
            .collect();
        let ade = min_ade(&candidates, &truth).map_err(|e| e.to_string())?;
        let fde = min_fde(&candidates, &truth).map_err(|e| e.to_string())?;
        let want_ade = oracle_min(candidates.iter().map(|c| oracle_ade(c, &truth)).collect());
        let want_fde = oracle_min(candidates.iter().map(|c| oracle_fde(c, &truth)).collect());

        let fdes: Vec<f64> = (0..rng.random_range(1..=50))
            .map(|_| match rng.random_range(0..5) {
                0 => d,
                _ => rng.random_range(0.0..2.0 * d),
            })
            .collect();
        let mr = miss_rate(&fdes, d).map_err(|e| e.to_string())?;
        let misses = fdes.iter().filter(|&&f| !(f <= d)).count();
        let want_mr = misses as f64 / fdes.len() as f64;

        for (got, want, what) in [
            (ade, want_ade, "minADE"),
            (fde, want_fde, "minFDE"),
            (mr, want_mr, "MR"),
        ] {
            let diff = (got - want).abs();
            ensure(diff <= 1e-9, || {
                format!("case {case}: {what} {got} vs oracle {want}")
            })?;
            worst = worst.max(diff);
        }
    }
    Ok(format!("1000 instances, max |diff| {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// rho sign convention

fn rho_convention() -> Check {
    let spec = MetricSpec::default();
    let (ta, tf, d) = (
        spec.entries[0].threshold,
        spec.entries[1].threshold,
        spec.mr_distance,
    );
    let cases = [
        // (minADE, minFDE, expected scores' signs, counterexample)
        (ta, tf, [0, 0, 1], false),
        (ta.next_down(), tf.next_down(), [1, 1, 1], false),
        (ta.next_up(), tf, [-1, 0, 1], true),
        (ta, tf.next_up(), [0, -1, -1], true),
        (0.0, 0.0, [1, 1, 1], false),
        (0.037, 0.15, [1, 1, 1], false),
        (0.15, 0.5, [-1, 1, 1], true),
        (5.0, d, [-1, 0, 1], true),
    ];
    let mut n = 0;
    for (a, f, signs, ce) in cases {
        let r = rho(&spec, a, f).map_err(|e| e.to_string())?;
        for (s, want) in r.scores.iter().zip(signs) {
            let got = if *s < 0.0 {
                -1
            } else if *s == 0.0 {
                0
            } else {
                1
            };
            ensure(got == want, || {
                format!("({a}, {f}): score {s}, wanted sign {want}")
            })?;
        }
        ensure(r.is_counterexample == ce, || format!("({a}, {f}): {r:?}"))?;
        n += 1;
    }
    let (ade0, fde0) = (0.037, 0.15);
    let r = rho(&spec, ade0, fde0).map_err(|e| e.to_string())?;
    ensure(
        (r.scores[0] - 0.063).abs() < 1e-12 && (r.scores[1] - 0.85).abs() < 1e-12,
        || format!("{r:?}"),
    )?;
    // every sign pattern over three entries, including signed zeros
    let values = [-1.0, -1e-300, -0.0, 0.0, 1e-300, 1.0];
    for a in values {
        for b in values {
            for c in values {
                let t = RhoTuple::from_scores(vec![a, b, c]);
                let want = a < 0.0 || b < 0.0 || c < 0.0;
                ensure(t.is_counterexample == want, || format!("{a} {b} {c}"))?;
                n += 1;
            }
        }
    }
    Ok(format!("{n} boundary cases, zero score passes"))
}

// ---------------------------------------------------------------------------
// SD calibration

const TWO_RANGES: &str = r#"
map straight(lanes = 1, length = 200)
param x = Range(0, 10)
param y = Range(-3, 5)
ego car on "lane0" at 10 speed 5
behavior car: FollowLane(5)
predict car at 20
"#;

fn sd_calibration() -> Check {
    let prog = parse(TWO_RANGES).map_err(|e| e.to_string())?;
    let spec = MetricSpec::default();
    let features = feature_space(&prog);
    let mut sds = Vec::new();
    for seed in 0..20 {
        let cfg = FalsifyConfig::new(SamplerKind::Uniform, 120, seed);
        let r = falsify(&prog, &spec, cfg, |_| {
            Evaluation::from_metrics(&spec, 0.0, 0.0).map_err(|e| e.to_string())
        })
        .map_err(|e| e.to_string())?;
        sds.push(scenario_diversity(&r.stats, &features).map_err(|e| e.to_string())?);
    }
    let m = median(sds);
    ensure((m - 0.577).abs() <= 0.08, || format!("median SD {m:.4}"))?;
    Ok(format!("median SD {m:.4} over 20 seeds x 120 samples"))
}

// ---------------------------------------------------------------------------
// CR extremes

fn run_s1(model: &mut dyn Predictor) -> Result<FalsifyResult, String> {
    let lp = load_program(&scenario("s1_three_way_yield")).map_err(|e| e.to_string())?;
    let spec = MetricSpec::default();
    let cfg = FalsifyConfig::new(SamplerKind::Mab, 50, 1);
    falsify(&lp.program, &spec, cfg, |p| {
        evaluate(&p.scenario, model, &spec, EvalConfig::default())
            .map(|o| o.evaluation)
            .map_err(|e| e.to_string())
    })
    .map_err(|e| e.to_string())
}

fn cr_extremes() -> Check {
    let good = run_s1(&mut Oracle::default())?;
    let bad = run_s1(&mut AlwaysMiss::default())?;
    let cr = |r: &FalsifyResult| r.stats.n_counterexamples as f64 / r.stats.n_samples as f64;
    ensure(
        good.stats.n_samples == 50 && bad.stats.n_samples == 50,
        || {
            format!(
                "evaluated {} / {} samples",
                good.stats.n_samples, bad.stats.n_samples
            )
        },
    )?;
    ensure(cr(&good) == 0.0 && good.error_table.is_empty(), || {
        format!(
            "oracle CR {} with {} rows",
            cr(&good),
            good.error_table.len()
        )
    })?;
    ensure(cr(&bad) == 1.0 && bad.error_table.len() == 50, || {
        format!(
            "always-miss CR {} with {} rows",
            cr(&bad),
            bad.error_table.len()
        )
    })?;
    Ok("oracle CR 0 (0 rows), always-miss CR 1 (50 rows)".into())
}

// ---------------------------------------------------------------------------
// MAB efficacy

const PLANTED: &str = r#"
map straight(lanes = 1, length = 200)
param x = Range(0, 10)
param y = Range(0, 1)
ego car on "lane0" at 10 speed 5
behavior car: FollowLane(5)
predict car at 20
"#;

fn planted_cr(prog: &ScenarioProgram, kind: SamplerKind, seed: u64) -> Result<f64, String> {
    let spec = MetricSpec::default();
    let cfg = FalsifyConfig::new(kind, 200, seed);
    let r = falsify(prog, &spec, cfg, |p| {
        let (ade, fde) = if p.assignment["x"] >= 8.0 {
            (0.4, 2.0)
        } else {
            (0.02, 0.2)
        };
        Evaluation::from_metrics(&spec, ade, fde).map_err(|e| e.to_string())
    })
    .map_err(|e| e.to_string())?;
    Ok(r.stats.n_counterexamples as f64 / r.stats.n_samples as f64)
}

fn mab_efficacy() -> Check {
    let prog = parse(PLANTED).map_err(|e| e.to_string())?;
    let mut mab = Vec::new();
    let mut uni = Vec::new();
    for seed in 0..20 {
        mab.push(planted_cr(&prog, SamplerKind::Mab, seed)?);
        uni.push(planted_cr(&prog, SamplerKind::Uniform, seed)?);
    }
    let (m, u) = (median(mab), median(uni));
    ensure(m >= 1.2 * u, || format!("MAB CR {m:.3} vs uniform {u:.3}"))?;
    Ok(format!(
        "median CR: MAB {m:.3}, uniform {u:.3} ({:.2}x)",
        m / u
    ))
}

// ---------------------------------------------------------------------------
// Table 1 ordering

fn table1_ordering() -> Check {
    let ids = [
        "s1_three_way_yield",
        "s2_three_way_left",
        "s3_bypass",
        "s4_unprotected_left",
        "s5_same_leg",
    ];
    let cfg = RunConfig {
        scenarios: ids.iter().map(|id| scenario(id)).collect(),
        ..RunConfig::default()
    };
    let out = run_falsification(&cfg).map_err(|e| e.to_string())?;
    let mut fde = BTreeMap::new();
    for s in &out.report.scenarios {
        ensure(s.overall.n_samples == 120, || {
            format!("{}: {} evaluated samples", s.id, s.overall.n_samples)
        })?;
        fde.insert(&s.id[..2], s.overall.min_fde.ok_or("no minFDE")?);
    }
    let easy = ["s1", "s2", "s3"]
        .iter()
        .map(|k| fde[k])
        .fold(f64::MIN, f64::max);
    let summary = fde
        .iter()
        .map(|(k, v)| format!("{k}={v:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(fde["s5"] > fde["s4"] && fde["s4"] > easy, || {
        format!("order violated: {summary}")
    })?;
    Ok(format!("mean minFDE {summary}"))
}

// ---------------------------------------------------------------------------
// parallel speedup

fn parallel_speedup() -> Check {
    let lp = load_program(&scenario("s4_unprotected_left")).map_err(|e| e.to_string())?;
    let cfg = BenchConfig {
        iterations: vec![100],
        ..BenchConfig::default()
    };
    let r = run_benchmark(&lp.program, &cfg).map_err(|e| e.to_string())?;
    let s2 = r.speedup(2).ok_or("no w2 column")?;
    let s5 = r.speedup(5).ok_or("no w5 column")?;
    let cpus = std::thread::available_parallelism().map_or(0, |n| n.get());
    let t = &r.rows[0].seconds;
    let detail = format!(
        "w1 {:.1}s w2 {:.1}s w5 {:.1}s; speedup {s2:.2}x / {s5:.2}x; guard trips {}; {cpus} CPU(s)",
        t[0], t[1], t[2], r.guard_trips
    );
    ensure(r.guard_trips == 0 && s2 >= 1.3 && s5 >= 2.5, || {
        detail.clone()
    })?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// determinism and replay

fn cli_run(dir: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_trajfals"))
        .arg("run")
        .args(
            load_library(&scenarios_dir())
                .map_err(|e| e.to_string())?
                .iter()
                .map(|e| e.path.clone()),
        )
        .args(["--samples", "10", "--workers", "1", "--seed", "42", "--out"])
        .arg(dir)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    ensure(status.success(), || {
        format!("trajfals run exited with {status}")
    })
}

fn determinism_replay() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    cli_run(a.path())?;
    cli_run(b.path())?;
    for f in ["report.json", "samples.jsonl", "errors.jsonl", "errors.csv"] {
        let x = std::fs::read(a.path().join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(f)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{f} differs between runs"))?;
    }
    let outcomes = replay_run(a.path(), &BTreeMap::new()).map_err(|e| e.to_string())?;
    ensure(!outcomes.is_empty(), || "error table is empty".into())?;
    let worst = outcomes.iter().map(|o| o.max_diff).fold(0.0, f64::max);
    let bad = outcomes.iter().filter(|o| !o.matches()).count();
    ensure(bad == 0, || {
        format!("{bad} rows outside 1e-9 (worst {worst:e})")
    })?;
    Ok(format!(
        "outputs byte-identical; {} rows replayed, max |diff| {worst:.1e}",
        outcomes.len()
    ))
}

// ---------------------------------------------------------------------------
// windowing

fn windowing() -> Check {
    let prog = parse(
        "map straight(lanes = 2, length = 300)\nego car on \"lane0\" at 10 speed 4\n\
         agent other on \"lane1\" at 5 speed 6\nbehavior car: FollowLane(5)\n\
         behavior other: FollowLane(6)\npredict other at 40\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg = FalsifyConfig::new(SamplerKind::Uniform, 1, 0);
    let mut f = Falsifier::new(&prog, MetricSpec::default(), cfg).map_err(|e| e.to_string())?;
    let s = f
        .next()
        .map_err(|e| e.to_string())?
        .ok_or("no sample")?
        .scenario;
    let tr = simulate(&s, 55).map_err(|e| e.to_string())?;
    let w = split_trace(&tr, 40, 1).map_err(|e| e.to_string())?;
    ensure(w.history.len() == 2, || {
        format!("{} history rows", w.history.len())
    })?;
    for (a, hist) in w.history.iter().enumerate() {
        ensure(hist.len() == 20, || {
            format!("agent {a}: {} history steps", hist.len())
        })?;
        for (i, p) in hist.iter().enumerate() {
            let st = &tr.steps[20 + i][a];
            ensure(p.position == st.position && p.heading == st.heading, || {
                format!("agent {a} history[{i}] is not step {}", 20 + i)
            })?;
        }
    }
    ensure(w.future.len() == 15, || {
        format!("{} future steps", w.future.len())
    })?;
    for (i, p) in w.future.iter().enumerate() {
        ensure(*p == tr.steps[40 + i][1].position, || {
            format!("future[{i}] is not step {}", 40 + i)
        })?;
    }
    ensure(
        split_trace(&tr, 19, 1) == Err(WindowError::TimepointTooEarly(19)),
        || "timepoint 19 accepted".into(),
    )?;
    ensure(
        matches!(
            split_trace(&tr, 41, 1),
            Err(WindowError::TraceTooShort { .. })
        ),
        || "window past the trace end accepted".into(),
    )?;
    Ok("t=40: history [20,40), future [40,55); t=19 rejected".into())
}

// ---------------------------------------------------------------------------
// parser robustness

const TOKENS: &[&str] = &[
    "(",
    ")",
    ",",
    "=",
    ":",
    "\"",
    "\n",
    " ",
    "-",
    "*",
    "/",
    "+",
    "<",
    ">=",
    "and",
    "not",
    "param",
    "map",
    "ego",
    "agent",
    "behavior",
    "predict",
    "require",
    "for",
    "until",
    "at",
    "speed",
    "on",
    "Range",
    "Choice",
    "Constant",
    "lead",
    "dist",
    "1e308",
    "-1e308",
    "NaN",
    "inf",
    "0",
    "-0",
    "99999999999999999999",
    "0.",
    ".5",
    "é",
    "\u{0}",
    "#",
    "\t",
];

fn mutate(src: &[u8], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut s = src.to_vec();
    for _ in 0..rng.random_range(1..=4) {
        let n = s.len().max(1);
        let at = rng.random_range(0..n).min(s.len());
        match rng.random_range(0..6) {
            0 => {
                if at < s.len() {
                    s[at] = rng.random();
                }
            }
            1 => {
                let end = (at + rng.random_range(1..20)).min(s.len());
                s.drain(at..end);
            }
            2 => {
                let tok = TOKENS[rng.random_range(0..TOKENS.len())];
                s.splice(at..at, tok.bytes());
            }
            3 => {
                let end = (at + rng.random_range(1..40)).min(s.len());
                let chunk = s[at..end].to_vec();
                let to = rng.random_range(0..=s.len());
                s.splice(to..to, chunk);
            }
            4 => s.truncate(at),
            _ => {
                if at < s.len() && s[at].is_ascii_digit() {
                    s[at] = b'0' + rng.random_range(0..10u8);
                }
            }
        }
    }
    s
}

fn parser_robustness() -> Check {
    let lib = load_library(&scenarios_dir()).map_err(|e| e.to_string())?;
    ensure(lib.len() >= 8, || format!("{} library entries", lib.len()))?;
    let sources: Vec<Vec<u8>> = lib
        .iter()
        .map(|e| std::fs::read(&e.path).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let (mut parsed, mut concretized, mut crashes) = (0, 0, Vec::new());
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for case in 0..10_000 {
        let src = &sources[rng.random_range(0..sources.len())];
        let bytes = mutate(src, &mut rng);
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            let text = String::from_utf8_lossy(&bytes);
            let Ok(prog) = parse_with_id("fuzz", &text) else {
                return (false, false);
            };
            let cfg = FalsifyConfig::new(SamplerKind::Uniform, 1, case);
            let ok = Falsifier::new(&prog, MetricSpec::default(), cfg)
                .ok()
                .and_then(|mut f| f.next().ok().flatten())
                .is_some();
            (true, ok)
        }));
        match outcome {
            Ok((p, c)) => {
                parsed += p as usize;
                concretized += c as usize;
            }
            Err(_) => crashes.push(case),
        }
    }
    std::panic::set_hook(hook);
    ensure(crashes.is_empty(), || {
        format!("{} crashes, first at case {}", crashes.len(), crashes[0])
    })?;
    Ok(format!(
        "10000 mutants: 0 crashes, {parsed} parsed, {concretized} concretized; {} library files validate",
        lib.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: &[Criterion] = &[
        ("metric-oracle", metric_oracle, Duration::from_secs(5)),
        ("rho-convention", rho_convention, Duration::from_secs(5)),
        ("sd-calibration", sd_calibration, Duration::from_secs(30)),
        ("cr-extremes", cr_extremes, Duration::from_secs(60)),
        ("mab-efficacy", mab_efficacy, Duration::from_secs(60)),
        ("table1-ordering", table1_ordering, Duration::from_secs(600)),
        (
            "parallel-speedup",
            parallel_speedup,
            Duration::from_secs(600),
        ),
        (
            "determinism-replay",
            determinism_replay,
            Duration::from_secs(600),
        ),
        ("windowing", windowing, Duration::from_secs(5)),
        (
            "parser-robustness",
            parser_robustness,
            Duration::from_secs(600),
        ),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let result = catch_unwind(*check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > *budget => Err(format!(
                "{detail}; took {:.1}s, budget {}s",
                took.as_secs_f64(),
                budget.as_secs()
            )),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS {name:<20} {detail} [{:.1}s]", took.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name:<20} {detail} [{:.1}s]", took.as_secs_f64());
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
