//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod oracles;
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use navcot::env::synth::{gen_synthetic_world, SyntheticConfig, SyntheticWorld};
use navcot::env::{Episode, NavGraph};
use navcot::export::{
    export_finetune, export_pretrain, validate_records, write_records, ExportOptions, Task,
    TrainingRecord,
};
use navcot::http::HttpConfig;
use navcot::labels::select_imagination;
use navcot::metrics::{dtw_distance, evaluate, ndtw, EpisodeMetrics, MetricReport};
use navcot::prompting::{format_cot, parse_cot, CoTOutput, ParseMode};
use navcot::runtime::{
    run_batch, run_episode, EpisodeResult, HttpBackend, HttpBackendConfig, OracleBackend,
    RandomBackend, ReasonerBackend, RunConfig,
};
use navcot::util::normalize_whitespace;
use navcot::vision::{map_direction, DirectionConfig, DirectionPhrase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SUITE_SEED: u64 = 1;
const SUITE_VIEWPOINTS: usize = 36;
const SUITE_BRANCHING: usize = 3;
const SUITE_EPISODES: usize = 50;
const D_TH: f64 = 3.0;

type Outcome = Result<String, String>;

/// Records per task, serialized bytes per task, and the world they came from.
type Exports = (Vec<Vec<TrainingRecord>>, Vec<Vec<u8>>, SyntheticWorld);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unwrap_all(
    results: Vec<Result<EpisodeResult, navcot::runtime::RuntimeError>>,
) -> Result<Vec<EpisodeResult>, String> {
    results
        .into_iter()
        .map(|r| r.map_err(|e| e.to_string()))
        .collect()
}

/// SPL <= SR <= OSR on every episode row.
fn check_chain(rows: &[EpisodeMetrics]) -> Result<(), String> {
    for m in rows {
        ensure(m.spl <= m.sr && m.sr <= m.osr, || {
            format!("{}: spl {} sr {} osr {}", m.episode, m.spl, m.sr, m.osr)
        })?;
    }
    Ok(())
}

fn oracle_closed_loop() -> Outcome {
    let start = Instant::now();
    let fx = support::fixture(
        SUITE_SEED,
        SUITE_VIEWPOINTS,
        SUITE_BRANCHING,
        SUITE_EPISODES,
    );
    let oracle = OracleBackend::new(&fx.labels);
    let results = unwrap_all(
        run_batch(
            &fx.world,
            &fx.synth.episodes,
            &oracle,
            &RunConfig::default(),
            1,
        )
        .map_err(|e| e.to_string())?,
    )?;
    let report = evaluate(&results, &fx.synth.episodes, &fx.world.graphs, D_TH)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check_chain(&report.episodes)?;
    let m = report.mean.ok_or("empty report")?;
    ensure(report.count == SUITE_EPISODES, || {
        format!("{} episodes", report.count)
    })?;
    ensure(
        m.sr == 1.0 && m.spl == 1.0 && m.ndtw == 1.0 && m.sdtw == 1.0 && m.ne == 0.0,
        || {
            format!(
                "SR {} SPL {} nDTW {} SDTW {} NE {}",
                m.sr, m.spl, m.ndtw, m.sdtw, m.ne
            )
        },
    )?;
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} episodes, SR=SPL=nDTW=SDTW=1, NE=0 in {:.2?}",
        report.count, elapsed
    ))
}

fn random_cot(rng: &mut ChaCha8Rng) -> CoTOutput {
    const WORDS: [&str; 8] = [
        "open", "door", "red", "chair", "kitchen", "stairs", "wooden", "table",
    ];
    let n = rng.gen_range(1..=4);
    let imagination = (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ");
    let letter = |rng: &mut ChaCha8Rng| (b'A' + rng.gen_range(0..26u8)) as char;
    let filtered = letter(rng);
    CoTOutput::new(imagination, filtered, letter(rng))
}

fn parser_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let valid: Vec<char> = ('A'..='Z').collect();
    for _ in 0..10_000 {
        let c = random_cot(&mut rng);
        let back = parse_cot(&format_cot(&c), &valid, ParseMode::Strict).map_err(|e| e.reason)?;
        ensure(back == c, || format!("{c:?} came back as {back:?}"))?;
    }
    let mut crashes = 0;
    for i in 0..100_000 {
        let len = rng.gen_range(0..80);
        let mut bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        // Bias half the inputs towards the grammar so the deep paths run too.
        if i % 2 == 0 {
            let mut seed = format_cot(&random_cot(&mut rng)).into_bytes();
            let at = rng.gen_range(0..=seed.len());
            seed.splice(at..at, bytes.drain(..len / 2));
            bytes = seed;
        }
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let k = rng.gen_range(1..=26);
        let ok = catch_unwind(AssertUnwindSafe(|| {
            let _ = parse_cot(&text, &valid[..k], ParseMode::Strict);
            let _ = parse_cot(&text, &valid[..k], ParseMode::Lenient);
        }));
        if ok.is_err() {
            crashes += 1;
        }
    }
    ensure(crashes == 0, || format!("{crashes} fuzz inputs panicked"))?;
    Ok("10000 round-trips exact, 100000 fuzz inputs without a panic".into())
}

fn random_walk(g: &NavGraph, rng: &mut ChaCha8Rng, len: usize) -> Vec<String> {
    let ids = g.viewpoints();
    let mut path = vec![ids[rng.gen_range(0..ids.len())].id.clone()];
    while path.len() < len {
        let nbrs: Vec<&str> = g
            .neighbors(path.last().unwrap())
            .unwrap()
            .map(|v| v.id.as_str())
            .collect();
        path.push(nbrs[rng.gen_range(0..nbrs.len())].to_owned());
    }
    path
}

fn random_geometry(seed: u64) -> SyntheticWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = rng.gen_range(4..=20);
    let b = rng.gen_range(1..=4);
    gen_synthetic_world(&SyntheticConfig::new(seed, n, b).with_episodes(5)).expect("world")
}

fn dtw_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut pairs, mut worst, mut worst_self) = (0, 0.0f64, 0.0f64);
    for geo in 0..500 {
        let w = random_geometry(1000 + geo);
        let apsp = oracles::Apsp::new(&w.graph);
        for _ in 0..8 {
            let (lp, lr) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
            let p = random_walk(&w.graph, &mut rng, lp);
            let r = random_walk(&w.graph, &mut rng, lr);
            let fast = dtw_distance(&p, &r, &w.graph).map_err(|e| e.to_string())?;
            let slow = oracles::brute_dtw(p.len(), r.len(), &|i, j| apsp.get(&p[i], &r[j]));
            worst = worst.max((fast - slow).abs());
            let selfn = ndtw(&p, &p, &w.graph, D_TH).map_err(|e| e.to_string())?;
            worst_self = worst_self.max((selfn - 1.0).abs());
            pairs += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("max |DTW - oracle| = {worst:e}"))?;
    ensure(worst_self <= 1e-12, || {
        format!("max |nDTW(P,P) - 1| = {worst_self:e}")
    })?;
    Ok(format!(
        "{pairs} pairs over 500 geometries, max diff {worst:.1e}, self nDTW diff {worst_self:.1e}"
    ))
}

fn cls_spl_recomputation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_cls, mut worst_spl, mut count) = (0.0f64, 0.0f64, 0);
    for k in 0..40 {
        let w = random_geometry(2000 + k);
        let apsp = oracles::Apsp::new(&w.graph);
        let mut results = Vec::new();
        let backend = RandomBackend::new(k);
        for ep in w.episodes.iter().take(5) {
            // Alternate wandering rollouts with the exact path and detours.
            let r = if rng.gen_bool(0.5) {
                run_episode(&world_of(&w), ep, &backend, &RunConfig::default())
                    .map_err(|e| e.to_string())?
            } else {
                let mut res = run_episode(&world_of(&w), ep, &backend, &RunConfig::default())
                    .map_err(|e| e.to_string())?;
                let mut visited = ep.gt_path.clone();
                if rng.gen_bool(0.5) {
                    let moves = rng.gen_range(1..4);
                    let extra = random_walk_from(&w.graph, &mut rng, ep.goal(), moves);
                    visited.extend(extra);
                }
                res.trajectory.visited = visited;
                res
            };
            results.push(r);
        }
        let eps: Vec<Episode> = w.episodes.iter().take(5).cloned().collect();
        let report = evaluate(
            &results,
            &eps,
            &std::iter::once((w.scan.clone(), w.graph.clone())).collect(),
            D_TH,
        )
        .map_err(|e| e.to_string())?;
        check_chain(&report.episodes)?;
        for m in &report.episodes {
            let ep = eps.iter().find(|e| e.id == m.episode).unwrap();
            let res = results.iter().find(|r| r.episode == m.episode).unwrap();
            let path = &res.trajectory.visited;
            let c = oracles::cls_direct(path, &ep.gt_path, &w.graph, &apsp, D_TH);
            let s = oracles::spl_direct(path, ep.goal(), ep.start(), &w.graph, &apsp, D_TH);
            worst_cls = worst_cls.max((c - m.cls).abs());
            worst_spl = worst_spl.max((s - m.spl).abs());
            count += 1;
        }
    }
    ensure(count == 200, || format!("{count} episodes"))?;
    ensure(worst_cls <= 1e-9 && worst_spl <= 1e-9, || {
        format!("max CLS diff {worst_cls:e}, max SPL diff {worst_spl:e}")
    })?;
    Ok(format!(
        "{count} episodes, max CLS diff {worst_cls:.1e}, max SPL diff {worst_spl:.1e}, SPL <= SR <= OSR holds"
    ))
}

fn random_walk_from(g: &NavGraph, rng: &mut ChaCha8Rng, from: &str, moves: usize) -> Vec<String> {
    let mut here = from.to_owned();
    let mut out = Vec::new();
    for _ in 0..moves {
        let nbrs: Vec<String> = g.neighbors(&here).unwrap().map(|v| v.id.clone()).collect();
        here = nbrs[rng.gen_range(0..nbrs.len())].clone();
        out.push(here.clone());
    }
    out
}

fn world_of(w: &SyntheticWorld) -> navcot::env::World {
    support::world_of(w)
}

fn imagination_labeling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tied = 0;
    for i in 0..10_000 {
        let n = rng.gen_range(1..=10);
        let lms: Vec<String> = (0..n).map(|k| format!("l{k}")).collect();
        let scores: Vec<f64> = if i % 10 == 0 {
            tied += 1;
            vec![rng.gen_range(-1.0..1.0); n]
        } else {
            (0..n).map(|_| (rng.gen_range(0..5) as f64) / 4.0).collect()
        };
        let mut best = 0;
        for k in 0..n {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        let (k, _) = select_imagination(&lms, &scores).map_err(|e| e.to_string())?;
        ensure(k == best, || format!("{scores:?}: got {k}, want {best}"))?;
    }
    let mut steps = 0;
    for seed in [SUITE_SEED, 2, 3, 4, 5] {
        let fx = support::fixture(seed, SUITE_VIEWPOINTS, SUITE_BRANCHING, SUITE_EPISODES);
        for l in &fx.labels {
            let ep = fx
                .synth
                .episodes
                .iter()
                .find(|e| e.id == l.episode)
                .unwrap();
            let want = match ep.gt_path.get(l.t + 1) {
                Some(next) => &fx.synth.viewpoint_landmarks[next],
                None => fx.synth.episode_landmarks[&ep.id].last().unwrap(),
            };
            ensure(&l.imagination == want, || {
                format!(
                    "{} t={}: {} vs planted {}",
                    l.episode, l.t, l.imagination, want
                )
            })?;
            steps += 1;
        }
    }
    Ok(format!(
        "10000 score vectors ({tied} all-tied) match linear argmax; {steps}/{steps} planted labels"
    ))
}

fn export_all(dir: &Path, tag: &str) -> Result<Exports, String> {
    let fx = support::fixture(
        SUITE_SEED,
        SUITE_VIEWPOINTS,
        SUITE_BRANCHING,
        SUITE_EPISODES,
    );
    let opts = ExportOptions::default();
    let mut sets = Vec::new();
    let mut bytes = Vec::new();
    for task in [Task::Fi, Task::Vif, Task::Ap, Task::Cot] {
        let report = if task == Task::Cot {
            export_finetune(&fx.labels, &fx.synth.episodes, &fx.world, &opts)
        } else {
            export_pretrain(&fx.labels, &fx.synth.episodes, &fx.world, task, &opts)
        }
        .map_err(|e| e.to_string())?;
        ensure(report.over_budget.is_empty(), || {
            format!("{task}: {} over budget", report.over_budget.len())
        })?;
        let path = dir.join(format!("{tag}-{task}.jsonl"));
        write_records(&path, &report.records).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        sets.push(report.records);
    }
    Ok((sets, bytes, fx.synth))
}

fn dataset_contracts() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (sets, first, synth) = export_all(dir.path(), "a")?;
    let (_, second, _) = export_all(dir.path(), "b")?;
    let [fi, vif, ap, cot] = &sets[..] else {
        unreachable!()
    };
    for ep in &synth.episodes {
        let n = cot.iter().filter(|r| r.episode == ep.id).count();
        ensure(n == ep.gt_path.len(), || {
            format!("{}: {n} records for {} path steps", ep.id, ep.gt_path.len())
        })?;
    }
    ensure(
        fi.len() == cot.len() && vif.len() == cot.len() && ap.len() == cot.len(),
        || {
            format!(
                "counts FI {} VIF {} AP {} COT {}",
                fi.len(),
                vif.len(),
                ap.len(),
                cot.len()
            )
        },
    )?;
    for set in &sets {
        validate_records(set).map_err(|e| e.to_string())?;
    }
    for r in cot {
        let valid = navcot::export::query_options(&r.input);
        parse_cot(&r.output, &valid, ParseMode::Strict).map_err(|e| e.reason)?;
    }
    for k in 0..cot.len() {
        let joined = normalize_whitespace(&format!(
            "{} {} {}",
            fi[k].output, vif[k].output, ap[k].output
        ));
        ensure(joined == cot[k].output, || {
            format!("record {k}: {joined:?} vs {:?}", cot[k].output)
        })?;
    }
    ensure(first == second, || "reruns differ".into())?;
    Ok(format!(
        "{} steps per task over {} episodes; all validate; clauses rebuild COT; reruns byte-identical",
        cot.len(),
        synth.episodes.len()
    ))
}

fn direction_totality() -> Outcome {
    let cfg = DirectionConfig::default();
    let mut counts = [0usize; 6];
    for h in -179..=180 {
        for e in -90..=90 {
            let got = map_direction(h as f64, e as f64, &cfg);
            let want = oracles::direction_oracle(h as f64, e as f64);
            ensure(got.as_str() == want, || {
                format!("({h},{e}) -> {got} but table says {want}")
            })?;
            let matches = DirectionPhrase::ALL.iter().filter(|p| **p == got).count();
            ensure(matches == 1, || {
                format!("({h},{e}) matched {matches} phrases")
            })?;
            counts[DirectionPhrase::ALL.iter().position(|p| *p == got).unwrap()] += 1;
        }
    }
    ensure(
        map_direction(0.0, 0.0, &cfg) == DirectionPhrase::GoForward,
        || "(0,0) is not go forward".into(),
    )?;
    ensure(counts.iter().all(|&c| c > 0), || {
        format!("phrase counts {counts:?}")
    })?;
    Ok(format!(
        "{} cells, one phrase each, (0,0) -> go forward",
        counts.iter().sum::<usize>()
    ))
}

fn random_baseline() -> Outcome {
    let fx = support::fixture(
        SUITE_SEED,
        SUITE_VIEWPOINTS,
        SUITE_BRANCHING,
        SUITE_EPISODES,
    );
    let cfg = RunConfig::default();
    let results = unwrap_all(
        run_batch(
            &fx.world,
            &fx.synth.episodes,
            &RandomBackend::new(cfg.seed),
            &cfg,
            1,
        )
        .map_err(|e| e.to_string())?,
    )?;
    let report: MetricReport = evaluate(&results, &fx.synth.episodes, &fx.world.graphs, D_TH)
        .map_err(|e| e.to_string())?;
    check_chain(&report.episodes)?;
    let sr = report.mean.as_ref().ok_or("empty")?.sr;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let per_episode = 10_000 / fx.synth.episodes.len();
    let mut hits = 0usize;
    for ep in &fx.synth.episodes {
        for _ in 0..per_episode {
            if oracles::random_walk_success(
                &fx.synth.graph,
                ep.start(),
                ep.goal(),
                cfg.max_steps,
                &mut rng,
            ) {
                hits += 1;
            }
        }
    }
    let rollouts = per_episode * fx.synth.episodes.len();
    let p = hits as f64 / rollouts as f64;
    let n = fx.synth.episodes.len() as f64;
    let se = (p * (1.0 - p) / n + p * (1.0 - p) / rollouts as f64).sqrt();
    ensure(sr < 0.5, || format!("SR {sr}"))?;
    ensure(sr < 1.0, || format!("SR {sr} not below the oracle"))?;
    ensure((sr - p).abs() <= 3.0 * se, || {
        format!("SR {sr} vs Monte Carlo {p:.4} (SE {se:.4})")
    })?;
    Ok(format!(
        "SR {sr:.3} vs Monte Carlo {p:.4} over {rollouts} rollouts (3 SE = {:.3})",
        3.0 * se
    ))
}

fn backend_contract() -> Outcome {
    let fx = support::fixture(SUITE_SEED, SUITE_VIEWPOINTS, SUITE_BRANCHING, 20);
    let http = |url: &str| HttpBackendConfig {
        http: HttpConfig {
            url: url.to_owned(),
            timeout_secs: 10.0,
            backoff_base_ms: 5,
            backoff_cap_ms: 50,
            ..HttpConfig::default()
        },
        ..HttpBackendConfig::default()
    };
    let server = support::MockServer::start(support::hashed_reasoner);
    let backend = HttpBackend::new(http(&server.url), None).map_err(|e| e.to_string())?;
    backend.health_check().map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let one = unwrap_all(
        run_batch(&fx.world, &fx.synth.episodes, &backend, &cfg, 1).map_err(|e| e.to_string())?,
    )?;
    let eight = unwrap_all(
        run_batch(&fx.world, &fx.synth.episodes, &backend, &cfg, 8).map_err(|e| e.to_string())?,
    )?;
    ensure(one == eight, || {
        "parallelism 8 differs from parallelism 1".into()
    })?;
    let report =
        evaluate(&one, &fx.synth.episodes, &fx.world.graphs, D_TH).map_err(|e| e.to_string())?;
    check_chain(&report.episodes)?;

    let limited = support::MockServer::start(|req| {
        if req.index == 0 {
            support::Reply {
                status: 429,
                headers: vec![("Retry-After".into(), "0".into())],
                body: "{}".into(),
            }
        } else {
            support::hashed_reasoner(req)
        }
    });
    let backend = HttpBackend::new(http(&limited.url), None).map_err(|e| e.to_string())?;
    let r =
        run_episode(&fx.world, &fx.synth.episodes[0], &backend, &cfg).map_err(|e| e.to_string())?;
    let retries: u32 = r.steps.iter().map(|s| s.transport_retries).sum();
    ensure(retries == 1, || format!("{retries} retries recorded"))?;
    ensure(r.steps.iter().all(|s| s.backend_error.is_none()), || {
        "request failed".into()
    })?;
    Ok(format!(
        "{} episodes identical at parallelism 1 and 8; 429 then 200 recorded one retry",
        one.len()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle closed loop", oracle_closed_loop),
        ("parser round-trip and fuzz", parser_round_trip),
        ("dtw oracle equivalence", dtw_equivalence),
        ("cls and spl recomputation", cls_spl_recomputation),
        ("imagination labeling", imagination_labeling),
        ("dataset contracts", dataset_contracts),
        ("direction map totality", direction_totality),
        ("random baseline sanity", random_baseline),
        ("backend contract", backend_contract),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
