use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use navcot::env::synth::{gen_synthetic_world, SyntheticConfig};
use navcot::env::{self, Episode, NavGraph, World};
use navcot::export::{
    export_finetune, export_pretrain, sample_augmentation, validate_records, write_records, Task,
};
use navcot::labels::{
    label_dataset, load_labels, write_labels, CaptionMatchSimilarity, EndpointSimilarity,
    ExtractingLandmarkSource, LabelOptions, LandmarkCache, LandmarkList, SimilarityProvider,
    SimilarityQuery, SimilarityRow, SimilarityTable,
};
use navcot::metrics::{evaluate, SUCCESS_THRESHOLD_M};
use navcot::runtime::{
    load_results, run_batch, write_results, HttpBackend, OracleBackend, RandomBackend,
    ReasonerBackend, ScriptedBackend,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{api_token, require_inputs, BackendKind, Config, SimilaritySource};

/// Writes `<file>.meta.json` next to an artifact.
fn write_meta(
    artifact: &Path,
    cfg: &Config,
    command: &str,
    extra: serde_json::Value,
) -> Result<()> {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    let path = artifact.with_file_name(name);
    let meta = json!({
        "command": command,
        "provenance": cfg.provenance(),
        "seed": cfg.seed,
        "summary": extra,
    });
    write_json(&path, &meta)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn load_world(cfg: &Config) -> Result<(World, Vec<Episode>)> {
    let p = cfg.resolve();
    require_inputs(&[
        ("graphs", &p.graphs),
        ("captions", &p.captions),
        ("episodes", &p.episodes),
    ])?;
    let graphs = env::load_graph_dir(&p.graphs)?;
    let captions = env::load_captions(&p.captions)?;
    let episodes = env::load_episodes(&p.episodes)?;
    let world = World::new(graphs, captions);
    for ep in &episodes {
        ep.validate(world.graph(&ep.scan)?)?;
    }
    Ok((world, episodes))
}

pub fn gen(cfg: &Config) -> Result<()> {
    let p = cfg.resolve();
    let synth = gen_synthetic_world(&SyntheticConfig {
        seed: cfg.seed,
        n_viewpoints: cfg.gen.n_viewpoints,
        branching: cfg.gen.branching,
        n_episodes: cfg.gen.n_episodes,
        max_path_moves: cfg.gen.max_path_moves,
    })?;

    fs::create_dir_all(&p.graphs).with_context(|| format!("creating {}", p.graphs.display()))?;
    for path in [&p.captions, &p.episodes, &p.landmarks, &p.similarity] {
        ensure_parent(path)?;
    }
    let graph_path = p.graphs.join(format!("{}.json", synth.scan));
    env::write_graph(&graph_path, &synth.graph)?;
    env::write_captions(&p.captions, &synth.captions)?;
    env::write_episodes(&p.episodes, &synth.episodes)?;

    let mut cache = LandmarkCache::new();
    for (ep, lms) in &synth.episode_landmarks {
        cache.insert(LandmarkList::new(ep.clone(), lms.iter().cloned()));
    }
    cache.save(&p.landmarks)?;

    // Exact caption matching stands in for an image-text scorer.
    let mut rows = Vec::new();
    for ep in &synth.episodes {
        let landmarks = &synth.episode_landmarks[&ep.id];
        for (t, pair) in ep.gt_path.windows(2).enumerate() {
            let caption = synth
                .captions
                .get(&ep.scan, &pair[0], &pair[1])
                .expect("generated edges have captions");
            let scores = CaptionMatchSimilarity.scores(&SimilarityQuery {
                episode: ep,
                t,
                landmarks,
                from: &pair[0],
                to: &pair[1],
                caption,
            })?;
            rows.push(SimilarityRow {
                episode: ep.id.clone(),
                t,
                scores,
            });
        }
    }
    SimilarityTable::save(&p.similarity, &rows)?;

    let summary = json!({
        "scan": synth.scan,
        "viewpoints": synth.graph.len(),
        "edges": synth.graph.edge_count(),
        "episodes": synth.episodes.len(),
    });
    write_meta(&p.episodes, cfg, "gen", summary)?;
    println!(
        "generated {}: {} viewpoints, {} edges, {} episodes -> {}",
        synth.scan,
        synth.graph.len(),
        synth.graph.edge_count(),
        synth.episodes.len(),
        p.out.display()
    );
    Ok(())
}

pub fn label(cfg: &Config) -> Result<()> {
    let p = cfg.resolve();
    let (world, episodes) = load_world(cfg)?;
    let cache = LandmarkCache::load_or_default(&p.landmarks)?;
    let token = api_token();

    let provider: Box<dyn SimilarityProvider> = match cfg.label.similarity {
        SimilaritySource::Table => Box::new(SimilarityTable::load(&p.similarity)?),
        SimilaritySource::CaptionMatch => Box::new(CaptionMatchSimilarity),
        SimilaritySource::Endpoint => Box::new(EndpointSimilarity::new(
            cfg.label.similarity_endpoint.clone(),
            token.clone(),
        )?),
    };
    let opts = LabelOptions {
        directions: cfg.directions,
        parallelism: cfg.label.parallelism.max(1),
    };

    let completer = if cfg.label.extraction.http.url.is_empty() {
        None
    } else {
        Some(HttpBackend::new(cfg.label.extraction.clone(), token)?)
    };
    let (report, calls) = match completer {
        None => (
            label_dataset(&episodes, &world, &cache, provider.as_ref(), &opts)?,
            0,
        ),
        Some(completer) => {
            let source = ExtractingLandmarkSource::new(cache, completer);
            let report = label_dataset(&episodes, &world, &source, provider.as_ref(), &opts);
            let calls = source.calls();
            // Keep whatever was extracted, even if labeling failed later.
            ensure_parent(&p.landmarks)?;
            source.into_cache().save(&p.landmarks)?;
            (report?, calls)
        }
    };

    ensure_parent(&p.labels)?;
    write_labels(&p.labels, &report.labels)?;
    let summary = json!({
        "labels": report.labels.len(),
        "episodes": report.episodes,
        "tied_steps": report.tied_steps,
        "zero_landmark_episodes": report.zero_landmark_episodes,
        "extraction_calls": calls,
    });
    write_meta(&p.labels, cfg, "label", summary)?;
    println!(
        "labels: {} steps over {} episodes; tied steps: {}; zero-landmark episodes: {}; extraction calls: {}",
        report.labels.len(),
        report.episodes,
        report.tied_steps,
        report.zero_landmark_episodes.len(),
        calls
    );
    Ok(())
}

pub fn export(cfg: &Config, task: Task) -> Result<()> {
    let p = cfg.resolve();
    let (world, mut episodes) = load_world(cfg)?;
    require_inputs(&[("labels", &p.labels)])?;
    let labels = load_labels(&p.labels)?;
    if let Some(n) = cfg.export.aug_n {
        let seed = cfg.export.aug_seed.unwrap_or(cfg.seed);
        episodes = sample_augmentation(&episodes, n, seed)?;
    }

    let opts = cfg.export_options();
    let report = match task {
        Task::Cot => export_finetune(&labels, &episodes, &world, &opts)?,
        t => export_pretrain(&labels, &episodes, &world, t, &opts)?,
    };
    validate_records(&report.records)?;

    let out = p.dataset(task);
    ensure_parent(&out)?;
    write_records(&out, &report.records)?;
    let summary = json!({
        "task": task,
        "records": report.records.len(),
        "episodes": episodes.len(),
        "truncated": report.truncated.len(),
        "over_budget": report.over_budget,
    });
    write_meta(&out, cfg, "export", summary)?;
    if !report.over_budget.is_empty() {
        eprintln!(
            "warning: {} steps exceed the input budget and were left out",
            report.over_budget.len()
        );
    }
    println!(
        "{task}: {} records from {} episodes ({} with shortened history, {} over budget) -> {}",
        report.records.len(),
        episodes.len(),
        report.truncated.len(),
        report.over_budget.len(),
        out.display()
    );
    Ok(())
}

fn make_backend(cfg: &Config) -> Result<Box<dyn ReasonerBackend>> {
    let p = cfg.resolve();
    Ok(match cfg.run.backend {
        BackendKind::Oracle => {
            require_inputs(&[("labels", &p.labels)])?;
            Box::new(OracleBackend::new(&load_labels(&p.labels)?))
        }
        BackendKind::Scripted => {
            require_inputs(&[("script", &p.script)])?;
            let lines: Vec<String> = env::read_jsonl(&p.script)?;
            if lines.is_empty() {
                bail!("script {} is empty", p.script.display());
            }
            Box::new(ScriptedBackend::new(lines))
        }
        BackendKind::Random => Box::new(RandomBackend::new(cfg.seed)),
        BackendKind::Http => {
            if cfg.backend.http.url.is_empty() {
                bail!("--backend http needs backend.url in the config");
            }
            Box::new(HttpBackend::new(cfg.backend.clone(), api_token())?)
        }
    })
}

pub fn run(cfg: &Config) -> Result<()> {
    let p = cfg.resolve();
    let (world, episodes) = load_world(cfg)?;
    let backend = make_backend(cfg)?;
    backend
        .health_check()
        .context("backend health check failed; no episodes were run")?;

    let run_cfg = cfg.run_config();
    let results = run_batch(
        &world,
        &episodes,
        backend.as_ref(),
        &run_cfg,
        cfg.run.parallelism,
    )?;
    let provenance = cfg.provenance();
    let mut traces = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(mut res) => {
                res.run.provenance = Some(provenance.clone());
                traces.push(res);
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    ensure_parent(&p.traces)?;
    write_results(&p.traces, &traces)?;
    let stopped = traces.iter().filter(|t| t.trajectory.stopped).count();
    println!(
        "ran {} episodes with {} ({} stopped) -> {}",
        traces.len(),
        backend.descriptor().name,
        stopped,
        p.traces.display()
    );
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("error: {f}");
        }
        bail!("{} episodes failed", failures.len());
    }
    Ok(())
}

pub fn eval(cfg: &Config) -> Result<()> {
    let p = cfg.resolve();
    require_inputs(&[
        ("traces", &p.traces),
        ("episodes", &p.episodes),
        ("graphs", &p.graphs),
    ])?;
    let results = load_results(&p.traces)?;
    let episodes = env::load_episodes(&p.episodes)?;
    let graphs: BTreeMap<String, NavGraph> = env::load_graph_dir(&p.graphs)?;
    let mut report = evaluate(&results, &episodes, &graphs, SUCCESS_THRESHOLD_M)?;
    report.provenance = Some(cfg.provenance());

    fs::create_dir_all(&p.out).with_context(|| format!("creating {}", p.out.display()))?;
    write_json(&p.out.join("report.json"), &report)?;
    let text = report.to_text();
    fs::write(p.out.join("report.txt"), &text)
        .with_context(|| format!("writing {}", p.out.join("report.txt").display()))?;
    print!("{text}");
    Ok(())
}
