use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use storymoral_cli::config::stub_config;
use storymoral_cli::manifest::{RunManifest, RunStatus, TIMINGS_FILE};
use storymoral_cli::pipeline::{parse_stages, Pipeline, Stage};
use storymoral_cli::{run_pipeline, write_demo_corpus, RunConfig};
use storymoral_core::corpus::reference::{EMBEDDER_IDS, MODEL_IDS};
use storymoral_core::corpus::synthetic::{fixture_corpus, FixtureSpec};
use storymoral_core::save_corpus;

fn stages(s: &[Stage]) -> BTreeSet<Stage> {
    s.iter().copied().collect()
}

/// A corpus that already holds model morals for two models.
fn prepared(dir: &Path) -> RunConfig {
    let corpus = dir.join("input");
    let c = fixture_corpus(&FixtureSpec::grid(4, 4).with_models(&MODEL_IDS[..2]));
    save_corpus(&c, &corpus).unwrap();
    let mut cfg = stub_config(corpus, dir.join("out"), 3);
    cfg.models.truncate(2);
    cfg
}

fn demo(dir: &Path, stories: usize, languages: usize) -> RunConfig {
    write_demo_corpus(&dir.join("corpus"), stories, languages, 11).unwrap();
    let mut cfg = stub_config(dir.join("corpus"), dir.join("out"), 11);
    cfg.survey.stories = None;
    cfg
}

#[test]
fn embed_then_h2_on_prepared_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = prepared(tmp.path());
    let m = run_pipeline(cfg.clone(), &stages(&[Stage::Embed, Stage::H2])).unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.stages.len(), 2);
    assert_eq!(m.stages[0].stage, Stage::Embed);
    let h2 = m.stage(Stage::H2).unwrap();
    assert!(h2.outputs.iter().any(|o| o.path == "reports/h2.json"));
    assert!(h2.outputs.iter().any(|o| o.path == "reports/h2_forest.dat"));
    assert!(cfg.out.join("reports/h2_coefficients.csv").exists());
    assert!(m.stale_outputs(&cfg.out).is_empty());
    assert_eq!(RunManifest::read(&cfg.out).unwrap(), m);
}

#[test]
fn hypothesis_without_embeddings_fails_with_partial_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = prepared(tmp.path());
    let err = run_pipeline(cfg.clone(), &stages(&[Stage::H3])).unwrap_err();
    assert!(format!("{err:#}").contains("embeddings missing"), "{err:#}");
    let m = RunManifest::read(&cfg.out).unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.stages.is_empty());
    assert!(m.error.unwrap().contains("embeddings missing"));
}

#[test]
fn failure_keeps_completed_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = prepared(tmp.path());
    // embed succeeds; the survey model has no morals in this corpus
    let mut bad = cfg.clone();
    bad.survey.llm_model_id = Some(MODEL_IDS[1].into());
    bad.models = vec![MODEL_IDS[1].into()];
    let c = fixture_corpus(&FixtureSpec::grid(4, 4).with_models(&MODEL_IDS[..1]));
    save_corpus(&c, &bad.corpus).unwrap();
    let err = run_pipeline(bad.clone(), &stages(&[Stage::Embed, Stage::Survey])).unwrap_err();
    assert!(format!("{err:#}").contains("no morals from"));
    let m = RunManifest::read(&bad.out).unwrap();
    assert_eq!(m.stages.len(), 1);
    assert_eq!(m.stages[0].stage, Stage::Embed);
}

#[test]
fn generate_needs_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo(tmp.path(), 3, 3);
    let err = run_pipeline(cfg, &stages(&[Stage::Generate])).unwrap_err();
    assert!(format!("{err:#}").contains("grid"));
}

#[test]
fn full_stub_run_is_deterministic_and_idempotent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let all: BTreeSet<Stage> = Stage::ALL.into_iter().collect();
    let ma = run_pipeline(demo(a.path(), 4, 4), &all).unwrap();
    let mb = run_pipeline(demo(b.path(), 4, 4), &all).unwrap();
    assert_eq!(ma.stages.len(), Stage::ALL.len());
    assert_eq!(ma, mb);
    let bytes = |d: &Path| fs::read(d.join("out/manifest.json")).unwrap();
    assert_eq!(bytes(a.path()), bytes(b.path()));

    // a second run reuses every stage and rewrites the same manifest
    let again = run_pipeline(demo(a.path(), 4, 4), &all).unwrap();
    assert_eq!(again, ma);
    let timings: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("out").join(TIMINGS_FILE)).unwrap()).unwrap();
    assert!(timings.as_array().unwrap().iter().all(|t| t["reused"] == true));

    // an early stage rerun alone does not undo later ones
    let cfg = demo(a.path(), 4, 4);
    run_pipeline(cfg.clone(), &stages(&[Stage::Generate])).unwrap();
    let p = Pipeline::new(cfg).unwrap();
    assert!(p.corpus().unwrap().morals.iter().all(|m| m.cleaned));
}

#[test]
fn outputs_are_located_by_manifest_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo(tmp.path(), 3, 3);
    let m = run_pipeline(cfg.clone(), &parse_stages("grid,generate,clean,embed,h1").unwrap()).unwrap();
    for o in m.stages.iter().flat_map(|s| &s.outputs) {
        assert!(o.verify(&cfg.out), "{}", o.path);
    }
    fs::write(cfg.out.join("reports/h1.json"), "{}").unwrap();
    assert_eq!(m.stale_outputs(&cfg.out), vec!["reports/h1.json".to_string()]);
    // the changed output is rebuilt on the next run
    let again = run_pipeline(cfg.clone(), &stages(&[Stage::H1])).unwrap();
    assert!(again.stale_outputs(&cfg.out).is_empty());
}

#[test]
fn dry_run_counts_without_calling() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo(tmp.path(), 3, 3);
    let p = Pipeline::new(cfg.clone()).unwrap();
    let plan = p.plan_calls(&stages(&[Stage::Grid, Stage::Generate])).unwrap();
    let grid = plan.iter().find(|c| c.stage == Stage::Grid).unwrap();
    // 3 stories × 2 non-original languages
    assert_eq!((grid.calls, grid.exact), (6, true));
    assert!(!cfg.out.join("cache/translations.jsonl").exists());

    run_pipeline(cfg.clone(), &stages(&[Stage::Grid])).unwrap();
    let p = Pipeline::new(cfg).unwrap();
    let plan = p.plan_calls(&stages(&[Stage::Grid, Stage::Generate])).unwrap();
    assert_eq!(plan.iter().find(|c| c.stage == Stage::Grid).unwrap().calls, 0);
    let gen: Vec<_> = plan.iter().filter(|c| c.stage == Stage::Generate).collect();
    assert_eq!(gen.len(), MODEL_IDS.len());
    assert!(gen.iter().all(|c| c.exact && c.calls == 9));
}

#[test]
fn config_round_trips_through_toml() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = stub_config("corpus".into(), "out".into(), 5);
    let path = tmp.path().join("run.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let back = RunConfig::load(&path).unwrap();
    assert_eq!(back.corpus, tmp.path().join("corpus"));
    assert_eq!(back.providers, cfg.providers);
    assert_eq!(back.embedders.len(), EMBEDDER_IDS.len());
    // paths do not enter the hash
    assert_eq!(back.content_hash().unwrap(), cfg.content_hash().unwrap());
}

#[test]
fn config_rejects_unresolvable_providers() {
    let mut cfg = stub_config("c".into(), "o".into(), 0);
    cfg.models.push("nonexistent".into());
    assert!(cfg.validate().unwrap_err().to_string().contains("nonexistent"));
    let mut cfg = stub_config("c".into(), "o".into(), 0);
    cfg.screening.embedder = Some("unknown".into());
    assert!(cfg.validate().is_err());
    let toml = "corpus = 'c'\nout = 'o'\nmodels = []\nembedders = []\nbogus = 1\n[providers]\n";
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, toml).unwrap();
    assert!(RunConfig::load(&p).is_err());
}

#[test]
fn credentials_stay_out_of_config_and_manifest() {
    let toml = r#"
corpus = "c"
out = "o"
models = ["remote"]
embedders = ["e"]

[providers.chat.remote]
backend = "http"
endpoint = "http://127.0.0.1:9/v1"
credentials_env = "REMOTE_KEY"

[providers.embedders.e]
backend = "stub"
dimensionality = 8
multilingual = true

[providers.mt.m]
backend = "stub"

[[providers.routes]]
provider = "m"
"#;
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("remote.toml");
    fs::write(&p, toml).unwrap();
    std::env::set_var("REMOTE_KEY", "s3cr3t-value");
    let cfg = RunConfig::load(&p).unwrap();
    assert!(!cfg.all_stub());
    assert_eq!(cfg.providers.remote_providers(), vec!["chat:remote".to_string()]);
    let text = cfg.to_toml().unwrap();
    assert!(text.contains("REMOTE_KEY") && !text.contains("s3cr3t"));
}
