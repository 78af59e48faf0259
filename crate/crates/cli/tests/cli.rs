mod common;

use std::path::Path;

use common::{crsearch, fixture, p, search_config};
use crsearch::ingest::{read_jsonl, to_jsonl};
use crsearch::synthesis::read_dataset;
use crsearch::RecommendationTurn;
use crsearch_cli::search::RankingFile;
use serde_json::Value;

fn ingest(f: &common::Fixture, out: &Path) -> std::process::Output {
    crsearch(&["ingest", "--corpus", p(&f.corpus), "--catalog", p(&f.catalog), "--out", p(out)])
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn ingest_summary_and_rerun_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), 12);
    let out = dir.path().join("data");
    let o = ingest(&f, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("12 conversations"));
    let first = std::fs::read(out.join("manifest.json")).unwrap();
    assert!(ingest(&f, &out).status.success());
    assert_eq!(first, std::fs::read(out.join("manifest.json")).unwrap());
    let turns: Vec<RecommendationTurn> = read_jsonl(out.join("turns.jsonl")).unwrap();
    assert_eq!(turns.len(), 12);
}

#[test]
fn ingest_rejects_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), 1);
    std::fs::write(&f.corpus, "").unwrap();
    let o = ingest(&f, &dir.path().join("data"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ingest_with_split() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), 4);
    let split = dir.path().join("split.json");
    std::fs::write(
        &split,
        r#"{"train":["world-0000","world-0001"],"valid":["world-0002"],"test":["world-0003","ghost"]}"#,
    )
    .unwrap();
    let out = dir.path().join("data");
    let o = crsearch(&[
        "ingest",
        "--corpus",
        p(&f.corpus),
        "--catalog",
        p(&f.catalog),
        "--out",
        p(&out),
        "--split",
        p(&split),
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("ghost"));
    let test: Vec<RecommendationTurn> = read_jsonl(out.join("turns_test.jsonl")).unwrap();
    assert_eq!(test.len(), 1);
}

fn search(turns: &Path, config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["search", "--turns", p(turns), "--config", p(config), "--out", p(out)];
    args.extend_from_slice(extra);
    crsearch(&args)
}

#[test]
fn search_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), 5);
    let data = dir.path().join("data");
    assert!(ingest(&f, &data).status.success());
    let turns = data.join("turns.jsonl");
    let run = dir.path().join("run");
    let o = search(&turns, &f.config, &run, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(run.join("rankings")).unwrap().count(), 5);
    assert_eq!(std::fs::read_dir(run.join("traces")).unwrap().count(), 5);
    let manifest = read(&run.join("manifest.json"));
    assert_eq!(manifest["turns"].as_array().unwrap().len(), 5);
    assert!(manifest["turns"].as_array().unwrap().iter().all(|t| t["scored_states"] == 80));
    assert_eq!(manifest["prompt_versions"]["crs"], "crs-v1");

    let o = crsearch(&["evaluate", "--rankings", p(&run), "--turns", p(&turns), "--cuts", "10,50"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Recall@10"));
    let report = read(&run.join("report.json"));
    for key in ["recall@10", "ndcg@10", "mrr@10", "recall@50", "ndcg@50", "mrr@50"] {
        let v = report["report"]["metrics"][key]["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key}");
    }
}

#[test]
fn monte_carlo_makes_no_critique_calls() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), 2);
    let data = dir.path().join("data");
    assert!(ingest(&f, &data).status.success());
    let run = dir.path().join("run");
    let o = search(&data.join("turns.jsonl"), &f.config, &run, &["--strategy", "monte_carlo"]);
    assert!(o.status.success());
    let m = read(&run.join("manifest.json"));
    assert_eq!(m["calls"]["critique"], 0);
    assert_eq!(m["calls"]["revise"], 0);
    assert!(m["turns"].as_array().unwrap().iter().all(|t| t["scored_states"] == 80));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), 1);
    let data = dir.path().join("data");
    assert!(ingest(&f, &data).status.success());
    let mut cfg = search_config("beam");
    cfg.as_object_mut().unwrap().remove("ranker");
    std::fs::write(&f.config, cfg.to_string()).unwrap();
    let o = search(&data.join("turns.jsonl"), &f.config, &dir.path().join("run"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ranker"));

    std::fs::write(&f.config, search_config("beam").to_string()).unwrap();
    let o = search(&data.join("turns.jsonl"), &f.config, &dir.path().join("run"), &["--strategy", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(crsearch(&["search"]).status.code(), Some(2));
}

#[test]
fn evaluate_perfect_rankings() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), 6);
    let data = dir.path().join("data");
    assert!(ingest(&f, &data).status.success());
    let turns_path = data.join("turns.jsonl");
    let turns: Vec<RecommendationTurn> = read_jsonl(&turns_path).unwrap();
    let mut runs = Vec::new();
    for r in 0..3 {
        let run = dir.path().join(format!("perfect-{r}"));
        std::fs::create_dir_all(run.join("rankings")).unwrap();
        for t in &turns {
            let ranking = t
                .ground_truth_item_ids
                .iter()
                .enumerate()
                .map(|(i, &id)| crsearch::RankedItem { item_id: id, title: String::new(), score: None, rank: i + 1 })
                .collect();
            let file = RankingFile {
                conv_id: t.conv_id.clone(),
                turn_index: t.turn_index,
                strategy: crsearch::Strategy::Beam,
                ranking,
            };
            crsearch_cli::write_json(&crsearch_cli::search::ranking_path(&run, t), &file).unwrap();
        }
        runs.push(run);
    }
    let out = dir.path().join("report.json");
    let mut args = vec!["evaluate", "--turns", p(&turns_path), "--runs", "3", "--out", p(&out), "--rankings"];
    args.extend(runs.iter().map(|r| p(r)));
    let o = crsearch(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read(&out);
    assert_eq!(report["report"]["runs"], 3);
    for (_, s) in report["report"]["metrics"].as_object().unwrap() {
        assert_eq!(s["mean"], 1.0);
        assert_eq!(s["std"], 0.0);
    }
    // --runs must agree with the directories given
    let o = crsearch(&["evaluate", "--turns", p(&turns_path), "--runs", "2", "--rankings", p(&runs[0])]);
    assert_eq!(o.status.code(), Some(2));
}

fn synth_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("synth.json");
    std::fs::write(
        &path,
        r#"{"synthesis":{"list_length":10,"max_lists":64,"negatives_per_positive":1,"seed":5},"teacher_backend":{"kind":"oracle_teacher"}}"#,
    )
    .unwrap();
    path
}

#[test]
fn synthesize_counts_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), 10);
    let data = dir.path().join("data");
    assert!(ingest(&f, &data).status.success());
    let turns = data.join("turns.jsonl");
    let cfg = synth_config(dir.path());
    let synth = |out: &Path, extra: &[&str]| {
        let mut args =
            vec!["synthesize", "--turns", p(&turns), "--catalog", p(&f.catalog), "--config", p(&cfg), "--out", p(out)];
        args.extend_from_slice(extra);
        crsearch(&args)
    };

    let full = dir.path().join("full");
    assert!(synth(&full, &[]).status.success());
    let m = read(&full.join("manifest.json"));
    // 3 ground-truth items per turn: 8 lists and 6 scoring examples each
    for t in m["per_turn"].as_array().unwrap() {
        assert_eq!(t["critiquing_lists"], 8);
        assert_eq!(t["critiquing_examples"], 8);
        assert_eq!(t["scoring_examples"], 6);
    }
    assert_eq!(m["teacher_calls"], 80);
    assert_eq!(m["examples_written"], 140);

    let scoring = dir.path().join("scoring");
    assert!(synth(&scoring, &["--behavior", "scoring"]).status.success());
    let m = read(&scoring.join("manifest.json"));
    assert_eq!(m["teacher_calls"], 0);
    assert_eq!(read_dataset(scoring.join("dataset.jsonl")).unwrap().len(), 60);

    // interrupted after 4 turns, then resumed
    let resumed = dir.path().join("resumed");
    assert!(synth(&resumed, &["--stop-after", "4"]).status.success());
    let m = read(&resumed.join("manifest.json"));
    assert_eq!((m["complete"].as_bool(), m["teacher_calls"].as_u64()), (Some(false), Some(32)));
    // simulate a torn write at the end of the progress file
    let progress = resumed.join("progress.jsonl");
    let mut text = std::fs::read_to_string(&progress).unwrap();
    text.push_str("{\"config_sha256\":\"trunc");
    std::fs::write(&progress, text).unwrap();
    assert!(synth(&resumed, &[]).status.success());
    let m = read(&resumed.join("manifest.json"));
    assert_eq!((m["resumed_turns"].as_u64(), m["teacher_calls"].as_u64()), (Some(4), Some(48)));
    assert_eq!(
        std::fs::read(resumed.join("dataset.jsonl")).unwrap(),
        std::fs::read(full.join("dataset.jsonl")).unwrap()
    );
}

#[test]
fn ablate_table_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    let search = search_config("beam")["search"].clone();
    let grid = serde_json::json!({
        "world": { "items": 200, "actors": 300, "writers": 120, "directors": 120, "targets_per_episode": 3, "seed": 0 },
        "episodes": 6,
        "strategies": ["beam", "greedy_small", "greedy_large", "monte_carlo", "none"],
        "search": search,
        "ranker": { "l_out": 50 },
        "cuts": [10, 50]
    });
    std::fs::write(&cfg, grid.to_string()).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = crsearch(&["ablate", "--config", p(&cfg), "--out", p(&a)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout).to_string();
    assert_eq!(table.lines().count(), 6);
    assert!(crsearch(&["ablate", "--config", p(&cfg), "--out", p(&b), "--max-concurrency", "4"]).status.success());
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());

    let m = read(&a.join("manifest.json"));
    let expected = [("beam", 80), ("greedy_small", 32), ("greedy_large", 80), ("monte_carlo", 80), ("none", 0)];
    for (row, (name, budget)) in m["rows"].as_array().unwrap().iter().zip(expected) {
        assert_eq!(row["strategy"], name);
        assert_eq!(row["expected_scored_states"], budget);
        assert_eq!(row["scored_states"], serde_json::json!([budget, budget]));
    }
}

#[test]
fn turns_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), 3);
    let turns: Vec<RecommendationTurn> = f.world.episodes(3).map(|e| e.turn).collect();
    let path = dir.path().join("t.jsonl");
    std::fs::write(&path, to_jsonl(&turns)).unwrap();
    let back: Vec<RecommendationTurn> = read_jsonl(&path).unwrap();
    assert_eq!(back, turns);
}
