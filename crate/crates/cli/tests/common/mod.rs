#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crsearch::catalog::write_catalog;
use crsearch::domain::{Conversation, Speaker, Utterance};
use crsearch::ingest::to_jsonl;
use crsearch::world::{OracleWorld, WorldConfig};

pub struct Fixture {
    pub dir: PathBuf,
    pub catalog: PathBuf,
    pub corpus: PathBuf,
    pub config: PathBuf,
    pub world: OracleWorld,
}

/// Corpus whose conversations end with the recommender naming the episode's
/// targets, over the oracle world catalog.
pub fn world_corpus(world: &OracleWorld, n: u64) -> Vec<Conversation> {
    world
        .episodes(n)
        .map(|ep| {
            let mut turns = ep.turn.history.clone();
            let titles: Vec<&str> = ep.targets.iter().map(|&id| world.catalog.title(id).unwrap()).collect();
            turns.push(Utterance {
                speaker: Speaker::Recommender,
                text: format!("You might enjoy {}.", titles.join(", ")),
                mentioned_item_ids: ep.targets.clone(),
            });
            Conversation { conv_id: ep.turn.conv_id.clone(), turns }
        })
        .collect()
}

pub fn search_config(strategy: &str) -> serde_json::Value {
    serde_json::json!({
        "catalog": "catalog.jsonl",
        "strategy": strategy,
        "search": {
            "beam_width": 4,
            "expand_width": 4,
            "depth": 5,
            "list_length": 10,
            "init_temperature": 1.0,
            "critique_temperature": 1.0,
            "revision_temperature": 1.0,
            "seed": 17
        },
        "crs_backend": { "kind": "rule_based" },
        "user_backend": { "kind": "oracle" },
        "ranker": { "l_out": 50, "aggregation": "max" }
    })
}

pub fn fixture(dir: &Path, conversations: u64) -> Fixture {
    let world = OracleWorld::new(WorldConfig::default());
    let catalog = dir.join("catalog.jsonl");
    std::fs::write(&catalog, write_catalog(&world.catalog)).unwrap();
    let corpus = dir.join("corpus.jsonl");
    std::fs::write(&corpus, to_jsonl(&world_corpus(&world, conversations))).unwrap();
    let config = dir.join("search.json");
    std::fs::write(&config, serde_json::to_string_pretty(&search_config("beam")).unwrap()).unwrap();
    Fixture { dir: dir.to_path_buf(), catalog, corpus, config, world }
}

pub fn crsearch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crsearch")).args(args).output().expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
