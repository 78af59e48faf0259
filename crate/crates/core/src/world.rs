//! A small synthetic movie world for end-to-end checks of search quality.
//!
//! Items carry genres, actors, a writer and a director drawn from fixed
//! pools. An episode hides a few target items; the seeker's opening turn
//! mentions one genre and one actor of the first target, and the oracle user
//! knows the attributes of all of them.

use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::ItemCatalog;
use crate::domain::{Attributes, Item, ItemId, RecommendationTurn, Speaker, Utterance};
use crate::gateway::scripted::{OracleUser, RuleBasedCrs};
use crate::rng::derive_seed;

const GENRES: [&str; 8] = ["comedy", "drama", "thriller", "horror", "romance", "sci-fi", "animation", "western"];

const ADJECTIVES: [&str; 20] = [
    "Silent", "Crimson", "Hidden", "Broken", "Golden", "Midnight", "Frozen", "Wild", "Distant", "Burning", "Lonely",
    "Electric", "Sleeping", "Savage", "Quiet", "Hollow", "Restless", "Velvet", "Iron", "Fading",
];

const NOUNS: [&str; 20] = [
    "Harbor", "Garden", "Frontier", "Mirror", "Empire", "Highway", "Orchard", "Signal", "Kingdom", "Canyon", "Lantern",
    "Island", "Station", "Letters", "River", "Summer", "Engine", "Carnival", "Witness", "Horizon",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub items: usize,
    pub actors: usize,
    pub writers: usize,
    pub directors: usize,
    pub targets_per_episode: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { items: 200, actors: 300, writers: 120, directors: 120, targets_per_episode: 3, seed: 0 }
    }
}

pub struct Episode {
    pub turn: RecommendationTurn,
    pub targets: Vec<ItemId>,
    pub user: OracleUser,
}

pub struct OracleWorld {
    pub config: WorldConfig,
    pub catalog: Arc<ItemCatalog>,
    pub crs: RuleBasedCrs,
}

fn person(role: &str, i: usize) -> String {
    format!("{role} {i:03}")
}

/// Deterministic catalog for `cfg`. Titles are unique.
pub fn build_catalog(cfg: &WorldConfig) -> ItemCatalog {
    assert!(cfg.items <= ADJECTIVES.len() * NOUNS.len(), "at most {} items", ADJECTIVES.len() * NOUNS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let titles = index::sample(&mut rng, ADJECTIVES.len() * NOUNS.len(), cfg.items);
    let items = titles
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let year = rng.gen_range(1950..2021);
            let title = format!("The {} {} ({year})", ADJECTIVES[t / NOUNS.len()], NOUNS[t % NOUNS.len()]);
            let n_genres = rng.gen_range(1..=2);
            let mut genre: Vec<String> = GENRES.choose_multiple(&mut rng, n_genres).map(|g| g.to_string()).collect();
            genre.sort();
            let actor = index::sample(&mut rng, cfg.actors, 2).into_iter().map(|a| person("Actor", a)).collect();
            let attributes = Attributes {
                genre,
                actor,
                writer: vec![person("Writer", rng.gen_range(0..cfg.writers))],
                director: vec![person("Director", rng.gen_range(0..cfg.directors))],
            };
            Item { item_id: ItemId(i as u32), title, attributes }
        })
        .collect();
    ItemCatalog::from_items(items).expect("generated catalog is valid")
}

impl OracleWorld {
    pub fn new(config: WorldConfig) -> Self {
        let catalog = Arc::new(build_catalog(&config));
        let crs = RuleBasedCrs::new(Arc::clone(&catalog));
        Self { config, catalog, crs }
    }

    pub fn episode(&self, index: u64) -> Episode {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[0xE915, index]));
        let targets: Vec<ItemId> = index::sample(&mut rng, self.catalog.len(), self.config.targets_per_episode)
            .into_iter()
            .map(|i| ItemId(i as u32))
            .collect();
        let first = &self.catalog.get(targets[0]).expect("target in catalog").attributes;
        let genre = first.genre.choose(&mut rng).expect("items have a genre");
        let actor = first.actor.choose(&mut rng).expect("items have actors");
        let utt = |speaker, text: String| Utterance { speaker, text, mentioned_item_ids: Vec::new() };
        let history = vec![
            utt(Speaker::Seeker, "Hi! I am looking for a movie to watch tonight.".into()),
            utt(Speaker::Recommender, "Sure. What kind of movies do you enjoy?".into()),
            utt(Speaker::Seeker, format!("I love {genre} films, especially anything with {actor}.")),
        ];
        let user = OracleUser::for_items(&self.catalog, &targets);
        let turn = RecommendationTurn {
            conv_id: format!("world-{index:04}"),
            turn_index: history.len(),
            history,
            ground_truth_item_ids: targets.clone(),
        };
        Episode { turn, targets, user }
    }

    pub fn episodes(&self, count: u64) -> impl Iterator<Item = Episode> + '_ {
        (0..count).map(|i| self.episode(i))
    }
}
