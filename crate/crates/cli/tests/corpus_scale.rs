//! Ingest at the size of the smaller public corpus: 1,967 catalog items and
//! 999 conversations.

mod common;

use common::{crsearch, p};
use crsearch::catalog::write_catalog;
use crsearch::domain::{Attributes, Conversation, Item, ItemId, Speaker, Utterance};
use crsearch::ingest::to_jsonl;
use crsearch::ItemCatalog;

const ITEMS: u32 = 1967;
const CONVERSATIONS: u32 = 999;

fn catalog() -> ItemCatalog {
    let items = (0..ITEMS)
        .map(|i| Item {
            item_id: ItemId(i),
            title: format!("Feature {i} ({})", 1950 + i % 70),
            attributes: Attributes {
                genre: vec![["drama", "comedy", "horror"][i as usize % 3].into()],
                ..Default::default()
            },
        })
        .collect();
    ItemCatalog::from_items(items).unwrap()
}

/// Each conversation: the seeker names item a, the recommender repeats a and
/// adds b. Every third conversation closes with the recommender naming b
/// again.
fn corpus() -> Vec<Conversation> {
    let u = |speaker, text: &str, ids: Vec<u32>| Utterance {
        speaker,
        text: text.into(),
        mentioned_item_ids: ids.into_iter().map(ItemId).collect(),
    };
    (0..CONVERSATIONS)
        .map(|i| {
            let a = (2 * i) % ITEMS;
            let b = (2 * i + 1) % ITEMS;
            let mut turns = vec![
                u(Speaker::Seeker, "I liked one recently.", vec![a]),
                u(Speaker::Recommender, "Then try these two.", vec![a, b]),
                u(Speaker::Seeker, "Sounds good, thanks.", vec![]),
            ];
            if i % 3 == 0 {
                turns.push(u(Speaker::Recommender, "Really, do watch that second one.", vec![b]));
            }
            Conversation { conv_id: format!("conv-{i:04}"), turns }
        })
        .collect()
}

#[test]
fn corpus_scale_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let catalog_path = dir.path().join("catalog.jsonl");
    std::fs::write(&catalog_path, write_catalog(&catalog())).unwrap();
    let corpus_path = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus_path, to_jsonl(&corpus())).unwrap();

    // dedupe: one turn per conversation, the closing repeat is dropped
    // raw: 999 + 333 closing turns
    for (dedupe, turns) in [("true", 999), ("false", 1332)] {
        let out = dir.path().join(format!("out-{dedupe}"));
        let o = crsearch(&[
            "ingest",
            "--corpus",
            p(&corpus_path),
            "--catalog",
            p(&catalog_path),
            "--out",
            p(&out),
            "--dedupe",
            dedupe,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8(o.stdout).unwrap();
        assert!(stdout.contains("999 conversations"), "{stdout}");
        assert!(stdout.contains(&format!("{turns} recommendation turns")), "{stdout}");
        assert!(stdout.contains("1967 catalog items"), "{stdout}");
    }
}
