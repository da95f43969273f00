mod common;

use proptest::prelude::*;

use ragmed::corpus::{ingest, ChunkStore, Document, IngestOptions};
use ragmed::text::{LanguageTag, SentenceSplitter};

use common::{doc, squash};

fn body() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            "[A-Za-z]{1,9}",
            "[a-z]{1,6}[.?!]",
            Just("Dr.".to_string()),
            Just("e.g.".to_string()),
            Just("(see above).".to_string()),
            "[0-9]{1,3}\\.[0-9]",
        ],
        0..80,
    )
    .prop_flat_map(|words| {
        let n = words.len();
        (Just(words), proptest::collection::vec(prop_oneof![Just(" "), Just("\n"), Just("  "), Just("\t")], n))
    })
    .prop_map(|(words, gaps)| words.iter().zip(gaps).map(|(w, g)| format!("{w}{g}")).collect())
}

fn docs() -> impl Strategy<Value = Vec<Document>> {
    proptest::collection::vec(body(), 1..6).prop_map(|bodies| {
        bodies
            .into_iter()
            .enumerate()
            .map(|(i, b)| doc(format!("doc-{i}"), b))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn chunks_reconstruct_each_document(docs in docs(), cap in 3usize..40) {
        let opts = IngestOptions { max_chunk_words: cap, ..IngestOptions::default() };
        let (store, report) = ingest(docs.clone(), &opts).unwrap();
        prop_assert_eq!(report.chunks, store.len());
        for d in &docs {
            let chunks = store.document_chunks(&d.doc_id);
            let joined = chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(squash(&joined), squash(&d.body));
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.ordinal, i);
                prop_assert_eq!(&c.chunk_id, &format!("{}#{:06}", d.doc_id, i));
                prop_assert!(c.word_count >= 1 && c.word_count <= cap);
                prop_assert_eq!(c.text.trim(), c.text.as_str());
            }
            prop_assert_eq!(chunks.is_empty(), report.skipped_empty.contains(&d.doc_id));
        }
    }

    #[test]
    fn store_is_sorted_by_chunk_id(docs in docs()) {
        let (store, _) = ingest(docs, &IngestOptions::default()).unwrap();
        let ids: Vec<&str> = store.chunks().iter().map(|c| c.chunk_id.as_str()).collect();
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        for (pos, id) in ids.iter().enumerate() {
            prop_assert_eq!(store.position(id), Some(pos));
        }
    }

    #[test]
    fn ingest_is_idempotent_on_its_chunks(docs in docs()) {
        let (store, _) = ingest(docs, &IngestOptions::default()).unwrap();
        for c in store.chunks() {
            let (again, _) = ingest([doc("again", c.text.clone())], &IngestOptions::default()).unwrap();
            prop_assert_eq!(again.len(), 1, "chunk {:?} split again", c.text);
            prop_assert_eq!(&again.chunks()[0].text, &c.text);
        }
    }

    #[test]
    fn stats_match_a_recount(docs in docs()) {
        let (store, _) = ingest(docs, &IngestOptions::default()).unwrap();
        let stats = store.stats();
        prop_assert_eq!(stats.paragraph_count as usize, store.len());
        let tokens: usize = store.chunks().iter().map(|c| c.text.split_whitespace().count()).sum();
        prop_assert_eq!(stats.token_count as usize, tokens);
    }
}

#[test]
fn abbreviation_guard_and_strict_mode() {
    let body = "Dr. Smith compared drug A vs. drug B today. Labs were drawn, e.g. a CBC. Done.";
    let guarded = SentenceSplitter::default().sentences(body, LanguageTag::LatinScript);
    assert_eq!(
        guarded,
        vec!["Dr. Smith compared drug A vs. drug B today.", "Labs were drawn, e.g. a CBC.", "Done."]
    );
    let (strict, _) = ingest([doc("d", body)], &IngestOptions::strict_period_split()).unwrap();
    assert!(strict.len() > guarded.len());
    assert_eq!(strict.chunks()[0].text, "Dr.");
}

#[test]
fn cjk_sentences_split_without_spaces() {
    let d = Document {
        doc_id: "zh".into(),
        title: String::new(),
        body: "胆固醇栓塞常见于导管术后。肾功能下降！需要活检吗？".into(),
        language_tag: LanguageTag::Cjk,
    };
    let (store, _) = ingest([d], &IngestOptions::default()).unwrap();
    let texts: Vec<&str> = store.chunks().iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, vec!["胆固醇栓塞常见于导管术后。", "肾功能下降！", "需要活检吗？"]);
    assert_eq!(store.chunks()[1].word_count, 6);
}

#[test]
fn over_cap_sentence_is_split_and_reported() {
    let long = format!("{}.", vec!["word"; 1100].join(" "));
    let (store, report) = ingest([doc("long", long)], &IngestOptions::default()).unwrap();
    let counts: Vec<usize> = store.chunks().iter().map(|c| c.word_count).collect();
    assert_eq!(counts, vec![512, 512, 76]);
    assert_eq!(report.over_cap_splits, vec![("long".to_string(), 0)]);
}

#[test]
fn empty_documents_are_reported_not_stored() {
    let (store, report) = ingest([doc("a", "  \n\t "), doc("b", "One.")], &IngestOptions::default()).unwrap();
    assert_eq!(store.len(), 1);
    assert_eq!(report.skipped_empty, vec!["a".to_string()]);
}

#[test]
fn duplicate_doc_ids_are_rejected() {
    let err = ingest([doc("a", "One."), doc("a", "Two.")], &IngestOptions::default()).unwrap_err();
    assert!(err.to_string().contains('a'), "{err}");
}

#[test]
fn persisted_store_round_trips() {
    let (store, _) = ingest(
        [doc("x", "Alpha beta. Gamma delta!"), doc("y", "Epsilon? Zeta.")],
        &IngestOptions::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    store.save(dir.path()).unwrap();
    let loaded = ChunkStore::load(dir.path()).unwrap();
    assert_eq!(loaded.chunks(), store.chunks());
    assert_eq!(loaded.id_digest(), store.id_digest());
    assert_eq!(loaded.content_digest(), store.content_digest());
    for pos in 0..store.len() {
        assert_eq!(&ChunkStore::read_record(dir.path(), pos).unwrap(), &store.chunks()[pos]);
    }
}
