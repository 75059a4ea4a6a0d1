use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use veriscore::corpus::{load_stage, persist_stage, Claim, Stage};
use veriscore::extractor::dedup_claims;
use veriscore::retriever::{EvidenceList, SearchResult};
use veriscore::verifier::{classify_by_algebra, collapse, AlgebraLabel, BinaryLabel, Judgment, PartJudgmentMatrix};

fn judgment() -> impl Strategy<Value = Judgment> {
    prop_oneof![Just(Judgment::Supports), Just(Judgment::Contradicts), Just(Judgment::Neither)]
}

fn matrix() -> impl Strategy<Value = Vec<Vec<Judgment>>> {
    (1usize..6, 0usize..6).prop_flat_map(|(p, e)| prop::collection::vec(prop::collection::vec(judgment(), e), p))
}

fn claim() -> impl Strategy<Value = Claim> {
    ("[a-z]{1,6}", "[a-z]{1,6}", 0usize..50, "\\PC{1,40}").prop_map(|(id, rid, i, text)| Claim {
        id,
        response_id: rid,
        sentence_index: i,
        text,
    })
}

fn evidence() -> impl Strategy<Value = EvidenceList> {
    let result = ("\\PC{0,20}", "\\PC{0,60}", "https://[a-z]{1,8}\\.org");
    (
        "[a-z]{1,8}",
        prop::collection::vec(result, 0..10),
        0i64..2_000_000_000,
        any::<bool>(),
    )
        .prop_map(|(claim_id, rs, secs, cache_hit)| EvidenceList {
            claim_id,
            results: rs
                .into_iter()
                .enumerate()
                .map(|(i, (title, snippet, link))| SearchResult {
                    rank: i + 1,
                    title,
                    snippet,
                    link,
                })
                .collect(),
            retrieved_at: Utc.timestamp_opt(secs, 0).unwrap(),
            cache_hit,
        })
}

proptest! {
    #[test]
    fn claims_survive_persist_and_reload(claims in prop::collection::vec(claim(), 0..20)) {
        let dir = tempfile::tempdir().unwrap();
        persist_stage(dir.path(), Stage::Claims, &claims).unwrap();
        let back: Vec<Claim> = load_stage(dir.path(), Stage::Claims).unwrap();
        prop_assert_eq!(back, claims);
    }

    #[test]
    fn evidence_survives_persist_and_reload(lists in prop::collection::vec(evidence(), 0..8)) {
        let dir = tempfile::tempdir().unwrap();
        persist_stage(dir.path(), Stage::Evidence, &lists).unwrap();
        let back: Vec<EvidenceList> = load_stage(dir.path(), Stage::Evidence).unwrap();
        prop_assert_eq!(back, lists);
    }

    #[test]
    fn dedup_is_idempotent(claims in prop::collection::vec((0usize..5, "[ab]{1,3}"), 0..30)) {
        let once = dedup_claims(claims);
        let twice = dedup_claims(once.clone());
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn supported_needs_support_for_every_part(rows in matrix()) {
        let label = classify_by_algebra(&PartJudgmentMatrix::from_rows(rows.clone()).unwrap());
        let every_part_supported = rows.iter().all(|r| r.contains(&Judgment::Supports));
        if !every_part_supported {
            prop_assert_eq!(collapse(label), BinaryLabel::Unsupported);
        }
    }

    #[test]
    fn adding_support_never_breaks_supported(rows in matrix(), i in any::<prop::sample::Index>(), j in any::<prop::sample::Index>()) {
        let before = classify_by_algebra(&PartJudgmentMatrix::from_rows(rows.clone()).unwrap());
        prop_assume!(!rows[0].is_empty());
        let mut more = rows.clone();
        let r = i.index(more.len());
        let c = j.index(more[r].len());
        if more[r][c] == Judgment::Neither {
            more[r][c] = Judgment::Supports;
        }
        let after = classify_by_algebra(&PartJudgmentMatrix::from_rows(more).unwrap());
        if before == AlgebraLabel::Supported {
            prop_assert_eq!(after, AlgebraLabel::Supported);
        }
    }
}
