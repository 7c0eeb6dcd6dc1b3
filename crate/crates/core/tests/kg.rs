use std::collections::BTreeSet;

use heat_core::kg::{
    filtered_rank, metrics, parse_statement, statement_to_hyperedge, synthetic, KgDataset, QualifiedStatement, SyntheticSpec,
};
use heat_core::rng_stream;
use proptest::prelude::*;
use rand::Rng;

fn statement() -> impl Strategy<Value = QualifiedStatement> {
    let name = "[A-Za-z][A-Za-z0-9_]{0,5}";
    (name, name, name, prop::collection::vec((name, name), 0..4)).prop_map(|(s, r, o, q)| QualifiedStatement {
        subject: s,
        relation: r,
        object: o,
        qualifiers: q,
    })
}

proptest! {
    #[test]
    fn filtered_rank_never_exceeds_raw_rank(
        scores in prop::collection::vec(-3i32..3, 2..30),
        answer in any::<prop::sample::Index>(),
        filter in prop::collection::btree_set(0usize..30, 0..10),
    ) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let answer = answer.index(scores.len());
        let filter: BTreeSet<usize> = filter.into_iter().filter(|&i| i < scores.len() && i != answer).collect();
        let raw = filtered_rank(&scores, answer, &BTreeSet::new());
        let filtered = filtered_rank(&scores, answer, &filter);
        prop_assert!(filtered >= 1.0 && filtered <= raw && raw <= scores.len() as f64);
    }

    #[test]
    fn metrics_stay_in_range(ranks in prop::collection::vec(1u32..100, 1..50)) {
        let ranks: Vec<f64> = ranks.into_iter().map(f64::from).collect();
        let m = metrics(&ranks);
        prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        prop_assert!(m.hits1 <= m.hits10);
    }

    #[test]
    fn statement_lines_round_trip(s in statement()) {
        prop_assert_eq!(parse_statement(&s.to_string()).unwrap(), s);
    }

    #[test]
    fn hyperedges_are_equal_exactly_when_qualifier_multisets_are(a in statement(), b in statement(), shuffle in any::<u64>()) {
        let id = |n: &str| n.bytes().fold(7usize, |h, c| h.wrapping_mul(31).wrapping_add(c as usize));
        let canon = |s: &QualifiedStatement| {
            let (ty, incs) = statement_to_hyperedge(s, id);
            let mut m: Vec<(String, usize)> = incs.into_iter().map(|i| (i.qualifier, i.node)).collect();
            m.sort();
            (ty, m)
        };
        // Reordering qualifiers never changes the edge.
        let mut c = a.clone();
        let mut rng = rng_stream(shuffle, "q");
        for i in (1..c.qualifiers.len()).rev() {
            c.qualifiers.swap(i, rng.gen_range(0..=i));
        }
        prop_assert_eq!(canon(&a), canon(&c));
        let same = a.subject == b.subject && a.relation == b.relation && a.object == b.object
            && a.qualifier_multiset() == b.qualifier_multiset();
        prop_assert_eq!(canon(&a) == canon(&b), same);
    }
}

#[test]
fn random_scores_give_harmonic_mrr() {
    let entities = 50;
    let harmonic: f64 = (1..=entities).map(|k| 1.0 / k as f64).sum();
    let mut rng = rng_stream(8, "mc");
    let ranks: Vec<f64> = (0..40_000)
        .map(|_| {
            let scores: Vec<f64> = (0..entities).map(|_| rng.gen()).collect();
            filtered_rank(&scores, 0, &BTreeSet::new())
        })
        .collect();
    let mrr = metrics(&ranks).mrr;
    let want = harmonic / entities as f64;
    assert!((mrr - want).abs() < 0.005, "{mrr} vs {want}");
}

#[test]
fn tie_with_a_filtered_answer_is_ignored() {
    let scores = [0.2, 0.7, 0.7, 0.1];
    assert_eq!(filtered_rank(&scores, 1, &BTreeSet::new()), 1.5);
    assert_eq!(filtered_rank(&scores, 1, &BTreeSet::from([2])), 1.0);
    assert_eq!(filtered_rank(&[0.9, 0.1], 0, &BTreeSet::new()), 1.0);
}

#[test]
fn synthetic_dataset_survives_save_and_load() {
    let ds = synthetic(&SyntheticSpec::default(), &mut rng_stream(0, "kg"));
    ds.validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let back = KgDataset::load(dir.path()).unwrap();
    assert_eq!(back.entities, ds.entities);
    assert_eq!(back.relations, ds.relations);
    assert_eq!(
        (back.train.clone(), back.valid.clone(), back.test.clone()),
        (ds.train.clone(), ds.valid.clone(), ds.test.clone())
    );
    for split in ["train", "valid", "test"] {
        let text = std::fs::read_to_string(dir.path().join(format!("{split}.tsv"))).unwrap();
        let again: String = back.split(split).iter().map(|s| format!("{s}\n")).collect();
        assert_eq!(text, again, "{split} is not reproduced byte for byte");
    }
}

/// A qualifier-blind scorer sees `(s, r)` and the unordered set of the two
/// qualifier values; which of them decides the answer is invisible. Count
/// how often the answer is forced by that view.
#[test]
fn synthetic_answers_need_the_qualifier_roles() {
    let ds = synthetic(&SyntheticSpec::default(), &mut rng_stream(0, "kg"));
    let mut answer_of_value = std::collections::HashMap::new();
    for s in &ds.train {
        let v = &s.qualifiers.iter().find(|(r, _)| r == "according_to").unwrap().1;
        answer_of_value.insert((s.relation.clone(), v.clone()), s.object.clone());
    }
    let mut forced = 0;
    for s in &ds.test {
        let values: Vec<&String> = s.qualifiers.iter().map(|(_, v)| v).collect();
        let options: BTreeSet<Option<&String>> = values
            .iter()
            .map(|v| answer_of_value.get(&(s.relation.clone(), (*v).clone())))
            .collect();
        if options.len() == 1 {
            forced += 1;
        }
    }
    assert!(
        (forced as f64) < 0.2 * ds.test.len() as f64,
        "{forced} of {} test answers are forced",
        ds.test.len()
    );
}

#[test]
fn malformed_lines_are_rejected() {
    assert!(parse_statement("a\tb").is_err());
    assert!(parse_statement("a\t\tc").is_err());
    assert!(parse_statement("a\tb\tc\tnoequals").is_err());
    let s = parse_statement("Q1\tP2\tQ3\tP4=Q5\tP4=Q6").unwrap();
    assert_eq!(s.qualifiers.len(), 2);
}
