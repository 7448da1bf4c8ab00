use std::collections::BTreeMap;

use lident_core::corpus::{build_charset, parse_tsv, split, Corpus};
use lident_core::Error;
use proptest::prelude::*;

fn pairs_strategy() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec(("[^\t\r\n]{1,20}", "(en|de|fr-ca|pt-br)"), 1..30)
}

fn corpus_of(pairs: &[(String, String)]) -> Corpus {
    Corpus::from_pairs(pairs.iter().map(|(t, l)| (t.as_str(), l.as_str()))).unwrap()
}

proptest! {
    #[test]
    fn tsv_round_trip(pairs in pairs_strategy()) {
        let corpus = corpus_of(&pairs);
        let mut buf = Vec::new();
        corpus.write_tsv(&mut buf).unwrap();
        prop_assert_eq!(parse_tsv(&buf).unwrap(), corpus);
    }

    #[test]
    fn lookup_is_total(pairs in pairs_strategy(), probe in "\\PC{0,40}", cap in 2usize..20) {
        let corpus = corpus_of(&pairs);
        let cs = build_charset(&corpus, Some(cap)).unwrap();
        prop_assert!(cs.size() <= cap);
        for c in probe.chars() {
            let i = cs.lookup(c);
            prop_assert!(i < cs.size());
            if i != cs.unk_index() {
                prop_assert_eq!(cs.char_at(i), Some(c));
            }
        }
    }

    #[test]
    fn split_partitions_each_label(pairs in prop::collection::vec(("[a-z]{1,8}", "(xx|yy)"), 6..40), seed in any::<u64>()) {
        let mut pairs = pairs;
        // every label needs enough members for three parts
        for l in ["xx", "yy"] {
            for _ in 0..3 {
                pairs.push(("pad".into(), l.into()));
            }
        }
        let corpus = corpus_of(&pairs);
        let parts = split(&corpus, &[0.6, 0.2, 0.2], seed).unwrap();
        prop_assert_eq!(&parts, &split(&corpus, &[0.6, 0.2, 0.2], seed).unwrap());

        let key = |c: &Corpus| {
            let mut v: Vec<(String, String)> =
                c.instances().iter().map(|i| (i.text.clone(), i.label.code.clone())).collect();
            v.sort();
            v
        };
        let mut union: Vec<(String, String)> = parts.iter().flat_map(key).collect();
        union.sort();
        prop_assert_eq!(union, key(&corpus));

        for label in corpus.labels() {
            let total = corpus.instances().iter().filter(|i| i.label == *label).count() as f64;
            for (part, frac) in parts.iter().zip([0.6, 0.2, 0.2]) {
                let got = part.instances().iter().filter(|i| i.label == *label).count() as f64;
                prop_assert!((got - frac * total).abs() < 1.0 + 1e-9);
                prop_assert!(got >= 1.0);
            }
        }
    }
}

#[test]
fn tsv_errors_carry_line_numbers() {
    assert!(matches!(parse_tsv(b"ok\ten\nbroken line\n"), Err(Error::Format { line: 2, .. })));
    assert!(matches!(parse_tsv(b"a\tb\tc\n"), Err(Error::Format { line: 1, .. })));
    assert!(matches!(parse_tsv(b"ok\ten\n\xff\xfe\tfr\n"), Err(Error::Decode { line: 2 })));
    let c = parse_tsv(b"hola\tes-es\r\nola\tpt-pt").unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c.instances()[1].text, "ola");
}

#[test]
fn stratification_needs_enough_instances() {
    let corpus = Corpus::from_pairs([("a", "x"), ("b", "x"), ("c", "y")]).unwrap();
    let err = split(&corpus, &[0.5, 0.5], 0).unwrap_err();
    assert!(matches!(err, Error::Stratification { ref label, count: 1, parts: 2 } if label == "y"));
}

#[test]
fn groups_attach_to_labels() {
    let groups = BTreeMap::from([("de".to_string(), 4)]);
    let corpus = Corpus::from_pairs([("x", "de"), ("y", "en")]).unwrap().with_groups(&groups);
    assert_eq!(corpus.labels()[0].group_id, Some(4));
    assert_eq!(corpus.labels()[1].group_id, None);
}
