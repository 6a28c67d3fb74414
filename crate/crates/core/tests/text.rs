//! Tokenizer and packing properties.

use proptest::prelude::*;
use strata_core::text::{pack, train_bpe, train_bpe_with, BpeModel, WordPiece, BOS, EOS, PAD, UNK};
use strata_core::Rng;

const CORPUS: [&str; 6] = [
    "the quick brown fox jumps over the lazy dog",
    "the lazy dog sleeps in the sun",
    "a quick brown dog runs over the hill",
    "foxes and dogs are the best of friends",
    "aaaa abab abab",
    "unaffable strata tensors",
];

fn trained() -> BpeModel {
    train_bpe(&CORPUS, 320).unwrap()
}

/// Most frequent adjacent pair, ties to the smallest `(left, right)`, by
/// plain counting over token strings.
fn naive_bpe(corpus: &[&str], vocab_size: usize, min_frequency: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut seqs: Vec<Vec<Vec<u8>>> = corpus.iter().map(|s| s.bytes().map(|b| vec![b]).collect()).collect();
    let mut merges = Vec::new();
    let mut vocab: std::collections::BTreeSet<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    while vocab.len() + 4 < vocab_size {
        let mut counts: std::collections::BTreeMap<(Vec<u8>, Vec<u8>), usize> = Default::default();
        for s in &seqs {
            for w in s.windows(2) {
                *counts.entry((w[0].clone(), w[1].clone())).or_default() += 1;
            }
        }
        let Some(best) = counts.values().copied().max() else { break };
        if best < min_frequency {
            break;
        }
        let pair = counts.into_iter().find(|(_, c)| *c == best).unwrap().0;
        let joined: Vec<u8> = pair.0.iter().chain(&pair.1).copied().collect();
        for s in &mut seqs {
            let mut out = Vec::new();
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == pair.0 && s[i + 1] == pair.1 {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(s[i].clone());
                    i += 1;
                }
            }
            *s = out;
        }
        vocab.insert(joined);
        merges.push(pair);
    }
    merges
}

#[test]
fn bpe_round_trips_random_byte_strings() {
    let model = trained();
    let mut rng = Rng::new(99);
    for _ in 0..1000 {
        let len = rng.below(64) as usize;
        let bytes: Vec<u8> = (0..len).map(|_| rng.below(256) as u8).collect();
        let ids = model.encode_bytes(&bytes);
        assert!(ids.len() <= bytes.len());
        assert_eq!(model.decode_bytes(&ids), bytes);
    }
}

#[test]
fn bpe_training_matches_naive_counting() {
    let mut rng = Rng::new(3);
    for _ in 0..40 {
        let lines: Vec<String> = (0..1 + rng.below(5))
            .map(|_| (0..rng.below(12)).map(|_| (b'a' + rng.below(3) as u8) as char).collect())
            .collect();
        let corpus: Vec<&str> = lines.iter().map(String::as_str).collect();
        for (size, min_freq) in [(266, 1), (300, 2)] {
            let merges = train_bpe_with(&corpus, size, min_freq).unwrap().merges();
            assert_eq!(merges, naive_bpe(&corpus, size, min_freq), "{corpus:?}");
        }
    }
}

#[test]
fn bpe_merges_are_closed_and_unique() {
    let model = trained();
    let merges = model.merges();
    let mut known: std::collections::BTreeSet<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut pairs = std::collections::BTreeSet::new();
    for (l, r) in &merges {
        assert!(known.contains(l) && known.contains(r));
        assert!(pairs.insert((l.clone(), r.clone())));
        known.insert(l.iter().chain(r).copied().collect());
    }
    assert_eq!(model.vocab().len(), 260 + merges.len());
}

#[test]
fn bpe_examples() {
    let model = trained();
    assert!(model.encode("").is_empty());
    let plain = model.encode("\u{1}\u{2}\u{3}");
    assert_eq!(plain.len(), 3);
}

#[test]
fn wordpiece_examples() {
    let wp = WordPiece::from_pieces(["un", "##aff", "##able"]).unwrap();
    let ids = wp.encode("unaffable");
    let tokens: Vec<&str> = ids.iter().map(|&i| wp.vocab().token(i).unwrap()).collect();
    assert_eq!(tokens, ["un", "##aff", "##able"]);
    assert_eq!(wp.encode("zebra"), vec![UNK]);
    assert!(wp.encode("").is_empty());
    assert_eq!(wp.encode(&"un".repeat(51)), vec![UNK]);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn bpe_round_trips_text(s in "\\PC{0,40}") {
        let model = trained();
        prop_assert_eq!(model.decode(&model.encode(&s)), s);
    }

    #[test]
    fn wordpiece_is_total_and_deterministic(s in "[a-z #]{0,40}") {
        let wp = WordPiece::from_pieces(["un", "##aff", "##able", "the", "##s", "a", "##b"]).unwrap();
        let ids = wp.encode(&s);
        prop_assert_eq!(&ids, &wp.encode(&s));
        let words = s.split_whitespace().count();
        prop_assert!(ids.iter().filter(|&&i| i == UNK).count() <= words);
        prop_assert!(ids.iter().all(|&i| (i as usize) < wp.vocab().len()));
    }

    #[test]
    fn pack_has_static_length(
        ids in prop::collection::vec(4u32..1000, 0..40),
        len in 2usize..24,
        bos in any::<bool>(),
        eos in any::<bool>(),
    ) {
        let (row, mask) = pack(&ids, len, bos, eos).unwrap();
        prop_assert_eq!(row.len(), len);
        prop_assert_eq!(mask.len(), len);
        for (t, m) in row.iter().zip(&mask) {
            prop_assert_eq!(*m == 1, *t != PAD as i32);
        }
        let real: Vec<i32> = row.iter().zip(&mask).filter(|(_, m)| **m == 1).map(|(t, _)| *t).collect();
        let keep = ids.len().min(len - bos as usize - eos as usize);
        let mut want = vec![];
        if bos { want.push(BOS as i32); }
        want.extend(ids[..keep].iter().map(|&i| i as i32));
        if eos { want.push(EOS as i32); }
        prop_assert_eq!(real, want);
    }
}

#[test]
fn pack_examples() {
    let (b, e) = (BOS as i32, EOS as i32);
    assert_eq!(pack(&[5, 6], 4, true, true).unwrap(), (vec![b, 5, 6, e], vec![1, 1, 1, 1]));
    assert_eq!(pack(&[5, 6, 7, 8], 4, true, true).unwrap().0, vec![b, 5, 6, e]);
    assert_eq!(pack(&[], 3, true, true).unwrap(), (vec![b, e, 0], vec![1, 1, 0]));
    assert!(pack(&[1], 1, true, true).is_err());
}
