//! Shared helpers for the integration suites: the worked golden fixture,
//! random alignment generation, and deliberately naive reference
//! implementations used as oracles. The oracles transcribe the definitions
//! directly from first principles and stay independent of the library's
//! index-based implementations.

// each test binary compiles this module separately and uses a subset
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::Cursor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtnet::corpus::{parse_bitext_readers, AlignedSentencePair, Side, Vocabulary};
use mtnet::extract::{extract_corpus, NullMode, Shard, TaskSpec};
use mtnet::synth::{gen_synth, SynthPattern};

/// The worked five-word example: source positions 1..5 and target
/// positions 1..5 with a reordering alignment. Token ids follow the
/// lexicographic vocabulary ids (first content word = 4).
pub fn fixture() -> AlignedSentencePair {
    AlignedSentencePair::new(
        vec![4, 5, 6, 7, 8],
        vec![4, 5, 6, 7, 8],
        [(2, 4), (3, 3), (4, 1), (5, 2)],
    )
    .unwrap()
}

/// Uniformly random alignment over |F| x |E| with sizes up to `max_len`.
pub fn random_pair(rng: &mut ChaCha8Rng, max_len: u32) -> AlignedSentencePair {
    let f = rng.random_range(1..=max_len);
    let e = rng.random_range(1..=max_len);
    let mut links = BTreeSet::new();
    let n_links = rng.random_range(0..=(f * e).min(2 * max_len));
    for _ in 0..n_links {
        links.insert((rng.random_range(1..=f), rng.random_range(1..=e)));
    }
    AlignedSentencePair::new(
        (0..f).map(|x| 4 + x).collect(),
        (0..e).map(|x| 4 + x).collect(),
        links,
    )
    .unwrap()
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sources_linked_to(pair: &AlignedSentencePair, i: u32) -> Vec<u32> {
    let mut v: Vec<u32> = pair
        .links
        .iter()
        .filter(|&&(_, ti)| ti == i)
        .map(|&(j, _)| j)
        .collect();
    v.sort_unstable();
    v
}

/// Direct transcription of the affiliation heuristic: single link wins,
/// multiple links take the middle (rounding down), unaligned words copy
/// the nearest aligned target's value, right first on ties.
pub fn affiliation_oracle(pair: &AlignedSentencePair) -> Option<Vec<u32>> {
    if pair.links.is_empty() {
        return None;
    }
    let e = pair.tgt_len();
    let own = |i: u32| -> Option<u32> {
        let linked = sources_linked_to(pair, i);
        match linked.len() {
            0 => None,
            c => Some(linked[(c - 1) / 2]),
        }
    };
    let mut result = Vec::new();
    for i in 1..=e {
        if let Some(a) = own(i) {
            result.push(a);
            continue;
        }
        let mut value = None;
        'search: for d in 1..=e {
            for c in [i.checked_add(d), i.checked_sub(d)].into_iter().flatten() {
                if c >= 1 && c <= e {
                    if let Some(a) = own(c) {
                        value = Some(a);
                        break 'search;
                    }
                }
            }
        }
        result.push(value.expect("some target is aligned"));
    }
    Some(result)
}

/// Set-based tightness test straight from the definition: both boundary
/// words aligned, and no target inside the interval's hull links to any
/// source outside the interval.
fn tight_oracle(pair: &AlignedSentencePair, s: u32, e: u32) -> bool {
    let aligned = |p: u32| pair.links.iter().any(|&(j, _)| j == p);
    if !aligned(s) || !aligned(e) {
        return false;
    }
    let targets: BTreeSet<u32> = pair
        .links
        .iter()
        .filter(|&&(j, _)| j >= s && j <= e)
        .map(|&(_, i)| i)
        .collect();
    let (lo, hi) = match (targets.first(), targets.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return false,
    };
    !pair
        .links
        .iter()
        .any(|&(j, i)| (j < s || j > e) && i >= lo && i <= hi)
}

pub type SpanInterval = Option<(u32, u32)>;

/// Exhaustive enumeration of all candidate intervals on each side of `j`,
/// keeping the longest tight one.
pub fn spans_oracle(pair: &AlignedSentencePair, j: u32) -> (SpanInterval, SpanInterval) {
    let n = pair.src_len();
    let mut left = None;
    for s in 1..j {
        if tight_oracle(pair, s, j - 1) {
            left = Some((s, j - 1));
            break; // smallest s is the longest interval
        }
    }
    let mut right = None;
    for e in (j + 1..=n).rev() {
        if tight_oracle(pair, j + 1, e) {
            right = Some((j + 1, e));
            break; // largest e is the longest interval
        }
    }
    (left, right)
}

/// Median of a small sample.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Generate a synthetic corpus and ingest it: vocabularies built from its
/// own token inventory plus the id-mapped sentence pairs.
pub fn corpus_setup(
    pattern: SynthPattern,
    sentences: usize,
    vocab: usize,
    seed: u64,
) -> (Vocabulary, Vocabulary, Vec<AlignedSentencePair>) {
    let c = gen_synth(pattern, sentences, vocab, seed).unwrap();
    let sv =
        Vocabulary::build(c.src.join(" ").split_whitespace(), 1, 100_000, Side::Source).unwrap();
    let tv =
        Vocabulary::build(c.tgt.join(" ").split_whitespace(), 1, 100_000, Side::Target).unwrap();
    let pairs = parse_bitext_readers(
        Cursor::new(c.src.join("\n") + "\n"),
        Cursor::new(c.tgt.join("\n") + "\n"),
        Cursor::new(c.align.join("\n") + "\n"),
        &sv,
        &tv,
    )
    .unwrap();
    (sv, tv, pairs)
}

/// Materialize one in-memory shard for a task over ingested pairs.
pub fn shard_for(task: TaskSpec, pairs: &[AlignedSentencePair], tv: &Vocabulary) -> Shard {
    Shard {
        spec: task,
        label_space_size: task.label_space_size(tv.len()),
        examples: extract_corpus(pairs, &task, NullMode::PredictNull, 1),
    }
}
