//! Alignment analysis: word affiliations, maximal orientation spans,
//! orientation labels, and fertility labels derived from one aligned
//! sentence pair.
//!
//! All positions are 1-based. Functions here are pure; callers may fan out
//! over sentences freely.

use crate::corpus::AlignedSentencePair;

/// Per-target source affiliation `a_i` and per-source target attachment
/// `b_j` for one sentence pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffiliationMap {
    /// For each target position (index 0 = position 1), the affiliated
    /// source position.
    pub a: Vec<u32>,
    /// For each source position, the left-most linked target position, or
    /// `None` when the source word is unaligned.
    pub b: Vec<Option<u32>>,
}

impl AffiliationMap {
    /// Derive both maps. Returns `None` when the pair has zero links, in
    /// which case affiliation is undefined and downstream extraction skips
    /// the sentence.
    pub fn from_pair(pair: &AlignedSentencePair) -> Option<AffiliationMap> {
        let a = target_affiliation(pair)?;
        let b = source_attachment(pair);
        Some(AffiliationMap { a, b })
    }

    /// Affiliated source position of (1-based) target position `i`.
    pub fn a_of(&self, i: u32) -> u32 {
        self.a[(i - 1) as usize]
    }

    /// Attached target position of (1-based) source position `j`.
    pub fn b_of(&self, j: u32) -> Option<u32> {
        self.b[(j - 1) as usize]
    }
}

/// The affiliated source position for every target word.
///
/// A target word linked to exactly one source word takes it; one linked to
/// several takes the middle of the ascending-sorted linked positions,
/// rounding down; an unaligned target word inherits from the nearest
/// aligned target position, preferring the right on distance ties.
///
/// Returns `None` for a pair with no links at all.
pub fn target_affiliation(pair: &AlignedSentencePair) -> Option<Vec<u32>> {
    if pair.links.is_empty() {
        return None;
    }
    let tgt_len = pair.tgt.len();
    let mut linked: Vec<Vec<u32>> = vec![Vec::new(); tgt_len + 1];
    for &(j, i) in &pair.links {
        linked[i as usize].push(j);
    }
    let direct: Vec<Option<u32>> = (1..=tgt_len)
        .map(|i| {
            let mut v = linked[i].clone();
            if v.is_empty() {
                None
            } else {
                v.sort_unstable();
                Some(v[(v.len() - 1) / 2])
            }
        })
        .collect();

    let mut a = vec![0u32; tgt_len];
    for i in 0..tgt_len {
        if let Some(j) = direct[i] {
            a[i] = j;
            continue;
        }
        let mut inherited = None;
        for d in 1..=tgt_len {
            // right first on ties, then left
            if i + d < tgt_len {
                if let Some(j) = direct[i + d] {
                    inherited = Some(j);
                    break;
                }
            }
            if i >= d {
                if let Some(j) = direct[i - d] {
                    inherited = Some(j);
                    break;
                }
            }
        }
        a[i] = inherited.expect("pair has at least one link");
    }
    Some(a)
}

/// The left-most linked target position for every source word, `None` for
/// unaligned source words.
pub fn source_attachment(pair: &AlignedSentencePair) -> Vec<Option<u32>> {
    let mut b = vec![None; pair.src.len()];
    // links iterate in ascending (j, i) order, so the first i seen per j is
    // the left-most
    for &(j, i) in &pair.links {
        let slot = &mut b[(j - 1) as usize];
        if slot.is_none() {
            *slot = Some(i);
        }
    }
    b
}

/// 1 iff source position `j` participates in at least one link.
pub fn fertility_label(pair: &AlignedSentencePair, j: u32) -> u32 {
    assert!(
        j >= 1 && j <= pair.src_len(),
        "fertility_label: source position {j} out of bounds"
    );
    pair.is_aligned(j) as u32
}

/// Maximal orientation spans of a source position: the longest tight,
/// alignment-consistent intervals ending at `j-1` (left) and starting at
/// `j+1` (right).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanPair {
    pub left: Option<(u32, u32)>,
    pub right: Option<(u32, u32)>,
}

/// Per-position link index used by the span and orientation computations.
struct LinkIndex {
    /// 1-based source position -> ascending linked target positions.
    targets: Vec<Vec<u32>>,
    /// 1-based target position -> ascending linked source positions.
    sources: Vec<Vec<u32>>,
}

impl LinkIndex {
    fn new(pair: &AlignedSentencePair) -> LinkIndex {
        let mut targets = vec![Vec::new(); pair.src.len() + 1];
        let mut sources = vec![Vec::new(); pair.tgt.len() + 1];
        for &(j, i) in &pair.links {
            targets[j as usize].push(i);
            sources[i as usize].push(j);
        }
        for v in &mut targets {
            v.sort_unstable();
        }
        for v in &mut sources {
            v.sort_unstable();
        }
        LinkIndex { targets, sources }
    }

    fn aligned(&self, j: u32) -> bool {
        !self.targets[j as usize].is_empty()
    }

    /// Hull [min, max] of target positions linked to sources in [s, e], or
    /// `None` when the interval has no links.
    fn target_hull(&self, s: u32, e: u32) -> Option<(u32, u32)> {
        let mut hull: Option<(u32, u32)> = None;
        for j in s..=e {
            for &i in &self.targets[j as usize] {
                hull = Some(match hull {
                    None => (i, i),
                    Some((lo, hi)) => (lo.min(i), hi.max(i)),
                });
            }
        }
        hull
    }

    /// A tight consistent phrase: both boundary words aligned, and every
    /// target position inside the interval's hull links only to sources
    /// inside the interval.
    fn is_tight(&self, s: u32, e: u32) -> bool {
        if !self.aligned(s) || !self.aligned(e) {
            return false;
        }
        let (lo, hi) = match self.target_hull(s, e) {
            Some(h) => h,
            None => return false,
        };
        for i in lo..=hi {
            if self.sources[i as usize].iter().any(|&j| j < s || j > e) {
                return false;
            }
        }
        true
    }
}

/// Compute the maximal orientation spans `L_j` and `R_j` of position `j`.
pub fn orientation_spans(pair: &AlignedSentencePair, j: u32) -> SpanPair {
    assert!(
        j >= 1 && j <= pair.src_len(),
        "orientation_spans: source position {j} out of bounds"
    );
    let idx = LinkIndex::new(pair);
    spans_with_index(&idx, pair.src_len(), j)
}

fn spans_with_index(idx: &LinkIndex, src_len: u32, j: u32) -> SpanPair {
    let mut left = None;
    if j > 1 {
        let end = j - 1;
        for s in (1..=end).rev() {
            if idx.is_tight(s, end) {
                left = Some((s, end));
            }
        }
    }
    let mut right = None;
    if j < src_len {
        let start = j + 1;
        for e in start..=src_len {
            if idx.is_tight(start, e) {
                right = Some((start, e));
            }
        }
    }
    SpanPair { left, right }
}

/// Orientation of one neighbor span's translation relative to the anchor's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    MonotoneAdjacent = 0,
    ReverseAdjacent = 1,
    MonotoneGap = 2,
    ReverseGap = 3,
    /// The neighbor span does not exist.
    Missing = 4,
}

impl Orientation {
    pub fn index(self) -> u32 {
        self as u32
    }

    pub fn from_index(ix: u32) -> Option<Orientation> {
        match ix {
            0 => Some(Orientation::MonotoneAdjacent),
            1 => Some(Orientation::ReverseAdjacent),
            2 => Some(Orientation::MonotoneGap),
            3 => Some(Orientation::ReverseGap),
            4 => Some(Orientation::Missing),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Orientation::MonotoneAdjacent => "MA",
            Orientation::ReverseAdjacent => "RA",
            Orientation::MonotoneGap => "MG",
            Orientation::ReverseGap => "RG",
            Orientation::Missing => "NONE",
        }
    }
}

/// Number of distinct orientation label ids.
pub const ORIENTATION_LABELS: u32 = 30;

/// Orientation outcome for one source position: a (left, right) pair for
/// aligned words, a single relative orientation for unaligned words.
///
/// Ids 0..24 encode aligned pairs (left-major, 5x5); 25..29 encode the
/// unaligned singles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrientationLabel {
    AlignedPair {
        left: Orientation,
        right: Orientation,
    },
    UnalignedSingle(Orientation),
}

impl OrientationLabel {
    pub fn id(self) -> u32 {
        match self {
            OrientationLabel::AlignedPair { left, right } => 5 * left.index() + right.index(),
            OrientationLabel::UnalignedSingle(o) => 25 + o.index(),
        }
    }

    pub fn from_id(id: u32) -> Option<OrientationLabel> {
        if id < 25 {
            Some(OrientationLabel::AlignedPair {
                left: Orientation::from_index(id / 5)?,
                right: Orientation::from_index(id % 5)?,
            })
        } else if id < ORIENTATION_LABELS {
            Some(OrientationLabel::UnalignedSingle(Orientation::from_index(
                id - 25,
            )?))
        } else {
            None
        }
    }
}

/// Where a neighbor span sits relative to its anchor on the source side.
#[derive(Clone, Copy, PartialEq, Eq)]
enum NeighborSide {
    Left,
    Right,
}

/// Classify the hull `span` of a neighbor's translation against the hull
/// `anchor` of the anchor's translation. `side` is the neighbor's source
/// side; monotone means source order and target order agree.
///
/// Interleaved hulls are outside the model: span consistency keeps the
/// linked-target sets apart, but a word linked to targets on both sides of
/// a neighbor's hull can still interleave the min..max intervals. That is
/// reported as a defect, never classified.
fn classify(span: (u32, u32), anchor: (u32, u32), side: NeighborSide) -> Orientation {
    let (s_lo, s_hi) = span;
    let (a_lo, a_hi) = anchor;
    let before = s_hi < a_lo;
    let after = s_lo > a_hi;
    assert!(
        before || after,
        "orientation hulls overlap ({span:?} vs {anchor:?}); \
         consistency of the spans forbids this"
    );
    let monotone = match side {
        NeighborSide::Left => before,
        NeighborSide::Right => after,
    };
    let adjacent = if before {
        s_hi + 1 == a_lo
    } else {
        a_hi + 1 == s_lo
    };
    match (monotone, adjacent) {
        (true, true) => Orientation::MonotoneAdjacent,
        (true, false) => Orientation::MonotoneGap,
        (false, true) => Orientation::ReverseAdjacent,
        (false, false) => Orientation::ReverseGap,
    }
}

/// The orientation label of source position `j`.
///
/// For an aligned word, each present neighbor span is classified against
/// the word's own translation hull; a missing span yields
/// [`Orientation::Missing`]. For an unaligned word, the right span is
/// classified against the left span, and the label collapses to
/// `Missing` when either span is absent.
pub fn orientation_label(pair: &AlignedSentencePair, j: u32) -> OrientationLabel {
    assert!(
        j >= 1 && j <= pair.src_len(),
        "orientation_label: source position {j} out of bounds"
    );
    let idx = LinkIndex::new(pair);
    let spans = spans_with_index(&idx, pair.src_len(), j);
    if idx.aligned(j) {
        let anchor = idx.target_hull(j, j).expect("aligned word has a hull");
        let left = spans
            .left
            .map(|(s, e)| {
                let hull = idx.target_hull(s, e).expect("span boundaries are aligned");
                classify(hull, anchor, NeighborSide::Left)
            })
            .unwrap_or(Orientation::Missing);
        let right = spans
            .right
            .map(|(s, e)| {
                let hull = idx.target_hull(s, e).expect("span boundaries are aligned");
                classify(hull, anchor, NeighborSide::Right)
            })
            .unwrap_or(Orientation::Missing);
        OrientationLabel::AlignedPair { left, right }
    } else {
        let o = match (spans.left, spans.right) {
            (Some((ls, le)), Some((rs, re))) => {
                let left_hull = idx.target_hull(ls, le).expect("span has links");
                let right_hull = idx.target_hull(rs, re).expect("span has links");
                classify(right_hull, left_hull, NeighborSide::Right)
            }
            _ => Orientation::Missing,
        };
        OrientationLabel::UnalignedSingle(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The worked five-by-five example: source positions 1..5, target
    /// positions 1..5, links (j, i) 1-based.
    pub fn fixture() -> AlignedSentencePair {
        AlignedSentencePair::new(
            vec![4, 5, 6, 7, 8],
            vec![4, 5, 6, 7, 8],
            [(2, 4), (3, 3), (4, 1), (5, 2)],
        )
        .unwrap()
    }

    fn monotone(n: u32) -> AlignedSentencePair {
        AlignedSentencePair::new(
            (0..n).map(|x| 4 + x).collect(),
            (0..n).map(|x| 4 + x).collect(),
            (1..=n).map(|p| (p, p)),
        )
        .unwrap()
    }

    fn reversal(n: u32) -> AlignedSentencePair {
        AlignedSentencePair::new(
            (0..n).map(|x| 4 + x).collect(),
            (0..n).map(|x| 4 + x).collect(),
            (1..=n).map(|p| (p, n + 1 - p)),
        )
        .unwrap()
    }

    #[test]
    fn fixture_target_affiliation() {
        let a = target_affiliation(&fixture()).unwrap();
        assert_eq!(a, vec![4, 5, 3, 2, 2]);
    }

    #[test]
    fn affiliation_middle_of_odd() {
        let pair = AlignedSentencePair::new(
            vec![0; 8],
            vec![9],
            [(2, 1), (5, 1), (7, 1)],
        )
        .unwrap();
        assert_eq!(target_affiliation(&pair).unwrap(), vec![5]);
    }

    #[test]
    fn affiliation_rounds_down_on_even() {
        let pair =
            AlignedSentencePair::new(vec![0; 6], vec![9], [(2, 1), (5, 1)]).unwrap();
        assert_eq!(target_affiliation(&pair).unwrap(), vec![2]);
    }

    #[test]
    fn affiliation_prefers_right_on_tie() {
        // target 2 is unaligned; targets 1 and 3 are both at distance 1
        let pair = AlignedSentencePair::new(
            vec![10, 11, 12],
            vec![20, 21, 22],
            [(1, 1), (3, 3)],
        )
        .unwrap();
        assert_eq!(target_affiliation(&pair).unwrap(), vec![1, 3, 3]);
    }

    #[test]
    fn affiliation_zero_links() {
        let pair = AlignedSentencePair::new(vec![1], vec![2], []).unwrap();
        assert!(target_affiliation(&pair).is_none());
        assert!(AffiliationMap::from_pair(&pair).is_none());
    }

    #[test]
    fn fixture_source_attachment() {
        let b = source_attachment(&fixture());
        assert_eq!(b, vec![None, Some(4), Some(3), Some(1), Some(2)]);
    }

    #[test]
    fn attachment_keeps_left_most() {
        let pair =
            AlignedSentencePair::new(vec![9], vec![0; 6], [(1, 5), (1, 3)]).unwrap();
        assert_eq!(source_attachment(&pair), vec![Some(3)]);
    }

    #[test]
    fn fixture_fertility() {
        let pair = fixture();
        assert_eq!(fertility_label(&pair, 3), 1);
        assert_eq!(fertility_label(&pair, 1), 0);
    }

    #[test]
    fn fertility_empty_links() {
        let pair = AlignedSentencePair::new(vec![1, 2], vec![3], []).unwrap();
        assert_eq!(fertility_label(&pair, 1), 0);
        assert_eq!(fertility_label(&pair, 2), 0);
    }

    #[test]
    fn fixture_spans_at_center() {
        let spans = orientation_spans(&fixture(), 3);
        assert_eq!(spans.left, Some((2, 2)));
        assert_eq!(spans.right, Some((4, 5)));
    }

    #[test]
    fn fixture_spans_unaligned_boundary_blocks_left() {
        // j=2: the only candidate left interval is [1,1], but source 1 is
        // unaligned, which fails the tight-boundary requirement
        let spans = orientation_spans(&fixture(), 2);
        assert_eq!(spans.left, None);
    }

    #[test]
    fn monotone_spans() {
        let pair = monotone(3);
        let spans = orientation_spans(&pair, 2);
        assert_eq!(spans.left, Some((1, 1)));
        assert_eq!(spans.right, Some((3, 3)));
    }

    #[test]
    fn fixture_orientation_at_center_is_reverse_adjacent_both() {
        let label = orientation_label(&fixture(), 3);
        assert_eq!(
            label,
            OrientationLabel::AlignedPair {
                left: Orientation::ReverseAdjacent,
                right: Orientation::ReverseAdjacent,
            }
        );
    }

    #[test]
    fn fixture_orientation_unaligned_edge() {
        let label = orientation_label(&fixture(), 1);
        assert_eq!(
            label,
            OrientationLabel::UnalignedSingle(Orientation::Missing)
        );
    }

    #[test]
    fn monotone_interior_is_monotone_adjacent() {
        let pair = monotone(5);
        for j in 2..=4 {
            assert_eq!(
                orientation_label(&pair, j),
                OrientationLabel::AlignedPair {
                    left: Orientation::MonotoneAdjacent,
                    right: Orientation::MonotoneAdjacent,
                },
                "position {j}"
            );
        }
    }

    #[test]
    fn reversal_interior_is_reverse_adjacent() {
        let pair = reversal(5);
        for j in 2..=4 {
            assert_eq!(
                orientation_label(&pair, j),
                OrientationLabel::AlignedPair {
                    left: Orientation::ReverseAdjacent,
                    right: Orientation::ReverseAdjacent,
                },
                "position {j}"
            );
        }
    }

    #[test]
    fn label_id_bijection() {
        let mut seen = std::collections::HashSet::new();
        for id in 0..ORIENTATION_LABELS {
            let label = OrientationLabel::from_id(id).unwrap();
            assert_eq!(label.id(), id);
            assert!(seen.insert(label.id()));
        }
        assert_eq!(seen.len(), 30);
        assert!(OrientationLabel::from_id(30).is_none());
    }

    #[test]
    #[should_panic(expected = "orientation hulls overlap")]
    fn interleaved_hulls_are_reported_as_defect() {
        // source 2 links to targets 1 and 5; its hull [1,5] swallows the
        // left span's hull [2,4] even though the linked-target sets are
        // disjoint
        let pair = AlignedSentencePair::new(
            vec![10, 11],
            vec![0; 5],
            [(1, 2), (1, 4), (2, 1), (2, 5)],
        )
        .unwrap();
        let _ = orientation_label(&pair, 2);
    }

    #[test]
    fn aligned_hulls_disjoint_on_fixture() {
        let pair = fixture();
        let idx = LinkIndex::new(&pair);
        for j in 1..=pair.src_len() {
            if !idx.aligned(j) {
                continue;
            }
            let spans = orientation_spans(&pair, j);
            let anchor = idx.target_hull(j, j).unwrap();
            for (s, e) in [spans.left, spans.right].into_iter().flatten() {
                let hull = idx.target_hull(s, e).unwrap();
                assert!(hull.1 < anchor.0 || hull.0 > anchor.1);
            }
        }
    }
}
