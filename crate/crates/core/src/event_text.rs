//! Prompt decomposition into ordered event lists, and caption perturbation.
//!
//! The rule-based parser here is the deterministic reference implementation
//! of the caption-decomposition contract; an LLM-backed provider can replace
//! it behind [`crate::providers::Provider::decompose`]. Clauses are split on
//! a fixed connective lexicon and kept verbatim otherwise — semantic
//! robustness is the embedder's job, not the parser's.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventTextError {
    #[error("caption is empty")]
    EmptyCaption,
    #[error("caption reduces to zero clauses after trimming")]
    NoClauses,
    #[error("event {index} is empty after trimming")]
    EmptyEvent { index: usize },
    #[error("relations must cover every unordered pair exactly once: expected {expected}, got {got}")]
    IncompleteRelations { expected: usize, got: usize },
    #[error("relation ({i}, {j}) invalid for {n} events")]
    InvalidRelation { i: usize, j: usize, n: usize },
    #[error("cannot reverse a single-event list")]
    SingleEvent,
    #[error("nothing to reverse: no BEFORE relation present")]
    NoSequentialRelation,
    #[error("all candidate events already appear in the event list")]
    AllCandidatesExcluded,
}

/// Temporal relation between an event pair; `Before` means the
/// earlier-indexed event starts first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relation {
    Before,
    Simultaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalRelation {
    pub i: usize,
    pub j: usize,
    pub rel: Relation,
}

/// Ordered event captions plus one temporal relation per unordered pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EventList {
    events: Vec<String>,
    relations: Vec<TemporalRelation>,
}

impl EventList {
    /// Validate and build: events non-empty and trimmed-non-blank, exactly
    /// one relation per unordered pair with i < j.
    pub fn new(
        events: Vec<String>,
        mut relations: Vec<TemporalRelation>,
    ) -> Result<Self, EventTextError> {
        if events.is_empty() {
            return Err(EventTextError::NoClauses);
        }
        for (index, ev) in events.iter().enumerate() {
            if ev.trim().is_empty() {
                return Err(EventTextError::EmptyEvent { index });
            }
        }
        let n = events.len();
        let expected = n * (n - 1) / 2;
        if relations.len() != expected {
            return Err(EventTextError::IncompleteRelations {
                expected,
                got: relations.len(),
            });
        }
        relations.sort_by_key(|r| (r.i, r.j));
        let mut seen = vec![false; expected];
        for r in &relations {
            if r.i >= r.j || r.j >= n {
                return Err(EventTextError::InvalidRelation { i: r.i, j: r.j, n });
            }
            let slot = pair_slot(r.i, r.j, n);
            if seen[slot] {
                return Err(EventTextError::IncompleteRelations {
                    expected,
                    got: relations.len(),
                });
            }
            seen[slot] = true;
        }
        Ok(Self { events, relations })
    }

    /// All-BEFORE list in the given order.
    pub fn sequential(events: Vec<String>) -> Result<Self, EventTextError> {
        let n = events.len();
        let mut relations = Vec::with_capacity(n.saturating_sub(1) * n / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                relations.push(TemporalRelation {
                    i,
                    j,
                    rel: Relation::Before,
                });
            }
        }
        Self::new(events, relations)
    }

    /// Build from per-adjacent-pair relations; non-adjacent pairs default
    /// to BEFORE in listed order (the parser's image).
    pub fn with_adjacent_relations(
        events: Vec<String>,
        adjacent: &[Relation],
    ) -> Result<Self, EventTextError> {
        let n = events.len();
        assert_eq!(adjacent.len(), n.saturating_sub(1));
        let mut relations = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let rel = if j == i + 1 {
                    adjacent[j - 1]
                } else {
                    Relation::Before
                };
                relations.push(TemporalRelation { i, j, rel });
            }
        }
        Self::new(events, relations)
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }

    pub fn relations(&self) -> &[TemporalRelation] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Relation of the unordered pair {a, b}; a != b, both in range.
    pub fn relation(&self, a: usize, b: usize) -> Relation {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        let slot = pair_slot(i, j, self.events.len());
        self.relations[slot].rel
    }

    /// Reversed described order: BEFORE claims flip direction, SIMULTANEOUS
    /// pairs are preserved. An involution on event lists.
    pub fn reversed(&self) -> Result<Self, EventTextError> {
        let n = self.events.len();
        if n < 2 {
            return Err(EventTextError::SingleEvent);
        }
        if !self.relations.iter().any(|r| r.rel == Relation::Before) {
            return Err(EventTextError::NoSequentialRelation);
        }
        let events: Vec<String> = self.events.iter().rev().cloned().collect();
        let mut relations = Vec::with_capacity(self.relations.len());
        for i in 0..n {
            for j in (i + 1)..n {
                // mirrored pair in the original indexing
                let rel = self.relation(n - 1 - j, n - 1 - i);
                relations.push(TemporalRelation { i, j, rel });
            }
        }
        Self::new(events, relations)
    }
}

/// Index of pair (i, j), i < j, in the (i, j)-sorted relation vector.
fn pair_slot(i: usize, j: usize, n: usize) -> usize {
    // pairs (0,1)..(0,n-1), (1,2)..: offset of row i is i*n - i*(i+1)/2
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// How a connective joins its right clause to the text so far.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Join {
    /// Right clause happens after its textual predecessor.
    Sequence,
    /// Right clause happens before its textual predecessor ("after" swap).
    Swap,
    /// Right clause is simultaneous with its textual predecessor.
    Simultaneous,
}

/// Connective lexicon, searched earliest-position-first with longest match
/// winning at equal positions. Sentence boundaries act as Sequence joins.
const CONNECTIVES: &[(&str, Join)] = &[
    ("followed by", Join::Sequence),
    ("and then", Join::Sequence),
    ("then", Join::Sequence),
    (", and", Join::Sequence),
    ("before", Join::Sequence),
    ("after", Join::Swap),
    ("while", Join::Simultaneous),
    ("as", Join::Simultaneous),
];

fn is_boundary(bytes: &[u8], idx: usize) -> bool {
    if idx == 0 || idx >= bytes.len() {
        return true;
    }
    !bytes[idx].is_ascii_alphanumeric()
}

/// Earliest connective occurrence in `text` (ASCII case-insensitive),
/// returning (start, end, join).
fn find_connective(text: &str) -> Option<(usize, usize, Join)> {
    let lower = text.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let mut best: Option<(usize, usize, Join)> = None;
    for &(pat, join) in CONNECTIVES {
        let mut from = 0;
        while let Some(off) = lower[from..].find(pat) {
            let start = from + off;
            let end = start + pat.len();
            // word boundaries: patterns starting with punctuation (", and")
            // are anchored by the punctuation itself
            let left_ok = !pat.starts_with(|c: char| c.is_ascii_alphanumeric())
                || start == 0
                || !bytes[start - 1].is_ascii_alphanumeric();
            let right_ok = is_boundary(bytes, end);
            if left_ok && right_ok {
                match best {
                    Some((bs, be, _)) if bs < start || (bs == start && be >= end) => {}
                    _ => best = Some((start, end, join)),
                }
                break;
            }
            from = start + 1;
        }
    }
    best
}

const FILLER_WORDS: &[&str] = &["then", "and"];

/// Strip outer whitespace/punctuation plus leading connective fillers.
fn trim_clause(raw: &str) -> String {
    let mut s = raw.trim_matches(|c: char| c.is_whitespace() || ",.;:!?".contains(c));
    loop {
        let mut stripped = false;
        for w in FILLER_WORDS {
            if s.len() > w.len()
                && s[..w.len()].eq_ignore_ascii_case(w)
                && !s.as_bytes()[w.len()].is_ascii_alphanumeric()
            {
                s = s[w.len()..]
                    .trim_start_matches(|c: char| c.is_whitespace() || ",".contains(c));
                stripped = true;
            }
        }
        if !stripped {
            break;
        }
    }
    s.to_string()
}

/// Split one sentence into (clause, join-to-previous) pairs in text order.
fn split_sentence(sentence: &str) -> Vec<(String, Join)> {
    let mut out = Vec::new();
    let mut rest = sentence;
    let mut pending_join = Join::Sequence;
    loop {
        match find_connective(rest) {
            Some((start, end, join)) => {
                let clause = trim_clause(&rest[..start]);
                if !clause.is_empty() {
                    out.push((clause, pending_join));
                    pending_join = join;
                } else {
                    // connective with no left clause (e.g. leading "then"):
                    // keep the stronger of the two joins for the next clause
                    if pending_join == Join::Sequence {
                        pending_join = join;
                    }
                }
                rest = &rest[end..];
            }
            None => {
                let clause = trim_clause(rest);
                if !clause.is_empty() {
                    out.push((clause, pending_join));
                }
                break;
            }
        }
    }
    out
}

/// Decompose a prompt into an [`EventList`] in described order.
///
/// Clauses split on the connective lexicon (`followed by`, `then`,
/// `, and`, `before`, `after`, `as`, `while`, sentence boundaries);
/// `after` swaps its two clauses, `as`/`while` mark the joined pair
/// SIMULTANEOUS, everything else keeps listed order with BEFORE.
pub fn decompose_caption(caption: &str) -> Result<EventList, EventTextError> {
    if caption.trim().is_empty() {
        return Err(EventTextError::EmptyCaption);
    }
    let mut clauses = Vec::new();
    for sentence in caption.split(['.', ';', '!', '?']) {
        clauses.extend(split_sentence(sentence));
    }
    if clauses.is_empty() {
        return Err(EventTextError::NoClauses);
    }

    let mut events: Vec<String> = Vec::new();
    let mut sim_pairs: Vec<(usize, usize)> = Vec::new();
    let mut prev_pos = 0usize;
    for (idx, (clause, join)) in clauses.into_iter().enumerate() {
        if idx == 0 {
            events.push(clause);
            prev_pos = 0;
            continue;
        }
        match join {
            Join::Sequence => {
                events.push(clause);
                prev_pos = events.len() - 1;
            }
            Join::Simultaneous => {
                events.push(clause);
                let new_pos = events.len() - 1;
                sim_pairs.push((prev_pos, new_pos));
                prev_pos = new_pos;
            }
            Join::Swap => {
                // the new clause precedes its textual predecessor
                events.insert(prev_pos, clause);
                for p in sim_pairs.iter_mut() {
                    if p.0 >= prev_pos {
                        p.0 += 1;
                    }
                    if p.1 >= prev_pos {
                        p.1 += 1;
                    }
                }
                // prev_pos now names the inserted clause
            }
        }
    }

    let n = events.len();
    let mut relations = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let sim = sim_pairs
                .iter()
                .any(|&(a, b)| (a.min(b), a.max(b)) == (i, j));
            relations.push(TemporalRelation {
                i,
                j,
                rel: if sim {
                    Relation::Simultaneous
                } else {
                    Relation::Before
                },
            });
        }
    }
    EventList::new(events, relations)
}

/// Recompose an event list into a caption with deterministic connectives:
/// `, then` between sequential neighbours, ` while` before an event
/// simultaneous with its predecessor.
pub fn compose_caption(events: &EventList) -> String {
    let mut out = events.events()[0].clone();
    for k in 1..events.len() {
        match events.relation(k - 1, k) {
            Relation::Before => {
                out.push_str(", then ");
            }
            Relation::Simultaneous => {
                out.push_str(" while ");
            }
        }
        out.push_str(&events.events()[k]);
    }
    out
}

/// Append one random candidate event (seeded, uniform) as a final BEFORE
/// event and recompose. Candidates already present (case-folded) are
/// excluded.
pub fn make_distractor_caption(
    events: &EventList,
    candidate_events: &[String],
    rng_seed: u64,
) -> Result<String, EventTextError> {
    let existing: Vec<String> = events
        .events()
        .iter()
        .map(|e| e.trim().to_lowercase())
        .collect();
    let eligible: Vec<&String> = candidate_events
        .iter()
        .filter(|c| !existing.contains(&c.trim().to_lowercase()))
        .collect();
    if eligible.is_empty() {
        return Err(EventTextError::AllCandidatesExcluded);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pick = eligible[rng.random_range(0..eligible.len())].clone();

    let mut new_events = events.events().to_vec();
    new_events.push(pick);
    let n = new_events.len();
    let mut relations = events.relations().to_vec();
    for i in 0..n - 1 {
        relations.push(TemporalRelation {
            i,
            j: n - 1,
            rel: Relation::Before,
        });
    }
    let extended = EventList::new(new_events, relations)?;
    Ok(compose_caption(&extended))
}

/// Reverse the described event order and recompose.
pub fn reverse_caption(events: &EventList) -> Result<String, EventTextError> {
    Ok(compose_caption(&events.reversed()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rels(e: &EventList) -> Vec<(usize, usize, Relation)> {
        e.relations().iter().map(|r| (r.i, r.j, r.rel)).collect()
    }

    #[test]
    fn followed_by_splits_in_order() {
        let e = decompose_caption("A dog barks followed by a car horn honking").unwrap();
        assert_eq!(e.events(), ["A dog barks", "a car horn honking"]);
        assert_eq!(rels(&e), vec![(0, 1, Relation::Before)]);
    }

    #[test]
    fn as_marks_simultaneous() {
        let e = decompose_caption("A bell rings as rain falls").unwrap();
        assert_eq!(e.events(), ["A bell rings", "rain falls"]);
        assert_eq!(rels(&e), vec![(0, 1, Relation::Simultaneous)]);
    }

    #[test]
    fn after_swaps_clause_order() {
        let e = decompose_caption("Thunder rumbles after a woman speaks").unwrap();
        assert_eq!(e.events(), ["a woman speaks", "Thunder rumbles"]);
        assert_eq!(rels(&e), vec![(0, 1, Relation::Before)]);
    }

    #[test]
    fn sentence_boundaries_and_comma_and() {
        let e = decompose_caption("A dog barks. A horn honks, and a door slams").unwrap();
        assert_eq!(e.events(), ["A dog barks", "A horn honks", "a door slams"]);
        assert!(rels(&e).iter().all(|&(_, _, r)| r == Relation::Before));
    }

    #[test]
    fn before_keeps_order_and_then_strips() {
        let e = decompose_caption("a kettle whistles before a pot boils").unwrap();
        assert_eq!(e.events(), ["a kettle whistles", "a pot boils"]);

        let e = decompose_caption("a dog barks, and then a horn honks").unwrap();
        assert_eq!(e.events(), ["a dog barks", "a horn honks"]);
    }

    #[test]
    fn connectives_inside_words_do_not_split() {
        let e = decompose_caption("a gas stove hisses, then a brass band plays").unwrap();
        assert_eq!(e.events(), ["a gas stove hisses", "a brass band plays"]);
    }

    #[test]
    fn empty_caption_errors() {
        assert!(matches!(
            decompose_caption("   "),
            Err(EventTextError::EmptyCaption)
        ));
        assert!(matches!(
            decompose_caption(" , . "),
            Err(EventTextError::NoClauses)
        ));
    }

    #[test]
    fn compose_templates() {
        let e = EventList::sequential(vec!["a dog barks".into(), "a horn honks".into()]).unwrap();
        assert_eq!(compose_caption(&e), "a dog barks, then a horn honks");

        let single = EventList::sequential(vec!["rain falls".into()]).unwrap();
        assert_eq!(compose_caption(&single), "rain falls");

        let three =
            EventList::sequential(vec!["E1".into(), "E2".into(), "E3".into()]).unwrap();
        assert_eq!(compose_caption(&three), "E1, then E2, then E3");

        let sim = EventList::with_adjacent_relations(
            vec!["a bell rings".into(), "rain falls".into()],
            &[Relation::Simultaneous],
        )
        .unwrap();
        assert_eq!(compose_caption(&sim), "a bell rings while rain falls");
    }

    #[test]
    fn distractor_appends_candidate() {
        let e = EventList::sequential(vec!["a dog barks".into()]).unwrap();
        let got =
            make_distractor_caption(&e, &["a horn honks".to_string()], 123).unwrap();
        assert_eq!(got, "a dog barks, then a horn honks");
    }

    #[test]
    fn distractor_deterministic_per_seed() {
        let e = EventList::sequential(vec!["a dog barks".into(), "rain falls".into()]).unwrap();
        let pool: Vec<String> = ["a horn honks", "a cat meows", "glass shatters"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let a = make_distractor_caption(&e, &pool, 42).unwrap();
        let b = make_distractor_caption(&e, &pool, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distractor_excludes_duplicates() {
        let e = EventList::sequential(vec!["A Dog Barks".into()]).unwrap();
        let err = make_distractor_caption(&e, &["a dog barks".to_string()], 1).unwrap_err();
        assert!(matches!(err, EventTextError::AllCandidatesExcluded));
    }

    #[test]
    fn reverse_two_events() {
        let e = decompose_caption("a dog barks, then a horn honks").unwrap();
        assert_eq!(
            reverse_caption(&e).unwrap(),
            "a horn honks, then a dog barks"
        );
    }

    #[test]
    fn reverse_is_involution() {
        let e = EventList::with_adjacent_relations(
            vec!["E1".into(), "E2".into(), "E3".into(), "E4".into()],
            &[Relation::Before, Relation::Simultaneous, Relation::Before],
        )
        .unwrap();
        let twice = e.reversed().unwrap().reversed().unwrap();
        assert_eq!(twice, e);
        assert_eq!(compose_caption(&twice), compose_caption(&e));
    }

    #[test]
    fn reverse_single_event_errors() {
        let e = EventList::sequential(vec!["rain falls".into()]).unwrap();
        assert!(matches!(
            reverse_caption(&e),
            Err(EventTextError::SingleEvent)
        ));
    }

    #[test]
    fn relation_cover_is_complete() {
        let e = decompose_caption(
            "waves crash, then a seagull caws as children laugh, then a drum starts",
        )
        .unwrap();
        let n = e.len();
        assert_eq!(e.relations().len(), n * (n - 1) / 2);
    }

    /// Word pool free of connective substrings, so composed captions parse
    /// back exactly.
    fn clause_strategy() -> impl Strategy<Value = String> {
        let words = prop::sample::select(vec![
            "dog", "horn", "rain", "bell", "drum", "bird", "wave", "glass", "door", "wind",
        ]);
        prop::collection::vec(words, 2..4).prop_map(|ws| format!("a {} sounds", ws.join(" ")))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn compose_decompose_roundtrip(
            clauses in prop::collection::vec(clause_strategy(), 1..5),
            sim_mask in prop::collection::vec(any::<bool>(), 0..4),
        ) {
            let n = clauses.len();
            let adjacent: Vec<Relation> = (0..n.saturating_sub(1))
                .map(|k| if *sim_mask.get(k).unwrap_or(&false) {
                    Relation::Simultaneous
                } else {
                    Relation::Before
                })
                .collect();
            let original = EventList::with_adjacent_relations(clauses, &adjacent).unwrap();
            let parsed = decompose_caption(&compose_caption(&original)).unwrap();
            prop_assert_eq!(parsed.len(), original.len());
            let mut a = rels(&parsed);
            let mut b = rels(&original);
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn reverse_involution_prop(
            clauses in prop::collection::vec(clause_strategy(), 2..6),
            sim_mask in prop::collection::vec(any::<bool>(), 0..5),
        ) {
            let n = clauses.len();
            let adjacent: Vec<Relation> = (0..n - 1)
                .map(|k| if *sim_mask.get(k).unwrap_or(&false) {
                    Relation::Simultaneous
                } else {
                    Relation::Before
                })
                .collect();
            let e = EventList::with_adjacent_relations(clauses, &adjacent).unwrap();
            if e.relations().iter().any(|r| r.rel == Relation::Before) {
                let back = e.reversed().unwrap().reversed().unwrap();
                prop_assert_eq!(back, e);
            }
        }
    }
}
