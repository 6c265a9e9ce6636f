//! Candidate verification with weighted, normalized Levenshtein similarity.
//!
//! Each gathered candidate is scored against the query as
//! `score = sum_i w_i * sim(query.f_i, candidate.f_i)` over the five canonical
//! fields; the best-scoring candidate is accepted when its score reaches the
//! configured threshold.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::index::CandidateSet;
use crate::record::{normalize_field, Field, Record};

pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 0.75;
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("invalid field weights: {0}")]
    InvalidWeights(String),
    #[error("invalid accept threshold {0}; must be within [0, 1]")]
    InvalidThreshold(f64),
    #[error("candidate {0:?} is not a known reference record")]
    UnknownRefId(String),
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    edit_distance(&a, &b)
}

fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[prefix..], &b[prefix..]);
    let suffix = a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count();
    let (a, b) = (&a[..a.len() - suffix], &b[..b.len() - suffix]);
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }

    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (j, lc) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = j + 1;
        for (i, sc) in short.iter().enumerate() {
            let above = row[i + 1];
            row[i + 1] = if sc == lc {
                diag
            } else {
                1 + diag.min(above).min(row[i])
            };
            diag = above;
        }
    }
    row[short.len()]
}

/// `1 - lev(a, b) / max(|a|, |b|)` on lower-cased input; two empty strings score 1.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(&a, &b) as f64 / longest as f64
}

/// Per-field weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldWeights {
    entries: Vec<(Field, f64)>,
}

impl Default for FieldWeights {
    fn default() -> Self {
        Self {
            entries: vec![
                (Field::Email, 0.4),
                (Field::Username, 0.3),
                (Field::Domain, 0.15),
                (Field::Servername, 0.1),
                (Field::Status, 0.05),
            ],
        }
    }
}

impl FieldWeights {
    pub fn new(entries: Vec<(Field, f64)>) -> Result<Self, VerifyError> {
        for f in Field::ALL {
            match entries.iter().filter(|(e, _)| *e == f).count() {
                1 => {}
                0 => return Err(VerifyError::InvalidWeights(format!("missing weight for {f}"))),
                _ => return Err(VerifyError::InvalidWeights(format!("duplicate weight for {f}"))),
            }
        }
        if let Some((f, w)) = entries.iter().find(|(_, w)| !(0.0..=1.0).contains(w)) {
            return Err(VerifyError::InvalidWeights(format!("weight for {f} is {w}, outside [0, 1]")));
        }
        let sum: f64 = entries.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(VerifyError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { entries })
    }

    /// Rescales positive weights to sum to one.
    pub fn normalized(entries: Vec<(Field, f64)>) -> Result<Self, VerifyError> {
        let sum: f64 = entries.iter().map(|(_, w)| w).sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(VerifyError::InvalidWeights(format!("cannot normalize weights summing to {sum}")));
        }
        Self::new(entries.into_iter().map(|(f, w)| (f, w / sum)).collect())
    }

    pub fn entries(&self) -> &[(Field, f64)] {
        &self.entries
    }

    pub fn weight(&self, field: Field) -> f64 {
        self.entries.iter().find(|(f, _)| *f == field).map_or(0.0, |e| e.1)
    }
}

/// Similarity of each canonical field; serialized in weight-table order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldScores([f64; Field::COUNT]);

impl FieldScores {
    pub fn get(&self, field: Field) -> f64 {
        self.0[field.index()]
    }

    pub fn set(&mut self, field: Field, value: f64) {
        self.0[field.index()] = value;
    }

    pub fn weighted_sum(&self, weights: &FieldWeights) -> f64 {
        weights.entries().iter().map(|&(f, w)| w * self.get(f)).sum()
    }
}

const REPORT_ORDER: [Field; Field::COUNT] = [
    Field::Email,
    Field::Username,
    Field::Domain,
    Field::Servername,
    Field::Status,
];

impl Serialize for FieldScores {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(Field::COUNT))?;
        for f in REPORT_ORDER {
            map.serialize_entry(f.name(), &self.get(f))?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Composite {
    pub score: f64,
    pub per_field: FieldScores,
}

/// The weighted sum of normalized field similarities, clamped to `[0, 1]`.
pub fn composite_score(a: &Record, b: &Record, weights: &FieldWeights) -> Composite {
    let mut per_field = FieldScores::default();
    for f in Field::ALL {
        per_field.set(f, similarity(&normalize_field(f, a.get(f)), &normalize_field(f, b.get(f))));
    }
    Composite {
        score: per_field.weighted_sum(weights).clamp(0.0, 1.0),
        per_field,
    }
}

/// Outcome of verifying one query.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDecision {
    pub query_id: String,
    pub best_ref_id: Option<String>,
    pub score: f64,
    /// Absent when the decision skipped string verification.
    pub per_field: Option<FieldScores>,
    pub accepted: bool,
    pub threshold_used: f64,
}

impl Serialize for MatchDecision {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("MatchDecision", 5)?;
        s.serialize_field("query_id", &self.query_id)?;
        s.serialize_field("best_ref_id", &self.best_ref_id)?;
        s.serialize_field("score", &self.score)?;
        s.serialize_field("accepted", &self.accepted)?;
        s.serialize_field("per_field", &self.per_field)?;
        s.end()
    }
}

impl MatchDecision {
    fn rejected(query_id: &str, threshold: f64) -> Self {
        Self {
            query_id: query_id.to_owned(),
            best_ref_id: None,
            score: 0.0,
            per_field: None,
            accepted: false,
            threshold_used: threshold,
        }
    }
}

/// Reference records by id.
pub type RefLookup<'a> = HashMap<&'a str, &'a Record>;

pub fn ref_lookup(records: &[Record]) -> RefLookup<'_> {
    records.iter().map(|r| (r.id.as_str(), r)).collect()
}

/// Scores candidates and counts every composite-score evaluation.
#[derive(Debug)]
pub struct Verifier {
    weights: FieldWeights,
    threshold: f64,
    verifications: AtomicU64,
}

impl Verifier {
    pub fn new(weights: FieldWeights, threshold: f64) -> Result<Self, VerifyError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(VerifyError::InvalidThreshold(threshold));
        }
        Ok(Self {
            weights,
            threshold,
            verifications: AtomicU64::new(0),
        })
    }

    pub fn weights(&self) -> &FieldWeights {
        &self.weights
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Composite-score evaluations so far.
    pub fn verifications(&self) -> u64 {
        self.verifications.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.verifications.store(0, Ordering::Relaxed);
    }

    pub fn score(&self, a: &Record, b: &Record) -> Composite {
        self.verifications.fetch_add(1, Ordering::Relaxed);
        composite_score(a, b, &self.weights)
    }

    /// Picks the best candidate by composite score, then retrieval similarity,
    /// then ascending ref id, and accepts it when the score reaches the threshold.
    pub fn reconsider(
        &self,
        query: &Record,
        candidates: &CandidateSet,
        refs: &RefLookup<'_>,
    ) -> Result<MatchDecision, VerifyError> {
        let mut best: Option<(Composite, f32, &str)> = None;
        for n in &candidates.neighbors {
            let reference = refs
                .get(n.ref_id.as_str())
                .ok_or_else(|| VerifyError::UnknownRefId(n.ref_id.clone()))?;
            let c = self.score(query, reference);
            let better = match &best {
                None => true,
                Some((bc, bsim, bid)) => {
                    c.score > bc.score
                        || (c.score == bc.score
                            && (n.similarity > *bsim || (n.similarity == *bsim && n.ref_id.as_str() < *bid)))
                }
            };
            if better {
                best = Some((c, n.similarity, &n.ref_id));
            }
        }
        Ok(self.decide(&query.id, best.map(|(c, _, id)| (c, id))))
    }

    /// Exhaustive baseline: scores the query against every reference.
    pub fn best_of_all(&self, query: &Record, refs: &[Record]) -> MatchDecision {
        let mut best: Option<(Composite, &str)> = None;
        for r in refs {
            let c = self.score(query, r);
            let better = match &best {
                None => true,
                Some((bc, bid)) => c.score > bc.score || (c.score == bc.score && r.id.as_str() < *bid),
            };
            if better {
                best = Some((c, &r.id));
            }
        }
        self.decide(&query.id, best)
    }

    fn decide(&self, query_id: &str, best: Option<(Composite, &str)>) -> MatchDecision {
        match best {
            None => MatchDecision::rejected(query_id, self.threshold),
            Some((c, id)) => MatchDecision {
                query_id: query_id.to_owned(),
                best_ref_id: Some(id.to_owned()),
                score: c.score,
                per_field: Some(c.per_field),
                accepted: c.score >= self.threshold,
                threshold_used: self.threshold,
            },
        }
    }
}

/// Embedding-only decision: accept the top retrieved candidate unconditionally.
pub fn accept_top1(candidates: &CandidateSet) -> MatchDecision {
    match candidates.neighbors.first() {
        None => MatchDecision::rejected(&candidates.query_id, 0.0),
        Some(n) => MatchDecision {
            query_id: candidates.query_id.clone(),
            best_ref_id: Some(n.ref_id.clone()),
            score: f64::from(n.similarity).clamp(0.0, 1.0),
            per_field: None,
            accepted: true,
            threshold_used: 0.0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Neighbor;
    use crate::record::Source;
    use proptest::prelude::*;

    /// Full-table Wagner-Fischer, kept independent of the row-reusing version.
    fn dp_oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in t.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            t[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
            }
        }
        t[a.len()][b.len()]
    }

    fn record(id: &str, vals: [&str; 5]) -> Record {
        let mut r = Record::new(id, Source::Reference);
        for (f, v) in Field::ALL.into_iter().zip(vals) {
            r.set(f, v);
        }
        r
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(dp_oracle("kitten", "sitting"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("same", "same"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("ümlaut", "umlaut"), 1);
    }

    #[test]
    fn similarity_examples() {
        assert!((similarity("kitten", "sitting") - (1.0 - 3.0 / 7.0)).abs() < 1e-12);
        assert!((similarity("kitten", "sitting") - 0.571429).abs() < 1e-6);
        assert_eq!(similarity("", ""), 1.0);
        assert_eq!(similarity("abc", ""), 0.0);
        assert_eq!(similarity("Active", "active"), 1.0);
    }

    #[test]
    fn weights_validation() {
        let w = FieldWeights::default();
        assert_eq!(FieldWeights::new(w.entries().to_vec()).unwrap(), w);
        assert!((w.weight(Field::Email) - 0.4).abs() < 1e-12);
        let mut bad = w.entries().to_vec();
        bad[0].1 = 0.5;
        assert!(matches!(FieldWeights::new(bad), Err(VerifyError::InvalidWeights(_))));
        let missing = w.entries()[..4].to_vec();
        assert!(FieldWeights::new(missing).is_err());
        let mut dup = w.entries().to_vec();
        dup[4].0 = Field::Email;
        assert!(FieldWeights::new(dup).is_err());
        assert!(FieldWeights::new(vec![
            (Field::Email, 1.5),
            (Field::Username, -0.5),
            (Field::Domain, 0.0),
            (Field::Servername, 0.0),
            (Field::Status, 0.0),
        ])
        .is_err());
        assert!(Verifier::new(w, 1.2).is_err());
    }

    #[test]
    fn composite_examples() {
        let w = FieldWeights::default();
        let a = record("a", ["maresha", "abcd@x.io", "example.com", "server82", "Active"]);
        assert!((composite_score(&a, &a, &w).score - 1.0).abs() < 1e-9);

        // Email similarity 0.5: two substitutions in an 4-char address.
        let mut b = a.clone();
        b.set(Field::Email, "abzz");
        let mut a4 = a.clone();
        a4.set(Field::Email, "abcd");
        let c = composite_score(&a4, &b, &w);
        assert_eq!(c.per_field.get(Field::Email), 0.5);
        assert!((c.score - 0.8).abs() < 1e-9);

        let x = record("x", ["aaa", "aaa", "aaa", "aaa", "aaa"]);
        let y = record("y", ["bbb", "bbb", "bbb", "bbb", "bbb"]);
        assert_eq!(composite_score(&x, &y, &w).score, 0.0);

        // Empty against non-empty scores zero for that field, without renormalizing.
        let mut dropped = a.clone();
        dropped.set(Field::Username, "");
        assert!((composite_score(&a, &dropped, &w).score - 0.7).abs() < 1e-9);
    }

    fn candidates(ids: &[(&str, f32)]) -> CandidateSet {
        CandidateSet {
            query_id: "q".into(),
            neighbors: ids
                .iter()
                .map(|&(id, s)| Neighbor { ref_id: id.into(), similarity: s })
                .collect(),
        }
    }

    #[test]
    fn reconsider_picks_best_and_thresholds() {
        let w = FieldWeights::default();
        let v = Verifier::new(w, DEFAULT_ACCEPT_THRESHOLD).unwrap();
        let query = record("q", ["user", "abcd", "example.com", "server82", "active"]);
        let r08 = record("r08", ["user", "abzz", "example.com", "server82", "active"]);
        // Email 0.5 and username 2/3 similar: 1 - 0.4*0.5 - 0.3*(1/3) = 0.7.
        let r07 = record("r07", ["usxx", "abzz", "example.com", "server82", "active"]);
        let refs = vec![r08, r07];
        let lookup = ref_lookup(&refs);

        let d = v.reconsider(&query, &candidates(&[("r07", 0.99), ("r08", 0.5)]), &lookup).unwrap();
        assert_eq!(d.best_ref_id.as_deref(), Some("r08"));
        assert!((d.score - 0.8).abs() < 1e-9);
        assert!(d.accepted);
        assert_eq!(v.verifications(), 2);

        let single = Verifier::new(FieldWeights::default(), 0.75).unwrap();
        let same = vec![query.clone()];
        let d = single.reconsider(&query, &candidates(&[("q", 1.0)]), &ref_lookup(&same)).unwrap();
        assert!(d.accepted && d.score == 1.0);

        let d = v.reconsider(&query, &candidates(&[]), &lookup).unwrap();
        assert_eq!(d.best_ref_id, None);
        assert!(!d.accepted && d.score == 0.0);

        assert_eq!(
            v.reconsider(&query, &candidates(&[("nope", 0.3)]), &lookup),
            Err(VerifyError::UnknownRefId("nope".into()))
        );

        let strict = Verifier::new(FieldWeights::default(), 0.9).unwrap();
        assert!(!strict.reconsider(&query, &candidates(&[("r08", 0.9)]), &lookup).unwrap().accepted);
    }

    #[test]
    fn ties_prefer_retrieval_similarity_then_id() {
        let v = Verifier::new(FieldWeights::default(), 0.5).unwrap();
        let q = record("q", ["a", "b", "c", "d", "e"]);
        let refs = vec![record("r2", ["a", "b", "c", "d", "e"]), record("r1", ["a", "b", "c", "d", "e"])];
        let lookup = ref_lookup(&refs);
        let d = v.reconsider(&q, &candidates(&[("r2", 0.9), ("r1", 0.8)]), &lookup).unwrap();
        assert_eq!(d.best_ref_id.as_deref(), Some("r2"));
        let d = v.reconsider(&q, &candidates(&[("r2", 0.8), ("r1", 0.8)]), &lookup).unwrap();
        assert_eq!(d.best_ref_id.as_deref(), Some("r1"));
    }

    #[test]
    fn exhaustive_baseline_counts_every_pair() {
        let v = Verifier::new(FieldWeights::default(), 0.75).unwrap();
        let refs: Vec<Record> = (0..20).map(|i| record(&format!("r{i:02}"), ["u", "e", "d", "s", "x"])).collect();
        let q = record("q", ["u", "e", "d", "s", "x"]);
        let d = v.best_of_all(&q, &refs);
        assert_eq!(d.best_ref_id.as_deref(), Some("r00"));
        assert_eq!(v.verifications(), 20);
    }

    #[test]
    fn top1_decision() {
        let d = accept_top1(&candidates(&[("r1", 0.7), ("r2", 0.6)]));
        assert!(d.accepted);
        assert_eq!(d.best_ref_id.as_deref(), Some("r1"));
        assert!(!accept_top1(&candidates(&[])).accepted);
    }

    #[test]
    fn decision_json_shape() {
        let v = Verifier::new(FieldWeights::default(), 0.75).unwrap();
        let q = record("q1", ["a", "b", "c", "d", "e"]);
        let refs = vec![record("r1", ["a", "b", "c", "d", "e"])];
        let d = v.reconsider(&q, &candidates(&[("r1", 1.0)]), &ref_lookup(&refs)).unwrap();
        assert_eq!(
            serde_json::to_string(&d).unwrap(),
            r#"{"query_id":"q1","best_ref_id":"r1","score":1.0,"accepted":true,"per_field":{"email":1.0,"username":1.0,"domain":1.0,"servername":1.0,"status":1.0}}"#
        );
        let none = v.reconsider(&q, &CandidateSet::empty("q1"), &ref_lookup(&refs)).unwrap();
        assert!(serde_json::to_string(&none).unwrap().contains(r#""best_ref_id":null"#));
    }

    fn short() -> impl Strategy<Value = String> {
        "[abcAB é]{0,8}"
    }

    fn five() -> impl Strategy<Value = [String; 5]> {
        proptest::array::uniform5(short())
    }

    fn rec(id: &str, v: &[String; 5]) -> Record {
        record(id, [&v[0], &v[1], &v[2], &v[3], &v[4]])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn levenshtein_matches_oracle_and_is_a_metric(a in short(), b in short(), c in short()) {
            let ab = levenshtein(&a, &b);
            prop_assert_eq!(ab, dp_oracle(&a, &b));
            prop_assert_eq!(ab, levenshtein(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
        }

        #[test]
        fn similarity_bounded_and_symmetric(a in short(), b in short()) {
            let s = similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, similarity(&b, &a));
        }

        #[test]
        fn composite_is_weighted_sum(a in five(), b in five()) {
            let w = FieldWeights::default();
            let c = composite_score(&rec("a", &a), &rec("b", &b), &w);
            prop_assert!((0.0..=1.0).contains(&c.score));
            let manual: f64 = w.entries().iter().map(|&(f, wi)| wi * similarity(
                &normalize_field(f, rec("a", &a).get(f)),
                &normalize_field(f, rec("b", &b).get(f)),
            )).sum();
            prop_assert!((c.score - manual).abs() < 1e-9);
        }

        #[test]
        fn composite_monotone_in_each_field(a in five(), b in five(), field in 0usize..5) {
            // Replacing one field of b with a's value raises that field's similarity to 1.
            let w = FieldWeights::default();
            let f = Field::ALL[field];
            let before = composite_score(&rec("a", &a), &rec("b", &b), &w).score;
            let mut improved = rec("b", &b);
            improved.set(f, rec("a", &a).get(f));
            let after = composite_score(&rec("a", &a), &improved, &w).score;
            prop_assert!(after + 1e-12 >= before);
        }

        #[test]
        fn argmax_invariant_under_weight_rescaling(
            q in five(),
            cands in proptest::collection::vec(five(), 1..6),
            scale in 0.1f64..10.0,
        ) {
            let refs: Vec<Record> = cands.iter().enumerate().map(|(i, c)| rec(&format!("r{i}"), c)).collect();
            let set = CandidateSet {
                query_id: "q".into(),
                neighbors: refs.iter().map(|r| Neighbor { ref_id: r.id.clone(), similarity: 0.5 }).collect(),
            };
            let lookup = ref_lookup(&refs);
            let base = Verifier::new(FieldWeights::default(), 0.5).unwrap();
            let scaled_w = FieldWeights::normalized(
                FieldWeights::default().entries().iter().map(|&(f, w)| (f, w * scale)).collect(),
            ).unwrap();
            let scaled = Verifier::new(scaled_w, 0.5).unwrap();
            let query = rec("q", &q);
            let d1 = base.reconsider(&query, &set, &lookup).unwrap();
            let d2 = scaled.reconsider(&query, &set, &lookup).unwrap();
            // Rescaling may perturb the last ulp; require the same winner unless scores tie within rounding.
            if d1.best_ref_id != d2.best_ref_id {
                let s1 = composite_score(&query, lookup[d1.best_ref_id.as_deref().unwrap()], base.weights()).score;
                let s2 = composite_score(&query, lookup[d2.best_ref_id.as_deref().unwrap()], base.weights()).score;
                prop_assert!((s1 - s2).abs() < 1e-12);
            }
        }
    }
}
