//! Labeled links: exhaustive cosine-threshold pairing and a seeded synthetic corpus.

mod vocab;

use std::collections::HashSet;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingBatch;
use crate::index::dot;
use crate::record::{Field, Record, Source};

/// Similarity a pair must exceed to be linked by [`brute_force_pairs`].
pub const DEFAULT_TRUTH_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum GroundTruthError {
    #[error("dimension mismatch: source has {source_dim}, reference has {reference_dim}")]
    DimensionMismatch { source_dim: usize, reference_dim: usize },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("malformed truth file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundTruthPair {
    pub query_id: String,
    pub ref_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForcePairs {
    pub pairs: Vec<GroundTruthPair>,
    /// Similarity evaluations performed; always `n * m`.
    pub comparisons: u64,
}

/// Links every source row to its most similar reference row when that
/// similarity exceeds `threshold`. Ties go to the smaller reference id.
pub fn brute_force_pairs(
    src: &EmbeddingBatch,
    refs: &EmbeddingBatch,
    threshold: f64,
) -> Result<BruteForcePairs, GroundTruthError> {
    if !(threshold > -1.0 && threshold <= 1.0) {
        return Err(GroundTruthError::InvalidSpec(format!(
            "threshold {threshold} must be within (-1, 1]"
        )));
    }
    if !src.is_empty() && !refs.is_empty() && src.dim() != refs.dim() {
        return Err(GroundTruthError::DimensionMismatch {
            source_dim: src.dim(),
            reference_dim: refs.dim(),
        });
    }
    let comparisons = AtomicU64::new(0);
    let src_rows: Vec<(&str, &[f32])> = src.rows().collect();
    let pairs = src_rows
        .into_par_iter()
        .filter_map(|(qid, q)| {
            let mut best: Option<(f32, &str)> = None;
            for (rid, r) in refs.rows() {
                let s = dot(q, r);
                let better = match best {
                    None => true,
                    Some((bs, bid)) => s > bs || (s == bs && rid < bid),
                };
                if better {
                    best = Some((s, rid));
                }
            }
            comparisons.fetch_add(refs.len() as u64, Ordering::Relaxed);
            best.filter(|&(s, _)| f64::from(s) > threshold).map(|(_, rid)| GroundTruthPair {
                query_id: qid.to_owned(),
                ref_id: rid.to_owned(),
            })
        })
        .collect();
    Ok(BruteForcePairs {
        pairs,
        comparisons: comparisons.into_inner(),
    })
}

/// Per-field corruption applied to query copies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Mean number of random character edits per field (Poisson), in `[0, 2]`.
    pub typo_rate: f64,
    pub field_drop_rate: f64,
    pub case_flip_rate: f64,
    pub swap_adjacent_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none(seed: u64) -> Self {
        Self {
            typo_rate: 0.0,
            field_drop_rate: 0.0,
            case_flip_rate: 0.0,
            swap_adjacent_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GroundTruthError> {
        let bad = |name: &str, v: f64, hi: f64| {
            GroundTruthError::InvalidSpec(format!("{name} = {v} is outside [0, {hi}]"))
        };
        if !(0.0..=2.0).contains(&self.typo_rate) {
            return Err(bad("typo_rate", self.typo_rate, 2.0));
        }
        for (name, v) in [
            ("field_drop_rate", self.field_drop_rate),
            ("case_flip_rate", self.case_flip_rate),
            ("swap_adjacent_rate", self.swap_adjacent_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(name, v, 1.0));
            }
        }
        Ok(())
    }
}

/// Corrupts each field independently: drop, Poisson-many character edits,
/// an adjacent swap, then a single case flip. The id is never changed.
pub fn apply_noise<R: Rng + ?Sized>(record: &Record, noise: &NoiseSpec, rng: &mut R) -> Record {
    let poisson = (noise.typo_rate > 0.0).then(|| Poisson::new(noise.typo_rate).expect("positive rate"));
    let mut out = record.clone();
    for f in Field::ALL {
        if noise.field_drop_rate > 0.0 && rng.gen_bool(noise.field_drop_rate) {
            out.set(f, "");
            continue;
        }
        let mut chars: Vec<char> = record.get(f).chars().collect();
        if let Some(p) = &poisson {
            let edits = p.sample(rng) as usize;
            for _ in 0..edits {
                random_edit(&mut chars, rng);
            }
        }
        if noise.swap_adjacent_rate > 0.0 && rng.gen_bool(noise.swap_adjacent_rate) && chars.len() >= 2 {
            let i = rng.gen_range(0..chars.len() - 1);
            chars.swap(i, i + 1);
        }
        if noise.case_flip_rate > 0.0 && rng.gen_bool(noise.case_flip_rate) {
            let letters: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_alphabetic()).collect();
            if let Some(&i) = letters.choose(rng) {
                let c = chars[i];
                let flipped: Vec<char> = if c.is_uppercase() {
                    c.to_lowercase().collect()
                } else {
                    c.to_uppercase().collect()
                };
                if flipped.len() == 1 {
                    chars[i] = flipped[0];
                }
            }
        }
        out.set(f, chars.into_iter().collect::<String>());
    }
    out
}

fn random_char<R: Rng + ?Sized>(rng: &mut R) -> char {
    *vocab::NOISE_ALPHABET.choose(rng).expect("non-empty alphabet") as char
}

fn random_edit<R: Rng + ?Sized>(chars: &mut Vec<char>, rng: &mut R) {
    let op = if chars.is_empty() { 0 } else { rng.gen_range(0..3) };
    match op {
        0 => {
            let at = rng.gen_range(0..=chars.len());
            chars.insert(at, random_char(rng));
        }
        1 => {
            let at = rng.gen_range(0..chars.len());
            chars.remove(at);
        }
        _ => {
            let at = rng.gen_range(0..chars.len());
            let old = chars[at].to_ascii_lowercase();
            let mut c = random_char(rng);
            while c == old {
                c = random_char(rng);
            }
            chars[at] = c;
        }
    }
}

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    /// Reference records.
    pub m: usize,
    /// Linked queries, each a noisy copy of a distinct reference.
    pub n: usize,
    /// Extra unlinked queries, as a fraction of `n`.
    pub distractor_rate: f64,
    pub noise: NoiseSpec,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), GroundTruthError> {
        if self.m == 0 {
            return Err(GroundTruthError::InvalidSpec("m must be at least 1".into()));
        }
        if self.n > self.m {
            return Err(GroundTruthError::InvalidSpec(format!(
                "n = {} exceeds m = {}",
                self.n, self.m
            )));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(GroundTruthError::InvalidSpec(format!(
                "distractor_rate = {} is outside [0, 1]",
                self.distractor_rate
            )));
        }
        self.noise.validate()
    }

    pub fn distractors(&self) -> usize {
        (self.distractor_rate * self.n as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub refs: Vec<Record>,
    pub queries: Vec<Record>,
    pub truth: Vec<GroundTruthPair>,
}

/// Deterministically generates references, noisy linked queries, unlinked
/// distractor queries and the truth links, all from `spec.noise.seed`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus, GroundTruthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.noise.seed);
    let mut gen = EntityGenerator::default();

    let refs: Vec<Record> = (0..spec.m)
        .map(|i| gen.entity(format!("r{i:07}"), Source::Reference, &mut rng))
        .collect();

    let sampled = rand::seq::index::sample(&mut rng, spec.m, spec.n);
    let mut pending: Vec<(Record, Option<String>)> = sampled
        .iter()
        .map(|i| {
            let mut q = apply_noise(&refs[i], &spec.noise, &mut rng);
            q.source = Source::Query;
            (q, Some(refs[i].id.clone()))
        })
        .collect();
    for _ in 0..spec.distractors() {
        let fresh = gen.entity(String::new(), Source::Query, &mut rng);
        pending.push((apply_noise(&fresh, &spec.noise, &mut rng), None));
    }
    pending.shuffle(&mut rng);

    let mut queries = Vec::with_capacity(pending.len());
    let mut truth = Vec::with_capacity(spec.n);
    for (i, (mut q, link)) in pending.into_iter().enumerate() {
        q.id = format!("q{i:07}");
        if let Some(ref_id) = link {
            truth.push(GroundTruthPair {
                query_id: q.id.clone(),
                ref_id,
            });
        }
        queries.push(q);
    }
    Ok(Corpus { refs, queries, truth })
}

/// Produces entities whose username, email and domain are unique across the corpus.
#[derive(Default)]
struct EntityGenerator {
    usernames: HashSet<String>,
    emails: HashSet<String>,
    domains: HashSet<String>,
}

impl EntityGenerator {
    fn entity<R: Rng>(&mut self, id: String, source: Source, rng: &mut R) -> Record {
        use vocab::*;
        let pick = |rng: &mut R, list: &[&'static str]| -> &'static str { list[rng.gen_range(0..list.len())] };

        let first = pick(rng, FIRST_NAMES);
        let last = pick(rng, LAST_NAMES);
        let initial = &first[..1];

        let username = unique(&mut self.usernames, rng, |rng| {
            let num = rng.gen_range(1..10_000);
            let base = match rng.gen_range(0..6) {
                0 => format!("{first}{last}"),
                1 => format!("{initial}{last}{num}"),
                2 => format!("{first}{num}"),
                3 => format!("{last}{initial}{}", num % 100),
                4 => format!("{first}_{last}{}", num % 1000),
                _ => format!("{first}{}{last}", &last[..1]),
            };
            if rng.gen_bool(0.25) {
                capitalize(&base)
            } else {
                base
            }
        });

        let domain = unique(&mut self.domains, rng, |rng| {
            let w1 = pick(rng, WORDS);
            let w2 = pick(rng, WORDS);
            let tld = pick(rng, TLDS);
            match rng.gen_range(0..5) {
                0 => format!("{w1}{w2}.{tld}"),
                1 => format!("{last}{w1}.{tld}"),
                2 => format!("{w1}-{w2}.{tld}"),
                3 => format!("{first}{last}.{tld}"),
                _ => format!("{w1}{}.{tld}", rng.gen_range(1..1000)),
            }
        });

        let email = unique(&mut self.emails, rng, |rng| {
            let num = rng.gen_range(1..1000);
            let local = match rng.gen_range(0..4) {
                0 => format!("{first}.{last}"),
                1 => format!("{first}{num}"),
                2 => format!("{initial}{last}{num}"),
                _ => format!("{last}.{first}{}", num % 100),
            };
            if rng.gen_bool(0.3) {
                format!("{local}@{domain}")
            } else {
                format!("{local}@{}", pick(rng, MAIL_PROVIDERS))
            }
        });

        let servername = format!("server{}", rng.gen_range(1..=300));
        let total: u32 = STATUSES.iter().map(|s| s.1).sum();
        let mut roll = rng.gen_range(0..total);
        let status = STATUSES
            .iter()
            .find(|(_, w)| {
                if roll < *w {
                    true
                } else {
                    roll -= w;
                    false
                }
            })
            .map(|s| s.0)
            .unwrap_or("Active");

        Record::new(id, source)
            .with_field(Field::Username, username)
            .with_field(Field::Email, email)
            .with_field(Field::Domain, domain)
            .with_field(Field::Servername, servername)
            .with_field(Field::Status, status)
    }
}

fn unique<R: Rng>(seen: &mut HashSet<String>, rng: &mut R, mut make: impl FnMut(&mut R) -> String) -> String {
    loop {
        let candidate = make(rng);
        if seen.insert(candidate.to_lowercase()) {
            return candidate;
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Writes `query_id,ref_id` rows with a header.
pub fn write_truth_csv<W: Write>(out: W, truth: &[GroundTruthPair]) -> Result<(), GroundTruthError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["query_id", "ref_id"]).map_err(csv_err)?;
    for p in truth {
        w.write_record([&p.query_id, &p.ref_id]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(input: R) -> Result<Vec<GroundTruthPair>, GroundTruthError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["query_id", "ref_id"] {
        return Err(GroundTruthError::Malformed(format!(
            "expected header query_id,ref_id, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> GroundTruthError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => GroundTruthError::Io(io),
            _ => unreachable!(),
        }
    } else {
        GroundTruthError::Malformed(e.to_string())
    }
}
