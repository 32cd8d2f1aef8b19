//! Corpus curation: canonicalize, validate, deduplicate, count.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::smiles::{self, SmilesError};
use crate::tokenizer::{self, TokenizeError};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub input_count: u64,
    pub parse_failures: u64,
    pub valence_failures: u64,
    pub duplicates_removed: u64,
    pub output_count: u64,
    /// Unframed token count of each kept molecule.
    pub token_length_histogram: BTreeMap<usize, u64>,
}

impl CurationReport {
    pub fn is_conserved(&self) -> bool {
        self.input_count
            == self.output_count
                + self.parse_failures
                + self.valence_failures
                + self.duplicates_removed
    }
}

/// Why a line was dropped before deduplication.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rejection {
    Parse(SmilesError),
    Valence(SmilesError),
}

/// The pure per-line stage: parse, validate and canonicalize.
pub fn canonical_form(smiles: &str) -> Result<String, Rejection> {
    let g = smiles::parse(smiles).map_err(Rejection::Parse)?;
    smiles::canonicalize(&g).map_err(Rejection::Valence)
}

fn hash64(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Set of canonical strings keyed by a 64-bit hash; colliding hashes are
/// resolved against the stored strings.
#[derive(Debug, Default)]
pub struct Deduplicator {
    seen: BTreeMap<u64, Vec<String>>,
}

impl Deduplicator {
    /// Returns true when `canonical` was not seen before.
    pub fn insert(&mut self, canonical: &str) -> bool {
        let bucket = self.seen.entry(hash64(canonical)).or_default();
        if bucket.iter().any(|s| s == canonical) {
            return false;
        }
        bucket.push(String::from(canonical));
        true
    }

    pub fn len(&self) -> usize {
        self.seen.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Ordered dedup/write stage. Feed it per-line results in input order.
#[derive(Debug, Default)]
pub struct Curator {
    dedup: Deduplicator,
    report: CurationReport,
}

impl Curator {
    pub fn new() -> Curator {
        Curator::default()
    }

    pub fn accept<F, E>(&mut self, stage: Result<String, Rejection>, sink: &mut F) -> Result<(), E>
    where
        F: FnMut(&str) -> Result<(), E>,
    {
        self.report.input_count += 1;
        match stage {
            Err(Rejection::Parse(_)) => self.report.parse_failures += 1,
            Err(Rejection::Valence(_)) => self.report.valence_failures += 1,
            Ok(canonical) => {
                if self.dedup.insert(&canonical) {
                    sink(&canonical)?;
                    self.report.output_count += 1;
                    let len = tokenizer::tokenize(&canonical).map_or(0, |t| t.len());
                    *self.report.token_length_histogram.entry(len).or_default() += 1;
                } else {
                    self.report.duplicates_removed += 1;
                }
            }
        }
        Ok(())
    }

    pub fn finish(self) -> CurationReport {
        self.report
    }
}

/// Extracts the SMILES field of a corpus line: the first whitespace-separated
/// field, or `None` for blank lines.
pub fn smiles_field(line: &str) -> Option<&str> {
    line.split_whitespace().next()
}

/// Sequential curation. Blank lines are skipped and not counted; every other
/// line is counted once in the report.
pub fn curate<I, S, F, E>(lines: I, mut sink: F) -> Result<CurationReport, E>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
    F: FnMut(&str) -> Result<(), E>,
{
    let mut curator = Curator::new();
    for line in lines {
        if let Some(field) = smiles_field(line.as_ref()) {
            curator.accept(canonical_form(field), &mut sink)?;
        }
    }
    Ok(curator.finish())
}

/// Fraction of molecules whose framed length ([BOS] + tokens + [EOS]) is
/// strictly below `max_len`.
pub fn length_cutoff_analysis<I, S>(corpus: I, max_len: usize) -> Result<f64, TokenizeError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let (mut total, mut under) = (0u64, 0u64);
    for line in corpus {
        let Some(field) = smiles_field(line.as_ref()) else {
            continue;
        };
        total += 1;
        if tokenizer::tokenize(field)?.framed_len() < max_len {
            under += 1;
        }
    }
    if total == 0 {
        return Err(TokenizeError::EmptyCorpus);
    }
    Ok(under as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn run(lines: &[&str]) -> (Vec<String>, CurationReport) {
        let mut out = Vec::new();
        let report = curate(lines.iter(), |s: &str| {
            out.push(String::from(s));
            Ok::<(), ()>(())
        })
        .unwrap();
        (out, report)
    }

    #[test]
    fn duplicate_ethanol() {
        let (out, r) = run(&["CCO", "OCC", "C"]);
        assert_eq!(out.len(), 2);
        assert_eq!(r.duplicates_removed, 1);
        assert_eq!(r.output_count, 2);
        assert!(r.is_conserved());
        assert_eq!(out[1], "C");
    }

    #[test]
    fn invalid_inputs() {
        let (out, r) = run(&["C1CC"]);
        assert!(out.is_empty());
        assert_eq!(r.parse_failures, 1);
        let (_, r) = run(&["F=F", "", "   ", "CC name"]);
        assert_eq!(r.valence_failures, 1);
        assert_eq!(r.input_count, 2);
        assert_eq!(r.output_count, 1);
    }

    #[test]
    fn histogram_counts_kept_tokens() {
        let (_, r) = run(&["CCO", "C", "CCl"]);
        assert_eq!(r.token_length_histogram.get(&3), Some(&1));
        assert_eq!(r.token_length_histogram.get(&2), Some(&1));
        assert_eq!(r.token_length_histogram.get(&1), Some(&1));
    }

    #[test]
    fn multi_component_sorted() {
        let (out, r) = run(&["[Na+].[Cl-]", "[Cl-].[Na+]"]);
        assert_eq!(out, vec![String::from("[Cl-].[Na+]")]);
        assert_eq!(r.duplicates_removed, 1);
    }

    #[test]
    fn cutoff_fraction() {
        assert_eq!(length_cutoff_analysis(["C", "N", "O"], 202).unwrap(), 1.0);
        assert_eq!(length_cutoff_analysis(["C", "CC"], 2).unwrap(), 0.0);
        assert_eq!(length_cutoff_analysis(["C", "CC"], 4).unwrap(), 0.5);
        assert_eq!(
            length_cutoff_analysis(Vec::<&str>::new(), 4),
            Err(TokenizeError::EmptyCorpus)
        );
    }

    #[test]
    fn dedup_collision_bucket() {
        let mut d = Deduplicator::default();
        assert!(d.insert("CCO"));
        assert!(!d.insert("CCO"));
        assert!(d.insert("CCN"));
        assert_eq!(d.len(), 2);
    }
}
