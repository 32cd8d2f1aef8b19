//! File-level curation with a parallel canonicalization stage.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use smited_core::curation::{canonical_form, smiles_field, CurationReport, Curator};

use crate::error::{Error, Result};

/// Lines per parallel chunk; dedup and output stay sequential.
const CHUNK: usize = 4096;

/// Curates `lines`, calling `sink` once per kept molecule in first-seen
/// order. The output does not depend on the worker count.
pub fn curate_parallel<F>(lines: &[String], mut sink: F) -> Result<CurationReport>
where
    F: FnMut(&str) -> Result<()>,
{
    let mut curator = Curator::new();
    for chunk in lines.chunks(CHUNK) {
        let stage: Vec<_> = chunk
            .par_iter()
            .map(|l| smiles_field(l).map(canonical_form))
            .collect();
        for s in stage.into_iter().flatten() {
            curator.accept(s, &mut sink)?;
        }
    }
    Ok(curator.finish())
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}

/// Reads a SMILES file, keeping the first field of each non-blank line.
pub fn read_smiles(path: &Path) -> Result<Vec<String>> {
    Ok(read_lines(path)?
        .iter()
        .filter_map(|l| smiles_field(l).map(str::to_string))
        .collect())
}

pub fn curate_file(input: &Path, output: &Path) -> Result<CurationReport> {
    let lines = read_lines(input)?;
    let f = fs::File::create(output).map_err(|e| Error::io(output, e))?;
    let mut w = BufWriter::new(f);
    let report = curate_parallel(&lines, |s| {
        writeln!(w, "{s}").map_err(|e| Error::io(output, e))
    })?;
    w.flush().map_err(|e| Error::io(output, e))?;
    Ok(report)
}

/// The plain `key=value` form of a report.
pub fn report_text(r: &CurationReport) -> String {
    let mut s = String::new();
    for (k, v) in [
        ("input_count", r.input_count),
        ("parse_failures", r.parse_failures),
        ("valence_failures", r.valence_failures),
        ("duplicates_removed", r.duplicates_removed),
        ("output_count", r.output_count),
    ] {
        writeln!(s, "{k}={v}").expect("write to string");
    }
    for (len, n) in &r.token_length_histogram {
        writeln!(s, "token_length.{len}={n}").expect("write to string");
    }
    s
}
