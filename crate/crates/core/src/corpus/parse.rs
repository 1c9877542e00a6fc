//! Line-oriented record files.
//!
//! ```text
//! ID: <string>
//! SMILES: <string>
//! INCHIKEY: <string>
//! INSTRUMENT: <string>        (optional)
//! PEAKS: <n>
//! <mz> <intensity>            (n lines)
//!
//! ID: ...
//! ```
//!
//! Records are separated by blank lines; `\r\n` endings are accepted.

use std::collections::HashSet;
use std::fmt::Write as _;

use super::record::{is_valid_inchikey, Peak, SpectrumRecord};
use super::smiles::validate_smiles;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIssue {
    /// 1-based line number of the offending line.
    pub line: usize,
    pub reason: String,
}

/// Rejected records, one entry per record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub issues: Vec<ParseIssue>,
}

impl ParseReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }

    /// `<line_number>\t<reason>` per rejected record.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in &self.issues {
            let _ = writeln!(out, "{}\t{}", i.line, i.reason);
        }
        out
    }
}

/// Parses every well-formed record in file order. Malformed records are
/// skipped and reported; the parse itself never fails.
pub fn parse_records(text: &str) -> (Vec<SpectrumRecord>, ParseReport) {
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    let mut seen = HashSet::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            flush(&mut block, &mut records, &mut report, &mut seen);
        } else {
            block.push((i + 1, line));
        }
    }
    flush(&mut block, &mut records, &mut report, &mut seen);
    (records, report)
}

/// Like [`parse_records`], but over raw bytes; invalid UTF-8 aborts.
pub fn parse_bytes(bytes: &[u8]) -> Result<(Vec<SpectrumRecord>, ParseReport)> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("record file is not UTF-8: {e}")))?;
    Ok(parse_records(text))
}

pub fn read_records(path: &std::path::Path) -> Result<(Vec<SpectrumRecord>, ParseReport)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_bytes(&bytes)
}

fn flush(
    block: &mut Vec<(usize, &str)>,
    records: &mut Vec<SpectrumRecord>,
    report: &mut ParseReport,
    seen: &mut HashSet<String>,
) {
    if block.is_empty() {
        return;
    }
    match parse_block(block) {
        Ok(rec) => {
            if seen.insert(rec.record_id.clone()) {
                records.push(rec);
            } else {
                report.issues.push(ParseIssue {
                    line: block[0].0,
                    reason: format!("duplicate record id `{}`", rec.record_id),
                });
            }
        }
        Err(issue) => report.issues.push(issue),
    }
    block.clear();
}

fn parse_block(block: &[(usize, &str)]) -> std::result::Result<SpectrumRecord, ParseIssue> {
    let first = block[0].0;
    let fail = |line: usize, reason: String| ParseIssue { line, reason };
    let mut id = None;
    let mut smiles = None;
    let mut inchikey = None;
    let mut instrument = None;
    let mut peaks = None;
    let mut idx = 0;
    while idx < block.len() {
        let (ln, line) = block[idx];
        let Some((key, value)) = line.split_once(':') else {
            return Err(fail(ln, format!("expected `KEY: value`, got `{}`", truncate(line))));
        };
        let value = value.trim();
        let slot = match key.trim() {
            "ID" => &mut id,
            "SMILES" => &mut smiles,
            "INCHIKEY" => &mut inchikey,
            "INSTRUMENT" => &mut instrument,
            "PEAKS" => {
                let n: usize = value
                    .parse()
                    .map_err(|_| fail(ln, format!("invalid peak count `{}`", truncate(value))))?;
                if n == 0 {
                    return Err(fail(ln, "record has zero peaks".into()));
                }
                let body = &block[idx + 1..];
                if body.len() < n {
                    return Err(fail(ln, format!("expected {n} peak lines, found {}", body.len())));
                }
                let mut list = Vec::with_capacity(n);
                for &(pl, pline) in &body[..n] {
                    list.push(parse_peak(pline).map_err(|r| fail(pl, r))?);
                }
                if let Some(&(extra, _)) = body.get(n) {
                    return Err(fail(extra, "unexpected line after peak list".into()));
                }
                peaks = Some((ln, list));
                break;
            }
            other => return Err(fail(ln, format!("unknown field `{}`", truncate(other)))),
        };
        if slot.is_some() {
            return Err(fail(ln, format!("repeated field `{}`", key.trim())));
        }
        *slot = Some((ln, value.to_string()));
        idx += 1;
    }
    let (_, record_id) = id.ok_or_else(|| fail(first, "missing ID".into()))?;
    if record_id.is_empty() {
        return Err(fail(first, "empty ID".into()));
    }
    let (sl, smiles) = smiles.ok_or_else(|| fail(first, "missing SMILES".into()))?;
    if !validate_smiles(&smiles) {
        return Err(fail(sl, format!("invalid SMILES `{}`", truncate(&smiles))));
    }
    let (il, inchikey) = inchikey.ok_or_else(|| fail(first, "missing INCHIKEY".into()))?;
    if !is_valid_inchikey(&inchikey) {
        return Err(fail(il, format!("malformed InChIKey `{}`", truncate(&inchikey))));
    }
    let (_, peaks) = peaks.ok_or_else(|| fail(first, "missing PEAKS".into()))?;
    Ok(SpectrumRecord {
        record_id,
        peaks,
        smiles,
        inchikey,
        instrument_tag: instrument.map(|(_, v)| v),
    })
}

fn parse_peak(line: &str) -> std::result::Result<Peak, String> {
    let mut it = line.split_whitespace();
    let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
        return Err(format!("expected `<mz> <intensity>`, got `{}`", truncate(line)));
    };
    let mz: f64 = a.parse().map_err(|_| format!("invalid m/z `{}`", truncate(a)))?;
    let intensity: f64 = b.parse().map_err(|_| format!("invalid intensity `{}`", truncate(b)))?;
    Peak::new(mz, intensity).map_err(|e| e.to_string())
}

fn truncate(s: &str) -> String {
    const MAX: usize = 40;
    if s.chars().count() <= MAX {
        s.to_string()
    } else {
        s.chars().take(MAX).chain("…".chars()).collect()
    }
}

/// Serializes records in the same format [`parse_records`] reads. Floats use
/// the shortest decimal representation that round-trips exactly.
pub fn write_records(records: &[SpectrumRecord]) -> String {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "ID: {}", r.record_id);
        let _ = writeln!(out, "SMILES: {}", r.smiles);
        let _ = writeln!(out, "INCHIKEY: {}", r.inchikey);
        if let Some(tag) = &r.instrument_tag {
            let _ = writeln!(out, "INSTRUMENT: {tag}");
        }
        let _ = writeln!(out, "PEAKS: {}", r.peaks.len());
        for p in &r.peaks {
            let _ = writeln!(out, "{} {}", p.mz, p.intensity);
        }
    }
    out
}

/// Imports a generic two-column peak table (`mz intensity` per line,
/// whitespace or comma separated, `#` comments) as one record.
pub fn import_peak_table(text: &str, record_id: &str, smiles: &str, inchikey: &str) -> Result<SpectrumRecord> {
    let mut peaks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if cols.len() != 2 {
            return Err(Error::InvalidArgument(format!("line {}: expected two columns", i + 1)));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("line {}: invalid number `{s}`", i + 1)))
        };
        peaks.push(Peak::new(parse(cols[0])?, parse(cols[1])?)?);
    }
    if peaks.is_empty() {
        return Err(Error::EmptyPeaks);
    }
    if !is_valid_inchikey(inchikey) {
        return Err(Error::MalformedInchiKey(inchikey.to_string()));
    }
    if !validate_smiles(smiles) {
        return Err(Error::InvalidArgument(format!("invalid SMILES `{smiles}`")));
    }
    Ok(SpectrumRecord {
        record_id: record_id.to_string(),
        peaks,
        smiles: smiles.to_string(),
        inchikey: inchikey.to_string(),
        instrument_tag: None,
    })
}
