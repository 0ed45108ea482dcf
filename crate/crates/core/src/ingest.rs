//! Corpus record files, cross-corpus scaling, source merging and verb
//! selection.
//!
//! Two count-based corpora report matched occurrences per year. The third
//! source only reports relative frequencies, so its values are put on the
//! count scale with a constant `C = f_C / f_G` estimated over the years where
//! it overlaps a count source, and then turned into pseudo-counts with a
//! fixed yearly volume.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};

pub const COUNT_HEADER: &str = "verb\tvariant\tyear\tcount\tsource";
pub const REL_FREQ_HEADER: &str = "verb\tvariant\tyear\trel_freq\tsource";
/// Source label written for relative-frequency rows.
pub const RATIO_SOURCE_LABEL: &str = "GBOOKS";

/// Auxiliary of the periphrasis. `Have` is the incoming variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    Be,
    Have,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Be => "BE",
            Variant::Have => "HAVE",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "BE" => Ok(Variant::Be),
            "HAVE" => Ok(Variant::Have),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// Origin of a count record. Declaration order is chronological and is the
/// tie-break order used when sorting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    Eebo,
    GbooksScaled,
    Coha,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Eebo => "EEBO",
            Source::GbooksScaled => "GBOOKS_SCALED",
            Source::Coha => "COHA",
        })
    }
}

impl FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "EEBO" => Ok(Source::Eebo),
            "GBOOKS_SCALED" => Ok(Source::GbooksScaled),
            "COHA" => Ok(Source::Coha),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountRecord {
    pub verb: String,
    pub variant: Variant,
    pub year: i32,
    pub count: u64,
    pub source: Source,
}

impl CountRecord {
    pub fn new(verb: &str, variant: Variant, year: i32, count: u64, source: Source) -> Self {
        CountRecord { verb: verb.to_string(), variant, year, count, source }
    }

    fn sort_key(&self) -> (&str, i32, Variant, Source, u64) {
        (&self.verb, self.year, self.variant, self.source, self.count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelFreqRecord {
    pub verb: String,
    pub variant: Variant,
    pub year: i32,
    pub rel_freq: f64,
}

impl RelFreqRecord {
    pub fn new(verb: &str, variant: Variant, year: i32, rel_freq: f64) -> Self {
        RelFreqRecord { verb: verb.to_string(), variant, year, rel_freq }
    }
}

/// Inclusive year interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub const fn new(start: i32, end: i32) -> Self {
        YearRange { start, end }
    }

    pub fn contains(&self, year: i32) -> bool {
        self.start <= year && year <= self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

impl FromStr for YearRange {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        // allow a leading minus on the first year
        let split = s[1..].find('-').map(|i| i + 1);
        let (a, b) = match split {
            Some(i) => (&s[..i], &s[i + 1..]),
            None => return Err(format!("year range `{s}` is not of the form START-END")),
        };
        let start = a.trim().parse().map_err(|_| format!("bad start year in `{s}`"))?;
        let end = b.trim().parse().map_err(|_| format!("bad end year in `{s}`"))?;
        Ok(YearRange { start, end })
    }
}

/// Whether malformed rows abort a load or are skipped and reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    /// Rows skipped in lenient mode.
    pub rejected: Vec<RowError>,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_table<T>(
    text: &str,
    path: &Path,
    header: &str,
    strictness: Strictness,
    mut parse_row: impl FnMut(&[&str]) -> Result<T, String>,
) -> Result<Loaded<T>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == header => {}
        _ => return Err(Error::Header { path: path.to_path_buf(), expected: header.to_string() }),
    }
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = if fields.len() != 5 {
            Err(format!("expected 5 fields, found {}", fields.len()))
        } else {
            parse_row(&fields)
        };
        match parsed {
            Ok(r) => records.push(r),
            Err(message) => rejected.push(RowError { line: i + 1, message }),
        }
    }
    if strictness == Strictness::Strict && !rejected.is_empty() {
        return Err(Error::Load { path: path.to_path_buf(), rows: rejected });
    }
    Ok(Loaded { records, rejected })
}

fn parse_verb(s: &str) -> Result<String, String> {
    let v = s.trim();
    if v.is_empty() {
        return Err("empty verb".into());
    }
    Ok(v.to_lowercase())
}

fn parse_year(s: &str) -> Result<i32, String> {
    s.trim().parse().map_err(|_| format!("malformed year `{s}`"))
}

/// Parse count TSV text. `origin` is only used in diagnostics.
pub fn parse_counts(text: &str, origin: &Path, strictness: Strictness) -> Result<Loaded<CountRecord>> {
    let mut loaded = parse_table(text, origin, COUNT_HEADER, strictness, |f| {
        let count: i64 = f[3].trim().parse().map_err(|_| format!("malformed count `{}`", f[3]))?;
        if count < 0 {
            return Err(format!("negative count {count}"));
        }
        Ok(CountRecord {
            verb: parse_verb(f[0])?,
            variant: f[1].trim().parse()?,
            year: parse_year(f[2])?,
            count: count as u64,
            source: f[4].trim().parse()?,
        })
    })?;
    sort_counts(&mut loaded.records);
    Ok(loaded)
}

pub fn load_counts(path: impl AsRef<Path>, strictness: Strictness) -> Result<Loaded<CountRecord>> {
    let path = path.as_ref();
    parse_counts(&read_file(path)?, path, strictness)
}

/// Canonical record order: verb, year, variant, source.
pub fn sort_counts(records: &mut [CountRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn write_counts(records: &[CountRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_counts(&mut sorted);
    let mut out = String::from(COUNT_HEADER);
    out.push('\n');
    for r in &sorted {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.verb, r.variant, r.year, r.count, r.source).unwrap();
    }
    out
}

pub fn parse_rel_freqs(text: &str, origin: &Path, strictness: Strictness) -> Result<Loaded<RelFreqRecord>> {
    let mut loaded = parse_table(text, origin, REL_FREQ_HEADER, strictness, |f| {
        let rel_freq: f64 = f[3].trim().parse().map_err(|_| format!("malformed rel_freq `{}`", f[3]))?;
        if !(rel_freq >= 0.0) || !rel_freq.is_finite() {
            return Err(format!("rel_freq must be finite and non-negative, got {rel_freq}"));
        }
        Ok(RelFreqRecord {
            verb: parse_verb(f[0])?,
            variant: f[1].trim().parse()?,
            year: parse_year(f[2])?,
            rel_freq,
        })
    })?;
    sort_rel_freqs(&mut loaded.records);
    Ok(loaded)
}

pub fn load_rel_freqs(path: impl AsRef<Path>, strictness: Strictness) -> Result<Loaded<RelFreqRecord>> {
    let path = path.as_ref();
    parse_rel_freqs(&read_file(path)?, path, strictness)
}

pub fn sort_rel_freqs(records: &mut [RelFreqRecord]) {
    records.sort_by(|a, b| {
        (&a.verb, a.year, a.variant)
            .cmp(&(&b.verb, b.year, b.variant))
            .then(a.rel_freq.total_cmp(&b.rel_freq))
    });
}

pub fn write_rel_freqs(records: &[RelFreqRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_rel_freqs(&mut sorted);
    let mut out = String::from(REL_FREQ_HEADER);
    out.push('\n');
    for r in &sorted {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.verb, r.variant, r.year, r.rel_freq, RATIO_SOURCE_LABEL).unwrap();
    }
    out
}

/// One lowercase lemma per line; `#` starts a comment.
pub fn parse_intransitive(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}

pub fn load_intransitive(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let path = path.as_ref();
    Ok(parse_intransitive(&read_file(path)?))
}

/// How the mean frequencies behind the scaling constant are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ScalingMode {
    /// Sum all verbs within a year, then average over years.
    #[default]
    #[serde(rename = "pooled")]
    PooledPerYear,
    /// Average each verb over years, then average over verbs.
    #[serde(rename = "per-verb")]
    PerVerb,
}

impl FromStr for ScalingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pooled" => Ok(ScalingMode::PooledPerYear),
            "per-verb" => Ok(ScalingMode::PerVerb),
            other => Err(format!("unknown scaling mode `{other}` (pooled | per-verb)")),
        }
    }
}

impl fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingMode::PooledPerYear => "pooled",
            ScalingMode::PerVerb => "per-verb",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingEstimate {
    /// `f_count_source / f_ratio_source`.
    pub constant: f64,
    pub overlap_range: YearRange,
    pub f_count_source: f64,
    pub f_ratio_source: f64,
    pub n_years_used: usize,
    /// Mean yearly total of tracked tokens in the count source over the
    /// years used; converts scaled frequencies to pseudo-counts.
    pub volume_proxy: f64,
    pub mode: ScalingMode,
}

/// Estimate `C = f_C / f_G` over `overlap`.
///
/// Count-source frequencies are per-year counts divided by that year's total
/// of tracked tokens (all verbs, both variants). Only years where both
/// sources have data, and only verbs present in both, enter the means.
pub fn estimate_scaling_constant(
    count_src: &[CountRecord],
    ratio_src: &[RelFreqRecord],
    overlap: YearRange,
    mode: ScalingMode,
) -> Result<ScalingEstimate> {
    if overlap.is_empty() {
        return Err(Error::Scaling(format!("empty overlap range {overlap}")));
    }
    let count_verbs: BTreeSet<&str> = count_src
        .iter()
        .filter(|r| overlap.contains(r.year))
        .map(|r| r.verb.as_str())
        .collect();
    let ratio_verbs: BTreeSet<&str> = ratio_src
        .iter()
        .filter(|r| overlap.contains(r.year))
        .map(|r| r.verb.as_str())
        .collect();
    let shared: BTreeSet<&str> = count_verbs.intersection(&ratio_verbs).copied().collect();

    // year -> total tracked tokens, and (year, verb) -> count / rel_freq
    let mut totals: BTreeMap<i32, u64> = BTreeMap::new();
    let mut counts: BTreeMap<(i32, &str), u64> = BTreeMap::new();
    for r in count_src.iter().filter(|r| overlap.contains(r.year) && shared.contains(r.verb.as_str())) {
        *totals.entry(r.year).or_default() += r.count;
        *counts.entry((r.year, r.verb.as_str())).or_default() += r.count;
    }
    let mut ratios: BTreeMap<(i32, &str), f64> = BTreeMap::new();
    for r in ratio_src.iter().filter(|r| overlap.contains(r.year) && shared.contains(r.verb.as_str())) {
        *ratios.entry((r.year, r.verb.as_str())).or_default() += r.rel_freq;
    }
    let ratio_years: BTreeSet<i32> = ratios.keys().map(|&(y, _)| y).collect();
    let years: Vec<i32> = totals
        .iter()
        .filter(|&(y, &t)| t > 0 && ratio_years.contains(y))
        .map(|(&y, _)| y)
        .collect();
    if years.is_empty() {
        return Err(Error::Scaling(format!("no year in {overlap} has data in both sources")));
    }

    let (f_c, f_g) = match mode {
        ScalingMode::PooledPerYear => {
            let mut sum_c = 0.0;
            let mut sum_g = 0.0;
            for &y in &years {
                let total = totals[&y] as f64;
                sum_c += counts.range((y, "")..).take_while(|(k, _)| k.0 == y).map(|(_, &c)| c as f64 / total).sum::<f64>();
                sum_g += ratios.range((y, "")..).take_while(|(k, _)| k.0 == y).map(|(_, &g)| g).sum::<f64>();
            }
            let n = years.len() as f64;
            (sum_c / n, sum_g / n)
        }
        ScalingMode::PerVerb => {
            let mut per_c = 0.0;
            let mut per_g = 0.0;
            let mut verbs = 0usize;
            for &v in &shared {
                let mut c = 0.0;
                let mut g = 0.0;
                for &y in &years {
                    c += counts.get(&(y, v)).copied().unwrap_or(0) as f64 / totals[&y] as f64;
                    g += ratios.get(&(y, v)).copied().unwrap_or(0.0);
                }
                per_c += c / years.len() as f64;
                per_g += g / years.len() as f64;
                verbs += 1;
            }
            (per_c / verbs as f64, per_g / verbs as f64)
        }
    };
    if !(f_g > 0.0) {
        return Err(Error::Scaling("mean ratio-source frequency is zero".into()));
    }
    let volume_proxy = years.iter().map(|y| totals[y] as f64).sum::<f64>() / years.len() as f64;
    Ok(ScalingEstimate {
        constant: f_c / f_g,
        overlap_range: overlap,
        f_count_source: f_c,
        f_ratio_source: f_g,
        n_years_used: years.len(),
        volume_proxy,
        mode,
    })
}

/// Pseudo-counts `round(rel_freq * C * volume_proxy)` for rows inside
/// `keep_range`, rounded half away from zero.
pub fn scale_to_counts(
    ratio_src: &[RelFreqRecord],
    est: &ScalingEstimate,
    keep_range: YearRange,
) -> Result<Vec<CountRecord>> {
    if !(est.constant > 0.0) || !est.constant.is_finite() {
        return Err(Error::Parameter(format!("scaling constant must be positive, got {}", est.constant)));
    }
    if !(est.volume_proxy >= 0.0) {
        return Err(Error::Parameter("volume proxy must be non-negative".into()));
    }
    let factor = est.constant * est.volume_proxy;
    let mut out: Vec<CountRecord> = ratio_src
        .iter()
        .filter(|r| keep_range.contains(r.year))
        .map(|r| CountRecord {
            verb: r.verb.clone(),
            variant: r.variant,
            year: r.year,
            count: (r.rel_freq * factor).round() as u64,
            source: Source::GbooksScaled,
        })
        .collect();
    sort_counts(&mut out);
    Ok(out)
}

/// Year span each source contributes to a merged stream. Spans must be
/// disjoint and in chronological order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRanges {
    pub eebo: YearRange,
    pub gbooks: YearRange,
    pub coha: YearRange,
}

impl Default for SourceRanges {
    fn default() -> Self {
        SourceRanges {
            eebo: YearRange::new(1473, 1700),
            gbooks: YearRange::new(1701, 1809),
            coha: YearRange::new(1810, 2009),
        }
    }
}

impl SourceRanges {
    pub fn validate(&self) -> Result<()> {
        let spans = [self.eebo, self.gbooks, self.coha];
        if spans.iter().any(|r| r.is_empty()) {
            return Err(Error::Config("source year ranges must be nonempty".into()));
        }
        if !(self.eebo.end < self.gbooks.start && self.gbooks.end < self.coha.start) {
            return Err(Error::Config(format!(
                "source ranges must be disjoint and ordered: EEBO {} < GBOOKS {} < COHA {}",
                self.eebo, self.gbooks, self.coha
            )));
        }
        Ok(())
    }

    pub fn for_source(&self, source: Source) -> YearRange {
        match source {
            Source::Eebo => self.eebo,
            Source::GbooksScaled => self.gbooks,
            Source::Coha => self.coha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Merged {
    pub records: Vec<CountRecord>,
    /// Rows outside their source's span.
    pub dropped: usize,
}

/// Concatenate the three sources, keeping each row only inside its own
/// source's span, and sort canonically.
pub fn merge_sources(
    eebo: &[CountRecord],
    gbooks_scaled: &[CountRecord],
    coha: &[CountRecord],
    ranges: &SourceRanges,
) -> Merged {
    let mut records = Vec::with_capacity(eebo.len() + gbooks_scaled.len() + coha.len());
    let mut dropped = 0;
    for (rows, source) in [(eebo, Source::Eebo), (gbooks_scaled, Source::GbooksScaled), (coha, Source::Coha)] {
        let span = ranges.for_source(source);
        for r in rows {
            if span.contains(r.year) {
                records.push(CountRecord { source, ..r.clone() });
            } else {
                dropped += 1;
            }
        }
    }
    sort_counts(&mut records);
    Merged { records, dropped }
}

/// Per-source record sets as seen by verb selection.
#[derive(Debug, Clone, Copy)]
pub struct SourceSets<'a> {
    pub eebo: &'a [CountRecord],
    pub gbooks: &'a [CountRecord],
    pub coha: &'a [CountRecord],
}

fn totals_by_verb(records: &[CountRecord]) -> BTreeMap<&str, u64> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.verb.as_str()).or_default() += r.count;
    }
    m
}

/// Share of BE among a verb's records, `None` if it has no tokens.
pub fn be_share(records: &[CountRecord], verb: &str) -> Option<f64> {
    let (mut be, mut total) = (0u64, 0u64);
    for r in records.iter().filter(|r| r.verb == verb) {
        total += r.count;
        if r.variant == Variant::Be {
            be += r.count;
        }
    }
    (total > 0).then(|| be as f64 / total as f64)
}

/// Verbs on the intransitive list that occur more than `min_count` times in
/// every source and whose BE share in the earliest corpus is at least
/// `min_be_share`. Sorted alphabetically.
pub fn select_target_verbs(
    sources: SourceSets<'_>,
    intransitive: &BTreeSet<String>,
    min_count: u64,
    min_be_share: f64,
) -> Result<Vec<String>> {
    if intransitive.is_empty() {
        return Err(Error::Config("intransitive verb list is empty".into()));
    }
    if min_count < 1 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&min_be_share) {
        return Err(Error::Config(format!("min_be_share {min_be_share} outside [0, 1]")));
    }
    let per_source = [totals_by_verb(sources.eebo), totals_by_verb(sources.gbooks), totals_by_verb(sources.coha)];
    Ok(intransitive
        .iter()
        .filter(|v| per_source.iter().all(|t| t.get(v.as_str()).copied().unwrap_or(0) > min_count))
        .filter(|v| be_share(sources.eebo, v).is_some_and(|share| share >= min_be_share))
        .cloned()
        .collect())
}
