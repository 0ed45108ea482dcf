//! Equal-count binning of a verb's token stream into a short frequency
//! series.
//!
//! Tokens are ordered by year and cut into `B = max(2, round(ln N))`
//! contiguous groups of roughly `N / B` tokens. All tokens of one year stay
//! in the same bin, so each cut is moved to the year break closest to its
//! ideal position. A bin is summarised by the lower median of its token
//! years, its share of HAVE tokens and its size.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CountRecord, Variant};

pub const SERIES_HEADER: &str = "verb\tbin_index\tmedian_year\tfreq_have\tbin_size";

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSeries {
    pub verb: String,
    /// Median token year of each bin.
    pub times: Vec<f64>,
    /// Share of HAVE tokens in each bin.
    pub freq_have: Vec<f64>,
    pub bin_sizes: Vec<u64>,
    pub total_tokens: u64,
    /// All tokens fell in a single year; the series has one bin.
    pub degenerate: bool,
}

impl BinnedSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Build a series from explicit points, e.g. a subsampled simulation.
    pub fn from_points(verb: &str, times: Vec<f64>, freq_have: Vec<f64>, bin_sizes: Vec<u64>) -> Result<Self> {
        if times.len() != freq_have.len() || times.len() != bin_sizes.len() {
            return Err(Error::Parameter("series columns differ in length".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Parameter("series times must be non-decreasing".into()));
        }
        if freq_have.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Parameter("series frequencies must lie in [0, 1]".into()));
        }
        let total_tokens = bin_sizes.iter().sum();
        Ok(BinnedSeries { verb: verb.to_string(), times, freq_have, bin_sizes, total_tokens, degenerate: false })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(SERIES_HEADER);
        out.push('\n');
        self.write_rows(&mut out);
        out
    }

    pub(crate) fn write_rows(&self, out: &mut String) {
        for i in 0..self.len() {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", self.verb, i, self.times[i], self.freq_have[i], self.bin_sizes[i]).unwrap();
        }
    }
}

/// Several series in one table, under a single header.
pub fn series_to_tsv(series: &[BinnedSeries]) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for s in series {
        s.write_rows(&mut out);
    }
    out
}

/// Parse a series TSV holding one or more verbs. Series are returned in
/// order of first appearance, rows ordered by bin index.
pub fn parse_series(text: &str) -> Result<Vec<BinnedSeries>> {
    let mut lines = text.lines();
    if lines.next().map(|h| h.trim_end_matches('\r')) != Some(SERIES_HEADER) {
        return Err(Error::Format(format!("series file must start with `{SERIES_HEADER}`")));
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(usize, f64, f64, u64)>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("series line {}: {what}", i + 2));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let idx = f[1].parse().map_err(|_| bad("bad bin_index"))?;
        let t = f[2].parse().map_err(|_| bad("bad median_year"))?;
        let x = f[3].parse().map_err(|_| bad("bad freq_have"))?;
        let n = f[4].parse().map_err(|_| bad("bad bin_size"))?;
        if !rows.contains_key(f[0]) {
            order.push(f[0].to_string());
        }
        rows.entry(f[0].to_string()).or_default().push((idx, t, x, n));
    }
    order
        .into_iter()
        .map(|verb| {
            let mut r = rows.remove(&verb).unwrap();
            r.sort_by_key(|row| row.0);
            BinnedSeries::from_points(
                &verb,
                r.iter().map(|row| row.1).collect(),
                r.iter().map(|row| row.2).collect(),
                r.iter().map(|row| row.3).collect(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BinRule {
    /// `max(2, round(log N))` bins of equal token count.
    #[default]
    #[serde(rename = "log-bins")]
    LogBinCount,
    /// Bins of `round(log N)` tokens each.
    #[serde(rename = "log-tokens")]
    LogTokensPerBin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    E,
    #[serde(rename = "10")]
    Ten,
}

impl FromStr for BinRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "log-bins" => Ok(BinRule::LogBinCount),
            "log-tokens" => Ok(BinRule::LogTokensPerBin),
            other => Err(format!("unknown binning rule `{other}` (log-bins | log-tokens)")),
        }
    }
}

impl FromStr for LogBase {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "e" => Ok(LogBase::E),
            "10" => Ok(LogBase::Ten),
            other => Err(format!("unknown log base `{other}` (e | 10)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BinningOptions {
    pub rule: BinRule,
    pub base: LogBase,
}

impl BinningOptions {
    /// Target number of bins for `n` tokens, before year-tie adjustment.
    pub fn bin_count(&self, n: u64) -> usize {
        let log = match self.base {
            LogBase::E => (n as f64).ln(),
            LogBase::Ten => (n as f64).log10(),
        };
        let bins = match self.rule {
            BinRule::LogBinCount => log.round(),
            BinRule::LogTokensPerBin => (n as f64 / log.round().max(1.0)).round(),
        };
        (bins as usize).max(2)
    }
}

/// Token counts of one year.
#[derive(Debug, Clone, Copy)]
struct YearGroup {
    year: i32,
    be: u64,
    have: u64,
}

impl YearGroup {
    fn size(&self) -> u64 {
        self.be + self.have
    }
}

fn year_groups(records: &[CountRecord]) -> Result<(String, Vec<YearGroup>)> {
    let verb = match records.first() {
        Some(r) => r.verb.clone(),
        None => return Err(Error::SeriesTooSmall("no records".into())),
    };
    let mut by_year: BTreeMap<i32, YearGroup> = BTreeMap::new();
    for r in records {
        if r.verb != verb {
            return Err(Error::Parameter(format!("records mix verbs `{verb}` and `{}`", r.verb)));
        }
        let g = by_year.entry(r.year).or_insert(YearGroup { year: r.year, be: 0, have: 0 });
        match r.variant {
            Variant::Be => g.be += r.count,
            Variant::Have => g.have += r.count,
        }
    }
    Ok((verb, by_year.into_values().filter(|g| g.size() > 0).collect()))
}

/// Choose cut indices into the year-group boundaries. `prefix[i]` is the
/// number of tokens before group `i`; cut `j` goes to the interior boundary
/// nearest `j * N / B`, with ties resolved toward the earlier boundary.
fn choose_cuts(prefix: &[u64], bins: usize) -> Vec<usize> {
    let groups = prefix.len() - 1;
    let total = prefix[groups] as f64;
    let mut cuts: Vec<usize> = Vec::with_capacity(bins + 1);
    cuts.push(0);
    for j in 1..bins {
        let ideal = j as f64 * total / bins as f64;
        // interior boundaries are 1..groups
        let pos = prefix[1..groups].partition_point(|&p| (p as f64) < ideal) + 1;
        let best = if pos == groups {
            groups - 1
        } else if pos > 1 && ideal - prefix[pos - 1] as f64 <= prefix[pos] as f64 - ideal {
            pos - 1
        } else {
            pos
        };
        if best > *cuts.last().unwrap() {
            cuts.push(best);
        }
    }
    cuts.push(groups);
    cuts
}

/// Bin one verb's records. Fails when fewer than 4 tokens are present.
pub fn bin_equal_count(records: &[CountRecord], options: &BinningOptions) -> Result<BinnedSeries> {
    let (verb, groups) = year_groups(records)?;
    let total: u64 = groups.iter().map(YearGroup::size).sum();
    if total < 4 {
        return Err(Error::SeriesTooSmall(format!("`{verb}` has {total} tokens, need at least 4")));
    }
    let mut prefix = Vec::with_capacity(groups.len() + 1);
    prefix.push(0u64);
    for g in &groups {
        prefix.push(prefix.last().unwrap() + g.size());
    }
    let degenerate = groups.len() == 1;
    let cuts = if degenerate { vec![0, 1] } else { choose_cuts(&prefix, options.bin_count(total)) };

    let mut series = BinnedSeries {
        verb,
        times: Vec::with_capacity(cuts.len() - 1),
        freq_have: Vec::with_capacity(cuts.len() - 1),
        bin_sizes: Vec::with_capacity(cuts.len() - 1),
        total_tokens: total,
        degenerate,
    };
    for w in cuts.windows(2) {
        let bin = &groups[w[0]..w[1]];
        let size: u64 = bin.iter().map(YearGroup::size).sum();
        let have: u64 = bin.iter().map(|g| g.have).sum();
        // lower median: token at zero-based rank (size - 1) / 2
        let rank = (size - 1) / 2;
        let mut seen = 0;
        let median = bin
            .iter()
            .find(|g| {
                seen += g.size();
                seen > rank
            })
            .map(|g| g.year)
            .unwrap();
        series.times.push(median as f64);
        series.freq_have.push(have as f64 / size as f64);
        series.bin_sizes.push(size);
    }
    Ok(series)
}
