//! Census-style frequency tables that feed BISG.
//!
//! Four tables are supported, each stored as a UTF-8 CSV with a mandatory
//! header and the category columns in [`RaceCategory::ALL`] order:
//!
//! | file             | key column   | category columns        | meaning      |
//! |------------------|--------------|-------------------------|--------------|
//! | `surnames.csv`   | `surname`    | `p_white` .. `p_other`  | `Pr(r\|s)`   |
//! | `geo.csv`        | `zcta`       | `p_white` .. `p_other`  | `Pr(g\|r)`   |
//! | `firstnames.csv` | `first_name` | `p_white` .. `p_other`  | `Pr(f\|r)`   |
//! | `prior.csv`      | (none)       | `p_white` .. `p_other`  | `Pr(r)`      |
//!
//! `surnames.csv` may carry a trailing `count` column. Probabilities are
//! written as decimals with at most 9 fraction digits; rows (or columns, for
//! the likelihood tables) are quantized so the decimal values sum exactly to
//! the stored total, which makes save/load reproduce a table bit-exactly.
//!
//! Lookups never guess: a missing key returns `None` and the caller decides
//! how to fall back.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use crate::race::{neumaier_sum, ProbVector, RaceCategory, K};

/// Row-sum drift tolerated (and corrected) on load.
pub const LOAD_DRIFT_TOLERANCE: f64 = 1e-6;

const NANOS: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: probabilities sum to {sum}")]
    SimplexViolation { line: usize, sum: f64 },
    #[error("column {column}: likelihoods sum to {sum}")]
    DistributionViolation { column: RaceCategory, sum: f64 },
    #[error("line {line}: negative likelihood {value} for {column}")]
    NegativeLikelihood { line: usize, column: RaceCategory, value: f64 },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Only CSV is supported today.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TableFormat {
    #[default]
    Csv,
}

/// Uppercase, keep letters and hyphens, collapse whitespace.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else if ch.is_alphabetic() || ch == '-' {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.extend(ch.to_uppercase());
        }
    }
    out
}

/// A ZCTA code is exactly five ASCII digits.
pub fn is_valid_zcta(code: &str) -> bool {
    code.len() == 5 && code.bytes().all(|b| b.is_ascii_digit())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurnameEntry {
    pub probs: ProbVector,
    pub count: u64,
}

/// `Pr(r | surname)` keyed by normalized surname.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurnameTable {
    entries: BTreeMap<String, SurnameEntry>,
}

impl SurnameTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts under the normalized form of `surname`; returns the previous entry.
    pub fn insert(&mut self, surname: &str, probs: ProbVector, count: u64) -> Option<SurnameEntry> {
        self.entries
            .insert(normalize_name(surname), SurnameEntry { probs, count })
    }

    pub fn get(&self, surname: &str) -> Option<&SurnameEntry> {
        self.entries.get(&normalize_name(surname))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SurnameEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// `Pr(g | r)` keyed by ZCTA. Each race column is a distribution over ZCTAs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeoTable {
    entries: BTreeMap<String, [f64; K]>,
}

impl GeoTable {
    /// Builds a table, validating codes, signs and per-race column sums.
    pub fn from_entries<I>(rows: I) -> Result<Self, TableError>
    where
        I: IntoIterator<Item = (String, [f64; K])>,
    {
        let mut entries = BTreeMap::new();
        for (line, (zcta, l)) in rows.into_iter().enumerate() {
            check_likelihood_row(line + 1, &l)?;
            if !is_valid_zcta(&zcta) {
                return Err(TableError::Parse {
                    line: line + 1,
                    message: format!("invalid ZCTA code `{zcta}`"),
                });
            }
            if entries.insert(zcta.clone(), l).is_some() {
                return Err(TableError::DuplicateKey { line: line + 1, key: zcta });
            }
        }
        let mut table = GeoTable { entries };
        table.normalize_columns()?;
        Ok(table)
    }

    pub fn get(&self, zcta: &str) -> Option<&[f64; K]> {
        self.entries.get(zcta.trim())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64; K])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn column_sum(&self, race: RaceCategory) -> f64 {
        neumaier_sum(self.entries.values().map(|l| l[race.index()]))
    }

    fn normalize_columns(&mut self) -> Result<(), TableError> {
        if self.entries.is_empty() {
            return Ok(());
        }
        for race in RaceCategory::ALL {
            let sum = self.column_sum(race);
            if (sum - 1.0).abs() > LOAD_DRIFT_TOLERANCE {
                return Err(TableError::DistributionViolation { column: race, sum });
            }
            for l in self.entries.values_mut() {
                l[race.index()] /= sum;
            }
        }
        Ok(())
    }
}

/// `Pr(f | r)` keyed by normalized first name. Columns may sum to less than
/// one: the table need not cover every first name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FirstnameTable {
    entries: BTreeMap<String, [f64; K]>,
}

impl FirstnameTable {
    pub fn from_entries<I>(rows: I) -> Result<Self, TableError>
    where
        I: IntoIterator<Item = (String, [f64; K])>,
    {
        let mut entries = BTreeMap::new();
        for (line, (name, l)) in rows.into_iter().enumerate() {
            check_likelihood_row(line + 1, &l)?;
            let key = normalize_name(&name);
            if entries.insert(key.clone(), l).is_some() {
                return Err(TableError::DuplicateKey { line: line + 1, key });
            }
        }
        let table = FirstnameTable { entries };
        for race in RaceCategory::ALL {
            let sum = table.column_sum(race);
            if sum > 1.0 + LOAD_DRIFT_TOLERANCE {
                return Err(TableError::DistributionViolation { column: race, sum });
            }
        }
        Ok(table)
    }

    pub fn get(&self, first_name: &str) -> Option<&[f64; K]> {
        self.entries.get(&normalize_name(first_name))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64; K])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn column_sum(&self, race: RaceCategory) -> f64 {
        neumaier_sum(self.entries.values().map(|l| l[race.index()]))
    }
}

/// National marginal `Pr(r)`, used when a lookup misses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RacePrior(pub ProbVector);

impl RacePrior {
    pub fn probs(&self) -> &ProbVector {
        &self.0
    }
}

fn check_likelihood_row(line: usize, l: &[f64; K]) -> Result<(), TableError> {
    for (i, &value) in l.iter().enumerate() {
        if value.is_nan() || value < 0.0 {
            return Err(TableError::NegativeLikelihood {
                line,
                column: RaceCategory::ALL[i],
                value,
            });
        }
        if !value.is_finite() || value > 1.0 {
            return Err(TableError::Parse {
                line,
                message: format!("likelihood {value} exceeds 1"),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV reading

fn category_header() -> Vec<String> {
    RaceCategory::ALL
        .iter()
        .map(|c| format!("p_{}", c.key()))
        .collect()
}

struct CsvRows<R: Read> {
    reader: csv::Reader<R>,
    with_count: bool,
}

fn open_csv<R: Read>(source: R, key_column: Option<&str>, allow_count: bool) -> Result<CsvRows<R>, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(1, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut expected: Vec<String> = key_column.into_iter().map(str::to_string).collect();
    expected.extend(category_header());
    let with_count = allow_count && header.len() == expected.len() + 1 && header.last().map(String::as_str) == Some("count");
    let matches = if with_count {
        header[..expected.len()] == expected[..]
    } else {
        header == expected
    };
    if !matches {
        let mut message = format!("header must be `{}`", expected.join(","));
        if allow_count {
            message.push_str(" (optionally followed by `count`)");
        }
        return Err(TableError::Parse { line: 1, message });
    }
    Ok(CsvRows { reader, with_count })
}

fn csv_error(line: usize, e: csv::Error) -> TableError {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(line);
    TableError::Parse { line, message: e.to_string() }
}

fn parse_prob(line: usize, field: &str) -> Result<f64, TableError> {
    field.parse::<f64>().map_err(|_| TableError::Parse {
        line,
        message: format!("`{field}` is not a decimal number"),
    })
}

/// One parsed data row: (line number, key, six numbers, optional count).
type RawRow = (usize, String, [f64; K], Option<u64>);

fn read_rows<R: Read>(rows: &mut CsvRows<R>, keyed: bool) -> Result<Vec<RawRow>, TableError> {
    let mut out = Vec::new();
    for (i, record) in rows.reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_error(line, e))?;
        let offset = usize::from(keyed);
        let key = if keyed { record[0].to_string() } else { String::new() };
        let mut values = [0.0; K];
        for (j, v) in values.iter_mut().enumerate() {
            *v = parse_prob(line, &record[offset + j])?;
        }
        let count = if rows.with_count {
            let field = &record[offset + K];
            Some(field.parse::<u64>().map_err(|_| TableError::Parse {
                line,
                message: format!("`{field}` is not a count"),
            })?)
        } else {
            None
        };
        out.push((line, key, values, count));
    }
    Ok(out)
}

fn simplex_row(line: usize, values: [f64; K]) -> Result<ProbVector, TableError> {
    for (i, &value) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(TableError::Parse {
                line,
                message: format!("probability {value} for {} is outside [0, 1]", RaceCategory::ALL[i]),
            });
        }
    }
    let sum = neumaier_sum(values);
    if (sum - 1.0).abs() > LOAD_DRIFT_TOLERANCE {
        return Err(TableError::SimplexViolation { line, sum });
    }
    ProbVector::normalized(values).map_err(|e| TableError::Parse { line, message: e.to_string() })
}

pub fn read_surname_table<R: Read>(source: R) -> Result<SurnameTable, TableError> {
    let mut rows = open_csv(source, Some("surname"), true)?;
    let mut table = SurnameTable::new();
    for (line, key, values, count) in read_rows(&mut rows, true)? {
        let probs = simplex_row(line, values)?;
        let normalized = normalize_name(&key);
        if normalized.is_empty() {
            return Err(TableError::Parse { line, message: format!("empty surname `{key}`") });
        }
        if table.insert(&normalized, probs, count.unwrap_or(0)).is_some() {
            return Err(TableError::DuplicateKey { line, key: normalized });
        }
    }
    Ok(table)
}

pub fn read_geo_table<R: Read>(source: R) -> Result<GeoTable, TableError> {
    let mut rows = open_csv(source, Some("zcta"), false)?;
    let raw = read_rows(&mut rows, true)?;
    // Report parse-level problems with their real line numbers before the
    // whole-file column check.
    for (line, key, values, _) in &raw {
        if !is_valid_zcta(key) {
            return Err(TableError::Parse { line: *line, message: format!("invalid ZCTA code `{key}`") });
        }
        check_likelihood_row(*line, values)?;
    }
    GeoTable::from_entries(raw.into_iter().map(|(_, k, v, _)| (k, v)))
}

pub fn read_firstname_table<R: Read>(source: R) -> Result<FirstnameTable, TableError> {
    let mut rows = open_csv(source, Some("first_name"), false)?;
    let raw = read_rows(&mut rows, true)?;
    for (line, _, values, _) in &raw {
        check_likelihood_row(*line, values)?;
    }
    FirstnameTable::from_entries(raw.into_iter().map(|(_, k, v, _)| (k, v)))
}

pub fn read_prior<R: Read>(source: R) -> Result<RacePrior, TableError> {
    let mut rows = open_csv(source, None, false)?;
    let raw = read_rows(&mut rows, false)?;
    match raw.as_slice() {
        [(line, _, values, _)] => Ok(RacePrior(simplex_row(*line, *values)?)),
        _ => Err(TableError::Parse {
            line: 2,
            message: format!("prior file must have exactly one data row, found {}", raw.len()),
        }),
    }
}

pub fn load_surname_table(path: &Path, format: TableFormat) -> Result<SurnameTable, TableError> {
    let TableFormat::Csv = format;
    read_surname_table(File::open(path)?)
}

pub fn load_geo_table(path: &Path, format: TableFormat) -> Result<GeoTable, TableError> {
    let TableFormat::Csv = format;
    read_geo_table(File::open(path)?)
}

pub fn load_firstname_table(path: &Path, format: TableFormat) -> Result<FirstnameTable, TableError> {
    let TableFormat::Csv = format;
    read_firstname_table(File::open(path)?)
}

pub fn load_prior(path: &Path, format: TableFormat) -> Result<RacePrior, TableError> {
    let TableFormat::Csv = format;
    read_prior(File::open(path)?)
}

// ---------------------------------------------------------------------------
// CSV writing

/// Largest-remainder rounding of `values` to integer nano-units summing to `total`.
fn quantize_to_total(values: &[f64], total: u64) -> Vec<u64> {
    let scaled: Vec<f64> = values.iter().map(|v| v.max(0.0) * NANOS as f64).collect();
    let mut units: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = units.iter().sum();
    if assigned < total {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle().take((total - assigned) as usize) {
            units[i] += 1;
        }
    } else if assigned > total {
        // Only reachable when the inputs overshoot the total; take from the largest.
        let mut excess = assigned - total;
        while excess > 0 {
            let (i, _) = units.iter().enumerate().max_by_key(|(_, u)| **u).expect("non-empty");
            units[i] -= 1;
            excess -= 1;
        }
    }
    units
}

fn format_nanos(units: u64) -> String {
    let whole = units / NANOS;
    let frac = units % NANOS;
    if frac == 0 {
        return whole.to_string();
    }
    let digits = format!("{frac:09}");
    format!("{whole}.{}", digits.trim_end_matches('0'))
}

fn row_total(values: &[f64]) -> u64 {
    (neumaier_sum(values.iter().copied()) * NANOS as f64).round() as u64
}

fn write_header<W: Write>(out: &mut W, key: Option<&str>, count: bool) -> std::io::Result<()> {
    let mut cols: Vec<String> = key.into_iter().map(str::to_string).collect();
    cols.extend(category_header());
    if count {
        cols.push("count".into());
    }
    writeln!(out, "{}", cols.join(","))
}

pub fn write_surname_table<W: Write>(table: &SurnameTable, mut out: W) -> std::io::Result<()> {
    write_header(&mut out, Some("surname"), true)?;
    for (name, entry) in table.iter() {
        let units = quantize_to_total(entry.probs.as_array(), NANOS);
        let cells: Vec<String> = units.into_iter().map(format_nanos).collect();
        writeln!(out, "{name},{},{}", cells.join(","), entry.count)?;
    }
    Ok(())
}

/// Column-wise quantization shared by the likelihood tables.
fn write_likelihoods<'a, W, I>(mut out: W, key: &str, rows: I) -> std::io::Result<()>
where
    W: Write,
    I: Iterator<Item = (&'a str, &'a [f64; K])>,
{
    let rows: Vec<(&str, &[f64; K])> = rows.collect();
    let mut columns: Vec<Vec<u64>> = Vec::with_capacity(K);
    for c in 0..K {
        let col: Vec<f64> = rows.iter().map(|(_, l)| l[c]).collect();
        columns.push(quantize_to_total(&col, row_total(&col)));
    }
    write_header(&mut out, Some(key), false)?;
    for (r, (name, _)) in rows.iter().enumerate() {
        let cells: Vec<String> = columns.iter().map(|col| format_nanos(col[r])).collect();
        writeln!(out, "{name},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_geo_table<W: Write>(table: &GeoTable, out: W) -> std::io::Result<()> {
    write_likelihoods(out, "zcta", table.iter())
}

pub fn write_firstname_table<W: Write>(table: &FirstnameTable, out: W) -> std::io::Result<()> {
    write_likelihoods(out, "first_name", table.iter())
}

pub fn write_prior<W: Write>(prior: &RacePrior, mut out: W) -> std::io::Result<()> {
    write_header(&mut out, None, false)?;
    let units = quantize_to_total(prior.0.as_array(), NANOS);
    let cells: Vec<String> = units.into_iter().map(format_nanos).collect();
    writeln!(out, "{}", cells.join(","))
}

fn save_with<F>(path: &Path, write: F) -> Result<(), TableError>
where
    F: FnOnce(&mut std::io::BufWriter<File>) -> std::io::Result<()>,
{
    let mut out = std::io::BufWriter::new(File::create(path)?);
    write(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn save_surname_table(table: &SurnameTable, path: &Path) -> Result<(), TableError> {
    save_with(path, |w| write_surname_table(table, w))
}

pub fn save_geo_table(table: &GeoTable, path: &Path) -> Result<(), TableError> {
    save_with(path, |w| write_geo_table(table, w))
}

pub fn save_firstname_table(table: &FirstnameTable, path: &Path) -> Result<(), TableError> {
    save_with(path, |w| write_firstname_table(table, w))
}

pub fn save_prior(prior: &RacePrior, path: &Path) -> Result<(), TableError> {
    save_with(path, |w| write_prior(prior, w))
}

// ---------------------------------------------------------------------------
// Synthetic generation

const CONSONANTS: &[u8] = b"BCDFGHJKLMNPRSTV";
const VOWELS: &[u8] = b"AEIOU";

/// Deterministic alphabetic name for `index`, unique for a fixed syllable count.
pub(crate) fn synthetic_name(index: usize, syllables: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut rest = index;
    let mut out = String::with_capacity(2 * syllables);
    for _ in 0..syllables {
        let s = rest % base;
        rest /= base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
    }
    out
}

fn syllables_for(count: usize) -> usize {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut syllables = 3;
    while base.pow(syllables as u32) < count {
        syllables += 1;
    }
    syllables
}

fn dirichlet<R: rand::Rng>(rng: &mut R, len: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("concentration validated");
    let draws: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let total = neumaier_sum(draws.iter().copied());
    draws.into_iter().map(|d| d / total).collect()
}

fn dequantize(units: &[u64]) -> Vec<f64> {
    units.iter().map(|&u| u as f64 / NANOS as f64).collect()
}

/// The factorized joint `Pr(s) Pr(r|s) Pr(g|r) Pr(f|r)` behind a synthetic census.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedJoint {
    pub surnames: Vec<String>,
    pub surname_marginal: Vec<f64>,
    pub race_given_surname: Vec<[f64; K]>,
    pub zctas: Vec<String>,
    /// Indexed by ZCTA, then race.
    pub geo_given_race: Vec<[f64; K]>,
    pub first_names: Vec<String>,
    /// Indexed by first name, then race.
    pub first_given_race: Vec<[f64; K]>,
}

impl FactorizedJoint {
    /// Race marginal implied by the joint.
    pub fn race_marginal(&self) -> [f64; K] {
        let mut out = [0.0; K];
        for (ps, rs) in self.surname_marginal.iter().zip(&self.race_given_surname) {
            for r in 0..K {
                out[r] += ps * rs[r];
            }
        }
        out
    }
}

/// Output of [`generate_synthetic_census`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCensus {
    pub surnames: SurnameTable,
    pub geo: GeoTable,
    pub firstnames: FirstnameTable,
    pub prior: RacePrior,
    pub joint: FactorizedJoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticCensusConfig {
    pub seed: u64,
    pub n_surnames: usize,
    pub n_zctas: usize,
    pub n_first_names: usize,
    pub concentration: f64,
}

/// Generates census tables with `n_surnames` first names as well.
pub fn generate_synthetic_census(
    seed: u64,
    n_surnames: usize,
    n_zctas: usize,
    concentration: f64,
) -> Result<SyntheticCensus, TableError> {
    generate_synthetic_census_with(SyntheticCensusConfig {
        seed,
        n_surnames,
        n_zctas,
        n_first_names: n_surnames,
        concentration,
    })
}

pub fn generate_synthetic_census_with(cfg: SyntheticCensusConfig) -> Result<SyntheticCensus, TableError> {
    if cfg.n_surnames == 0 || cfg.n_zctas == 0 || cfg.n_first_names == 0 {
        return Err(TableError::InvalidParameter("table sizes must be at least 1".into()));
    }
    if cfg.n_zctas > 100_000 {
        return Err(TableError::InvalidParameter("at most 100000 five-digit ZCTAs exist".into()));
    }
    if !(cfg.concentration > 0.0 && cfg.concentration.is_finite()) {
        return Err(TableError::InvalidParameter(format!(
            "concentration must be positive and finite, got {}",
            cfg.concentration
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let surname_syllables = syllables_for(cfg.n_surnames);
    let surnames: Vec<String> = (0..cfg.n_surnames)
        .map(|i| synthetic_name(i, surname_syllables))
        .collect();
    let surname_marginal = dirichlet(&mut rng, cfg.n_surnames, 1.0);
    let race_given_surname: Vec<[f64; K]> = (0..cfg.n_surnames)
        .map(|_| {
            let row = dirichlet(&mut rng, K, cfg.concentration);
            let q = dequantize(&quantize_to_total(&row, NANOS));
            q.try_into().expect("K entries")
        })
        .collect();

    let zctas: Vec<String> = (0..cfg.n_zctas).map(|i| format!("{i:05}")).collect();
    let mut geo_given_race = vec![[0.0; K]; cfg.n_zctas];
    for r in 0..K {
        let col = dirichlet(&mut rng, cfg.n_zctas, cfg.concentration);
        let q = dequantize(&quantize_to_total(&col, NANOS));
        for (g, v) in q.into_iter().enumerate() {
            geo_given_race[g][r] = v;
        }
    }

    let first_syllables = syllables_for(cfg.n_first_names);
    let first_names: Vec<String> = (0..cfg.n_first_names)
        // Offset so first names do not coincide with surnames.
        .map(|i| format!("{}A", synthetic_name(i, first_syllables)))
        .collect();
    let mut first_given_race = vec![[0.0; K]; cfg.n_first_names];
    for r in 0..K {
        let col = dirichlet(&mut rng, cfg.n_first_names, cfg.concentration);
        let q = dequantize(&quantize_to_total(&col, NANOS));
        for (f, v) in q.into_iter().enumerate() {
            first_given_race[f][r] = v;
        }
    }

    let joint = FactorizedJoint {
        surnames,
        surname_marginal,
        race_given_surname,
        zctas,
        geo_given_race,
        first_names,
        first_given_race,
    };

    let mut surname_table = SurnameTable::new();
    for ((name, probs), ps) in joint
        .surnames
        .iter()
        .zip(&joint.race_given_surname)
        .zip(&joint.surname_marginal)
    {
        let probs = ProbVector::new(*probs).expect("quantized rows sum to one");
        surname_table.insert(name, probs, (ps * 1e7).round() as u64);
    }
    let geo = GeoTable::from_entries(joint.zctas.iter().cloned().zip(joint.geo_given_race.iter().copied()))?;
    let firstnames = FirstnameTable::from_entries(
        joint
            .first_names
            .iter()
            .cloned()
            .zip(joint.first_given_race.iter().copied()),
    )?;
    let marginal = joint.race_marginal();
    let prior_q: [f64; K] = dequantize(&quantize_to_total(&marginal, NANOS))
        .try_into()
        .expect("K entries");
    let prior = RacePrior(ProbVector::normalized(prior_q).expect("prior has mass"));

    Ok(SyntheticCensus {
        surnames: surname_table,
        geo,
        firstnames,
        prior,
        joint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "surname,p_white,p_black,p_hispanic,p_aian,p_api,p_other\n";
    const GEO_HEADER: &str = "zcta,p_white,p_black,p_hispanic,p_aian,p_api,p_other\n";
    const FIRST_HEADER: &str = "first_name,p_white,p_black,p_hispanic,p_aian,p_api,p_other\n";

    #[test]
    fn parses_a_surname_row() {
        let csv = format!("{HEADER}SMITH,0.7,0.23,0.02,0.01,0.01,0.03\n");
        let table = read_surname_table(csv.as_bytes()).unwrap();
        let entry = table.get("smith").unwrap();
        let expected = [0.7, 0.23, 0.02, 0.01, 0.01, 0.03];
        for (a, b) in entry.probs.as_array().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_surname_row_off_the_simplex() {
        let csv = format!("{HEADER}SMITH,0.7,0.23,0.02,0.01,0.01,0.03\nJONES,0.5,0.2,0.1,0.05,0.05,0.0\n");
        match read_surname_table(csv.as_bytes()) {
            Err(TableError::SimplexViolation { line, sum }) => {
                assert_eq!(line, 3);
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("expected simplex violation, got {other:?}"),
        }
    }

    #[test]
    fn small_drift_is_renormalized() {
        let csv = format!("{HEADER}LEE,0.5000004,0.5,0,0,0,0\n");
        let table = read_surname_table(csv.as_bytes()).unwrap();
        assert!((table.get("LEE").unwrap().probs.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_surname_file_loads_empty() {
        let table = read_surname_table(HEADER.as_bytes()).unwrap();
        assert!(table.is_empty());
        assert!(table.get("ANYONE").is_none());
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let csv = format!("{HEADER}SMITH,0.7,abc,0.02,0.01,0.01,0.03\n");
        assert!(matches!(read_surname_table(csv.as_bytes()), Err(TableError::Parse { line: 2, .. })));
        let csv = format!("{HEADER}SMITH,0.7,0.3\n");
        assert!(matches!(read_surname_table(csv.as_bytes()), Err(TableError::Parse { .. })));
        assert!(matches!(
            read_surname_table("name,a,b\n".as_bytes()),
            Err(TableError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn geo_table_validation() {
        let ok = format!("{GEO_HEADER}10001,0.5,0.5,0.5,0.5,0.5,0.5\n10002,0.5,0.5,0.5,0.5,0.5,0.5\n");
        let table = read_geo_table(ok.as_bytes()).unwrap();
        assert_eq!(table.len(), 2);

        let bad = format!("{GEO_HEADER}10001,0.5,1.0,0.5,0.5,0.5,0.5\n10002,0.5,0.5,0.5,0.5,0.5,0.5\n");
        match read_geo_table(bad.as_bytes()) {
            Err(TableError::DistributionViolation { column, sum }) => {
                assert_eq!(column, RaceCategory::Black);
                assert!((sum - 1.5).abs() < 1e-12);
            }
            other => panic!("expected distribution violation, got {other:?}"),
        }

        let short = format!("{GEO_HEADER}1234,1,1,1,1,1,1\n");
        assert!(matches!(read_geo_table(short.as_bytes()), Err(TableError::Parse { line: 2, .. })));
    }

    #[test]
    fn firstname_table_validation() {
        let partial = format!("{FIRST_HEADER}MARIA,0.1,0.2,0.3,0.0,0.05,0.1\n");
        let table = read_firstname_table(partial.as_bytes()).unwrap();
        assert!(table.get("maria").is_some());

        let negative = format!("{FIRST_HEADER}MARIA,0.1,-0.2,0.3,0.0,0.05,0.1\n");
        assert!(matches!(
            read_firstname_table(negative.as_bytes()),
            Err(TableError::NegativeLikelihood { line: 2, column: RaceCategory::Black, .. })
        ));

        let empty = read_firstname_table(FIRST_HEADER.as_bytes()).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn name_normalization() {
        assert_eq!(normalize_name("  o'Brien-smith  "), "OBRIEN-SMITH");
        assert_eq!(normalize_name("de   la\tCruz"), "DE LA CRUZ");
        assert_eq!(normalize_name("García"), "GARCÍA");
        assert_eq!(normalize_name("123"), "");
    }

    #[test]
    fn quantization_hits_the_total() {
        let values = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        let units = quantize_to_total(&values, NANOS);
        assert_eq!(units.iter().sum::<u64>(), NANOS);
        assert_eq!(format_nanos(500_000_000), "0.5");
        assert_eq!(format_nanos(NANOS), "1");
        assert_eq!(format_nanos(0), "0");
        assert_eq!(format_nanos(123_456_789), "0.123456789");
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        let a = generate_synthetic_census(1, 10, 4, 1.0).unwrap();
        let b = generate_synthetic_census(1, 10, 4, 1.0).unwrap();
        assert_eq!(a, b);
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        write_surname_table(&a.surnames, &mut bytes_a).unwrap();
        write_surname_table(&b.surnames, &mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let c = generate_synthetic_census(2, 10, 4, 1.0).unwrap();
        assert_ne!(a.joint, c.joint);
    }

    #[test]
    fn huge_concentration_gives_uniform_rows() {
        let census = generate_synthetic_census(3, 20, 5, 1e9).unwrap();
        for (_, entry) in census.surnames.iter() {
            for p in entry.probs.as_array() {
                assert!((p - 1.0 / 6.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn single_location_has_unit_likelihood() {
        let census = generate_synthetic_census(1, 1, 1, 1.0).unwrap();
        assert_eq!(census.surnames.len(), 1);
        assert_eq!(census.geo.len(), 1);
        let (_, l) = census.geo.iter().next().unwrap();
        assert_eq!(*l, [1.0; K]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_synthetic_census(1, 0, 1, 1.0).is_err());
        assert!(generate_synthetic_census(1, 1, 0, 1.0).is_err());
        assert!(generate_synthetic_census(1, 1, 1, 0.0).is_err());
        assert!(generate_synthetic_census(1, 1, 1, f64::NAN).is_err());
    }

    #[test]
    fn synthetic_names_survive_normalization() {
        let census = generate_synthetic_census(9, 500, 3, 1.0).unwrap();
        for name in &census.joint.surnames {
            assert_eq!(&normalize_name(name), name);
        }
        assert_eq!(census.surnames.len(), 500);
        assert_eq!(census.firstnames.len(), 500);
    }
}
