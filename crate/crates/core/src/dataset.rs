//! CSV files exchanged with operators.
//!
//! | file | header |
//! |---|---|
//! | `population.csv` | `member_id,first_name,surname,zcta` |
//! | `selfid.csv` | `member_id,category` |
//! | `p2_values.csv` | `member_id,y,y_hat` |
//! | `truth.csv` | `member_id,category` |
//!
//! `first_name` may be empty. Categories are written as labels and read as
//! labels or short keys. Numbers use the shortest decimal that reads back to
//! the same `f64`. The census tables sit next to these files under their
//! own names (see [`crate::census`]).
//!
//! P1's privatized table has no file format on purpose: it is rebuilt in
//! memory from these inputs and a seed, and never written out.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::bisg::{CensusTables, MemberIdentity};
use crate::census::{self, SyntheticCensus, TableError, TableFormat};
use crate::privatizer::SelfIdRecord;
use crate::race::RaceCategory;
use crate::synth::P2Truth;

pub const POPULATION_FILE: &str = "population.csv";
pub const SELFID_FILE: &str = "selfid.csv";
pub const P2_VALUES_FILE: &str = "p2_values.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SURNAMES_FILE: &str = "surnames.csv";
pub const GEO_FILE: &str = "geo.csv";
pub const FIRSTNAMES_FILE: &str = "firstnames.csv";
pub const PRIOR_FILE: &str = "prior.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}: i/o error: {source}")]
    Io { file: String, source: std::io::Error },
    #[error("{file}, line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: {source}")]
    Table { file: String, source: TableError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { file: path.display().to_string(), source }
}

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse { file: file.to_string(), line, message: message.into() }
}

/// Reads a headed CSV, checking the header and yielding `(line, fields)`.
fn read_csv<R: Read>(source: R, file: &str, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(file, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(parse_err(file, 1, format!("header must be `{}`", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(file, line, e.to_string()))?;
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn write_csv<W: Write>(out: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

fn unique_ids<'a>(file: &str, ids: impl Iterator<Item = (usize, &'a str)>) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    for (line, id) in ids {
        if id.is_empty() {
            return Err(parse_err(file, line, "empty member_id"));
        }
        if !seen.insert(id) {
            return Err(parse_err(file, line, format!("duplicate member_id `{id}`")));
        }
    }
    Ok(())
}

fn parse_category(file: &str, line: usize, s: &str) -> Result<RaceCategory, DatasetError> {
    s.parse().map_err(|_| parse_err(file, line, format!("unknown category `{s}`")))
}

fn parse_f64(file: &str, line: usize, s: &str) -> Result<f64, DatasetError> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(file, line, format!("`{s}` is not a finite number"))),
    }
}

const POPULATION_HEADER: [&str; 4] = ["member_id", "first_name", "surname", "zcta"];
const CATEGORY_HEADER: [&str; 2] = ["member_id", "category"];
const P2_HEADER: [&str; 3] = ["member_id", "y", "y_hat"];

pub fn read_population<R: Read>(source: R) -> Result<Vec<MemberIdentity>, DatasetError> {
    let rows = read_csv(source, POPULATION_FILE, &POPULATION_HEADER)?;
    unique_ids(POPULATION_FILE, rows.iter().map(|(l, r)| (*l, r[0].as_str())))?;
    rows.into_iter()
        .map(|(line, r)| {
            let [id, first, surname, zcta]: [String; 4] = r.try_into().expect("header checked");
            if !census::is_valid_zcta(&zcta) {
                return Err(parse_err(POPULATION_FILE, line, format!("`{zcta}` is not a five-digit ZCTA")));
            }
            Ok(MemberIdentity {
                member_id: id,
                first_name: if first.is_empty() { None } else { Some(census::normalize_name(&first)) },
                surname: census::normalize_name(&surname),
                zcta,
            })
        })
        .collect()
}

pub fn write_population<W: Write>(members: &[MemberIdentity], out: W) -> std::io::Result<()> {
    write_csv(
        out,
        &POPULATION_HEADER,
        members.iter().map(|m| {
            vec![m.member_id.clone(), m.first_name.clone().unwrap_or_default(), m.surname.clone(), m.zcta.clone()]
        }),
    )
}

fn read_categories<R: Read>(source: R, file: &str) -> Result<Vec<(String, RaceCategory)>, DatasetError> {
    let rows = read_csv(source, file, &CATEGORY_HEADER)?;
    unique_ids(file, rows.iter().map(|(l, r)| (*l, r[0].as_str())))?;
    rows.into_iter()
        .map(|(line, r)| Ok((r[0].clone(), parse_category(file, line, &r[1])?)))
        .collect()
}

fn write_categories<'a, W: Write>(rows: impl Iterator<Item = (&'a str, RaceCategory)>, out: W) -> std::io::Result<()> {
    write_csv(out, &CATEGORY_HEADER, rows.map(|(id, c)| vec![id.to_string(), c.label().to_string()]))
}

pub fn read_selfid<R: Read>(source: R) -> Result<Vec<SelfIdRecord>, DatasetError> {
    Ok(read_categories(source, SELFID_FILE)?
        .into_iter()
        .map(|(id, c)| SelfIdRecord::new(id, c))
        .collect())
}

pub fn write_selfid<W: Write>(records: &[SelfIdRecord], out: W) -> std::io::Result<()> {
    write_categories(records.iter().map(|r| (r.member_id.as_str(), r.category)), out)
}

pub fn read_truth<R: Read>(source: R) -> Result<Vec<(String, RaceCategory)>, DatasetError> {
    read_categories(source, TRUTH_FILE)
}

pub fn write_truth<W: Write>(members: &[MemberIdentity], truth: &[RaceCategory], out: W) -> std::io::Result<()> {
    write_categories(members.iter().map(|m| m.member_id.as_str()).zip(truth.iter().copied()), out)
}

pub fn read_p2_values<R: Read>(source: R) -> Result<Vec<P2Truth>, DatasetError> {
    let rows = read_csv(source, P2_VALUES_FILE, &P2_HEADER)?;
    unique_ids(P2_VALUES_FILE, rows.iter().map(|(l, r)| (*l, r[0].as_str())))?;
    rows.into_iter()
        .map(|(line, r)| {
            Ok(P2Truth {
                member_id: r[0].clone(),
                y: parse_f64(P2_VALUES_FILE, line, &r[1])?,
                y_hat: parse_f64(P2_VALUES_FILE, line, &r[2])?,
            })
        })
        .collect()
}

pub fn write_p2_values<W: Write>(rows: &[P2Truth], out: W) -> std::io::Result<()> {
    write_csv(out, &P2_HEADER, rows.iter().map(|r| vec![r.member_id.clone(), r.y.to_string(), r.y_hat.to_string()]))
}

fn open(path: &Path) -> Result<File, DatasetError> {
    File::open(path).map_err(io_err(path))
}

fn create(path: &Path) -> Result<File, DatasetError> {
    File::create(path).map_err(io_err(path))
}

pub fn load_population(path: &Path) -> Result<Vec<MemberIdentity>, DatasetError> {
    read_population(open(path)?)
}

pub fn load_selfid(path: &Path) -> Result<Vec<SelfIdRecord>, DatasetError> {
    read_selfid(open(path)?)
}

pub fn load_p2_values(path: &Path) -> Result<Vec<P2Truth>, DatasetError> {
    read_p2_values(open(path)?)
}

pub fn load_truth(path: &Path) -> Result<Vec<(String, RaceCategory)>, DatasetError> {
    read_truth(open(path)?)
}

pub fn save_population(members: &[MemberIdentity], path: &Path) -> Result<(), DatasetError> {
    write_population(members, create(path)?).map_err(io_err(path))
}

pub fn save_selfid(records: &[SelfIdRecord], path: &Path) -> Result<(), DatasetError> {
    write_selfid(records, create(path)?).map_err(io_err(path))
}

pub fn save_p2_values(rows: &[P2Truth], path: &Path) -> Result<(), DatasetError> {
    write_p2_values(rows, create(path)?).map_err(io_err(path))
}

pub fn save_truth(members: &[MemberIdentity], truth: &[RaceCategory], path: &Path) -> Result<(), DatasetError> {
    write_truth(members, truth, create(path)?).map_err(io_err(path))
}

fn table_err(path: &Path) -> impl FnOnce(TableError) -> DatasetError + '_ {
    move |source| DatasetError::Table { file: path.display().to_string(), source }
}

/// Writes the four census tables into `dir`.
pub fn save_census(census: &SyntheticCensus, dir: &Path) -> Result<(), DatasetError> {
    let p = dir.join(SURNAMES_FILE);
    census::save_surname_table(&census.surnames, &p).map_err(table_err(&p))?;
    let p = dir.join(GEO_FILE);
    census::save_geo_table(&census.geo, &p).map_err(table_err(&p))?;
    let p = dir.join(FIRSTNAMES_FILE);
    census::save_firstname_table(&census.firstnames, &p).map_err(table_err(&p))?;
    let p = dir.join(PRIOR_FILE);
    census::save_prior(&census.prior, &p).map_err(table_err(&p))
}

/// Loads the census tables from `dir`. The first-name table is optional.
pub fn load_census(dir: &Path) -> Result<CensusTables, DatasetError> {
    let f = TableFormat::Csv;
    let p = dir.join(SURNAMES_FILE);
    let surnames = census::load_surname_table(&p, f).map_err(table_err(&p))?;
    let p = dir.join(GEO_FILE);
    let geo = census::load_geo_table(&p, f).map_err(table_err(&p))?;
    let p = dir.join(FIRSTNAMES_FILE);
    let firstnames = if p.exists() { Some(census::load_firstname_table(&p, f).map_err(table_err(&p))?) } else { None };
    let p = dir.join(PRIOR_FILE);
    let prior = census::load_prior(&p, f).map_err(table_err(&p))?;
    Ok(CensusTables { surnames, geo, firstnames, prior })
}
