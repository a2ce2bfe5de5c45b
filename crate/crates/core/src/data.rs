//! Utterance records, label views and the i-vector text format.
//!
//! A record always knows which conversation it came from and which
//! participant slot it occupies; the true speaker identity is optional.
//! Labels are not stored on records directly. Instead a [`LabelView`]
//! partitions a dataset into classes under one of three strategies:
//!
//! * `global`: one class per true speaker id,
//! * `local`: one class per `conv_id:slot`, ignoring speaker identity,
//! * `pooled`: the disjoint union of a global and a local view.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::textio::{fmt_f64, parse_f64_list};

/// Sentinel used in files for an absent field.
pub const UNLABELED: &str = "-";

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub conv_id: String,
    pub slot: u32,
    pub global_spk: Option<String>,
    pub vector: DVector<f64>,
}

impl UtteranceRecord {
    pub fn new(
        utt_id: impl Into<String>,
        conv_id: impl Into<String>,
        slot: u32,
        global_spk: Option<String>,
        vector: DVector<f64>,
    ) -> Self {
        Self {
            utt_id: utt_id.into(),
            conv_id: conv_id.into(),
            slot,
            global_spk,
            vector,
        }
    }

    /// Class id of this record under local labeling.
    pub fn local_id(&self) -> String {
        format!("{}:{}", self.conv_id, self.slot)
    }
}

fn check_identifier(kind: &str, id: &str) -> std::result::Result<(), String> {
    if id.is_empty() {
        return Err(format!("empty {kind}"));
    }
    if id.contains([',', '\n', '\r']) {
        return Err(format!("{kind} {id:?} contains a separator character"));
    }
    Ok(())
}

fn check_record(rec: &UtteranceRecord, dim: usize) -> std::result::Result<(), String> {
    check_identifier("utt_id", &rec.utt_id)?;
    check_identifier("conv_id", &rec.conv_id)?;
    if rec.conv_id.contains(':') {
        return Err(format!("conv_id {:?} contains ':'", rec.conv_id));
    }
    if let Some(spk) = &rec.global_spk {
        check_identifier("global_spk", spk)?;
        if spk == UNLABELED {
            return Err("global_spk must not be the literal sentinel \"-\"".into());
        }
    }
    if rec.vector.len() != dim {
        return Err(format!(
            "utterance {} has {} components, expected {dim}",
            rec.utt_id,
            rec.vector.len()
        ));
    }
    if rec.vector.iter().any(|x| !x.is_finite()) {
        return Err(format!("utterance {} has a non-finite component", rec.utt_id));
    }
    Ok(())
}

/// An ordered collection of records sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    records: Vec<UtteranceRecord>,
}

impl Dataset {
    pub fn new(dim: usize, records: Vec<UtteranceRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dataset dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(records.len());
        for rec in &records {
            check_record(rec, dim).map_err(Error::Config)?;
            if !seen.insert(rec.utt_id.as_str()) {
                return Err(Error::Config(format!("duplicate utt_id {}", rec.utt_id)));
            }
        }
        Ok(Self { dim, records })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<UtteranceRecord> {
        self.records
    }

    /// Map from utt_id to record position.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.utt_id.as_str(), i))
            .collect()
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utt_id == utt_id)
    }

    pub fn vectors(&self) -> Vec<DVector<f64>> {
        self.records.iter().map(|r| r.vector.clone()).collect()
    }

    /// Concatenates two datasets. Fails on dimension mismatch or shared utt_ids.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim != other.dim {
            return Err(Error::Config(format!(
                "cannot concatenate datasets of dimension {} and {}",
                self.dim, other.dim
            )));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Dataset::new(self.dim, records)
    }

    /// Records whose predicate holds, in original order.
    pub fn filter(&self, mut keep: impl FnMut(&UtteranceRecord) -> bool) -> Dataset {
        Dataset {
            dim: self.dim,
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelStrategy {
    Global,
    Local,
    Pooled,
}

impl fmt::Display for LabelStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelStrategy::Global => "global",
            LabelStrategy::Local => "local",
            LabelStrategy::Pooled => "pooled",
        })
    }
}

impl FromStr for LabelStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(LabelStrategy::Global),
            "local" => Ok(LabelStrategy::Local),
            "pooled" => Ok(LabelStrategy::Pooled),
            other => Err(Error::Config(format!("unknown label strategy {other:?}"))),
        }
    }
}

/// A partition of (a subset of) a dataset's utterances into classes.
///
/// Classes are kept in a sorted map so iteration order, and therefore every
/// floating point reduction over classes, is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelView {
    strategy: LabelStrategy,
    classes: BTreeMap<String, Vec<String>>,
}

impl LabelView {
    /// Builds a view from explicit classes, checking the partition invariants.
    pub fn from_classes(strategy: LabelStrategy, classes: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (id, members) in &classes {
            if members.is_empty() {
                return Err(Error::Labeling(format!("class {id} is empty")));
            }
            for m in members {
                if !seen.insert(m.as_str()) {
                    return Err(Error::Labeling(format!("utterance {m} appears in more than one class")));
                }
            }
        }
        Ok(Self { strategy, classes })
    }

    pub fn strategy(&self) -> LabelStrategy {
        self.strategy
    }

    pub fn classes(&self) -> &BTreeMap<String, Vec<String>> {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_members(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    /// Class sizes sorted ascending; handy for comparing partitions.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.classes.values().map(Vec::len).collect();
        sizes.sort_unstable();
        sizes
    }

    /// The partition as a set of sorted member lists, class ids dropped.
    pub fn partition(&self) -> Vec<Vec<String>> {
        let mut blocks: Vec<Vec<String>> = self
            .classes
            .values()
            .map(|m| {
                let mut m = m.clone();
                m.sort();
                m
            })
            .collect();
        blocks.sort();
        blocks
    }
}

fn group_by(
    data: &Dataset,
    mut key: impl FnMut(&UtteranceRecord) -> Result<String>,
) -> Result<BTreeMap<String, Vec<String>>> {
    let mut classes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for rec in data.records() {
        classes.entry(key(rec)?).or_default().push(rec.utt_id.clone());
    }
    Ok(classes)
}

/// One class per distinct true speaker.
pub fn build_global_view(data: &Dataset) -> Result<LabelView> {
    let classes = group_by(data, |rec| {
        rec.global_spk
            .clone()
            .ok_or_else(|| Error::Labeling(format!("utterance {} has no global speaker label", rec.utt_id)))
    })?;
    Ok(LabelView {
        strategy: LabelStrategy::Global,
        classes,
    })
}

/// One class per `conv_id:slot`. Speaker identity is never consulted, so a
/// speaker who returns in another conversation becomes a second class.
pub fn build_local_view(data: &Dataset) -> Result<LabelView> {
    let classes = group_by(data, |rec| Ok(rec.local_id()))?;
    Ok(LabelView {
        strategy: LabelStrategy::Local,
        classes,
    })
}

/// Disjoint union of two views with `g:` / `l:` class id prefixes.
pub fn build_pooled_view(global_part: &LabelView, local_part: &LabelView) -> Result<LabelView> {
    let global_members: HashSet<&str> = global_part.classes.values().flatten().map(String::as_str).collect();
    let mut collisions: Vec<String> = local_part
        .classes
        .values()
        .flatten()
        .filter(|m| global_members.contains(m.as_str()))
        .cloned()
        .collect();
    if !collisions.is_empty() {
        collisions.sort();
        return Err(Error::Pooling(collisions));
    }

    let mut classes = BTreeMap::new();
    for (id, members) in &global_part.classes {
        classes.insert(format!("g:{id}"), members.clone());
    }
    for (id, members) in &local_part.classes {
        classes.insert(format!("l:{id}"), members.clone());
    }
    Ok(LabelView {
        strategy: LabelStrategy::Pooled,
        classes,
    })
}

/// Reads an i-vector file: `#dim=<d>` header, then
/// `utt_id,conv_id,slot,global_spk,v1,...,vd` rows.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file), &path.display().to_string())
}

pub fn parse_dataset(reader: impl BufRead, name: &str) -> Result<Dataset> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(name, e))?,
        None => return Err(Error::parse(name, 1, "missing #dim header")),
    };
    let dim: usize = header
        .trim_end()
        .strip_prefix("#dim=")
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::parse(name, 1, format!("bad header {header:?}")))?;

    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(name, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(5, ',').collect();
        if fields.len() < 5 {
            return Err(Error::parse(
                name,
                lineno,
                "expected utt_id,conv_id,slot,global_spk,vector",
            ));
        }
        let slot: u32 = fields[2]
            .parse()
            .map_err(|_| Error::parse(name, lineno, format!("bad slot {:?}", fields[2])))?;
        let global_spk = match fields[3] {
            UNLABELED => None,
            s => Some(s.to_string()),
        };
        let values = parse_f64_list(fields[4]).map_err(|m| Error::parse(name, lineno, m))?;
        if values.len() != dim {
            return Err(Error::parse(
                name,
                lineno,
                format!("{} components, header declares dim={dim}", values.len()),
            ));
        }
        let rec = UtteranceRecord::new(fields[0], fields[1], slot, global_spk, DVector::from_vec(values));
        check_record(&rec, dim).map_err(|m| Error::parse(name, lineno, m))?;
        if !seen.insert(rec.utt_id.clone()) {
            return Err(Error::parse(name, lineno, format!("duplicate utt_id {}", rec.utt_id)));
        }
        records.push(rec);
    }
    Ok(Dataset { dim, records })
}

pub fn write_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    render_dataset(data, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn render_dataset(data: &Dataset, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "#dim={}", data.dim)?;
    for rec in &data.records {
        write!(
            w,
            "{},{},{},{}",
            rec.utt_id,
            rec.conv_id,
            rec.slot,
            rec.global_spk.as_deref().unwrap_or(UNLABELED)
        )?;
        for v in rec.vector.iter() {
            write!(w, ",{}", fmt_f64(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}
