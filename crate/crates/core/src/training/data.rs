use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::TrainError;
use crate::model::Normalization;
use crate::smiles::{parse_smiles, MolGraph};

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub smiles: String,
    pub value: f64,
}

/// Labeled molecules of one task, parsed and deduplicated by SMILES text.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub records: Vec<Record>,
    pub graphs: Vec<MolGraph>,
    /// Rows dropped because their SMILES repeated an earlier row.
    pub duplicates: usize,
}

impl TaskDataset {
    /// Parses every SMILES; the first occurrence of a repeated SMILES wins.
    pub fn from_records(name: impl Into<String>, records: Vec<Record>) -> Result<Self, TrainError> {
        let name = name.into();
        let mut seen = HashSet::new();
        let (mut kept, mut graphs, mut duplicates) = (Vec::new(), Vec::new(), 0);
        for (i, r) in records.into_iter().enumerate() {
            if !r.value.is_finite() {
                return Err(TrainError::Data(format!("{name}: record {} has a non-finite value", i + 1)));
            }
            if !seen.insert(r.smiles.clone()) {
                duplicates += 1;
                continue;
            }
            let g = parse_smiles(&r.smiles)
                .map_err(|e| TrainError::Data(format!("{name}: record {}: {:?}: {e}", i + 1, r.smiles)))?;
            graphs.push(g);
            kept.push(r);
        }
        Ok(Self { name, records: kept, graphs, duplicates })
    }

    /// Reads a `smiles,value` CSV; errors name the offending line.
    pub fn load_csv(path: &Path, name: impl Into<String>) -> Result<Self, TrainError> {
        let name = name.into();
        let text = fs::read_to_string(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        let records = parse_csv(&text).map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
        let mut ds = Self { name, records: Vec::new(), graphs: Vec::new(), duplicates: 0 };
        let mut seen = HashSet::new();
        for (line, r) in records {
            if !seen.insert(r.smiles.clone()) {
                ds.duplicates += 1;
                continue;
            }
            let g = parse_smiles(&r.smiles)
                .map_err(|e| TrainError::Data(format!("{} line {line}: {:?}: {e}", path.display(), r.smiles)))?;
            ds.graphs.push(g);
            ds.records.push(r);
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn values(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.records[i].value).collect()
    }
}

/// `(line number, record)` pairs of a `smiles,value` document.
fn parse_csv(text: &str) -> Result<Vec<(usize, Record)>, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| format!("line 1: {e}"))?.clone();
    if headers.len() != 2 || &headers[0] != "smiles" || &headers[1] != "value" {
        return Err(format!("line 1: expected header `smiles,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| match e.position() {
            Some(p) => format!("line {}: {e}", p.line()),
            None => e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 2 {
            return Err(format!("line {line}: expected 2 fields, found {}", row.len()));
        }
        let smiles = row[0].to_string();
        if smiles.is_empty() {
            return Err(format!("line {line}: empty SMILES"));
        }
        let value: f64 = row[1].parse().map_err(|_| format!("line {line}: value {:?} is not a number", &row[1]))?;
        if !value.is_finite() {
            return Err(format!("line {line}: value {:?} is not finite", &row[1]));
        }
        out.push((line, Record { smiles, value }));
    }
    Ok(out)
}

pub fn write_csv(path: &Path, records: &[Record]) -> Result<(), TrainError> {
    let io = |e: csv::Error| TrainError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["smiles", "value"]).map_err(io)?;
    for r in records {
        w.write_record([r.smiles.as_str(), &r.value.to_string()]).map_err(io)?;
    }
    w.flush().map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
}

/// Mean and population standard deviation; constant values are rejected.
pub fn fit_normalization(values: &[f64]) -> Result<Normalization, TrainError> {
    if values.is_empty() {
        return Err(TrainError::Data("cannot normalize an empty target set".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(TrainError::Data("targets are constant; standard deviation is zero".into()));
    }
    Ok(Normalization { mean, std })
}
