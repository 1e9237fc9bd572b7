//! CSV and JSON formats for datasets, coresets, sensitivities and operation logs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::builders::{BuilderKind, Coreset};
use crate::data::{WeightedDataset, WeightedPoint};
use crate::dynamic::Op;
use crate::error::{CoresetError, Result};
use crate::sensitivity::SensitivityProfile;

/// Sidecar describing a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dim: usize,
    pub n: usize,
    pub path: PathBuf,
}

fn features_header(dim: usize) -> impl Iterator<Item = String> {
    (1..=dim).map(|j| format!("f{j}"))
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| CoresetError::Malformed(format!("line {line}: bad {what} {field:?}")))
}

fn parse_label(field: &str, line: u64) -> Result<Option<i8>> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    match parse_f64(t, line, "label")? {
        1.0 => Ok(Some(1)),
        -1.0 => Ok(Some(-1)),
        v => Err(CoresetError::Malformed(format!("line {line}: label must be +1 or -1, got {v}"))),
    }
}

/// Writes `id,label,w,f1..fd`.
pub fn write_dataset_csv(path: &Path, data: &WeightedDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".into(), "w".into()];
    header.extend(features_header(data.dim()));
    w.write_record(&header)?;
    for p in data.points() {
        let mut rec = vec![p.id.to_string(), p.label.map_or(String::new(), |l| l.to_string()), p.weight.to_string()];
        rec.extend(p.features.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<WeightedDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 4 || cols[..3] != ["id", "label", "w"] {
        return Err(CoresetError::Malformed(format!(
            "{}: expected header id,label,w,f1..fd",
            path.display()
        )));
    }
    let mut pts = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| CoresetError::Malformed(format!("line {line}: bad id {:?}", &rec[0])))?;
        let label = parse_label(&rec[1], line)?;
        let weight = parse_f64(&rec[2], line, "weight")?;
        let features = rec.iter().skip(3).map(|f| parse_f64(f, line, "feature")).collect::<Result<Vec<_>>>()?;
        pts.push(WeightedPoint { id, features, label, weight });
    }
    let data = WeightedDataset::new(pts)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(p) = data.points().iter().find(|p| !seen.insert(p.id)) {
        return Err(CoresetError::DuplicateId(p.id));
    }
    Ok(data)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Writes the dataset CSV and its manifest next to it (`<stem>.json`).
pub fn write_dataset(path: &Path, data: &WeightedDataset) -> Result<DatasetManifest> {
    write_dataset_csv(path, data)?;
    let manifest = DatasetManifest { dim: data.dim(), n: data.len(), path: path.to_path_buf() };
    write_json(&path.with_extension("json"), &manifest)?;
    Ok(manifest)
}

/// Options for turning an arbitrary numeric CSV into the dataset format.
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub has_header: bool,
    /// Zero-based label column.
    pub label_col: Option<usize>,
    /// Raw label mapped to `+1`; anything else becomes `-1`. Without it labels must be `±1` or
    /// `0/1`.
    pub positive_class: Option<String>,
    /// Zero-based id column; ids default to the row number.
    pub id_col: Option<usize>,
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<WeightedDataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(opts.has_header).from_path(path)?;
    let mut pts = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut features = Vec::with_capacity(rec.len());
        let mut label = None;
        let mut id = row as u64;
        for (j, field) in rec.iter().enumerate() {
            if Some(j) == opts.label_col {
                let t = field.trim();
                label = Some(match &opts.positive_class {
                    Some(pos) => {
                        if t == pos {
                            1
                        } else {
                            -1
                        }
                    }
                    None => match parse_f64(t, line, "label")? {
                        1.0 => 1,
                        0.0 | -1.0 => -1,
                        v => {
                            return Err(CoresetError::Malformed(format!(
                                "line {line}: label {v} is not binary; pass a positive class"
                            )))
                        }
                    },
                });
            } else if Some(j) == opts.id_col {
                id = field
                    .trim()
                    .parse()
                    .map_err(|_| CoresetError::Malformed(format!("line {line}: bad id {field:?}")))?;
            } else {
                features.push(parse_f64(field, line, "feature")?);
            }
        }
        pts.push(WeightedPoint { id, features, label, weight: 1.0 });
    }
    let data = WeightedDataset::new(pts)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(p) = data.points().iter().find(|p| !seen.insert(p.id)) {
        return Err(CoresetError::DuplicateId(p.id));
    }
    Ok(data)
}

/// Sidecar written next to a coreset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetProvenance {
    pub builder: BuilderKind,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    pub source_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust: Option<crate::robust::RobustProvenance>,
}

/// Writes `id,w,f1..fd` plus a trailing `label` column when any point is labeled.
pub fn write_coreset_csv(path: &Path, points: &[WeightedPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = points.first().map_or(0, |p| p.features.len());
    let labeled = points.iter().any(|p| p.label.is_some());
    let mut header = vec!["id".to_string(), "w".into()];
    header.extend(features_header(dim));
    if labeled {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for p in points {
        let mut rec = vec![p.id.to_string(), p.weight.to_string()];
        rec.extend(p.features.iter().map(|v| v.to_string()));
        if labeled {
            rec.push(p.label.map_or(String::new(), |l| l.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coreset_csv(path: &Path) -> Result<Vec<WeightedPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "id" || &header[1] != "w" {
        return Err(CoresetError::Malformed(format!("{}: expected header id,w,f1..fd", path.display())));
    }
    let labeled = header.iter().next_back() == Some("label");
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| CoresetError::Malformed(format!("line {line}: bad id {:?}", &rec[0])))?;
        let weight = parse_f64(&rec[1], line, "weight")?;
        let end = if labeled { rec.len() - 1 } else { rec.len() };
        let features = (2..end).map(|j| parse_f64(&rec[j], line, "feature")).collect::<Result<Vec<_>>>()?;
        let label = if labeled { parse_label(&rec[rec.len() - 1], line)? } else { None };
        out.push(WeightedPoint { id, features, label, weight });
    }
    Ok(out)
}

/// Reads either a dataset CSV or a coreset CSV, telling them apart by the header.
pub fn read_points_any(path: &Path) -> Result<WeightedDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let is_coreset = r.headers()?.get(1) == Some("w");
    if is_coreset {
        WeightedDataset::new(read_coreset_csv(path)?)
    } else {
        read_dataset_csv(path)
    }
}

/// Writes the coreset CSV and `<stem>.provenance.json`.
pub fn write_coreset(path: &Path, coreset: &Coreset, seed: u64) -> Result<()> {
    write_coreset_csv(path, &coreset.points)?;
    let prov = CoresetProvenance {
        builder: coreset.builder,
        params: coreset.params.clone(),
        seed,
        source_size: coreset.source_size,
        robust: None,
    };
    write_json(&provenance_path(path), &prov)
}

pub fn provenance_path(path: &Path) -> PathBuf {
    path.with_extension("provenance.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySummary {
    #[serde(rename = "S")]
    pub total: f64,
    pub method: crate::sensitivity::SensitivityMethod,
    pub tol: f64,
}

/// Writes `id,s_i` and `<stem>.json` with the total and method.
pub fn write_sensitivity(path: &Path, profile: &SensitivityProfile, tol: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "s_i"])?;
    for (id, s) in profile.ids.iter().zip(&profile.s) {
        w.write_record([id.to_string(), s.to_string()])?;
    }
    w.flush()?;
    write_json(
        &path.with_extension("json"),
        &SensitivitySummary { total: profile.total, method: profile.method, tol },
    )
}

/// One JSON object per line; blank lines are skipped.
pub fn read_oplog(path: &Path) -> Result<Vec<Op>> {
    let f = BufReader::new(File::open(path)?);
    let mut ops = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        ops.push(
            serde_json::from_str(&line)
                .map_err(|e| CoresetError::Malformed(format!("op log line {}: {e}", i + 1)))?,
        );
    }
    Ok(ops)
}

pub fn write_oplog(path: &Path, ops: &[Op]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for op in ops {
        serde_json::to_writer(&mut f, op)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let data = WeightedDataset::new(vec![
            WeightedPoint::labeled(3, vec![1.5, -2.0], 1, 1.0),
            WeightedPoint::labeled(1, vec![0.1, 1e-17], -1, 2.5),
        ])
        .unwrap();
        let m = write_dataset(&p, &data).unwrap();
        assert_eq!((m.n, m.dim), (2, 2));
        assert_eq!(read_dataset_csv(&p).unwrap(), data);
        let back: DatasetManifest = read_json(&p.with_extension("json")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn coreset_round_trip_keeps_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let pts = vec![WeightedPoint::new(4, vec![1.0], 2.0), WeightedPoint::new(4, vec![1.0], 2.0)];
        write_coreset_csv(&p, &pts).unwrap();
        assert_eq!(read_coreset_csv(&p).unwrap(), pts);
        assert_eq!(read_points_any(&p).unwrap().len(), 2);
    }

    #[test]
    fn oplog_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ops.jsonl");
        std::fs::write(
            &p,
            "{\"op\":\"insert\",\"point\":{\"id\":9,\"features\":[1.0]}}\n\n{\"op\":\"changez\",\"dz\":-1}\n{\"op\":\"delete\",\"id\":9}\n",
        )
        .unwrap();
        let ops = read_oplog(&p).unwrap();
        assert_eq!(ops[0], Op::Insert { point: WeightedPoint::new(9, vec![1.0], 1.0) });
        assert_eq!(ops.len(), 3);
        write_oplog(&p, &ops).unwrap();
        assert_eq!(read_oplog(&p).unwrap(), ops);
        std::fs::write(&p, "{\"op\":\"jump\"}\n").unwrap();
        assert!(matches!(read_oplog(&p), Err(CoresetError::Malformed(_))));
    }

    #[test]
    fn ingest_maps_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.csv");
        std::fs::write(&p, "a,b,y\n1,2,0\n3,4,1\n").unwrap();
        let d = ingest_csv(&p, &IngestOptions { has_header: true, label_col: Some(2), ..Default::default() }).unwrap();
        assert_eq!(d.points()[0].label, Some(-1));
        assert_eq!(d.points()[1].features, vec![3.0, 4.0]);
        std::fs::write(&p, "1,2,x\n").unwrap();
        assert!(ingest_csv(&p, &IngestOptions { label_col: Some(2), ..Default::default() }).is_err());
    }
}
