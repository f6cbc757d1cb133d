//! CSV interchange formats.
//!
//! Dataset CSV: UTF-8, '.' decimal separator, a header row of attribute
//! names, then one data row per record. Workload CSV: no header, one query
//! per row with `d_pred` value columns, optionally followed by `output_dim`
//! label columns. Values are written with Rust's shortest round-trip float
//! formatting, so writing and re-reading reproduces bit-identical numbers.

use crate::data::{
    clamp_axis_range_bounds, Dataset, PredicateSpec, QueryFunctionSpec, QueryInstance,
    QueryVariant, Workload,
};
use crate::error::{Error, Result};
use std::path::Path;

pub fn write_dataset_csv(path: &Path, dataset: &Dataset, names: Option<&[String]>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let header: Vec<String> = match names {
        Some(names) => {
            if names.len() != dataset.d() {
                return Err(Error::InvalidInput(format!(
                    "{} attribute names for d={}",
                    names.len(),
                    dataset.d()
                )));
            }
            names.to_vec()
        }
        None => (0..dataset.d()).map(|i| format!("x{i}")).collect(),
    };
    writer.write_record(&header)?;
    for row in dataset.rows() {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<(Dataset, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let names: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let d = names.len();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != d {
            return Err(Error::Csv(format!(
                "row {} has {} fields, header has {d}",
                line + 2,
                record.len()
            )));
        }
        for field in record.iter() {
            values.push(parse_f64(field, line + 2)?);
        }
    }
    Ok((Dataset::from_flat(values, d)?, names))
}

pub fn write_workload_csv(path: &Path, workload: &Workload) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for (i, q) in workload.queries.iter().enumerate() {
        let mut record: Vec<String> = q.values().iter().map(|v| v.to_string()).collect();
        if let Some(labels) = &workload.labels {
            record.extend(labels[i].iter().map(|v| v.to_string()));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a workload for a known spec. Rows must have `d_pred` columns
/// (unlabeled) or `d_pred + output_dim` columns (labeled). Infinite axis
/// range bounds are accepted when a dataset is supplied to clamp them.
pub fn read_workload_csv(
    path: &Path,
    spec: &QueryFunctionSpec,
    clamp_against: Option<&Dataset>,
) -> Result<Workload> {
    let d_pred = spec.d_pred();
    let out_dim = spec.output_dim();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut queries = Vec::new();
    let mut labels: Vec<Vec<f64>> = Vec::new();
    let mut labeled: Option<bool> = None;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let is_labeled = match record.len() {
            n if n == d_pred => false,
            n if n == d_pred + out_dim => true,
            n => {
                return Err(Error::Csv(format!(
                    "row {} has {n} fields, expected {d_pred} or {}",
                    line + 1,
                    d_pred + out_dim
                )))
            }
        };
        if *labeled.get_or_insert(is_labeled) != is_labeled {
            return Err(Error::Csv("mixed labeled and unlabeled rows".into()));
        }
        let mut fields = Vec::with_capacity(record.len());
        for field in record.iter() {
            fields.push(parse_f64(field, line + 1)?);
        }
        let (qv, lv) = fields.split_at(d_pred);
        let mut qv = qv.to_vec();
        if qv.iter().any(|v| v.is_infinite()) {
            let QueryVariant::Raq {
                predicate: PredicateSpec::AxisRange { active },
                ..
            } = &spec.variant
            else {
                return Err(Error::Csv(format!(
                    "row {}: infinite values only allowed for axis-range bounds",
                    line + 1
                )));
            };
            let Some(ds) = clamp_against else {
                return Err(Error::Csv(format!(
                    "row {}: infinite bounds need a dataset to clamp against",
                    line + 1
                )));
            };
            clamp_axis_range_bounds(&mut qv, active, ds.domains());
        }
        queries.push(QueryInstance::new(qv)?);
        if is_labeled {
            labels.push(lv.to_vec());
        }
    }
    if queries.is_empty() {
        return Err(Error::Csv("workload file has no rows".into()));
    }
    let labels = if labeled == Some(true) { Some(labels) } else { None };
    Workload::new(spec.clone(), queries, labels)
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Csv(format!("line {line}: '{field}' is not a number")))
}
