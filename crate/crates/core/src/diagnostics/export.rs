use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KgeError, Result};
use crate::model::KgeModel;
use crate::scalar::Scalar;
use crate::transform::OperatorKind;

pub const HISTOGRAM_HEADER: [&str; 5] = ["component", "side", "bin_left", "bin_right", "count"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub component: String,
    pub side: String,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: usize,
}

fn histogram(component: &str, side: &str, values: &[f64], bins: usize) -> Vec<HistogramRow> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let row = |l: f64, r: f64, count: usize| HistogramRow {
        component: component.to_string(),
        side: side.to_string(),
        bin_left: l,
        bin_right: r,
        count,
    };
    if lo == hi {
        return vec![row(lo, hi, values.len())];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let right = if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width };
            row(lo + i as f64 * width, right, c)
        })
        .collect()
}

/// Binned translation, scale and angle values of one relation, per side.
/// Only operators present in the chains are exported; shared angles are
/// reported once with side `shared`. Each range is split into `bins` equal
/// bins between its min and max, or one bin when all values coincide.
pub fn export_relation_histograms<T: Scalar>(model: &KgeModel<T>, relation: u32, bins: usize) -> Result<Vec<HistogramRow>> {
    if bins == 0 {
        return Err(KgeError::invalid("histogram needs at least one bin"));
    }
    let r = model
        .relations
        .get(relation as usize)
        .ok_or_else(|| KgeError::invalid(format!("relation id {relation} out of range")))?;
    let spec = &model.spec;
    let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let mut rows = Vec::new();
    let sides = [("head", &spec.head_chain, &r.head), ("tail", &spec.tail_chain, &r.tail)];
    for (side, chain, params) in sides {
        if chain.contains(OperatorKind::Translation) {
            rows.extend(histogram("translation", side, &f(&params.translation), bins));
        }
        if chain.contains(OperatorKind::Scaling) {
            rows.extend(histogram("scale", side, &f(&params.scale), bins));
        }
        if chain.contains(OperatorKind::Rotation) {
            if r.shared_rotation {
                if side == "head" || !spec.head_chain.contains(OperatorKind::Rotation) {
                    rows.extend(histogram("angle", "shared", &f(&r.head.angles), bins));
                }
            } else {
                rows.extend(histogram("angle", side, &f(&params.angles), bins));
            }
        }
    }
    Ok(rows)
}

pub fn write_histograms_csv(rows: &[HistogramRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `name<TAB>label` lines.
pub fn load_entity_labels(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, label) = line.split_once('\t').ok_or_else(|| KgeError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected `name<TAB>label`".to_string(),
        })?;
        out.insert(name.to_string(), label.to_string());
    }
    Ok(out)
}

/// Entity embedding table as read back from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingExport {
    pub names: Vec<String>,
    pub dim: usize,
    /// Row-major values.
    pub values: Vec<f64>,
    /// Per-entity labels (empty string when unlabeled), if a label column exists.
    pub labels: Option<Vec<String>>,
}

/// Writes `entity_name,dim_0..dim_{d-1}[,label]`. Labels for unknown
/// entities and entities without a label are logged and left empty.
pub fn export_entity_embeddings<T: Scalar>(
    model: &KgeModel<T>,
    names: &[String],
    labels: Option<&HashMap<String, String>>,
    path: &Path,
) -> Result<()> {
    if names.len() != model.entity_count() {
        return Err(KgeError::invalid(format!(
            "{} names for {} entities",
            names.len(),
            model.entity_count()
        )));
    }
    let d = model.dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["entity_name".to_string()];
    header.extend((0..d).map(|i| format!("dim_{i}")));
    if labels.is_some() {
        header.push("label".to_string());
    }
    w.write_record(&header)?;
    let mut unlabeled = 0usize;
    for (i, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(model.entities.row(i).iter().map(|x| x.as_f64().to_string()));
        if let Some(map) = labels {
            match map.get(name) {
                Some(l) => rec.push(l.clone()),
                None => {
                    unlabeled += 1;
                    rec.push(String::new());
                }
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let Some(map) = labels {
        let known: std::collections::HashSet<&String> = names.iter().collect();
        let unknown = map.keys().filter(|k| !known.contains(k)).count();
        if unknown > 0 {
            log::warn!("{unknown} labels refer to entities not in the model");
        }
        if unlabeled > 0 {
            log::warn!("{unlabeled} entities have no label");
        }
    }
    Ok(())
}

pub fn load_entity_embeddings(path: &Path) -> Result<EmbeddingExport> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let has_label = header.iter().last() == Some("label");
    let dim = header.len() - 1 - usize::from(has_label);
    let mut out = EmbeddingExport {
        names: Vec::new(),
        dim,
        values: Vec::new(),
        labels: has_label.then(Vec::new),
    };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| KgeError::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        out.names.push(rec[0].to_string());
        for j in 0..dim {
            let v = rec[j + 1]
                .parse::<f64>()
                .map_err(|e| bad(format!("column dim_{j}: {e}")))?;
            out.values.push(v);
        }
        if let Some(labels) = out.labels.as_mut() {
            labels.push(rec[dim + 1].to_string());
        }
    }
    Ok(out)
}
