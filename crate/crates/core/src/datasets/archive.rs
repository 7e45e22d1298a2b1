//! Dataset directory: `complex.json`, `signals.bin` with its shape manifest
//! `signals.json`, `labels.csv`, `splits.json`, `meta.json` and, when
//! samples are re-oriented, `orientations.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::complex::SimplicialComplex;
use crate::dense::Mat;
use crate::error::{GsanError, Result};
use crate::filters::CochainBundle;

use super::{DatasetParams, Labels, Split, TaskDataset, TaskKind};

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    task: TaskKind,
    seed: u64,
    params: DatasetParams,
    sizes: Vec<usize>,
    #[serde(default)]
    betti: Option<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalShapes {
    format_version: u32,
    dtype: String,
    samples: usize,
    width: usize,
    sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelMeta {
    kind: String,
    order: Option<usize>,
}

fn csv_err(e: csv::Error) -> GsanError {
    GsanError::Io(e.to_string())
}

/// Writes the archive; `betti` (one entry per order) is recorded in `meta.json` when given.
pub fn write_archive(dir: &Path, d: &TaskDataset, betti: Option<Vec<usize>>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("complex.json"), d.complex.to_json())?;
    let sizes = d.complex.sizes();
    let width = d.inputs.first().map_or(0, |b| b.width());
    let mut bytes = Vec::new();
    for b in &d.inputs {
        if b.width() != width {
            return Err(GsanError::ShapeError("inputs differ in width".into()));
        }
        for m in b.orders() {
            bytes.extend(m.as_slice().iter().flat_map(|x| x.to_le_bytes()));
        }
    }
    fs::write(dir.join("signals.bin"), bytes)?;
    let shapes = SignalShapes {
        format_version: ARCHIVE_VERSION,
        dtype: "f64-le".into(),
        samples: d.inputs.len(),
        width,
        sizes: sizes.clone(),
    };
    fs::write(dir.join("signals.json"), serde_json::to_string_pretty(&shapes)?)?;

    let mut w = csv::Writer::from_path(dir.join("labels.csv")).map_err(csv_err)?;
    match &d.labels {
        Labels::Classes { labels } => {
            w.write_record(["sample", "label"]).map_err(csv_err)?;
            for (i, l) in labels.iter().enumerate() {
                w.write_record([i.to_string(), l.to_string()]).map_err(csv_err)?;
            }
        }
        Labels::Values { values, .. } => {
            let mask = d.mask.as_ref();
            w.write_record(["simplex", "value", "observed"]).map_err(csv_err)?;
            for (i, v) in values.iter().enumerate() {
                let obs = mask.is_none_or(|m| m[i]);
                w.write_record([i.to_string(), format!("{v:?}"), (obs as u8).to_string()])
                    .map_err(csv_err)?;
            }
        }
        Labels::Candidates { simplices, labels, .. } => {
            w.write_record(["candidate", "vertices", "label"]).map_err(csv_err)?;
            for (i, (s, l)) in simplices.iter().zip(labels).enumerate() {
                let verts: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                w.write_record([i.to_string(), verts.join(" "), l.to_string()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    let label_meta = match &d.labels {
        Labels::Classes { .. } => LabelMeta {
            kind: "classes".into(),
            order: None,
        },
        Labels::Values { order, .. } => LabelMeta {
            kind: "values".into(),
            order: Some(*order),
        },
        Labels::Candidates { order, .. } => LabelMeta {
            kind: "candidates".into(),
            order: Some(*order),
        },
    };
    fs::write(dir.join("labels.json"), serde_json::to_string_pretty(&label_meta)?)?;
    fs::write(dir.join("splits.json"), serde_json::to_string(&d.split)?)?;
    if !d.orientations.is_empty() {
        fs::write(dir.join("orientations.json"), serde_json::to_string(&d.orientations)?)?;
    }
    let meta = Meta {
        format_version: ARCHIVE_VERSION,
        task: d.task(),
        seed: d.seed,
        params: d.params.clone(),
        sizes,
        betti,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| GsanError::Parse(format!("labels.csv: bad {what} `{s}`")))
}

pub fn read_archive(dir: &Path) -> Result<TaskDataset> {
    let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    if meta.format_version != ARCHIVE_VERSION {
        return Err(GsanError::Parse(format!(
            "archive format version {} (expected {ARCHIVE_VERSION})",
            meta.format_version
        )));
    }
    let complex = SimplicialComplex::from_json(&fs::read_to_string(dir.join("complex.json"))?)?;
    let sizes = complex.sizes();
    let shapes: SignalShapes = serde_json::from_str(&fs::read_to_string(dir.join("signals.json"))?)?;
    if shapes.sizes != sizes {
        return Err(GsanError::ShapeError("signal shapes differ from the complex".into()));
    }
    let bytes = fs::read(dir.join("signals.bin"))?;
    let per_sample: usize = sizes.iter().sum::<usize>() * shapes.width;
    if bytes.len() != 8 * per_sample * shapes.samples {
        return Err(GsanError::ShapeError("signals.bin length differs from its manifest".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut inputs = Vec::with_capacity(shapes.samples);
    let mut at = 0;
    for _ in 0..shapes.samples {
        let mut orders = Vec::with_capacity(sizes.len());
        for &n in &sizes {
            let len = n * shapes.width;
            orders.push(Mat::from_vec(n, shapes.width, values[at..at + len].to_vec())?);
            at += len;
        }
        inputs.push(CochainBundle::new(orders)?);
    }

    let label_meta: LabelMeta = serde_json::from_str(&fs::read_to_string(dir.join("labels.json"))?)?;
    let mut r = csv::Reader::from_path(dir.join("labels.csv")).map_err(csv_err)?;
    let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    let mut mask = None;
    let labels = match label_meta.kind.as_str() {
        "classes" => Labels::Classes {
            labels: rows.iter().map(|r| parse(&r[1], "label")).collect::<Result<_>>()?,
        },
        "values" => {
            let values = rows.iter().map(|r| parse(&r[1], "value")).collect::<Result<_>>()?;
            let m: Vec<bool> = rows
                .iter()
                .map(|r| parse::<u8>(&r[2], "observed flag").map(|x| x == 1))
                .collect::<Result<_>>()?;
            mask = Some(m);
            Labels::Values {
                order: label_meta.order.unwrap_or(1),
                values,
            }
        }
        "candidates" => {
            let simplices = rows
                .iter()
                .map(|r| r[1].split_whitespace().map(|v| parse(v, "vertex")).collect::<Result<Vec<usize>>>())
                .collect::<Result<_>>()?;
            Labels::Candidates {
                order: label_meta.order.unwrap_or(2),
                simplices,
                labels: rows.iter().map(|r| parse(&r[2], "label")).collect::<Result<_>>()?,
            }
        }
        other => return Err(GsanError::Parse(format!("unknown label kind `{other}`"))),
    };
    let split: Split = serde_json::from_str(&fs::read_to_string(dir.join("splits.json"))?)?;
    let orient_path = dir.join("orientations.json");
    let orientations: BTreeMap<usize, Vec<f64>> = if orient_path.exists() {
        serde_json::from_str(&fs::read_to_string(orient_path)?)?
    } else {
        BTreeMap::new()
    };
    let d = TaskDataset {
        params: meta.params,
        seed: meta.seed,
        complex,
        inputs,
        labels,
        mask,
        orientations,
        split,
    };
    d.check()?;
    Ok(d)
}
