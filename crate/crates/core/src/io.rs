//! On-disk formats: JSON for measures, functions, shifts and reports, CSV for
//! study output. Node keys are `"level,index"` strings throughout.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicTree, NodeId};
use crate::error::{Error, Result};
use crate::experiments::StudyRow;
use crate::martingale::StepFunction;
use crate::measure::MeasureTree;
use crate::shift::{CanonicalShift, GeneralShift, Shift, ShiftShape, ShiftTerm};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootInterval {
    pub origin: f64,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    pub root: RootInterval,
    pub depth: usize,
    pub leaf_masses: Vec<f64>,
}

impl MeasureFile {
    pub fn from_measure(mu: &MeasureTree) -> Self {
        let tree = mu.tree();
        MeasureFile {
            root: RootInterval {
                origin: tree.origin(),
                length: tree.length(),
            },
            depth: tree.depth(),
            leaf_masses: mu.leaf_masses().to_vec(),
        }
    }

    pub fn into_measure(self) -> Result<MeasureTree> {
        let tree = DyadicTree::with_geometry(self.depth, self.root.origin, self.root.length)?;
        MeasureTree::from_leaf_masses(tree, self.leaf_masses)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionFile {
    pub depth: usize,
    pub leaf_values: Vec<f64>,
}

impl FunctionFile {
    pub fn from_function(f: &StepFunction) -> Self {
        FunctionFile {
            depth: f.depth(),
            leaf_values: f.values().to_vec(),
        }
    }

    pub fn into_function(self) -> Result<StepFunction> {
        if self.leaf_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("function values must be finite".into()));
        }
        StepFunction::new(self.depth, self.leaf_values)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftFile {
    Canonical {
        m: usize,
        s: usize,
        n: usize,
        t: usize,
        alphas: BTreeMap<NodeId, f64>,
    },
    General {
        r: usize,
        s: usize,
        terms: Vec<ShiftTerm>,
    },
    Petermichl,
}

impl ShiftFile {
    pub fn build(&self, tree: &DyadicTree) -> Result<Shift> {
        Ok(match self {
            ShiftFile::Canonical { m, s, n, t, alphas } => {
                CanonicalShift::new(tree, (*m, *s), (*n, *t), alphas.clone())?.into()
            }
            ShiftFile::General { r, s, terms } => {
                GeneralShift::new(tree, ShiftShape { r: *r, s: *s }, terms.clone())?.into()
            }
            ShiftFile::Petermichl => GeneralShift::petermichl(tree)?.into(),
        })
    }

    pub fn from_general(shift: &GeneralShift) -> Self {
        let shape = shift.shape();
        ShiftFile::General {
            r: shape.r,
            s: shape.s,
            terms: shift.terms().to_vec(),
        }
    }

    pub fn from_canonical(shift: &CanonicalShift) -> Self {
        let (m, s) = shift.read_selector();
        let (n, t) = shift.write_selector();
        ShiftFile::Canonical {
            m,
            s,
            n,
            t,
            alphas: shift.alphas().clone(),
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable value");
    text.push('\n');
    text
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

pub const STUDY_COLUMNS: [&str; 7] = [
    "family",
    "depth",
    "seed",
    "balanced_constant",
    "norm_pair",
    "estimate",
    "witness_file",
];

/// Writes study rows as CSV. With `witness_dir`, each row's witness is
/// saved there as a function file and referenced (relative to the CSV) in
/// the `witness_file` column; otherwise the column is empty.
pub fn write_study_csv<W: Write>(out: W, rows: &[StudyRow], witness_dir: Option<(&Path, &str)>) -> Result<()> {
    let csv_error = |e: csv::Error| Error::Io(format!("cannot write CSV: {e}"));
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(STUDY_COLUMNS).map_err(csv_error)?;
    for row in rows {
        let witness_file = match (witness_dir, &row.witness) {
            (Some((dir, prefix)), Some(w)) => {
                let name = row.witness_name();
                write_json(&dir.join(&name), &FunctionFile::from_function(w))?;
                format!("{prefix}{name}")
            }
            _ => String::new(),
        };
        writer
            .write_record([
                row.family.clone(),
                row.depth.to_string(),
                row.seed.to_string(),
                format_float(row.balanced_constant),
                row.norm_pair.clone(),
                format_float(row.estimate),
                witness_file,
            ])
            .map_err(csv_error)?;
    }
    writer.flush().map_err(|e| Error::Io(format!("cannot write CSV: {e}")))
}

/// Shortest representation that round-trips.
fn format_float(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Deserialize)]
pub struct StudyRecord {
    pub family: String,
    pub depth: usize,
    pub seed: u64,
    pub balanced_constant: f64,
    pub norm_pair: String,
    pub estimate: f64,
    pub witness_file: String,
}

pub fn read_study_csv(path: &Path) -> Result<Vec<StudyRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<StudyRecord>, _>>()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
