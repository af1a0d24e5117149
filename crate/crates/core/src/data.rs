//! Labelled collections of matrix covariates and their on-disk formats.
//!
//! JSON layout: `{"p":..,"q":..,"labels":[..],"matrices":[[[row]..]..]}` with each
//! matrix given as a list of `p` rows of `q` values. A `num_classes` key marks a
//! multi-class file (labels `1..=H`); an optional `ids` key carries subject ids.
//!
//! CSV layout: header `y,x_1_1,x_2_1,...,x_p_q`, covariates stacked column by
//! column (the same order as `vec`).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MvError, Result};

/// `n` labelled `p x q` covariate matrices with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixDataset {
    p: usize,
    q: usize,
    matrices: Vec<DMatrix<f64>>,
    labels: Vec<u8>,
    ids: Option<Vec<String>>,
}

fn check_matrices(matrices: &[DMatrix<f64>]) -> Result<(usize, usize)> {
    let first = matrices
        .first()
        .ok_or_else(|| MvError::InvalidInput("dataset needs at least one sample".into()))?;
    let (p, q) = first.shape();
    if p == 0 || q == 0 {
        return Err(MvError::InvalidInput("covariate matrices must be non-empty".into()));
    }
    for (i, m) in matrices.iter().enumerate() {
        if m.shape() != (p, q) {
            return Err(MvError::dims(
                format!("{p}x{q}"),
                format!("{}x{} (sample {i})", m.nrows(), m.ncols()),
            ));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(MvError::InvalidInput(format!("sample {i} has non-finite entries")));
        }
    }
    Ok((p, q))
}

impl MatrixDataset {
    pub fn new(matrices: Vec<DMatrix<f64>>, labels: Vec<u8>) -> Result<Self> {
        let (p, q) = check_matrices(&matrices)?;
        if labels.len() != matrices.len() {
            return Err(MvError::dims(
                format!("{} labels", matrices.len()),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(MvError::InvalidInput(format!("binary label {bad} is not 0/1")));
        }
        Ok(Self { p, q, matrices, labels, ids: None })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n() {
            return Err(MvError::dims(format!("{} ids", self.n()), format!("{} ids", ids.len())));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.matrices.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Subject id for sample `i`, falling back to its 1-based position.
    pub fn id(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => (i + 1).to_string(),
        }
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Same labels and ids, new covariates (which may change `p`, `q`).
    pub fn with_matrices(&self, matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut out = Self::new(matrices, self.labels.clone())?;
        out.ids = self.ids.clone();
        Ok(out)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            p: self.p,
            q: self.q,
            matrices: indices.iter().map(|&i| self.matrices[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: self
                .ids
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect()),
        }
    }

    /// Column-major `vec(X_i)` stacked as rows of an `n x pq` matrix.
    pub fn vectorized(&self) -> DMatrix<f64> {
        let pq = self.p * self.q;
        DMatrix::from_fn(self.n(), pq, |i, k| self.matrices[i].as_slice()[k])
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        DatasetFile::load(path)?.into_binary()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        DatasetFile::from_binary(self).save(path)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&DatasetFile::from_binary(self))?)
    }

    /// Reads the CSV layout described in the module docs.
    pub fn from_csv_reader<R: std::io::Read>(reader: R, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let parse_err = |line: usize, reason: String| MvError::Parse {
            file: source.to_string(),
            line,
            reason,
        };
        let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        if headers.get(0) != Some("y") {
            return Err(parse_err(1, "first column must be `y`".into()));
        }
        let mut cells = Vec::with_capacity(headers.len() - 1);
        for h in headers.iter().skip(1) {
            let idx = h
                .strip_prefix("x_")
                .and_then(|rest| rest.split_once('_'))
                .and_then(|(i, j)| Some((i.parse::<usize>().ok()?, j.parse::<usize>().ok()?)))
                .filter(|&(i, j)| i >= 1 && j >= 1)
                .ok_or_else(|| parse_err(1, format!("bad covariate header `{h}`")))?;
            cells.push(idx);
        }
        let p = cells.iter().map(|c| c.0).max().unwrap_or(0);
        let q = cells.iter().map(|c| c.1).max().unwrap_or(0);
        if p * q != cells.len() {
            return Err(parse_err(1, format!("{} covariate columns for a {p}x{q} layout", cells.len())));
        }
        for (k, &(i, j)) in cells.iter().enumerate() {
            if (i - 1) + (j - 1) * p != k {
                return Err(parse_err(1, format!("column x_{i}_{j} is out of column-major order")));
            }
        }
        let mut matrices = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
            let values: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(line, e.to_string()))?;
            let y = values[0];
            if y != 0.0 && y != 1.0 {
                return Err(parse_err(line, format!("label {y} is not 0/1")));
            }
            labels.push(y as u8);
            matrices.push(DMatrix::from_column_slice(p, q, &values[1..]));
        }
        Self::new(matrices, labels)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| MvError::io(path, e))?;
        Self::from_csv_reader(file, &path.display().to_string())
    }

    /// Dispatches on extension: `.csv` or JSON otherwise.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::load_csv(path),
            _ => Self::load_json(path),
        }
    }
}

/// `n` labelled matrices with class labels `1..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiClassDataset {
    p: usize,
    q: usize,
    num_classes: usize,
    matrices: Vec<DMatrix<f64>>,
    labels: Vec<usize>,
}

impl MultiClassDataset {
    pub fn new(matrices: Vec<DMatrix<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (p, q) = check_matrices(&matrices)?;
        if num_classes < 2 {
            return Err(MvError::InvalidInput("need at least two classes".into()));
        }
        if labels.len() != matrices.len() {
            return Err(MvError::dims(
                format!("{} labels", matrices.len()),
                format!("{} labels", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y == 0 || y > num_classes) {
            return Err(MvError::InvalidInput(format!("class label {bad} outside 1..={num_classes}")));
        }
        Ok(Self { p, q, num_classes, matrices, labels })
    }

    pub fn n(&self) -> usize {
        self.matrices.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// One-vs-rest binarization: label 1 iff the class equals `class`.
    pub fn one_vs_rest(&self, class: usize) -> MatrixDataset {
        MatrixDataset {
            p: self.p,
            q: self.q,
            matrices: self.matrices.clone(),
            labels: self.labels.iter().map(|&y| u8::from(y == class)).collect(),
            ids: None,
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        DatasetFile::load(path)?.into_multiclass()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        DatasetFile {
            p: self.p,
            q: self.q,
            num_classes: Some(self.num_classes),
            labels: self.labels.iter().map(|&y| y as u32).collect(),
            matrices: self.matrices.iter().map(rows_of).collect(),
            ids: None,
        }
        .save(path)
    }
}

/// Rows of `m`, top to bottom.
pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Inverse of [`rows_of`]; rejects ragged or empty input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(MvError::InvalidInput("matrix rows must be non-empty and of equal length".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// Serde adapter writing a matrix as a list of rows.
pub mod row_major {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        super::rows_of(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::matrix_from_rows(&rows).map_err(D::Error::custom)
    }

    /// The same for optional matrices.
    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
            m.as_ref().map(super::super::rows_of).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<DMatrix<f64>>, D::Error> {
            Option::<Vec<Vec<f64>>>::deserialize(d)?
                .map(|rows| super::super::matrix_from_rows(&rows).map_err(D::Error::custom))
                .transpose()
        }
    }
}

/// Serialized form shared by binary and multi-class datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub p: usize,
    pub q: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub labels: Vec<u32>,
    pub matrices: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
}

impl DatasetFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MvError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| MvError::io(path, e))
    }

    pub fn is_multiclass(&self) -> bool {
        self.num_classes.is_some()
    }

    fn matrices(&self) -> Result<Vec<DMatrix<f64>>> {
        self.matrices
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                if rows.len() != self.p || rows.iter().any(|r| r.len() != self.q) {
                    return Err(MvError::dims(
                        format!("{}x{}", self.p, self.q),
                        format!("ragged matrix at sample {i}"),
                    ));
                }
                Ok(DMatrix::from_fn(self.p, self.q, |r, c| rows[r][c]))
            })
            .collect()
    }

    pub fn from_binary(data: &MatrixDataset) -> Self {
        Self {
            p: data.p,
            q: data.q,
            num_classes: None,
            labels: data.labels.iter().map(|&y| y as u32).collect(),
            matrices: data.matrices.iter().map(rows_of).collect(),
            ids: data.ids.clone(),
        }
    }

    pub fn into_binary(self) -> Result<MatrixDataset> {
        if let Some(h) = self.num_classes {
            if h != 2 {
                return Err(MvError::InvalidInput(format!("expected a binary dataset, found {h} classes")));
            }
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(MvError::InvalidInput("binary labels must be 0/1".into()));
        }
        let data = MatrixDataset::new(self.matrices()?, self.labels.iter().map(|&y| y as u8).collect())?;
        match self.ids {
            Some(ids) => data.with_ids(ids),
            None => Ok(data),
        }
    }

    pub fn into_multiclass(self) -> Result<MultiClassDataset> {
        let h = self
            .num_classes
            .ok_or_else(|| MvError::InvalidInput("multi-class file needs `num_classes`".into()))?;
        MultiClassDataset::new(self.matrices()?, self.labels.iter().map(|&y| y as usize).collect(), h)
    }
}
