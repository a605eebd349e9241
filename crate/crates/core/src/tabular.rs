//! Tabular ingest: role schema, CSV loading and z-score standardization.
//!
//! A dataset is a header-bearing CSV plus a role schema that assigns each
//! column to the outcome, one of the two planar coordinates, the burden block
//! or the capacity block. Column order inside each block follows the schema,
//! which fixes the covariate index `j` used everywhere downstream.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthetic::GroundTruthFields;

/// Column roles. The optional `regime` column carries integer labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSchema {
    pub outcome: String,
    pub coord_x: String,
    pub coord_y: String,
    pub burden_cols: Vec<String>,
    pub capacity_cols: Vec<String>,
    #[serde(default)]
    pub regime_col: Option<String>,
}

impl RoleSchema {
    pub fn new(
        outcome: impl Into<String>,
        coord_x: impl Into<String>,
        coord_y: impl Into<String>,
        burden_cols: Vec<String>,
        capacity_cols: Vec<String>,
    ) -> Result<Self> {
        let schema = RoleSchema {
            outcome: outcome.into(),
            coord_x: coord_x.into(),
            coord_y: coord_y.into(),
            burden_cols,
            capacity_cols,
            regime_col: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn with_regime(mut self, col: impl Into<String>) -> Result<Self> {
        self.regime_col = Some(col.into());
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.burden_cols.is_empty() {
            return Err(Error::Schema("burden block is empty".into()));
        }
        if self.capacity_cols.is_empty() {
            return Err(Error::Schema("capacity block is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in self.all_columns() {
            if name.is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !seen.insert(name) {
                return Err(Error::Schema(format!(
                    "column `{name}` is assigned to more than one role"
                )));
            }
        }
        Ok(())
    }

    fn all_columns(&self) -> impl Iterator<Item = &str> {
        [&self.outcome, &self.coord_x, &self.coord_y]
            .into_iter()
            .chain(self.burden_cols.iter())
            .chain(self.capacity_cols.iter())
            .chain(self.regime_col.iter())
            .map(String::as_str)
    }

    /// Parses the `key = value` config format. Recognised keys are
    /// `outcome`, `coord_x`, `coord_y`, `burden`, `capacity` (comma-separated
    /// lists) and the optional `regime`. Lines starting with `#` are comments.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut outcome = None;
        let mut cx = None;
        let mut cy = None;
        let mut burden = None;
        let mut capacity = None;
        let mut regime = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let value = value.trim();
            let list = || -> Vec<String> {
                value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            };
            match key.trim() {
                "outcome" => outcome = Some(value.to_string()),
                "coord_x" => cx = Some(value.to_string()),
                "coord_y" => cy = Some(value.to_string()),
                "burden" => burden = Some(list()),
                "capacity" => capacity = Some(list()),
                "regime" => regime = Some(value.to_string()),
                other => {
                    return Err(Error::Schema(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        let need = |v: Option<String>, key: &str| {
            v.ok_or_else(|| Error::Schema(format!("missing key `{key}`")))
        };
        let mut schema = RoleSchema {
            outcome: need(outcome, "outcome")?,
            coord_x: need(cx, "coord_x")?,
            coord_y: need(cy, "coord_y")?,
            burden_cols: burden.ok_or_else(|| Error::Schema("missing key `burden`".into()))?,
            capacity_cols: capacity
                .ok_or_else(|| Error::Schema("missing key `capacity`".into()))?,
            regime_col: None,
        };
        schema.regime_col = regime;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_config(&text)
    }

    pub fn to_config(&self) -> String {
        let mut out = format!(
            "outcome = {}\ncoord_x = {}\ncoord_y = {}\nburden = {}\ncapacity = {}\n",
            self.outcome,
            self.coord_x,
            self.coord_y,
            self.burden_cols.join(","),
            self.capacity_cols.join(",")
        );
        if let Some(r) = &self.regime_col {
            out.push_str(&format!("regime = {r}\n"));
        }
        out
    }

    pub fn p_burden(&self) -> usize {
        self.burden_cols.len()
    }

    pub fn p_capacity(&self) -> usize {
        self.capacity_cols.len()
    }
}

/// Observations on `N` spatial units.
///
/// `node_ids` records each row's index in the dataset it was loaded or
/// generated as; subsets keep the original ids so that fold bookkeeping and
/// leakage audits can refer to a single node numbering.
#[derive(Debug, Clone)]
pub struct SpatialDataset<T> {
    pub coords: Array2<T>,
    pub x_burden: Array2<T>,
    pub x_capacity: Array2<T>,
    pub y: Array1<T>,
    pub regime_labels: Option<Vec<i64>>,
    pub truth: Option<GroundTruthFields>,
    pub node_ids: Vec<usize>,
    pub burden_names: Vec<String>,
    pub capacity_names: Vec<String>,
}

impl<T: Scalar> SpatialDataset<T> {
    pub fn new(
        coords: Array2<T>,
        x_burden: Array2<T>,
        x_capacity: Array2<T>,
        y: Array1<T>,
    ) -> Result<Self> {
        let n = y.len();
        let burden_names = (0..x_burden.ncols()).map(|j| format!("e{}", j + 1)).collect();
        let capacity_names = (0..x_capacity.ncols())
            .map(|j| format!("s{}", j + 1))
            .collect();
        let ds = SpatialDataset {
            coords,
            x_burden,
            x_capacity,
            y,
            regime_labels: None,
            truth: None,
            node_ids: (0..n).collect(),
            burden_names,
            capacity_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::Dimension("dataset has no rows".into()));
        }
        if self.coords.dim() != (n, 2) {
            return Err(Error::Dimension(format!(
                "coords are {:?}, expected ({n}, 2)",
                self.coords.dim()
            )));
        }
        if self.x_burden.nrows() != n || self.x_capacity.nrows() != n {
            return Err(Error::Dimension("covariate rows differ from outcome length".into()));
        }
        if self.x_burden.ncols() != self.burden_names.len()
            || self.x_capacity.ncols() != self.capacity_names.len()
        {
            return Err(Error::Dimension("column names do not match block widths".into()));
        }
        if self.node_ids.len() != n {
            return Err(Error::Dimension("node id count differs from row count".into()));
        }
        if let Some(l) = &self.regime_labels {
            if l.len() != n {
                return Err(Error::Dimension("regime label count differs from row count".into()));
            }
        }
        let all_finite = self
            .coords
            .iter()
            .chain(self.x_burden.iter())
            .chain(self.x_capacity.iter())
            .chain(self.y.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn p_burden(&self) -> usize {
        self.x_burden.ncols()
    }

    pub fn p_capacity(&self) -> usize {
        self.x_capacity.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.p_burden() + self.p_capacity()
    }

    /// Burden names followed by capacity names: the covariate order `j`.
    pub fn covariate_names(&self) -> Vec<String> {
        self.burden_names
            .iter()
            .chain(self.capacity_names.iter())
            .cloned()
            .collect()
    }

    /// `[burden | capacity]` as one `N × p` matrix.
    pub fn covariates(&self) -> Array2<T> {
        ndarray::concatenate(Axis(1), &[self.x_burden.view(), self.x_capacity.view()])
            .expect("blocks share row count")
    }

    /// Rows `rows` (positions into this dataset) in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        SpatialDataset {
            coords: self.coords.select(Axis(0), rows),
            x_burden: self.x_burden.select(Axis(0), rows),
            x_capacity: self.x_capacity.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            regime_labels: self
                .regime_labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            truth: self.truth.as_ref().map(|t| t.subset(rows)),
            node_ids: rows.iter().map(|&r| self.node_ids[r]).collect(),
            burden_names: self.burden_names.clone(),
            capacity_names: self.capacity_names.clone(),
        }
    }

    /// Same dataset with a replaced outcome vector.
    pub fn with_outcome(&self, y: Array1<T>) -> Self {
        assert_eq!(y.len(), self.len());
        SpatialDataset {
            y,
            ..self.clone()
        }
    }

    pub fn cast<U: Scalar>(&self) -> SpatialDataset<U> {
        let conv = |v: &T| U::c(v.to_f64_lossy());
        SpatialDataset {
            coords: self.coords.map(conv),
            x_burden: self.x_burden.map(conv),
            x_capacity: self.x_capacity.map(conv),
            y: self.y.map(conv),
            regime_labels: self.regime_labels.clone(),
            truth: self.truth.clone(),
            node_ids: self.node_ids.clone(),
            burden_names: self.burden_names.clone(),
            capacity_names: self.capacity_names.clone(),
        }
    }

    /// Schema matching the column names this dataset carries.
    pub fn schema(&self, outcome: &str, coord_x: &str, coord_y: &str) -> RoleSchema {
        RoleSchema {
            outcome: outcome.into(),
            coord_x: coord_x.into(),
            coord_y: coord_y.into(),
            burden_cols: self.burden_names.clone(),
            capacity_cols: self.capacity_names.clone(),
            regime_col: self.regime_labels.as_ref().map(|_| "regime".to_string()),
        }
    }
}

/// Reads a header-bearing CSV and extracts the schema's columns in schema order.
pub fn load_dataset<T: Scalar>(
    csv_path: impl AsRef<Path>,
    schema: &RoleSchema,
) -> Result<SpatialDataset<T>> {
    let path = csv_path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema)
}

pub fn read_dataset<T: Scalar, R: std::io::Read>(
    reader: R,
    schema: &RoleSchema,
) -> Result<SpatialDataset<T>> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_idx = index_of(&schema.outcome)?;
    let cx_idx = index_of(&schema.coord_x)?;
    let cy_idx = index_of(&schema.coord_y)?;
    let b_idx = schema
        .burden_cols
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let s_idx = schema
        .capacity_cols
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let r_idx = schema.regime_col.as_deref().map(index_of).transpose()?;

    let mut ys = Vec::new();
    let mut coords = Vec::new();
    let mut xb = Vec::new();
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |idx: usize| -> Result<T> {
            let col = headers.get(idx).unwrap_or("").to_string();
            let raw = rec.get(idx).ok_or_else(|| Error::Parse {
                row,
                column: col.clone(),
                msg: "missing field".into(),
            })?;
            let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                row,
                column: col.clone(),
                msg: format!("`{raw}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: col,
                    msg: format!("non-finite value `{raw}`"),
                });
            }
            Ok(T::c(v))
        };
        ys.push(cell(y_idx)?);
        coords.push(cell(cx_idx)?);
        coords.push(cell(cy_idx)?);
        for &j in &b_idx {
            xb.push(cell(j)?);
        }
        for &j in &s_idx {
            xs.push(cell(j)?);
        }
        if let Some(j) = r_idx {
            let raw = rec.get(j).unwrap_or("");
            let label: i64 = raw.trim().parse().map_err(|_| Error::Parse {
                row,
                column: headers.get(j).unwrap_or("").to_string(),
                msg: format!("`{raw}` is not an integer label"),
            })?;
            labels.push(label);
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::Dimension("CSV has no data rows".into()));
    }
    let ds = SpatialDataset {
        coords: Array2::from_shape_vec((n, 2), coords).expect("shape"),
        x_burden: Array2::from_shape_vec((n, b_idx.len()), xb).expect("shape"),
        x_capacity: Array2::from_shape_vec((n, s_idx.len()), xs).expect("shape"),
        y: Array1::from(ys),
        regime_labels: r_idx.map(|_| labels),
        truth: None,
        node_ids: (0..n).collect(),
        burden_names: schema.burden_cols.clone(),
        capacity_names: schema.capacity_cols.clone(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the dataset as CSV with the schema's column names. Values use the
/// shortest round-trip decimal form, so reloading reproduces them exactly.
pub fn write_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    ds: &SpatialDataset<T>,
    schema: &RoleSchema,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_dataset_to(&mut buf, ds, schema)?;
    write_atomic(path, &buf)
}

pub fn write_dataset_to<T: Scalar, W: Write>(
    out: W,
    ds: &SpatialDataset<T>,
    schema: &RoleSchema,
) -> Result<()> {
    if schema.burden_cols.len() != ds.p_burden() || schema.capacity_cols.len() != ds.p_capacity()
    {
        return Err(Error::Schema("schema block widths differ from dataset".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        schema.outcome.clone(),
        schema.coord_x.clone(),
        schema.coord_y.clone(),
    ];
    header.extend(schema.burden_cols.iter().cloned());
    header.extend(schema.capacity_cols.iter().cloned());
    let with_regime = match (&schema.regime_col, &ds.regime_labels) {
        (Some(c), Some(_)) => {
            header.push(c.clone());
            true
        }
        _ => false,
    };
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec = vec![
            fmt_f64(ds.y[i].to_f64_lossy()),
            fmt_f64(ds.coords[[i, 0]].to_f64_lossy()),
            fmt_f64(ds.coords[[i, 1]].to_f64_lossy()),
        ];
        rec.extend(ds.x_burden.row(i).iter().map(|v| fmt_f64(v.to_f64_lossy())));
        rec.extend(ds.x_capacity.row(i).iter().map(|v| fmt_f64(v.to_f64_lossy())));
        if with_regime {
            rec.push(ds.regime_labels.as_ref().unwrap()[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `bytes` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Population z-score parameters `(mean, sd)` with the `÷N` denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScore<T> {
    pub mean: T,
    pub sd: T,
}

impl<T: Scalar> ZScore<T> {
    pub fn fit(values: ArrayView1<T>) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::DegenerateColumn(format!(
                "need at least 2 values to standardize, got {n}"
            )));
        }
        let nf = T::from_usize_lossy(n);
        let mean = values.iter().copied().sum::<T>() / nf;
        let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let sd = var.sqrt();
        // Relative threshold: a column equal up to rounding is still constant.
        let scale = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if !(sd > T::epsilon() * scale * T::c(16.0)) || sd == T::zero() {
            return Err(Error::DegenerateColumn("zero standard deviation".into()));
        }
        Ok(ZScore { mean, sd })
    }

    #[inline]
    pub fn apply(&self, v: T) -> T {
        (v - self.mean) / self.sd
    }

    #[inline]
    pub fn invert(&self, z: T) -> T {
        self.mean + self.sd * z
    }

    pub fn apply_all(&self, values: ArrayView1<T>) -> Array1<T> {
        values.mapv(|v| self.apply(v))
    }

    pub fn invert_all(&self, z: ArrayView1<T>) -> Array1<T> {
        z.mapv(|v| self.invert(v))
    }
}

/// Returns the z-scores together with the fitted population mean and sd.
pub fn standardize<T: Scalar>(values: ArrayView1<T>) -> Result<(Array1<T>, T, T)> {
    let zs = ZScore::fit(values)?;
    Ok((zs.apply_all(values), zs.mean, zs.sd))
}

pub fn destandardize<T: Scalar>(z: ArrayView1<T>, mean: T, sd: T) -> Array1<T> {
    ZScore { mean, sd }.invert_all(z)
}

/// Per-column z-scores of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler<T> {
    pub columns: Vec<ZScore<T>>,
}

impl<T: Scalar> ColumnScaler<T> {
    pub fn fit(m: ArrayView2<T>, names: &[String]) -> Result<Self> {
        let columns = m
            .columns()
            .into_iter()
            .enumerate()
            .map(|(j, col)| {
                ZScore::fit(col).map_err(|_| {
                    Error::DegenerateColumn(
                        names.get(j).cloned().unwrap_or_else(|| format!("column {j}")),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ColumnScaler { columns })
    }

    pub fn apply(&self, m: ArrayView2<T>) -> Result<Array2<T>> {
        if m.ncols() != self.columns.len() {
            return Err(Error::Dimension(format!(
                "scaler fitted on {} columns, got {}",
                self.columns.len(),
                m.ncols()
            )));
        }
        let mut out = m.to_owned();
        for (mut col, zs) in out.columns_mut().into_iter().zip(&self.columns) {
            col.mapv_inplace(|v| zs.apply(v));
        }
        Ok(out)
    }
}

/// Moments fitted on training rows: outcome, both covariate blocks and coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats<T> {
    pub y: ZScore<T>,
    pub burden: ColumnScaler<T>,
    pub capacity: ColumnScaler<T>,
    pub coords: ColumnScaler<T>,
}

/// Standardized model inputs for a set of rows.
#[derive(Debug, Clone)]
pub struct StandardInputs<T> {
    pub x_burden: Array2<T>,
    pub x_capacity: Array2<T>,
    pub coords: Array2<T>,
}

impl<T: Scalar> StandardInputs<T> {
    pub fn n(&self) -> usize {
        self.x_burden.nrows()
    }

    /// `[burden | capacity]`.
    pub fn covariates(&self) -> Array2<T> {
        ndarray::concatenate(Axis(1), &[self.x_burden.view(), self.x_capacity.view()])
            .expect("blocks share row count")
    }

    /// Copy with covariate `j` (burden first, then capacity) shifted by `delta` at every row.
    pub fn shifted(&self, j: usize, delta: T) -> Self {
        let mut out = self.clone();
        let pe = self.x_burden.ncols();
        if j < pe {
            out.x_burden.column_mut(j).mapv_inplace(|v| v + delta);
        } else {
            out.x_capacity.column_mut(j - pe).mapv_inplace(|v| v + delta);
        }
        out
    }
}

impl<T: Scalar> TrainStats<T> {
    pub fn fit(ds: &SpatialDataset<T>) -> Result<Self> {
        Ok(TrainStats {
            y: ZScore::fit(ds.y.view()).map_err(|_| Error::DegenerateColumn("outcome".into()))?,
            burden: ColumnScaler::fit(ds.x_burden.view(), &ds.burden_names)?,
            capacity: ColumnScaler::fit(ds.x_capacity.view(), &ds.capacity_names)?,
            coords: ColumnScaler::fit(ds.coords.view(), &["coord_x".into(), "coord_y".into()])?,
        })
    }

    pub fn inputs(&self, ds: &SpatialDataset<T>) -> Result<StandardInputs<T>> {
        Ok(StandardInputs {
            x_burden: self.burden.apply(ds.x_burden.view())?,
            x_capacity: self.capacity.apply(ds.x_capacity.view())?,
            coords: self.coords.apply(ds.coords.view())?,
        })
    }

    pub fn target(&self, ds: &SpatialDataset<T>) -> Array1<T> {
        self.y.apply_all(ds.y.view())
    }

    pub fn cast<U: Scalar>(&self) -> TrainStats<U> {
        let z = |v: &ZScore<T>| ZScore {
            mean: U::c(v.mean.to_f64_lossy()),
            sd: U::c(v.sd.to_f64_lossy()),
        };
        let c = |s: &ColumnScaler<T>| ColumnScaler {
            columns: s.columns.iter().map(z).collect(),
        };
        TrainStats {
            y: z(&self.y),
            burden: c(&self.burden),
            capacity: c(&self.capacity),
            coords: c(&self.coords),
        }
    }
}
