//! Model persistence (JSON) and training-data import/export (CSV).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::GpModel;
use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelHyper;
use crate::par::Execution;

/// On-disk model: training data plus hyperparameters. The Cholesky factor
/// and weights are recomputed on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n: usize,
    #[serde(rename = "N")]
    pub num_points: usize,
    /// Column-major n × N (point after point).
    #[serde(rename = "X")]
    pub x: Vec<f64>,
    #[serde(rename = "Y")]
    pub y: Vec<f64>,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl ModelDocument {
    pub fn from_model(model: &GpModel) -> Self {
        let h = model.hyper();
        Self {
            n: model.dim(),
            num_points: model.len(),
            x: model.inputs().as_slice().to_vec(),
            y: model.targets().as_slice().to_vec(),
            lengthscales: h.lengthscales.clone(),
            signal_variance: h.signal_variance,
            noise_variance: h.noise_variance,
        }
    }

    pub fn into_model(self) -> Result<GpModel> {
        self.into_model_with(Execution::default())
    }

    pub fn into_model_with(self, exec: Execution) -> Result<GpModel> {
        check_dim("model X length", self.n * self.num_points, self.x.len())?;
        check_dim("model Y length", self.num_points, self.y.len())?;
        check_dim("model lengthscales", self.n, self.lengthscales.len())?;
        let hyper = KernelHyper::new(self.signal_variance, self.lengthscales, self.noise_variance)?;
        let x = DMatrix::from_vec(self.n, self.num_points, self.x);
        let y = DVector::from_vec(self.y);
        GpModel::with_execution(x, y, hyper, exec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

/// Write `x1,...,xn,y` rows, one per training point.
pub fn write_training_csv<W: std::io::Write>(
    writer: W,
    inputs: &DMatrix<f64>,
    targets: &DVector<f64>,
) -> Result<()> {
    check_dim("training targets", inputs.ncols(), targets.len())?;
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=inputs.nrows()).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (j, col) in inputs.column_iter().enumerate() {
        let mut rec: Vec<String> = col.iter().map(|v| v.to_string()).collect();
        rec.push(targets[j].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_csv<R: std::io::Read>(reader: R) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let cols = headers.len();
    if cols < 2 || headers.get(cols - 1).map(str::trim) != Some("y") {
        return Err(Error::InvalidInput(
            "training CSV header must be x1,...,xn,y".into(),
        ));
    }
    for (i, h) in headers.iter().take(cols - 1).enumerate() {
        if h.trim() != format!("x{}", i + 1) {
            return Err(Error::InvalidInput(format!("unexpected CSV column '{h}'")));
        }
    }
    let n = cols - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        check_dim("CSV record width", cols, rec.len())?;
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad number '{field}': {e}")))?;
            if i < n {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    let num = ys.len();
    Ok((DMatrix::from_vec(n, num, xs), DVector::from_vec(ys)))
}
