use std::io::Write;

use serde::{Deserialize, Serialize};

use super::predict_matrix;
use crate::datasets::NormalizationRecord;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{EpisodicModel, SupportSet};

/// Auxiliary-feature values for the lattice cells, in normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxPlane {
    /// The same values in every cell.
    Constant(Vec<f64>),
    /// One row per cell in lattice order (`x1` outer, `x2` inner).
    PerCell(Matrix<f64>),
    /// Copied from the nearest of these normalized locations (by the two
    /// coordinates).
    Nearest(Matrix<f64>),
}

/// Regular lattice over a box in normalized coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub region: String,
    pub attribute: String,
    /// Points along `x1` and `x2`.
    pub resolution: (usize, usize),
    /// `[x1_lo, x1_hi, x2_lo, x2_hi]`.
    pub bbox: [f64; 4],
    pub aux: AuxPlane,
}

impl GridSpec {
    pub fn validate(&self, aux_dim: usize) -> Result<()> {
        let (n1, n2) = self.resolution;
        if n1 < 2 || n2 < 2 {
            return Err(Error::Config("grid resolution must be at least 2 per axis".into()));
        }
        let [a, b, c, d] = self.bbox;
        if !(a < b && c < d) || self.bbox.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("degenerate grid box {:?}", self.bbox)));
        }
        let ok = match &self.aux {
            AuxPlane::Constant(v) => v.len() == aux_dim,
            AuxPlane::PerCell(m) => m.shape() == (n1 * n2, aux_dim),
            AuxPlane::Nearest(m) => m.rows() > 0 && m.cols() == 2 + aux_dim,
        };
        if !ok {
            return Err(Error::Config("auxiliary plane does not match the grid or feature count".into()));
        }
        Ok(())
    }

    /// Normalized `cells x (2 + M)` lattice inputs.
    pub fn lattice(&self, aux_dim: usize) -> Matrix<f64> {
        let (n1, n2) = self.resolution;
        let [a, b, c, d] = self.bbox;
        let step = |lo: f64, hi: f64, k: usize, n: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
        let mut m = Matrix::zeros(n1 * n2, 2 + aux_dim);
        for i in 0..n1 {
            for j in 0..n2 {
                let r = i * n2 + j;
                let (u1, u2) = (step(a, b, i, n1), step(c, d, j, n2));
                m.as_mut_slice()[r * (2 + aux_dim)] = u1;
                m.as_mut_slice()[r * (2 + aux_dim) + 1] = u2;
                for k in 0..aux_dim {
                    let v = match &self.aux {
                        AuxPlane::Constant(v) => v[k],
                        AuxPlane::PerCell(p) => p[(r, k)],
                        AuxPlane::Nearest(locs) => {
                            let near = (0..locs.rows())
                                .min_by(|&p, &q| {
                                    let dp = (locs[(p, 0)] - u1).powi(2) + (locs[(p, 1)] - u2).powi(2);
                                    let dq = (locs[(q, 0)] - u1).powi(2) + (locs[(q, 1)] - u2).powi(2);
                                    dp.total_cmp(&dq)
                                })
                                .expect("non-empty");
                            locs[(near, 2 + k)]
                        }
                    };
                    m.as_mut_slice()[r * (2 + aux_dim) + 2 + k] = v;
                }
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRow {
    /// Raw coordinates.
    pub x1: f64,
    pub x2: f64,
    /// Raw attribute units.
    pub mean: f64,
    /// Raw units squared; NaN for models without a variance.
    pub variance: f64,
    pub is_support: bool,
    pub mean_normalized: f64,
    pub variance_normalized: f64,
}

/// Cells closer than this (normalized units, per coordinate) to a support
/// location take that location exactly.
const SNAP: f64 = 1e-9;

/// Predictions over the lattice of `spec` given raw support observations.
/// `record` maps raw values to the model's units and back.
pub fn predict_grid<M: EpisodicModel<f64>>(
    model: &M,
    support_x: &Matrix<f64>,
    support_y: &[f64],
    record: Option<&NormalizationRecord>,
    spec: &GridSpec,
) -> Result<Vec<GridRow>> {
    let record = record.ok_or_else(|| {
        Error::Data(format!(
            "no normalization record for ({}, {})",
            spec.region, spec.attribute
        ))
    })?;
    let aux_dim = model.input_dim().checked_sub(2).ok_or(Error::Unsupported("grids over fewer than two coordinates"))?;
    spec.validate(aux_dim)?;
    if support_x.cols() != model.input_dim() || record.location.len() != model.input_dim() {
        return Err(Error::Data("support or normalization record width does not match the model".into()));
    }
    let sx = record.normalize_x(support_x);
    let sy = Matrix::column(support_y.iter().map(|&v| record.normalize_y(v)).collect());
    let support = SupportSet::new(sx.clone(), sy)?;
    let [a, b, c, d] = spec.bbox;
    for i in 0..sx.rows() {
        let (u1, u2) = (sx[(i, 0)], sx[(i, 1)]);
        if u1 < a - SNAP || u1 > b + SNAP || u2 < c - SNAP || u2 > d + SNAP {
            return Err(Error::Data(format!("support point {} lies outside the grid box", i + 1)));
        }
    }

    let mut cells = spec.lattice(aux_dim);
    let mut flags = vec![false; cells.rows()];
    let w = cells.cols();
    for (r, flag) in flags.iter_mut().enumerate() {
        for i in 0..sx.rows() {
            if (cells[(r, 0)] - sx[(i, 0)]).abs() <= SNAP && (cells[(r, 1)] - sx[(i, 1)]).abs() <= SNAP {
                cells.as_mut_slice()[r * w..(r + 1) * w].copy_from_slice(sx.row(i));
                *flag = true;
                break;
            }
        }
    }

    let (mean, var) = predict_matrix(model, &support, &cells)?;
    Ok((0..cells.rows())
        .map(|r| {
            let m = mean[(r, 0)];
            let v = var.as_ref().map_or(f64::NAN, |v| v[(r, 0)]);
            GridRow {
                x1: record.location[0].invert(cells[(r, 0)]),
                x2: record.location[1].invert(cells[(r, 1)]),
                mean: record.denormalize_y(m),
                variance: record.denormalize_variance(v),
                is_support: flags[r],
                mean_normalized: m,
                variance_normalized: v,
            }
        })
        .collect())
}

pub fn write_grid_csv(rows: &[GridRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x1", "x2", "predicted_mean", "predicted_variance", "is_support"])?;
    for r in rows {
        out.write_record([
            r.x1.to_string(),
            r.x2.to_string(),
            r.mean.to_string(),
            if r.variance.is_finite() { r.variance.to_string() } else { String::new() },
            u8::from(r.is_support).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
