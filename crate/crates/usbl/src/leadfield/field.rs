//! Lead-field ingestion and preprocessing.
//!
//! A lead field maps `S` source vertices (three orientation axes each) to `C`
//! channels. On disk it is a single file holding three concatenated tensor
//! records: `gains` (C x 3S), `positions` (S x 3), `regions` (S, 1-based
//! region ids).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor_io::format;

#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    /// C x 3S gain matrix; columns `3s..3s+3` belong to vertex `s`.
    pub gains: DMatrix<f64>,
    /// S x 3 vertex coordinates.
    pub vertex_positions: DMatrix<f64>,
    /// 0-based region index per vertex.
    pub region_of_vertex: Vec<usize>,
    pub region_count: usize,
}

impl LeadField {
    pub fn new(
        gains: DMatrix<f64>,
        vertex_positions: DMatrix<f64>,
        region_of_vertex: Vec<usize>,
    ) -> Result<Self> {
        let c = gains.nrows();
        let s = vertex_positions.nrows();
        if c < 2 || s < 1 {
            return Err(Error::DomainError(
                "lead field needs at least 2 channels and 1 vertex".into(),
            ));
        }
        if gains.ncols() != 3 * s {
            return Err(Error::ShapeMismatch {
                modality: "leadfield".into(),
                expected: format!("{c} x {}", 3 * s),
                found: format!("{c} x {}", gains.ncols()),
            });
        }
        if vertex_positions.ncols() != 3 || region_of_vertex.len() != s {
            return Err(Error::ShapeMismatch {
                modality: "leadfield".into(),
                expected: format!("positions {s} x 3, regions {s}"),
                found: format!(
                    "positions {} x {}, regions {}",
                    vertex_positions.nrows(),
                    vertex_positions.ncols(),
                    region_of_vertex.len()
                ),
            });
        }
        if gains.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "lead-field gains",
                step: None,
            });
        }
        let region_count = region_of_vertex.iter().max().copied().unwrap_or(0) + 1;
        Ok(LeadField {
            gains,
            vertex_positions,
            region_of_vertex,
            region_count,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.gains.nrows()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertex_positions.nrows()
    }

    /// C x 3 gain block of vertex `s`.
    pub fn vertex_block(&self, s: usize) -> DMatrix<f64> {
        self.gains.columns(3 * s, 3).into_owned()
    }
}

pub fn write_leadfield<P: AsRef<Path>>(lf: &LeadField, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let c = lf.gains.nrows() as u64;
    let cols = lf.gains.ncols() as u64;
    let s = lf.vertex_positions.nrows() as u64;
    let row_major = |m: &DMatrix<f64>| -> Vec<f32> {
        let mut out = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for col in 0..m.ncols() {
                out.push(m[(r, col)] as f32);
            }
        }
        out
    };
    format::write_tensor_to(&mut w, &[c, cols], &row_major(&lf.gains))?;
    format::write_tensor_to(&mut w, &[s, 3], &row_major(&lf.vertex_positions))?;
    let regions: Vec<f32> = lf
        .region_of_vertex
        .iter()
        .map(|&r| (r + 1) as f32)
        .collect();
    format::write_tensor_to(&mut w, &[s], &regions)?;
    w.flush()?;
    Ok(())
}

pub fn load_leadfield<P: AsRef<Path>>(path: P) -> Result<LeadField> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.into() },
        _ => Error::Io(e),
    })?);
    let (gdims, gvals) = format::read_tensor_from(&mut r)?;
    let (pdims, pvals) = format::read_tensor_from(&mut r)?;
    let (rdims, rvals) = format::read_tensor_from(&mut r)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::TrailingBytes { path: path.into() });
    }
    if gdims.len() != 2 || pdims.len() != 2 || pdims[1] != 3 || rdims.len() != 1 {
        return Err(Error::Manifest(format!(
            "lead-field records have unexpected ranks: {gdims:?}, {pdims:?}, {rdims:?}"
        )));
    }
    let to_f64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let gains = DMatrix::from_row_slice(gdims[0] as usize, gdims[1] as usize, &to_f64(&gvals));
    let positions = DMatrix::from_row_slice(pdims[0] as usize, 3, &to_f64(&pvals));
    let regions: Vec<usize> = rvals
        .iter()
        .map(|&v| {
            let id = v.round();
            if (v - id).abs() > 1e-6 || id < 1.0 {
                Err(Error::Manifest(format!("region id {v} is not a 1-based integer")))
            } else {
                Ok(id as usize - 1)
            }
        })
        .collect::<Result<_>>()?;
    LeadField::new(gains, positions, regions)
}

/// Scales every row of `gains` to unit Euclidean norm.
pub fn normalize_rows(gains: &mut DMatrix<f64>) -> Result<()> {
    for r in 0..gains.nrows() {
        let norm = gains.row(r).norm();
        if norm == 0.0 {
            return Err(Error::ZeroRow { row: r });
        }
        for c in 0..gains.ncols() {
            gains[(r, c)] /= norm;
        }
    }
    Ok(())
}

/// Mean nearest-neighbor distance between vertices.
pub fn mean_neighbor_distance(positions: &DMatrix<f64>) -> Result<f64> {
    let s = positions.nrows();
    if s < 2 {
        return Err(Error::DegenerateGeometry("need at least 2 vertices"));
    }
    let mut total = 0.0;
    for i in 0..s {
        let mut best = f64::INFINITY;
        for j in 0..s {
            if i == j {
                continue;
            }
            let d = (positions.row(i) - positions.row(j)).norm();
            best = best.min(d);
        }
        total += best;
    }
    Ok(total / s as f64)
}

/// Normalized Gaussian smoothing weights over vertices, truncated at three
/// kernel widths. Row `s` holds the averaging weights for vertex `s`.
pub fn smoothing_weights(positions: &DMatrix<f64>, width: f64) -> Result<DMatrix<f64>> {
    let s = positions.nrows();
    if !(width > 0.0) || !width.is_finite() {
        return Err(Error::DegenerateGeometry("kernel width must be positive"));
    }
    let cutoff = 3.0 * width;
    let mut w = DMatrix::zeros(s, s);
    for i in 0..s {
        let mut total = 0.0;
        for j in 0..s {
            let d = (positions.row(i) - positions.row(j)).norm();
            if d <= cutoff {
                let wij = (-d * d / (2.0 * width * width)).exp();
                w[(i, j)] = wij;
                total += wij;
            }
        }
        for j in 0..s {
            w[(i, j)] /= total;
        }
    }
    Ok(w)
}

/// Default smoothing-kernel width as a multiple of the mean nearest-neighbor
/// vertex distance.
pub const DEFAULT_KERNEL_MULTIPLIER: f64 = 2.0;

/// Row normalization, Gaussian column smoothing over vertices (width =
/// `kernel_multiplier` x mean nearest-neighbor distance), then row
/// normalization again so both output contracts hold.
pub fn preprocess_leadfield(lf: &LeadField, kernel_multiplier: f64) -> Result<LeadField> {
    let mut gains = lf.gains.clone();
    normalize_rows(&mut gains)?;

    if lf.n_vertices() >= 2 && kernel_multiplier > 0.0 {
        let mean_nn = mean_neighbor_distance(&lf.vertex_positions)?;
        if mean_nn == 0.0 {
            return Err(Error::DegenerateGeometry(
                "coincident vertices give a zero kernel width",
            ));
        }
        let weights = smoothing_weights(&lf.vertex_positions, kernel_multiplier * mean_nn)?;
        let s = lf.n_vertices();
        let mut smoothed = DMatrix::zeros(gains.nrows(), gains.ncols());
        for axis in 0..3 {
            for target in 0..s {
                for source in 0..s {
                    let w = weights[(target, source)];
                    if w == 0.0 {
                        continue;
                    }
                    for c in 0..gains.nrows() {
                        smoothed[(c, 3 * target + axis)] += w * gains[(c, 3 * source + axis)];
                    }
                }
            }
        }
        gains = smoothed;
        normalize_rows(&mut gains)?;
    }

    LeadField::new(
        gains,
        lf.vertex_positions.clone(),
        lf.region_of_vertex.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_vertex_field() -> LeadField {
        // Vertices one unit apart on the x axis.
        let positions = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let gains = DMatrix::from_row_slice(
            2,
            6,
            &[3.0, 4.0, 0.0, 1.0, 0.0, 0.0, 6.0, 8.0, 0.0, 0.0, 2.0, 0.0],
        );
        LeadField::new(gains, positions, vec![0, 1]).unwrap()
    }

    #[test]
    fn rows_are_normalized() {
        let positions = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
        let gains = DMatrix::from_row_slice(2, 3, &[3.0, 4.0, 0.0, 6.0, 8.0, 0.0]);
        let lf = LeadField::new(gains, positions, vec![0]).unwrap();
        let out = preprocess_leadfield(&lf, 2.0).unwrap();
        for r in 0..2 {
            assert_abs_diff_eq!(out.gains[(r, 0)], 0.6, epsilon = 1e-12);
            assert_abs_diff_eq!(out.gains[(r, 1)], 0.8, epsilon = 1e-12);
            assert_abs_diff_eq!(out.gains.row(r).norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_kernel_multiplier_only_normalizes() {
        let lf = two_vertex_field();
        let out = preprocess_leadfield(&lf, 0.0).unwrap();
        let mut expected = lf.gains.clone();
        normalize_rows(&mut expected).unwrap();
        assert_abs_diff_eq!(out.gains, expected, epsilon = 1e-12);
    }

    #[test]
    fn two_vertex_smoothing_matches_closed_form() {
        let lf = two_vertex_field();
        let m = 2.0;
        let out = preprocess_leadfield(&lf, m).unwrap();

        // Hand computation. Distance d = 1, so the kernel width is 2 and the
        // cross weight is exp(-1 / (2 * 4)).
        let mut normalized = lf.gains.clone();
        normalize_rows(&mut normalized).unwrap();
        let w_self = 1.0f64;
        let w_cross = (-1.0 / 8.0f64).exp();
        let total = w_self + w_cross;
        let mut expected = DMatrix::zeros(2, 6);
        for c in 0..2 {
            for axis in 0..3 {
                let a = normalized[(c, axis)];
                let b = normalized[(c, 3 + axis)];
                expected[(c, axis)] = (w_self * a + w_cross * b) / total;
                expected[(c, 3 + axis)] = (w_cross * a + w_self * b) / total;
            }
        }
        normalize_rows(&mut expected).unwrap();
        assert_abs_diff_eq!(out.gains, expected, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_weight_rows_sum_to_one() {
        let positions =
            DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.7, 0.0]);
        let w = smoothing_weights(&positions, 1.0).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(w.row(i).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_row_is_rejected() {
        let positions = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
        let gains = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let lf = LeadField::new(gains, positions, vec![0]).unwrap();
        assert!(matches!(
            preprocess_leadfield(&lf, 2.0),
            Err(Error::ZeroRow { row: 0 })
        ));
    }

    #[test]
    fn coincident_vertices_are_rejected() {
        let positions = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let gains = DMatrix::from_row_slice(2, 6, &[1.0; 12]);
        let lf = LeadField::new(gains, positions, vec![0, 0]).unwrap();
        assert!(matches!(
            preprocess_leadfield(&lf, 2.0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut gains = DMatrix::from_row_slice(2, 6, &[0.3, 1.0, -2.0, 0.1, 0.0, 0.4, 5.0, 1.0, 0.0, 0.0, 1.0, 2.0]);
        normalize_rows(&mut gains).unwrap();
        let once = gains.clone();
        normalize_rows(&mut gains).unwrap();
        assert_abs_diff_eq!(gains, once, epsilon = 1e-14);
    }

    #[test]
    fn file_round_trip_preserves_structure() {
        let lf = two_vertex_field();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.usbl");
        write_leadfield(&lf, &path).unwrap();
        let back = load_leadfield(&path).unwrap();
        assert_eq!(back.region_of_vertex, lf.region_of_vertex);
        assert_eq!(back.region_count, 2);
        assert_abs_diff_eq!(back.gains, lf.gains, epsilon = 1e-6);
        assert_abs_diff_eq!(back.vertex_positions, lf.vertex_positions, epsilon = 1e-6);
    }
}
