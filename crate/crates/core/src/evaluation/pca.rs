use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaRow {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaExport {
    pub rows: Vec<PcaRow>,
    pub explained_variance_ratio: [f64; 2],
    /// All points coincide; coordinates and ratios are zero.
    pub degenerate: bool,
}

impl PcaExport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::Serde(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Projects mean-centred vectors onto their first two principal components.
/// Each component's sign is fixed so its largest-magnitude loading is positive.
pub fn pca_export(vectors: &[(String, Array1<f64>)]) -> Result<PcaExport> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Validation(format!("PCA needs at least 2 vectors, got {n}")));
    }
    let d = vectors[0].1.len();
    if d < 2 {
        return Err(Error::Validation(format!("PCA needs at least 2 dimensions, got {d}")));
    }
    if let Some((label, v)) = vectors.iter().find(|(_, v)| v.len() != d) {
        return Err(Error::Validation(format!("vector `{label}` has dimension {}, expected {d}", v.len())));
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| vectors[i].1[j]);
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let total: f64 = x.iter().map(|v| v * v).sum();
    let labels = vectors.iter().map(|(l, _)| l.clone());
    if total == 0.0 {
        return Ok(PcaExport {
            rows: labels.map(|label| PcaRow { label, x: 0.0, y: 0.0 }).collect(),
            explained_variance_ratio: [0.0, 0.0],
            degenerate: true,
        });
    }

    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut coords = vec![[0.0; 2]; n];
    let mut ratios = [0.0; 2];
    for (c, &k) in order.iter().take(2).enumerate() {
        let mut axis: Vec<f64> = v_t.row(k).iter().copied().collect();
        let lead = axis.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        if lead < 0.0 {
            axis.iter_mut().for_each(|a| *a = -*a);
        }
        for (i, row) in coords.iter_mut().enumerate() {
            row[c] = (0..d).map(|j| x[(i, j)] * axis[j]).sum();
        }
        ratios[c] = svd.singular_values[k].powi(2) / total;
    }
    Ok(PcaExport {
        rows: labels
            .zip(coords)
            .map(|(label, [x, y])| PcaRow { label, x, y })
            .collect(),
        explained_variance_ratio: ratios,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn named(vs: Vec<Array1<f64>>) -> Vec<(String, Array1<f64>)> {
        vs.into_iter().enumerate().map(|(i, v)| (format!("p{i}"), v)).collect()
    }

    #[test]
    fn collinear_points_load_on_one_component() {
        let dir = array![1.0, -2.0, 0.5, 3.0];
        let base = array![0.3, 0.1, -1.0, 2.0];
        let pts = named(vec![&base + &dir, &base + &(&dir * 2.0), &base + &(&dir * 4.0)]);
        let out = pca_export(&pts).unwrap();
        assert!((out.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(out.explained_variance_ratio[1] < 1e-12);
        // projections are signed distances from the centroid along the line
        let norm = dir.dot(&dir).sqrt();
        let xs: Vec<f64> = out.rows.iter().map(|r| r.x).collect();
        let expected = [-4.0 / 3.0, -1.0 / 3.0, 5.0 / 3.0].map(|t| t * norm);
        for (a, b) in xs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{xs:?}");
        }
    }

    #[test]
    fn identical_points_are_degenerate() {
        let out = pca_export(&named(vec![array![1.0, 2.0], array![1.0, 2.0]])).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.explained_variance_ratio, [0.0, 0.0]);
    }

    #[test]
    fn input_errors() {
        assert!(pca_export(&named(vec![array![1.0, 2.0]])).is_err());
        assert!(pca_export(&named(vec![array![1.0], array![2.0]])).is_err());
        assert!(pca_export(&named(vec![array![1.0, 2.0], array![2.0]])).is_err());
    }

    #[test]
    fn csv_has_one_row_per_vector() {
        let out = pca_export(&named(vec![array![0.0, 1.0, 2.0], array![1.0, 0.0, 0.0], array![2.0, 2.0, 1.0]])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.csv");
        out.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("label,x,y"));
    }
}
