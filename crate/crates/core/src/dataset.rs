//! Functional responses on a common grid, the scalar design, and CSV ingestion.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{FqrError, Result};

/// Singular-value ratio below which a design is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Strictly increasing sampling locations `t_1 < ... < t_T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingGrid {
    points: Vec<f64>,
}

impl SamplingGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(FqrError::GridTooShort(points.len()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.is_finite() {
                return Err(FqrError::NonFinite {
                    what: "grid".into(),
                    row: i,
                    col: 0,
                });
            }
        }
        for i in 1..points.len() {
            if points[i] <= points[i - 1] {
                return Err(FqrError::NonIncreasingGrid { index: i });
            }
        }
        Ok(Self { points })
    }

    /// `len` equally spaced points on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, len: usize) -> Result<Self> {
        if len < 2 {
            return Err(FqrError::GridTooShort(len));
        }
        let step = (hi - lo) / (len - 1) as f64;
        let mut pts: Vec<f64> = (0..len).map(|i| lo + step * i as f64).collect();
        pts[len - 1] = hi;
        Self::new(pts)
    }

    /// Inserts `factor - 1` equally spaced points inside every interval.
    pub fn refine(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let mut pts = Vec::with_capacity((self.len() - 1) * factor + 1);
        for w in self.points.windows(2) {
            let h = (w[1] - w[0]) / factor as f64;
            for k in 0..factor {
                pts.push(w[0] + h * k as f64);
            }
        }
        pts.push(*self.points.last().unwrap());
        Self { points: pts }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }

    pub fn last(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn domain_length(&self) -> f64 {
        self.last() - self.first()
    }

    /// Largest adjacent gap `delta_T`.
    pub fn max_gap(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.first() && t <= self.last()
    }
}

/// Unit-norm linear combination `a` of the coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contrast {
    weights: Vec<f64>,
}

impl Contrast {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(FqrError::InvalidArgument(
                "contrast must have finite, non-zero norm".into(),
            ));
        }
        Ok(Self {
            weights: weights.into_iter().map(|w| w / norm).collect(),
        })
    }

    /// Unit vector on design column `index`.
    pub fn unit(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(FqrError::InvalidArgument(format!(
                "contrast index {index} out of range for {dim} design columns"
            )));
        }
        let mut w = vec![0.0; dim];
        w[index] = 1.0;
        Self::new(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    pub fn apply(&self, beta: &[f64]) -> f64 {
        self.weights.iter().zip(beta).map(|(a, b)| a * b).sum()
    }
}

/// `n` functional responses observed on a common grid with an `n x d` design.
#[derive(Debug, Clone)]
pub struct FunctionalDataset {
    responses: DMatrix<f64>,
    design: DMatrix<f64>,
    grid: SamplingGrid,
}

impl FunctionalDataset {
    pub fn new(responses: DMatrix<f64>, design: DMatrix<f64>, grid: SamplingGrid) -> Result<Self> {
        if responses.nrows() != design.nrows() {
            return Err(FqrError::DimensionMismatch(format!(
                "responses have {} rows but design has {}",
                responses.nrows(),
                design.nrows()
            )));
        }
        if responses.ncols() != grid.len() {
            return Err(FqrError::DimensionMismatch(format!(
                "responses have {} columns but grid has {} points",
                responses.ncols(),
                grid.len()
            )));
        }
        if design.ncols() == 0 || design.nrows() < design.ncols() {
            return Err(FqrError::DimensionMismatch(format!(
                "design is {}x{}; need at least as many rows as columns",
                design.nrows(),
                design.ncols()
            )));
        }
        check_finite("responses", &responses)?;
        check_finite("design", &design)?;
        check_rank(&design)?;
        Ok(Self {
            responses,
            design,
            grid,
        })
    }

    pub fn n(&self) -> usize {
        self.responses.nrows()
    }

    pub fn d(&self) -> usize {
        self.design.ncols()
    }

    pub fn t_len(&self) -> usize {
        self.grid.len()
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn grid(&self) -> &SamplingGrid {
        &self.grid
    }

    /// Response column at location `l`.
    pub fn location(&self, l: usize) -> &[f64] {
        let n = self.n();
        &self.responses.as_slice()[l * n..(l + 1) * n]
    }

    /// Returns a copy with the response matrix replaced (same design and grid).
    pub fn with_responses(&self, responses: DMatrix<f64>) -> Result<Self> {
        Self::new(responses, self.design.clone(), self.grid.clone())
    }

    /// Writes responses, design and grid as CSV files with round-trip precision.
    pub fn write_csv(&self, responses: &Path, design: &Path, grid: &Path) -> Result<()> {
        write_matrix(responses, &self.responses)?;
        write_matrix(design, &self.design)?;
        let g = DMatrix::from_column_slice(self.grid.len(), 1, self.grid.points());
        write_matrix(grid, &g)
    }
}

fn check_finite(what: &str, m: &DMatrix<f64>) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(FqrError::NonFinite {
                    what: what.into(),
                    row: i,
                    col: j,
                });
            }
        }
    }
    Ok(())
}

fn check_rank(design: &DMatrix<f64>) -> Result<()> {
    let svd = design.clone().svd(false, true);
    let sv = &svd.singular_values;
    let (mut imin, mut smin, mut smax) = (0, f64::INFINITY, 0.0f64);
    for (i, &s) in sv.iter().enumerate() {
        if s < smin {
            smin = s;
            imin = i;
        }
        smax = smax.max(s);
    }
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio > RANK_TOLERANCE {
        return Ok(());
    }
    // The right singular vector of the smallest singular value names the
    // dependent columns; report the one with the largest loading.
    let column = svd
        .v_t
        .as_ref()
        .map(|vt| vt.row(imin).transpose().iamax())
        .unwrap_or(0);
    Err(FqrError::RankDeficient { ratio, column })
}

/// Per-dataset summary used by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub d: usize,
    pub t_len: usize,
    pub delta_t: f64,
    /// `(min, max)` of the responses at each grid location.
    pub response_ranges: Vec<(f64, f64)>,
}

pub fn summarize(ds: &FunctionalDataset) -> DatasetSummary {
    let response_ranges = (0..ds.t_len())
        .map(|l| {
            ds.location(l)
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect();
    DatasetSummary {
        n: ds.n(),
        d: ds.d(),
        t_len: ds.t_len(),
        delta_t: ds.grid().max_gap(),
        response_ranges,
    }
}

/// Loads and validates a dataset from three CSV files.
pub fn load_dataset(responses: &Path, design: &Path, grid: &Path) -> Result<FunctionalDataset> {
    let y = read_matrix(responses, "responses")?;
    let x = read_matrix(design, "design")?;
    let g = read_matrix(grid, "grid")?;
    if g.ncols() != 1 {
        return Err(FqrError::DimensionMismatch(format!(
            "grid file must have a single column, found {}",
            g.ncols()
        )));
    }
    let grid = SamplingGrid::new(g.column(0).iter().cloned().collect())?;
    FunctionalDataset::new(y, x, grid)
}

/// Reads a numeric CSV matrix. A first row in which no cell parses as a number
/// is treated as a header.
pub fn read_matrix(path: &Path, what: &str) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|source| FqrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| FqrError::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if idx == 0 && rec.iter().all(|c| c.parse::<f64>().is_err()) {
            continue;
        }
        let row_idx = rows.len();
        let mut row = Vec::with_capacity(rec.len());
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| FqrError::NotNumeric {
                what: what.into(),
                row: row_idx,
                col,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(FqrError::NonFinite {
                    what: what.into(),
                    row: row_idx,
                    col,
                });
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(FqrError::DimensionMismatch(format!(
                    "{what}: row {row_idx} has {} columns, expected {w}",
                    row.len()
                )))
            }
            _ => {}
        }
        rows.push(row);
    }
    let ncols = width.unwrap_or(0);
    if rows.is_empty() || ncols == 0 {
        return Err(FqrError::DimensionMismatch(format!("{what}: file is empty")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Writes a matrix as CSV using shortest round-trip decimal formatting.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let io_err = |source| FqrError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:?}", m[(i, j)]));
        }
        out.push('\n');
    }
    let mut f = File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let y = write(dir.path(), "y.csv", "1,2,3,4\n2,3,4,5\n0,1,0,1\n");
        let x = write(dir.path(), "x.csv", "1,0.5\n1,-1\n1,2\n");
        let g = write(dir.path(), "g.csv", "t\n0\n1\n2\n3\n");
        let ds = load_dataset(&y, &x, &g).unwrap();
        assert_eq!((ds.n(), ds.t_len(), ds.d()), (3, 4, 2));
        assert_eq!(ds.location(2), &[3.0, 4.0, 0.0]);
    }

    #[test]
    fn rejects_repeated_grid_point() {
        let err = SamplingGrid::new(vec![1.0, 1.0, 2.0]).unwrap_err();
        assert_eq!(err.to_string(), "non-increasing grid at index 1");
    }

    #[test]
    fn rejects_duplicated_design_column() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let g = SamplingGrid::new(vec![0.0, 1.0]).unwrap();
        match FunctionalDataset::new(y, x, g) {
            Err(FqrError::RankDeficient { ratio, .. }) => assert!(ratio < 1e-12),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn reports_non_numeric_cell_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "y.csv", "1,2\n3,abc\n");
        let err = read_matrix(&p, "responses").unwrap_err();
        assert!(err.to_string().contains("row 1, column 1"), "{err}");
        let p = write(dir.path(), "z.csv", "1,2\n3,NaN\n");
        assert!(matches!(
            read_matrix(&p, "responses"),
            Err(FqrError::NonFinite { row: 1, col: 1, .. })
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let y = DMatrix::zeros(3, 4);
        let x = DMatrix::from_element(2, 1, 1.0);
        let g = SamplingGrid::uniform(0.0, 1.0, 4).unwrap();
        assert!(matches!(
            FunctionalDataset::new(y, x, g),
            Err(FqrError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn max_gap_examples() {
        let g = SamplingGrid::uniform(0.0, 5.10, 128).unwrap();
        assert!((g.max_gap() - 5.10 / 127.0).abs() < 1e-12);
        assert!((g.max_gap() - 0.04016).abs() < 1e-5);
        assert_eq!(SamplingGrid::new(vec![0.0, 1.0, 3.0]).unwrap().max_gap(), 2.0);
        assert_eq!(SamplingGrid::new(vec![0.0, 1.0]).unwrap().max_gap(), 1.0);
    }

    #[test]
    fn refine_keeps_nodes() {
        let g = SamplingGrid::new(vec![0.0, 1.0, 3.0]).unwrap();
        let r = g.refine(4);
        assert_eq!(r.len(), 9);
        assert_eq!(r.points()[4], 1.0);
        assert_eq!(r.points()[8], 3.0);
    }

    #[test]
    fn contrast_is_normalized() {
        let c = Contrast::new(vec![3.0, 4.0]).unwrap();
        assert!((c.weights()[0] - 0.6).abs() < 1e-15);
        assert!(Contrast::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let y = DMatrix::from_fn(4, 3, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0) * std::f64::consts::PI);
        let x = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { (i as f64).sin() / 7.0 });
        let g = SamplingGrid::new(vec![0.1, 0.2, 0.7]).unwrap();
        let ds = FunctionalDataset::new(y, x, g).unwrap();
        let (a, b, c) = (dir.path().join("y"), dir.path().join("x"), dir.path().join("g"));
        ds.write_csv(&a, &b, &c).unwrap();
        let back = load_dataset(&a, &b, &c).unwrap();
        assert_eq!(back.responses(), ds.responses());
        assert_eq!(back.design(), ds.design());
        assert_eq!(back.grid(), ds.grid());
    }
}
