use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// One real vector of fixed dimension per graph node, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{dim} table",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            dim,
            data: rows.concat(),
        })
    }

    /// Zero-mean normal initialization, reproducible from `seed`.
    pub fn random_normal(rows: usize, dim: usize, std_dev: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std_dev).expect("finite standard deviation");
        let data = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
        Self { rows, dim, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.dim == other.dim
    }

    pub fn dot_rows(&self, a: usize, b: usize) -> f64 {
        dot(self.row(a), self.row(b))
    }

    /// Copy with every nonzero row scaled to unit L2 norm.
    pub fn l2_normalized(&self) -> Self {
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let norm = dot(row, row).sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, s: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Text dump: header `rows dim`, then one line of space-separated
    /// decimals per row. Values are written with the shortest representation
    /// that parses back to the identical `f64`.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.rows, self.dim)?;
        for r in 0..self.rows {
            let mut first = true;
            for x in self.row(r) {
                if !first {
                    w.write_all(b" ")?;
                }
                write!(w, "{x}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_text(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(BufReader::new(file), path)
    }

    pub fn read_text<R: BufRead>(r: R, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let mut parts = header.split_whitespace().map(str::parse::<usize>);
        let (rows, dim) = match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(rows)), Some(Ok(dim)), None) => (rows, dim),
            _ => return Err(parse_err(1, format!("bad header {header:?}"))),
        };
        let mut data = Vec::with_capacity(rows * dim);
        for r in 0..rows {
            let line_no = r + 2;
            let line = lines
                .next()
                .ok_or_else(|| parse_err(line_no, "unexpected end of file".into()))?
                .map_err(|e| Error::io(path, e))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                let x = tok
                    .parse::<f64>()
                    .map_err(|e| parse_err(line_no, format!("{tok:?}: {e}")))?;
                data.push(x);
            }
            if data.len() - before != dim {
                return Err(parse_err(
                    line_no,
                    format!("expected {dim} values, found {}", data.len() - before),
                ));
            }
        }
        Ok(Self { rows, dim, data })
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
