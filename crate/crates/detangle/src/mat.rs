use crate::error::{Error, Result};

/// Dense row-major f64 matrix. Small and predictable on purpose: the models
/// here are a few hundred thousand parameters and clarity beats cleverness.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "from_vec: {}x{} needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// self += alpha * other
    pub fn axpy(&mut self, alpha: f64, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
    }

    /// a . b
    pub fn matmul(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.rows {
            return Err(Error::Shape(format!(
                "matmul: {}x{} . {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (k, &aik) in arow.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = b.row(k);
                for j in 0..b.cols {
                    orow[j] += aik * brow[j];
                }
            }
        }
        Ok(out)
    }

    /// a . b^T  (rows of a against rows of b)
    pub fn matmul_nt(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.cols {
            return Err(Error::Shape(format!(
                "matmul_nt: {}x{} . ({}x{})^T",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..b.rows {
                let brow = b.row(j);
                let mut s = 0.0;
                for k in 0..self.cols {
                    s += arow[k] * brow[k];
                }
                *out.at_mut(i, j) = s;
            }
        }
        Ok(out)
    }

    /// a^T . b  (used for weight gradients)
    pub fn matmul_tn(&self, b: &Mat) -> Result<Mat> {
        if self.rows != b.rows {
            return Err(Error::Shape(format!(
                "matmul_tn: ({}x{})^T . {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Mat::zeros(self.cols, b.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let brow = b.row(i);
            for (k, &aik) in arow.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let orow = out.row_mut(k);
                for j in 0..b.cols {
                    orow[j] += aik * brow[j];
                }
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Little-endian f64 dump, paired with `read_from` for checkpoints.
    pub fn write_to(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.cols as u32).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl std::io::Read) -> std::io::Result<Mat> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let rows = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let cols = u32::from_le_bytes(b4) as usize;
        let mut data = vec![0.0; rows * cols];
        let mut b8 = [0u8; 8];
        for x in data.iter_mut() {
            r.read_exact(&mut b8)?;
            *x = f64::from_le_bytes(b8);
        }
        Ok(Mat { rows, cols, data })
    }
}

/// Sparse matrix as per-row (index, value) lists over a fixed column space.
/// Feature vectors come in this shape; only the first encoder layer consumes
/// it, everything downstream is dense.
#[derive(Clone, Debug)]
pub struct SparseMat {
    pub dim: usize,
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl SparseMat {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// sparse . dense  (each row: sum of scaled rows of w)
    pub fn matmul(&self, w: &Mat) -> Result<Mat> {
        if w.rows() != self.dim {
            return Err(Error::Shape(format!(
                "sparse matmul: dim {} vs weight rows {}",
                self.dim,
                w.rows()
            )));
        }
        let mut out = Mat::zeros(self.rows.len(), w.cols());
        for (i, row) in self.rows.iter().enumerate() {
            let orow = out.row_mut(i);
            for &(k, v) in row {
                let wrow = w.row(k as usize);
                for j in 0..wrow.len() {
                    orow[j] += v * wrow[j];
                }
            }
        }
        Ok(out)
    }

    /// dW accumulation for the sparse layer: dW[k,:] += v * g[i,:]
    pub fn accumulate_weight_grad(&self, g: &Mat, dw: &mut Mat) {
        debug_assert_eq!(g.rows(), self.rows.len());
        debug_assert_eq!(dw.rows(), self.dim);
        debug_assert_eq!(dw.cols(), g.cols());
        for (i, row) in self.rows.iter().enumerate() {
            let grow = g.row(i).to_vec();
            for &(k, v) in row {
                let drow = dw.row_mut(k as usize);
                for j in 0..grow.len() {
                    drow[j] += v * grow[j];
                }
            }
        }
    }
}
