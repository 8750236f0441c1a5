use std::sync::atomic::{AtomicU32, Ordering};

/// Row-major dense `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Bit patterns of all entries; used to assert exact equality.
    pub fn to_bits(&self) -> Vec<u32> {
        self.data.iter().map(|x| x.to_bits()).collect()
    }
}

/// Read access to matrix rows.
pub trait RowRead {
    fn cols(&self) -> usize;
    fn read_row(&self, i: usize, out: &mut [f32]);
}

/// Read/write access to matrix rows.
pub trait RowWrite: RowRead {
    /// `row_i += a * x`
    fn axpy_row(&mut self, i: usize, a: f32, x: &[f32]);
}

impl RowRead for Matrix {
    fn cols(&self) -> usize {
        self.cols
    }

    fn read_row(&self, i: usize, out: &mut [f32]) {
        out.copy_from_slice(self.row(i));
    }
}

impl RowWrite for Matrix {
    fn axpy_row(&mut self, i: usize, a: f32, x: &[f32]) {
        for (r, &xv) in self.row_mut(i).iter_mut().zip(x) {
            *r += a * xv;
        }
    }
}

/// Matrix shared between training workers without locks.
///
/// Entries are `f32` bit patterns in relaxed atomics: concurrent updates to
/// the same row may interleave and individual additions may be lost, but
/// every read observes some previously written value.
pub struct SharedMatrix {
    rows: usize,
    cols: usize,
    data: Box<[AtomicU32]>,
}

impl SharedMatrix {
    pub fn from_matrix(m: &Matrix) -> Self {
        SharedMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|x| AtomicU32::new(x.to_bits())).collect(),
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|a| f32::from_bits(a.load(Ordering::Relaxed)))
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn write_row(&self, i: usize, x: &[f32]) {
        let row = &self.data[i * self.cols..(i + 1) * self.cols];
        for (cell, &v) in row.iter().zip(x) {
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data
            .iter()
            .all(|a| f32::from_bits(a.load(Ordering::Relaxed)).is_finite())
    }
}

impl RowRead for &SharedMatrix {
    fn cols(&self) -> usize {
        self.cols
    }

    fn read_row(&self, i: usize, out: &mut [f32]) {
        let row = &self.data[i * self.cols..(i + 1) * self.cols];
        for (o, cell) in out.iter_mut().zip(row) {
            *o = f32::from_bits(cell.load(Ordering::Relaxed));
        }
    }
}

impl RowWrite for &SharedMatrix {
    fn axpy_row(&mut self, i: usize, a: f32, x: &[f32]) {
        let row = &self.data[i * self.cols..(i + 1) * self.cols];
        for (cell, &xv) in row.iter().zip(x) {
            let v = f32::from_bits(cell.load(Ordering::Relaxed)) + a * xv;
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_round_trip() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = SharedMatrix::from_matrix(&m);
        let mut view = &s;
        view.axpy_row(1, 2.0, &[1.0, 0.0, -1.0]);
        let back = s.to_matrix();
        assert_eq!(back.row(0), [1.0, 2.0, 3.0]);
        assert_eq!(back.row(1), [6.0, 5.0, 4.0]);
    }
}
