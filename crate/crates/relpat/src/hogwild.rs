//! Lock-free shared parameter storage for asynchronous SGD.
//!
//! Workers read and update an [`AtomicGrid`] without coordination; each cell
//! is an `AtomicU64` holding `f64` bits accessed with relaxed ordering.
//! Concurrent read-modify-write of one cell may drop an update, which sparse
//! gradient traffic tolerates in practice. With a single worker the grid
//! behaves exactly like a plain matrix.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::math::Mat;

/// Shared row-major `f64` grid addressable from many threads.
#[derive(Debug)]
pub struct AtomicGrid {
    rows: usize,
    cols: usize,
    cells: Vec<AtomicU64>,
}

impl AtomicGrid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let cells = (0..rows * cols)
            .map(|_| AtomicU64::new(0f64.to_bits()))
            .collect();
        AtomicGrid { rows, cols, cells }
    }

    pub fn from_mat(m: &Mat) -> Self {
        let cells = m.data.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
        AtomicGrid {
            rows: m.rows,
            cols: m.cols,
            cells,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn load(&self, i: usize, j: usize) -> f64 {
        f64::from_bits(self.cells[i * self.cols + j].load(Ordering::Relaxed))
    }

    #[inline]
    pub fn store(&self, i: usize, j: usize, v: f64) {
        self.cells[i * self.cols + j].store(v.to_bits(), Ordering::Relaxed);
    }

    /// cell += v as load-add-store; racing writers may lose an addend.
    #[inline]
    pub fn add(&self, i: usize, j: usize, v: f64) {
        let cell = &self.cells[i * self.cols + j];
        let cur = f64::from_bits(cell.load(Ordering::Relaxed));
        cell.store((cur + v).to_bits(), Ordering::Relaxed);
    }

    /// Copies a row into `buf`.
    pub fn read_row(&self, i: usize, buf: &mut [f64]) {
        debug_assert_eq!(buf.len(), self.cols);
        for (j, b) in buf.iter_mut().enumerate() {
            *b = self.load(i, j);
        }
    }

    /// row += a·x.
    pub fn axpy_row(&self, i: usize, a: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (j, &xj) in x.iter().enumerate() {
            self.add(i, j, a * xj);
        }
    }

    /// grid += scale · u vᵀ.
    pub fn add_outer(&self, scale: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let s = scale * ui;
            if s != 0.0 {
                self.axpy_row(i, s, v);
            }
        }
    }

    pub fn to_mat(&self) -> Mat {
        let data = self
            .cells
            .iter()
            .map(|c| f64::from_bits(c.load(Ordering::Relaxed)))
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

/// Read access shared by plain matrices and the atomic grid, so the encoder
/// forward/backward passes are written once and run against either storage.
pub trait MatRead {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn at(&self, i: usize, j: usize) -> f64;

    /// y = A x.
    fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols());
        debug_assert_eq!(y.len(), self.rows());
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                acc += self.at(i, j) * xj;
            }
            *yi = acc;
        }
    }

    /// y = Aᵀ x.
    fn mul_vec_t(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows());
        debug_assert_eq!(y.len(), self.cols());
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, yj) in y.iter_mut().enumerate() {
                    *yj += self.at(i, j) * xi;
                }
            }
        }
    }
}

impl MatRead for Mat {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.get(i, j)
    }

    fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }

    fn mul_vec_t(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_t(x, y);
    }
}

impl MatRead for AtomicGrid {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.load(i, j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trips_mat() {
        let m = Mat::from_rows(&[&[1.5, -2.0], &[0.0, 3.25]]);
        let g = AtomicGrid::from_mat(&m);
        assert_eq!(g.to_mat(), m);
        assert_eq!(g.load(1, 1), 3.25);
    }

    #[test]
    fn grid_add_and_axpy() {
        let g = AtomicGrid::zeros(2, 2);
        g.add(0, 1, 2.0);
        g.add(0, 1, 0.5);
        assert_eq!(g.load(0, 1), 2.5);
        g.axpy_row(1, 2.0, &[1.0, -1.0]);
        assert_eq!(g.load(1, 0), 2.0);
        assert_eq!(g.load(1, 1), -2.0);
    }

    #[test]
    fn matread_agrees_between_backends() {
        let m = Mat::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let g = AtomicGrid::from_mat(&m);
        let x = [0.5, -1.0, 2.0];
        let mut ym = [0.0; 2];
        let mut yg = [0.0; 2];
        m.mul_vec(&x, &mut ym);
        g.mul_vec(&x, &mut yg);
        assert_eq!(ym, yg);

        let xt = [1.0, -2.0];
        let mut ytm = [0.0; 3];
        let mut ytg = [0.0; 3];
        m.mul_vec_t(&xt, &mut ytm);
        g.mul_vec_t(&xt, &mut ytg);
        assert_eq!(ytm, ytg);
    }

    #[test]
    fn concurrent_adds_land() {
        use std::sync::Arc;
        let g = Arc::new(AtomicGrid::zeros(4, 4));
        let mut handles = Vec::new();
        for t in 0..4 {
            let g = Arc::clone(&g);
            handles.push(std::thread::spawn(move || {
                for k in 0..1000 {
                    g.add(t, k % 4, 1.0);
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        // Disjoint rows per thread: no lost updates possible.
        for t in 0..4 {
            let sum: f64 = (0..4).map(|j| g.load(t, j)).sum();
            assert_eq!(sum, 1000.0);
        }
    }
}
