//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Everything here works on `nalgebra` dynamic matrices. Problem sizes are a
//! handful of modes (at most 8x8 Hamiltonian pencils), so clarity wins over
//! blocking or workspace reuse.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex64>;

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

pub fn frobenius(a: &Mat) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn to_complex(a: &Mat) -> CMat {
    a.map(|x| Complex64::new(x, 0.0))
}

pub fn real_part(a: &CMat) -> Mat {
    a.map(|z| z.re)
}

pub fn imag_part(a: &CMat) -> Mat {
    a.map(|z| z.im)
}

/// Largest absolute deviation of `a` from Hermiticity.
pub fn hermitian_deviation(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Diagonal similarity scaling in the style of LAPACK `gebal` (scaling only,
/// no permutation). Returns `d` such that `D^{-1} A D` has rows and columns of
/// comparable norm, with every `d_i` a power of two so the transform is exact.
pub fn balance(a: &Mat) -> DVector<f64> {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    let mut work = a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < 100 {
        converged = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += work[(j, i)].abs();
                    r += work[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            g = r * RADIX;
            while c >= g {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r) / f < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..n {
                    work[(i, j)] /= f;
                    work[(j, i)] *= f;
                }
            }
        }
    }
    d
}

/// `D^{-1} A D` for a diagonal scaling vector.
pub fn scale_similarity(a: &Mat, d: &DVector<f64>) -> Mat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * d[j] / d[i])
}

/// `D A D` (or `D^{-1} A D^{-1}` when `inverse` is set).
pub fn scale_congruence(a: &Mat, d: &DVector<f64>, inverse: bool) -> Mat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        if inverse {
            a[(i, j)] / (d[i] * d[j])
        } else {
            a[(i, j)] * d[i] * d[j]
        }
    })
}

/// Complex Schur factorization `A = Q T Q^H` with `T` upper triangular.
#[derive(Debug, Clone)]
pub struct ComplexSchur {
    pub q: CMat,
    pub t: CMat,
}

impl ComplexSchur {
    pub fn new(a: &Mat) -> Result<Self> {
        Self::from_complex(&to_complex(a))
    }

    pub fn from_complex(a: &CMat) -> Result<Self> {
        let n = a.nrows();
        // The shifted QR iteration occasionally stalls at the tightest
        // deflation threshold; a few ulps more is harmless.
        let schur = [1.0, 4.0, 64.0]
            .iter()
            .find_map(|k| nalgebra::Schur::try_new(a.clone(), k * f64::EPSILON, 10_000))
            .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
        let (q, mut t) = schur.unpack();
        let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for j in 0..n {
            for i in (j + 1)..n {
                if t[(i, j)].norm() > 1e-8 * scale {
                    return Err(Error::Numerical(format!(
                        "Schur factor not triangular at ({i},{j}): {:.3e}",
                        t[(i, j)].norm()
                    )));
                }
                t[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
        Ok(Self { q, t })
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        (0..self.t.nrows()).map(|i| self.t[(i, i)]).collect()
    }

    /// Swap the adjacent diagonal entries `k` and `k + 1` with a unitary
    /// Givens rotation, keeping `Q T Q^H` invariant.
    fn swap_adjacent(&mut self, k: usize) {
        let n = self.t.nrows();
        let t11 = self.t[(k, k)];
        let t22 = self.t[(k + 1, k + 1)];
        let (cs, sn) = givens(self.t[(k, k + 1)], t22 - t11);
        for j in (k + 2)..n {
            let x = self.t[(k, j)];
            let y = self.t[(k + 1, j)];
            self.t[(k, j)] = x * cs + sn * y;
            self.t[(k + 1, j)] = y * cs - sn.conj() * x;
        }
        let snc = sn.conj();
        for i in 0..k {
            let x = self.t[(i, k)];
            let y = self.t[(i, k + 1)];
            self.t[(i, k)] = x * cs + snc * y;
            self.t[(i, k + 1)] = y * cs - snc.conj() * x;
        }
        self.t[(k, k)] = t22;
        self.t[(k + 1, k + 1)] = t11;
        for i in 0..n {
            let x = self.q[(i, k)];
            let y = self.q[(i, k + 1)];
            self.q[(i, k)] = x * cs + snc * y;
            self.q[(i, k + 1)] = y * cs - snc.conj() * x;
        }
    }

    /// Move every eigenvalue satisfying `select` to the leading block, keeping
    /// the relative order within each group. Returns the size of the block.
    pub fn reorder(&mut self, select: impl Fn(Complex64) -> bool) -> usize {
        let n = self.t.nrows();
        let mut head = 0;
        for j in 0..n {
            if select(self.t[(j, j)]) {
                let mut pos = j;
                while pos > head {
                    self.swap_adjacent(pos - 1);
                    pos -= 1;
                }
                head += 1;
            }
        }
        head
    }
}

/// Plane rotation `(c, s)` with real `c` such that
/// `[c s; -conj(s) c] [f; g] = [r; 0]`.
fn givens(f: Complex64, g: Complex64) -> (f64, Complex64) {
    let zero = Complex64::new(0.0, 0.0);
    if g == zero {
        return (1.0, zero);
    }
    if f == zero {
        return (0.0, g.conj() / g.norm());
    }
    let f1 = f.norm();
    let g1 = g.norm();
    let d = f1.hypot(g1);
    let c = f1 / d;
    let s = (f / f1) * g.conj() / d;
    (c, s)
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(a: &Mat) -> Vec<Complex64> {
    a.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(a: &Mat) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(a.clone());
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_eig_symmetric(a: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of the Hermitian matrix `Σ + (i/2) J`; nonnegative for
/// covariances that obey the uncertainty principle.
pub fn uncertainty_margin(sigma: &Mat, j: &Mat) -> f64 {
    let n = sigma.nrows();
    let m = CMat::from_fn(n, n, |r, c| {
        Complex64::new(0.5 * (sigma[(r, c)] + sigma[(c, r)]), 0.5 * j[(r, c)])
    });
    hermitian_eigen(&m).0[0]
}

/// Numerical rank of a complex matrix via singular values.
pub fn rank(a: &CMat, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Mat {
        Mat::from_row_slice(
            4,
            4,
            &[
                -0.3, 1.0, 0.2, 0.0, //
                -1.0, -0.3, 0.0, 0.5, //
                0.4, 0.0, 0.7, 2.0, //
                0.0, -0.1, -2.0, 0.7,
            ],
        )
    }

    fn reconstruct(s: &ComplexSchur) -> CMat {
        &s.q * &s.t * s.q.adjoint()
    }

    #[test]
    fn schur_reconstructs_input() {
        let a = sample();
        let s = ComplexSchur::new(&a).unwrap();
        let err = (reconstruct(&s) - to_complex(&a)).norm();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn reorder_moves_stable_block_first() {
        let a = sample();
        let mut s = ComplexSchur::new(&a).unwrap();
        let k = s.reorder(|z| z.re < 0.0);
        assert_eq!(k, 2);
        let ev = s.eigenvalues();
        assert!(ev[0].re < 0.0 && ev[1].re < 0.0);
        assert!(ev[2].re > 0.0 && ev[3].re > 0.0);
        let err = (reconstruct(&s) - to_complex(&a)).norm();
        assert!(err < 1e-12, "{err}");
        let unitarity = (s.q.adjoint() * &s.q - CMat::identity(4, 4)).norm();
        assert!(unitarity < 1e-13);
    }

    #[test]
    fn balancing_is_exact_similarity() {
        let mut a = sample();
        a[(0, 2)] = 1e6;
        a[(2, 0)] = 1e-6;
        let d = balance(&a);
        let b = scale_similarity(&a, &d);
        let back = Mat::from_fn(4, 4, |i, j| b[(i, j)] * d[i] / d[j]);
        assert!((back - &a).abs().max() == 0.0);
        assert!(b.abs().max() < a.abs().max());
        for x in d.iter() {
            assert_eq!(x.log2().fract(), 0.0);
        }
    }

    #[test]
    fn hermitian_eigen_is_sorted() {
        let m = CMat::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.5, 0.0),
                Complex64::new(0.0, 0.5),
                Complex64::new(0.0, -0.5),
                Complex64::new(0.5, 0.0),
            ],
        );
        let (vals, _) = hermitian_eigen(&m);
        assert!((vals[0] - 0.0).abs() < 1e-15);
        assert!((vals[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vacuum_saturates_uncertainty() {
        let j = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let margin = uncertainty_margin(&(Mat::identity(2, 2) * 0.5), &j);
        assert!(margin.abs() < 1e-15);
        assert!(uncertainty_margin(&(Mat::identity(2, 2) * 0.4), &j) < 0.0);
    }
}
