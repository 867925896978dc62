use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{config_err, Result};

const MAX_SWEEPS: usize = 60;

/// Principal components of a feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// Column means (all zeros when fitted uncentered).
    pub mean: Vec<f64>,
    /// `F × K`, orthonormal columns in descending singular-value order.
    pub components: Matrix,
    /// Top-K singular values of the (centered) data.
    pub singular_values: Vec<f64>,
}

impl Pca {
    pub fn k(&self) -> usize {
        self.components.cols()
    }

    /// Coordinates `(z − μ)·V`.
    pub fn project(&self, features: &Matrix) -> Result<Matrix> {
        features.sub_row(&self.mean).matmul(&self.components)
    }

    /// `coords·Vᵀ + μ`.
    pub fn back_project(&self, coords: &Matrix) -> Result<Matrix> {
        let mut out = coords.matmul_t(&self.components)?;
        for i in 0..out.rows() {
            for (v, &m) in out.row_mut(i).iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(out)
    }

    /// Sum of squared singular values, i.e. the (unnormalized) captured
    /// variance.
    pub fn captured_energy(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }
}

/// Thin SVD of `a` (`n × f`) by one-sided Jacobi rotations.
///
/// Returns all `f` singular values in descending order together with the
/// matching right singular vectors as the columns of an `f × f` orthogonal
/// matrix. Each column's largest-magnitude entry is made positive.
pub fn singular_value_decomposition(a: &Matrix) -> (Vec<f64>, Matrix) {
    let (n, f) = a.shape();
    // Column-major working copy: cols[j] is column j of A·V.
    let mut cols: Vec<Vec<f64>> = (0..f).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..f)
        .map(|j| {
            let mut e = alloc::vec![0.0; f];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..f {
            for q in p + 1..f {
                let (alpha, beta, gamma) = (0..n).fold((0.0, 0.0, 0.0), |(al, be, ga), i| {
                    let (x, y) = (cols[p][i], cols[q][i]);
                    (al + x * x, be + y * y, ga + x * y)
                });
                if gamma == 0.0 || gamma.abs() <= 1e-15 * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = cols.iter().map(|c| super::norm(c)).collect();
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));

    let mut vm = Matrix::zeros(f, f);
    let mut sorted = Vec::with_capacity(f);
    for (dst, &src) in order.iter().enumerate() {
        sorted.push(sigma[src]);
        let col = &v[src];
        let mut pivot = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in col.iter().enumerate() {
            vm[(i, dst)] = sign * x;
        }
    }
    (sorted, vm)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fits the top-`k` principal components of `features` (`N × F`).
///
/// With `center` the column means are removed before the decomposition and
/// reported in [`Pca::mean`]; otherwise the mean is all zeros.
pub fn pca_fit(features: &Matrix, k: usize, center: bool) -> Result<Pca> {
    let (n, f) = features.shape();
    if k == 0 || k > n.min(f) {
        return Err(config_err!(
            "cannot fit {k} principal components to a {n}x{f} feature matrix"
        ));
    }
    let mean = if center { features.column_means() } else { alloc::vec![0.0; f] };
    let centered = features.sub_row(&mean);
    let (sigma, v) = singular_value_decomposition(&centered);
    let mut components = Matrix::zeros(f, k);
    for i in 0..f {
        for j in 0..k {
            components[(i, j)] = v[(i, j)];
        }
    }
    Ok(Pca { mean, components, singular_values: sigma[..k].to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn gaussian(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    fn orthonormality_error(v: &Matrix) -> f64 {
        v.t_matmul(v).unwrap().sub(&Matrix::identity(v.cols())).unwrap().max_abs()
    }

    #[test]
    fn rank_k_data_is_reproduced() {
        let mut rng = Rng::new(1);
        let latent = gaussian(&mut rng, 40, 3);
        let mix = gaussian(&mut rng, 3, 7);
        let offset: Vec<f64> = (0..7).map(|j| j as f64).collect();
        let z = latent.matmul(&mix).unwrap().sub_row(&offset);
        let pca = pca_fit(&z, 3, true).unwrap();
        let recon = pca.back_project(&pca.project(&z).unwrap()).unwrap();
        assert!(recon.sub(&z).unwrap().max_abs() <= 1e-6);
        assert!(orthonormality_error(&pca.components) <= 1e-8);
    }

    #[test]
    fn axis_aligned_data_gives_signed_permutation() {
        let mut z = Matrix::zeros(5, 5);
        for i in 0..5 {
            z[(i, i)] = (5 - i) as f64 * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let pca = pca_fit(&z, 5, false).unwrap();
        let v = &pca.components;
        for j in 0..5 {
            let col = v.column(j);
            let ones = col.iter().filter(|x| (x.abs() - 1.0).abs() < 1e-12).count();
            let zeros = col.iter().filter(|x| x.abs() < 1e-12).count();
            assert_eq!((ones, zeros), (1, 4));
            assert!(col.iter().all(|&x| x > -1e-12), "largest entry should be positive");
        }
    }

    #[test]
    fn components_ordered_and_error_non_increasing() {
        let mut rng = Rng::new(8);
        let z = gaussian(&mut rng, 50, 8);
        let mut last = f64::INFINITY;
        for k in 1..=8 {
            let pca = pca_fit(&z, k, true).unwrap();
            assert!(pca.singular_values.windows(2).all(|w| w[0] >= w[1]));
            assert!(orthonormality_error(&pca.components) <= 1e-8);
            let recon = pca.back_project(&pca.project(&z).unwrap()).unwrap();
            let err = recon.sub(&z).unwrap().frobenius_sq();
            assert!(err <= last + 1e-9);
            last = err;
        }
        assert!(last < 1e-18);
    }

    #[test]
    fn k_out_of_range() {
        let z = Matrix::zeros(3, 5);
        assert!(pca_fit(&z, 4, true).is_err());
        assert!(pca_fit(&z, 0, true).is_err());
    }
}
