//! Gaussian random projection and pseudoinverse recovery.
//!
//! A matrix `M` (d1 x d2) is compressed to `M A` (d1 x k) with
//! `A_ij ~ N(0, 1/k)`, and approximately recovered as `(M A) A⁺`. The
//! projection matrix is never stored: it is regenerated from `(seed, d2, k)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::rng::rng_from_seed;
use crate::error::{Error, Result};

/// Smallest |R_ii| accepted when orthogonalizing `A`.
pub const RANK_PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub source_dim: usize,
    pub target_dim: usize,
    pub seed: u64,
}

impl ProjectionSpec {
    pub fn new(source_dim: usize, target_dim: usize, seed: u64) -> Result<Self> {
        if target_dim == 0 || target_dim > source_dim {
            return Err(Error::Input(format!(
                "projection target dim {target_dim} must be in 1..={source_dim}"
            )));
        }
        Ok(Self {
            source_dim,
            target_dim,
            seed,
        })
    }

    /// Regenerate `A` (source_dim x target_dim). Entries are drawn row-major
    /// from a ChaCha8 stream, so the result is identical for identical specs.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut rng = rng_from_seed(self.seed);
        let scale = 1.0 / (self.target_dim as f64).sqrt();
        let (rows, cols) = (self.source_dim, self.target_dim);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let z: f64 = rng.sample(StandardNormal);
            data.push(z * scale);
        }
        DMatrix::from_row_slice(rows, cols, &data)
    }

    /// Moore-Penrose pseudoinverse of `A` via a QR factorization.
    pub fn pseudoinverse(&self) -> Result<DMatrix<f64>> {
        pseudoinverse_full_column_rank(&self.matrix()).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("{msg} (projection seed {})", self.seed)),
            other => other,
        })
    }
}

/// `A⁺ = R⁻¹ Qᵀ` for a tall matrix with full column rank.
pub fn pseudoinverse_full_column_rank(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    if cols > rows {
        return Err(Error::Shape(format!(
            "pseudoinverse expects a tall matrix, got {rows}x{cols}"
        )));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    for i in 0..cols {
        if r[(i, i)].abs() < RANK_PIVOT_TOLERANCE {
            return Err(Error::Numeric(format!(
                "rank deficient projection: pivot {i} is {:e}",
                r[(i, i)]
            )));
        }
    }
    let q = qr.q();
    let qt = q.transpose();
    // Back-substitution of R X = Qᵀ.
    let mut x = DMatrix::<f64>::zeros(cols, rows);
    for c in 0..rows {
        for i in (0..cols).rev() {
            let mut acc = qt[(i, c)];
            for j in i + 1..cols {
                acc -= r[(i, j)] * x[(j, c)];
            }
            x[(i, c)] = acc / r[(i, i)];
        }
    }
    Ok(x)
}

/// `M A` with `A` regenerated from `spec`.
pub fn project(m: &DMatrix<f64>, spec: &ProjectionSpec) -> Result<DMatrix<f64>> {
    project_with(m, &spec.matrix())
}

/// `M A` for an explicit `A`.
pub fn project_with(m: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() != a.nrows() {
        return Err(Error::Shape(format!(
            "cannot project {}x{} matrix with {}x{} projection",
            m.nrows(),
            m.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(m * a)
}

/// `M' A⁺` with `A` regenerated from `spec`.
pub fn recover(mp: &DMatrix<f64>, spec: &ProjectionSpec) -> Result<DMatrix<f64>> {
    recover_with(mp, &spec.pseudoinverse()?)
}

pub fn recover_with(mp: &DMatrix<f64>, pinv: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if mp.ncols() != pinv.nrows() {
        return Err(Error::Shape(format!(
            "compressed matrix has {} columns, pseudoinverse expects {}",
            mp.ncols(),
            pinv.nrows()
        )));
    }
    Ok(mp * pinv)
}

/// Smallest target dimension for which a Gaussian map preserves all pairwise
/// squared distances of `n` points within `(1 ± eps)` with high probability
/// (Johnson-Lindenstrauss bound).
pub fn jl_min_dim(n: usize, eps: f64) -> usize {
    assert!(eps > 0.0 && eps < 1.0, "eps must lie in (0, 1)");
    let denom = eps * eps / 2.0 - eps.powi(3) / 3.0;
    (4.0 * (n as f64).ln() / denom).ceil() as usize
}

pub fn relative_frobenius_error(original: &[f64], approx: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in original.iter().zip(approx) {
        num += (a - b) * (a - b);
        den += a * a;
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::rng_from_seed;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn roundtrip_error(m: &DMatrix<f64>, spec: &ProjectionSpec) -> f64 {
        let back = recover(&project(m, spec).unwrap(), spec).unwrap();
        relative_frobenius_error(m.as_slice(), back.as_slice())
    }

    #[test]
    fn identity_projection_is_passthrough() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let out = project_with(&m, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn square_projection_recovers_exactly() {
        let m = random_matrix(6, 16, 1);
        let spec = ProjectionSpec::new(16, 16, 99).unwrap();
        assert!(roundtrip_error(&m, &spec) < 1e-6);
    }

    #[test]
    fn zero_roundtrips_to_zero() {
        let spec = ProjectionSpec::new(12, 4, 5).unwrap();
        let z = DMatrix::<f64>::zeros(3, 12);
        let back = recover(&project(&z, &spec).unwrap(), &spec).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matrix_regeneration_is_bitwise_stable() {
        let spec = ProjectionSpec::new(33, 7, 1234).unwrap();
        let a = spec.matrix();
        let b = spec.matrix();
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let spec = ProjectionSpec::new(8, 4, 0).unwrap();
        let m = DMatrix::<f64>::zeros(2, 9);
        assert!(matches!(project(&m, &spec), Err(Error::Shape(_))));
        assert!(ProjectionSpec::new(8, 9, 0).is_err());
        assert!(ProjectionSpec::new(8, 0, 0).is_err());
    }

    #[test]
    fn rank_deficiency_names_the_seed() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(
            pseudoinverse_full_column_rank(&a),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn larger_k_recovers_better_on_average() {
        // brute-force average over 24 seeds
        let d2 = 64;
        let (mut half, mut eighth) = (0.0, 0.0);
        let seeds = 24;
        for s in 0..seeds {
            let m = random_matrix(5, d2, 1000 + s);
            half += roundtrip_error(&m, &ProjectionSpec::new(d2, d2 / 2, s).unwrap());
            eighth += roundtrip_error(&m, &ProjectionSpec::new(d2, d2 / 8, s).unwrap());
        }
        assert!(half / (seeds as f64) < eighth / (seeds as f64));
    }

    #[test]
    fn jl_bound_matches_closed_form() {
        // 4 ln 64 / (0.125 - 0.125/3) = 199.6...
        assert_eq!(jl_min_dim(64, 0.5), 200);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn project_recover_is_linear(
                seed in 0u64..1000,
                alpha in -3.0f64..3.0,
                beta in -3.0f64..3.0,
            ) {
                let spec = ProjectionSpec::new(20, 6, seed).unwrap();
                let m = random_matrix(4, 20, seed + 1);
                let n = random_matrix(4, 20, seed + 2);
                let lhs = recover(&project(&(&m * alpha + &n * beta), &spec).unwrap(), &spec).unwrap();
                let rm = recover(&project(&m, &spec).unwrap(), &spec).unwrap();
                let rn = recover(&project(&n, &spec).unwrap(), &spec).unwrap();
                let rhs = rm * alpha + rn * beta;
                let err = relative_frobenius_error(rhs.as_slice(), lhs.as_slice());
                prop_assert!(err < 1e-8 || rhs.norm() < 1e-12);
            }
        }
    }
}
