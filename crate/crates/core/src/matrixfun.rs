//! Entire matrix functions of small dense matrices: `cosh`, `sinh`, the
//! function `G(z) = sinh(z) / z` (with `G(0) = 1`) and the exponential.
//!
//! All routines use scaling and squaring. The argument is scaled by `2^-s`
//! until its 1-norm is below [`SCALED_NORM`], truncated Taylor series are
//! summed for the scaled argument, and the double-angle recurrences
//!
//! ```text
//! cosh 2X = cosh² X + sinh² X
//! sinh 2X = 2 sinh X cosh X
//!    G 2X = G(X) cosh X
//! ```
//!
//! undo the scaling. The `G` recurrence needs no inverse of the argument, so
//! singular and nilpotent matrices are handled by the same code path as
//! invertible ones.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest 1-norm the Taylor series is evaluated at.
const SCALED_NORM: f64 = 0.25;

/// Cap on the number of series terms; reached only for non-finite input.
const MAX_TERMS: usize = 40;

/// `cosh`, `sinh` and `G` of the same argument.
#[derive(Debug, Clone)]
pub struct Hyperbolic {
    pub cosh: DMatrix<f64>,
    pub sinh: DMatrix<f64>,
    pub gfun: DMatrix<f64>,
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "expected a non-empty square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(())
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn scaling_exponent(m: &DMatrix<f64>) -> u32 {
    let norm = norm1(m);
    if norm <= SCALED_NORM {
        0
    } else {
        (norm / SCALED_NORM).log2().ceil() as u32
    }
}

/// Evaluate `cosh`, `sinh` and `G` of `m` in one pass.
pub fn hyperbolic(m: &DMatrix<f64>) -> Result<Hyperbolic> {
    check_square(m)?;
    let n = m.nrows();
    let s = scaling_exponent(m);
    let scaled = m * 2f64.powi(-(s as i32));
    let sq = &scaled * &scaled;

    // cosh = sum X^{2j} / (2j)!,  G = sum X^{2j} / (2j+1)!
    let mut cosh = DMatrix::identity(n, n);
    let mut gfun = DMatrix::identity(n, n);
    let mut power = DMatrix::identity(n, n);
    let mut fact = 1.0f64;
    for j in 1..MAX_TERMS {
        power = &power * &sq;
        let k = 2 * j as u64;
        fact *= (k - 1) as f64 * k as f64;
        let c_term = &power / fact;
        let g_term = &power / (fact * (k + 1) as f64);
        cosh += &c_term;
        gfun += &g_term;
        if c_term.norm() <= f64::EPSILON * 1e-2 * cosh.norm() {
            break;
        }
    }
    let mut sinh = &scaled * &gfun;

    for _ in 0..s {
        let next_cosh = &cosh * &cosh + &sinh * &sinh;
        let next_sinh = (&sinh * &cosh) * 2.0;
        gfun = &gfun * &cosh;
        cosh = next_cosh;
        sinh = next_sinh;
    }
    Ok(Hyperbolic { cosh, sinh, gfun })
}

pub fn mat_cosh(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    hyperbolic(m).map(|h| h.cosh)
}

pub fn mat_sinh(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    hyperbolic(m).map(|h| h.sinh)
}

/// `G(M)` with `M G(M) = G(M) M = sinh(M)`, valid for singular `M`.
pub fn mat_gfun(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    hyperbolic(m).map(|h| h.gfun)
}

/// Matrix exponential by Taylor series with scaling and squaring.
pub fn mat_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m)?;
    let n = m.nrows();
    let s = scaling_exponent(m);
    let scaled = m * 2f64.powi(-(s as i32));
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for j in 1..MAX_TERMS {
        term = &term * &scaled / j as f64;
        sum += &term;
        if term.norm() <= f64::EPSILON * 1e-2 * sum.norm() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    /// Independent oracle: plain power series without scaling.
    fn series(m: &DMatrix<f64>, terms: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = m.nrows();
        let mut cosh = DMatrix::zeros(n, n);
        let mut sinh = DMatrix::zeros(n, n);
        let mut gfun = DMatrix::zeros(n, n);
        let mut power = DMatrix::identity(n, n);
        let mut fact = 1.0;
        for k in 0..terms {
            if k > 0 {
                power = &power * m;
                fact *= k as f64;
            }
            if k % 2 == 0 {
                cosh += &power / fact;
                gfun += &power / (fact * (k + 1) as f64);
            } else {
                sinh += &power / fact;
            }
        }
        (cosh, sinh, gfun)
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1.0)
    }

    #[test]
    fn zero_matrix() {
        let z = DMatrix::<f64>::zeros(2, 2);
        let h = hyperbolic(&z).unwrap();
        assert_eq!(h.cosh, DMatrix::identity(2, 2));
        assert_eq!(h.sinh, z);
        assert_eq!(h.gfun, DMatrix::identity(2, 2));
        for n in 1..5 {
            assert_eq!(mat_gfun(&DMatrix::zeros(n, n)).unwrap(), DMatrix::identity(n, n));
        }
    }

    #[test]
    fn scalar_values() {
        let one = dmatrix![1.0];
        assert_relative_eq!(mat_cosh(&one).unwrap()[(0, 0)], 1.5430806348152437, max_relative = 1e-14);
        assert_relative_eq!(mat_sinh(&one).unwrap()[(0, 0)], 1.1752011936438014, max_relative = 1e-14);
        assert_relative_eq!(mat_gfun(&one).unwrap()[(0, 0)], 1.1752011936438014, max_relative = 1e-14);
    }

    #[test]
    fn diagonal_matches_scalar_functions() {
        let c = mat_cosh(&dmatrix![1.0, 0.0; 0.0, -1.0]).unwrap();
        assert_relative_eq!(c[(0, 0)], 1f64.cosh(), max_relative = 1e-14);
        assert_relative_eq!(c[(1, 1)], 1f64.cosh(), max_relative = 1e-14);
        assert_eq!(c[(0, 1)], 0.0);
        let s = mat_sinh(&dmatrix![1.0, 0.0; 0.0, 2.0]).unwrap();
        assert_relative_eq!(s[(0, 0)], 1f64.sinh(), max_relative = 1e-14);
        assert_relative_eq!(s[(1, 1)], 2f64.sinh(), max_relative = 1e-14);
    }

    #[test]
    fn nilpotent_gfun_is_identity() {
        let m = dmatrix![0.0, 1.0; 0.0, 0.0];
        let g = mat_gfun(&m).unwrap();
        assert_relative_eq!(g, DMatrix::identity(2, 2), epsilon = 1e-15);
        assert_relative_eq!(&m * &g, mat_sinh(&m).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn large_symmetric_argument_against_eigendecomposition() {
        let m = dmatrix![12.0, -5.0, 3.0; -5.0, -8.0, 2.0; 3.0, 2.0, 6.0];
        let m: DMatrix<f64> = &m * (20.0 / m.norm());
        let eig = m.clone().symmetric_eigen();
        let apply = |f: fn(f64) -> f64| {
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
            &eig.eigenvectors * d * eig.eigenvectors.transpose()
        };
        let h = hyperbolic(&m).unwrap();
        assert!(rel_err(&h.cosh, &apply(f64::cosh)) < 1e-12);
        assert!(rel_err(&h.sinh, &apply(f64::sinh)) < 1e-12);
        let e = mat_exp(&m).unwrap();
        assert!(rel_err(&e, &apply(f64::exp)) < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(mat_cosh(&dmatrix![f64::NAN]).is_err());
        assert!(mat_sinh(&DMatrix::zeros(2, 3)).is_err());
        assert!(mat_gfun(&DMatrix::zeros(0, 0)).is_err());
    }

    fn small_matrix() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..=4).prop_flat_map(|n| {
            proptest::collection::vec(-1.0f64..1.0, n * n)
                .prop_map(move |v| DMatrix::from_vec(n, n, v))
        })
    }

    proptest! {
        #[test]
        fn agrees_with_power_series(m in small_matrix(), scale in 0.01f64..2.0) {
            let m = &m * (scale / m.norm().max(1e-12));
            let (c, s, g) = series(&m, 30);
            let h = hyperbolic(&m).unwrap();
            prop_assert!((&h.cosh - c).norm() < 1e-10);
            prop_assert!((&h.sinh - s).norm() < 1e-10);
            prop_assert!((&h.gfun - g).norm() < 1e-10);
            let e = mat_exp(&m).unwrap();
            prop_assert!((e - (&h.cosh + &h.sinh)).norm() < 1e-10);
        }

        #[test]
        fn cosh_commutes_with_argument(m in small_matrix(), scale in 0.01f64..5.0) {
            let m = &m * (scale / m.norm().max(1e-12));
            let c = mat_cosh(&m).unwrap();
            prop_assert!((&c * &m - &m * &c).norm() < 1e-10);
        }
    }
}
