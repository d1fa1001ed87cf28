//! Plant description: the ODE block `X' = AX + B1 w(0) + B2 w_t(0) + B3 w(1) + B4 w_t(1)`,
//! its output matrix `C`, the feedback parameters `alpha`, `beta` and the
//! estimator gain `k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub a: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub b2: DVector<f64>,
    pub b3: DVector<f64>,
    pub b4: DVector<f64>,
    pub c: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub k_est: f64,
}

/// JSON layout of [`PlantConfig`]: matrices as row-major nested arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfigFile {
    pub a: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    #[serde(default)]
    pub b2: Option<Vec<f64>>,
    #[serde(default)]
    pub b3: Option<Vec<f64>>,
    #[serde(default)]
    pub b4: Option<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "one")]
    pub k_est: f64,
}

fn one() -> f64 {
    1.0
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::invalid(format!("{name}: empty matrix")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::invalid(format!(
            "{name}: row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl PlantConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b1: DVector<f64>,
        b2: DVector<f64>,
        b3: DVector<f64>,
        b4: DVector<f64>,
        c: DMatrix<f64>,
        alpha: f64,
        beta: f64,
        k_est: f64,
    ) -> Result<Self> {
        let cfg = Self { a, b1, b2, b3, b4, c, alpha, beta, k_est };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The one-dimensional example used throughout the tests:
    /// `A = 0`, `B1 = 1`, `B2 = B3 = B4 = 0`, `C = 1`, `alpha = beta = k = 1`.
    pub fn worked_scalar() -> Self {
        let z = DVector::zeros(1);
        Self {
            a: DMatrix::zeros(1, 1),
            b1: DVector::from_element(1, 1.0),
            b2: z.clone(),
            b3: z.clone(),
            b4: z,
            c: DMatrix::identity(1, 1),
            alpha: 1.0,
            beta: 1.0,
            k_est: 1.0,
        }
    }

    /// Two-state demonstration plant with all four boundary interconnections
    /// active and an unstable open-loop matrix (eigenvalues 1 and -2).
    pub fn demo() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, -1.0]),
            b1: DVector::from_vec(vec![0.0, 1.0]),
            b2: DVector::from_vec(vec![0.2, 0.0]),
            b3: DVector::from_vec(vec![0.0, 0.3]),
            b4: DVector::from_vec(vec![0.1, -0.1]),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            alpha: 1.0,
            beta: 1.0,
            k_est: 1.0,
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if n == 0 || self.a.ncols() != n {
            return Err(Error::invalid(format!(
                "A must be square and non-empty, got {}x{}",
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        for (name, b) in [("b1", &self.b1), ("b2", &self.b2), ("b3", &self.b3), ("b4", &self.b4)] {
            if b.len() != n {
                return Err(Error::invalid(format!("{name} has length {}, expected {n}", b.len())));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} has non-finite entries")));
            }
        }
        if self.c.ncols() != n || self.c.nrows() == 0 {
            return Err(Error::invalid(format!(
                "C must have {n} columns, got {}x{}",
                self.c.nrows(),
                self.c.ncols()
            )));
        }
        if self.a.iter().chain(self.c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("A or C has non-finite entries"));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("k_est", self.k_est)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be a finite positive number, got {v}")));
            }
        }
        Ok(())
    }

    /// `A B2 + B1`, the vector driving `L2'(0)`.
    pub fn left_drive(&self) -> DVector<f64> {
        &self.a * &self.b2 + &self.b1
    }

    /// `A B4 + B3`, the vector driving the right-end kernel condition.
    pub fn right_drive(&self) -> DVector<f64> {
        &self.a * &self.b4 + &self.b3
    }

    /// `alpha I + beta A`.
    pub fn robin_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::identity(n, n) * self.alpha + &self.a * self.beta
    }
}

impl TryFrom<PlantConfigFile> for PlantConfig {
    type Error = Error;

    fn try_from(f: PlantConfigFile) -> Result<Self> {
        let a = rows_to_matrix("a", &f.a)?;
        let n = a.nrows();
        let vector = |v: Option<Vec<f64>>| v.map_or_else(|| DVector::zeros(n), DVector::from_vec);
        PlantConfig::new(
            a,
            DVector::from_vec(f.b1),
            vector(f.b2),
            vector(f.b3),
            vector(f.b4),
            rows_to_matrix("c", &f.c)?,
            f.alpha,
            f.beta,
            f.k_est,
        )
    }
}

impl From<&PlantConfig> for PlantConfigFile {
    fn from(p: &PlantConfig) -> Self {
        Self {
            a: matrix_to_rows(&p.a),
            b1: p.b1.iter().copied().collect(),
            b2: Some(p.b2.iter().copied().collect()),
            b3: Some(p.b3.iter().copied().collect()),
            b4: Some(p.b4.iter().copied().collect()),
            c: matrix_to_rows(&p.c),
            alpha: p.alpha,
            beta: p.beta,
            k_est: p.k_est,
        }
    }
}

impl Serialize for PlantConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PlantConfigFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PlantConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = PlantConfigFile::deserialize(d)?;
        PlantConfig::try_from(file).map_err(serde::de::Error::custom)
    }
}
