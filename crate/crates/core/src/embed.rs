//! Two-view joint embedding by canonical correlation analysis.
//!
//! Fitting whitens each view with its ridge-regularized covariance and takes
//! the SVD of the whitened cross-covariance. Embedded vectors are scaled per
//! component by `correlation^eig_power` and normalized to unit length, so
//! phrase and region vectors can be compared by cosine distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty feature vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Concatenation of several vectors, used for multi-word text views.
    pub fn concat(parts: &[&FeatureVector]) -> Result<Self> {
        Self::new(parts.iter().flat_map(|p| p.0.iter().copied()).collect())
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        FeatureVector::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    X,
    Y,
}

pub const DEFAULT_EIG_POWER: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CcaModelRepr", into = "CcaModelRepr")]
pub struct CcaModel {
    proj_x: DMatrix<f64>,
    proj_y: DMatrix<f64>,
    mean_x: DVector<f64>,
    mean_y: DVector<f64>,
    correlations: Vec<f64>,
    eig_power: f64,
    reg: f64,
}

/// A unit-length embedding, or the zero vector when projection collapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcaCost {
    pub cost: f64,
    pub degenerate: bool,
}

fn center(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows() as f64;
    let mean = DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n));
    let mut c = m.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    (c, mean)
}

/// `C^{-1/2}` for a symmetric positive definite `C`.
fn inv_sqrt(c: DMatrix<f64>, reg: f64, view: char) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(c);
    let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let ill_conditioned = !(min > max * 1e-12);
    if ill_conditioned && (reg == 0.0 || min <= 0.0) {
        return Err(Error::RankDeficient { view });
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Fit `k` canonical components on paired rows of `x` and `y`.
///
/// Covariances use the `1/n` normalization, so repeating every pair leaves
/// the model unchanged. `reg` is added to both auto-covariance diagonals.
pub fn fit_cca(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize, reg: f64) -> Result<CcaModel> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::LengthMismatch {
            what: "cca paired rows",
            left: n,
            right: y.nrows(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument("cca needs at least 2 rows".into()));
    }
    let (dx, dy) = (x.ncols(), y.ncols());
    if k == 0 || k > dx.min(dy) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            dx.min(dy)
        )));
    }
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(Error::InvalidArgument(format!("reg = {reg} must be >= 0")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cca training data"));
    }

    let (xc, mean_x) = center(x);
    let (yc, mean_y) = center(y);
    let nf = n as f64;
    let cxx = xc.transpose() * &xc / nf + DMatrix::identity(dx, dx) * reg;
    let cyy = yc.transpose() * &yc / nf + DMatrix::identity(dy, dy) * reg;
    let cxy = xc.transpose() * &yc / nf;

    let wx = inv_sqrt(cxx, reg, 'x')?;
    let wy = inv_sqrt(cyy, reg, 'y')?;
    let t = &wx * cxy * &wy;
    let svd = t.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v = svd.v_t.expect("svd computed with v_t").transpose();

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    order.truncate(k);

    let mut proj_x = DMatrix::zeros(dx, k);
    let mut proj_y = DMatrix::zeros(dy, k);
    let mut correlations = Vec::with_capacity(k);
    for (c, &i) in order.iter().enumerate() {
        let mut px = &wx * u.column(i);
        let mut py = &wy * v.column(i);
        // sign convention: largest-magnitude entry of the x column positive
        let pivot = px
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (j, &val)| {
                if val.abs() > best.1.abs() {
                    (j, val)
                } else {
                    best
                }
            });
        if pivot.1 < 0.0 {
            px.neg_mut();
            py.neg_mut();
        }
        proj_x.set_column(c, &px);
        proj_y.set_column(c, &py);
        correlations.push(svd.singular_values[i].clamp(0.0, 1.0 + 1e-8));
    }

    Ok(CcaModel {
        proj_x,
        proj_y,
        mean_x,
        mean_y,
        correlations,
        eig_power: DEFAULT_EIG_POWER,
        reg,
    })
}

impl CcaModel {
    pub fn with_eig_power(mut self, p: f64) -> Self {
        self.eig_power = p;
        self
    }

    pub fn correlations(&self) -> &[f64] {
        &self.correlations
    }

    pub fn components(&self) -> usize {
        self.correlations.len()
    }

    pub fn eig_power(&self) -> f64 {
        self.eig_power
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn input_dim(&self, view: View) -> usize {
        match view {
            View::X => self.proj_x.nrows(),
            View::Y => self.proj_y.nrows(),
        }
    }

    pub fn projection(&self, view: View) -> &DMatrix<f64> {
        match view {
            View::X => &self.proj_x,
            View::Y => &self.proj_y,
        }
    }

    /// Center, project, scale and L2-normalize one vector.
    pub fn embed(&self, v: &FeatureVector, view: View) -> Result<Embedding> {
        let (proj, mean) = match view {
            View::X => (&self.proj_x, &self.mean_x),
            View::Y => (&self.proj_y, &self.mean_y),
        };
        if v.dim() != proj.nrows() {
            return Err(Error::DimensionMismatch {
                what: "cca embed input",
                expected: proj.nrows(),
                got: v.dim(),
            });
        }
        let centered = DVector::from_column_slice(v.values()) - mean;
        let mut z: Vec<f64> = (proj.transpose() * centered).iter().copied().collect();
        for (zi, c) in z.iter_mut().zip(&self.correlations) {
            *zi *= c.powf(self.eig_power);
        }
        let norm = z.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm > f64::MIN_POSITIVE) || !norm.is_finite() {
            return Ok(Embedding {
                values: vec![0.0; z.len()],
                normalized: false,
            });
        }
        z.iter_mut().for_each(|a| *a /= norm);
        Ok(Embedding {
            values: z,
            normalized: true,
        })
    }

    /// Cosine distance between a phrase (x view) and a region (y view).
    pub fn cca_cost(&self, phrase: &FeatureVector, region: &FeatureVector) -> Result<CcaCost> {
        let p = self.embed(phrase, View::X)?;
        let r = self.embed(region, View::Y)?;
        Ok(cosine_cost(&p, &r))
    }
}

/// `1 - cos(a, b)` in `[0, 2]`; 2 with the degenerate flag when either side
/// could not be normalized.
pub fn cosine_cost(a: &Embedding, b: &Embedding) -> CcaCost {
    if !a.normalized || !b.normalized {
        return CcaCost {
            cost: 2.0,
            degenerate: true,
        };
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(u, v)| u * v).sum();
    CcaCost {
        cost: (1.0 - dot).clamp(0.0, 2.0),
        degenerate: false,
    }
}

#[derive(Serialize, Deserialize)]
struct CcaModelRepr {
    dim_x: usize,
    dim_y: usize,
    k: usize,
    reg: f64,
    eig_power: f64,
    correlations: Vec<f64>,
    mean_x: Vec<f64>,
    mean_y: Vec<f64>,
    /// row-major, `dim_x` rows of `k`
    proj_x: Vec<Vec<f64>>,
    proj_y: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &'static str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::DimensionMismatch {
            what,
            expected: nrows,
            got: rows.len(),
        });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            what,
            expected: ncols,
            got: bad.len(),
        });
    }
    Ok(DMatrix::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}

impl From<CcaModel> for CcaModelRepr {
    fn from(m: CcaModel) -> Self {
        CcaModelRepr {
            dim_x: m.proj_x.nrows(),
            dim_y: m.proj_y.nrows(),
            k: m.correlations.len(),
            reg: m.reg,
            eig_power: m.eig_power,
            correlations: m.correlations,
            mean_x: m.mean_x.iter().copied().collect(),
            mean_y: m.mean_y.iter().copied().collect(),
            proj_x: rows_of(&m.proj_x),
            proj_y: rows_of(&m.proj_y),
        }
    }
}

impl TryFrom<CcaModelRepr> for CcaModel {
    type Error = Error;

    fn try_from(r: CcaModelRepr) -> Result<Self> {
        if r.correlations.len() != r.k || r.k == 0 || r.k > r.dim_x.min(r.dim_y) {
            return Err(Error::InvalidArgument(format!(
                "cca model: k = {} with {} correlations for dims {}x{}",
                r.k,
                r.correlations.len(),
                r.dim_x,
                r.dim_y
            )));
        }
        if r.mean_x.len() != r.dim_x || r.mean_y.len() != r.dim_y {
            return Err(Error::DimensionMismatch {
                what: "cca model means",
                expected: r.dim_x,
                got: r.mean_x.len(),
            });
        }
        Ok(CcaModel {
            proj_x: from_rows(&r.proj_x, r.dim_x, r.k, "cca proj_x")?,
            proj_y: from_rows(&r.proj_y, r.dim_y, r.k, "cca proj_y")?,
            mean_x: DVector::from_vec(r.mean_x),
            mean_y: DVector::from_vec(r.mean_y),
            correlations: r.correlations,
            eig_power: r.eig_power,
            reg: r.reg,
        })
    }
}
