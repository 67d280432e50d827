//! B-spline bases on equidistant knots, difference penalties and the
//! recentered bases used by additive terms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use thiserror::Error;

/// Default number of quadrature points used to recenter an additive basis.
pub const DEFAULT_QUADRATURE_POINTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("spline domain [{lo}, {hi}] must be finite with hi > lo")]
    EmptyDomain { lo: f64, hi: f64 },
    #[error("{n_basis} basis functions cannot carry a degree-{degree} spline (need at least {needed})")]
    TooFewBasis {
        n_basis: usize,
        degree: usize,
        needed: usize,
    },
    #[error("difference order {order} must satisfy 1 <= order < dimension ({dimension})")]
    InvalidPenaltyOrder { dimension: usize, order: usize },
    #[error("recentering needs at least 100 quadrature points, got {0}")]
    TooFewQuadraturePoints(usize),
}

/// Plain description of a basis, used for serialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub n_basis: usize,
    pub degree: usize,
}

/// B-spline basis with equidistant knots covering `[domain_lo, domain_hi]`.
///
/// Values outside the domain are clamped to the nearest boundary; the number
/// of clamped evaluations is counted and can be read back with
/// [`SplineBasis::clamped_evaluations`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(from = "BasisSpec", into = "BasisSpec")]
pub struct SplineBasis {
    domain_lo: f64,
    domain_hi: f64,
    n_basis: usize,
    degree: usize,
    knots: Vec<f64>,
    spacing: f64,
    clamped: AtomicUsize,
}

impl Clone for SplineBasis {
    fn clone(&self) -> Self {
        Self {
            domain_lo: self.domain_lo,
            domain_hi: self.domain_hi,
            n_basis: self.n_basis,
            degree: self.degree,
            knots: self.knots.clone(),
            spacing: self.spacing,
            clamped: AtomicUsize::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for SplineBasis {
    fn eq(&self, other: &Self) -> bool {
        self.spec() == other.spec()
    }
}

impl From<BasisSpec> for SplineBasis {
    fn from(spec: BasisSpec) -> Self {
        Self::with_knots(spec.domain_lo, spec.domain_hi, spec.n_basis, spec.degree)
    }
}

impl From<SplineBasis> for BasisSpec {
    fn from(basis: SplineBasis) -> Self {
        basis.spec()
    }
}

/// Builds a B-spline basis with `n_basis` functions of the given degree.
pub fn build_basis(
    domain_lo: f64,
    domain_hi: f64,
    n_basis: usize,
    degree: usize,
) -> Result<SplineBasis, SplineError> {
    if !(domain_lo.is_finite() && domain_hi.is_finite()) || domain_hi <= domain_lo {
        return Err(SplineError::EmptyDomain {
            lo: domain_lo,
            hi: domain_hi,
        });
    }
    if n_basis < degree + 1 {
        return Err(SplineError::TooFewBasis {
            n_basis,
            degree,
            needed: degree + 1,
        });
    }
    Ok(SplineBasis::with_knots(domain_lo, domain_hi, n_basis, degree))
}

impl SplineBasis {
    fn with_knots(domain_lo: f64, domain_hi: f64, n_basis: usize, degree: usize) -> Self {
        let intervals = n_basis - degree;
        let spacing = (domain_hi - domain_lo) / intervals as f64;
        let knots = (0..n_basis + degree + 1)
            .map(|i| domain_lo + (i as f64 - degree as f64) * spacing)
            .collect();
        Self {
            domain_lo,
            domain_hi,
            n_basis,
            degree,
            knots,
            spacing,
            clamped: AtomicUsize::new(0),
        }
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            domain_lo: self.domain_lo,
            domain_hi: self.domain_hi,
            n_basis: self.n_basis,
            degree: self.degree,
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_lo, self.domain_hi)
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of evaluations so far that fell outside the domain and were clamped.
    pub fn clamped_evaluations(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    fn clamp(&self, x: f64) -> f64 {
        let slack = 1e-12 * (self.domain_hi - self.domain_lo);
        if x < self.domain_lo - slack || x > self.domain_hi + slack {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        x.clamp(self.domain_lo, self.domain_hi)
    }

    /// Returns the index of the first nonzero basis function at `x` and writes
    /// the `degree + 1` potentially nonzero values into `out`.
    pub fn eval_nonzero(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        debug_assert!(out.len() > p);
        let x = self.clamp(x);
        let intervals = self.n_basis - p;
        let cell = (((x - self.domain_lo) / self.spacing).floor() as isize)
            .clamp(0, intervals as isize - 1) as usize;
        let span = cell + p;
        let knots = &self.knots;

        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - knots[span + 1 - j];
            right[j] = knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        cell
    }

    /// Evaluates all `n_basis` functions at `x`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n_basis];
        self.eval_into(x, &mut row);
        row
    }

    pub fn eval_into(&self, x: f64, row: &mut [f64]) {
        debug_assert_eq!(row.len(), self.n_basis);
        let mut local = vec![0.0; self.degree + 1];
        let first = self.eval_nonzero(x, &mut local);
        row.iter_mut().for_each(|v| *v = 0.0);
        row[first..first + self.degree + 1].copy_from_slice(&local);
    }

    /// Basis matrix with one row per point.
    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.n_basis);
        let mut row = vec![0.0; self.n_basis];
        for (i, &x) in xs.iter().enumerate() {
            self.eval_into(x, &mut row);
            for (k, v) in row.iter().enumerate() {
                m[(i, k)] = *v;
            }
        }
        m
    }
}

/// Roughness penalty `DᵀD` built from a difference operator of a given order.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub order: usize,
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

impl PenaltyMatrix {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    /// `vᵀ P v`
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dimension());
        let n = v.len();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.matrix[(i, j)] * v[j];
            }
            acc += v[i] * row;
        }
        acc
    }
}

/// Difference operator of order `order` acting on vectors of length `dimension`.
pub fn difference_operator(dimension: usize, order: usize) -> DMatrix<f64> {
    let rows = dimension - order;
    let mut binom = vec![1.0f64; order + 1];
    for k in 1..=order {
        binom[k] = binom[k - 1] * (order - k + 1) as f64 / k as f64;
    }
    let mut d = DMatrix::zeros(rows, dimension);
    for i in 0..rows {
        for (k, b) in binom.iter().enumerate() {
            let sign = if (order - k) % 2 == 0 { 1.0 } else { -1.0 };
            d[(i, i + k)] = sign * b;
        }
    }
    d
}

pub fn build_penalty(dimension: usize, order: usize) -> Result<PenaltyMatrix, SplineError> {
    if order == 0 || order >= dimension {
        return Err(SplineError::InvalidPenaltyOrder { dimension, order });
    }
    let d = difference_operator(dimension, order);
    Ok(PenaltyMatrix {
        order,
        matrix: d.transpose() * d,
        rank: dimension - order,
    })
}

/// Basis recentered so that every retained function averages to zero over the domain.
///
/// The last function of the underlying basis is dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteredBasis {
    pub base: SplineBasis,
    /// Domain averages of all `n_basis` underlying functions.
    pub column_means: Vec<f64>,
    pub n_effective: usize,
}

pub fn recenter(basis: SplineBasis, quadrature_points: usize) -> Result<CenteredBasis, SplineError> {
    if quadrature_points < 100 {
        return Err(SplineError::TooFewQuadraturePoints(quadrature_points));
    }
    let (lo, hi) = basis.domain();
    let step = (hi - lo) / (quadrature_points - 1) as f64;
    let mut sums = vec![0.0; basis.n_basis()];
    let mut row = vec![0.0; basis.n_basis()];
    for i in 0..quadrature_points {
        let x = if i + 1 == quadrature_points {
            hi
        } else {
            lo + i as f64 * step
        };
        let w = if i == 0 || i + 1 == quadrature_points {
            0.5
        } else {
            1.0
        };
        basis.eval_into(x, &mut row);
        for (s, v) in sums.iter_mut().zip(&row) {
            *s += w * v;
        }
    }
    let column_means = sums
        .into_iter()
        .map(|s| s / (quadrature_points - 1) as f64)
        .collect();
    let n_effective = basis.n_basis() - 1;
    Ok(CenteredBasis {
        base: basis,
        column_means,
        n_effective,
    })
}

impl CenteredBasis {
    pub fn domain(&self) -> (f64, f64) {
        self.base.domain()
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_effective);
        let mut full = vec![0.0; self.base.n_basis()];
        self.base.eval_into(x, &mut full);
        for (l, o) in out.iter_mut().enumerate() {
            *o = full[l] - self.column_means[l];
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_effective];
        self.eval_into(x, &mut out);
        out
    }

    /// Value of `Σ_ℓ s_ℓ(x) θ_ℓ`.
    pub fn linear_combination(&self, x: f64, theta: &[f64]) -> f64 {
        self.eval(x).iter().zip(theta).map(|(s, t)| s * t).sum()
    }
}
