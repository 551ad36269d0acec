//! Built-in black-box test functions with exact evaluation, analytic
//! gradients, and gradient factorizations of the form `grad f(x) = A v(x)`.
//!
//! The analytic gradient and the true feature map exist for measurement and
//! validation only; the estimator never reads them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A black-box scalar function over `R^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlackBoxFunction {
    /// `f(x) = 1 / (C - sum x_i)`, defined where `C > sum x_i`.
    Capacity {
        #[serde(rename = "C")]
        capacity: f64,
        n: usize,
    },
    /// `f(x) = c . x`.
    Linear { c: Vec<f64> },
    /// `f(x) = x' Q x / 2 + c . x` with symmetric `Q`.
    Quadratic {
        #[serde(rename = "Q")]
        q: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
}

impl BlackBoxFunction {
    pub fn capacity(capacity: f64, n: usize) -> Self {
        Self::Capacity { capacity, n }
    }

    pub fn linear(c: Vec<f64>) -> Self {
        Self::Linear { c }
    }

    pub fn quadratic(q: Vec<Vec<f64>>, c: Vec<f64>) -> Self {
        Self::Quadratic { q, c }
    }

    /// Input dimension.
    pub fn n(&self) -> usize {
        match self {
            Self::Capacity { n, .. } => *n,
            Self::Linear { c } => c.len(),
            Self::Quadratic { c, .. } => c.len(),
        }
    }

    /// Checks structural invariants (square symmetric `Q`, matching lengths).
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Capacity { n, .. } => {
                if *n == 0 {
                    return Err(Error::DimensionMismatch {
                        context: "capacity dimension",
                        expected: 1,
                        got: 0,
                    });
                }
            }
            Self::Linear { c } => {
                if c.is_empty() {
                    return Err(Error::DimensionMismatch {
                        context: "linear coefficients",
                        expected: 1,
                        got: 0,
                    });
                }
            }
            Self::Quadratic { q, c } => {
                let n = c.len();
                if n == 0 || q.len() != n || q.iter().any(|row| row.len() != n) {
                    return Err(Error::DimensionMismatch {
                        context: "quadratic Q",
                        expected: n,
                        got: q.len(),
                    });
                }
                // Transposed access, so indices read clearer than iterators.
                #[allow(clippy::needless_range_loop)]
                for i in 0..n {
                    for j in i + 1..n {
                        if (q[i][j] - q[j][i]).abs() > 1e-12 {
                            return Err(Error::DomainViolation(format!(
                                "Q must be symmetric; Q[{i}][{j}] != Q[{j}][{i}]"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "function input",
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Exact function value.
pub fn evaluate(f: &BlackBoxFunction, x: &DVector<f64>) -> Result<f64> {
    f.check_len(x)?;
    match f {
        BlackBoxFunction::Capacity { capacity, .. } => {
            let slack = capacity - x.sum();
            if slack <= 0.0 {
                return Err(Error::DomainViolation(format!(
                    "capacity pole: C - sum(x) = {slack} <= 0"
                )));
            }
            Ok(1.0 / slack)
        }
        BlackBoxFunction::Linear { c } => Ok(x.iter().zip(c).map(|(xi, ci)| xi * ci).sum()),
        BlackBoxFunction::Quadratic { q, c } => {
            let mut acc = 0.0;
            for (i, row) in q.iter().enumerate() {
                for (j, q_ij) in row.iter().enumerate() {
                    acc += 0.5 * x[i] * q_ij * x[j];
                }
                acc += c[i] * x[i];
            }
            Ok(acc)
        }
    }
}

/// Closed-form gradient; validation only.
pub fn analytic_gradient(f: &BlackBoxFunction, x: &DVector<f64>) -> Result<DVector<f64>> {
    f.check_len(x)?;
    match f {
        BlackBoxFunction::Capacity { capacity, n } => {
            let slack = capacity - x.sum();
            if slack <= 0.0 {
                return Err(Error::DomainViolation(format!(
                    "capacity pole: C - sum(x) = {slack} <= 0"
                )));
            }
            Ok(DVector::from_element(*n, slack.powi(-2)))
        }
        BlackBoxFunction::Linear { c } => Ok(DVector::from_column_slice(c)),
        BlackBoxFunction::Quadratic { q, c } => {
            let mut g = DVector::from_column_slice(c);
            for (i, row) in q.iter().enumerate() {
                for (j, q_ij) in row.iter().enumerate() {
                    g[i] += q_ij * x[j];
                }
            }
            Ok(g)
        }
    }
}

/// Central finite differences with step `h`; independent check on the
/// analytic gradient and the factorization.
pub fn finite_diff_gradient(f: &BlackBoxFunction, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    f.check_len(x)?;
    if h <= 0.0 {
        return Err(Error::DomainViolation(format!("step h = {h} must be > 0")));
    }
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = evaluate(f, &probe)?;
        probe[i] = x[i] - h;
        let minus = evaluate(f, &probe)?;
        probe[i] = x[i];
        g[i] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

type FeatureMap = Box<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

/// The pair `(A, v)` with `grad f(x) = A v(x)`, `A` known to every node.
/// `v_true` is the ground-truth feature map, exposed for validation only.
pub struct GradientFactorization {
    a: DMatrix<f64>,
    v_true: FeatureMap,
    m: usize,
}

impl std::fmt::Debug for GradientFactorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GradientFactorization")
            .field("a", &self.a)
            .field("m", &self.m)
            .finish_non_exhaustive()
    }
}

impl GradientFactorization {
    /// The `n x m` matrix `A`.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Feature dimension `m`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Ground-truth feature vector at `x`.
    pub fn v_true(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        (self.v_true)(x)
    }
}

/// Factorization for each builtin kind:
/// capacity -> ones column with `v = [(C - sum x)^-2]`; linear -> `c` column
/// with `v = [1]`; quadratic -> `[Q | c]` with `v = (x, 1)`.
pub fn factorize(f: &BlackBoxFunction) -> Result<GradientFactorization> {
    f.validate()?;
    let n = f.n();
    match f {
        BlackBoxFunction::Capacity { capacity, .. } => {
            let cap = *capacity;
            Ok(GradientFactorization {
                a: DMatrix::from_element(n, 1, 1.0),
                v_true: Box::new(move |x| {
                    let slack = cap - x.sum();
                    if slack <= 0.0 {
                        return Err(Error::DomainViolation(format!(
                            "capacity pole: C - sum(x) = {slack} <= 0"
                        )));
                    }
                    Ok(DVector::from_element(1, slack.powi(-2)))
                }),
                m: 1,
            })
        }
        BlackBoxFunction::Linear { c } => Ok(GradientFactorization {
            a: DMatrix::from_column_slice(n, 1, c),
            v_true: Box::new(|_| Ok(DVector::from_element(1, 1.0))),
            m: 1,
        }),
        BlackBoxFunction::Quadratic { q, c } => {
            let m = n + 1;
            let mut a = DMatrix::zeros(n, m);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = q[i][j];
                }
                a[(i, n)] = c[i];
            }
            Ok(GradientFactorization {
                a,
                v_true: Box::new(|x| {
                    let mut v = DVector::zeros(x.len() + 1);
                    v.rows_mut(0, x.len()).copy_from(x);
                    v[x.len()] = 1.0;
                    Ok(v)
                }),
                m,
            })
        }
    }
}
