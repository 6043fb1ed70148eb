//! Infinite-width NTK of bias-free fully-connected ReLU networks.
//!
//! The kernel depends on the inputs only through `u = x·x'` (unit-norm
//! inputs). With the arc-cosine maps
//!
//! ```text
//! κ₁(u) = (√(1−u²) + u(π − arccos u)) / π
//! κ₀(u) = (π − arccos u) / π
//! ```
//!
//! the recursion is `Σ⁰ = Θ⁰ = u`, `Σ̇ˡ = κ₀(Σˡ⁻¹)`, `Σˡ = κ₁(Σˡ⁻¹)`,
//! `Θˡ = Θˡ⁻¹ Σ̇ˡ + Σˡ`. At `u = 1` every `Σˡ` is 1 and `Θᴸ = L + 1`, so the
//! normalized kernel divides by `L + 1`. Near the diagonal the normalized
//! kernel behaves like `(1 − Lθ/(2π)) cos θ`, which is where the small
//! eigenvalues of nearly duplicated inputs come from.

use std::f64::consts::PI;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh_symmetric, solve_spd, SymMatrix};

/// Inputs within this distance of `[-1, 1]` are clamped instead of rejected.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

/// Rows whose norm differs from 1 by more than this are rejected.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticNtkConfig {
    /// Number of hidden layers.
    pub depth: usize,
    /// Divide by `depth + 1` so the diagonal is exactly 1.
    pub normalize: bool,
}

impl AnalyticNtkConfig {
    pub fn new(depth: usize, normalize: bool) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Domain("network depth must be at least 1".into()));
        }
        Ok(Self { depth, normalize })
    }

    pub fn normalized(depth: usize) -> Result<Self> {
        Self::new(depth, true)
    }

    /// First-order slope `a = L / (2π)` of `1 − K̄(cos θ)` in θ.
    pub fn slope(&self) -> f64 {
        self.depth as f64 / (2.0 * PI)
    }
}

fn kappa1(u: f64) -> f64 {
    ((1.0 - u * u).max(0.0).sqrt() + u * (PI - u.acos())) / PI
}

fn kappa0(u: f64) -> f64 {
    (PI - u.acos()) / PI
}

/// Kernel value for two unit inputs with inner product `u`.
pub fn relu_ntk_entry(u: f64, config: &AnalyticNtkConfig) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::NonFinite("kernel argument"));
    }
    if u.abs() > 1.0 + CLAMP_TOLERANCE {
        return Err(Error::Domain(format!("kernel argument {u} outside [-1, 1]")));
    }
    let u = u.clamp(-1.0, 1.0);
    let mut sigma = u;
    let mut theta = u;
    for _ in 0..config.depth {
        let sigma_dot = kappa0(sigma);
        // κ₁ maps [-1, 1] into [0, 1]; clamp rounding drift before the next arccos.
        sigma = kappa1(sigma).clamp(-1.0, 1.0);
        theta = theta * sigma_dot + sigma;
    }
    Ok(if config.normalize {
        theta / (config.depth as f64 + 1.0)
    } else {
        theta
    })
}

/// Row indices whose norm is off by more than `UNIT_NORM_TOLERANCE`.
pub fn non_unit_rows(x: ArrayView2<'_, f64>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| (r.dot(r).sqrt() - 1.0).abs() > UNIT_NORM_TOLERANCE)
        .map(|(i, _)| i)
        .collect()
}

/// Kernel matrix over the rows of `x` (one unit-norm input per row).
pub fn build_ntk_matrix(x: ArrayView2<'_, f64>, config: &AnalyticNtkConfig) -> Result<SymMatrix> {
    let bad = non_unit_rows(x);
    if !bad.is_empty() {
        return Err(Error::NotUnitNorm { rows: bad });
    }
    let n = x.nrows();
    let diag = relu_ntk_entry(1.0, config)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            (0..n)
                .map(|j| {
                    if i == j {
                        Ok(diag)
                    } else {
                        relu_ntk_entry(xi.dot(&x.row(j)).clamp(-1.0, 1.0), config)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    SymMatrix::new(ndarray::Array2::from_shape_vec((n, n), flat).expect("n×n buffer"))
}

/// Closed-form eigenstructure of the normalized kernel on two inputs at
/// angle θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPointReport {
    pub theta: f64,
    pub depth: usize,
    pub kernel_offdiag: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub v_max: [f64; 2],
    pub v_min: [f64; 2],
    pub proj_max: f64,
    pub proj_min: f64,
    /// `L_y² (1 − cos θ)`, the Lipschitz ceiling on `proj_min`.
    pub lipschitz_rhs: f64,
    /// `L/(2π) · θ`, the first-order prediction for `lambda_min`.
    pub lambda_min_first_order: f64,
}

impl TwoPointReport {
    pub fn within_lipschitz_bound(&self) -> bool {
        self.proj_min <= self.lipschitz_rhs
    }
}

pub fn two_point_analysis(
    theta: f64,
    config: &AnalyticNtkConfig,
    y1: f64,
    y2: f64,
    lipschitz: f64,
) -> Result<TwoPointReport> {
    if !(theta > 0.0 && theta < PI) {
        return Err(Error::DegenerateInput(format!(
            "two-point angle must lie in (0, π), got {theta}"
        )));
    }
    let normalized = AnalyticNtkConfig {
        normalize: true,
        ..*config
    };
    let k12 = relu_ntk_entry(theta.cos(), &normalized)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ok(TwoPointReport {
        theta,
        depth: config.depth,
        kernel_offdiag: k12,
        lambda_max: 1.0 + k12,
        lambda_min: 1.0 - k12,
        v_max: [h, h],
        v_min: [h, -h],
        proj_max: 0.5 * (y1 + y2) * (y1 + y2),
        proj_min: 0.5 * (y1 - y2) * (y1 - y2),
        lipschitz_rhs: 2.0 * (lipschitz * (0.5 * theta).sin()).powi(2),
        lambda_min_first_order: config.slope() * theta,
    })
}

/// First-order eigenpair created by one nearly duplicated input pair, next
/// to the exact eigenpair it best matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearDuplicatePrediction {
    pub pair: (usize, usize),
    pub theta: f64,
    pub lambda_pred: f64,
    pub v_pred: Vec<f64>,
    /// `‖B⁻¹(a − b)‖`, the size of the correction on the remaining inputs.
    pub tail_norm: f64,
    pub matched_rank: usize,
    pub matched_lambda_true: f64,
    pub cosine_to_true: f64,
    pub matched_vector: Vec<f64>,
}

/// Observed label projection on the matched eigenvector next to the
/// order-of-magnitude reference `2(L_y²(1−cos θ) + ‖B⁻¹(a−b)‖²‖y‖²_∞(n−2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOrderCheck {
    pub observed: f64,
    pub reference: f64,
}

impl NearDuplicatePrediction {
    pub fn projection_order_check(&self, y: ArrayView1<'_, f64>, lipschitz: f64) -> ProjectionOrderCheck {
        let v = ArrayView1::from(&self.matched_vector[..]);
        let proj = v.dot(&y);
        let y_inf = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let n = y.len() as f64;
        ProjectionOrderCheck {
            observed: proj * proj,
            reference: 2.0
                * (2.0 * (lipschitz * (0.5 * self.theta).sin()).powi(2)
                    + self.tail_norm * self.tail_norm * y_inf * y_inf * (n - 2.0)),
        }
    }
}

/// Predict the small eigenpair of a normalized kernel `k_bar` caused by the
/// input pair `(i, j)` at angle `theta`, and match it against the exact
/// decomposition.
///
/// Writing the kernel in blocks with the pair first, `a`/`b` are the pair's
/// columns restricted to the other inputs and `B` is the remaining block. The
/// prediction is `λ ≈ a·θ` with `a = L/(2π)` and eigenvector
/// `(1, −1, −B⁻¹(a − b)) / √2`, normalized.
pub fn predicted_small_eigenpair(
    k_bar: &SymMatrix,
    pair: (usize, usize),
    theta: f64,
    config: &AnalyticNtkConfig,
) -> Result<NearDuplicatePrediction> {
    let n = k_bar.order();
    let (i, j) = pair;
    if i == j || i >= n || j >= n {
        return Err(Error::InvalidPair(i, j, n));
    }
    let rest: Vec<usize> = (0..n).filter(|&k| k != i && k != j).collect();
    let mut v = Array1::<f64>::zeros(n);
    v[i] = 1.0;
    v[j] = -1.0;
    let mut tail_norm = 0.0;
    if !rest.is_empty() {
        let block = k_bar.without(&[i, j])?;
        let diff = Array1::from_iter(rest.iter().map(|&k| k_bar.get(k, i) - k_bar.get(k, j)));
        let z = solve_spd(&block, diff.view())?;
        tail_norm = z.dot(&z).sqrt();
        for (slot, &k) in rest.iter().enumerate() {
            v[k] = -z[slot];
        }
    }
    v /= std::f64::consts::SQRT_2;
    let norm = v.dot(&v).sqrt();
    v /= norm;

    let decomp = eigh_symmetric(k_bar)?;
    let mut best = 0usize;
    let mut best_cos = -1.0;
    for k in 0..n {
        let c = decomp.vector(k).dot(&v).abs();
        // Ties go to the smaller eigenvalue, i.e. the later rank.
        if c >= best_cos {
            best_cos = c;
            best = k;
        }
    }
    Ok(NearDuplicatePrediction {
        pair,
        theta,
        lambda_pred: config.slope() * theta,
        v_pred: v.to_vec(),
        tail_norm,
        matched_rank: best + 1,
        matched_lambda_true: decomp.eigenvalues[best],
        cosine_to_true: best_cos,
        matched_vector: decomp.vector(best).to_vec(),
    })
}
