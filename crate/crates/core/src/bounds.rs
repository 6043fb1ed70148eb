//! Loss envelopes and scalar diagnostics derived from a kernel spectrum.
//!
//! `T(t) = Σ_i (1 − ηλ_i)^{2t} λ_i` drives the trace band; the classical
//! curve uses only the smallest eigenvalue.

use std::io::Write;
use std::path::Path;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::linalg::SpectralDecomposition;

/// `(1 − x)^k`, through `log1p` when `|x| < 1`.
fn decay_power(x: f64, k: f64) -> f64 {
    if x.abs() < 1.0 {
        (k * (-x).ln_1p()).exp()
    } else {
        (1.0 - x).powf(k)
    }
}

/// `Σ_i (1 − ηλ_i)^{2t} λ_i`.
pub fn spectral_trace_bound(eigenvalues: ArrayView1<'_, f64>, eta: f64, t: usize) -> f64 {
    let lmax = eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if eta * lmax >= 2.0 {
        log::warn!("ηλ_max = {} ≥ 2: the decay factor exceeds one in magnitude", eta * lmax);
    }
    let k = 2.0 * t as f64;
    eigenvalues.iter().map(|&l| decay_power(eta * l, k) * l).sum()
}

/// `(1 − ηλ_min)ᵗ L0`.
pub fn classical_bound(lambda_min: f64, eta: f64, l0: f64, t: usize) -> Result<f64> {
    let x = eta * lambda_min;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("ηλ_min = {x} must lie in [0, 1]")));
    }
    Ok(decay_power(x, t as f64) * l0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub eta: f64,
    pub c: f64,
    pub delta: f64,
    /// Additive slack of the trace band.
    pub slack_epsilon: f64,
    /// `L(w₀)`.
    pub l0: f64,
    pub beta: f64,
    pub beta_f: f64,
}

impl BoundParams {
    pub fn new(eta: f64, c: f64, delta: f64, slack_epsilon: f64, l0: f64) -> Result<Self> {
        let p = Self {
            eta,
            c,
            delta,
            slack_epsilon,
            l0,
            beta: 1.0,
            beta_f: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.eta, self.c, self.delta, self.slack_epsilon, self.l0, self.beta, self.beta_f];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("bound parameters"));
        }
        if self.eta < 0.0 {
            return Err(Error::Domain(format!("step size {} is negative", self.eta)));
        }
        if !(self.delta >= 0.0 && self.c >= self.delta && self.c > 0.0) {
            return Err(Error::Domain(format!(
                "band constants need c ≥ δ ≥ 0 and c > 0 (c = {}, δ = {})",
                self.c, self.delta
            )));
        }
        if self.slack_epsilon < 0.0 || self.l0 < 0.0 {
            return Err(Error::Domain("slack and initial loss must be non-negative".into()));
        }
        if self.beta < 1.0 || self.beta_f < 1.0 {
            return Err(Error::Domain("smoothness constants must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub steps: Vec<usize>,
    pub trace_values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Absent when `c = δ`.
    pub corollary_upper: Option<Vec<f64>>,
    pub classical: Vec<f64>,
}

impl BoundCurve {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Share of steps with `lower ≤ measured ≤ upper`.
    pub fn coverage(&self, measured: &[f64]) -> f64 {
        let n = measured.len().min(self.len());
        if n == 0 {
            return 0.0;
        }
        let inside = (0..n)
            .filter(|&t| self.lower[t] <= measured[t] && measured[t] <= self.upper[t])
            .count();
        inside as f64 / n as f64
    }

    /// `step,lower,upper,corollary_upper,classical,measured_loss`; missing
    /// values are written as `NaN`.
    pub fn write_csv(&self, path: &Path, measured: Option<&[f64]>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,lower,upper,corollary_upper,classical,measured_loss")?;
        for (i, &step) in self.steps.iter().enumerate() {
            let cor = self.corollary_upper.as_ref().map_or(f64::NAN, |c| c[i]);
            let m = measured.and_then(|m| m.get(i).copied()).unwrap_or(f64::NAN);
            writeln!(
                out,
                "{step},{},{},{},{},{}",
                fmt_f64(self.lower[i]),
                fmt_f64(self.upper[i]),
                fmt_f64(cor),
                fmt_f64(self.classical[i]),
                fmt_f64(m)
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Trace band, corollary and classical curves for `t = 0..=t_max`.
pub fn convergence_band(eigenvalues: ArrayView1<'_, f64>, params: &BoundParams, t_max: usize) -> Result<BoundCurve> {
    params.validate()?;
    if eigenvalues.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, found: 0 });
    }
    let tr_k: f64 = eigenvalues.sum();
    let lambda_min = eigenvalues.iter().fold(f64::INFINITY, |m, &v| m.min(v)).max(0.0);
    let (lo_c, hi_c) = (params.c - params.delta, params.c + params.delta);
    let half_eps = 0.5 * params.slack_epsilon;
    let corollary_factor = if lo_c > 0.0 && tr_k > 0.0 {
        Some(hi_c / lo_c * params.l0 / tr_k)
    } else {
        log::warn!("c = δ: corollary curve omitted");
        None
    };

    let steps: Vec<usize> = (0..=t_max).collect();
    let trace_values: Vec<f64> = steps
        .iter()
        .map(|&t| spectral_trace_bound(eigenvalues, params.eta, t))
        .collect();
    let lower = trace_values.iter().map(|&v| (0.5 * lo_c * v - half_eps).max(0.0)).collect();
    let upper = trace_values.iter().map(|&v| 0.5 * hi_c * v + half_eps).collect();
    let corollary_upper = corollary_factor.map(|f| trace_values.iter().map(|&v| f * v + half_eps).collect());
    let classical = steps
        .iter()
        .map(|&t| classical_bound(lambda_min, params.eta, params.l0, t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(BoundCurve {
        steps,
        trace_values,
        lower,
        upper,
        corollary_upper,
        classical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeComplexityInputs {
    pub q: f64,
    pub c1: f64,
    pub c2: f64,
    pub c: f64,
    pub delta: f64,
    /// Target loss.
    pub target_epsilon: f64,
    pub eta: f64,
    pub n: usize,
    pub l0: f64,
}

/// Iteration count after which the trace band's upper edge is below the
/// target loss, for a spectrum sandwiched by `C1 i^(−q)` and `C2 i^(−q)`.
/// Negative closed-form values (target above the starting loss) become 0.
pub fn time_complexity(inp: &TimeComplexityInputs) -> Result<f64> {
    let positives = [inp.c1, inp.c2, inp.c, inp.target_epsilon, inp.eta, inp.l0];
    if positives.iter().any(|v| !(v.is_finite() && *v > 0.0)) || inp.n == 0 {
        return Err(Error::Domain("time complexity inputs must be positive and finite".into()));
    }
    if !(inp.q > 1.0) {
        return Err(Error::Domain(format!("decay exponent q = {} must exceed 1", inp.q)));
    }
    if !(inp.c1 <= inp.c2) {
        return Err(Error::Domain(format!("need C1 ≤ C2 (got {} and {})", inp.c1, inp.c2)));
    }
    if !(inp.delta >= 0.0 && inp.c > inp.delta) {
        return Err(Error::Domain(format!("need c > δ ≥ 0 (c = {}, δ = {})", inp.c, inp.delta)));
    }
    let hi = inp.c + inp.delta;
    let lo = inp.c - inp.delta;
    let base = (inp.q - 1.0) * inp.target_epsilon / (2.0 * hi * inp.c2) + (inp.n as f64).powf(1.0 - inp.q);
    let log_power = inp.q / (1.0 - inp.q) * base.ln();
    let log_term = (4.0 * hi * inp.l0 / (lo * inp.target_epsilon)).ln();
    let t = (log_power - (2.0 * inp.eta * inp.c1).ln()).exp() * log_term;
    Ok(t.max(0.0))
}

/// Width diagnostic `n R^{6L+2} / (λ_min² ε²)` in log10, hidden constants
/// and log factors omitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthDiagnostic {
    /// With `R = 8β√L0 / λ_min`.
    pub log10_m: f64,
    /// `10^log10_m`, or `+∞` past the f64 range.
    pub m: f64,
    pub log10_r: f64,
    /// With the alternative radius `R = 8√(βL0) / λ_min`.
    pub log10_m_alt: f64,
    pub log10_r_alt: f64,
}

pub fn width_requirement(
    n: usize,
    lambda_min: f64,
    epsilon: f64,
    params: &BoundParams,
    depth: usize,
) -> Result<WidthDiagnostic> {
    if !(lambda_min > 0.0) {
        return Err(Error::NonPositiveEigenvalue {
            rank: n,
            value: lambda_min,
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("ε = {epsilon} must be positive")));
    }
    let exponent = 6.0 * depth as f64 + 2.0;
    let base = (n as f64).log10() - 2.0 * lambda_min.log10() - 2.0 * epsilon.log10();
    let log10_r = (8.0 * params.beta * params.l0.sqrt() / lambda_min).log10();
    let log10_r_alt = (8.0 * (params.beta * params.l0).sqrt() / lambda_min).log10();
    let log10_m = base + exponent * log10_r;
    let log10_m_alt = base + exponent * log10_r_alt;
    let m = 10f64.powf(log10_m);
    if m.is_infinite() {
        log::info!("width requirement overflows f64: 10^{log10_m:.1}");
    }
    log::info!("width requirement 10^{log10_m:.2} (alternative radius: 10^{log10_m_alt:.2}), up to constants and log factors");
    Ok(WidthDiagnostic {
        log10_m,
        m,
        log10_r,
        log10_m_alt,
        log10_r_alt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationBounds {
    pub y_kinv_y: f64,
    pub tr_k: f64,
    pub classical_rhs: f64,
    pub aligned_rhs: f64,
    /// Mean of `proj_i / λ_i²`.
    pub mean_c: f64,
    pub n: usize,
}

/// Right-hand sides of the kernel-norm generalization bounds.
pub fn generalization_bounds(
    decomp: &SpectralDecomposition,
    y: ArrayView1<'_, f64>,
    floor: f64,
) -> Result<GeneralizationBounds> {
    let singular: Vec<usize> = decomp
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| !(l > floor))
        .map(|(i, _)| i + 1)
        .collect();
    if !singular.is_empty() {
        return Err(Error::SingularKernel { ranks: singular });
    }
    let proj = crate::alignment::eigen_projections(decomp, y)?;
    let n = decomp.order();
    let y_kinv_y: f64 = proj.iter().zip(decomp.eigenvalues.iter()).map(|(p, l)| p / l).sum();
    let mean_c = proj
        .iter()
        .zip(decomp.eigenvalues.iter())
        .map(|(p, l)| p / (l * l))
        .sum::<f64>()
        / n as f64;
    let tr_k = decomp.trace();
    Ok(GeneralizationBounds {
        y_kinv_y,
        tr_k,
        classical_rhs: (2.0 * y_kinv_y / n as f64).sqrt(),
        aligned_rhs: mean_c * tr_k / n as f64,
        mean_c,
        n,
    })
}
