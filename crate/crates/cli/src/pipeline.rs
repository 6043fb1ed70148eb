//! Kernel construction and the train-then-compare pipeline shared by the
//! commands and the integration tests.

use anyhow::{Context, Result};
use log::info;
use ndarray::Array1;
use ntkspectra::alignment::{estimate_alignment_band, AlignmentBand, AlignmentProfile};
use ntkspectra::bounds::{convergence_band, BoundCurve, BoundParams};
use ntkspectra::dataio::Dataset;
use ntkspectra::netsim::{train_gd_with_initial_kernel, GdConfig, MlpNetwork, TrainingTrace};
use ntkspectra::ntk_analytic::{build_ntk_matrix, AnalyticNtkConfig};
use ntkspectra::{eigh_symmetric, Error, SpectralDecomposition, SymMatrix};

use crate::args::KernelKind;
use crate::UsageError;

pub fn require_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| UsageError(format!("--seed is required for {what}")).into())
}

/// Kernel on the dataset rows. The empirical kernel is taken at the
/// initialization drawn from `seed`.
pub fn build_kernel(ds: &Dataset, kind: KernelKind, depth: usize, width: usize, seed: Option<u64>) -> Result<SymMatrix> {
    Ok(match kind {
        KernelKind::Analytic => build_ntk_matrix(ds.x.view(), &AnalyticNtkConfig::normalized(depth)?)?,
        KernelKind::Empirical => {
            let seed = require_seed(seed, "the empirical kernel")?;
            MlpNetwork::init(ds.dim(), width, depth, seed)?.empirical_ntk(ds.x.view())?
        }
    })
}

#[derive(Debug, Clone)]
pub struct TrainBoundsConfig {
    pub depth: usize,
    pub width: usize,
    pub seed: u64,
    /// Explicit step size; otherwise `eta_scale / λ_max(K₀)`.
    pub eta: Option<f64>,
    pub eta_scale: f64,
    pub steps: usize,
    /// Band slack as a fraction of `L(w₀)`.
    pub slack_fraction: f64,
    pub exclude_top_k: usize,
    pub floor: f64,
}

#[derive(Debug, Clone)]
pub struct TrainBoundsRun {
    pub initial_kernel: SpectralDecomposition,
    pub r0: Array1<f64>,
    pub l0: f64,
    pub band: AlignmentBand,
    pub params: BoundParams,
    pub curve: BoundCurve,
    pub trace: TrainingTrace,
    /// `(step, loss)` when training blew up; the trace is then partial.
    pub divergence: Option<(usize, f64)>,
    pub coverage: f64,
    pub label_profile: Option<AlignmentProfile>,
    pub residual_profile: Option<AlignmentProfile>,
}

impl TrainBoundsRun {
    pub fn lambda_min(&self) -> f64 {
        self.initial_kernel.lambda_min()
    }

    pub fn lambda_max(&self) -> f64 {
        self.initial_kernel.lambda_max()
    }

    pub fn trace_k(&self) -> f64 {
        self.initial_kernel.trace()
    }

    /// `upper[t] / classical[t]`.
    pub fn refined_over_classical(&self, t: usize) -> f64 {
        self.curve.upper[t] / self.curve.classical[t]
    }

    pub fn max_relative_deviation(&self) -> Option<f64> {
        self.trace.max_relative_deviation()
    }
}

/// Initialize, measure the band at initialization, train, and evaluate the
/// bound curves on the initial spectrum. Divergence is recorded rather than
/// returned so partial artifacts can still be written.
pub fn train_and_bounds(ds: &Dataset, cfg: &TrainBoundsConfig) -> Result<TrainBoundsRun> {
    let net = MlpNetwork::init(ds.dim(), cfg.width, cfg.depth, cfg.seed)?;
    let x = ds.x.view();
    let decomp = eigh_symmetric(&net.empirical_ntk(x)?).context("initial kernel")?;
    let r0 = &net.forward(x)? - &ds.y;
    let l0 = 0.5 * r0.dot(&r0);
    let eta = match cfg.eta {
        Some(eta) => eta,
        None => cfg.eta_scale / decomp.lambda_max(),
    };
    info!(
        "n = {}, λ_max = {:.4e}, λ_min = {:.4e}, η = {eta:.4e}, L0 = {l0:.4e}",
        ds.len(),
        decomp.lambda_max(),
        decomp.lambda_min()
    );

    let band = estimate_alignment_band(&decomp, r0.view(), cfg.floor, cfg.exclude_top_k)?;
    let params = BoundParams::new(eta, band.c, band.delta, cfg.slack_fraction * l0, l0)?;
    let curve = convergence_band(decomp.eigenvalues.view(), &params, cfg.steps)?;
    let label_profile = AlignmentProfile::from_decomposition(&decomp, ds.y.view(), cfg.exclude_top_k, cfg.floor).ok();
    let residual_profile = AlignmentProfile::from_decomposition(&decomp, r0.view(), cfg.exclude_top_k, cfg.floor).ok();

    let gd = GdConfig::new(eta, cfg.steps, true)?;
    let (trace, divergence) = match train_gd_with_initial_kernel(&net, x, ds.y.view(), &gd, decomp.clone()) {
        Ok(out) => (out.trace, None),
        Err(Error::Diverged { step, loss, trace }) => (*trace, Some((step, loss))),
        Err(e) => return Err(e.into()),
    };
    let coverage = curve.coverage(&trace.losses);
    Ok(TrainBoundsRun {
        initial_kernel: decomp,
        r0,
        l0,
        band,
        params,
        curve,
        trace,
        divergence,
        coverage,
        label_profile,
        residual_profile,
    })
}
