//! Finite-width bias-free ReLU networks with hand-written backpropagation.
//!
//! Layer `l` (0-based, `0..=L`) maps `h_l` to the pre-activation
//! `z_{l+1} = s_l · W_l h_l`, with `h_0 = x`, `h_{l+1} = relu(z_{l+1})` for
//! hidden layers and the scalar output `f = z_{L+1}`. Weights are standard
//! normal; the multipliers `s_0 = 1` (unit-norm inputs) and
//! `s_l = √(2/fan_in)` for `l ≥ 1` keep `E f(x)² = ‖x‖²` at any width, and the
//! empirical kernel tends to `(L + 1) · K̄` as the width grows.
//!
//! Everything is batched over rows of the input matrix. Writing `G_l` for the
//! `n × out_l` matrix of output sensitivities `∂f(x_i)/∂z_{l+1}`, the tangent
//! kernel factorizes layer by layer as
//! `K = Σ_l s_l² (G_l G_lᵀ) ⊙ (H_l H_lᵀ)`, which is `JJᵀ` without ever
//! building the Jacobian.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::linalg::{eigh_symmetric, SpectralDecomposition, SymMatrix};
use crate::rng;

/// Residual vectors are kept in the trace only up to this many samples.
pub const MAX_RECORDED_RESIDUAL_LEN: usize = 4096;
/// Training stops with `Diverged` once the loss exceeds this multiple of `L(w₀)`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    NtkParam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    input_dim: usize,
    width: usize,
    hidden_layers: usize,
    weights: Vec<Array2<f64>>,
    parameterization: Parameterization,
    seed: u64,
}

struct ForwardCache {
    /// `h_0 = X, h_1, …, h_L`, each `n × in_l`.
    activations: Vec<Array2<f64>>,
    output: Array1<f64>,
}

impl MlpNetwork {
    /// Standard-normal weights; layer `l` draws from stream `(seed, l)`.
    pub fn init(input_dim: usize, width: usize, hidden_layers: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || width == 0 || hidden_layers == 0 {
            return Err(Error::InvalidSize(format!(
                "input dim, width and depth must all be at least 1 (got {input_dim}, {width}, {hidden_layers})"
            )));
        }
        let weights = (0..=hidden_layers)
            .map(|l| {
                let rows = if l == hidden_layers { 1 } else { width };
                let cols = if l == 0 { input_dim } else { width };
                let mut r = rng::stream(seed, l as u64);
                Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut r))
            })
            .collect();
        Ok(Self {
            input_dim,
            width,
            hidden_layers,
            weights,
            parameterization: Parameterization::NtkParam,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hidden_layers(&self) -> usize {
        self.hidden_layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(Array2::len).sum()
    }

    /// Forward multiplier of layer `l`.
    pub fn layer_scale(&self, l: usize) -> f64 {
        if l == 0 {
            1.0
        } else {
            (2.0 / self.weights[l].ncols() as f64).sqrt()
        }
    }

    /// All weights flattened layer by layer, each row-major.
    pub fn parameters(&self) -> Array1<f64> {
        self.weights.iter().flat_map(|w| w.iter().copied()).collect()
    }

    pub fn with_parameters(&self, params: ArrayView1<'_, f64>) -> Result<Self> {
        if params.len() != self.num_parameters() {
            return Err(Error::ShapeMismatch {
                what: "flat parameter vector",
                expected: self.num_parameters(),
                found: params.len(),
            });
        }
        let mut out = self.clone();
        let mut offset = 0;
        for w in &mut out.weights {
            let len = w.len();
            for (dst, src) in w.iter_mut().zip(params.slice(s![offset..offset + len])) {
                *dst = *src;
            }
            offset += len;
        }
        Ok(out)
    }

    fn check_inputs(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                what: "network input dimension",
                expected: self.input_dim,
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn forward_cache(&self, x: ArrayView2<'_, f64>) -> ForwardCache {
        let mut activations = Vec::with_capacity(self.hidden_layers + 1);
        activations.push(x.to_owned());
        for l in 0..self.hidden_layers {
            let mut z = activations[l].dot(&self.weights[l].t());
            let s = self.layer_scale(l);
            z.mapv_inplace(|v| (s * v).max(0.0));
            activations.push(z);
        }
        let last = self.hidden_layers;
        let output = activations[last].dot(&self.weights[last].row(0)) * self.layer_scale(last);
        ForwardCache { activations, output }
    }

    /// Outputs `f(w; x_i)` for every row of `x`.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_inputs(x)?;
        Ok(self.forward_cache(x).output)
    }

    /// Sensitivities `G_l` (`n × out_l`) of `Σ_i c_i f(x_i)` with respect to
    /// each layer's pre-activation, row `i` carrying sample `i` only.
    fn backprop(&self, cache: &ForwardCache, output_weights: ArrayView1<'_, f64>) -> Vec<Array2<f64>> {
        let last = self.hidden_layers;
        let mut sens = vec![Array2::<f64>::zeros((0, 0)); last + 1];
        sens[last] = output_weights.to_owned().insert_axis(Axis(1));
        for l in (1..=last).rev() {
            let mut g = sens[l].dot(&self.weights[l]) * self.layer_scale(l);
            Zip::from(&mut g)
                .and(&cache.activations[l])
                .for_each(|g, &h| {
                    if h <= 0.0 {
                        *g = 0.0;
                    }
                });
            sens[l - 1] = g;
        }
        sens
    }

    fn weight_gradients(&self, cache: &ForwardCache, sens: &[Array2<f64>]) -> Vec<Array2<f64>> {
        (0..=self.hidden_layers)
            .map(|l| sens[l].t().dot(&cache.activations[l]) * self.layer_scale(l))
            .collect()
    }

    /// `∇_w f(w; x)` flattened in the same order as [`Self::parameters`].
    pub fn per_sample_gradient(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let x2 = x.insert_axis(Axis(0));
        self.check_inputs(x2)?;
        let cache = self.forward_cache(x2);
        let sens = self.backprop(&cache, ndarray::aview1(&[1.0]));
        Ok(self
            .weight_gradients(&cache, &sens)
            .iter()
            .flat_map(|g| g.iter().copied())
            .collect())
    }

    /// Jacobian `J` (`n × P`) of the outputs; only sensible for small nets.
    pub fn jacobian(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_inputs(x)?;
        let mut j = Array2::zeros((x.nrows(), self.num_parameters()));
        for (i, row) in x.rows().into_iter().enumerate() {
            j.row_mut(i).assign(&self.per_sample_gradient(row)?);
        }
        Ok(j)
    }

    /// Empirical tangent kernel `K = JJᵀ` on the rows of `x`.
    pub fn empirical_ntk(&self, x: ArrayView2<'_, f64>) -> Result<SymMatrix> {
        self.check_inputs(x)?;
        let n = x.nrows();
        let cache = self.forward_cache(x);
        let sens = self.backprop(&cache, Array1::ones(n).view());
        let mut k = Array2::<f64>::zeros((n, n));
        for (l, (h, g)) in cache.activations.iter().zip(&sens).enumerate() {
            let s2 = self.layer_scale(l).powi(2);
            let hh = h.dot(&h.t());
            let gg = g.dot(&g.t());
            Zip::from(&mut k).and(&hh).and(&gg).for_each(|k, &h, &g| *k += s2 * h * g);
        }
        SymMatrix::new(k)
    }

    /// Gradient of `½‖f − y‖²` given the cache and residual `f − y`.
    fn loss_gradient(&self, cache: &ForwardCache, residual: ArrayView1<'_, f64>) -> Vec<Array2<f64>> {
        let sens = self.backprop(cache, residual);
        self.weight_gradients(cache, &sens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub eta: f64,
    pub steps: usize,
    pub record_residuals: bool,
}

impl GdConfig {
    pub fn new(eta: f64, steps: usize, record_residuals: bool) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::Domain(format!("step size must be positive, got {eta}")));
        }
        Ok(Self {
            eta,
            steps,
            record_residuals,
        })
    }
}

/// Per-step record of a full-batch gradient descent run. Entry `t` belongs to
/// the weights after `t` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub eta: f64,
    pub steps: usize,
    pub losses: Vec<f64>,
    /// `r_t = f(w_t) − y`; kept only when residuals are recorded and
    /// `n ≤ MAX_RECORDED_RESIDUAL_LEN`.
    pub residuals: Option<Vec<Vec<f64>>>,
    /// `‖r_t − (I − ηK₀)ᵗ r₀‖`; empty unless residuals are recorded.
    pub deviation_norms: Vec<f64>,
    pub initial_residual_norm: f64,
}

impl TrainingTrace {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    /// First step whose loss exceeds the previous one.
    pub fn first_increase(&self) -> Option<usize> {
        self.losses.windows(2).position(|w| w[1] > w[0]).map(|p| p + 1)
    }

    pub fn is_monotone(&self) -> bool {
        self.first_increase().is_none()
    }

    /// `max_t ‖Δ_t‖ / ‖r₀‖`, if deviations were recorded.
    pub fn max_relative_deviation(&self) -> Option<f64> {
        if self.deviation_norms.is_empty() || self.initial_residual_norm == 0.0 {
            return None;
        }
        Some(
            self.deviation_norms
                .iter()
                .fold(0.0_f64, |m, v| m.max(*v))
                / self.initial_residual_norm,
        )
    }

    /// `step,loss,deviation_norm`; the deviation is `NaN` when not recorded.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,loss,deviation_norm")?;
        for (t, loss) in self.losses.iter().enumerate() {
            let dev = self.deviation_norms.get(t).copied().unwrap_or(f64::NAN);
            writeln!(out, "{t},{},{}", fmt_f64(*loss), fmt_f64(dev))?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per step, one column per sample.
    pub fn write_residuals_csv(&self, path: &Path) -> Result<bool> {
        let Some(res) = &self.residuals else {
            return Ok(false);
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in res {
            let line: Vec<String> = r.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(true)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: MlpNetwork,
    pub trace: TrainingTrace,
    /// Decomposition of the initial empirical kernel, when it was needed for
    /// the deviation diagnostics.
    pub initial_kernel: Option<SpectralDecomposition>,
}

/// `Σ_i (1 − ηλ_i)ᵗ (v_iᵀ r₀) v_i`, the frozen-kernel prediction of `r_t`.
pub fn linearized_residual(
    decomp: &SpectralDecomposition,
    r0: ArrayView1<'_, f64>,
    eta: f64,
    t: usize,
) -> Result<Array1<f64>> {
    if r0.len() != decomp.order() {
        return Err(Error::ShapeMismatch {
            what: "residual length",
            expected: decomp.order(),
            found: r0.len(),
        });
    }
    let coeffs = decomp.eigenvectors.t().dot(&r0);
    Ok(linearized_from_coeffs(decomp, &coeffs, eta, t))
}

fn linearized_from_coeffs(decomp: &SpectralDecomposition, coeffs: &Array1<f64>, eta: f64, t: usize) -> Array1<f64> {
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let weighted = Zip::from(coeffs)
        .and(&decomp.eigenvalues)
        .map_collect(|&c, &lam| c * (1.0 - eta * lam).powi(exp));
    decomp.eigenvectors.dot(&weighted)
}

/// Full-batch gradient descent on `½‖f(w) − y‖²`.
///
/// With `record_residuals`, the initial empirical kernel is decomposed once
/// and every step also records the distance between the actual residual and
/// its frozen-kernel prediction.
pub fn train_gd(
    net: &MlpNetwork,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    config: &GdConfig,
) -> Result<TrainOutcome> {
    run_gd(net, x, y, config, None)
}

/// [`train_gd`] with the initial kernel's decomposition supplied by the
/// caller, for when it has already been computed.
pub fn train_gd_with_initial_kernel(
    net: &MlpNetwork,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    config: &GdConfig,
    initial_kernel: SpectralDecomposition,
) -> Result<TrainOutcome> {
    if initial_kernel.order() != x.nrows() {
        return Err(Error::ShapeMismatch {
            what: "initial kernel order",
            expected: x.nrows(),
            found: initial_kernel.order(),
        });
    }
    run_gd(net, x, y, config, Some(initial_kernel))
}

fn run_gd(
    net: &MlpNetwork,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    config: &GdConfig,
    initial_kernel: Option<SpectralDecomposition>,
) -> Result<TrainOutcome> {
    net.check_inputs(x)?;
    if y.len() != x.nrows() {
        return Err(Error::ShapeMismatch {
            what: "labels per input row",
            expected: x.nrows(),
            found: y.len(),
        });
    }
    let n = y.len();
    let mut net = net.clone();
    let mut cache = net.forward_cache(x);
    let r0 = &cache.output - &y;

    let linear = if config.record_residuals {
        let decomp = match initial_kernel {
            Some(d) => d,
            None => eigh_symmetric(&net.empirical_ntk(x)?)?,
        };
        let coeffs = decomp.eigenvectors.t().dot(&r0);
        Some((decomp, coeffs))
    } else {
        None
    };

    let mut trace = TrainingTrace {
        eta: config.eta,
        steps: config.steps,
        losses: Vec::with_capacity(config.steps + 1),
        residuals: (config.record_residuals && n <= MAX_RECORDED_RESIDUAL_LEN).then(Vec::new),
        deviation_norms: Vec::new(),
        initial_residual_norm: r0.dot(&r0).sqrt(),
    };
    let initial_loss = 0.5 * r0.dot(&r0);

    for t in 0..=config.steps {
        let residual = &cache.output - &y;
        let loss = 0.5 * residual.dot(&residual);
        trace.losses.push(loss);
        if let Some((decomp, coeffs)) = &linear {
            let predicted = linearized_from_coeffs(decomp, coeffs, config.eta, t);
            let gap = &residual - &predicted;
            trace.deviation_norms.push(gap.dot(&gap).sqrt());
            if let Some(res) = trace.residuals.as_mut() {
                res.push(residual.to_vec());
            }
        }
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial_loss {
            return Err(Error::Diverged {
                step: t,
                loss,
                trace: Box::new(trace),
            });
        }
        if t == config.steps {
            break;
        }
        let grads = net.loss_gradient(&cache, residual.view());
        for (w, g) in net.weights.iter_mut().zip(&grads) {
            w.scaled_add(-config.eta, g);
        }
        cache = net.forward_cache(x);
    }
    Ok(TrainOutcome {
        network: net,
        trace,
        initial_kernel: linear.map(|(d, _)| d),
    })
}
