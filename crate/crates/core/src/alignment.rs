//! Eigen-projection profiles, log–log slope fits, alignment bands and
//! power-law spectrum fits.
//!
//! Ranks are 1-based and follow the descending eigenvalue order of
//! [`SpectralDecomposition`]; rank 1 is the largest eigenvalue.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{make_batches, Dataset};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::linalg::{eigh_symmetric, SpectralDecomposition};
use crate::netsim::MlpNetwork;
use crate::ntk_analytic::{build_ntk_matrix, AnalyticNtkConfig};

pub const DEFAULT_EXCLUDE_TOP_K: usize = 10;
pub const DEFAULT_FLOOR: f64 = 1e-14;
pub const PARSEVAL_TOLERANCE: f64 = 1e-8;

/// `(v_i · target)²` in eigenvalue order, checked against `‖target‖²`.
pub fn eigen_projections(decomp: &SpectralDecomposition, target: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if target.len() != decomp.order() {
        return Err(Error::ShapeMismatch {
            what: "projection target length",
            expected: decomp.order(),
            found: target.len(),
        });
    }
    let proj = decomp.eigenvectors.t().dot(&target).mapv(|c| c * c);
    let norm2 = target.dot(&target);
    let err = parseval_error(proj.sum(), norm2);
    if err > PARSEVAL_TOLERANCE {
        return Err(Error::Parseval(err));
    }
    Ok(proj)
}

fn parseval_error(sum: f64, norm2: f64) -> f64 {
    if norm2 == 0.0 {
        sum.abs()
    } else {
        (sum - norm2).abs() / norm2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub rank: usize,
    pub lambda: f64,
    pub proj: f64,
}

pub fn profile_points(eigenvalues: ArrayView1<'_, f64>, proj: ArrayView1<'_, f64>) -> Vec<ProfilePoint> {
    eigenvalues
        .iter()
        .zip(proj.iter())
        .enumerate()
        .map(|(i, (&lambda, &proj))| ProfilePoint {
            rank: i + 1,
            lambda,
            proj,
        })
        .collect()
}

/// Ordinary least squares line `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn least_squares_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InsufficientPoints {
            needed: 2,
            found: n.min(y.len()),
        });
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateInput("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - slope * a - intercept).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
        points: n,
    })
}

/// OLS of `ln proj` on `ln λ` over points with rank above `exclude_top_k`
/// and both coordinates above `floor`. Returns the fit; its slope is α.
pub fn fit_loglog_slope(points: &[ProfilePoint], exclude_top_k: usize, floor: f64) -> Result<LineFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.rank > exclude_top_k && p.lambda > floor && p.proj > floor)
        .map(|p| (p.lambda.ln(), p.proj.ln()))
        .unzip();
    if x.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            found: x.len(),
        });
    }
    least_squares_line(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentProfile {
    pub points: Vec<ProfilePoint>,
    pub alpha: f64,
    pub log_intercept: f64,
    pub r_squared: f64,
    pub fitted_points: usize,
    pub excluded_top_k: usize,
    pub floor: f64,
}

impl AlignmentProfile {
    pub fn fit(points: Vec<ProfilePoint>, exclude_top_k: usize, floor: f64) -> Result<Self> {
        let line = fit_loglog_slope(&points, exclude_top_k, floor)?;
        Ok(Self {
            points,
            alpha: line.slope,
            log_intercept: line.intercept,
            r_squared: line.r_squared,
            fitted_points: line.points,
            excluded_top_k: exclude_top_k,
            floor,
        })
    }

    pub fn from_decomposition(
        decomp: &SpectralDecomposition,
        target: ArrayView1<'_, f64>,
        exclude_top_k: usize,
        floor: f64,
    ) -> Result<Self> {
        let proj = eigen_projections(decomp, target)?;
        Self::fit(profile_points(decomp.eigenvalues.view(), proj.view()), exclude_top_k, floor)
    }

    /// `rank,lambda,proj`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "rank,lambda,proj")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.rank, fmt_f64(p.lambda), fmt_f64(p.proj))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_points_csv(path: &Path) -> Result<Vec<ProfilePoint>> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut points = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 2;
            let cell = |col: usize| -> Result<&str> {
                record.get(col).ok_or_else(|| Error::Parse {
                    line,
                    column: col + 1,
                    message: "missing field".into(),
                })
            };
            let parse_f = |col: usize| -> Result<f64> {
                let s = cell(col)?;
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    column: col + 1,
                    message: format!("{s:?}: {e}"),
                })
            };
            let rank = cell(0)?.trim().parse::<usize>().map_err(|e| Error::Parse {
                line,
                column: 1,
                message: e.to_string(),
            })?;
            points.push(ProfilePoint {
                rank,
                lambda: parse_f(1)?,
                proj: parse_f(2)?,
            });
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConstants {
    pub c: f64,
    pub delta: f64,
    /// `c / δ`; infinite for exact alignment.
    pub dominance: f64,
}

impl BandConstants {
    fn from_ratios(ratios: impl Iterator<Item = f64>) -> Option<Self> {
        let (lo, hi) = ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
        if !lo.is_finite() {
            return None;
        }
        let c = 0.5 * (hi + lo);
        let delta = 0.5 * (hi - lo);
        Some(Self {
            c,
            delta,
            dominance: c / delta,
        })
    }
}

/// Constants `c, δ` with `(c − δ)λ_i ≤ (v_iᵀr₀)² ≤ (c + δ)λ_i` on the
/// retained indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBand {
    pub c: f64,
    pub delta: f64,
    pub dominance: f64,
    /// Ratios `proj_i / λ_i` for the retained indices, in the same order.
    pub ratios: Vec<f64>,
    /// 0-based eigen-indices that entered the band.
    pub retained_indices: Vec<usize>,
    /// Minimum ratio is zero, so `δ = c`.
    pub degenerate: bool,
    /// The same construction over every index, when all eigenvalues clear
    /// the floor.
    pub full: Option<BandConstants>,
}

impl AlignmentBand {
    /// Whether `(c − δ)λ ≤ proj ≤ (c + δ)λ` up to a relative slack.
    pub fn contains(&self, lambda: f64, proj: f64, rel_slack: f64) -> bool {
        let lo = (self.c - self.delta) * lambda;
        let hi = (self.c + self.delta) * lambda;
        let pad = rel_slack * hi.abs().max(f64::MIN_POSITIVE);
        proj >= lo - pad && proj <= hi + pad
    }
}

pub fn estimate_alignment_band(
    decomp: &SpectralDecomposition,
    r0: ArrayView1<'_, f64>,
    floor: f64,
    exclude_top_k: usize,
) -> Result<AlignmentBand> {
    let proj = eigen_projections(decomp, r0)?;
    band_from_projections(decomp.eigenvalues.view(), proj.view(), floor, exclude_top_k)
}

pub fn band_from_projections(
    eigenvalues: ArrayView1<'_, f64>,
    proj: ArrayView1<'_, f64>,
    floor: f64,
    exclude_top_k: usize,
) -> Result<AlignmentBand> {
    let retained_indices: Vec<usize> = (exclude_top_k..eigenvalues.len())
        .filter(|&i| eigenvalues[i] > floor)
        .collect();
    if retained_indices.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, found: 0 });
    }
    let ratios: Vec<f64> = retained_indices.iter().map(|&i| proj[i] / eigenvalues[i]).collect();
    let band = BandConstants::from_ratios(ratios.iter().copied()).expect("non-empty ratios");
    let full = if eigenvalues.iter().all(|&l| l > floor) {
        BandConstants::from_ratios(eigenvalues.iter().zip(proj.iter()).map(|(l, p)| p / l))
    } else {
        None
    };
    let degenerate = ratios.contains(&0.0);
    if degenerate {
        log::warn!("alignment band is degenerate: a retained projection is exactly zero");
    }
    Ok(AlignmentBand {
        c: band.c,
        delta: band.delta,
        dominance: band.dominance,
        ratios,
        retained_indices,
        degenerate,
        full,
    })
}

/// `C1 i^(−q) ≤ λ_i ≤ C2 i^(−q)` on `fit_range` (1-based ranks, inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub q: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub fit_range: (usize, usize),
    pub r_squared: f64,
}

pub fn fit_power_law(eigenvalues: ArrayView1<'_, f64>, fit_range: (usize, usize)) -> Result<PowerLawFit> {
    let (first, last) = fit_range;
    if first == 0 || last > eigenvalues.len() || first > last {
        return Err(Error::InvalidSize(format!(
            "rank range {first}..={last} does not fit {} eigenvalues",
            eigenvalues.len()
        )));
    }
    if let Some(rank) = (first..=last).find(|&i| !(eigenvalues[i - 1] > 0.0)) {
        return Err(Error::NonPositiveEigenvalue {
            rank,
            value: eigenvalues[rank - 1],
        });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = (first..=last)
        .map(|i| ((i as f64).ln(), eigenvalues[i - 1].ln()))
        .unzip();
    let line = least_squares_line(&x, &y)?;
    let q = -line.slope;
    let (c1, c2) = (first..=last)
        .map(|i| eigenvalues[i - 1] * (i as f64).powf(q))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(PowerLawFit {
        q,
        c1,
        c2,
        fit_range,
        r_squared: line.r_squared,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSource {
    Analytic(AnalyticNtkConfig),
    /// Empirical kernel at initialization, one network per seed.
    Network {
        width: usize,
        depth: usize,
        seeds: Vec<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Labels,
    /// `f(w₀; x) − y`; requires a network kernel source.
    Residual,
}

#[derive(Debug, Clone)]
pub struct BatchedAlignmentConfig {
    pub batch_size: usize,
    pub num_batches: usize,
    pub seed: u64,
    pub target: TargetKind,
    pub exclude_top_k: usize,
    pub floor: f64,
}

/// Average of `λ` and `proj` per rank over several spectra of equal order.
pub fn average_profiles(samples: &[(Array1<f64>, Array1<f64>)]) -> Result<Vec<ProfilePoint>> {
    let Some((first, _)) = samples.first() else {
        return Err(Error::InsufficientPoints { needed: 1, found: 0 });
    };
    let n = first.len();
    let mut lam = Array1::<f64>::zeros(n);
    let mut proj = Array1::<f64>::zeros(n);
    for (l, p) in samples {
        if l.len() != n || p.len() != n {
            return Err(Error::ShapeMismatch {
                what: "profile length",
                expected: n,
                found: l.len().min(p.len()),
            });
        }
        lam += l;
        proj += p;
    }
    let k = samples.len() as f64;
    Ok(profile_points((lam / k).view(), (proj / k).view()))
}

/// Profile averaged over random batches (and network seeds), each batch
/// decomposed on its own.
pub fn batched_alignment(
    dataset: &Dataset,
    source: &KernelSource,
    config: &BatchedAlignmentConfig,
) -> Result<AlignmentProfile> {
    if matches!(source, KernelSource::Analytic(_)) && config.target == TargetKind::Residual {
        return Err(Error::DegenerateInput(
            "residual targets need a finite-width network kernel".into(),
        ));
    }
    let batches = make_batches(dataset.len(), config.batch_size, config.num_batches, config.seed)?;
    let networks = match source {
        KernelSource::Analytic(_) => Vec::new(),
        KernelSource::Network { width, depth, seeds } => {
            if seeds.is_empty() {
                return Err(Error::InvalidSize("at least one network seed is required".into()));
            }
            seeds
                .iter()
                .map(|&s| MlpNetwork::init(dataset.dim(), *width, *depth, s))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let jobs: Vec<(usize, Option<usize>)> = match source {
        KernelSource::Analytic(_) => (0..batches.len()).map(|b| (b, None)).collect(),
        KernelSource::Network { .. } => (0..batches.len())
            .flat_map(|b| (0..networks.len()).map(move |s| (b, Some(s))))
            .collect(),
    };
    let samples = jobs
        .par_iter()
        .map(|&(b, net)| {
            let batch = dataset.subset(&batches[b])?;
            let (kernel, target) = match (source, net) {
                (KernelSource::Analytic(cfg), _) => (build_ntk_matrix(batch.x.view(), cfg)?, batch.y.clone()),
                (KernelSource::Network { .. }, Some(s)) => {
                    let net = &networks[s];
                    let target = match config.target {
                        TargetKind::Labels => batch.y.clone(),
                        TargetKind::Residual => &net.forward(batch.x.view())? - &batch.y,
                    };
                    (net.empirical_ntk(batch.x.view())?, target)
                }
                (KernelSource::Network { .. }, None) => unreachable!("network jobs carry a seed"),
            };
            let decomp = eigh_symmetric(&kernel)?;
            let proj = eigen_projections(&decomp, target.view())?;
            Ok((decomp.eigenvalues, proj))
        })
        .collect::<Result<Vec<_>>>()?;
    AlignmentProfile::fit(average_profiles(&samples)?, config.exclude_top_k, config.floor)
}

/// Scalars written next to a profile CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub alpha: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub c: Option<f64>,
    pub delta: Option<f64>,
    pub q: Option<f64>,
    #[serde(rename = "C1")]
    pub c1: Option<f64>,
    #[serde(rename = "C2")]
    pub c2: Option<f64>,
}

impl AlignmentSummary {
    pub fn new(profile: &AlignmentProfile, band: Option<&AlignmentBand>, power: Option<&PowerLawFit>) -> Self {
        Self {
            alpha: Some(profile.alpha),
            intercept: Some(profile.log_intercept),
            r_squared: Some(profile.r_squared),
            c: band.map(|b| b.c),
            delta: band.map(|b| b.delta),
            q: power.map(|p| p.q),
            c1: power.map(|p| p.c1),
            c2: power.map(|p| p.c2),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }
}
