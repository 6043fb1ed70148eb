//! Datasets on the unit sphere: synthetic generation with injected near
//! duplicates, CSV round trips, data-assumption checks and batch sampling.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::rng;

/// Two rows closer than this are duplicates, not a Lipschitz sample.
pub const DUPLICATE_DISTANCE: f64 = 1e-12;
/// `|cos ∠(x_i, x_j)|` at or above `1 − PARALLEL_TOLERANCE` counts as parallel.
pub const PARALLEL_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_NEAR_DUPLICATE_ANGLE: f64 = 0.05;
const ZERO_ROW_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelTarget {
    /// `y = cos(frequency · (w·x))` for a fixed unit direction `w` drawn from
    /// the seed. Lipschitz with constant `frequency`.
    CosineOfProjection { frequency: f64 },
}

impl LabelTarget {
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            LabelTarget::CosineOfProjection { frequency } => *frequency,
        }
    }
}

/// `count` partner points, each at exactly `angle` radians from its base point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairGroup {
    pub count: usize,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub target: LabelTarget,
    #[serde(default)]
    pub near_dup_pairs: Vec<PairGroup>,
}

impl SyntheticSpec {
    pub fn total_pairs(&self) -> usize {
        self.near_dup_pairs.iter().map(|g| g.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidSpec(format!("n must be at least 2, got {}", self.n)));
        }
        if self.d < 2 {
            return Err(Error::InvalidSpec(format!("d must be at least 2, got {}", self.d)));
        }
        let LabelTarget::CosineOfProjection { frequency } = self.target;
        if !(frequency.is_finite() && frequency > 0.0) {
            return Err(Error::InvalidSpec(format!("label frequency must be positive, got {frequency}")));
        }
        for g in &self.near_dup_pairs {
            if g.count == 0 {
                return Err(Error::InvalidSpec("pair group with zero count".into()));
            }
            if !(g.angle > 0.0 && g.angle < std::f64::consts::PI) {
                return Err(Error::InvalidSpec(format!("pair angle must lie in (0, π), got {}", g.angle)));
            }
        }
        if 2 * self.total_pairs() > self.n {
            return Err(Error::InvalidSpec(format!(
                "{} injected pairs do not fit in n = {}",
                self.total_pairs(),
                self.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic(SyntheticSpec),
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectedPair {
    pub base: usize,
    pub partner: usize,
    pub angle: f64,
}

/// Inputs (one row per sample) with scalar labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub name: String,
    pub provenance: Provenance,
    /// Near-duplicate pairs placed by the generator; empty for loaded files.
    pub injected_pairs: Vec<InjectedPair>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, name: impl Into<String>, provenance: Provenance) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::ShapeMismatch {
                what: "labels per input row",
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.nrows() < 2 {
            return Err(Error::InvalidSize(format!("a dataset needs at least 2 rows, got {}", x.nrows())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self {
            x,
            y,
            name: name.into(),
            provenance,
            injected_pairs: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `indices`, in the given order. Injected-pair metadata is dropped.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let x = self.x.select(ndarray::Axis(0), indices);
        let y = self.y.select(ndarray::Axis(0), indices);
        Self::new(x, y, format!("{}[subset]", self.name), self.provenance.clone())
    }
}

/// Angle between two unit vectors, accurate for tiny angles.
pub fn unit_angle(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let dist = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    2.0 * (0.5 * dist).min(1.0).asin()
}

fn normalize_in_place(mut v: ndarray::ArrayViewMut1<'_, f64>) -> f64 {
    let norm = v.dot(&v).sqrt();
    v /= norm;
    norm
}

fn gaussian_unit(d: usize, rng: &mut impl rand::Rng) -> Array1<f64> {
    loop {
        let mut v = Array1::from_iter((0..d).map(|_| StandardNormal.sample(rng)));
        if normalize_in_place(v.view_mut()) > 1e-8 {
            return v;
        }
    }
}

/// Random points on the sphere plus near-duplicate partners and cosine labels.
///
/// With `P` pairs in total, rows `0..n−P` are i.i.d. uniform base points and
/// row `n−P+j` is the partner of base row `j`, rotated by exactly the pair
/// angle towards a random tangent direction.
pub fn generate_sphere_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let pairs = spec.total_pairs();
    let base = n - pairs;

    let mut x = Array2::<f64>::zeros((n, d));
    let mut point_rng = rng::stream(spec.seed, rng::STREAM_DATA_POINTS);
    for i in 0..base {
        x.row_mut(i).assign(&gaussian_unit(d, &mut point_rng));
    }

    let mut pair_rng = rng::stream(spec.seed, rng::STREAM_DATA_PAIRS);
    let angles = spec
        .near_dup_pairs
        .iter()
        .flat_map(|g| std::iter::repeat_n(g.angle, g.count));
    let mut injected = Vec::with_capacity(pairs);
    for (j, angle) in angles.enumerate() {
        let origin = x.row(j).to_owned();
        let mut tangent = gaussian_unit(d, &mut pair_rng);
        // Two Gram-Schmidt passes keep the tangent orthogonal to full precision.
        for _ in 0..2 {
            let along = tangent.dot(&origin);
            tangent.scaled_add(-along, &origin);
            normalize_in_place(tangent.view_mut());
        }
        let mut partner = origin.mapv(|v| v * angle.cos());
        partner.scaled_add(angle.sin(), &tangent);
        normalize_in_place(partner.view_mut());
        let row = base + j;
        x.row_mut(row).assign(&partner);
        injected.push(InjectedPair {
            base: j,
            partner: row,
            angle,
        });
    }

    let mut dir_rng = rng::stream(spec.seed, rng::STREAM_DATA_DIRECTION);
    let w = gaussian_unit(d, &mut dir_rng);
    let LabelTarget::CosineOfProjection { frequency } = spec.target;
    let y = x.dot(&w).mapv(|p| (frequency * p).cos());

    let mut ds = Dataset::new(x, y, format!("sphere-n{n}-d{d}-s{}", spec.seed), Provenance::Synthetic(spec.clone()))?;
    ds.injected_pairs = injected;
    Ok(ds)
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("feature_{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (row, label) in dataset.x.rows().into_iter().zip(dataset.y.iter()) {
        let mut rec: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(fmt_f64(*label));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dataset CSV (`feature_0,…,feature_{d−1},label` header). With
/// `normalize`, rows are scaled onto the unit sphere. Rows with norm below
/// 1e-12 are rejected either way.
pub fn load_csv(path: &Path, normalize: bool) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 2 || header.get(header.len() - 1).map(str::trim) != Some("label") {
        return Err(Error::Parse {
            line: 1,
            column: header.len().max(1),
            message: "header must end with a `label` column after at least one feature".into(),
        });
    }
    let d = header.len() - 1;
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 1 {
            return Err(Error::Parse {
                line,
                column: rec.len().min(d + 1),
                message: format!("expected {} fields, found {}", d + 1, rec.len()),
            });
        }
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|e| Error::Parse {
                line,
                column: col + 1,
                message: format!("{e}: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: col + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            if col < d {
                feats.push(v);
            } else {
                labels.push(v);
            }
        }
    }
    let n = labels.len();
    let mut x = Array2::from_shape_vec((n, d), feats).map_err(|e| Error::InvalidSize(e.to_string()))?;
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm < ZERO_ROW_NORM {
            return Err(Error::ZeroVectorRow(i));
        }
        if normalize {
            row /= norm;
        }
    }
    let name = path
        .file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(
        x,
        Array1::from(labels),
        name,
        Provenance::File {
            path: path.to_path_buf(),
        },
    )
}

pub fn write_spec_json(spec: &SyntheticSpec, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(spec)? + "\n")?;
    Ok(())
}

pub fn read_spec_json(path: &Path) -> Result<SyntheticSpec> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataCheckReport {
    pub n: usize,
    pub unit_norm_violations: Vec<usize>,
    pub parallel_pairs: Vec<(usize, usize)>,
    pub min_pairwise_angle: f64,
    pub lipschitz_estimate: f64,
    /// Pair attaining `lipschitz_estimate`, if any pair qualified.
    pub lipschitz_pair: Option<(usize, usize)>,
    pub near_duplicate_threshold: f64,
    pub near_duplicate_pairs: Vec<(usize, usize, f64)>,
}

impl DataCheckReport {
    /// Unit length and non-degeneracy both hold.
    pub fn assumptions_hold(&self) -> bool {
        self.unit_norm_violations.is_empty() && self.parallel_pairs.is_empty()
    }
}

#[derive(Default)]
struct RowScan {
    parallel: Vec<(usize, usize)>,
    min_angle: f64,
    lip: f64,
    lip_pair: Option<(usize, usize)>,
    near: Vec<(usize, usize, f64)>,
}

/// Exhaustive pairwise scan of the data assumptions.
pub fn check_assumptions(dataset: &Dataset, near_duplicate_threshold: f64) -> DataCheckReport {
    let x = &dataset.x;
    let y = &dataset.y;
    let n = dataset.len();
    let unit_norm_violations = crate::ntk_analytic::non_unit_rows(x.view());
    let mut unit = x.clone();
    for row in unit.rows_mut() {
        normalize_in_place(row);
    }

    let scans: Vec<RowScan> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = RowScan {
                min_angle: f64::INFINITY,
                ..Default::default()
            };
            for j in (i + 1)..n {
                let cos = unit.row(i).dot(&unit.row(j));
                let angle = unit_angle(unit.row(i), unit.row(j));
                s.min_angle = s.min_angle.min(angle);
                let parallel = cos.abs() >= 1.0 - PARALLEL_TOLERANCE;
                if parallel {
                    s.parallel.push((i, j));
                }
                if angle < near_duplicate_threshold {
                    s.near.push((i, j, angle));
                }
                let dist = x
                    .row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if !parallel && dist > DUPLICATE_DISTANCE {
                    let ratio = (y[i] - y[j]).abs() / dist;
                    if ratio > s.lip {
                        s.lip = ratio;
                        s.lip_pair = Some((i, j));
                    }
                }
            }
            s
        })
        .collect();

    let mut report = DataCheckReport {
        n,
        unit_norm_violations,
        parallel_pairs: Vec::new(),
        min_pairwise_angle: f64::INFINITY,
        lipschitz_estimate: 0.0,
        lipschitz_pair: None,
        near_duplicate_threshold,
        near_duplicate_pairs: Vec::new(),
    };
    for s in scans {
        report.parallel_pairs.extend(s.parallel);
        report.near_duplicate_pairs.extend(s.near);
        report.min_pairwise_angle = report.min_pairwise_angle.min(s.min_angle);
        if s.lip > report.lipschitz_estimate {
            report.lipschitz_estimate = s.lip;
            report.lipschitz_pair = s.lip_pair;
        }
    }
    report
}

/// `num_batches` index sets of `batch_size` distinct indices from `0..n`,
/// each drawn from its own stream and returned sorted.
pub fn make_batches(n: usize, batch_size: usize, num_batches: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidSize(format!("batch size {batch_size} must lie in 1..={n}")));
    }
    Ok((0..num_batches)
        .map(|b| {
            let mut r = rng::stream(seed, rng::STREAM_BATCHES + b as u64);
            let mut idx = rand::seq::index::sample(&mut r, n, batch_size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(n: usize, d: usize, pairs: Vec<PairGroup>) -> SyntheticSpec {
        SyntheticSpec {
            n,
            d,
            seed: 11,
            target: LabelTarget::CosineOfProjection { frequency: 3.0 },
            near_dup_pairs: pairs,
        }
    }

    fn brute_lipschitz(ds: &Dataset) -> f64 {
        let mut best = 0.0_f64;
        for i in 0..ds.len() {
            for j in 0..ds.len() {
                if i == j {
                    continue;
                }
                let diff = &ds.x.row(i) - &ds.x.row(j);
                let dist = diff.dot(&diff).sqrt();
                if dist > 1e-12 {
                    best = best.max((ds.y[i] - ds.y[j]).abs() / dist);
                }
            }
        }
        best
    }

    #[test]
    fn injected_angles_are_exact() {
        let angles = [1e-4, 1e-3, 0.05, 0.7];
        let groups = angles.iter().map(|&a| PairGroup { count: 2, angle: a }).collect();
        let ds = generate_sphere_dataset(&spec(40, 6, groups)).unwrap();
        assert_eq!(ds.injected_pairs.len(), 8);
        for p in &ds.injected_pairs {
            let got = unit_angle(ds.x.row(p.base), ds.x.row(p.partner));
            assert!((got - p.angle).abs() <= 1e-10, "{got} vs {}", p.angle);
        }
        assert!(crate::ntk_analytic::non_unit_rows(ds.x.view()).is_empty());
    }

    #[test]
    fn labels_respect_frequency_bound() {
        let ds = generate_sphere_dataset(&spec(60, 5, vec![PairGroup { count: 10, angle: 1e-3 }])).unwrap();
        let brute = brute_lipschitz(&ds);
        assert!(brute <= 3.0, "{brute}");
        let report = check_assumptions(&ds, DEFAULT_NEAR_DUPLICATE_ANGLE);
        assert!((report.lipschitz_estimate - brute).abs() <= 1e-12);
        assert!(report.assumptions_hold());
        assert_eq!(report.near_duplicate_pairs.len(), 10);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(30, 4, vec![PairGroup { count: 3, angle: 0.01 }]);
        assert_eq!(generate_sphere_dataset(&s).unwrap(), generate_sphere_dataset(&s).unwrap());
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_sphere_dataset(&spec(10, 3, vec![PairGroup { count: 6, angle: 0.1 }])).is_err());
        assert!(generate_sphere_dataset(&spec(10, 1, vec![])).is_err());
        assert!(generate_sphere_dataset(&spec(10, 3, vec![PairGroup { count: 1, angle: 0.0 }])).is_err());
        let mut s = spec(10, 3, vec![]);
        s.target = LabelTarget::CosineOfProjection { frequency: -1.0 };
        assert!(matches!(generate_sphere_dataset(&s), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let ds = generate_sphere_dataset(&spec(25, 4, vec![PairGroup { count: 2, angle: 1e-3 }])).unwrap();
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, false).unwrap();
        let err = (&back.x - &ds.x).iter().chain((&back.y - &ds.y).iter()).fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-12);
    }

    #[test]
    fn csv_parse_error_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "feature_0,feature_1,label\n1,0,0.5\n0,oops,1\n").unwrap();
        match load_csv(&path, true) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_zero_row_and_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.csv");
        std::fs::write(&path, "feature_0,feature_1,label\n3,4,1\n0,-2,0\n1,1,2\n").unwrap();
        let ds = load_csv(&path, true).unwrap();
        for r in ds.x.rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(ds.x.row(0).to_vec(), vec![0.6, 0.8]);
        let raw = load_csv(&path, false).unwrap();
        assert_eq!(check_assumptions(&raw, 0.05).unit_norm_violations, vec![0, 1, 2]);

        std::fs::write(&path, "feature_0,feature_1,label\n1,0,1\n0,0,0\n").unwrap();
        assert!(matches!(load_csv(&path, true), Err(Error::ZeroVectorRow(1))));
    }

    #[test]
    fn orthonormal_pair_report() {
        let ds = Dataset::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 1.0], "e", Provenance::File { path: "x".into() }).unwrap();
        let r = check_assumptions(&ds, 0.05);
        assert!((r.min_pairwise_angle - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((r.lipschitz_estimate - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(r.assumptions_hold());
    }

    #[test]
    fn antipodal_pair_is_flagged() {
        let ds = Dataset::new(
            array![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            array![0.0, 1.0, 0.5],
            "anti",
            Provenance::File { path: "x".into() },
        )
        .unwrap();
        let r = check_assumptions(&ds, 0.05);
        assert_eq!(r.parallel_pairs, vec![(0, 1)]);
        assert!(!r.assumptions_hold());
    }

    #[test]
    fn permuting_rows_preserves_lipschitz() {
        let ds = generate_sphere_dataset(&spec(20, 3, vec![PairGroup { count: 2, angle: 0.01 }])).unwrap();
        let perm: Vec<usize> = (0..20).rev().collect();
        let a = check_assumptions(&ds, 0.05);
        let b = check_assumptions(&ds.subset(&perm).unwrap(), 0.05);
        assert_eq!(a.lipschitz_estimate, b.lipschitz_estimate);
        assert_eq!(a.min_pairwise_angle, b.min_pairwise_angle);
        let mapped: Vec<(usize, usize)> = b
            .near_duplicate_pairs
            .iter()
            .map(|&(i, j, _)| {
                let (p, q) = (perm[i], perm[j]);
                (p.min(q), p.max(q))
            })
            .collect();
        let mut expect: Vec<(usize, usize)> = a.near_duplicate_pairs.iter().map(|&(i, j, _)| (i, j)).collect();
        let mut mapped = mapped;
        expect.sort();
        mapped.sort();
        assert_eq!(expect, mapped);
    }

    #[test]
    fn full_batch_is_identity_set() {
        assert_eq!(make_batches(7, 7, 1, 3).unwrap(), vec![(0..7).collect::<Vec<_>>()]);
        assert!(make_batches(5, 6, 1, 0).is_err());
        assert!(make_batches(5, 0, 1, 0).is_err());
    }

    #[test]
    fn batches_hold_distinct_indices() {
        for b in make_batches(50, 20, 30, 9).unwrap() {
            assert_eq!(b.len(), 20);
            assert!(b.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn batch_frequencies_are_uniform() {
        let (n, k, m) = (40usize, 10usize, 10_000usize);
        let mut counts = vec![0usize; n];
        for b in make_batches(n, k, m, 2024).unwrap() {
            for i in b {
                counts[i] += 1;
            }
        }
        let p = k as f64 / n as f64;
        let mean = m as f64 * p;
        let sd = (m as f64 * p * (1.0 - p)).sqrt();
        // 3σ family-wise over n indices: two-sided tail 0.0027 split n ways.
        let z = 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / (sd * sd)).sum();
        assert!(chi2 < n as f64 + 3.0 * (2.0 * n as f64).sqrt(), "chi2 {chi2}");
        for c in counts {
            assert!((c as f64 - mean).abs() <= z * sd, "count {c} vs {mean} ± {sd}");
        }
    }
}
