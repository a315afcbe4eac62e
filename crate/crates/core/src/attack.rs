//! Correlation and template attacks on the first-round SBOX output.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::leakage::{hw, sbox};
use crate::trace::TraceSet;

/// Trace counts at which attacks are evaluated when none are given.
pub const DEFAULT_GRID: [usize; 7] = [200, 500, 1_000, 5_000, 10_000, 50_000, 100_000];

pub const DEFAULT_POI_COUNT: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AttackError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("trace grid must be ascending, non-empty and within the {n_traces} available traces")]
    BadGrid { n_traces: usize },
    #[error("byte index {0} out of range")]
    BadByte(usize),
    #[error("class {class} has {count} profiling traces, need at least 2")]
    ThinClass { class: usize, count: usize },
    #[error("poi count must be between 1 and the number of samples")]
    BadPoiCount,
    #[error("covariance is singular even after regularization")]
    SingularCovariance,
    #[error("non-finite likelihood for trace {0}")]
    NonFinite(usize),
    #[error("template and trace lengths differ")]
    ShapeMismatch,
}

/// Centered Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AttackError> {
    if x.len() != y.len() {
        return Err(AttackError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AttackError::TooFewObservations(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AttackError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `hw_model()[[k, v]] = hw(sbox(v ^ k))`.
pub fn hw_model() -> &'static Array2<f64> {
    static TABLE: OnceLock<Array2<f64>> = OnceLock::new();
    TABLE.get_or_init(|| Array2::from_shape_fn((256, 256), |(k, v)| hw(sbox((v ^ k) as u8)) as f64))
}

/// Evaluation points: the default grid capped at `n_traces`, which is always included.
pub fn default_grid(n_traces: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = DEFAULT_GRID.iter().copied().filter(|&g| g <= n_traces).collect();
    if grid.last() != Some(&n_traces) && n_traces > 0 {
        grid.push(n_traces);
    }
    grid
}

fn check_grid(grid: &[usize], n_traces: usize) -> Result<(), AttackError> {
    let ok = !grid.is_empty()
        && grid.windows(2).all(|w| w[0] < w[1])
        && grid[0] >= 1
        && *grid.last().unwrap() <= n_traces;
    if ok {
        Ok(())
    } else {
        Err(AttackError::BadGrid { n_traces })
    }
}

/// One-pass CPA sums for a set of key bytes.
///
/// Samples are stored per plaintext-byte value, so every key hypothesis is
/// finalized with a single matrix product. Samples are shifted by a reference
/// trace before accumulation to keep the moment sums well conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct CpaAccumulator {
    bytes: Vec<usize>,
    shift: Vec<f64>,
    n: u64,
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
    by_pt: Vec<Array2<f64>>,
    counts: Vec<[u64; 256]>,
}

impl CpaAccumulator {
    pub fn new(bytes: &[usize], shift: Vec<f64>) -> Self {
        let s = shift.len();
        Self {
            bytes: bytes.to_vec(),
            n: 0,
            sum_x: vec![0.0; s],
            sum_x2: vec![0.0; s],
            by_pt: bytes.iter().map(|_| Array2::zeros((256, s))).collect(),
            counts: vec![[0; 256]; bytes.len()],
            shift,
        }
    }

    pub fn n_traces(&self) -> u64 {
        self.n
    }

    pub fn n_samples(&self) -> usize {
        self.shift.len()
    }

    pub fn bytes(&self) -> &[usize] {
        &self.bytes
    }

    pub fn update(&mut self, pt: &[u8; 16], row: ArrayView1<f32>) {
        assert_eq!(row.len(), self.shift.len(), "trace length changed");
        let xs: Vec<f64> = row
            .iter()
            .zip(&self.shift)
            .map(|(&v, s)| v as f64 - s)
            .collect();
        for ((sx, sx2), x) in self.sum_x.iter_mut().zip(self.sum_x2.iter_mut()).zip(&xs) {
            *sx += x;
            *sx2 += x * x;
        }
        for (j, &b) in self.bytes.iter().enumerate() {
            let v = pt[b] as usize;
            self.counts[j][v] += 1;
            let mut dst = self.by_pt[j].row_mut(v);
            for (d, x) in dst.iter_mut().zip(&xs) {
                *d += x;
            }
        }
        self.n += 1;
    }

    /// Adds the sums of `other`, which must cover the same bytes and shift.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.bytes, other.bytes);
        assert_eq!(self.shift, other.shift);
        self.n += other.n;
        for (a, b) in self.sum_x.iter_mut().zip(&other.sum_x) {
            *a += b;
        }
        for (a, b) in self.sum_x2.iter_mut().zip(&other.sum_x2) {
            *a += b;
        }
        for (a, b) in self.by_pt.iter_mut().zip(&other.by_pt) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Signed correlations `256 x n_samples` for the `j`-th tracked byte and
    /// the number of zero-variance sample columns (reported as 0).
    pub fn correlations(&self, j: usize) -> (Array2<f64>, usize) {
        let h = hw_model();
        let n = self.n as f64;
        let sxy = h.dot(&self.by_pt[j]);
        let counts = &self.counts[j];
        let mut sy = [0.0; 256];
        let mut sy2 = [0.0; 256];
        for k in 0..256 {
            for v in 0..256 {
                let c = counts[v] as f64;
                let m = h[[k, v]];
                sy[k] += c * m;
                sy2[k] += c * m * m;
            }
        }
        let den_x: Vec<f64> = self
            .sum_x
            .iter()
            .zip(&self.sum_x2)
            .map(|(&s, &s2)| {
                let d = n * s2 - s * s;
                if d <= 1e-12 * n * s2 {
                    0.0
                } else {
                    d
                }
            })
            .collect();
        let degenerate = den_x.iter().filter(|&&d| d == 0.0).count();
        let mut corr = sxy;
        for (k, mut row) in corr.axis_iter_mut(Axis(0)).enumerate() {
            let den_y = n * sy2[k] - sy[k] * sy[k];
            for (s, c) in row.iter_mut().enumerate() {
                *c = if den_x[s] == 0.0 || den_y <= 0.0 {
                    0.0
                } else {
                    ((n * *c - self.sum_x[s] * sy[k]) / (den_x[s] * den_y).sqrt()).clamp(-1.0, 1.0)
                };
            }
        }
        (corr, degenerate)
    }
}

/// Per-hypothesis peak of `|corr|` over samples.
pub fn peak_per_key(corr: &Array2<f64>) -> Vec<f64> {
    corr.rows()
        .into_iter()
        .map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect()
}

/// `1 + #{candidates scoring strictly higher than the true one}`.
pub fn rank_of(scores: &[f64], true_idx: usize) -> u32 {
    let t = scores[true_idx];
    1 + scores.iter().filter(|&&s| s > t).count() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RankPoint {
    pub n_traces: usize,
    pub rank: u32,
    /// Peak `|corr|` of the true key at this count.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpaResult {
    pub byte_idx: usize,
    pub n_traces: usize,
    /// Signed correlations `256 x n_samples` at the last grid point.
    pub correlations: Array2<f64>,
    pub rank_curve: Vec<RankPoint>,
    pub rho_peak: f64,
    pub best_guess: u8,
    pub degenerate_samples: usize,
}

impl CpaResult {
    pub fn final_rank(&self) -> u32 {
        self.rank_curve.last().map_or(256, |p| p.rank)
    }
}

/// CPA on several bytes in one pass over the traces.
pub fn cpa_bytes(
    set: &TraceSet,
    bytes: &[usize],
    grid: &[usize],
) -> Result<Vec<CpaResult>, AttackError> {
    check_grid(grid, set.n_traces())?;
    if let Some(&b) = bytes.iter().find(|&&b| b >= 16) {
        return Err(AttackError::BadByte(b));
    }
    let shift: Vec<f64> = set.samples.row(0).iter().map(|&v| v as f64).collect();
    let mut acc = CpaAccumulator::new(bytes, shift);
    let mut curves = vec![Vec::with_capacity(grid.len()); bytes.len()];
    let mut last = vec![None; bytes.len()];
    let mut next = 0;
    for (t, row) in set.samples.rows().into_iter().enumerate() {
        acc.update(&set.plaintexts[t], row);
        if t + 1 == grid[next] {
            for (j, &b) in bytes.iter().enumerate() {
                let (corr, degenerate) = acc.correlations(j);
                let peaks = peak_per_key(&corr);
                let k = set.key[b] as usize;
                curves[j].push(RankPoint {
                    n_traces: t + 1,
                    rank: rank_of(&peaks, k),
                    rho: peaks[k],
                });
                last[j] = Some((corr, degenerate, peaks));
            }
            next += 1;
            if next == grid.len() {
                break;
            }
        }
    }
    Ok(bytes
        .iter()
        .zip(curves)
        .zip(last)
        .map(|((&b, rank_curve), last)| {
            let (correlations, degenerate_samples, peaks) = last.expect("grid is non-empty");
            let best = (0..256).max_by(|&a, &c| peaks[a].total_cmp(&peaks[c]).then(c.cmp(&a)));
            CpaResult {
                byte_idx: b,
                n_traces: *grid.last().unwrap(),
                rho_peak: peaks[set.key[b] as usize],
                best_guess: best.unwrap() as u8,
                correlations,
                rank_curve,
                degenerate_samples,
            }
        })
        .collect())
}

pub fn cpa_attack(set: &TraceSet, byte_idx: usize, grid: &[usize]) -> Result<CpaResult, AttackError> {
    Ok(cpa_bytes(set, &[byte_idx], grid)?.remove(0))
}

/// Smallest grid count at which every byte ranks first, from full-key CPA results.
pub fn disclosure_from(results: &[CpaResult]) -> Option<usize> {
    let points = results.first()?.rank_curve.len();
    (0..points)
        .find(|&i| results.iter().all(|r| r.rank_curve[i].rank == 1))
        .map(|i| results[0].rank_curve[i].n_traces)
}

/// Traces needed to recover all 16 key bytes, or `None` if the grid is exhausted.
pub fn traces_to_disclosure(set: &TraceSet, grid: &[usize]) -> Result<Option<usize>, AttackError> {
    let all: Vec<usize> = (0..16).collect();
    Ok(disclosure_from(&cpa_bytes(set, &all, grid)?))
}

fn model_column(set: &TraceSet, key: &[u8; 16], byte_idx: usize) -> Vec<f64> {
    set.plaintexts
        .iter()
        .map(|pt| hw(sbox(pt[byte_idx] ^ key[byte_idx])) as f64)
        .collect()
}

/// Peak `|corr|` over samples between `y` and the selected rows of `samples`.
/// Zero-variance columns are skipped.
pub fn peak_correlation(
    samples: ArrayView2<f32>,
    y: &[f64],
    rows: &[usize],
) -> Result<f64, AttackError> {
    if rows.len() < 2 {
        return Err(AttackError::TooFewObservations(rows.len()));
    }
    let n = rows.len() as f64;
    let my = rows.iter().map(|&t| y[t]).sum::<f64>() / n;
    let syy: f64 = rows.iter().map(|&t| (y[t] - my).powi(2)).sum();
    if syy == 0.0 {
        return Err(AttackError::ZeroVariance);
    }
    let s = samples.ncols();
    let shift: Vec<f64> = samples.row(rows[0]).iter().map(|&v| v as f64).collect();
    let mut sx = vec![0.0; s];
    let mut sx2 = vec![0.0; s];
    let mut sxy = vec![0.0; s];
    for &t in rows {
        let dy = y[t] - my;
        for (i, &v) in samples.row(t).iter().enumerate() {
            let x = v as f64 - shift[i];
            sx[i] += x;
            sx2[i] += x * x;
            sxy[i] += x * dy;
        }
    }
    let mut best = 0.0f64;
    for i in 0..s {
        let sxx = sx2[i] - sx[i] * sx[i] / n;
        if sxx <= 1e-12 * sx2[i] || sxx <= 0.0 {
            continue;
        }
        best = best.max((sxy[i] / (sxx * syy).sqrt()).abs().min(1.0));
    }
    Ok(best)
}

/// Peak `|corr|` between the true-key model and the traces.
pub fn rho_metric(set: &TraceSet, key: &[u8; 16], byte_idx: usize) -> Result<f64, AttackError> {
    if byte_idx >= 16 {
        return Err(AttackError::BadByte(byte_idx));
    }
    let y = model_column(set, key, byte_idx);
    let rows: Vec<usize> = (0..set.n_traces()).collect();
    peak_correlation(set.samples.view(), &y, &rows)
}

/// [`rho_metric`] averaged over the 16 key bytes.
pub fn mean_rho(set: &TraceSet) -> Result<f64, AttackError> {
    let mut total = 0.0;
    for b in 0..16 {
        total += rho_metric(set, &set.key, b)?;
    }
    Ok(total / 16.0)
}

/// Gaussian templates for the 256 values of one SBOX input byte.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub byte_idx: usize,
    pub pois: Vec<usize>,
    /// `256 x pois` class means.
    pub means: Array2<f64>,
    /// Pooled within-class covariance including the ridge term.
    pub covariance: DMatrix<f64>,
    pub ridge: f64,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl TemplateSet {
    /// Log-likelihood of `trace` under each class template.
    pub fn log_likelihoods(&self, trace: ArrayView1<f32>) -> [f64; 256] {
        let p = self.pois.len();
        let x = DVector::from_iterator(p, self.pois.iter().map(|&i| trace[i] as f64));
        let mut out = [0.0; 256];
        let constant = -0.5 * (self.log_det + p as f64 * (2.0 * std::f64::consts::PI).ln());
        for (c, slot) in out.iter_mut().enumerate() {
            let d = &x - DVector::from_iterator(p, self.means.row(c).iter().copied());
            *slot = constant - 0.5 * (d.transpose() * &self.precision * &d)[(0, 0)];
        }
        out
    }
}

/// Profiles templates on `set`; the class of a trace is `pt[byte] ^ key[byte]`.
pub fn build_templates(
    set: &TraceSet,
    byte_idx: usize,
    poi_count: usize,
) -> Result<TemplateSet, AttackError> {
    if byte_idx >= 16 {
        return Err(AttackError::BadByte(byte_idx));
    }
    let s = set.n_samples();
    if poi_count == 0 || poi_count > s {
        return Err(AttackError::BadPoiCount);
    }
    let class_of =
        |t: usize| (set.plaintexts[t][byte_idx] ^ set.key[byte_idx]) as usize;
    let mut counts = [0usize; 256];
    let mut sums = Array2::<f64>::zeros((256, s));
    for (t, row) in set.samples.rows().into_iter().enumerate() {
        let c = class_of(t);
        counts[c] += 1;
        let mut dst = sums.row_mut(c);
        for (d, &v) in dst.iter_mut().zip(row) {
            *d += v as f64;
        }
    }
    if let Some(class) = (0..256).find(|&c| counts[c] < 2) {
        return Err(AttackError::ThinClass {
            class,
            count: counts[class],
        });
    }
    for (c, mut row) in sums.axis_iter_mut(Axis(0)).enumerate() {
        row /= counts[c] as f64;
    }
    let means_all = sums;

    let grand = means_all.mean_axis(Axis(0)).unwrap();
    let inter: Vec<f64> = (0..s)
        .map(|i| {
            means_all
                .column(i)
                .iter()
                .map(|m| (m - grand[i]).powi(2))
                .sum::<f64>()
                / 256.0
        })
        .collect();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| inter[b].total_cmp(&inter[a]).then(a.cmp(&b)));
    let mut pois: Vec<usize> = order[..poi_count].to_vec();
    pois.sort_unstable();

    let p = pois.len();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for (t, row) in set.samples.rows().into_iter().enumerate() {
        let c = class_of(t);
        let d = DVector::from_iterator(
            p,
            pois.iter().map(|&i| row[i] as f64 - means_all[[c, i]]),
        );
        cov += &d * d.transpose();
    }
    cov /= (set.n_traces() - 256) as f64;

    let mean_diag = cov.diagonal().mean();
    // Noise-free data has no within-class spread; fall back to the signal scale.
    let scale = if mean_diag > 0.0 {
        mean_diag
    } else {
        let signal = pois.iter().map(|&i| inter[i]).sum::<f64>() / p as f64;
        if signal > 0.0 {
            signal
        } else {
            1.0
        }
    };
    let ridge = 1e-6 * scale;
    for i in 0..p {
        cov[(i, i)] += ridge;
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or(AttackError::SingularCovariance)?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let precision = chol.inverse();

    let means = Array2::from_shape_fn((256, p), |(c, j)| means_all[[c, pois[j]]]);
    Ok(TemplateSet {
        byte_idx,
        pois,
        means,
        covariance: cov,
        ridge,
        precision,
        log_det,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GeCurve {
    pub byte_idx: usize,
    pub grid: Vec<usize>,
    /// Mean rank of the true key byte at each grid count.
    pub ge: Vec<f64>,
}

impl GeCurve {
    /// GE = 1 at the largest trace count.
    pub fn success(&self) -> bool {
        self.ge.last() == Some(&1.0)
    }
}

/// Class log-likelihoods for every trace, `n_traces x 256`.
pub fn likelihood_table(templates: &TemplateSet, set: &TraceSet) -> Result<Array2<f64>, AttackError> {
    if templates.pois.iter().any(|&i| i >= set.n_samples()) {
        return Err(AttackError::ShapeMismatch);
    }
    let mut out = Array2::zeros((set.n_traces(), 256));
    for (t, row) in set.samples.rows().into_iter().enumerate() {
        let ll = templates.log_likelihoods(row);
        if ll.iter().any(|v| !v.is_finite()) {
            return Err(AttackError::NonFinite(t));
        }
        out.row_mut(t).assign(&ArrayView1::from(&ll));
    }
    Ok(out)
}

/// Guessing entropy from a precomputed likelihood table.
///
/// Every repetition draws the attack traces without replacement from the
/// whole set, reseeded from `seed` and the repetition number.
pub fn guessing_entropy(
    table: &Array2<f64>,
    set: &TraceSet,
    byte_idx: usize,
    repetitions: usize,
    grid: &[usize],
    seed: u64,
) -> Result<GeCurve, AttackError> {
    check_grid(grid, set.n_traces())?;
    let true_key = set.key[byte_idx] as usize;
    let mut rank_sum = vec![0.0; grid.len()];
    let mut order: Vec<usize> = (0..set.n_traces()).collect();
    let max_n = *grid.last().unwrap();
    for rep in 0..repetitions.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);
        order.shuffle(&mut rng);
        let mut scores = [0.0f64; 256];
        let mut g = 0;
        for (i, &t) in order[..max_n].iter().enumerate() {
            let p = set.plaintexts[t][byte_idx] as usize;
            let ll = table.row(t);
            for (k, s) in scores.iter_mut().enumerate() {
                *s += ll[p ^ k];
            }
            if i + 1 == grid[g] {
                rank_sum[g] += rank_of(&scores, true_key) as f64;
                g += 1;
            }
        }
    }
    let reps = repetitions.max(1) as f64;
    Ok(GeCurve {
        byte_idx,
        grid: grid.to_vec(),
        ge: rank_sum.into_iter().map(|r| r / reps).collect(),
    })
}

/// Template attack on one byte, reporting the guessing-entropy curve.
pub fn template_attack(
    templates: &TemplateSet,
    set: &TraceSet,
    byte_idx: usize,
    repetitions: usize,
    grid: &[usize],
    seed: u64,
) -> Result<GeCurve, AttackError> {
    let table = likelihood_table(templates, set)?;
    guessing_entropy(&table, set, byte_idx, repetitions, grid, seed)
}
