//! Image-quality and statistics used to compare reconstructions: SSIM, PSNR,
//! RESI edge sharpness, Mann-Whitney U tests and median/IQR summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::phantom::LineSegment;
use crate::recon::Method;
use crate::tensor::RealImage;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch((usize, usize), (usize, usize)),
    #[error("image {0:?} is smaller than the {1}x{1} window")]
    TooSmall((usize, usize), usize),
    #[error("reference image has no positive dynamic range")]
    EmptyReference,
    #[error("invalid edge segment: {0}")]
    InvalidSegment(String),
    #[error("insufficient edge support: {0} points above the signal floor")]
    InsufficientEdgeSupport(usize),
    #[error("flat reference edge")]
    FlatReferenceEdge,
    #[error("empty sample")]
    Empty,
    #[error("bad report: {0}")]
    BadReport(String),
}

fn same_dims(a: &RealImage, b: &RealImage) -> Result<(), MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// `None` uses the reference maximum.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
        }
    }
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering.
fn filter_valid(data: &[f64], rows: usize, cols: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let w = taps.len();
    let (vr, vc) = (rows + 1 - w, cols + 1 - w);
    let mut tmp = vec![0.0; rows * vc];
    for r in 0..rows {
        for c in 0..vc {
            tmp[r * vc + c] = taps.iter().enumerate().map(|(i, t)| t * data[r * cols + c + i]).sum();
        }
    }
    let mut out = vec![0.0; vr * vc];
    for r in 0..vr {
        for c in 0..vc {
            out[r * vc + c] = taps.iter().enumerate().map(|(i, t)| t * tmp[(r + i) * vc + c]).sum();
        }
    }
    (out, vr, vc)
}

/// Mean local SSIM over all window positions fully inside the image.
pub fn ssim(test: &RealImage, reference: &RealImage, params: &SsimParams) -> Result<f64, MetricsError> {
    same_dims(test, reference)?;
    let (rows, cols) = reference.dims();
    if rows < params.window || cols < params.window {
        return Err(MetricsError::TooSmall((rows, cols), params.window));
    }
    let l = params.dynamic_range.unwrap_or_else(|| reference.max());
    if !(l > 0.0) {
        return Err(MetricsError::EmptyReference);
    }
    let (c1, c2) = ((params.k1 * l).powi(2), (params.k2 * l).powi(2));
    let taps = gaussian_taps(params.window, params.sigma);
    let (x, y) = (test.data(), reference.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..x.len()).map(f).collect::<Vec<f64>>();
    let (mx, ..) = filter_valid(x, rows, cols, &taps);
    let (my, ..) = filter_valid(y, rows, cols, &taps);
    let (mxx, ..) = filter_valid(&prod(&|i| x[i] * x[i]), rows, cols, &taps);
    let (myy, ..) = filter_valid(&prod(&|i| y[i] * y[i]), rows, cols, &taps);
    let (mxy, ..) = filter_valid(&prod(&|i| x[i] * y[i]), rows, cols, &taps);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let sx = mxx[i] - ux * ux;
            let sy = myy[i] - uy * uy;
            let sxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * sxy + c2))
                / ((ux * ux + uy * uy + c1) * (sx + sy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

pub fn mse(test: &RealImage, reference: &RealImage) -> Result<f64, MetricsError> {
    same_dims(test, reference)?;
    let n = test.data().len() as f64;
    Ok(test
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}

/// PSNR in dB with peak `L = max(reference)`; `f64::INFINITY` when the images
/// are identical.
pub fn psnr(test: &RealImage, reference: &RealImage) -> Result<f64, MetricsError> {
    psnr_with_peak(test, reference, reference.max())
}

pub fn psnr_with_peak(test: &RealImage, reference: &RealImage, peak: f64) -> Result<f64, MetricsError> {
    let m = mse(test, reference)?;
    if !(peak > 0.0) {
        return Err(MetricsError::EmptyReference);
    }
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub fn nrmse(test: &RealImage, reference: &RealImage) -> Result<f64, MetricsError> {
    let m = mse(test, reference)?;
    let e = reference.energy() / reference.data().len() as f64;
    if e == 0.0 {
        return Err(MetricsError::EmptyReference);
    }
    Ok((m / e).sqrt())
}

/// Linear-interpolation quantile (`(n - 1) q` position between order
/// statistics).
pub fn quantile(values: &[f64], q: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&v, q))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75));
    Ok(Summary {
        n: v.len(),
        median: quantile_sorted(&v, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        min: v[0],
        max: v[v.len() - 1],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_two_sided: f64,
}

/// Two-sided Mann-Whitney U test: midranks for ties, normal approximation
/// with tie-corrected variance and a 0.5 continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut all: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && all[j].0 == all[i].0 {
            j += 1;
        }
        let t = (j - i) as f64;
        let midrank = (i + j + 1) as f64 / 2.0;
        rank_sum_a += midrank * all[i..j].iter().filter(|x| x.1).count() as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let nf = n as f64;
    let var = n1 * n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if !(var > 0.0) {
        return Ok(MannWhitney { u, p_two_sided: 1.0 });
    }
    let z = ((u - n1 * n2 / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    let p = (2.0 * normal.sf(z)).min(1.0);
    Ok(MannWhitney { u, p_two_sided: p })
}

/// Line across a tissue boundary, sampled for RESI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSegment {
    /// (row, col) endpoints in pixel coordinates.
    pub p0: [f64; 2],
    pub p1: [f64; 2],
    pub samples_per_unit: f64,
    /// Absolute floor; `None` uses 5% of the image's 99th percentile.
    pub signal_floor: Option<f64>,
}

impl From<&LineSegment> for EdgeSegment {
    fn from(s: &LineSegment) -> Self {
        Self {
            p0: s.p0,
            p1: s.p1,
            samples_per_unit: 1.0,
            signal_floor: None,
        }
    }
}

impl EdgeSegment {
    pub fn length(&self) -> f64 {
        ((self.p1[0] - self.p0[0]).powi(2) + (self.p1[1] - self.p0[1]).powi(2)).sqrt()
    }

    pub fn reversed(&self) -> Self {
        Self {
            p0: self.p1,
            p1: self.p0,
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeProfile {
    /// (distance from p0, intensity)
    pub points: Vec<(f64, f64)>,
    /// Indices into `points` used for the slope fit.
    pub regression: Vec<usize>,
}

pub const DEFAULT_FLOOR_FRACTION: f64 = 0.05;

pub fn default_signal_floor(image: &RealImage) -> f64 {
    DEFAULT_FLOOR_FRACTION * quantile(image.data(), 0.99).unwrap_or(0.0)
}

/// Bilinear sample at fractional (row, col), clamped to the image.
pub fn bilinear(image: &RealImage, r: f64, c: f64) -> f64 {
    let (rows, cols) = image.dims();
    let r = r.clamp(0.0, (rows - 1) as f64);
    let c = c.clamp(0.0, (cols - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(rows - 1), (c0 + 1).min(cols - 1));
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    let top = image.get(r0, c0) * (1.0 - fc) + image.get(r0, c1) * fc;
    let bottom = image.get(r1, c0) * (1.0 - fc) + image.get(r1, c1) * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Samples at the centers of `ceil(length * samples_per_unit)` equal
/// sub-intervals; the fit uses the (up to) four above-floor samples nearest
/// the midpoint.
pub fn edge_profile(image: &RealImage, seg: &EdgeSegment) -> Result<EdgeProfile, MetricsError> {
    let len = seg.length();
    if len < 4.0 {
        return Err(MetricsError::InvalidSegment(format!("length {len:.3} < 4")));
    }
    let (rows, cols) = image.dims();
    let inside = |p: [f64; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (rows - 1) as f64 && p[1] <= (cols - 1) as f64;
    if !inside(seg.p0) || !inside(seg.p1) {
        return Err(MetricsError::InvalidSegment("endpoint out of bounds".into()));
    }
    if !(seg.samples_per_unit > 0.0) {
        return Err(MetricsError::InvalidSegment("samples_per_unit must be positive".into()));
    }
    let n = (len * seg.samples_per_unit).ceil().max(4.0) as usize;
    let points: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) / n as f64;
            let r = seg.p0[0] + t * (seg.p1[0] - seg.p0[0]);
            let c = seg.p0[1] + t * (seg.p1[1] - seg.p0[1]);
            (t * len, bilinear(image, r, c))
        })
        .collect();
    let floor = seg.signal_floor.unwrap_or_else(|| default_signal_floor(image));
    let mid = len / 2.0;
    let mut above: Vec<usize> = (0..n).filter(|&i| points[i].1 > floor).collect();
    if above.len() < 3 {
        return Err(MetricsError::InsufficientEdgeSupport(above.len()));
    }
    above.sort_by(|&i, &j| {
        (points[i].0 - mid)
            .abs()
            .total_cmp(&(points[j].0 - mid).abs())
            .then(i.cmp(&j))
    });
    above.truncate(4);
    above.sort_unstable();
    Ok(EdgeProfile { points, regression: above })
}

/// Intensity-weighted least-squares slope over the regression subset.
pub fn edge_slope(profile: &EdgeProfile) -> f64 {
    let pts: Vec<(f64, f64)> = profile.regression.iter().map(|&i| profile.points[i]).collect();
    let sw: f64 = pts.iter().map(|p| p.1).sum();
    let xm = pts.iter().map(|p| p.1 * p.0).sum::<f64>() / sw;
    let ym = pts.iter().map(|p| p.1 * p.1).sum::<f64>() / sw;
    let sxy: f64 = pts.iter().map(|p| p.1 * (p.0 - xm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| p.1 * (p.0 - xm).powi(2)).sum();
    sxy / sxx
}

/// Relative edge sharpness: |slope(test)| / |slope(reference)|.
pub fn resi(test: &RealImage, reference: &RealImage, seg: &EdgeSegment) -> Result<f64, MetricsError> {
    same_dims(test, reference)?;
    let s_ref = edge_slope(&edge_profile(reference, seg)?);
    if !(s_ref.abs() >= 1e-9) {
        return Err(MetricsError::FlatReferenceEdge);
    }
    let s_test = edge_slope(&edge_profile(test, seg)?);
    Ok(s_test.abs() / s_ref.abs())
}

/// One row of an evaluation: a reconstruction of one slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub subject: String,
    pub slice: usize,
    pub method: Method,
    pub ssim: f64,
    pub psnr_db: f64,
    pub resi: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ssim,
    Psnr,
    Resi,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ssim, Metric::Psnr, Metric::Resi];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::Psnr => "psnr_db",
            Metric::Resi => "resi",
        }
    }

    fn of(self, r: &EvalRecord) -> Option<f64> {
        let v = match self {
            Metric::Ssim => r.ssim,
            Metric::Psnr => r.psnr_db,
            Metric::Resi => r.resi?,
        };
        v.is_finite().then_some(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub metric: Metric,
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub a: Method,
    pub b: Method,
    pub u: f64,
    pub p_two_sided: f64,
}

/// Per-slice metric table with per-method summaries and pairwise tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub summaries: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

pub const CSV_HEADER: &str = "subject,slice,method,ssim,psnr_db,resi";

impl EvalReport {
    /// Records are sorted by (subject, slice, method); non-finite values are
    /// left out of summaries and tests.
    pub fn from_records(mut records: Vec<EvalRecord>) -> Result<Self, MetricsError> {
        records.sort_by(|x, y| (&x.subject, x.slice, x.method).cmp(&(&y.subject, y.slice, y.method)));
        let mut by: BTreeMap<(Metric, Method), Vec<f64>> = BTreeMap::new();
        for r in &records {
            for m in Metric::ALL {
                if let Some(v) = m.of(r) {
                    by.entry((m, r.method)).or_default().push(v);
                }
            }
        }
        let mut summaries = Vec::new();
        for (&(metric, method), v) in &by {
            summaries.push(MethodSummary {
                method,
                metric,
                summary: summarize(v)?,
            });
        }
        let mut comparisons = Vec::new();
        for metric in Metric::ALL {
            let methods: Vec<Method> = by.keys().filter(|k| k.0 == metric).map(|k| k.1).collect();
            for (i, &a) in methods.iter().enumerate() {
                for &b in &methods[i + 1..] {
                    let t = mann_whitney_u(&by[&(metric, a)], &by[&(metric, b)])?;
                    comparisons.push(Comparison {
                        metric,
                        a,
                        b,
                        u: t.u,
                        p_two_sided: t.p_two_sided,
                    });
                }
            }
        }
        Ok(Self {
            records,
            summaries,
            comparisons,
        })
    }

    pub fn values(&self, method: Method, metric: Metric) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| metric.of(r))
            .collect()
    }

    pub fn summary(&self, method: Method, metric: Metric) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.metric == metric)
            .map(|s| &s.summary)
    }

    /// Test result with `a` as the first sample, whichever order it was stored in.
    pub fn comparison(&self, metric: Metric, a: Method, b: Method) -> Option<MannWhitney> {
        self.comparisons.iter().find_map(|c| {
            if c.metric != metric {
                return None;
            }
            let n = (self.values(c.a, metric).len() * self.values(c.b, metric).len()) as f64;
            if (c.a, c.b) == (a, b) {
                Some(MannWhitney { u: c.u, p_two_sided: c.p_two_sided })
            } else if (c.a, c.b) == (b, a) {
                Some(MannWhitney { u: n - c.u, p_two_sided: c.p_two_sided })
            } else {
                None
            }
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let resi = r.resi.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.subject,
                r.slice,
                r.method.label(),
                fmt_f64(r.ssim),
                fmt_f64(r.psnr_db),
                resi
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(MetricsError::BadReport("unexpected header".into()));
        }
        let mut records = Vec::new();
        // Row numbers count the header as row 1.
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |l: &str| MetricsError::BadReport(format!("row {}: cannot parse {l:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            let num = |s: &str| parse_f64(s).ok_or_else(|| bad(line));
            records.push(EvalRecord {
                subject: f[0].to_string(),
                slice: f[1].parse().map_err(|_| bad(line))?,
                method: Method::from_label(f[2]).ok_or_else(|| bad(line))?,
                ssim: num(f[3])?,
                psnr_db: num(f[4])?,
                resi: if f[5].is_empty() { None } else { Some(num(f[5])?) },
            });
        }
        Self::from_records(records)
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rows: usize, cols: usize, seed: u64) -> RealImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealImage::from_fn(rows, cols, |_, _| rng.random_range(0.0..1.0))
    }

    /// Direct per-window evaluation with an explicit 2D window.
    fn ssim_direct(x: &RealImage, y: &RealImage, l: f64) -> f64 {
        let g: Vec<f64> = (0..11)
            .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
            .collect();
        let mut w = [[0.0; 11]; 11];
        let mut tot = 0.0;
        for a in 0..11 {
            for b in 0..11 {
                w[a][b] = g[a] * g[b];
                tot += w[a][b];
            }
        }
        let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
        let (rows, cols) = x.dims();
        let mut acc = 0.0;
        let mut count = 0;
        for r in 0..=rows - 11 {
            for c in 0..=cols - 11 {
                let (mut ux, mut uy) = (0.0, 0.0);
                for a in 0..11 {
                    for b in 0..11 {
                        ux += w[a][b] / tot * x.get(r + a, c + b);
                        uy += w[a][b] / tot * y.get(r + a, c + b);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for a in 0..11 {
                    for b in 0..11 {
                        let (dx, dy) = (x.get(r + a, c + b) - ux, y.get(r + a, c + b) - uy);
                        vx += w[a][b] / tot * dx * dx;
                        vy += w[a][b] / tot * dy * dy;
                        cxy += w[a][b] / tot * dx * dy;
                    }
                }
                acc += (2.0 * ux * uy + c1) * (2.0 * cxy + c2) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_identity_and_oracle() {
        let x = random_image(32, 32, 1);
        assert!((ssim(&x, &x, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-12);
        for seed in 0..4 {
            let a = random_image(32, 32, 10 + seed);
            let b = random_image(32, 32, 20 + seed);
            let fast = ssim(&a, &b, &SsimParams::default()).unwrap();
            let direct = ssim_direct(&a, &b, b.max());
            assert!((fast - direct).abs() < 1e-8, "{fast} vs {direct}");
        }
    }

    #[test]
    fn ssim_inverted_checkerboard_negative() {
        let x = RealImage::from_fn(24, 24, |r, c| ((r + c) % 2) as f64);
        let y = x.map(|v| 1.0 - v);
        let v = ssim(&y, &x, &SsimParams::default()).unwrap();
        assert!(v < 0.0);
        assert!((v - ssim_direct(&y, &x, 1.0)).abs() < 1e-10);
    }

    #[test]
    fn ssim_rejects_mismatch() {
        let a = random_image(16, 16, 1);
        let b = random_image(16, 12, 2);
        assert!(matches!(ssim(&a, &b, &SsimParams::default()), Err(MetricsError::DimMismatch(..))));
    }

    #[test]
    fn psnr_cases() {
        let reference = RealImage::from_fn(10, 10, |r, c| if r == 0 && c == 0 { 1.0 } else { 0.5 });
        let test = reference.map(|v| v + 0.1);
        assert!((psnr(&test, &reference).unwrap() - 20.0).abs() < 1e-10);
        assert_eq!(psnr(&reference, &reference).unwrap(), f64::INFINITY);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let levels = [0.01, 0.02, 0.05, 0.1, 0.2];
        let vals: Vec<f64> = levels
            .iter()
            .map(|&s| {
                let data = reference.data().iter().zip(&noise).map(|(v, n)| v + s * n).collect();
                psnr(&RealImage::from_vec(10, 10, data).unwrap(), &reference).unwrap()
            })
            .collect();
        assert!(vals.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn summary_cases() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.iqr, 1.5);
        assert_eq!(summarize(&[3.0; 7]).unwrap().iqr, 0.0);
        assert_eq!(summarize(&[]), Err(MetricsError::Empty));
    }

    /// p-value from all C(10,5) splits of the pooled sample.
    fn exact_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let u_of = |idx: &[usize]| -> f64 {
            let xa: Vec<f64> = idx.iter().map(|&i| pooled[i]).collect();
            let xb: Vec<f64> = (0..pooled.len()).filter(|i| !idx.contains(i)).map(|i| pooled[i]).collect();
            let mut u = 0.0;
            for x in &xa {
                for y in &xb {
                    u += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
                }
            }
            u
        };
        let mu = (a.len() * b.len()) as f64 / 2.0;
        let obs = (u_of(&[0, 1, 2, 3, 4]) - mu).abs();
        let (mut hits, mut total) = (0, 0);
        for m in 0u32..1024 {
            if m.count_ones() != 5 {
                continue;
            }
            let idx: Vec<usize> = (0..10).filter(|i| m & (1 << i) != 0).collect();
            total += 1;
            if (u_of(&idx) - mu).abs() >= obs - 1e-12 {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn mann_whitney_cases() {
        let t = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(t.u, 0.0);
        let same = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((same.p_two_sided - 1.0).abs() < 1e-12);
        assert_eq!(mann_whitney_u(&[2.0; 4], &[2.0; 3]).unwrap().p_two_sided, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let shift = rng.random_range(0.0..2.0);
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0) + shift).collect();
            let approx = mann_whitney_u(&a, &b).unwrap().p_two_sided;
            let exact = exact_p(&a, &b);
            assert!((approx - exact).abs() < 0.02, "{approx} vs {exact}");
        }
    }

    fn step_image(lo: f64, hi: f64) -> RealImage {
        RealImage::from_fn(32, 32, |_, c| if c < 16 { hi } else { lo })
    }

    fn horizontal(floor: Option<f64>) -> EdgeSegment {
        EdgeSegment {
            p0: [12.0, 12.0],
            p1: [12.0, 20.0],
            samples_per_unit: 1.0,
            signal_floor: floor,
        }
    }

    #[test]
    fn profile_of_constant_and_step() {
        let flat = RealImage::from_fn(32, 32, |_, _| 0.7);
        let p = edge_profile(&flat, &horizontal(None)).unwrap();
        assert!(p.points.iter().all(|q| (q.1 - 0.7).abs() < 1e-12));
        assert_eq!(edge_slope(&p).abs(), 0.0);

        // bilinear on a step between columns 15 and 16
        let img = step_image(0.2, 1.0);
        let seg = EdgeSegment { samples_per_unit: 0.5, ..horizontal(Some(0.0)) };
        let p = edge_profile(&img, &seg).unwrap();
        assert_eq!(p.points.len(), 4);
        for &(d, v) in &p.points {
            let c = 12.0 + d;
            let expect = if c <= 15.0 { 1.0 } else if c >= 16.0 { 0.2 } else { 1.0 - 0.8 * (c - 15.0) };
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_regression_subset() {
        let img = step_image(0.2, 1.0);
        let p = edge_profile(&img, &horizontal(None)).unwrap();
        assert_eq!(p.points.len(), 8);
        assert_eq!(p.regression, vec![2, 3, 4, 5]);
        let dark = RealImage::from_fn(32, 32, |_, c| if c < 14 { 1.0 } else { 0.0 });
        assert_eq!(
            edge_profile(&dark, &horizontal(None)),
            Err(MetricsError::InsufficientEdgeSupport(2))
        );
    }

    #[test]
    fn slope_reverses_with_segment() {
        let img = RealImage::from_fn(32, 32, |r, c| 0.3 + 0.05 * c as f64 + 0.01 * r as f64);
        let seg = horizontal(None);
        let a = edge_slope(&edge_profile(&img, &seg).unwrap());
        let b = edge_slope(&edge_profile(&img, &seg.reversed()).unwrap());
        assert!((a + b).abs() < 1e-12 && a.abs() > 0.0);
    }

    #[test]
    fn resi_cases() {
        let reference = step_image(0.2, 1.0);
        let seg = horizontal(None);
        assert!((resi(&reference, &reference, &seg).unwrap() - 1.0).abs() < 1e-12);

        let taps = gaussian_taps(7, 1.5);
        let blurred = RealImage::from_fn(32, 32, |r, c| {
            (0..7)
                .map(|i| {
                    let cc = (c as isize + i as isize - 3).clamp(0, 31) as usize;
                    taps[i] * reference.get(r, cc)
                })
                .sum()
        });
        assert!(resi(&blurred, &reference, &seg).unwrap() < 1.0);

        // collinear ramp: weights do not affect the slope, so an offset is allowed
        let ramp = RealImage::from_fn(32, 32, |_, c| 0.2 + 0.03 * c as f64);
        let seg = horizontal(Some(0.0));
        let scaled = ramp.map(|v| 2.5 * v + 0.4);
        assert!((resi(&scaled, &ramp, &seg).unwrap() - 2.5).abs() < 1e-10);
        let scaled = reference.map(|v| 3.0 * v);
        assert!((resi(&scaled, &reference, &seg).unwrap() - 3.0).abs() < 1e-10);

        let flat = RealImage::from_fn(32, 32, |_, _| 1.0);
        assert_eq!(resi(&flat, &flat, &seg), Err(MetricsError::FlatReferenceEdge));
    }

    #[test]
    fn report_roundtrip_and_order() {
        let mut records = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for slice in (0..4).rev() {
            for method in [Method::CrVr, Method::DlVr, Method::Reference] {
                records.push(EvalRecord {
                    subject: "s01".into(),
                    slice,
                    method,
                    ssim: rng.random_range(0.8..1.0),
                    psnr_db: if method == Method::Reference { f64::INFINITY } else { rng.random_range(20.0..40.0) },
                    resi: (slice != 2).then(|| rng.random_range(0.5..1.2)),
                });
            }
        }
        let report = EvalReport::from_records(records).unwrap();
        assert_eq!(report.records[0].slice, 0);
        assert_eq!(report.records[0].method, Method::Reference);
        assert!(report.summary(Method::Reference, Metric::Psnr).is_none());
        assert_eq!(report.values(Method::DlVr, Metric::Resi).len(), 3);
        let ab = report.comparison(Metric::Ssim, Method::DlVr, Method::CrVr).unwrap();
        let ba = report.comparison(Metric::Ssim, Method::CrVr, Method::DlVr).unwrap();
        assert_eq!(ab.u + ba.u, 16.0);
        let csv = report.to_csv();
        assert!(csv.contains(",inf,"));
        assert_eq!(EvalReport::from_csv(&csv).unwrap(), report);
    }

    #[test]
    fn malformed_csv_names_row() {
        let text = format!("{CSV_HEADER}\nsub-000,0,CR_VR,0.9,30,1.0\nsub-000,1,CR_VR,x,30,\n");
        let err = EvalReport::from_csv(&text).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        assert!(EvalReport::from_csv("a,b\n").is_err());
    }
}
