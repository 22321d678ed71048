//! Max-F1 over thresholds, robustness under random transforms and
//! prediction consistency.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{self, DecoderConfig};
use crate::encoder::PatchTokens;
use crate::error::{Error, Result};
use crate::gridmath::{rotate90, rotate_bilinear, RotationAngle};
use crate::heatmap::Heatmap;
use crate::model::Model;
use crate::params::ParamSet;
use crate::synthdata::{rasterize_gt, Annotation, GeoTransform, GtStyle, Sample, Task};
use crate::tensor::{Scalar, Tensor};

/// `0.01, 0.02, …, 0.99`.
pub fn default_taus() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct F1Options {
    pub taus: Vec<f64>,
    /// Matching tolerance radius in pixels; 0 is exact-pixel matching.
    pub rho: f64,
    /// Average per-image curves instead of pooling all pixels.
    pub macro_average: bool,
}

impl Default for F1Options {
    fn default() -> Self {
        Self { taus: default_taus(), rho: 0.0, macro_average: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Result {
    pub f1: f64,
    pub tau: f64,
    pub curve: Vec<PrPoint>,
    /// Per-image F1 at the chosen threshold.
    pub per_image: Vec<f64>,
}

/// Threshold-indexed counts for one image. Index `i` counts pixels whose
/// score clears `taus[i]`.
#[derive(Clone, Debug, Default)]
struct Counts {
    /// Predicted positives.
    predicted: Vec<u64>,
    /// Predicted positives that match a ground-truth pixel.
    matched_pred: Vec<u64>,
    /// Ground-truth pixels matched by some prediction.
    matched_gt: Vec<u64>,
    gt: u64,
}

impl Counts {
    fn new(n: usize) -> Self {
        Self { predicted: vec![0; n], matched_pred: vec![0; n], matched_gt: vec![0; n], gt: 0 }
    }

    fn add(&mut self, o: &Counts) {
        for (a, b) in [(&mut self.predicted, &o.predicted), (&mut self.matched_pred, &o.matched_pred), (&mut self.matched_gt, &o.matched_gt)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.gt += o.gt;
    }

    fn point(&self, i: usize, tau: f64) -> PrPoint {
        let precision = if self.predicted[i] == 0 { 0.0 } else { self.matched_pred[i] as f64 / self.predicted[i] as f64 };
        let recall = if self.gt == 0 { 0.0 } else { self.matched_gt[i] as f64 / self.gt as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        PrPoint { tau, precision, recall, f1 }
    }
}

/// Offsets within distance `rho`.
fn disk(rho: f64) -> Vec<(isize, isize)> {
    let r = rho.floor() as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= rho * rho {
                v.push((dy, dx));
            }
        }
    }
    v
}

/// Number of thresholds in the ascending `taus` that `p` clears (`p ≥ τ`).
fn cleared(taus: &[f64], p: f64) -> usize {
    taus.partition_point(|&t| t <= p)
}

fn image_counts<T: Scalar>(pred: &Heatmap<T>, gt: &Heatmap<T>, taus: &[f64], offsets: &[(isize, isize)]) -> Counts {
    let (h, w) = (pred.height(), pred.width());
    let (p, g) = (pred.scores().data(), gt.scores().data());
    let n = taus.len();
    // histograms by number of thresholds cleared, then suffix sums
    let mut hist = [vec![0u64; n + 1], vec![0u64; n + 1], vec![0u64; n + 1]];
    let mut gt_count = 0;
    let neighbors = |r: usize, c: usize| {
        offsets.iter().filter_map(move |&(dy, dx)| {
            let (rr, cc) = (r as isize + dy, c as isize + dx);
            (rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w).then(|| rr as usize * w + cc as usize)
        })
    };
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let k = cleared(taus, p[i].to_f64());
            hist[0][k] += 1;
            if neighbors(r, c).any(|j| g[j] > T::zero()) {
                hist[1][k] += 1;
            }
            if g[i] > T::zero() {
                gt_count += 1;
                let best = neighbors(r, c).map(|j| p[j].to_f64()).fold(f64::NEG_INFINITY, f64::max);
                hist[2][cleared(taus, best)] += 1;
            }
        }
    }
    let suffix = |hst: &Vec<u64>| {
        // pixels clearing threshold i are those with k ≥ i + 1
        let mut out = vec![0u64; n];
        let mut acc = 0;
        for i in (0..n).rev() {
            acc += hst[i + 1];
            out[i] = acc;
        }
        out
    };
    Counts { predicted: suffix(&hist[0]), matched_pred: suffix(&hist[1]), matched_gt: suffix(&hist[2]), gt: gt_count }
}

/// Best threshold: highest F1, ties broken towards 0.5.
fn best(curve: &[PrPoint]) -> (f64, f64) {
    let mut pick = curve[0];
    for p in &curve[1..] {
        if p.f1 > pick.f1 || (p.f1 == pick.f1 && (p.tau - 0.5).abs() < (pick.tau - 0.5).abs()) {
            pick = *p;
        }
    }
    (pick.f1, pick.tau)
}

/// Maximum F1 over `opts.taus` for a split of predictions and binary ground truths.
pub fn f1_max<T: Scalar>(preds: &[Heatmap<T>], gts: &[Heatmap<T>], opts: &F1Options) -> Result<F1Result> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Eval(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    let mut taus = opts.taus.clone();
    if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::config("thresholds must lie in (0, 1)"));
    }
    taus.sort_by(|a, b| a.total_cmp(b));
    taus.dedup();
    if !(opts.rho >= 0.0) {
        return Err(Error::config("tolerance radius must be non-negative"));
    }
    let offsets = disk(opts.rho);
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.scores().shape() != g.scores().shape() {
            return Err(Error::shape(format!("image {i}: prediction {:?} vs ground truth {:?}", p.scores().shape(), g.scores().shape())));
        }
        if !g.is_binary() {
            return Err(Error::Eval(format!("image {i}: ground truth is not binary")));
        }
    }
    // per-image counts in parallel; the reduction below runs in index order
    let per: Vec<Counts> = preds.par_iter().zip(gts).map(|(p, g)| image_counts(p, g, &taus, &offsets)).collect();
    let mut total = Counts::new(taus.len());
    per.iter().for_each(|c| total.add(c));
    if total.gt == 0 {
        return Err(Error::Eval("the split has no positive ground-truth pixels, recall is undefined".into()));
    }
    let curve: Vec<PrPoint> = if opts.macro_average {
        let scored: Vec<&Counts> = per.iter().filter(|c| c.gt > 0).collect();
        if scored.len() < per.len() {
            log::warn!("macro F1 skips {} images without ground truth", per.len() - scored.len());
        }
        taus.iter()
            .enumerate()
            .map(|(i, &tau)| {
                let pts: Vec<PrPoint> = scored.iter().map(|c| c.point(i, tau)).collect();
                let k = pts.len() as f64;
                PrPoint {
                    tau,
                    precision: pts.iter().map(|p| p.precision).sum::<f64>() / k,
                    recall: pts.iter().map(|p| p.recall).sum::<f64>() / k,
                    f1: pts.iter().map(|p| p.f1).sum::<f64>() / k,
                }
            })
            .collect()
    } else {
        taus.iter().enumerate().map(|(i, &tau)| total.point(i, tau)).collect()
    };
    let (f1, tau) = best(&curve);
    let ti = taus.iter().position(|&t| t == tau).expect("tau from grid");
    let per_image = per.iter().map(|c| c.point(ti, tau).f1).collect();
    Ok(F1Result { f1, tau, curve, per_image })
}

/// Per-pixel binary cross-entropy `−mean[p log q + (1−p) log(1−q)]`, both clamped to `[ε, 1−ε]`.
pub fn cross_entropy<T: Scalar>(p: &Heatmap<T>, q: &Heatmap<T>, eps: f64) -> Result<f64> {
    if p.scores().shape() != q.scores().shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", p.scores().shape(), q.scores().shape())));
    }
    let n = p.scores().len() as f64;
    Ok(p.scores()
        .data()
        .iter()
        .zip(q.scores().data())
        .map(|(&a, &b)| {
            let (a, b) = (a.to_f64().clamp(eps, 1.0 - eps), b.to_f64().clamp(eps, 1.0 - eps));
            -(a * b.ln() + (1.0 - a) * (1.0 - b).ln())
        })
        .sum::<f64>()
        / n)
}

/// Mean per-pixel binary entropy, the floor of [`cross_entropy`] for fixed `p`.
pub fn binary_entropy<T: Scalar>(p: &Heatmap<T>, eps: f64) -> f64 {
    cross_entropy(p, p, eps).expect("same shape")
}

pub const CONSISTENCY_EPS: f64 = 1e-7;

/// A transform family sampled per image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TransformFamily {
    /// Uniform angle in `[min, max]` degrees.
    Rotation { min: f64, max: f64 },
    /// Uniform multiple of 90°.
    Quarter,
    /// Horizontal mirror with probability 1/2.
    Flip,
}

impl TransformFamily {
    pub fn default_rotation() -> Self {
        TransformFamily::Rotation { min: -45.0, max: 45.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Transform {
        match *self {
            TransformFamily::Rotation { min, max } => {
                let deg = if min == max { min } else { rng.random_range(min..=max) };
                if deg == 0.0 {
                    Transform::Identity
                } else {
                    Transform::Rotate(RotationAngle::degrees(deg))
                }
            }
            TransformFamily::Quarter => match rng.random_range(0..4i64) {
                0 => Transform::Identity,
                k => Transform::Rotate(RotationAngle::quarter_turns(k)),
            },
            TransformFamily::Flip => {
                if rng.random_bool(0.5) {
                    Transform::Flip
                } else {
                    Transform::Identity
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    Identity,
    Rotate(RotationAngle),
    Flip,
}

impl Transform {
    /// Applies the transform to every `H×W` plane (zero padding).
    pub fn apply_grid<T: Scalar>(&self, g: &Tensor<T>) -> Result<Tensor<T>> {
        match *self {
            Transform::Identity => Ok(g.clone()),
            Transform::Rotate(a) => match a.exact_quarter_turns() {
                Some(k) if g.shape()[g.rank() - 1] == g.shape()[g.rank() - 2] => rotate90(g, k as i64),
                _ => rotate_bilinear(g, a, T::zero()),
            },
            Transform::Flip => {
                let (_, _, w) = g.planes()?;
                Ok(Tensor::from_fn(g.shape(), |i| g.data()[i - i % w + (w - 1 - i % w)]))
            }
        }
    }

    pub fn apply_heatmap<T: Scalar>(&self, m: &Heatmap<T>) -> Result<Heatmap<T>> {
        Heatmap::new(self.apply_grid(m.scores())?.map(|v| v.max(T::zero()).min(T::one())))
    }

    pub fn apply_annotation(&self, a: &Annotation, h: usize, w: usize) -> Annotation {
        match *self {
            Transform::Identity => a.clone(),
            Transform::Rotate(r) => a.transformed(GeoTransform::Rotate(r), h, w),
            Transform::Flip => a.transformed(GeoTransform::FlipHorizontal, h, w),
        }
    }
}

/// Something a predictor can run on and that transforms like an image.
pub trait EvalInput: Sized {
    fn size(&self) -> (usize, usize);
    fn transformed(&self, t: &Transform) -> Result<Self>;
}

impl EvalInput for Tensor<f32> {
    fn size(&self) -> (usize, usize) {
        (self.shape()[1], self.shape()[2])
    }

    fn transformed(&self, t: &Transform) -> Result<Self> {
        t.apply_grid(self)
    }
}

/// Token grids transform by permuting tokens, which only exists for quarter turns.
impl<T: Scalar> EvalInput for PatchTokens<T> {
    fn size(&self) -> (usize, usize) {
        self.image_size
    }

    fn transformed(&self, t: &Transform) -> Result<Self> {
        match t {
            Transform::Identity => Ok(self.clone()),
            Transform::Rotate(a) => match a.exact_quarter_turns() {
                Some(k) => Ok(decoder::token_rotate(self, k as i64)),
                None => Err(Error::config("token grids only support quarter-turn transforms")),
            },
            Transform::Flip => Err(Error::config("token grids do not support flips")),
        }
    }
}

pub trait Predictor<I, T: Scalar> {
    fn predict(&self, input: &I) -> Result<Heatmap<T>>;
}

impl Predictor<Tensor, f32> for Model {
    fn predict(&self, input: &Tensor) -> Result<Heatmap> {
        Model::predict(self, input)
    }
}

/// The decoder alone on token grids.
pub struct TokenDecoder<'a, T: Scalar> {
    pub text: Tensor<T>,
    pub params: &'a ParamSet<T>,
    pub cfg: &'a DecoderConfig,
}

impl<T: Scalar> Predictor<PatchTokens<T>, T> for TokenDecoder<'_, T> {
    fn predict(&self, input: &PatchTokens<T>) -> Result<Heatmap<T>> {
        Heatmap::new(decoder::decode_logits(input, &self.text, self.params, self.cfg)?.map(crate::autodiff::ops::sigmoid))
    }
}

/// One evaluation item: an input plus its symmetry annotation.
pub struct EvalItem<I> {
    pub input: I,
    pub annotation: Annotation,
}

impl EvalItem<Tensor> {
    pub fn from_samples(samples: &[Sample]) -> Vec<Self> {
        samples.iter().map(|s| EvalItem { input: s.image.clone(), annotation: s.annotation.clone() }).collect()
    }
}

fn item_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e7a_1_5eed);
    rng.set_stream(index as u64);
    rng
}

fn gt_for<I: EvalInput, T: Scalar>(item: &EvalItem<I>, ann: &Annotation, task: Task, style: &GtStyle) -> Result<Heatmap<T>> {
    let (h, w) = item.input.size();
    Ok(rasterize_gt(ann, h, w, task, style)?.cast())
}

/// Predictions and ground truths of an untransformed split.
pub fn predict_split<I: EvalInput, T: Scalar, P: Predictor<I, T>>(model: &P, items: &[EvalItem<I>], task: Task, style: &GtStyle) -> Result<(Vec<Heatmap<T>>, Vec<Heatmap<T>>)> {
    let mut preds = Vec::with_capacity(items.len());
    let mut gts = Vec::with_capacity(items.len());
    for it in items {
        preds.push(model.predict(&it.input)?);
        gts.push(gt_for(it, &it.annotation, task, style)?);
    }
    Ok((preds, gts))
}

/// F1 on a copy of the split where every image and its annotation went
/// through one transform sampled from `family` with a per-image seed.
pub fn robustness<I: EvalInput, T: Scalar, P: Predictor<I, T>>(model: &P, items: &[EvalItem<I>], family: TransformFamily, seed: u64, task: Task, style: &GtStyle, opts: &F1Options) -> Result<F1Result> {
    if items.is_empty() {
        return Err(Error::Eval("robustness needs a nonempty split".into()));
    }
    let mut preds = Vec::with_capacity(items.len());
    let mut gts = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let t = family.sample(&mut item_rng(seed, i));
        let (h, w) = it.input.size();
        preds.push(model.predict(&it.input.transformed(&t)?)?);
        gts.push(rasterize_gt(&t.apply_annotation(&it.annotation, h, w), h, w, task, style)?.cast());
    }
    f1_max(&preds, &gts, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    /// Mean cross-entropy over images and sampled transforms.
    pub mean: f64,
    /// Per image: mean of `CE(p, q) − H(p)` over its samples.
    pub gaps: Vec<f64>,
}

/// Cross-entropy between transformed predictions `T(Ŝ_I)` and predictions
/// on transformed inputs `Ŝ_{T(I)}`, `samples` transforms per image.
pub fn consistency<I: EvalInput, T: Scalar, P: Predictor<I, T>>(model: &P, items: &[EvalItem<I>], family: TransformFamily, samples: usize, seed: u64) -> Result<ConsistencyResult> {
    if items.is_empty() || samples == 0 {
        return Err(Error::Eval("consistency needs a nonempty split and at least one sample".into()));
    }
    let mut total = 0.0;
    let mut gaps = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let base = model.predict(&it.input)?;
        let mut rng = item_rng(seed, i);
        let mut gap = 0.0;
        for _ in 0..samples {
            let t = family.sample(&mut rng);
            let p = t.apply_heatmap(&base)?;
            let q = model.predict(&it.input.transformed(&t)?)?;
            let ce = cross_entropy(&p, &q, CONSISTENCY_EPS)?;
            total += ce;
            gap += ce - binary_entropy(&p, CONSISTENCY_EPS);
        }
        gaps.push(gap / samples as f64);
    }
    Ok(ConsistencyResult { mean: total / (items.len() * samples) as f64, gaps })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1: f64,
    pub tau: f64,
    pub curve: Vec<PrPoint>,
    pub robustness: Option<f64>,
    pub consistency: Option<f64>,
    pub per_image: Vec<f64>,
}

impl EvalReport {
    pub fn new(base: F1Result) -> Self {
        Self { f1: base.f1, tau: base.tau, curve: base.curve, robustness: None, consistency: None, per_image: base.per_image }
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "f1: {:.6}", self.f1);
        let _ = writeln!(s, "tau: {:.2}", self.tau);
        if let Some(r) = self.robustness {
            let _ = writeln!(s, "robustness_f1: {r:.6}");
        }
        if let Some(c) = self.consistency {
            let _ = writeln!(s, "consistency: {c:.6}");
        }
        let _ = writeln!(s, "images: {}", self.per_image.len());
        s
    }

    pub fn curve_csv(&self) -> String {
        let mut s = String::from("tau,precision,recall,f1\n");
        for p in &self.curve {
            let _ = writeln!(s, "{},{},{},{}", p.tau, p.precision, p.recall, p.f1);
        }
        s
    }

    /// Writes `report.txt`, `report.json` and `pr_curve.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format { field: "report", detail: e.to_string() })?;
        for (name, body) in [("report.txt", self.to_text()), ("report.json", json + "\n"), ("pr_curve.csv", self.curve_csv())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
