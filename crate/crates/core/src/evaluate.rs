//! Pixel-wise segmentation metrics and MCC-driven threshold selection.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imgio::BinaryMask;
use crate::respond::ResponseMap;

/// Number of thresholds on the selection grid `{0.00, 0.01, ..., 1.00}`.
pub const GRID_LEN: usize = 101;

/// The `k`-th threshold of the selection grid.
#[inline]
pub fn grid_threshold(k: usize) -> f64 {
    k as f64 / 100.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSet {
    pub tpr: f64,
    pub fpr: f64,
    pub se: f64,
    pub sp: f64,
    pub acc: f64,
    pub mcc: f64,
}

impl MetricSet {
    /// Arithmetic mean of each field.
    pub fn mean(sets: &[MetricSet]) -> MetricSet {
        if sets.is_empty() {
            return MetricSet::default();
        }
        let n = sets.len() as f64;
        let sum = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / n;
        MetricSet {
            tpr: sum(|m| m.tpr),
            fpr: sum(|m| m.fpr),
            se: sum(|m| m.se),
            sp: sum(|m| m.sp),
            acc: sum(|m| m.acc),
            mcc: sum(|m| m.mcc),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `resp >= t` per pixel.
pub fn threshold(resp: &ResponseMap, t: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Parameter(format!("threshold {t} outside [0, 1]")));
    }
    let img = &resp.image;
    BinaryMask::new(
        img.width(),
        img.height(),
        img.pixels().iter().map(|&v| v >= t).collect(),
    )
}

fn check_dims(w: usize, h: usize, gt: &BinaryMask, mask: Option<&BinaryMask>) -> Result<()> {
    if gt.width() != w || gt.height() != h {
        return Err(Error::Size(format!(
            "ground truth {}x{} vs {w}x{h}",
            gt.width(),
            gt.height()
        )));
    }
    if let Some(m) = mask {
        if m.width() != w || m.height() != h {
            return Err(Error::Size(format!(
                "mask {}x{} vs {w}x{h}",
                m.width(),
                m.height()
            )));
        }
    }
    Ok(())
}

/// Tallies predictions against ground truth over the pixels where `mask`
/// is set (all pixels when absent). Ground-truth `true` is the positive
/// class.
pub fn confusion(
    seg: &BinaryMask,
    gt: &BinaryMask,
    mask: Option<&BinaryMask>,
) -> Result<ConfusionCounts> {
    check_dims(seg.width(), seg.height(), gt, mask)?;
    let mut c = ConfusionCounts::default();
    for i in 0..seg.bits().len() {
        if mask.is_some_and(|m| !m.bits()[i]) {
            continue;
        }
        match (seg.bits()[i], gt.bits()[i]) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// TPR, FPR, Se, Sp, Acc and MCC. Zero denominators give 0, and MCC is 0
/// whenever the prevalence or the predicted-positive rate is 0 or 1.
pub fn metrics(c: &ConfusionCounts) -> Result<MetricSet> {
    let n = c.total();
    if n == 0 {
        return Err(Error::Parameter("no evaluated pixels".into()));
    }
    let nf = n as f64;
    let se = ratio(c.tp, c.tp + c.fn_);
    let sp = ratio(c.tn, c.tn + c.fp);
    let fpr = ratio(c.fp, c.fp + c.tn);
    let acc = (c.tp + c.tn) as f64 / nf;
    let s = (c.tp + c.fn_) as f64 / nf;
    let p = (c.tp + c.fp) as f64 / nf;
    let positives = c.tp + c.fn_;
    let predicted = c.tp + c.fp;
    let mcc = if positives == 0 || positives == n || predicted == 0 || predicted == n {
        0.0
    } else {
        let v = (c.tp as f64 / nf - s * p) / (p * s * (1.0 - s) * (1.0 - p)).sqrt();
        v.clamp(-1.0, 1.0)
    };
    Ok(MetricSet {
        tpr: se,
        fpr,
        se,
        sp,
        acc,
        mcc,
    })
}

/// Confusion counts at every grid threshold, from a single pass over the
/// pixels.
pub fn threshold_sweep(
    resp: &ResponseMap,
    gt: &BinaryMask,
    mask: Option<&BinaryMask>,
) -> Result<[ConfusionCounts; GRID_LEN]> {
    let img = &resp.image;
    check_dims(img.width(), img.height(), gt, mask)?;
    // hist[k]: pixels whose highest satisfied grid threshold is k
    let mut pos = [0u64; GRID_LEN + 1];
    let mut neg = [0u64; GRID_LEN + 1];
    for (i, &v) in img.pixels().iter().enumerate() {
        if mask.is_some_and(|m| !m.bits()[i]) {
            continue;
        }
        let bucket = grid_bucket(v);
        if gt.bits()[i] {
            pos[bucket] += 1;
        } else {
            neg[bucket] += 1;
        }
    }
    // bucket 0 holds values below every threshold; bucket k+1 holds values
    // with v >= t_k but v < t_{k+1}
    let total_pos: u64 = pos.iter().sum();
    let total_neg: u64 = neg.iter().sum();
    let mut out = [ConfusionCounts::default(); GRID_LEN];
    let mut below_pos = 0;
    let mut below_neg = 0;
    for (k, c) in out.iter_mut().enumerate() {
        below_pos += pos[k];
        below_neg += neg[k];
        *c = ConfusionCounts {
            tp: total_pos - below_pos,
            fn_: below_pos,
            fp: total_neg - below_neg,
            tn: below_neg,
        };
    }
    Ok(out)
}

/// Number of grid thresholds `t_k` with `t_k <= v`.
fn grid_bucket(v: f64) -> usize {
    if v.is_nan() || v < 0.0 {
        return 0;
    }
    let mut k = ((v * 100.0).floor() as usize).min(GRID_LEN - 1);
    while k + 1 < GRID_LEN && grid_threshold(k + 1) <= v {
        k += 1;
    }
    while k > 0 && grid_threshold(k) > v {
        k -= 1;
    }
    if grid_threshold(k) <= v {
        k + 1
    } else {
        0
    }
}

/// Index of the largest value, first one on ties.
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Threshold on the grid that maximizes MCC for one image (smallest on ties).
pub fn best_threshold_per_image(
    resp: &ResponseMap,
    gt: &BinaryMask,
    mask: Option<&BinaryMask>,
) -> Result<(f64, MetricSet)> {
    best_from_sweep(&threshold_sweep(resp, gt, mask)?)
}

/// MCC-maximizing grid threshold of a precomputed sweep.
pub fn best_from_sweep(sweep: &[ConfusionCounts; GRID_LEN]) -> Result<(f64, MetricSet)> {
    let ms = sweep.iter().map(metrics).collect::<Result<Vec<_>>>()?;
    let mccs: Vec<f64> = ms.iter().map(|m| m.mcc).collect();
    let k = argmax_first(&mccs);
    Ok((grid_threshold(k), ms[k]))
}

/// Result of selecting one threshold for a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSelection {
    pub threshold: f64,
    pub per_image: Vec<MetricSet>,
    pub mean: MetricSet,
}

/// Single grid threshold maximizing the mean MCC over precomputed sweeps.
pub fn select_dataset_threshold(
    sweeps: &[[ConfusionCounts; GRID_LEN]],
) -> Result<DatasetSelection> {
    if sweeps.is_empty() {
        return Err(Error::Parameter("empty dataset".into()));
    }
    let per_t: Vec<Vec<MetricSet>> = (0..GRID_LEN)
        .map(|k| {
            sweeps
                .iter()
                .map(|s| metrics(&s[k]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mean_mcc: Vec<f64> = per_t
        .iter()
        .map(|ms| ms.iter().map(|m| m.mcc).sum::<f64>() / ms.len() as f64)
        .collect();
    let k = argmax_first(&mean_mcc);
    let per_image = per_t.into_iter().nth(k).unwrap_or_default();
    Ok(DatasetSelection {
        threshold: grid_threshold(k),
        mean: MetricSet::mean(&per_image),
        per_image,
    })
}

/// One evaluation item: response, ground truth and optional field-of-view mask.
pub type EvalItem<'a> = (&'a ResponseMap, &'a BinaryMask, Option<&'a BinaryMask>);

pub fn best_threshold_per_dataset(items: &[EvalItem<'_>]) -> Result<DatasetSelection> {
    if items.is_empty() {
        return Err(Error::Parameter("empty dataset".into()));
    }
    let sweeps = items
        .iter()
        .map(|(r, g, m)| threshold_sweep(r, g, *m))
        .collect::<Result<Vec<_>>>()?;
    select_dataset_threshold(&sweeps)
}

pub const CSV_HEADER: &str = "image,threshold,tpr,fpr,se,sp,acc,mcc";

/// One CSV record (without trailing newline) in the `CSV_HEADER` layout.
pub fn csv_row(image: &str, t: f64, m: &MetricSet) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{image},{t:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        m.tpr, m.fpr, m.se, m.sp, m.acc, m.mcc
    );
    s
}
