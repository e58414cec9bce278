//! Segmentation metrics: Dice, sensitivity, precision and the 95th-percentile
//! Hausdorff distance between mask boundaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::LabelMap;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn check_same(pred: &LabelMap, truth: &LabelMap) -> Result<()> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(Error::Shape {
            expected: vec![truth.height, truth.width],
            got: vec![pred.height, pred.width],
            context: "prediction vs truth",
        });
    }
    Ok(())
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap, class: u8) -> Result<Confusion> {
    check_same(pred, truth)?;
    Ok(confusion_masks(&pred.mask(class), &truth.mask(class)))
}

pub fn confusion_masks(pred: &[bool], truth: &[bool]) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    c
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `2TP / (2TP + FP + FN)`, one when both masks are empty.
pub fn dsc(c: &Confusion) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn sen(c: &Confusion) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

pub fn prc(c: &Confusion) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

/// Mask pixels with at least one 4-neighbour outside the mask (the image
/// border counts as outside).
pub fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let interior = y > 0
                && y + 1 < h
                && x > 0
                && x + 1 < w
                && mask[(y - 1) * w + x]
                && mask[(y + 1) * w + x]
                && mask[y * w + x - 1]
                && mask[y * w + x + 1];
            if !interior {
                out.push((y, x));
            }
        }
    }
    out
}

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let mut started = f[0].is_finite();
    for q in 1..n {
        if !f[q].is_finite() {
            continue;
        }
        if !started {
            v[0] = q;
            started = true;
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so k never underflows
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    if !started {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest seed.
pub fn squared_distance_transform(seeds: &[(usize, usize)], h: usize, w: usize) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; h * w];
    for &(y, x) in seeds {
        grid[y * w + x] = 0.0;
    }
    let n = h.max(w);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        edt_1d(&grid[y * w..(y + 1) * w], &mut row_out, &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

/// Nearest-rank percentile of unsorted values.
pub fn nearest_rank(values: &mut [f64], pct: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    // multiply first so whole-number percentiles stay exact
    let rank = (pct * values.len() as f64 / 100.0).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

fn directed_hd95(from: &[(usize, usize)], to_sq_dist: &[f64], w: usize) -> f64 {
    let mut d: Vec<f64> = from.iter().map(|&(y, x)| to_sq_dist[y * w + x].sqrt()).collect();
    nearest_rank(&mut d, 95.0)
}

/// HD95 in pixels, `None` when either mask is empty.
pub fn hd95(pred: &[bool], truth: &[bool], h: usize, w: usize) -> Result<Option<f64>> {
    if pred.len() != h * w || truth.len() != h * w {
        return Err(Error::Shape {
            expected: vec![h * w],
            got: vec![pred.len(), truth.len()],
            context: "hd95 masks",
        });
    }
    let bp = boundary(pred, h, w);
    let bt = boundary(truth, h, w);
    if bp.is_empty() || bt.is_empty() {
        return Ok(None);
    }
    let dt = squared_distance_transform(&bt, h, w);
    let dp = squared_distance_transform(&bp, h, w);
    Ok(Some(directed_hd95(&bp, &dt, w).max(directed_hd95(&bt, &dp, w))))
}

/// Metrics of one class on one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub confusion: Confusion,
    pub dsc: f64,
    pub sen: f64,
    pub prc: f64,
    pub hd95: Option<f64>,
}

pub fn class_metrics(pred: &LabelMap, truth: &LabelMap, class: u8) -> Result<ClassMetrics> {
    check_same(pred, truth)?;
    let (pm, tm) = (pred.mask(class), truth.mask(class));
    let c = confusion_masks(&pm, &tm);
    Ok(ClassMetrics {
        class,
        confusion: c,
        dsc: dsc(&c),
        sen: sen(&c),
        prc: prc(&c),
        hd95: hd95(&pm, &tm, truth.height, truth.width)?,
    })
}

/// Per-class metrics averaged over images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: u8,
    pub images: usize,
    pub dsc: f64,
    pub sen: f64,
    pub prc: f64,
    /// Mean over images where it is defined.
    pub hd95: Option<f64>,
    pub hd95_undefined: usize,
    pub confusion: Confusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Foreground classes `1..c`.
    pub classes: Vec<ClassSummary>,
    pub mean_dsc: f64,
    pub mean_sen: f64,
    pub mean_prc: f64,
    pub mean_hd95: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Evaluates foreground classes over paired prediction/truth maps.
pub fn evaluate(preds: &[LabelMap], truths: &[LabelMap], classes: usize) -> Result<MetricsReport> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::Shape {
            expected: vec![truths.len()],
            got: vec![preds.len()],
            context: "prediction count",
        });
    }
    let mut summaries = Vec::new();
    for class in 1..classes as u8 {
        let per: Vec<ClassMetrics> = preds
            .iter()
            .zip(truths)
            .map(|(p, t)| class_metrics(p, t, class))
            .collect::<Result<_>>()?;
        let mut total = Confusion::default();
        for m in &per {
            total.tp += m.confusion.tp;
            total.fp += m.confusion.fp;
            total.fn_ += m.confusion.fn_;
        }
        summaries.push(ClassSummary {
            class,
            images: per.len(),
            dsc: mean(per.iter().map(|m| m.dsc)).unwrap_or(0.0),
            sen: mean(per.iter().map(|m| m.sen)).unwrap_or(0.0),
            prc: mean(per.iter().map(|m| m.prc)).unwrap_or(0.0),
            hd95: mean(per.iter().filter_map(|m| m.hd95)),
            hd95_undefined: per.iter().filter(|m| m.hd95.is_none()).count(),
            confusion: total,
        });
    }
    Ok(MetricsReport {
        mean_dsc: mean(summaries.iter().map(|s| s.dsc)).unwrap_or(0.0),
        mean_sen: mean(summaries.iter().map(|s| s.sen)).unwrap_or(0.0),
        mean_prc: mean(summaries.iter().map(|s| s.prc)).unwrap_or(0.0),
        mean_hd95: mean(summaries.iter().filter_map(|s| s.hd95)),
        classes: summaries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run: String,
    pub arm: String,
    pub class: u8,
    pub dsc: f64,
    pub sen: f64,
    pub prc: f64,
    pub hd95: Option<f64>,
    pub hd95_undefined: usize,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MetricsReport {
    pub fn rows(&self, run: &str, arm: &str) -> Vec<MetricsRow> {
        self.classes
            .iter()
            .map(|s| MetricsRow {
                run: run.to_string(),
                arm: arm.to_string(),
                class: s.class,
                dsc: s.dsc,
                sen: s.sen,
                prc: s.prc,
                hd95: s.hd95,
                hd95_undefined: s.hd95_undefined,
                tp: s.confusion.tp,
                fp: s.confusion.fp,
                fn_: s.confusion.fn_,
            })
            .collect()
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Vec<bool> {
        let mut m = vec![false; h * w];
        for &(y, x) in on {
            m[y * w + x] = true;
        }
        m
    }

    #[test]
    fn hand_counted_confusion() {
        let truth = mask(3, 3, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        let pred = mask(3, 3, &[(0, 0), (0, 1)]);
        let c = confusion_masks(&pred, &truth);
        assert_eq!(c, Confusion { tp: 2, fp: 0, fn_: 2 });
        assert!((dsc(&c) - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(sen(&c), 0.5);
        assert_eq!(prc(&c), 1.0);
    }

    #[test]
    fn empty_masks_convention() {
        let e = mask(4, 4, &[]);
        assert_eq!(dsc(&confusion_masks(&e, &e)), 1.0);
        assert_eq!(hd95(&e, &e, 4, 4).unwrap(), None);
        let one = mask(4, 4, &[(1, 1)]);
        assert_eq!(hd95(&one, &e, 4, 4).unwrap(), None);
    }

    #[test]
    fn three_four_five() {
        let a = mask(6, 6, &[(0, 0)]);
        let b = mask(6, 6, &[(3, 4)]);
        assert_eq!(hd95(&a, &b, 6, 6).unwrap(), Some(5.0));
        assert_eq!(hd95(&a, &a, 6, 6).unwrap(), Some(0.0));
    }

    #[test]
    fn boundary_of_filled_square_is_its_ring() {
        let on: Vec<_> = (1..5).flat_map(|y| (1..5).map(move |x| (y, x))).collect();
        let b = boundary(&mask(6, 6, &on), 6, 6);
        assert_eq!(b.len(), 12);
    }

    #[test]
    fn distance_transform_row() {
        let d = squared_distance_transform(&[(0, 0), (0, 6)], 1, 7);
        assert_eq!(d, vec![0.0, 1.0, 4.0, 9.0, 4.0, 1.0, 0.0]);
    }

    #[test]
    fn nearest_rank_indexing() {
        let mut v: Vec<f64> = (1..=20).map(|x| x as f64).collect();
        assert_eq!(nearest_rank(&mut v, 95.0), 19.0);
        let mut one = vec![3.0];
        assert_eq!(nearest_rank(&mut one, 95.0), 3.0);
    }

    #[test]
    fn csv_round_trip() {
        let truth = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let pred = LabelMap::new(2, 2, vec![0, 1, 0, 0]).unwrap();
        let rep = evaluate(&[pred], &[truth], 2).unwrap();
        let rows = rep.rows("r0", "none");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &rows).unwrap();
        assert_eq!(read_metrics_csv(&p).unwrap(), rows);
    }
}
