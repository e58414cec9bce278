//! Segmentation losses on per-pixel logits `[n, c, H, W]` with analytic gradients.
//!
//! Each loss is a per-sample quantity `l_i`; the batch value is
//! `(1/n) * sum_i w_i * l_i`. Unit weights reproduce the unweighted loss
//! exactly. Accumulation is done in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smoothing constant in numerator and denominator of the soft Dice score.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Ce,
    SoftDice,
    /// Unweighted sum of cross-entropy and soft Dice.
    CeDice,
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// `(1/n) * sum_i w_i * l_i`
    pub value: f64,
    /// Unweighted per-sample losses `l_i`.
    pub per_sample: Vec<f64>,
    /// Gradient of `value` w.r.t. the logits.
    pub grad: Tensor,
}

struct Dims {
    n: usize,
    c: usize,
    plane: usize,
}

fn dims(logits: &Tensor, labels: &[u8]) -> Result<Dims> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::Shape {
            expected: vec![0, 0, 0, 0],
            got: s.to_vec(),
            context: "logits [n, c, H, W]",
        });
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    if labels.len() != n * plane {
        return Err(Error::Shape {
            expected: vec![n, s[2], s[3]],
            got: vec![labels.len()],
            context: "labels [n, H, W]",
        });
    }
    let bad: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &v)| v as usize >= c)
        .map(|(i, _)| i)
        .take(16)
        .collect();
    if !bad.is_empty() {
        return Err(Error::LabelRange { classes: c, indices: bad });
    }
    Ok(Dims { n, c, plane })
}

fn check_weights(weights: Option<&[f64]>, n: usize) -> Result<()> {
    match weights {
        Some(w) if w.len() != n => Err(Error::Shape {
            expected: vec![n],
            got: vec![w.len()],
            context: "sample weights",
        }),
        _ => Ok(()),
    }
}

/// Softmax probabilities of sample `i` into `probs` (`[c, plane]`, f64).
fn softmax_sample(logits: &[f32], d: &Dims, i: usize, probs: &mut [f64]) {
    let base = i * d.c * d.plane;
    for p in 0..d.plane {
        let mut m = f64::NEG_INFINITY;
        for k in 0..d.c {
            m = m.max(logits[base + k * d.plane + p] as f64);
        }
        let mut z = 0.0;
        for k in 0..d.c {
            let e = (logits[base + k * d.plane + p] as f64 - m).exp();
            probs[k * d.plane + p] = e;
            z += e;
        }
        for k in 0..d.c {
            probs[k * d.plane + p] /= z;
        }
    }
}

/// Per-pixel softmax over the class axis of `[n, c, H, W]` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::Shape {
            expected: vec![0, 0, 0, 0],
            got: s.to_vec(),
            context: "softmax input",
        });
    }
    let d = Dims {
        n: s[0],
        c: s[1],
        plane: s[2] * s[3],
    };
    let mut out = Vec::with_capacity(logits.len());
    let mut probs = vec![0.0f64; d.c * d.plane];
    for i in 0..d.n {
        softmax_sample(logits.data(), &d, i, &mut probs);
        out.extend(probs.iter().map(|&v| v as f32));
    }
    Tensor::new(s.to_vec(), out)
}

/// Mean pixel cross-entropy, weighted per sample.
pub fn loss_ce(logits: &Tensor, labels: &[u8], weights: Option<&[f64]>) -> Result<LossOutput> {
    let d = dims(logits, labels)?;
    check_weights(weights, d.n)?;
    let mut grad = vec![0.0f32; logits.len()];
    let mut per_sample = Vec::with_capacity(d.n);
    let mut probs = vec![0.0f64; d.c * d.plane];
    let mut value = 0.0;
    for i in 0..d.n {
        softmax_sample(logits.data(), &d, i, &mut probs);
        let w = weights.map_or(1.0, |w| w[i]);
        let scale = w / (d.n * d.plane) as f64;
        let base = i * d.c * d.plane;
        let mut acc = 0.0;
        for p in 0..d.plane {
            let y = labels[i * d.plane + p] as usize;
            acc -= probs[y * d.plane + p].max(1e-300).ln();
            for k in 0..d.c {
                let t = if k == y { 1.0 } else { 0.0 };
                grad[base + k * d.plane + p] = (scale * (probs[k * d.plane + p] - t)) as f32;
            }
        }
        let li = acc / d.plane as f64;
        value += w * li;
        per_sample.push(li);
    }
    Ok(LossOutput {
        value: value / d.n as f64,
        per_sample,
        grad: Tensor::new(logits.shape().to_vec(), grad)?,
    })
}

/// `1 - mean_k softDSC_k` per sample, on softmax probabilities.
pub fn loss_soft_dice(logits: &Tensor, labels: &[u8], weights: Option<&[f64]>) -> Result<LossOutput> {
    let d = dims(logits, labels)?;
    check_weights(weights, d.n)?;
    let mut grad = vec![0.0f32; logits.len()];
    let mut per_sample = Vec::with_capacity(d.n);
    let mut probs = vec![0.0f64; d.c * d.plane];
    let mut dprob = vec![0.0f64; d.c * d.plane];
    let mut value = 0.0;
    for i in 0..d.n {
        softmax_sample(logits.data(), &d, i, &mut probs);
        let lab = &labels[i * d.plane..(i + 1) * d.plane];
        let w = weights.map_or(1.0, |w| w[i]);
        let mut dice_sum = 0.0;
        for k in 0..d.c {
            let pk = &probs[k * d.plane..(k + 1) * d.plane];
            let (mut inter, mut psum, mut ysum) = (0.0, 0.0, 0.0);
            for p in 0..d.plane {
                let y = if lab[p] as usize == k { 1.0 } else { 0.0 };
                inter += pk[p] * y;
                psum += pk[p];
                ysum += y;
            }
            let num = 2.0 * inter + DICE_SMOOTH;
            let den = psum + ysum + DICE_SMOOTH;
            dice_sum += num / den;
            // d(loss)/d(p_kp) = -(1/c) * (2 y den - num) / den^2
            for p in 0..d.plane {
                let y = if lab[p] as usize == k { 1.0 } else { 0.0 };
                dprob[k * d.plane + p] = -(2.0 * y * den - num) / (den * den) / d.c as f64;
            }
        }
        let li = 1.0 - dice_sum / d.c as f64;
        value += w * li;
        per_sample.push(li);
        let scale = w / d.n as f64;
        let base = i * d.c * d.plane;
        for p in 0..d.plane {
            let mut dotp = 0.0;
            for k in 0..d.c {
                dotp += probs[k * d.plane + p] * dprob[k * d.plane + p];
            }
            for k in 0..d.c {
                let pk = probs[k * d.plane + p];
                grad[base + k * d.plane + p] = (scale * pk * (dprob[k * d.plane + p] - dotp)) as f32;
            }
        }
    }
    Ok(LossOutput {
        value: value / d.n as f64,
        per_sample,
        grad: Tensor::new(logits.shape().to_vec(), grad)?,
    })
}

pub fn compute_loss(kind: LossKind, logits: &Tensor, labels: &[u8], weights: Option<&[f64]>) -> Result<LossOutput> {
    match kind {
        LossKind::Ce => loss_ce(logits, labels, weights),
        LossKind::SoftDice => loss_soft_dice(logits, labels, weights),
        LossKind::CeDice => {
            let mut a = loss_ce(logits, labels, weights)?;
            let b = loss_soft_dice(logits, labels, weights)?;
            a.value += b.value;
            a.per_sample.iter_mut().zip(&b.per_sample).for_each(|(x, y)| *x += y);
            a.grad.add_scaled(&b.grad, 1.0)?;
            Ok(a)
        }
    }
}

/// Soft Dice loss `1 - mean_k softDSC_k` of a probability map `[c, H, W]`.
pub fn soft_dice_of_probs(probs: &Tensor, labels: &[u8]) -> Result<f64> {
    let s = probs.shape();
    if s.len() != 3 || labels.len() != s[1] * s[2] {
        return Err(Error::Shape {
            expected: vec![0, labels.len()],
            got: s.to_vec(),
            context: "probability map [c, H, W] vs labels",
        });
    }
    let (c, plane) = (s[0], s[1] * s[2]);
    let mut dice_sum = 0.0;
    for k in 0..c {
        let pk = &probs.data()[k * plane..(k + 1) * plane];
        let (mut inter, mut psum, mut ysum) = (0.0f64, 0.0f64, 0.0f64);
        for (p, &l) in pk.iter().zip(labels) {
            let y = if l as usize == k { 1.0 } else { 0.0 };
            inter += *p as f64 * y;
            psum += *p as f64;
            ysum += y;
        }
        dice_sum += (2.0 * inter + DICE_SMOOTH) / (psum + ysum + DICE_SMOOTH);
    }
    Ok(1.0 - dice_sum / c as f64)
}

/// Cross-entropy of a probability map `[c, H, W]`.
pub fn ce_of_probs(probs: &Tensor, labels: &[u8]) -> Result<f64> {
    let s = probs.shape();
    if s.len() != 3 || labels.len() != s[1] * s[2] {
        return Err(Error::Shape {
            expected: vec![0, labels.len()],
            got: s.to_vec(),
            context: "probability map [c, H, W] vs labels",
        });
    }
    let plane = s[1] * s[2];
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(p, &l)| -(probs.data()[l as usize * plane + p] as f64).max(1e-12).ln())
        .sum();
    Ok(total / plane as f64)
}

pub fn loss_of_probs(kind: LossKind, probs: &Tensor, labels: &[u8]) -> Result<f64> {
    match kind {
        LossKind::Ce => ce_of_probs(probs, labels),
        LossKind::SoftDice => soft_dice_of_probs(probs, labels),
        LossKind::CeDice => Ok(ce_of_probs(probs, labels)? + soft_dice_of_probs(probs, labels)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_case(seed: u64, n: usize, c: usize, h: usize, w: usize) -> (Tensor, Vec<u8>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let logits = (0..n * c * h * w).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let labels = (0..n * h * w).map(|_| rng.random_range(0..c as u8)).collect();
        (Tensor::new(vec![n, c, h, w], logits).unwrap(), labels)
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::zeros(&[2, 2, 3, 3]);
        let labels = vec![1u8; 18];
        let out = loss_ce(&logits, &labels, None).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn unit_weights_match_unweighted_bitwise() {
        for kind in [LossKind::Ce, LossKind::SoftDice, LossKind::CeDice] {
            let (logits, labels) = random_case(4, 3, 2, 5, 5);
            let a = compute_loss(kind, &logits, &labels, None).unwrap();
            let b = compute_loss(kind, &logits, &labels, Some(&[1.0; 3])).unwrap();
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!(a.grad, b.grad);
        }
    }

    #[test]
    fn label_out_of_range_is_data_error() {
        let logits = Tensor::zeros(&[1, 2, 2, 2]);
        let err = loss_ce(&logits, &[0, 1, 2, 0], None).unwrap_err();
        assert!(matches!(err, Error::LabelRange { ref indices, .. } if indices == &vec![2]));
        assert!(loss_soft_dice(&logits, &[0, 5, 0, 0], None).is_err());
    }

    #[test]
    fn dice_near_zero_for_confident_correct_prediction() {
        let labels = vec![0u8, 1, 1, 0];
        let mut logits = Tensor::zeros(&[1, 2, 2, 2]);
        for (p, &l) in labels.iter().enumerate() {
            logits.data_mut()[l as usize * 4 + p] = 40.0;
        }
        let out = loss_soft_dice(&logits, &labels, None).unwrap();
        assert!(out.value < 1e-9, "{}", out.value);
    }

    #[test]
    fn dice_near_one_for_disjoint_class() {
        // Class 1 is never predicted while present in labels; class 0 absent from labels
        // but predicted everywhere.
        let labels = vec![1u8; 64];
        let mut logits = Tensor::zeros(&[1, 2, 8, 8]);
        logits.data_mut()[..64].iter_mut().for_each(|v| *v = 40.0);
        let out = loss_soft_dice(&logits, &labels, None).unwrap();
        // both classes score ~1/65
        assert!(out.value > 0.98, "{}", out.value);
    }

    #[test]
    fn probability_map_dice_matches_logit_dice() {
        let (logits, labels) = random_case(9, 1, 3, 4, 4);
        let from_logits = loss_soft_dice(&logits, &labels, None).unwrap().value;
        let probs = softmax(&logits).unwrap().reshape(&[3, 4, 4]).unwrap();
        let from_probs = soft_dice_of_probs(&probs, &labels).unwrap();
        assert!((from_logits - from_probs).abs() < 1e-6);
    }
}
