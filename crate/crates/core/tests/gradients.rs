//! Central finite-difference checks of every analytic gradient.
//!
//! Loss checks perturb f32 logits by a power of two, so the perturbation is
//! exact and the loss is evaluated in f64. The conv check differentiates an
//! independent f64 reimplementation of the forward pass.

use metaaug::loss::{compute_loss, LossKind};
use metaaug::net::{LayerSpec, SegNet};
use metaaug::policy::{draw_with_gumbels, softmax, softmax_jacobian_row};
use metaaug::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 24;
const TOL: f64 = 1e-3;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn random_case(seed: u64, n: usize, c: usize, h: usize, w: usize) -> (Tensor, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits: Vec<f32> = (0..n * c * h * w).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    let labels: Vec<u8> = (0..n * h * w).map(|_| rng.random_range(0..c as u8)).collect();
    (Tensor::new(vec![n, c, h, w], logits).unwrap(), labels)
}

fn check_loss(kind: LossKind, weighted: bool) {
    let step = 2f32.powi(-10);
    for seed in 0..SEEDS {
        let c = 2 + (seed % 3) as usize;
        let (logits, labels) = random_case(seed, 2, c, 4, 5);
        let weights = [0.7, 1.6];
        let wopt = weighted.then_some(&weights[..]);
        let analytic: Vec<f64> = compute_loss(kind, &logits, &labels, wopt)
            .unwrap()
            .grad
            .data()
            .iter()
            .map(|&g| g as f64)
            .collect();
        let mut numeric = vec![0.0; logits.len()];
        for (j, num) in numeric.iter_mut().enumerate() {
            let eval = |delta: f32| {
                let mut t = logits.clone();
                t.data_mut()[j] += delta;
                compute_loss(kind, &t, &labels, wopt).unwrap().value
            };
            *num = (eval(step) - eval(-step)) / (2.0 * step as f64);
        }
        let err = rel_err(&numeric, &analytic);
        assert!(err < TOL, "{kind:?} weighted={weighted} seed {seed}: rel err {err:e}");
    }
}

#[test]
fn cross_entropy_gradient() {
    check_loss(LossKind::Ce, false);
    check_loss(LossKind::Ce, true);
}

#[test]
fn soft_dice_gradient() {
    check_loss(LossKind::SoftDice, false);
    check_loss(LossKind::SoftDice, true);
}

#[test]
fn combined_loss_gradient() {
    check_loss(LossKind::CeDice, true);
}

/// Reference forward pass in f64: zero-padded 3x3 convolutions with leaky ReLU.
fn reference_forward(specs: &[LayerSpec], params: &[Vec<f64>], input: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut x = input.to_vec();
    for (l, spec) in specs.iter().enumerate() {
        let (wt, b) = (&params[2 * l], &params[2 * l + 1]);
        let mut out = vec![0.0; spec.out_channels * h * w];
        for co in 0..spec.out_channels {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b[co];
                    for ci in 0..spec.in_channels {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wv = wt[((co * spec.in_channels + ci) * 3 + ky) * 3 + kx];
                                acc += wv * x[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(co * h + y) * w + xx] = if spec.leaky && acc <= 0.0 {
                        acc * metaaug::net::LEAKY_SLOPE as f64
                    } else {
                        acc
                    };
                }
            }
        }
        x = out;
    }
    x
}

#[test]
fn conv_backward_matches_reference_differences() {
    let (h, w) = (5, 6);
    let step = 1e-6;
    for seed in 0..SEEDS {
        let specs = SegNet::stacked_specs(2, 3, 3, 1);
        let net = SegNet::new(specs.clone(), 100 + seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input: Vec<f32> = (0..2 * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let upstream: Vec<f32> = (0..3 * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect();

        // Objective: sum(upstream * logits), so dlogits = upstream.
        let batch = Tensor::new(vec![1, 2, h, w], input.clone()).unwrap();
        let dlogits = Tensor::new(vec![1, 3, h, w], upstream.clone()).unwrap();
        let grads = net.backward(&batch, &dlogits).unwrap();

        let params: Vec<Vec<f64>> = net
            .params()
            .iter()
            .map(|t| t.data().iter().map(|&v| v as f64).collect())
            .collect();
        let x64: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        let up64: Vec<f64> = upstream.iter().map(|&v| v as f64).collect();

        // The f32 forward must agree with the reference before its gradient is meaningful.
        let fwd = net.forward(&batch).unwrap();
        let ref_fwd = reference_forward(&specs, &params, &x64, h, w);
        let fwd64: Vec<f64> = fwd.data().iter().map(|&v| v as f64).collect();
        assert!(rel_err(&fwd64, &ref_fwd) < 1e-5);

        let objective = |p: &[Vec<f64>]| -> f64 {
            reference_forward(&specs, p, &x64, h, w)
                .iter()
                .zip(&up64)
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut numeric = Vec::new();
        let mut analytic = Vec::new();
        for (t, g) in params.iter().enumerate() {
            for j in 0..g.len() {
                let mut plus = params.clone();
                plus[t][j] += step;
                let mut minus = params.clone();
                minus[t][j] -= step;
                numeric.push((objective(&plus) - objective(&minus)) / (2.0 * step));
                analytic.push(grads.tensors[t].data()[j] as f64);
            }
        }
        let err = rel_err(&numeric, &analytic);
        assert!(err < TOL, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn softmax_jacobian_rows_match_differences() {
    let step = 1e-6;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 2 + (seed % 9) as usize;
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let gumbels: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let draw = draw_with_gumbels(&logits, gumbels.clone());
        let row = softmax_jacobian_row(&draw);
        let score = |l: &[f64]| {
            let perturbed: Vec<f64> = l.iter().zip(&gumbels).map(|(a, g)| a + g).collect();
            softmax(&perturbed)[draw.chosen]
        };
        let numeric: Vec<f64> = (0..k)
            .map(|j| {
                let mut p = logits.clone();
                p[j] += step;
                let mut m = logits.clone();
                m[j] -= step;
                (score(&p) - score(&m)) / (2.0 * step)
            })
            .collect();
        let err = rel_err(&numeric, &row);
        assert!(err < TOL, "seed {seed}: rel err {err:e}");
    }
}
