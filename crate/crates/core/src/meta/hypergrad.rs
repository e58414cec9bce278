use crate::error::Result;
use crate::net::{sgd_step, GradSet, SegNet};

/// Finite-difference step: the probes sit at distance 0.01 from `theta` along
/// the validation gradient.
pub const PROBE_RADIUS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypergrad {
    /// `dL_val / dw_i` for every training sample.
    pub per_sample: Vec<f64>,
    pub epsilon: f64,
}

/// Central-difference estimate of the per-sample hypergradients.
///
/// `probe(step)` must return the per-sample training losses at
/// `theta + step * g_val`, where `g_val` is the validation gradient at the
/// virtually updated parameters and `val_grad_norm` its norm. Returns `None`
/// when the validation gradient vanishes.
pub fn finite_difference_hypergrad(
    val_grad_norm: f64,
    alpha: f64,
    n: usize,
    mut probe: impl FnMut(f64) -> Result<Vec<f64>>,
) -> Result<Option<Hypergrad>> {
    if !(val_grad_norm > 0.0) || !val_grad_norm.is_finite() {
        return Ok(None);
    }
    let epsilon = PROBE_RADIUS / val_grad_norm;
    let plus = probe(epsilon)?;
    let minus = probe(-epsilon)?;
    let per_sample = plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| -alpha * (p - m) / (2.0 * epsilon * n as f64))
        .collect();
    Ok(Some(Hypergrad { per_sample, epsilon }))
}

/// `theta* = theta - alpha * (mu * v + g)` on a copy; returns the new
/// parameters and velocity. A zero step returns `theta` unchanged.
pub fn virtual_step(
    net: &SegNet,
    velocity: Option<&GradSet>,
    grads: &GradSet,
    alpha: f64,
    momentum: f64,
) -> Result<(SegNet, Option<GradSet>)> {
    let mut next = net.clone();
    let mut v = velocity.cloned();
    if alpha == 0.0 {
        return Ok((next, v));
    }
    sgd_step(&mut next, grads, alpha as f32, momentum as f32, &mut v)?;
    Ok((next, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_skips() {
        let r = finite_difference_hypergrad(0.0, 0.1, 2, |_| unreachable!("no probes when skipped")).unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn linear_in_training_loss_scale() {
        // losses l_i(t) = c_i * t around t = 0
        let run = |k: f64| {
            finite_difference_hypergrad(2.0, 0.1, 2, |s| Ok(vec![k * 3.0 * s, k * -1.0 * s]))
                .unwrap()
                .unwrap()
                .per_sample
        };
        let (a, b) = (run(1.0), run(4.0));
        for (x, y) in a.iter().zip(&b) {
            assert!((4.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_alpha_keeps_parameters() {
        let net = SegNet::new(SegNet::default_specs(1, 2), 1).unwrap();
        let g = GradSet::zeros_like(&net);
        let (next, _) = virtual_step(&net, None, &g, 0.0, 0.9).unwrap();
        assert_eq!(next, net);
    }
}
