//! Test-time aggregation over the top-z ops of a learned test-time policy.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::softmax;
use crate::metrics::{evaluate, MetricsReport};
use crate::net::SegNet;
use crate::policy::TeaPolicy;
use crate::tensor::{LabelMap, Tensor};
use crate::transforms::{apply_tea, invert_tea, TeaOp};

/// Selected ops in descending probability with renormalized weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationPlan {
    pub ops: Vec<TeaOp>,
    pub weights: Vec<f64>,
}

impl AggregationPlan {
    pub fn new(ops: Vec<TeaOp>, weights: Vec<f64>) -> Result<Self> {
        if ops.is_empty() || ops.len() != weights.len() {
            return Err(Error::Config(format!(
                "plan needs matching non-empty ops and weights, got {} and {}",
                ops.len(),
                weights.len()
            )));
        }
        for (i, a) in ops.iter().enumerate() {
            if ops[..i].iter().any(|b| b.op_id == a.op_id) {
                return Err(Error::Config(format!("op {} selected twice", a.name)));
            }
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("plan weights must be a distribution, sum {sum}")));
        }
        Ok(AggregationPlan { ops, weights })
    }

    pub fn single(op: TeaOp) -> Self {
        AggregationPlan {
            ops: vec![op],
            weights: vec![1.0],
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.ops.iter().map(|o| o.name.as_str()).collect()
    }
}

/// Top-`z` ops by policy probability (ties to the lower op id), weights renormalized.
pub fn build_plan(registry: &[TeaOp], policy: &TeaPolicy, z: usize) -> Result<AggregationPlan> {
    if registry.len() != policy.len() {
        return Err(Error::Shape {
            expected: vec![registry.len()],
            got: vec![policy.len()],
            context: "test-time policy vs registry",
        });
    }
    if z == 0 || z > registry.len() {
        return Err(Error::Config(format!("z must lie in [1, {}], got {z}", registry.len())));
    }
    let probs = policy.probabilities();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(z);
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    AggregationPlan::new(
        order.iter().map(|&i| registry[i].clone()).collect(),
        order.iter().map(|&i| probs[i] / total).collect(),
    )
}

/// Reverted class probabilities `[c, H, W]` for one op on one image `[ch, H, W]`.
pub fn predict_with_op(net: &SegNet, image: &Tensor, op: &TeaOp) -> Result<Tensor> {
    let shape = image.shape().to_vec();
    let x = apply_tea(op, image)?.reshape(&[1, shape[0], shape[1], shape[2]])?;
    let probs = softmax(&net.forward(&x)?)?;
    let c = probs.shape()[1];
    invert_tea(op, &probs.reshape(&[c, shape[1], shape[2]])?)
}

/// Per-pixel argmax, ties to the lower class.
pub fn argmax_labels(probs: &Tensor) -> Result<LabelMap> {
    let (c, h, w) = match probs.shape() {
        &[c, h, w] => (c, h, w),
        s => {
            return Err(Error::Shape {
                expected: vec![0, 0, 0],
                got: s.to_vec(),
                context: "probability map",
            })
        }
    };
    let plane = h * w;
    let d = probs.data();
    let labels = (0..plane)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if d[k * plane + p] > d[best * plane + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(h, w, labels)
}

/// Weighted ensemble of reverted predictions; returns probabilities `[c, H, W]` and labels.
pub fn aggregate(net: &SegNet, image: &Tensor, plan: &AggregationPlan) -> Result<(Tensor, LabelMap)> {
    let mut acc: Option<Vec<f64>> = None;
    let mut shape = Vec::new();
    for (op, &w) in plan.ops.iter().zip(&plan.weights) {
        let p = predict_with_op(net, image, op)?;
        let a = acc.get_or_insert_with(|| vec![0.0; p.len()]);
        for (s, &v) in a.iter_mut().zip(p.data()) {
            *s += w * v as f64;
        }
        shape = p.shape().to_vec();
    }
    let data = acc.expect("plan is non-empty").into_iter().map(|v| v as f32).collect();
    let probs = Tensor::new(shape, data)?;
    let labels = argmax_labels(&probs)?;
    Ok((probs, labels))
}

/// Label maps for a list of images under a plan.
pub fn segment_all(net: &SegNet, images: &[Tensor], plan: &AggregationPlan) -> Result<Vec<LabelMap>> {
    use rayon::prelude::*;
    images.par_iter().map(|img| aggregate(net, img, plan).map(|r| r.1)).collect()
}

/// Test-set metrics of a network under a plan.
pub fn evaluate_plan(net: &SegNet, dataset: &Dataset, plan: &AggregationPlan) -> Result<MetricsReport> {
    let preds = segment_all(net, &dataset.images, plan)?;
    evaluate(&preds, &dataset.labels, dataset.classes)
}
