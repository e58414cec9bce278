use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{loss_of_probs, LossKind};
use crate::net::SegNet;
use crate::policy::{
    apply_policy_update, gumbel_softmax_draw, normalize_by_sampling_freq, normalize_grads_by_class,
    softmax_jacobian_row, ClassPolicy, Contribution, LogitAddress, PatchClass, SampleDraw, TeaPolicy,
};
use crate::tea::predict_with_op;
use crate::tensor::{LabelMap, Tensor};
use crate::transforms::TeaOp;

/// Class-normalized, frequency-normalized update of the training-time policy.
///
/// `draws[i][s]` is sample `i`'s draw for slot `s`. Samples are grouped by the
/// policy table they were drawn from, so a tied policy centres over the whole batch.
pub fn tra_policy_step(
    policy: &mut ClassPolicy,
    hypergrads: &[f64],
    classes: &[PatchClass],
    draws: &[Vec<SampleDraw>],
    beta: f64,
) -> Result<()> {
    if hypergrads.len() != classes.len() || hypergrads.len() != draws.len() {
        return Err(Error::Shape {
            expected: vec![hypergrads.len()],
            got: vec![classes.len(), draws.len()],
            context: "per-sample classes and draws",
        });
    }
    let tables: Vec<usize> = classes.iter().map(|&c| policy.table_index(c)).collect();
    let h = normalize_grads_by_class(hypergrads, &tables)?;
    let mut contributions = Vec::new();
    for slot in 0..policy.num_slots() {
        let chosen: Vec<usize> = draws.iter().map(|d| d[slot].chosen).collect();
        let h_hat = normalize_by_sampling_freq(&h, &chosen)?;
        for (i, d) in draws.iter().enumerate() {
            contributions.push(Contribution {
                address: LogitAddress { table: tables[i], slot },
                weight: h_hat[i],
                row: softmax_jacobian_row(&d[slot]),
            });
        }
    }
    apply_policy_update(policy, &contributions, beta)
}

/// Descends the test-time logits on per-draw losses `l_k`, each contributing
/// `l_k / Z` divided by how often its op was drawn.
pub fn tea_policy_update(policy: &mut TeaPolicy, losses: &[f64], draws: &[SampleDraw], gamma: f64) -> Result<()> {
    let z = draws.len() as f64;
    let grads: Vec<f64> = losses.iter().map(|l| l / z).collect();
    let chosen: Vec<usize> = draws.iter().map(|d| d.chosen).collect();
    let h = normalize_by_sampling_freq(&grads, &chosen)?;
    let contributions: Vec<Contribution> = draws
        .iter()
        .zip(h)
        .map(|(d, w)| Contribution {
            address: LogitAddress { table: 0, slot: 0 },
            weight: w,
            row: softmax_jacobian_row(d),
        })
        .collect();
    apply_policy_update(policy, &contributions, gamma)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeaStepRecord {
    /// Validation image the step used.
    pub sample: usize,
    pub ops: Vec<usize>,
    pub losses: Vec<f64>,
}

/// One test-time policy step on a single validation image: draw `z` ops,
/// score each reverted prediction, update the logits with rate `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn tea_step<R: Rng + ?Sized>(
    net: &SegNet,
    image: &Tensor,
    labels: &LabelMap,
    ops: &[TeaOp],
    policy: &mut TeaPolicy,
    z: usize,
    gamma: f64,
    loss: LossKind,
    rng: &mut R,
) -> Result<Vec<(usize, f64)>> {
    if ops.len() != policy.len() {
        return Err(Error::Shape {
            expected: vec![ops.len()],
            got: vec![policy.len()],
            context: "test-time policy vs registry",
        });
    }
    let draws: Vec<SampleDraw> = (0..z).map(|_| gumbel_softmax_draw(&policy.logits, rng)).collect();
    let mut unique: BTreeMap<usize, f64> = draws.iter().map(|d| (d.chosen, 0.0)).collect();
    let ids: Vec<usize> = unique.keys().copied().collect();
    let scored: Vec<f64> = ids
        .par_iter()
        .map(|&k| loss_of_probs(loss, &predict_with_op(net, image, &ops[k])?, &labels.data))
        .collect::<Result<_>>()?;
    for (k, l) in ids.iter().zip(scored) {
        unique.insert(*k, l);
    }
    let losses: Vec<f64> = draws.iter().map(|d| unique[&d.chosen]).collect();
    tea_policy_update(policy, &losses, &draws, gamma)?;
    Ok(draws.iter().map(|d| d.chosen).zip(losses).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::draw_with_gumbels;
    use crate::transforms::default_tra_registry;

    fn fixed_draws(logits: &[f64], chosen: usize) -> SampleDraw {
        let mut g = vec![0.0; logits.len()];
        g[chosen] = 30.0;
        draw_with_gumbels(logits, g)
    }

    #[test]
    fn equal_hypergrads_leave_class_unchanged() {
        let slots = default_tra_registry();
        let mut p = ClassPolicy::heuristic(&slots, false, 0.7);
        let before = p.clone();
        let classes = [PatchClass::Foreground, PatchClass::Foreground, PatchClass::Foreground];
        let draws: Vec<Vec<SampleDraw>> = (0..3)
            .map(|i| (0..slots.len()).map(|s| fixed_draws(p.logits(classes[i], s), i % slots[s].bins.len())).collect())
            .collect();
        tra_policy_step(&mut p, &[0.4, 0.4, 0.4], &classes, &draws, 1.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn single_sample_class_is_frozen() {
        let slots = default_tra_registry();
        let mut p = ClassPolicy::heuristic(&slots, false, 0.7);
        let before = p.clone();
        let classes = [PatchClass::Foreground, PatchClass::Background, PatchClass::Background];
        let draws: Vec<Vec<SampleDraw>> = (0..3)
            .map(|i| {
                (0..slots.len())
                    .map(|s| draw_with_gumbels(p.logits(classes[i], s), vec![0.1 * i as f64; slots[s].bins.len()]))
                    .collect()
            })
            .collect();
        tra_policy_step(&mut p, &[5.0, 1.0, -1.0], &classes, &draws, 1.0).unwrap();
        assert_eq!(p.tables[0], before.tables[0]);
        assert_ne!(p.tables[1], before.tables[1]);
    }

    #[test]
    fn below_mean_sample_gains() {
        let slots = default_tra_registry();
        let mut p = ClassPolicy::uniform(&slots, false);
        let before = p.clone();
        let classes = [PatchClass::Background, PatchClass::Background];
        // sample 0 picks bin 1 everywhere, sample 1 picks bin 0
        let draws: Vec<Vec<SampleDraw>> = (0..2)
            .map(|i| {
                (0..slots.len())
                    .map(|s| {
                        let mut g = vec![0.0; slots[s].bins.len()];
                        g[1 - i] = 1.0;
                        draw_with_gumbels(p.logits(PatchClass::Background, s), g)
                    })
                    .collect()
            })
            .collect();
        tra_policy_step(&mut p, &[-1.0, 1.0], &classes, &draws, 0.5).unwrap();
        let t = PatchClass::Background.index();
        for s in 0..slots.len() {
            assert!(p.tables[t][s][1] > before.tables[t][s][1]);
            assert!(p.tables[t][s][0] < before.tables[t][s][0]);
        }
    }

    #[test]
    fn lower_loss_op_gains_on_the_other() {
        let mut p = TeaPolicy::uniform(2);
        let draws = vec![fixed_draws(&p.logits, 0), fixed_draws(&p.logits, 1)];
        // saturated draws give zero rows; use soft draws instead
        let soft = vec![
            draw_with_gumbels(&p.logits, vec![0.5, 0.0]),
            draw_with_gumbels(&p.logits, vec![0.0, 0.5]),
        ];
        tea_policy_update(&mut p, &[0.2, 0.8], &soft, 1.0).unwrap();
        assert!(p.logits[0] > p.logits[1]);
        let mut q = TeaPolicy::uniform(2);
        tea_policy_update(&mut q, &[0.2, 0.8], &draws, 1.0).unwrap();
        assert!(q.logits.iter().all(|v| v.abs() < 1e-9));
    }
}
