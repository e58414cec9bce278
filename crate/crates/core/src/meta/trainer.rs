use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Mode, PolicyInit, RunConfig};
use super::hypergrad::{finite_difference_hypergrad, virtual_step};
use super::steps::{tea_step, tra_policy_step, TeaStepRecord};
use crate::data::{Dataset, PatchSampler};
use crate::error::{Error, Result};
use crate::loss::compute_loss;
use crate::net::{GradSet, SegNet};
use crate::policy::{gumbel_softmax_draw, ClassPolicy, PatchClass, SampleDraw, TeaPolicy};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::tea::{build_plan, AggregationPlan};
use crate::tensor::{LabelMap, Tensor};
use crate::transforms::{
    apply_tea, apply_tea_labels, apply_tra, default_tea_registry, default_tra_registry, sample_tra_instance,
    tea_ops_by_name, tea_registry_with_destructive, tra_registry_with_destructive, TeaOp, TraSlot,
};

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    pub net: SegNet,
    pub velocity: Option<GradSet>,
    pub tra: ClassPolicy,
    pub tea: TeaPolicy,
    /// Completed iterations.
    pub iteration: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvent {
    pub val_loss: f64,
    pub val_grad_norm: f64,
    /// Probe step; absent when the update was skipped.
    pub epsilon: Option<f64>,
    pub tea_step: Option<TeaStepRecord>,
    /// Logits after the update.
    pub tra_logits: Vec<Vec<Vec<f64>>>,
    pub tea_logits: Vec<f64>,
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub policy: Option<PolicyEvent>,
}

/// A transformed training batch with the draws that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub x: Tensor,
    pub y: Vec<u8>,
    pub classes: Vec<PatchClass>,
    /// `(image, y, x)` centre of each patch.
    pub origins: Vec<(usize, usize, usize)>,
    /// `draws[i][s]`; empty per sample when the mode does not augment.
    pub draws: Vec<Vec<SampleDraw>>,
}

pub fn tra_slots_for(config: &RunConfig) -> Vec<TraSlot> {
    if config.destructive {
        tra_registry_with_destructive()
    } else {
        default_tra_registry()
    }
}

/// The test-time pool, optionally restricted to `config.tea_pool` and renumbered.
pub fn tea_ops_for(config: &RunConfig) -> Result<Vec<TeaOp>> {
    let all = if config.destructive {
        tea_registry_with_destructive()
    } else {
        default_tea_registry()
    };
    let Some(names) = &config.tea_pool else {
        return Ok(all);
    };
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let idx = tea_ops_by_name(&all, &names)?;
    Ok(idx
        .into_iter()
        .enumerate()
        .map(|(k, i)| TeaOp { op_id: k, ..all[i].clone() })
        .collect())
}

pub fn initial_tra_policy(config: &RunConfig, slots: &[TraSlot]) -> ClassPolicy {
    let tied = config.mode.tied();
    let init = if config.mode == Mode::Heuristic {
        PolicyInit::Heuristic
    } else {
        config.tra_init
    };
    match init {
        PolicyInit::Uniform => ClassPolicy::uniform(slots, tied),
        PolicyInit::Heuristic => ClassPolicy::heuristic(slots, tied, config.tra_off_prob),
    }
}

pub fn initial_tea_policy(config: &RunConfig, ops: &[TeaOp]) -> TeaPolicy {
    match config.tea_init {
        PolicyInit::Uniform => TeaPolicy::uniform(ops.len()),
        PolicyInit::Heuristic => TeaPolicy::heuristic(ops, config.tea_other_logit),
    }
}

/// Runs the bilevel loop over fixed training and validation sets.
pub struct Trainer<'a> {
    config: RunConfig,
    tra_slots: Vec<TraSlot>,
    tea_ops: Vec<TeaOp>,
    train: &'a Dataset,
    val: &'a Dataset,
    train_sampler: PatchSampler,
    val_sampler: PatchSampler,
}

impl<'a> Trainer<'a> {
    pub fn new(config: RunConfig, train: &'a Dataset, val: &'a Dataset) -> Result<Self> {
        config.validate()?;
        if train.is_empty() || val.is_empty() {
            return Err(Error::Data("training and validation sets must be non-empty".into()));
        }
        if train.classes != val.classes {
            return Err(Error::Data(format!(
                "training set has {} classes, validation set {}",
                train.classes, val.classes
            )));
        }
        let tea_ops = tea_ops_for(&config)?;
        if config.top_z > tea_ops.len() {
            return Err(Error::Config(format!("top_z {} exceeds the {} test-time ops", config.top_z, tea_ops.len())));
        }
        Ok(Trainer {
            tra_slots: tra_slots_for(&config),
            tea_ops,
            train_sampler: PatchSampler::new(train, config.patch)?,
            val_sampler: PatchSampler::new(val, config.patch)?,
            config,
            train,
            val,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn tra_slots(&self) -> &[TraSlot] {
        &self.tra_slots
    }

    pub fn tea_ops(&self) -> &[TeaOp] {
        &self.tea_ops
    }

    pub fn init_state(&self) -> Result<MetaState> {
        let c = &self.config;
        let specs = SegNet::stacked_specs(1, self.train.classes, c.width, c.hidden_layers);
        Ok(MetaState {
            net: SegNet::new(specs, derive_seed(c.seed, Stream::Init, 0, 0))?,
            velocity: None,
            tra: initial_tra_policy(c, &self.tra_slots),
            tea: initial_tea_policy(c, &self.tea_ops),
            iteration: 0,
        })
    }

    /// Checks that a restored state fits this trainer's registries.
    pub fn check_state(&self, state: &MetaState) -> Result<()> {
        let fresh = self.init_state()?;
        let shape = |p: &ClassPolicy| p.tables.iter().map(|t| t.iter().map(Vec::len).collect::<Vec<_>>()).collect::<Vec<_>>();
        if shape(&state.tra) != shape(&fresh.tra) || state.tea.len() != fresh.tea.len() {
            return Err(Error::Config("restored policies do not match the configured registries".into()));
        }
        if state.net.specs() != fresh.net.specs() {
            return Err(Error::Config("restored network does not match the configured architecture".into()));
        }
        Ok(())
    }

    /// The training batch of iteration `it` under policy `tra`.
    pub fn train_batch(&self, tra: &ClassPolicy, it: u64) -> Result<TrainBatch> {
        let c = &self.config;
        let mut rng = stream_rng(c.seed, Stream::Data, it, 0);
        let patches = self.train_sampler.sample(self.train, c.n, c.fg_fraction, &mut rng)?;
        let items: Vec<(Tensor, LabelMap, Vec<SampleDraw>)> = (0..c.n)
            .into_par_iter()
            .map(|i| {
                let (img, lab) = (&patches.images[i], &patches.labels[i]);
                if !c.mode.augments() {
                    return Ok((img.clone(), lab.clone(), Vec::new()));
                }
                let class = patches.classes[i];
                let mut g = stream_rng(c.seed, Stream::Gumbel, it, i as u64);
                let draws: Vec<SampleDraw> = (0..self.tra_slots.len())
                    .map(|s| gumbel_softmax_draw(tra.logits(class, s), &mut g))
                    .collect();
                let chosen: Vec<usize> = draws.iter().map(|d| d.chosen).collect();
                let mut mag = stream_rng(c.seed, Stream::Magnitude, it, i as u64);
                let inst = sample_tra_instance(&self.tra_slots, &chosen, &mut mag)?;
                let (x, y) = apply_tra(&inst, img, lab)?;
                Ok((x, y, draws))
            })
            .collect::<Result<_>>()?;
        let mut images = Vec::with_capacity(c.n);
        let mut y = Vec::with_capacity(c.n * c.patch * c.patch);
        let mut draws = Vec::with_capacity(c.n);
        for (img, lab, d) in items {
            images.push(img);
            y.extend_from_slice(&lab.data);
            draws.push(d);
        }
        Ok(TrainBatch {
            x: Tensor::stack(&images)?,
            y,
            classes: patches.classes,
            origins: patches.origins,
            draws,
        })
    }

    /// Validation patches; in joint mode each is passed through an op drawn
    /// from the current test-time policy, labels included.
    fn val_batch(&self, tea: &TeaPolicy, it: u64) -> Result<(Tensor, Vec<u8>)> {
        let c = &self.config;
        let mut rng = stream_rng(c.seed, Stream::ValData, it, 0);
        let patches = self.val_sampler.sample(self.val, c.m, c.fg_fraction, &mut rng)?;
        let mut images = Vec::with_capacity(c.m);
        let mut y = Vec::with_capacity(c.m * c.patch * c.patch);
        for (j, (img, lab)) in patches.images.iter().zip(&patches.labels).enumerate() {
            if c.mode.learns_tea() {
                let d = gumbel_softmax_draw(&tea.logits, &mut stream_rng(c.seed, Stream::TeaGumbel, it, j as u64));
                let op = &self.tea_ops[d.chosen];
                images.push(apply_tea(op, img)?);
                y.extend_from_slice(&apply_tea_labels(op, lab).data);
            } else {
                images.push(img.clone());
                y.extend_from_slice(&lab.data);
            }
        }
        Ok((Tensor::stack(&images)?, y))
    }

    /// One iteration: sample, virtual step, policy updates on cadence, commit.
    pub fn iteration(&self, state: &mut MetaState) -> Result<IterationRecord> {
        let c = &self.config;
        let it = state.iteration + 1;
        let batch = self.train_batch(&state.tra, it)?;
        let cache = state.net.forward_cached(&batch.x)?;
        let loss = compute_loss(c.train_loss, cache.logits(), &batch.y, None)?;
        if !loss.value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at iteration {it}: per-sample {:?}",
                loss.per_sample
            )));
        }
        let mut grads = state.net.backward_cached(&cache, &loss.grad)?;
        grads.check_finite()?;
        let grad_norm = grads.l2_norm();
        let clip_scale = match c.grad_clip {
            Some(limit) if grad_norm > limit => limit / grad_norm,
            _ => 1.0,
        };
        if clip_scale < 1.0 {
            grads.scale(clip_scale as f32);
        }
        let (theta_star, velocity) = virtual_step(&state.net, state.velocity.as_ref(), &grads, c.alpha, c.momentum)?;
        let mut record = IterationRecord {
            iteration: it,
            train_loss: loss.value,
            grad_norm,
            policy: None,
        };
        if c.mode.learns_tra() && c.is_policy_iteration(it) {
            record.policy = Some(self.policy_update(state, &theta_star, &batch, clip_scale, it)?);
        }
        state.net = theta_star;
        state.velocity = velocity;
        state.iteration = it;
        Ok(record)
    }

    fn policy_update(
        &self,
        state: &mut MetaState,
        theta_star: &SegNet,
        batch: &TrainBatch,
        clip_scale: f64,
        it: u64,
    ) -> Result<PolicyEvent> {
        let c = &self.config;
        let (vx, vy) = self.val_batch(&state.tea, it)?;
        let vcache = theta_star.forward_cached(&vx)?;
        let vloss = compute_loss(c.val_loss, vcache.logits(), &vy, None)?;
        let gval = theta_star.backward_cached(&vcache, &vloss.grad)?;
        let norm = gval.l2_norm();
        let net = &state.net;
        let hyper = finite_difference_hypergrad(norm, c.alpha, c.n, |step| {
            let probe = net.perturb(&gval, step as f32)?;
            let logits = probe.forward(&batch.x)?;
            Ok(compute_loss(c.train_loss, &logits, &batch.y, None)?.per_sample)
        })?;
        let epsilon = hyper.as_ref().map(|h| h.epsilon);
        if let Some(h) = hyper {
            let scaled: Vec<f64> = h.per_sample.iter().map(|v| v * clip_scale).collect();
            if scaled.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite hypergradient at iteration {it}")));
            }
            tra_policy_step(&mut state.tra, &scaled, &batch.classes, &batch.draws, c.beta)?;
        }
        let tea_record = if c.mode.learns_tea() {
            let k = (it / c.cadence - 1) as usize % self.val.len();
            let mut rng = stream_rng(c.seed, Stream::TeaSample, it, 0);
            let drawn = tea_step(
                &state.net,
                &self.val.images[k],
                &self.val.labels[k],
                &self.tea_ops,
                &mut state.tea,
                c.tea_samples,
                c.gamma,
                c.tea_loss,
                &mut rng,
            )?;
            Some(TeaStepRecord {
                sample: k,
                ops: drawn.iter().map(|d| d.0).collect(),
                losses: drawn.iter().map(|d| d.1).collect(),
            })
        } else {
            None
        };
        Ok(PolicyEvent {
            val_loss: vloss.value,
            val_grad_norm: norm,
            epsilon,
            tea_step: tea_record,
            tra_logits: state.tra.tables.clone(),
            tea_logits: state.tea.logits.clone(),
        })
    }

    /// Iterates until `state.iteration == until`, handing each record to `sink`.
    pub fn run(
        &self,
        state: &mut MetaState,
        until: u64,
        mut sink: impl FnMut(&IterationRecord, &MetaState) -> Result<()>,
    ) -> Result<()> {
        while state.iteration < until {
            let r = self.iteration(state)?;
            sink(&r, state)?;
        }
        Ok(())
    }

    pub fn tea_plan(&self, state: &MetaState) -> Result<AggregationPlan> {
        build_plan(&self.tea_ops, &state.tea, self.config.top_z)
    }
}

/// Trains from scratch and returns the final state and full history.
pub fn train(config: &RunConfig, train: &Dataset, val: &Dataset) -> Result<(MetaState, Vec<IterationRecord>)> {
    let trainer = Trainer::new(config.clone(), train, val)?;
    let mut state = trainer.init_state()?;
    let mut history = Vec::with_capacity(config.iterations as usize);
    trainer.run(&mut state, config.iterations, |r, _| {
        history.push(r.clone());
        Ok(())
    })?;
    Ok((state, history))
}

/// Post-hoc test-time policy learning against a frozen network: `steps`
/// policy steps cycling through the validation images.
#[allow(clippy::too_many_arguments)]
pub fn refine_tea(
    net: &SegNet,
    val: &Dataset,
    ops: &[TeaOp],
    policy: &mut TeaPolicy,
    steps: u64,
    config: &RunConfig,
    mut sink: impl FnMut(u64, &TeaStepRecord, &TeaPolicy) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    if val.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    if net.in_channels() != 1 || net.classes() != val.classes {
        return Err(Error::Config(format!(
            "network maps {} channels to {} classes; validation data has 1 channel and {} classes",
            net.in_channels(),
            net.classes(),
            val.classes
        )));
    }
    for step in 1..=steps {
        let k = (step - 1) as usize % val.len();
        let mut rng = stream_rng(config.seed, Stream::TeaSample, step, 1);
        let drawn = tea_step(
            net,
            &val.images[k],
            &val.labels[k],
            ops,
            policy,
            config.tea_samples,
            config.gamma,
            config.tea_loss,
            &mut rng,
        )?;
        let rec = TeaStepRecord {
            sample: k,
            ops: drawn.iter().map(|d| d.0).collect(),
            losses: drawn.iter().map(|d| d.1).collect(),
        };
        sink(step, &rec, policy)?;
    }
    Ok(())
}
