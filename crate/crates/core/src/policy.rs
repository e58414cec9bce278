//! Augmentation policies as logit tables, Gumbel-Softmax sampling, and the
//! normalized policy-gradient updates.
//!
//! A policy is optimized in logit space: the sampling probabilities of a slot
//! are `softmax(logits)`. A draw carries the relaxed scores `s` and the chosen
//! index `argmax(s)`. The per-sample weight `w = s_chosen + (1 - s_chosen)`
//! (second term detached) has value exactly one and gradient only through
//! `s_chosen`, so the logit gradient of a sample is
//! `dL/dw * d s_chosen / d logits` (a softmax Jacobian row).

use std::collections::HashMap;
use std::hash::Hash;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{Category, MagnitudeBin, TeaOp, TraSlot};

/// Patch class driving class-specific training-time augmentation, decided
/// by the label of the patch's central pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatchClass {
    Foreground,
    Background,
}

impl PatchClass {
    pub const ALL: [PatchClass; 2] = [PatchClass::Foreground, PatchClass::Background];

    pub fn from_center_label(label: u8) -> Self {
        if label != 0 {
            PatchClass::Foreground
        } else {
            PatchClass::Background
        }
    }

    pub fn index(self) -> usize {
        match self {
            PatchClass::Foreground => 0,
            PatchClass::Background => 1,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            PatchClass::Foreground => "FG",
            PatchClass::Background => "BG",
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One Gumbel-Softmax realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDraw {
    pub gumbels: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen: usize,
}

const UNIFORM_CLAMP: f64 = 1e-12;

/// `g_j = -ln(-ln u_j)`, `s = softmax(logits + g)`, `chosen = argmax s`.
pub fn gumbel_softmax_draw<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> SampleDraw {
    let gumbels = logits
        .iter()
        .map(|_| {
            let u = rng.random::<f64>().clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
            -(-u.ln()).ln()
        })
        .collect();
    draw_with_gumbels(logits, gumbels)
}

/// Deterministic draw from given Gumbel perturbations.
pub fn draw_with_gumbels(logits: &[f64], gumbels: Vec<f64>) -> SampleDraw {
    let perturbed: Vec<f64> = logits.iter().zip(&gumbels).map(|(l, g)| l + g).collect();
    let scores = softmax(&perturbed);
    let chosen = argmax(&scores);
    SampleDraw { gumbels, scores, chosen }
}

/// The straight-through weight of a draw: value and gradient w.r.t. the scores.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawWeight {
    pub value: f64,
    pub chosen: usize,
    /// `dw/ds_j`: one at the chosen index, zero elsewhere.
    pub grad: Vec<f64>,
}

pub fn draw_weight(draw: &SampleDraw) -> DrawWeight {
    let s = draw.scores[draw.chosen];
    let detached = 1.0 - s;
    let mut grad = vec![0.0; draw.scores.len()];
    grad[draw.chosen] = 1.0;
    DrawWeight {
        // s + (1 - s) is one up to rounding; the value contract requires it exactly.
        value: if (s + detached - 1.0).abs() < 1e-12 { 1.0 } else { s + detached },
        chosen: draw.chosen,
        grad,
    }
}

/// `d s_chosen / d logit_j = s_chosen * (delta_{j,chosen} - s_j)`
pub fn softmax_jacobian_row(draw: &SampleDraw) -> Vec<f64> {
    let c = draw.chosen;
    let sc = draw.scores[c];
    draw.scores
        .iter()
        .enumerate()
        .map(|(j, &sj)| sc * (if j == c { 1.0 } else { 0.0 } - sj))
        .collect()
}

/// Subtracts from each entry the mean over entries sharing its class.
pub fn normalize_grads_by_class<K: Eq + Hash + Copy>(grads: &[f64], classes: &[K]) -> Result<Vec<f64>> {
    if grads.len() != classes.len() {
        return Err(Error::Shape {
            expected: vec![grads.len()],
            got: vec![classes.len()],
            context: "per-sample classes",
        });
    }
    let mut sums: HashMap<K, (f64, usize)> = HashMap::new();
    for (&g, &k) in grads.iter().zip(classes) {
        let e = sums.entry(k).or_insert((0.0, 0));
        e.0 += g;
        e.1 += 1;
    }
    Ok(grads
        .iter()
        .zip(classes)
        .map(|(&g, k)| {
            let (s, n) = sums[k];
            g - s / n as f64
        })
        .collect())
}

/// Divides each entry by how many samples in the batch chose the same op.
pub fn normalize_by_sampling_freq<K: Eq + Hash + Copy>(h: &[f64], chosen: &[K]) -> Result<Vec<f64>> {
    if h.len() != chosen.len() {
        return Err(Error::Shape {
            expected: vec![h.len()],
            got: vec![chosen.len()],
            context: "per-sample chosen ops",
        });
    }
    let mut counts: HashMap<K, usize> = HashMap::new();
    for &c in chosen {
        *counts.entry(c).or_insert(0) += 1;
    }
    Ok(h.iter().zip(chosen).map(|(&v, c)| v / counts[c] as f64).collect())
}

/// Which logit vector a contribution targets: `table` is the class table for
/// training-time policies (always 0 for the test-time policy).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogitAddress {
    pub table: usize,
    pub slot: usize,
}

/// One sample's term `weight * row` of the policy gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution {
    pub address: LogitAddress,
    pub weight: f64,
    pub row: Vec<f64>,
}

pub trait LogitStore {
    fn logits_mut(&mut self, address: LogitAddress) -> Option<&mut Vec<f64>>;
}

/// Gradient descent on the logits: `logits[addr] -= lr * sum_i weight_i * row_i`.
pub fn apply_policy_update<S: LogitStore + ?Sized>(store: &mut S, contributions: &[Contribution], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("policy learning rate must be positive, got {lr}")));
    }
    // validate everything before mutating anything
    for c in contributions {
        let len = store
            .logits_mut(c.address)
            .ok_or(Error::Index {
                what: "policy address",
                index: c.address.slot,
                len: 0,
            })?
            .len();
        if c.row.len() != len {
            return Err(Error::Shape {
                expected: vec![len],
                got: vec![c.row.len()],
                context: "jacobian row",
            });
        }
    }
    for c in contributions {
        let logits = store.logits_mut(c.address).expect("validated");
        for (l, r) in logits.iter_mut().zip(&c.row) {
            *l -= lr * c.weight * r;
        }
    }
    Ok(())
}

/// Training-time policy: one logit table per patch class (or one shared table).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPolicy {
    /// When set, foreground and background share `tables[0]`.
    pub tied: bool,
    /// `tables[class][slot][bin]`
    pub tables: Vec<Vec<Vec<f64>>>,
}

impl ClassPolicy {
    pub fn uniform(slots: &[TraSlot], tied: bool) -> Self {
        let table: Vec<Vec<f64>> = slots.iter().map(|s| vec![0.0; s.bins.len()]).collect();
        ClassPolicy::from_table(table, tied)
    }

    /// Each slot keeps "off" with probability `off_prob`; the remaining mass
    /// is spread evenly over the other bins.
    pub fn heuristic(slots: &[TraSlot], tied: bool, off_prob: f64) -> Self {
        let table = slots
            .iter()
            .map(|s| {
                let k = s.bins.len();
                if k == 1 {
                    return vec![0.0];
                }
                let rest = ((1.0 - off_prob) / (k - 1) as f64).ln();
                let mut v = vec![rest; k];
                v[0] = off_prob.ln();
                v
            })
            .collect();
        ClassPolicy::from_table(table, tied)
    }

    fn from_table(table: Vec<Vec<f64>>, tied: bool) -> Self {
        let tables = if tied { vec![table] } else { vec![table.clone(), table] };
        ClassPolicy { tied, tables }
    }

    pub fn table_index(&self, class: PatchClass) -> usize {
        if self.tied {
            0
        } else {
            class.index()
        }
    }

    pub fn logits(&self, class: PatchClass, slot: usize) -> &[f64] {
        &self.tables[self.table_index(class)][slot]
    }

    pub fn probabilities(&self, class: PatchClass, slot: usize) -> Vec<f64> {
        softmax(self.logits(class, slot))
    }

    pub fn num_slots(&self) -> usize {
        self.tables[0].len()
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().flatten().flatten().all(|v| v.is_finite())
    }
}

impl LogitStore for ClassPolicy {
    fn logits_mut(&mut self, a: LogitAddress) -> Option<&mut Vec<f64>> {
        self.tables.get_mut(a.table)?.get_mut(a.slot)
    }
}

/// Test-time policy: one logit per op in the pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeaPolicy {
    pub logits: Vec<f64>,
}

/// Ops favoured by the standard heuristic test-time ensemble (mirroring and 180° rotation).
pub const HEURISTIC_TEA_OPS: [&str; 5] = ["identity", "rotate-180", "mirror-h", "mirror-v", "mirror-both"];

impl TeaPolicy {
    pub fn uniform(k: usize) -> Self {
        TeaPolicy { logits: vec![0.0; k] }
    }

    /// Logit 0 for the heuristic ops, `other_logit` for everything else.
    pub fn heuristic(registry: &[TeaOp], other_logit: f64) -> Self {
        TeaPolicy {
            logits: registry
                .iter()
                .map(|o| {
                    if HEURISTIC_TEA_OPS.contains(&o.name.as_str()) {
                        0.0
                    } else {
                        other_logit
                    }
                })
                .collect(),
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

impl LogitStore for TeaPolicy {
    fn logits_mut(&mut self, a: LogitAddress) -> Option<&mut Vec<f64>> {
        (a.table == 0 && a.slot == 0).then_some(&mut self.logits)
    }
}

pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub descriptor: String,
    pub bin: MagnitudeBin,
    pub logit: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot_id: usize,
    pub name: String,
    pub category: Category,
    pub bins: Vec<BinRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTableRecord {
    /// "FG", "BG", or "shared"
    pub class: String,
    pub slots: Vec<SlotRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraPolicyRecord {
    pub tied: bool,
    pub tables: Vec<ClassTableRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeaOpRecord {
    #[serde(flatten)]
    pub op: TeaOp,
    pub logit: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeaPolicyRecord {
    pub ops: Vec<TeaOpRecord>,
}

/// Persisted policies with their registries; enough to rebuild both exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub version: u32,
    pub iteration: u64,
    pub tra: Option<TraPolicyRecord>,
    pub tea: Option<TeaPolicyRecord>,
}

impl PolicyFile {
    pub fn new(iteration: u64, tra: Option<(&[TraSlot], &ClassPolicy)>, tea: Option<(&[TeaOp], &TeaPolicy)>) -> Self {
        let tra = tra.map(|(slots, policy)| {
            let names: Vec<&str> = if policy.tied { vec!["shared"] } else { vec!["FG", "BG"] };
            TraPolicyRecord {
                tied: policy.tied,
                tables: policy
                    .tables
                    .iter()
                    .zip(names)
                    .map(|(table, name)| ClassTableRecord {
                        class: name.to_string(),
                        slots: slots
                            .iter()
                            .zip(table)
                            .map(|(slot, logits)| {
                                let probs = softmax(logits);
                                SlotRecord {
                                    slot_id: slot.slot_id,
                                    name: slot.name.clone(),
                                    category: slot.category,
                                    bins: slot
                                        .bins
                                        .iter()
                                        .zip(logits.iter().zip(probs))
                                        .map(|(b, (&logit, probability))| BinRecord {
                                            descriptor: b.describe(),
                                            bin: *b,
                                            logit,
                                            probability,
                                        })
                                        .collect(),
                                }
                            })
                            .collect(),
                    })
                    .collect(),
            }
        });
        let tea = tea.map(|(ops, policy)| TeaPolicyRecord {
            ops: ops
                .iter()
                .zip(policy.logits.iter().zip(policy.probabilities()))
                .map(|(op, (&logit, probability))| TeaOpRecord {
                    op: op.clone(),
                    logit,
                    probability,
                })
                .collect(),
        });
        PolicyFile {
            version: POLICY_FORMAT_VERSION,
            iteration,
            tra,
            tea,
        }
    }

    pub fn check_version(&self) -> Result<()> {
        if self.version != POLICY_FORMAT_VERSION {
            return Err(Error::Version {
                expected: POLICY_FORMAT_VERSION,
                found: self.version,
            });
        }
        Ok(())
    }

    /// Rebuilds the training-time registry and policy.
    pub fn tra_policy(&self) -> Option<(Vec<TraSlot>, ClassPolicy)> {
        let rec = self.tra.as_ref()?;
        let slots = rec.tables[0]
            .slots
            .iter()
            .map(|s| TraSlot {
                slot_id: s.slot_id,
                category: s.category,
                name: s.name.clone(),
                bins: s.bins.iter().map(|b| b.bin).collect(),
            })
            .collect();
        let tables = rec
            .tables
            .iter()
            .map(|t| t.slots.iter().map(|s| s.bins.iter().map(|b| b.logit).collect()).collect())
            .collect();
        Some((slots, ClassPolicy { tied: rec.tied, tables }))
    }

    pub fn tea_policy(&self) -> Option<(Vec<TeaOp>, TeaPolicy)> {
        let rec = self.tea.as_ref()?;
        Some((
            rec.ops.iter().map(|o| o.op.clone()).collect(),
            TeaPolicy {
                logits: rec.ops.iter().map(|o| o.logit).collect(),
            },
        ))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        // check the version before the schema so old files get a clear message
        if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
            if v as u32 != POLICY_FORMAT_VERSION {
                return Err(Error::Version {
                    expected: POLICY_FORMAT_VERSION,
                    found: v as u32,
                });
            }
        }
        let file: PolicyFile = serde_json::from_value(value)?;
        file.check_version()?;
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::default_tra_registry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gumbels_uniform_logits() {
        let d = draw_with_gumbels(&[0.0; 4], vec![0.0; 4]);
        assert!(d.scores.iter().all(|&s| (s - 0.25).abs() < 1e-15));
        assert_eq!(d.chosen, 0);
    }

    #[test]
    fn closed_form_two_way_softmax() {
        let d = draw_with_gumbels(&[3f64.ln(), 0.0], vec![0.0, 0.0]);
        assert!((d.scores[0] - 0.75).abs() < 1e-12);
        assert!((d.scores[1] - 0.25).abs() < 1e-12);
        assert_eq!(d.chosen, 0);
    }

    #[test]
    fn extreme_uniforms_stay_finite() {
        struct Fixed(u64);
        impl rand::RngCore for Fixed {
            fn next_u32(&mut self) -> u32 {
                self.0 as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0
            }
            fn fill_bytes(&mut self, dst: &mut [u8]) {
                dst.fill(self.0 as u8)
            }
        }
        for raw in [0u64, u64::MAX] {
            let d = gumbel_softmax_draw(&[0.0, 1.0, -1.0], &mut Fixed(raw));
            assert!(d.gumbels.iter().all(|g| g.is_finite()));
            assert!(d.scores.iter().all(|s| s.is_finite()));
        }
    }

    #[test]
    fn weight_value_is_one_with_chosen_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = gumbel_softmax_draw(&[0.3, -1.2, 2.0, 0.0], &mut rng);
            let w = draw_weight(&d);
            assert_eq!(w.value, 1.0);
            for (j, g) in w.grad.iter().enumerate() {
                assert_eq!(*g, if j == d.chosen { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn jacobian_row_uniform_two_way() {
        let d = draw_with_gumbels(&[0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(softmax_jacobian_row(&d), vec![0.25, -0.25]);
    }

    #[test]
    fn class_normalization_examples() {
        let fg = PatchClass::Foreground;
        let bg = PatchClass::Background;
        assert_eq!(normalize_grads_by_class(&[4.0, 2.0], &[fg, fg]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(
            normalize_grads_by_class(&[1.0, 2.0, 3.0], &[fg, fg, bg]).unwrap(),
            vec![-0.5, 0.5, 0.0]
        );
        assert!(normalize_grads_by_class(&[1.0], &[fg, bg]).is_err());
    }

    #[test]
    fn frequency_normalization_examples() {
        assert_eq!(
            normalize_by_sampling_freq(&[3.0, 3.0, 3.0, 5.0], &[7, 7, 7, 2]).unwrap(),
            vec![1.0, 1.0, 1.0, 5.0]
        );
        assert_eq!(normalize_by_sampling_freq(&[1.5, -2.0], &[0, 1]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn empty_update_is_noop_and_bad_address_errors() {
        let slots = default_tra_registry();
        let mut p = ClassPolicy::heuristic(&slots, false, 0.7);
        let before = p.clone();
        apply_policy_update(&mut p, &[], 0.5).unwrap();
        assert_eq!(p, before);
        let bad = Contribution {
            address: LogitAddress { table: 2, slot: 0 },
            weight: 1.0,
            row: vec![0.0; 6],
        };
        assert!(matches!(apply_policy_update(&mut p, &[bad], 0.5), Err(Error::Index { .. })));
        let short = Contribution {
            address: LogitAddress { table: 0, slot: 0 },
            weight: 1.0,
            row: vec![0.0; 2],
        };
        assert!(apply_policy_update(&mut p, &[short], 0.5).is_err());
        assert_eq!(p, before);
    }

    #[test]
    fn helpful_sample_raises_chosen_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let logits = vec![0.2, -0.4, 0.9];
            let d = gumbel_softmax_draw(&logits, &mut rng);
            let mut tea = TeaPolicy { logits: logits.clone() };
            let c = Contribution {
                address: LogitAddress { table: 0, slot: 0 },
                weight: -0.3,
                row: softmax_jacobian_row(&d),
            };
            apply_policy_update(&mut tea, &[c], 0.1).unwrap();
            if d.scores[d.chosen] < 1.0 {
                assert!(tea.logits[d.chosen] > logits[d.chosen]);
            }
        }
    }

    #[test]
    fn heuristic_off_mass() {
        let slots = default_tra_registry();
        let p = ClassPolicy::heuristic(&slots, false, 0.7);
        for s in 0..slots.len() {
            let probs = p.probabilities(PatchClass::Background, s);
            assert!((probs[0] - 0.7).abs() < 1e-12);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.tables.len(), 2);
        assert_eq!(ClassPolicy::heuristic(&slots, true, 0.7).tables.len(), 1);
    }

    #[test]
    fn policy_file_round_trip() {
        let slots = default_tra_registry();
        let tea_ops = crate::transforms::default_tea_registry();
        let mut p = ClassPolicy::uniform(&slots, false);
        p.tables[0][3][1] = 0.75;
        let t = TeaPolicy::heuristic(&tea_ops, -3.0);
        let file = PolicyFile::new(12, Some((&slots, &p)), Some((&tea_ops, &t)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        file.save(&path).unwrap();
        let back = PolicyFile::load(&path).unwrap();
        assert_eq!(back, file);
        let (s2, p2) = back.tra_policy().unwrap();
        assert_eq!(s2, slots);
        assert_eq!(p2, p);
        assert_eq!(back.tea_policy().unwrap().1, t);

        let mut bad = serde_json::to_value(&file).unwrap();
        bad["version"] = serde_json::json!(99);
        std::fs::write(&path, bad.to_string()).unwrap();
        assert!(matches!(PolicyFile::load(&path), Err(Error::Version { found: 99, .. })));
    }
}
