use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{apply_op_geometry_to_map, apply_op_image, apply_op_labels, renormalize_pixels, Category, Op};
use crate::error::{Error, Result};
use crate::tensor::{LabelMap, Tensor};

/// Which transformation a magnitude bin instantiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpFamily {
    Identity,
    Scale,
    Rotate,
    MirrorH,
    MirrorV,
    Gamma,
    InvertedGamma,
    Shift,
    IntensityScale,
    Contrast,
    Blur,
    Sharpen,
    Noise,
    LowRes,
    /// `x^m`
    Power,
    /// `x * m`
    Multiply,
    /// `x + m`
    Add,
}

/// One mutually exclusive choice within a training-time slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeBin {
    pub family: OpFamily,
    /// Magnitudes are drawn uniformly from `[lo, hi)`; `lo == hi` is a fixed magnitude.
    pub lo: f32,
    pub hi: f32,
    /// Direction drawn with a fair coin (up/down, anticlockwise/clockwise).
    pub symmetric: bool,
}

impl MagnitudeBin {
    pub const OFF: MagnitudeBin = MagnitudeBin {
        family: OpFamily::Identity,
        lo: 0.0,
        hi: 0.0,
        symmetric: false,
    };

    pub fn ranged(family: OpFamily, lo: f32, hi: f32, symmetric: bool) -> Self {
        MagnitudeBin { family, lo, hi, symmetric }
    }

    pub fn fixed(family: OpFamily, value: f32, symmetric: bool) -> Self {
        MagnitudeBin::ranged(family, value, value, symmetric)
    }

    pub fn is_off(&self) -> bool {
        self.family == OpFamily::Identity
    }

    pub fn describe(&self) -> String {
        let fam = serde_json::to_value(self.family)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        match (self.is_off(), self.lo == self.hi) {
            (true, _) => "off".to_string(),
            (false, true) => format!("{fam} {}{}", if self.symmetric { "±" } else { "" }, self.lo),
            (false, false) => format!(
                "{fam} {}[{}, {})",
                if self.symmetric { "±" } else { "" },
                self.lo,
                self.hi
            ),
        }
    }

    /// Concrete op for a drawn magnitude and direction (`sign` is +1 or -1).
    pub fn instantiate(&self, magnitude: f32, sign: f32, noise_seed: u64) -> Op {
        let up = |m: f32| if sign < 0.0 { 1.0 / (1.0 + m) } else { 1.0 + m };
        match self.family {
            OpFamily::Identity => Op::Identity,
            OpFamily::Scale => Op::Scale { factor: up(magnitude) },
            OpFamily::Rotate => Op::Rotate { degrees: sign * magnitude },
            OpFamily::MirrorH => Op::Mirror {
                horizontal: true,
                vertical: false,
            },
            OpFamily::MirrorV => Op::Mirror {
                horizontal: false,
                vertical: true,
            },
            OpFamily::Gamma => Op::Gamma {
                exponent: up(magnitude),
                inverted: false,
            },
            OpFamily::InvertedGamma => Op::Gamma {
                exponent: up(magnitude),
                inverted: true,
            },
            OpFamily::Shift => Op::Shift { amount: sign * magnitude },
            OpFamily::IntensityScale => Op::IntensityScale { factor: up(magnitude) },
            OpFamily::Contrast => Op::Contrast { factor: up(magnitude) },
            OpFamily::Blur => Op::Blur { sigma: magnitude },
            OpFamily::Sharpen => Op::Sharpen { sigma: magnitude },
            OpFamily::Noise => Op::Noise {
                sigma: magnitude,
                seed: noise_seed,
            },
            OpFamily::LowRes => Op::LowRes { factor: magnitude },
            OpFamily::Power => Op::Power { exponent: magnitude },
            OpFamily::Multiply => Op::IntensityScale { factor: magnitude },
            OpFamily::Add => Op::Shift { amount: magnitude },
        }
    }
}

/// One stage of the training-time cascade. Bin 0 is always "off".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraSlot {
    pub slot_id: usize,
    pub category: Category,
    pub name: String,
    pub bins: Vec<MagnitudeBin>,
}

impl TraSlot {
    fn new(slot_id: usize, category: Category, name: &str, bins: Vec<MagnitudeBin>) -> Self {
        let mut all = vec![MagnitudeBin::OFF];
        all.extend(bins);
        TraSlot {
            slot_id,
            category,
            name: name.to_string(),
            bins: all,
        }
    }
}

fn ranges(family: OpFamily, edges: &[f32], symmetric: bool) -> Vec<MagnitudeBin> {
    edges
        .windows(2)
        .map(|e| MagnitudeBin::ranged(family, e[0], e[1], symmetric))
        .collect()
}

fn descending(family: OpFamily, pairs: &[(f32, f32)]) -> Vec<MagnitudeBin> {
    pairs
        .iter()
        .map(|&(lo, hi)| MagnitudeBin::ranged(family, lo, hi, false))
        .collect()
}

/// The ten-slot 2D training-time cascade.
pub fn default_tra_registry() -> Vec<TraSlot> {
    use Category::*;
    use OpFamily as F;
    let mut rotation = ranges(F::Rotate, &[0.0, 10.0, 20.0, 30.0], true);
    rotation.push(MagnitudeBin::fixed(F::Rotate, 90.0, true));
    let mut noise = ranges(F::Blur, &[0.4, 0.6, 0.8, 1.0], false);
    noise.extend(descending(F::Sharpen, &[(0.8, 1.0), (0.6, 0.8), (0.4, 0.6)]));
    noise.extend(ranges(F::Noise, &[0.0, 0.05, 0.10, 0.15], false));
    noise.extend(descending(F::LowRes, &[(0.8, 1.0), (0.6, 0.8), (0.4, 0.6)]));
    vec![
        TraSlot::new(0, Spatial, "scaling", ranges(F::Scale, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5], true)),
        TraSlot::new(1, Spatial, "rotation", rotation),
        TraSlot::new(2, Spatial, "mirror-horizontal", vec![MagnitudeBin::fixed(F::MirrorH, 0.0, false)]),
        TraSlot::new(3, Spatial, "mirror-vertical", vec![MagnitudeBin::fixed(F::MirrorV, 0.0, false)]),
        TraSlot::new(4, Intensity, "gamma", ranges(F::Gamma, &[0.0, 0.2, 0.4, 0.6], true)),
        TraSlot::new(5, Intensity, "inverted-gamma", ranges(F::InvertedGamma, &[0.0, 0.2, 0.4, 0.6], true)),
        TraSlot::new(6, Intensity, "intensity-shift", ranges(F::Shift, &[0.0, 0.1, 0.2, 0.3], true)),
        TraSlot::new(7, Intensity, "intensity-scale", ranges(F::IntensityScale, &[0.0, 0.1, 0.2, 0.3], true)),
        TraSlot::new(8, Intensity, "contrast", ranges(F::Contrast, &[0.0, 0.1, 0.2, 0.3], true)),
        TraSlot::new(9, Noise, "noise", noise),
    ]
}

/// The five destructive transformations used to probe policy suppression:
/// `x^2`, `x^4`, `x * 0.01`, `-x * 0.01`, `x + 300`.
pub fn destructive_ops() -> Vec<(&'static str, Op)> {
    vec![
        ("square", Op::Power { exponent: 2.0 }),
        ("fourth-power", Op::Power { exponent: 4.0 }),
        ("scale-0.01", Op::IntensityScale { factor: 0.01 }),
        ("negate-scale-0.01", Op::IntensityScale { factor: -0.01 }),
        ("add-300", Op::Shift { amount: 300.0 }),
    ]
}

/// Default cascade plus one extra slot holding "off" and the five destructive ops.
pub fn tra_registry_with_destructive() -> Vec<TraSlot> {
    let mut slots = default_tra_registry();
    let bins = vec![
        MagnitudeBin::fixed(OpFamily::Power, 2.0, false),
        MagnitudeBin::fixed(OpFamily::Power, 4.0, false),
        MagnitudeBin::fixed(OpFamily::Multiply, 0.01, false),
        MagnitudeBin::fixed(OpFamily::Multiply, -0.01, false),
        MagnitudeBin::fixed(OpFamily::Add, 300.0, false),
    ];
    let id = slots.len();
    slots.push(TraSlot::new(id, Category::Intensity, "destructive", bins));
    slots
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InverseKind {
    SpatialInverse,
    IdentityOnPrediction,
}

/// A deterministic test-time operation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeaOp {
    pub op_id: usize,
    pub category: Category,
    pub name: String,
    pub magnitude: f32,
    pub op: Op,
    pub inverse_kind: InverseKind,
}

impl TeaOp {
    fn new(op_id: usize, name: String, magnitude: f32, op: Op) -> Self {
        let inverse_kind = if op.is_spatial() {
            InverseKind::SpatialInverse
        } else {
            InverseKind::IdentityOnPrediction
        };
        TeaOp {
            op_id,
            category: op.category(),
            name,
            magnitude,
            op,
            inverse_kind,
        }
    }
}

/// Seed base for the fixed noise realizations of test-time noise ops.
const TEA_NOISE_SEED: u64 = 0x7EA0_0000;

/// The 55-op 2D test-time pool; op 0 is identity.
pub fn default_tea_registry() -> Vec<TeaOp> {
    let mut ops: Vec<(String, f32, Op)> = vec![("identity".into(), 0.0, Op::Identity)];
    let three = [0.05f32, 0.15, 0.25];
    for m in three {
        ops.push((format!("scale-down-{m}"), m, Op::Scale { factor: 1.0 / (1.0 + m) }));
    }
    for m in three {
        ops.push((format!("scale-up-{m}"), m, Op::Scale { factor: 1.0 + m }));
    }
    for d in [5.0f32, 15.0, 25.0, 90.0] {
        ops.push((format!("rotate-acw-{d}"), d, Op::Rotate { degrees: d }));
    }
    ops.push(("rotate-180".into(), 180.0, Op::Rotate { degrees: 180.0 }));
    for d in [5.0f32, 15.0, 25.0, 90.0] {
        ops.push((format!("rotate-cw-{d}"), d, Op::Rotate { degrees: -d }));
    }
    for (name, h, v) in [("mirror-h", true, false), ("mirror-v", false, true), ("mirror-both", true, true)] {
        ops.push((
            name.into(),
            0.0,
            Op::Mirror {
                horizontal: h,
                vertical: v,
            },
        ));
    }
    let gammas = [0.1f32, 0.3, 0.5];
    for g in gammas {
        ops.push((
            format!("gamma-expansion-{g}"),
            g,
            Op::Gamma {
                exponent: 1.0 + g,
                inverted: false,
            },
        ));
    }
    for g in gammas {
        ops.push((
            format!("gamma-compression-{g}"),
            g,
            Op::Gamma {
                exponent: 1.0 / (1.0 + g),
                inverted: false,
            },
        ));
    }
    for s in three {
        ops.push((format!("add-intensity-{s}"), s, Op::Shift { amount: s }));
    }
    for s in three {
        ops.push((format!("subtract-intensity-{s}"), s, Op::Shift { amount: -s }));
    }
    for s in three {
        ops.push((format!("intensity-scale-up-{s}"), s, Op::IntensityScale { factor: 1.0 + s }));
    }
    for s in three {
        ops.push((format!("intensity-scale-down-{s}"), s, Op::IntensityScale { factor: 1.0 / (1.0 + s) }));
    }
    for s in three {
        ops.push((format!("contrast-up-{s}"), s, Op::Contrast { factor: 1.0 + s }));
    }
    for s in three {
        ops.push((format!("contrast-down-{s}"), s, Op::Contrast { factor: 1.0 / (1.0 + s) }));
    }
    for s in [0.5f32, 0.7, 0.9] {
        ops.push((format!("blur-{s}"), s, Op::Blur { sigma: s }));
    }
    for s in [0.9f32, 0.7, 0.5] {
        ops.push((format!("sharpen-{s}"), s, Op::Sharpen { sigma: s }));
    }
    for (k, s) in [0.025f32, 0.075, 0.125].into_iter().enumerate() {
        ops.push((
            format!("gaussian-noise-{s}"),
            s,
            Op::Noise {
                sigma: s,
                seed: TEA_NOISE_SEED + k as u64,
            },
        ));
    }
    for f in [0.9f32, 0.7, 0.5] {
        ops.push((format!("low-res-{f}"), f, Op::LowRes { factor: f }));
    }
    ops.into_iter()
        .enumerate()
        .map(|(id, (name, m, op))| TeaOp::new(id, name, m, op))
        .collect()
}

/// Default pool with the five destructive ops appended.
pub fn tea_registry_with_destructive() -> Vec<TeaOp> {
    let mut ops = default_tea_registry();
    for (name, op) in destructive_ops() {
        let id = ops.len();
        ops.push(TeaOp::new(id, name.to_string(), 0.0, op));
    }
    ops
}

/// Looks up ops by name, preserving the requested order.
pub fn tea_ops_by_name(registry: &[TeaOp], names: &[&str]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            registry
                .iter()
                .position(|o| o.name == *n)
                .ok_or_else(|| Error::Config(format!("unknown test-time op {n:?}")))
        })
        .collect()
}

/// Chosen bin, magnitude and direction of one cascade slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraChoice {
    pub bin: usize,
    pub magnitude: f32,
    pub sign: f32,
    pub op: Op,
}

/// One realization of the full training-time cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraInstance {
    pub choices: Vec<TraChoice>,
}

impl TraInstance {
    pub fn identity(slots: usize) -> Self {
        TraInstance {
            choices: vec![
                TraChoice {
                    bin: 0,
                    magnitude: 0.0,
                    sign: 1.0,
                    op: Op::Identity,
                };
                slots
            ],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.choices.iter().all(|c| c.op == Op::Identity)
    }
}

fn draw_in_range<R: Rng + ?Sized>(lo: f32, hi: f32, rng: &mut R) -> f32 {
    if hi <= lo {
        return lo;
    }
    let v = (lo as f64 + rng.random::<f64>() * (hi as f64 - lo as f64)) as f32;
    if v >= hi {
        lo.max(f32::from_bits(hi.to_bits() - 1))
    } else {
        v
    }
}

/// Draws magnitudes (uniform within each chosen bin) and directions.
pub fn sample_tra_instance<R: Rng + ?Sized>(
    slots: &[TraSlot],
    chosen_bins: &[usize],
    rng: &mut R,
) -> Result<TraInstance> {
    if chosen_bins.len() != slots.len() {
        return Err(Error::Shape {
            expected: vec![slots.len()],
            got: vec![chosen_bins.len()],
            context: "chosen bins per slot",
        });
    }
    let mut choices = Vec::with_capacity(slots.len());
    for (slot, &bin) in slots.iter().zip(chosen_bins) {
        let b = slot.bins.get(bin).ok_or(Error::Index {
            what: "slot bins",
            index: bin,
            len: slot.bins.len(),
        })?;
        if b.is_off() {
            choices.push(TraChoice {
                bin,
                magnitude: 0.0,
                sign: 1.0,
                op: Op::Identity,
            });
            continue;
        }
        let magnitude = draw_in_range(b.lo, b.hi, rng);
        let sign = if b.symmetric && rng.random::<bool>() { -1.0 } else { 1.0 };
        let seed = rng.random::<u64>();
        choices.push(TraChoice {
            bin,
            magnitude,
            sign,
            op: b.instantiate(magnitude, sign, seed),
        });
    }
    Ok(TraInstance { choices })
}

/// Applies the cascade in slot order. Spatial slots act on image and labels
/// (labels nearest neighbour); intensity and noise slots act on the image only.
pub fn apply_tra(instance: &TraInstance, image: &Tensor, labels: &LabelMap) -> Result<(Tensor, LabelMap)> {
    let mut img = image.clone();
    let mut lab = labels.clone();
    for choice in &instance.choices {
        if choice.op == Op::Identity {
            continue;
        }
        img = apply_op_image(&choice.op, &img)?;
        if choice.op.is_spatial() {
            lab = apply_op_labels(&choice.op, &lab);
        }
    }
    Ok((img, lab))
}

pub fn apply_tea(op: &TeaOp, image: &Tensor) -> Result<Tensor> {
    apply_op_image(&op.op, image)
}

/// Spatial geometry of a test-time op applied to labels.
pub fn apply_tea_labels(op: &TeaOp, labels: &LabelMap) -> LabelMap {
    apply_op_labels(&op.op, labels)
}

/// Maps a prediction made on a transformed image back to the original frame.
/// Resampled maps are renormalized per pixel; non-spatial ops return the
/// prediction untouched.
pub fn invert_tea(op: &TeaOp, prediction: &Tensor) -> Result<Tensor> {
    match op.inverse_kind {
        InverseKind::IdentityOnPrediction => Ok(prediction.clone()),
        InverseKind::SpatialInverse => {
            let mut out = apply_op_geometry_to_map(&op.op.geometric_inverse(), prediction)?;
            renormalize_pixels(&mut out)?;
            Ok(out)
        }
    }
}
