//! A small fully convolutional segmenter with hand-written backprop.
//!
//! Every layer is a 3x3 same-padded convolution, optionally followed by a
//! leaky ReLU. The last layer is linear and emits one logit map per class,
//! so the output has the same spatial size as the input.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.01;
const KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub leaky: bool,
}

impl LayerSpec {
    fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, KERNEL, KERNEL]
    }
}

/// Segmentation network: layer specs plus parameters in declaration order
/// (`w0, b0, w1, b1, ...`).
#[derive(Clone, Debug, PartialEq)]
pub struct SegNet {
    specs: Vec<LayerSpec>,
    params: Vec<Tensor>,
}

/// One gradient tensor per parameter tensor of a [`SegNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet {
    pub tensors: Vec<Tensor>,
}

impl GradSet {
    pub fn zeros_like(net: &SegNet) -> Self {
        GradSet {
            tensors: net.params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradSet) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, 1.0)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        self.tensors.iter_mut().for_each(|t| t.scale(factor));
    }

    /// Euclidean norm over every entry, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    pub fn check_finite(&self) -> Result<()> {
        self.tensors.iter().try_for_each(|t| t.check_finite("gradient"))
    }
}

/// Euclidean norm over all entries of a gradient set.
pub fn grad_l2_norm(grads: &GradSet) -> f64 {
    grads.l2_norm()
}

/// Activations retained by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `acts[0]` is the input batch, `acts[l + 1]` the (post-activation) output of layer `l`.
    acts: Vec<Tensor>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Tensor {
        self.acts.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Tensor {
        &self.acts[0]
    }
}

impl SegNet {
    /// Builds a network with He-uniform fan-in initialization and zero biases.
    pub fn new(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        validate_specs(&specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(specs.len() * 2);
        for spec in &specs {
            let shape = spec.weight_shape();
            let fan_in = (spec.in_channels * KERNEL * KERNEL) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.random_range(-bound..bound) as f32)
                .collect();
            params.push(Tensor::new(shape.to_vec(), data)?);
            params.push(Tensor::zeros(&[spec.out_channels]));
        }
        Ok(SegNet { specs, params })
    }

    /// Four 3x3 layers, `in -> 16 -> 16 -> 16 -> classes`, leaky ReLU between.
    pub fn default_specs(in_channels: usize, classes: usize) -> Vec<LayerSpec> {
        SegNet::stacked_specs(in_channels, classes, 16, 3)
    }

    /// `hidden` leaky layers of `width` channels followed by a linear output layer.
    pub fn stacked_specs(in_channels: usize, classes: usize, width: usize, hidden: usize) -> Vec<LayerSpec> {
        let mut widths = vec![in_channels];
        widths.extend(std::iter::repeat_n(width, hidden));
        widths.push(classes);
        widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_channels: w[0],
                out_channels: w[1],
                leaky: i + 2 < widths.len(),
            })
            .collect()
    }

    pub fn from_parts(specs: Vec<LayerSpec>, params: Vec<Tensor>) -> Result<Self> {
        validate_specs(&specs)?;
        if params.len() != specs.len() * 2 {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                specs.len() * 2,
                params.len()
            )));
        }
        for (i, spec) in specs.iter().enumerate() {
            let w = spec.weight_shape();
            check_shape(&params[2 * i], &w, "layer weight")?;
            check_shape(&params[2 * i + 1], &[spec.out_channels], "layer bias")?;
        }
        Ok(SegNet { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn in_channels(&self) -> usize {
        self.specs[0].in_channels
    }

    pub fn classes(&self) -> usize {
        self.specs.last().map(|s| s.out_channels).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let (n, h, w) = self.check_batch(batch)?;
        let out_c = self.classes();
        let plane = h * w;
        let per_sample: Vec<Vec<f32>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let input = &batch.data()[i * self.in_channels() * plane..][..self.in_channels() * plane];
                let mut acts = self.sample_forward(input, h, w);
                acts.pop().unwrap()
            })
            .collect();
        let data: Vec<f32> = per_sample.into_iter().flatten().collect();
        let out = Tensor::new(vec![n, out_c, h, w], data)?;
        out.check_finite("logits")?;
        Ok(out)
    }

    pub fn forward_cached(&self, batch: &Tensor) -> Result<ForwardCache> {
        let (n, h, w) = self.check_batch(batch)?;
        let plane = h * w;
        let per_sample: Vec<Vec<Vec<f32>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let input = &batch.data()[i * self.in_channels() * plane..][..self.in_channels() * plane];
                self.sample_forward(input, h, w)
            })
            .collect();
        let mut acts = vec![batch.clone()];
        for (l, spec) in self.specs.iter().enumerate() {
            let data: Vec<f32> = per_sample.iter().flat_map(|s| s[l].iter().copied()).collect();
            acts.push(Tensor::new(vec![n, spec.out_channels, h, w], data)?);
        }
        acts.last().unwrap().check_finite("logits")?;
        Ok(ForwardCache { acts })
    }

    /// Parameter gradients of a scalar loss given its gradient w.r.t. the logits.
    pub fn backward(&self, batch: &Tensor, dlogits: &Tensor) -> Result<GradSet> {
        let cache = self.forward_cached(batch)?;
        self.backward_cached(&cache, dlogits)
    }

    pub fn backward_cached(&self, cache: &ForwardCache, dlogits: &Tensor) -> Result<GradSet> {
        check_shape(dlogits, cache.logits().shape(), "dlogits")?;
        let shape = cache.input().shape();
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        let per_sample: Vec<GradSet> = (0..n)
            .into_par_iter()
            .map(|i| self.sample_backward(cache, dlogits, i, h, w))
            .collect();
        let mut total = GradSet::zeros_like(self);
        for g in &per_sample {
            total.add_assign(g)?;
        }
        Ok(total)
    }

    /// Copy with `theta + step * direction`; `self` is untouched.
    pub fn perturb(&self, direction: &GradSet, step: f32) -> Result<SegNet> {
        if direction.tensors.len() != self.params.len() {
            return Err(Error::Config("direction does not match network parameters".into()));
        }
        let mut out = self.clone();
        for (p, d) in out.params.iter_mut().zip(&direction.tensors) {
            p.add_scaled(d, step)?;
        }
        Ok(out)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<(usize, usize, usize)> {
        let s = batch.shape();
        if s.len() != 4 || s[1] != self.in_channels() {
            return Err(Error::Shape {
                expected: vec![0, self.in_channels(), 0, 0],
                got: s.to_vec(),
                context: "segmenter input [n, ch, H, W]",
            });
        }
        if s[2] < KERNEL || s[3] < KERNEL {
            return Err(Error::Shape {
                expected: vec![KERNEL, KERNEL],
                got: vec![s[2], s[3]],
                context: "spatial size below receptive field",
            });
        }
        batch.check_finite("segmenter input")?;
        Ok((s[0], s[2], s[3]))
    }

    fn sample_forward(&self, input: &[f32], h: usize, w: usize) -> Vec<Vec<f32>> {
        let mut acts: Vec<Vec<f32>> = Vec::with_capacity(self.specs.len());
        for (l, spec) in self.specs.iter().enumerate() {
            let x = if l == 0 { input } else { &acts[l - 1][..] };
            let mut out = vec![0.0f32; spec.out_channels * h * w];
            conv3x3_forward(x, &self.params[2 * l], &self.params[2 * l + 1], spec, h, w, &mut out);
            if spec.leaky {
                out.iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v *= LEAKY_SLOPE
                    }
                });
            }
            acts.push(out);
        }
        acts
    }

    fn sample_backward(&self, cache: &ForwardCache, dlogits: &Tensor, i: usize, h: usize, w: usize) -> GradSet {
        let plane = h * w;
        let mut grads = GradSet::zeros_like(self);
        let last = self.specs.len() - 1;
        let mut dout: Vec<f32> =
            dlogits.data()[i * self.specs[last].out_channels * plane..][..self.specs[last].out_channels * plane].to_vec();
        for l in (0..self.specs.len()).rev() {
            let spec = self.specs[l];
            let out_act = &cache.acts[l + 1].data()[i * spec.out_channels * plane..][..spec.out_channels * plane];
            if spec.leaky {
                for (d, &a) in dout.iter_mut().zip(out_act) {
                    if a <= 0.0 {
                        *d *= LEAKY_SLOPE;
                    }
                }
            }
            let input = &cache.acts[l].data()[i * spec.in_channels * plane..][..spec.in_channels * plane];
            let (gw, gb) = {
                let (a, b) = grads.tensors.split_at_mut(2 * l + 1);
                (&mut a[2 * l], &mut b[0])
            };
            let mut dinput = if l > 0 { vec![0.0f32; spec.in_channels * plane] } else { Vec::new() };
            conv3x3_backward(
                input,
                &self.params[2 * l],
                &dout,
                &spec,
                h,
                w,
                gw.data_mut(),
                gb.data_mut(),
                if l > 0 { Some(&mut dinput) } else { None },
            );
            dout = dinput;
        }
        grads
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for pair in specs.windows(2) {
        if pair[0].out_channels != pair[1].in_channels {
            return Err(Error::Config(format!(
                "layer channel mismatch: {} -> {}",
                pair[0].out_channels, pair[1].in_channels
            )));
        }
    }
    if specs.iter().any(|s| s.in_channels == 0 || s.out_channels == 0) {
        return Err(Error::Config("layers need nonzero channel counts".into()));
    }
    Ok(())
}

fn check_shape(t: &Tensor, expected: &[usize], context: &'static str) -> Result<()> {
    if t.shape() != expected {
        return Err(Error::Shape {
            expected: expected.to_vec(),
            got: t.shape().to_vec(),
            context,
        });
    }
    Ok(())
}

/// Valid output range along one axis for kernel offset `d` in {-1, 0, 1}.
#[inline]
fn span(d: isize, len: usize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { len - d as usize } else { len };
    (lo, hi)
}

fn conv3x3_forward(
    input: &[f32],
    weight: &Tensor,
    bias: &Tensor,
    spec: &LayerSpec,
    h: usize,
    w: usize,
    out: &mut [f32],
) {
    let plane = h * w;
    let wd = weight.data();
    for co in 0..spec.out_channels {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias.data()[co]);
        for ci in 0..spec.in_channels {
            let x = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..KERNEL {
                let dy = ky as isize - 1;
                let (y0, y1) = span(dy, h);
                for kx in 0..KERNEL {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(dx, w);
                    let wv = wd[((co * spec.in_channels + ci) * KERNEL + ky) * KERNEL + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut o[y * w + x0..y * w + x1];
                        let srow = &x[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        for (a, &b) in orow.iter_mut().zip(srow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += pa[k] * pb[k];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for k in chunks * 8..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f32],
    weight: &Tensor,
    dout: &[f32],
    spec: &LayerSpec,
    h: usize,
    w: usize,
    gw: &mut [f32],
    gb: &mut [f32],
    mut dinput: Option<&mut Vec<f32>>,
) {
    let plane = h * w;
    let wd = weight.data();
    for co in 0..spec.out_channels {
        let d = &dout[co * plane..(co + 1) * plane];
        gb[co] += d.iter().sum::<f32>();
        for ci in 0..spec.in_channels {
            let x = &input[ci * plane..(ci + 1) * plane];
            for ky in 0..KERNEL {
                let dy = ky as isize - 1;
                let (y0, y1) = span(dy, h);
                for kx in 0..KERNEL {
                    let dx = kx as isize - 1;
                    let (x0, x1) = span(dx, w);
                    let widx = ((co * spec.in_channels + ci) * KERNEL + ky) * KERNEL + kx;
                    let wv = wd[widx];
                    let mut acc = 0.0f32;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let drow = &d[y * w + x0..y * w + x1];
                        let soff = sy * w + (x0 as isize + dx) as usize;
                        acc += dot(drow, &x[soff..soff + (x1 - x0)]);
                        if let Some(di) = dinput.as_deref_mut() {
                            let dirow = &mut di[ci * plane + soff..ci * plane + soff + (x1 - x0)];
                            for (a, &b) in dirow.iter_mut().zip(drow) {
                                *a += wv * b;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}

/// SGD with heavy-ball momentum: `v <- mu * v + g`, `theta <- theta - lr * v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: Option<GradSet>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn with_velocity(lr: f32, momentum: f32, velocity: Option<GradSet>) -> Self {
        Sgd { lr, momentum, velocity }
    }

    pub fn velocity(&self) -> Option<&GradSet> {
        self.velocity.as_ref()
    }

    pub fn step(&mut self, net: &mut SegNet, grads: &GradSet) -> Result<()> {
        sgd_step(net, grads, self.lr, self.momentum, &mut self.velocity)
    }
}

/// One momentum SGD update of `net` in place. With `momentum == 0` this is
/// plain gradient descent.
pub fn sgd_step(
    net: &mut SegNet,
    grads: &GradSet,
    lr: f32,
    momentum: f32,
    velocity: &mut Option<GradSet>,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if grads.tensors.len() != net.params.len() {
        return Err(Error::Config("gradient set does not match network".into()));
    }
    let v = match velocity {
        Some(v) => {
            for (vt, g) in v.tensors.iter_mut().zip(&grads.tensors) {
                vt.scale(momentum);
                vt.add_scaled(g, 1.0)?;
            }
            v
        }
        None => velocity.insert(grads.clone()),
    };
    for (p, vt) in net.params.iter_mut().zip(&v.tensors) {
        p.add_scaled(vt, -lr)?;
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SEGNETv1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    /// Whether optimizer velocity blocks follow the parameters.
    #[serde(default)]
    velocity: bool,
}

/// Writes `magic | u32 LE header length | header JSON | f32 LE blocks`.
///
/// Blocks follow parameter declaration order; when `velocity` is given its
/// tensors are appended in the same order.
pub fn save_checkpoint(path: &Path, net: &SegNet, velocity: Option<&GradSet>) -> Result<()> {
    let header = CheckpointHeader {
        layers: net.specs.clone(),
        shapes: net.params.iter().map(|p| p.shape().to_vec()).collect(),
        velocity: velocity.is_some(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + net.num_params() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let blocks = net.params.iter().chain(velocity.into_iter().flat_map(|v| v.tensors.iter()));
    for t in blocks {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(SegNet, Option<GradSet>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let fmt = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fmt(0, "bad checkpoint magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let hend = 12 + hlen;
    if bytes.len() < hend {
        return Err(fmt(12, "truncated header".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[12..hend]).map_err(|e| fmt(12, format!("bad header: {e}")))?;
    let mut offset = hend;
    let mut read_block = |shape: &[usize]| -> Result<Tensor> {
        let count: usize = shape.iter().product();
        let end = offset + count * 4;
        if bytes.len() < end {
            return Err(fmt(offset, format!("truncated payload, need {count} f32 values")));
        }
        let data = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset = end;
        Tensor::new(shape.to_vec(), data)
    };
    let params = header.shapes.iter().map(|s| read_block(s)).collect::<Result<Vec<_>>>()?;
    let velocity = if header.velocity {
        Some(GradSet {
            tensors: header.shapes.iter().map(|s| read_block(s)).collect::<Result<Vec<_>>>()?,
        })
    } else {
        None
    };
    if offset != bytes.len() {
        return Err(fmt(offset, "trailing bytes after payload".into()));
    }
    let net = SegNet::from_parts(header.layers, params)?;
    Ok((net, velocity))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_net() -> SegNet {
        let spec = LayerSpec {
            in_channels: 1,
            out_channels: 2,
            leaky: false,
        };
        let mut w = Tensor::zeros(&[2, 1, 3, 3]);
        w.data_mut()[4] = 1.0; // centre tap, channel 0
        w.data_mut()[9 + 4] = 1.0; // centre tap, channel 1
        SegNet::from_parts(vec![spec], vec![w, Tensor::zeros(&[2])]).unwrap()
    }

    fn ramp_batch(n: usize, h: usize, w: usize) -> Tensor {
        let data = (0..n * h * w).map(|i| ((i * 37 % 101) as f32) / 50.0 - 1.0).collect();
        Tensor::new(vec![n, 1, h, w], data).unwrap()
    }

    #[test]
    fn identity_kernel_broadcasts_input() {
        let net = identity_net();
        let x = ramp_batch(2, 5, 6);
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 5, 6]);
        for i in 0..2 {
            for c in 0..2 {
                let got = &y.data()[(i * 2 + c) * 30..][..30];
                let want = &x.data()[i * 30..][..30];
                assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let mut net = SegNet::new(SegNet::default_specs(1, 2), 3).unwrap();
        net.params_mut().iter_mut().for_each(|p| p.scale(0.0));
        let y = net.forward(&ramp_batch(1, 8, 8)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_forward_is_bit_identical() {
        let a = SegNet::new(SegNet::default_specs(1, 2), 11).unwrap();
        let b = SegNet::new(SegNet::default_specs(1, 2), 11).unwrap();
        let x = ramp_batch(3, 12, 12);
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let net = SegNet::new(SegNet::default_specs(1, 2), 0).unwrap();
        let x = Tensor::zeros(&[1, 2, 8, 8]);
        assert!(matches!(net.forward(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_non_finite_input() {
        let net = SegNet::new(SegNet::default_specs(1, 2), 0).unwrap();
        let mut x = Tensor::zeros(&[1, 1, 8, 8]);
        x.data_mut()[3] = f32::INFINITY;
        assert!(matches!(net.forward(&x), Err(Error::Numeric(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = SegNet::new(SegNet::default_specs(1, 2), 5).unwrap();
        let x = ramp_batch(2, 8, 8);
        let g = net.backward(&x, &Tensor::zeros(&[2, 2, 8, 8])).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn sgd_scalar_step() {
        let spec = LayerSpec {
            in_channels: 1,
            out_channels: 1,
            leaky: false,
        };
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[0] = 1.0;
        let mut net = SegNet::from_parts(vec![spec], vec![w, Tensor::zeros(&[1])]).unwrap();
        let mut g = GradSet::zeros_like(&net);
        g.tensors[0].data_mut()[0] = 2.0;
        let mut vel = None;
        sgd_step(&mut net, &g, 0.1, 0.0, &mut vel).unwrap();
        assert!((net.params()[0].data()[0] - 0.8).abs() < 1e-7);
        // zero gradient leaves parameters unchanged
        let before = net.clone();
        let mut vel = None;
        sgd_step(&mut net, &GradSet::zeros_like(&before), 0.1, 0.0, &mut vel).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn sgd_two_step_momentum_recursion() {
        let spec = LayerSpec {
            in_channels: 1,
            out_channels: 1,
            leaky: false,
        };
        let mut net = SegNet::from_parts(vec![spec], vec![Tensor::full(&[1, 1, 3, 3], 1.0), Tensor::zeros(&[1])]).unwrap();
        let mut g1 = GradSet::zeros_like(&net);
        g1.tensors[0].data_mut()[0] = 2.0;
        let mut g2 = GradSet::zeros_like(&net);
        g2.tensors[0].data_mut()[0] = -1.0;
        let mut opt = Sgd::new(0.1, 0.9);
        opt.step(&mut net, &g1).unwrap();
        opt.step(&mut net, &g2).unwrap();
        // theta2 = theta0 - lr*g1 - lr*(mu*g1 + g2)
        let want = 1.0f64 - 0.1 * 2.0 - 0.1 * (0.9 * 2.0 - 1.0);
        assert!((net.params()[0].data()[0] as f64 - want).abs() < 1e-6);
    }

    #[test]
    fn sgd_rejects_nonpositive_lr() {
        let mut net = SegNet::new(SegNet::default_specs(1, 2), 0).unwrap();
        let g = GradSet::zeros_like(&net);
        assert!(sgd_step(&mut net, &g, 0.0, 0.0, &mut None).is_err());
    }

    #[test]
    fn perturb_is_affine() {
        let net = SegNet::new(SegNet::default_specs(1, 2), 9).unwrap();
        let mut dir = GradSet::zeros_like(&net);
        for (k, v) in dir.tensors[2].data_mut().iter_mut().enumerate() {
            *v = (k as f32 * 0.37).sin();
        }
        assert_eq!(net.perturb(&dir, 0.0).unwrap(), net);
        let eps = 0.125; // power of two keeps the composition exact
        let a = net.perturb(&dir, eps).unwrap().perturb(&dir, -2.0 * eps).unwrap();
        let b = net.perturb(&dir, -eps).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            for (x, y) in pa.data().iter().zip(pb.data()) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn grad_norm_three_four_five() {
        let net = SegNet::new(SegNet::default_specs(1, 2), 0).unwrap();
        let mut g = GradSet::zeros_like(&net);
        assert_eq!(grad_l2_norm(&g), 0.0);
        g.tensors[0].data_mut()[0] = 3.0;
        g.tensors[3].data_mut()[1] = 4.0;
        assert_eq!(grad_l2_norm(&g), 5.0);
    }

    #[test]
    fn checkpoint_round_trip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = SegNet::new(SegNet::default_specs(1, 2), 2).unwrap();
        let mut vel = GradSet::zeros_like(&net);
        vel.tensors[1].data_mut()[0] = 0.5;
        save_checkpoint(&path, &net, Some(&vel)).unwrap();
        let (back, v) = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(v.unwrap(), vel);

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");

        bytes[0] = b'S';
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
