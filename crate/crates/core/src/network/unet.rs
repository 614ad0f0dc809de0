use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::layers::{
    conv2d_backward, conv2d_forward, instance_norm_backward, instance_norm_forward, leaky_relu, leaky_relu_backward,
    upconv_backward, upconv_forward, ConvGeom, NormCache,
};
use super::params::{NetworkParams, ParamInit, ParamLayout};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct ConvSlot {
    weight: Range<usize>,
    bias: Range<usize>,
    geom: ConvGeom,
}

#[derive(Debug, Clone)]
struct NormSlot {
    scale: Range<usize>,
    shift: Range<usize>,
}

#[derive(Debug, Clone)]
struct BlockPlan {
    path: String,
    stride: usize,
    conv1: ConvSlot,
    norm1: NormSlot,
    conv2: ConvSlot,
    norm2: NormSlot,
    skip: Option<ConvSlot>,
}

#[derive(Debug, Clone)]
struct DecoderPlan {
    path: String,
    /// Encoder stage whose resolution this decoder stage restores.
    stage: usize,
    up_weight: Range<usize>,
    up_bias: Range<usize>,
    up_channels: usize,
    blocks: Vec<(String, ConvSlot, NormSlot)>,
}

fn conv_slot(layout: &mut ParamLayout, path: &str, geom: ConvGeom) -> ConvSlot {
    let k = geom.kernel;
    let weight = layout.push(
        format!("{path}.weight"),
        vec![geom.cout, geom.cin, k, k],
        ParamInit::Kaiming { fan_in: geom.cin * k * k },
    );
    let bias = layout.push(format!("{path}.bias"), vec![geom.cout], ParamInit::Zeros);
    ConvSlot { weight, bias, geom }
}

fn norm_slot(layout: &mut ParamLayout, path: &str, channels: usize) -> NormSlot {
    NormSlot {
        scale: layout.push(format!("{path}.weight"), vec![channels], ParamInit::Ones),
        shift: layout.push(format!("{path}.bias"), vec![channels], ParamInit::Zeros),
    }
}

/// Splits a contiguous `first ++ second` range of `buf` into two mutable slices.
fn pair_mut<'a, T>(buf: &'a mut [T], first: &Range<usize>, second: &Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    debug_assert_eq!(first.end, second.start);
    buf[first.start..second.end].split_at_mut(first.len())
}

/// One (output extents) record of a traced forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub path: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationShapeTrace {
    pub entries: Vec<TraceEntry>,
}

impl ActivationShapeTrace {
    fn record<T: Real>(&mut self, path: &str, t: &Tensor<T>) {
        self.entries.push(TraceEntry {
            path: path.to_string(),
            channels: t.c,
            height: t.h,
            width: t.w,
        });
    }

    /// Output of the last encoder block.
    pub fn bottleneck(&self) -> Option<&TraceEntry> {
        self.entries.iter().filter(|e| e.path.starts_with("encoder.")).last()
    }

    /// `(height, width)` at the output of each encoder stage, shallowest first.
    pub fn encoder_ladder(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(String, (usize, usize))> = Vec::new();
        for e in self.entries.iter().filter(|e| e.path.starts_with("encoder.")) {
            let stage = e.path.split('.').nth(1).unwrap_or_default().to_string();
            match out.last_mut() {
                Some((s, hw)) if *s == stage => *hw = (e.height, e.width),
                _ => out.push((stage, (e.height, e.width))),
            }
        }
        out.into_iter().map(|(_, hw)| hw).collect()
    }
}

/// Borrowed weights of one convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvWeights<'a, T> {
    pub weight: &'a [T],
    pub bias: &'a [T],
}

#[derive(Debug, Clone, Copy)]
pub struct NormWeights<'a, T> {
    pub scale: &'a [T],
    pub shift: &'a [T],
}

/// Borrowed weights of a residual block; `skip` is the 1x1 projection, if any.
#[derive(Debug, Clone, Copy)]
pub struct BlockWeights<'a, T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub conv1: ConvWeights<'a, T>,
    pub norm1: NormWeights<'a, T>,
    pub conv2: ConvWeights<'a, T>,
    pub norm2: NormWeights<'a, T>,
    pub skip: Option<ConvWeights<'a, T>>,
}

struct BlockTape<T> {
    input: Tensor<T>,
    norm1: NormCache<T>,
    act1_in: Tensor<T>,
    act1: Tensor<T>,
    norm2: NormCache<T>,
    sum: Tensor<T>,
}

struct StageTape<T> {
    input: Tensor<T>,
    norm: NormCache<T>,
    act_in: Tensor<T>,
}

struct DecoderTape<T> {
    low: Tensor<T>,
    blocks: Vec<StageTape<T>>,
}

/// Activations retained by a training forward pass for [`ResEncUNet::backward`].
pub struct Tape<T> {
    encoder: Vec<Vec<BlockTape<T>>>,
    decoder: Vec<DecoderTape<T>>,
    head_input: Tensor<T>,
}

fn run_block<T: Real>(
    x: &Tensor<T>,
    w: &BlockWeights<'_, T>,
    stride: usize,
    eps: f64,
    slope: T,
    record: bool,
) -> (Tensor<T>, Option<BlockTape<T>>) {
    let g1 = ConvGeom::new(w.in_channels, w.out_channels, w.kernel, stride);
    let g2 = ConvGeom::new(w.out_channels, w.out_channels, w.kernel, 1);
    let h1 = conv2d_forward(x, w.conv1.weight, w.conv1.bias, g1);
    let (n1, c1) = instance_norm_forward(&h1, w.norm1.scale, w.norm1.shift, eps);
    let a1 = leaky_relu(&n1, slope);
    let h2 = conv2d_forward(&a1, w.conv2.weight, w.conv2.bias, g2);
    let (mut sum, c2) = instance_norm_forward(&h2, w.norm2.scale, w.norm2.shift, eps);
    match w.skip {
        Some(s) => {
            let gs = ConvGeom::new(w.in_channels, w.out_channels, 1, stride);
            sum.add_assign(&conv2d_forward(x, s.weight, s.bias, gs));
        }
        None => sum.add_assign(x),
    }
    let out = leaky_relu(&sum, slope);
    let tape = record.then(|| BlockTape {
        input: x.clone(),
        norm1: c1,
        act1_in: n1,
        act1: a1,
        norm2: c2,
        sum,
    });
    (out, tape)
}

/// Residual block: conv-norm-lrelu-conv-norm plus identity or projected skip, then lrelu.
pub fn residual_block<T: Real>(
    x: &Tensor<T>,
    weights: &BlockWeights<'_, T>,
    stride: usize,
    config: &NetworkConfig,
) -> Result<Tensor<T>> {
    if x.c != weights.in_channels {
        return Err(Error::Shape(format!(
            "block expects {} input channels, got {}",
            weights.in_channels, x.c
        )));
    }
    let needs_projection = weights.in_channels != weights.out_channels || stride != 1;
    if needs_projection != weights.skip.is_some() {
        return Err(Error::Shape(format!(
            "{} -> {} channels at stride {stride} {} a skip projection",
            weights.in_channels,
            weights.out_channels,
            if needs_projection { "requires" } else { "does not take" }
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    let (ci, co, k) = (weights.in_channels, weights.out_channels, weights.kernel);
    let lens_ok = weights.conv1.weight.len() == co * ci * k * k
        && weights.conv2.weight.len() == co * co * k * k
        && [weights.conv1.bias, weights.conv2.bias, weights.norm1.scale, weights.norm1.shift, weights.norm2.scale, weights.norm2.shift]
            .iter()
            .all(|s| s.len() == co)
        && weights.skip.is_none_or(|s| s.weight.len() == co * ci && s.bias.len() == co);
    if !lens_ok {
        return Err(Error::Shape(format!("block weights do not match {ci} -> {co} channels, kernel {k}")));
    }
    let slope = T::from_f64_lossy(config.negative_slope);
    Ok(run_block(x, weights, stride, config.norm_eps, slope, false).0)
}

/// Residual encoder U-Net: the execution plan for one [`NetworkConfig`].
#[derive(Debug, Clone)]
pub struct ResEncUNet {
    config: NetworkConfig,
    layout: ParamLayout,
    encoder: Vec<Vec<BlockPlan>>,
    decoder: Vec<DecoderPlan>,
    head: ConvSlot,
}

impl ResEncUNet {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let f = config.features_per_stage.clone();
        let k = config.kernel_size;
        let mut layout = ParamLayout::default();
        let mut encoder = Vec::new();
        let mut cin = config.input_channels;
        for (s, (&width, &blocks)) in f.iter().zip(&config.blocks_per_stage).enumerate() {
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let path = format!("encoder.stage{s}.block{b}");
                let conv1 = conv_slot(&mut layout, &format!("{path}.conv1"), ConvGeom::new(cin, width, k, stride));
                let norm1 = norm_slot(&mut layout, &format!("{path}.norm1"), width);
                let conv2 = conv_slot(&mut layout, &format!("{path}.conv2"), ConvGeom::new(width, width, k, 1));
                let norm2 = norm_slot(&mut layout, &format!("{path}.norm2"), width);
                let skip = (cin != width || stride != 1)
                    .then(|| conv_slot(&mut layout, &format!("{path}.skip"), ConvGeom::new(cin, width, 1, stride)));
                stage.push(BlockPlan {
                    path,
                    stride,
                    conv1,
                    norm1,
                    conv2,
                    norm2,
                    skip,
                });
                cin = width;
            }
            encoder.push(stage);
        }
        let mut decoder = Vec::new();
        for s in (0..f.len().saturating_sub(1)).rev() {
            let path = format!("decoder.stage{s}");
            let up_weight = layout.push(
                format!("{path}.upsample.weight"),
                vec![f[s + 1], f[s], 2, 2],
                ParamInit::Kaiming { fan_in: f[s + 1] },
            );
            let up_bias = layout.push(format!("{path}.upsample.bias"), vec![f[s]], ParamInit::Zeros);
            let mut blocks = Vec::new();
            for b in 0..config.decoder_blocks_per_stage {
                let bpath = format!("{path}.block{b}");
                let cin = if b == 0 { 2 * f[s] } else { f[s] };
                let conv = conv_slot(&mut layout, &format!("{bpath}.conv"), ConvGeom::new(cin, f[s], k, 1));
                let norm = norm_slot(&mut layout, &format!("{bpath}.norm"), f[s]);
                blocks.push((bpath, conv, norm));
            }
            decoder.push(DecoderPlan {
                path,
                stage: s,
                up_weight,
                up_bias,
                up_channels: f[s],
                blocks,
            });
        }
        let head = conv_slot(&mut layout, "head", ConvGeom::new(f[0], config.num_classes, 1, 1));
        Ok(ResEncUNet {
            config,
            layout,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn init_params<T: Real>(&self, seed: u64) -> NetworkParams<T> {
        NetworkParams::initialized(self.layout.clone(), |fan_in| self.config.init_std(fan_in), seed)
    }

    /// Parameters seeded from the config's own seed.
    pub fn default_params<T: Real>(&self) -> NetworkParams<T> {
        self.init_params(self.config.seed)
    }

    pub fn zero_params<T: Real>(&self) -> NetworkParams<T> {
        NetworkParams::zeros(self.layout.clone())
    }

    pub fn check_params<T: Real>(&self, params: &NetworkParams<T>) -> Result<()> {
        if params.layout != self.layout {
            return Err(Error::Shape(format!(
                "parameter layout ({} values) does not match the network ({} values)",
                params.len(),
                self.layout.total()
            )));
        }
        Ok(())
    }

    pub fn check_input<T: Real>(&self, x: &Tensor<T>) -> Result<()> {
        if x.c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, network expects {}",
                x.c, self.config.input_channels
            )));
        }
        let d = self.config.required_divisor();
        if x.n == 0 || x.h == 0 || x.w == 0 || x.h % d != 0 || x.w % d != 0 {
            return Err(Error::Shape(format!(
                "input extents {}x{} must be non-zero multiples of {d} for a {}-stage network",
                x.h,
                x.w,
                self.config.stages()
            )));
        }
        Ok(())
    }

    fn block_weights<'a, T: Real>(&self, b: &BlockPlan, v: &'a [T]) -> BlockWeights<'a, T> {
        let conv = |s: &ConvSlot| ConvWeights {
            weight: &v[s.weight.clone()],
            bias: &v[s.bias.clone()],
        };
        let norm = |s: &NormSlot| NormWeights {
            scale: &v[s.scale.clone()],
            shift: &v[s.shift.clone()],
        };
        BlockWeights {
            in_channels: b.conv1.geom.cin,
            out_channels: b.conv1.geom.cout,
            kernel: b.conv1.geom.kernel,
            conv1: conv(&b.conv1),
            norm1: norm(&b.norm1),
            conv2: conv(&b.conv2),
            norm2: norm(&b.norm2),
            skip: b.skip.as_ref().map(conv),
        }
    }

    fn run<T: Real>(
        &self,
        params: &NetworkParams<T>,
        x: &Tensor<T>,
        mut trace: Option<&mut ActivationShapeTrace>,
        record: bool,
    ) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        self.check_params(params)?;
        self.check_input(x)?;
        let v = params.values();
        let eps = self.config.norm_eps;
        let slope = T::from_f64_lossy(self.config.negative_slope);
        let mut tape = Tape {
            encoder: Vec::new(),
            decoder: Vec::new(),
            head_input: Tensor::zeros(0, 0, 0, 0),
        };
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut cur = x.clone();
        for stage in &self.encoder {
            let mut tapes = Vec::new();
            for b in stage {
                let (out, t) = run_block(&cur, &self.block_weights(b, v), b.stride, eps, slope, record);
                tapes.extend(t);
                if let Some(tr) = trace.as_deref_mut() {
                    tr.record(&b.path, &out);
                }
                cur = out;
            }
            tape.encoder.push(tapes);
            skips.push(cur.clone());
        }
        for d in &self.decoder {
            let up = upconv_forward(&cur, &v[d.up_weight.clone()], &v[d.up_bias.clone()], d.up_channels);
            if let Some(tr) = trace.as_deref_mut() {
                tr.record(&format!("{}.upsample", d.path), &up);
            }
            let low = std::mem::replace(&mut cur, Tensor::concat_channels(&up, &skips[d.stage]));
            let mut blocks = Vec::new();
            for (path, conv, norm) in &d.blocks {
                let h = conv2d_forward(&cur, &v[conv.weight.clone()], &v[conv.bias.clone()], conv.geom);
                let (n, cache) = instance_norm_forward(&h, &v[norm.scale.clone()], &v[norm.shift.clone()], eps);
                let out = leaky_relu(&n, slope);
                if let Some(tr) = trace.as_deref_mut() {
                    tr.record(path, &out);
                }
                let input = std::mem::replace(&mut cur, out);
                if record {
                    blocks.push(StageTape {
                        input,
                        norm: cache,
                        act_in: n,
                    });
                }
            }
            if record {
                tape.decoder.push(DecoderTape { low, blocks });
            }
        }
        let logits = conv2d_forward(&cur, &v[self.head.weight.clone()], &v[self.head.bias.clone()], self.head.geom);
        if let Some(tr) = trace.as_deref_mut() {
            tr.record("head", &logits);
        }
        if record {
            tape.head_input = cur;
        }
        Ok((logits, record.then_some(tape)))
    }

    /// Class logits, `batch x classes x H x W`.
    pub fn forward<T: Real>(&self, params: &NetworkParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(params, x, None, false)?.0)
    }

    pub fn forward_traced<T: Real>(
        &self,
        params: &NetworkParams<T>,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, ActivationShapeTrace)> {
        let mut trace = ActivationShapeTrace::default();
        let (logits, _) = self.run(params, x, Some(&mut trace), false)?;
        Ok((logits, trace))
    }

    pub fn forward_train<T: Real>(&self, params: &NetworkParams<T>, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        let (logits, tape) = self.run(params, x, None, true)?;
        Ok((logits, tape.expect("recorded tape")))
    }

    /// Flat parameter gradient of a scalar loss given its gradient wrt the logits.
    pub fn backward<T: Real>(&self, params: &NetworkParams<T>, tape: &Tape<T>, dlogits: &Tensor<T>) -> Result<Vec<T>> {
        self.check_params(params)?;
        if dlogits.shape()[1..] != [self.config.num_classes, tape.head_input.h, tape.head_input.w]
            || dlogits.n != tape.head_input.n
        {
            return Err(Error::Shape(format!("logit gradient shape {:?} does not match the tape", dlogits.shape())));
        }
        let v = params.values();
        let slope = T::from_f64_lossy(self.config.negative_slope);
        let mut grad = vec![T::zero(); v.len()];

        let h = &self.head;
        let (dw, db) = pair_mut(&mut grad, &h.weight, &h.bias);
        let mut g = conv2d_backward(&tape.head_input, &v[h.weight.clone()], h.geom, dlogits, dw, db, true)
            .expect("input gradient");

        let mut enc_grad: Vec<Option<Tensor<T>>> = vec![None; self.encoder.len()];
        let accumulate = |slot: &mut Option<Tensor<T>>, t: Tensor<T>| match slot {
            Some(acc) => acc.add_assign(&t),
            None => *slot = Some(t),
        };
        for (d, dt) in self.decoder.iter().zip(&tape.decoder).rev() {
            for ((_, conv, norm), st) in d.blocks.iter().zip(&dt.blocks).rev() {
                g = leaky_relu_backward(&st.act_in, &g, slope);
                let (dg, dbeta) = pair_mut(&mut grad, &norm.scale, &norm.shift);
                g = instance_norm_backward(&st.norm, &v[norm.scale.clone()], &g, dg, dbeta);
                let (dw, db) = pair_mut(&mut grad, &conv.weight, &conv.bias);
                g = conv2d_backward(&st.input, &v[conv.weight.clone()], conv.geom, &g, dw, db, true)
                    .expect("input gradient");
            }
            let (dup, dskip) = g.split_channels(d.up_channels);
            accumulate(&mut enc_grad[d.stage], dskip);
            let (dw, db) = pair_mut(&mut grad, &d.up_weight, &d.up_bias);
            g = upconv_backward(&dt.low, &v[d.up_weight.clone()], &dup, dw, db);
        }
        let last = enc_grad.len() - 1;
        accumulate(&mut enc_grad[last], g);

        for s in (0..self.encoder.len()).rev() {
            let mut g = enc_grad[s].take().expect("stage gradient");
            for (b, bt) in self.encoder[s].iter().zip(&tape.encoder[s]).rev() {
                g = self.block_backward(b, bt, v, &mut grad, &g, slope);
            }
            if s > 0 {
                accumulate(&mut enc_grad[s - 1], g);
            }
        }
        Ok(grad)
    }

    fn block_backward<T: Real>(
        &self,
        b: &BlockPlan,
        t: &BlockTape<T>,
        v: &[T],
        grad: &mut [T],
        dout: &Tensor<T>,
        slope: T,
    ) -> Tensor<T> {
        let dsum = leaky_relu_backward(&t.sum, dout, slope);
        let (dg, dbeta) = pair_mut(grad, &b.norm2.scale, &b.norm2.shift);
        let d = instance_norm_backward(&t.norm2, &v[b.norm2.scale.clone()], &dsum, dg, dbeta);
        let (dw, db) = pair_mut(grad, &b.conv2.weight, &b.conv2.bias);
        let d = conv2d_backward(&t.act1, &v[b.conv2.weight.clone()], b.conv2.geom, &d, dw, db, true).expect("input gradient");
        let d = leaky_relu_backward(&t.act1_in, &d, slope);
        let (dg, dbeta) = pair_mut(grad, &b.norm1.scale, &b.norm1.shift);
        let d = instance_norm_backward(&t.norm1, &v[b.norm1.scale.clone()], &d, dg, dbeta);
        let (dw, db) = pair_mut(grad, &b.conv1.weight, &b.conv1.bias);
        let mut dx = conv2d_backward(&t.input, &v[b.conv1.weight.clone()], b.conv1.geom, &d, dw, db, true)
            .expect("input gradient");
        match &b.skip {
            Some(s) => {
                let (dw, db) = pair_mut(grad, &s.weight, &s.bias);
                let ds = conv2d_backward(&t.input, &v[s.weight.clone()], s.geom, &dsum, dw, db, true).expect("input gradient");
                dx.add_assign(&ds);
            }
            None => dx.add_assign(&dsum),
        }
        dx
    }
}

/// Per-pixel softmax over the class axis, with max subtraction.
pub fn softmax_probabilities<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let mut out = logits.clone();
    let p = logits.plane();
    let c = logits.c;
    for n in 0..logits.n {
        let s = out.sample_mut(n);
        for i in 0..p {
            let max = (0..c).map(|k| s[k * p + i]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for k in 0..c {
                let e = (s[k * p + i] - max).exp();
                s[k * p + i] = e;
                total += e;
            }
            for k in 0..c {
                s[k * p + i] = s[k * p + i] / total;
            }
        }
    }
    out
}

/// Gradient wrt logits from the gradient wrt softmax probabilities.
pub fn softmax_backward<T: Real>(probs: &Tensor<T>, dprobs: &Tensor<T>) -> Tensor<T> {
    assert_eq!(probs.shape(), dprobs.shape());
    let mut out = dprobs.clone();
    let p = probs.plane();
    let c = probs.c;
    for n in 0..probs.n {
        let ps = probs.sample(n);
        let ds = out.sample_mut(n);
        for i in 0..p {
            let dot: T = (0..c).map(|k| ps[k * p + i] * ds[k * p + i]).sum();
            for k in 0..c {
                ds[k * p + i] = ps[k * p + i] * (ds[k * p + i] - dot);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::config::parameter_count;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(stages: usize) -> NetworkConfig {
        NetworkConfig {
            features_per_stage: (0..stages).map(|s| 2 + s).collect(),
            blocks_per_stage: vec![1; stages],
            ..NetworkConfig::toy()
        }
    }

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn toy_count_matches_allocation_walk() {
        for cfg in [NetworkConfig::toy(), tiny(1), tiny(2), NetworkConfig::full()] {
            let net = ResEncUNet::new(cfg.clone()).unwrap();
            let walked: usize = net.layout().entries().iter().map(|e| e.shape.iter().product::<usize>()).sum();
            assert_eq!(walked, parameter_count(&cfg));
            assert_eq!(walked, net.layout().total());
        }
    }

    #[test]
    fn paths_are_unique_and_stable() {
        let net = ResEncUNet::new(NetworkConfig::toy()).unwrap();
        let paths: Vec<&str> = net.layout().entries().iter().map(|e| e.path.as_str()).collect();
        let set: std::collections::BTreeSet<_> = paths.iter().collect();
        assert_eq!(set.len(), paths.len());
        for p in [
            "encoder.stage0.block0.conv1.weight",
            "encoder.stage0.block0.skip.weight",
            "encoder.stage1.block0.norm2.bias",
            "decoder.stage1.upsample.weight",
            "decoder.stage0.block0.conv.weight",
            "head.bias",
        ] {
            assert!(set.contains(&p), "missing {p}");
        }
        assert_eq!(net.layout().find("decoder.stage0.block0.conv.weight").unwrap().shape, vec![8, 16, 3, 3]);
    }

    #[test]
    fn toy_shapes_and_ladder() {
        let net = ResEncUNet::new(NetworkConfig::toy()).unwrap();
        let params = net.init_params::<f32>(1);
        let x = Tensor::zeros(1, 1, 64, 64);
        let (y, trace) = net.forward_traced(&params, &x).unwrap();
        assert_eq!(y.shape(), [1, 2, 64, 64]);
        let b = trace.bottleneck().unwrap();
        assert_eq!((b.channels, b.height, b.width), (32, 16, 16));
        assert_eq!(trace.encoder_ladder(), vec![(64, 64), (32, 32), (16, 16)]);
        assert_eq!(trace.entries.last().unwrap().path, "head");
    }

    #[test]
    fn indivisible_input_names_divisor() {
        let net = ResEncUNet::new(NetworkConfig::toy()).unwrap();
        let params = net.zero_params::<f32>();
        let err = net.forward(&params, &Tensor::zeros(1, 1, 62, 64)).unwrap_err();
        assert!(matches!(err, Error::Shape(ref m) if m.contains("multiples of 4")), "{err}");
        let err = net.forward(&params, &Tensor::zeros(1, 2, 64, 64)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn zero_params_give_equal_logits() {
        let net = ResEncUNet::new(NetworkConfig::toy()).unwrap();
        let params = net.zero_params::<f32>();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(&mut rng, 2, 1, 16, 16).cast::<f32>();
        let y = net.forward(&params, &x).unwrap();
        let p = softmax_probabilities(&y);
        assert!(p.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = ResEncUNet::new(NetworkConfig::toy()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_tensor(&mut rng, 2, 1, 32, 32).cast::<f32>();
        let a = net.forward(&net.init_params::<f32>(5), &x).unwrap();
        let b = net.forward(&net.init_params::<f32>(5), &x).unwrap();
        assert_eq!(a, b);
        let c = net.forward(&net.init_params::<f32>(6), &x).unwrap();
        assert_ne!(a, c);
    }

    fn block_for(cin: usize, cout: usize, k: usize, v: &[f64]) -> BlockWeights<'_, f64> {
        let (w1, rest) = v.split_at(cout * cin * k * k);
        let (b1, rest) = rest.split_at(cout);
        let (w2, rest) = rest.split_at(cout * cout * k * k);
        let (b2, rest) = rest.split_at(cout);
        let (g1, rest) = rest.split_at(cout);
        let (s1, rest) = rest.split_at(cout);
        let (g2, rest) = rest.split_at(cout);
        let (s2, rest) = rest.split_at(cout);
        let skip = (cin != cout).then(|| {
            let (sw, sb) = rest.split_at(cout * cin);
            ConvWeights { weight: sw, bias: &sb[..cout] }
        });
        BlockWeights {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            conv1: ConvWeights { weight: w1, bias: b1 },
            norm1: NormWeights { scale: g1, shift: s1 },
            conv2: ConvWeights { weight: w2, bias: b2 },
            norm2: NormWeights { scale: g2, shift: s2 },
            skip,
        }
    }

    #[test]
    fn residual_block_examples() {
        let cfg = NetworkConfig::toy();
        let zeros = vec![0.0; 4000];
        let w = block_for(4, 4, 3, &zeros);
        let y = residual_block(&Tensor::zeros(1, 4, 8, 8), &w, 1, &cfg).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, 1, 4, 8, 8);
        let y = residual_block(&x, &w, 1, &cfg).unwrap();
        assert_eq!(y, leaky_relu(&x, 0.01));
        let w2 = block_for(4, 6, 3, &zeros);
        let y = residual_block(&random_tensor(&mut rng, 1, 4, 64, 64), &w2, 2, &cfg).unwrap();
        assert_eq!(y.shape(), [1, 6, 32, 32]);
        assert!(matches!(residual_block(&random_tensor(&mut rng, 1, 3, 8, 8), &w, 1, &cfg), Err(Error::Shape(_))));
    }

    fn loss_of(net: &ResEncUNet, params: &NetworkParams<f64>, x: &Tensor<f64>, coef: &[f64]) -> f64 {
        let y = net.forward(params, x).unwrap();
        y.data.iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    fn check_gradients(cfg: NetworkConfig, hw: usize, seed: u64) {
        let net = ResEncUNet::new(cfg).unwrap();
        let mut params = net.init_params::<f64>(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        // perturb zero-initialized biases and affine params so every path is exercised
        for v in params.values_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
        let x = random_tensor(&mut rng, 2, 1, hw, hw);
        let (y, tape) = net.forward_train(&params, &x).unwrap();
        let coef: Vec<f64> = (0..y.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy = Tensor::from_vec(y.n, y.c, y.h, y.w, coef.clone());
        let grad = net.backward(&params, &tape, &dy).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let orig = params.values()[i];
            params.values_mut()[i] = orig + h;
            let lp = loss_of(&net, &params, &x, &coef);
            params.values_mut()[i] = orig - h;
            let lm = loss_of(&net, &params, &x, &coef);
            params.values_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_central_differences_single_stage() {
        check_gradients(tiny(1), 4, 1);
    }

    #[test]
    fn gradients_match_central_differences_two_stages() {
        check_gradients(tiny(2), 4, 2);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_probabilities(&Tensor::from_vec(1, 2, 1, 2, vec![0.0, 1000.0, 0.0, 0.0f64]));
        assert_eq!(p.data, vec![0.5, 1.0, 0.5, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = random_tensor(&mut rng, 2, 2, 4, 4);
        let mut shifted = l.clone();
        shifted.data.iter_mut().for_each(|v| *v += 37.5);
        let (a, b) = (softmax_probabilities(&l), softmax_probabilities(&shifted));
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-7);
        }
        for i in 0..16 {
            assert!((a.data[i] + a.data[16 + i] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = random_tensor(&mut rng, 1, 3, 2, 2);
        let coef: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |l: &Tensor<f64>| softmax_probabilities(l).data.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
        let g = softmax_backward(&softmax_probabilities(&l), &Tensor::from_vec(1, 3, 2, 2, coef.clone()));
        for i in 0..12 {
            let (mut p, mut m) = (l.clone(), l.clone());
            p.data[i] += 1e-6;
            m.data[i] -= 1e-6;
            assert!(((f(&p) - f(&m)) / 2e-6 - g.data[i]).abs() < 1e-8);
        }
    }
}
