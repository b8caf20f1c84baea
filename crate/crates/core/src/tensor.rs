//! Reference forward execution.
//!
//! A deliberately simple interpreter used to prove that graph rewrites
//! preserve the network function — not to be fast.  Values are stored as
//! `f32` but every reduction (convolution, matmul, averaging, summation)
//! accumulates in `f64`, so results are deterministic and insensitive to
//! summation order at the tolerances the equivalence tests use.
//!
//! Conventions, chosen once and used everywhere:
//! * `Conv2D` is cross-correlation (no kernel flip) with zero "same"
//!   padding: the output spans `ceil(in/stride)` and the total padding
//!   `max((out-1)*stride + k - in, 0)` is split with the smaller half first.
//! * Pools use valid windows only (`floor(in/stride)` outputs); windows are
//!   clamped at the border and `AvgPool2D` divides by the cells actually
//!   covered.
//! * `BatchNorm` is inference-mode with epsilon `1e-5`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, LayerKind, LayerSpec, ModelGraph, Shape};

const BN_EPSILON: f64 = 1e-5;

/// A dense value tensor in channel-major `[c][h][w]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Tensor {
        Tensor { shape, data: vec![0.0; shape.elems() as usize] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Tensor {
        assert_eq!(data.len(), shape.elems() as usize, "payload does not fill shape");
        Tensor { shape, data }
    }

    /// Standard-normal random tensor; the stimulus for equivalence checks.
    pub fn random<R: Rng>(shape: Shape, rng: &mut R) -> Tensor {
        let normal = Normal::new(0.0f64, 1.0).expect("valid stddev");
        let data = (0..shape.elems()).map(|_| normal.sample(rng) as f32).collect();
        Tensor { shape, data }
    }

    /// Serialize as a raw fixture file: a dims header of three `u32` values
    /// (`c`, `h`, `w`), then the payload as `f32`, all little-endian, in the
    /// tensor's own `[c][h][w]` order.
    pub fn to_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        for dim in [self.shape.c, self.shape.h, self.shape.w] {
            out.extend_from_slice(&dim.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse the format written by [`Tensor::to_raw`].
    pub fn from_raw(bytes: &[u8]) -> Result<Tensor> {
        if bytes.len() < 12 {
            return Err(Error::Document("raw tensor shorter than its dims header".into()));
        }
        let dim = |i: usize| {
            u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().expect("4 bytes"))
        };
        let shape = Shape { c: dim(0), h: dim(1), w: dim(2) };
        let payload = &bytes[12..];
        if payload.len() != shape.elems() as usize * 4 {
            return Err(Error::Document(format!(
                "raw tensor payload is {} bytes, shape {shape} needs {}",
                payload.len(),
                shape.elems() * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Ok(Tensor { shape, data })
    }

    #[inline]
    fn at(&self, c: u32, y: u32, x: u32) -> f32 {
        self.data[((c * self.shape.h + y) * self.shape.w + x) as usize]
    }

    /// Largest elementwise deviation from `other`, for tolerance checks.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "comparing tensors of different shape");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Elementwise closeness: `|a - b| <= atol + rtol * |b|` for every pair,
    /// with `other` as the reference.
    pub fn approx_eq(&self, other: &Tensor, rtol: f32, atol: f32) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| (a - b).abs() <= atol + rtol * b.abs())
    }
}

/// Run `input` through the graph and return the output node's tensor.
///
/// The graph must validate, every `Conv2D`/`FullyConnected`/`BatchNorm` node
/// must carry weights, and `input` must match the input node's declared
/// shape.  Intermediate tensors are dropped as soon as their last consumer
/// has run.
pub fn forward(graph: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    let shapes = infer_shapes(graph)?;
    let expected = shapes[&graph.input_id];
    if input.shape != expected {
        return Err(Error::InputShape {
            expected: expected.to_string(),
            got: input.shape.to_string(),
        });
    }

    // Remaining-consumer counts drive eviction of intermediates.
    let mut pending: BTreeMap<_, usize> = BTreeMap::new();
    for node in graph.nodes() {
        for &src in &node.inputs {
            *pending.entry(src).or_insert(0) += 1;
        }
    }

    let mut values: BTreeMap<u32, Tensor> = BTreeMap::new();
    let mut result = None;
    for id in graph.topo_order()? {
        let node = graph.node(id).expect("id from topo order");
        let inputs: Vec<&Tensor> = node.inputs.iter().map(|src| &values[src]).collect();
        let out = eval_node(node, &inputs, shapes[&id], input)?;
        if id == graph.output_id {
            result = Some(out.clone());
        }
        values.insert(id, out);
        for &src in &node.inputs {
            let n = pending.get_mut(&src).expect("counted above");
            *n -= 1;
            if *n == 0 {
                values.remove(&src);
            }
        }
    }
    Ok(result.expect("validated graph has an output node"))
}

fn weights_of(node: &LayerSpec) -> Result<&[f32]> {
    node.weights
        .as_ref()
        .map(|w| w.data.as_slice())
        .ok_or(Error::WeightMismatch { node: node.id, msg: "has no weights".into() })
}

fn eval_node(
    node: &LayerSpec,
    inputs: &[&Tensor],
    out_shape: Shape,
    external: &Tensor,
) -> Result<Tensor> {
    let out = match node.kind {
        LayerKind::Input => external.clone(),
        LayerKind::Output | LayerKind::ReLU => {
            let x = inputs[0];
            if node.kind == LayerKind::ReLU {
                Tensor {
                    shape: x.shape,
                    data: x.data.iter().map(|&v| v.max(0.0)).collect(),
                }
            } else {
                (*x).clone()
            }
        }
        LayerKind::Conv2D => conv2d(node, inputs[0], out_shape)?,
        LayerKind::FullyConnected => fully_connected(node, inputs[0], out_shape)?,
        LayerKind::BatchNorm => batch_norm(node, inputs[0])?,
        LayerKind::MaxPool2D | LayerKind::AvgPool2D => pool(node, inputs[0], out_shape),
        LayerKind::Add => {
            let mut acc = vec![0.0f64; out_shape.elems() as usize];
            for t in inputs {
                for (a, &v) in acc.iter_mut().zip(&t.data) {
                    *a += f64::from(v);
                }
            }
            Tensor { shape: out_shape, data: acc.into_iter().map(|v| v as f32).collect() }
        }
        LayerKind::Concat => {
            let mut data = Vec::with_capacity(out_shape.elems() as usize);
            for t in inputs {
                data.extend_from_slice(&t.data);
            }
            Tensor { shape: out_shape, data }
        }
        LayerKind::Slice => {
            let x = inputs[0];
            let start = node.c_start.unwrap();
            let plane = (x.shape.h * x.shape.w) as usize;
            let lo = start as usize * plane;
            let hi = lo + out_shape.elems() as usize;
            Tensor { shape: out_shape, data: x.data[lo..hi].to_vec() }
        }
    };
    debug_assert_eq!(out.shape, out_shape);
    Ok(out)
}

fn conv2d(node: &LayerSpec, x: &Tensor, out_shape: Shape) -> Result<Tensor> {
    let w = weights_of(node)?;
    let (k1, k2, stride) = (node.k1.unwrap(), node.k2.unwrap(), node.stride.unwrap());
    let (c, j, groups) = (node.c.unwrap(), node.j.unwrap(), node.conv_groups());
    let (cg, jg) = (c / groups, j / groups);
    let (in_h, in_w) = (x.shape.h, x.shape.w);
    let (out_h, out_w) = (out_shape.h, out_shape.w);
    // Same padding, smaller half before the origin.
    let pad_h = ((out_h - 1) * stride + k1).saturating_sub(in_h);
    let pad_w = ((out_w - 1) * stride + k2).saturating_sub(in_w);
    let (pad_top, pad_left) = (pad_h / 2, pad_w / 2);

    let mut data = vec![0.0f32; out_shape.elems() as usize];
    for jo in 0..j {
        let group = jo / jg;
        let ci_base = group * cg;
        for oy in 0..out_h {
            let y0 = (oy * stride) as i64 - i64::from(pad_top);
            for ox in 0..out_w {
                let x0 = (ox * stride) as i64 - i64::from(pad_left);
                let mut acc = 0.0f64;
                for ky in 0..k1 {
                    let y = y0 + i64::from(ky);
                    if y < 0 || y >= i64::from(in_h) {
                        continue;
                    }
                    for kx in 0..k2 {
                        let xx = x0 + i64::from(kx);
                        if xx < 0 || xx >= i64::from(in_w) {
                            continue;
                        }
                        for ci in 0..cg {
                            let tap = w[(((ky * k2 + kx) * cg + ci) * j + jo) as usize];
                            let v = x.at(ci_base + ci, y as u32, xx as u32);
                            acc += f64::from(tap) * f64::from(v);
                        }
                    }
                }
                data[((jo * out_h + oy) * out_w + ox) as usize] = acc as f32;
            }
        }
    }
    Ok(Tensor { shape: out_shape, data })
}

fn fully_connected(node: &LayerSpec, x: &Tensor, out_shape: Shape) -> Result<Tensor> {
    let w = weights_of(node)?;
    let (c, j) = (node.c.unwrap() as usize, node.j.unwrap() as usize);
    let mut data = Vec::with_capacity(j);
    for jo in 0..j {
        let mut acc = 0.0f64;
        for (ci, &v) in x.data.iter().enumerate().take(c) {
            acc += f64::from(v) * f64::from(w[ci * j + jo]);
        }
        data.push(acc as f32);
    }
    Ok(Tensor { shape: out_shape, data })
}

fn batch_norm(node: &LayerSpec, x: &Tensor) -> Result<Tensor> {
    let w = weights_of(node)?;
    let c = node.c.unwrap() as usize;
    let (scale, rest) = w.split_at(c);
    let (shift, rest) = rest.split_at(c);
    let (mean, var) = rest.split_at(c);
    let plane = (x.shape.h * x.shape.w) as usize;
    let mut data = Vec::with_capacity(x.data.len());
    for ch in 0..c {
        let inv = f64::from(scale[ch]) / (f64::from(var[ch]) + BN_EPSILON).sqrt();
        let base = f64::from(shift[ch]) - f64::from(mean[ch]) * inv;
        for &v in &x.data[ch * plane..(ch + 1) * plane] {
            data.push((f64::from(v) * inv + base) as f32);
        }
    }
    Ok(Tensor { shape: x.shape, data })
}

fn pool(node: &LayerSpec, x: &Tensor, out_shape: Shape) -> Tensor {
    let (k1, k2, stride) = (node.k1.unwrap(), node.k2.unwrap(), node.stride.unwrap());
    let averaging = node.kind == LayerKind::AvgPool2D;
    let mut data = Vec::with_capacity(out_shape.elems() as usize);
    for ch in 0..out_shape.c {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                let y1 = (oy * stride + k1).min(x.shape.h);
                let x1 = (ox * stride + k2).min(x.shape.w);
                let mut acc = f64::NEG_INFINITY;
                let mut sum = 0.0f64;
                let mut count = 0u32;
                for y in oy * stride..y1 {
                    for xx in ox * stride..x1 {
                        let v = f64::from(x.at(ch, y, xx));
                        acc = acc.max(v);
                        sum += v;
                        count += 1;
                    }
                }
                data.push(if averaging { (sum / f64::from(count)) as f32 } else { acc as f32 });
            }
        }
    }
    Tensor { shape: out_shape, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Weights;
    use crate::rng::substream;

    fn run_single(layer: LayerSpec, input_shape: Shape, input: Vec<f32>) -> Tensor {
        let mut layer = layer;
        layer.id = 1;
        layer.inputs = vec![0];
        let g = ModelGraph::new(
            "single",
            0,
            2,
            vec![
                LayerSpec::input(0, input_shape.c, input_shape.h, input_shape.w),
                layer,
                LayerSpec::output(2, 1),
            ],
        );
        forward(&g, &Tensor::from_vec(input_shape, input)).unwrap()
    }

    #[test]
    fn conv_matches_hand_computation() {
        // 3x3 ones kernel over [1..9], same padding: each output is the sum
        // of the 3x3 neighborhood, zeros outside.
        let mut conv = LayerSpec::conv(1, 0, 1, 1, 3, 1);
        conv.weights = Some(Weights::new(vec![3, 3, 1, 1], vec![1.0; 9]));
        let out = run_single(
            conv,
            Shape { c: 1, h: 3, w: 3 },
            (1..=9).map(|v| v as f32).collect(),
        );
        assert_eq!(out.data, vec![12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0]);
    }

    #[test]
    fn strided_conv_matches_hand_computation() {
        // Stride 2 over 3x3: out extent ceil(3/2) = 2, one padding row/col
        // before the origin.
        let mut conv = LayerSpec::conv(1, 0, 1, 1, 3, 2);
        conv.weights = Some(Weights::new(vec![3, 3, 1, 1], vec![1.0; 9]));
        let out = run_single(
            conv,
            Shape { c: 1, h: 3, w: 3 },
            (1..=9).map(|v| v as f32).collect(),
        );
        assert_eq!(out.shape, Shape { c: 1, h: 2, w: 2 });
        assert_eq!(out.data, vec![12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv_is_cross_correlation() {
        // An asymmetric kernel distinguishes correlation from convolution:
        // tap (0,0) must multiply the sample up-left of the center.
        let mut taps = vec![0.0; 9];
        taps[0] = 1.0; // ky=0, kx=0
        let mut conv = LayerSpec::conv(1, 0, 1, 1, 3, 1);
        conv.weights = Some(Weights::new(vec![3, 3, 1, 1], taps));
        let out = run_single(
            conv,
            Shape { c: 1, h: 3, w: 3 },
            (1..=9).map(|v| v as f32).collect(),
        );
        // out[1][1] sees in[0][0] = 1; a flipped kernel would see in[2][2].
        assert_eq!(out.at(0, 1, 1), 1.0);
        assert_eq!(out.at(0, 2, 2), 5.0);
    }

    #[test]
    fn depthwise_conv_applies_per_channel_taps() {
        let mut conv = LayerSpec::conv_grouped(1, 0, 2, 2, 1, 1, 2);
        conv.weights = Some(Weights::new(vec![1, 1, 1, 2], vec![2.0, 3.0]));
        let out = run_single(
            conv,
            Shape { c: 2, h: 1, w: 2 },
            vec![1.0, 2.0, 10.0, 20.0],
        );
        assert_eq!(out.data, vec![2.0, 4.0, 30.0, 60.0]);
    }

    #[test]
    fn fully_connected_matches_hand_computation() {
        let mut fc = LayerSpec::fully_connected(1, 0, 2, 2);
        // Row-major [c, j]: rows are input features.
        fc.weights = Some(Weights::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let out = run_single(fc, Shape { c: 2, h: 1, w: 1 }, vec![1.0, 2.0]);
        assert_eq!(out.data, vec![7.0, 10.0]);
    }

    #[test]
    fn pools_match_hand_computation() {
        let input: Vec<f32> = (1..=16).map(|v| v as f32).collect();
        let max = run_single(
            LayerSpec::max_pool(1, 0, 2, 2),
            Shape { c: 1, h: 4, w: 4 },
            input.clone(),
        );
        assert_eq!(max.data, vec![6.0, 8.0, 14.0, 16.0]);
        let avg = run_single(LayerSpec::avg_pool(1, 0, 2, 2), Shape { c: 1, h: 4, w: 4 }, input);
        assert_eq!(avg.data, vec![3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn batch_norm_matches_closed_form() {
        let mut bn = LayerSpec::batch_norm(1, 0, 1);
        // scale 2, shift 1, mean 1, var 4 -> y = 2*(x-1)/sqrt(4+eps) + 1,
        // so x = 3 maps to (almost exactly) 3.
        bn.weights = Some(Weights::new(vec![4, 1], vec![2.0, 1.0, 1.0, 4.0]));
        let out = run_single(bn, Shape { c: 1, h: 1, w: 1 }, vec![3.0]);
        assert!((out.data[0] - 3.0).abs() < 1e-5, "got {}", out.data[0]);
    }

    #[test]
    fn relu_add_concat_slice_behave() {
        let g = ModelGraph::new(
            "mix",
            0,
            5,
            vec![
                LayerSpec::input(0, 2, 1, 1),
                LayerSpec::relu(1, 0),
                LayerSpec::slice(2, 0, 1, 1),
                LayerSpec::concat(3, vec![1, 2]),
                LayerSpec::add(4, vec![3, 3]),
                LayerSpec::output(5, 4),
            ],
        );
        let out = forward(&g, &Tensor::from_vec(Shape { c: 2, h: 1, w: 1 }, vec![-1.0, 2.0]))
            .unwrap();
        // relu -> [0, 2]; slice channel 1 -> [2]; concat -> [0, 2, 2]; doubled.
        assert_eq!(out.data, vec![0.0, 4.0, 4.0]);
    }

    #[test]
    fn forward_shapes_agree_with_inference() {
        let mut g = ModelGraph::new(
            "agree",
            0,
            6,
            vec![
                LayerSpec::input(0, 3, 7, 7),
                LayerSpec::conv(1, 0, 3, 4, 3, 2),
                LayerSpec::batch_norm(2, 1, 4),
                LayerSpec::relu(3, 2),
                LayerSpec::avg_pool(4, 3, 2, 2),
                LayerSpec::fully_connected(5, 4, 16, 5),
                LayerSpec::output(6, 5),
            ],
        );
        g.init_missing_weights(&mut substream(9, "test"));
        let shapes = infer_shapes(&g).unwrap();
        let out = forward(
            &g,
            &Tensor::random(shapes[&g.input_id], &mut substream(9, "stimulus")),
        )
        .unwrap();
        assert_eq!(out.shape, shapes[&g.output_id]);
    }

    #[test]
    fn missing_weights_are_an_error() {
        let g = ModelGraph::new(
            "bare",
            0,
            2,
            vec![
                LayerSpec::input(0, 1, 2, 2),
                LayerSpec::conv(1, 0, 1, 1, 3, 1),
                LayerSpec::output(2, 1),
            ],
        );
        let err = forward(&g, &Tensor::zeros(Shape { c: 1, h: 2, w: 2 })).unwrap_err();
        assert!(matches!(err, Error::WeightMismatch { node: 1, .. }));
    }

    #[test]
    fn wrong_input_shape_is_an_error() {
        let mut g = ModelGraph::new(
            "shape",
            0,
            2,
            vec![
                LayerSpec::input(0, 1, 2, 2),
                LayerSpec::relu(1, 0),
                LayerSpec::output(2, 1),
            ],
        );
        g.init_missing_weights(&mut substream(0, "test"));
        let err = forward(&g, &Tensor::zeros(Shape { c: 2, h: 2, w: 2 })).unwrap_err();
        assert!(matches!(err, Error::InputShape { .. }));
    }

    #[test]
    fn raw_round_trip_is_identity() {
        let t = Tensor::random(Shape { c: 3, h: 5, w: 4 }, &mut substream(0, "raw"));
        let back = Tensor::from_raw(&t.to_raw()).unwrap();
        assert_eq!(back.shape, t.shape);
        assert_eq!(back.data, t.data);
    }

    #[test]
    fn raw_layout_is_dims_header_then_little_endian_payload() {
        let t = Tensor::from_vec(Shape { c: 1, h: 1, w: 2 }, vec![1.0, -2.5]);
        let bytes = t.to_raw();
        assert_eq!(&bytes[..12], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let t = Tensor::from_vec(Shape { c: 1, h: 2, w: 2 }, vec![0.0; 4]);
        let bytes = t.to_raw();
        assert!(matches!(Tensor::from_raw(&bytes[..8]), Err(Error::Document(_))));
        assert!(matches!(
            Tensor::from_raw(&bytes[..bytes.len() - 4]),
            Err(Error::Document(_))
        ));
    }
}
