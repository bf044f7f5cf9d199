//! Trainable per-point placeability: a Fourier feature encoder feeding a
//! small dense stack with a logistic head, trained with weighted binary
//! cross-entropy by plain mini-batch gradient descent.
//!
//! The input scaling (x, y by 1/100, z by 1/10) keeps the lowest encoder
//! frequency under one period across the operating range, so the encoding
//! stays injective where scans actually live.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::ground::GroundLabels;

/// Default encoder order.
pub const DEFAULT_FOURIER_ORDER: usize = 10;
/// Width of the three hidden layers.
pub const HIDDEN_WIDTH: usize = 64;
/// Predictions are clamped to [CLAMP, 1 - CLAMP] inside the loss.
pub const PRED_CLAMP: f64 = 1e-7;

const RAW_FIELDS: usize = 4;
const FIELD_SCALES: [f64; RAW_FIELDS] = [1.0 / 100.0, 1.0 / 100.0, 1.0 / 10.0, 1.0];
const FORWARD_CHUNK: usize = 1024;

/// Encoded feature width for a given order: each of the four fields
/// contributes itself plus (sin, cos) pairs for orders 0..L-1.
pub fn encoded_dim(order: usize) -> usize {
    RAW_FIELDS + 8 * order
}

fn encode_into(p: &Point, order: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), encoded_dim(order));
    let mut k = 0;
    for (field, scale) in [p.x, p.y, p.z, p.r].into_iter().zip(FIELD_SCALES) {
        let u = field * scale;
        out[k] = u;
        k += 1;
        // sin/cos of 2^j * pi * u via angle doubling: one sin_cos call per
        // field, exact doublings afterwards.
        let (mut s, mut c) = (PI * u).sin_cos();
        out[k] = s;
        out[k + 1] = c;
        k += 2;
        for _ in 1..order {
            let s2 = 2.0 * s * c;
            let c2 = c * c - s * s;
            s = s2;
            c = c2;
            out[k] = s;
            out[k + 1] = c;
            k += 2;
        }
    }
}

/// Fourier-feature encoding of one point, field-major: for each scaled
/// field `u` emit `u`, then `sin(2^k pi u), cos(2^k pi u)` for k = 0..L-1.
pub fn fourier_encode(p: &Point, order: usize) -> Vec<f64> {
    assert!(order >= 1, "encoder order must be >= 1");
    let mut out = vec![0.0; encoded_dim(order)];
    encode_into(p, order, &mut out);
    out
}

fn encode_batch(points: &[Point], order: usize, out: &mut Array2<f64>) {
    for (i, p) in points.iter().enumerate() {
        encode_into(
            p,
            order,
            out.row_mut(i).into_slice().expect("row-major layout"),
        );
    }
}

/// One dense layer; weights are input-major (in_dim x out_dim).
#[derive(Clone, Debug, PartialEq)]
struct Dense {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            weights: Array2::zeros((in_dim, out_dim)),
            bias: Array1::zeros(out_dim),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fourier encoder order plus the dense stack
/// `(4 + 8L) -> 64 -> 64 -> 64 -> 1`, rectifier on hidden layers and a
/// logistic output.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaceabilityModel {
    fourier_order: usize,
    layers: Vec<Dense>,
}

impl PlaceabilityModel {
    /// All-zero weights: every prediction is exactly 0.5.
    pub fn zeros(fourier_order: usize) -> Self {
        assert!(fourier_order >= 1, "encoder order must be >= 1");
        let d = encoded_dim(fourier_order);
        PlaceabilityModel {
            fourier_order,
            layers: vec![
                Dense::zeros(d, HIDDEN_WIDTH),
                Dense::zeros(HIDDEN_WIDTH, HIDDEN_WIDTH),
                Dense::zeros(HIDDEN_WIDTH, HIDDEN_WIDTH),
                Dense::zeros(HIDDEN_WIDTH, 1),
            ],
        }
    }

    /// Seeded uniform initialization scaled by fan-in + fan-out.
    pub fn init(fourier_order: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(fourier_order);
        for layer in &mut model.layers {
            let (fan_in, fan_out) = layer.weights.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in layer.weights.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        model
    }

    pub fn fourier_order(&self) -> usize {
        self.fourier_order
    }

    pub fn input_dim(&self) -> usize {
        encoded_dim(self.fourier_order)
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.dim()).collect()
    }

    /// Placeability of a single point; identical to the batched path.
    pub fn forward_point(&self, p: &Point) -> f64 {
        self.forward_batch(std::slice::from_ref(p))[0]
    }

    /// Placeability for every point, processed in fixed-size chunks.
    pub fn forward_batch(&self, points: &[Point]) -> Vec<f64> {
        let n = points.len();
        let d = self.input_dim();
        let mut out = vec![0.0; n];
        if n == 0 {
            return out;
        }
        let chunk = FORWARD_CHUNK.min(n);
        let mut x = Array2::zeros((chunk, d));
        let mut h1 = Array2::zeros((chunk, HIDDEN_WIDTH));
        let mut h2 = Array2::zeros((chunk, HIDDEN_WIDTH));

        // The scalar head is a per-row dot product; a gemm call with a
        // single output column wastes its kernel width.
        let head = &self.layers[3];
        let head_w = head.weights.as_slice().expect("contiguous head weights");
        let head_b = head.bias[0];

        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let m = end - start;
            encode_batch(&points[start..end], self.fourier_order, &mut x);
            dense_relu(&x.slice(s![..m, ..]), &self.layers[0], &mut h1, m);
            dense_relu(&h1.slice(s![..m, ..]), &self.layers[1], &mut h2, m);
            dense_relu(&h2.slice(s![..m, ..]), &self.layers[2], &mut h1, m);
            let rows = &h1.as_slice().expect("row-major buffer")[..m * HIDDEN_WIDTH];
            for (o, row) in out[start..end]
                .iter_mut()
                .zip(rows.chunks_exact(HIDDEN_WIDTH))
            {
                let z: f64 = row.iter().zip(head_w).map(|(a, w)| a * w).sum::<f64>() + head_b;
                *o = sigmoid(z);
            }
            start = end;
        }
        out
    }

    /// Flat parameter vector (layer by layer, weights row-major then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut k = 0;
        for layer in &mut self.layers {
            for v in layer.weights.iter_mut() {
                *v = flat[k];
                k += 1;
            }
            for v in layer.bias.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
        assert_eq!(k, flat.len(), "parameter vector length mismatch");
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Versioned binary model file: magic `RAPM`, format version, encoder
    /// order, layer dims, then row-major float32 weights and biases.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RAPM");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(self.fourier_order as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            let (i, o) = layer.weights.dim();
            bytes.extend_from_slice(&(i as u32).to_le_bytes());
            bytes.extend_from_slice(&(o as u32).to_le_bytes());
        }
        for layer in &self.layers {
            for v in layer.weights.iter() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            for v in layer.bias.iter() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            if *cursor + n > bytes.len() {
                return Err(Error::format(path, "truncated model file"));
            }
            let out = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(out)
        };
        let u32_at = |cursor: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()))
        };

        if take(&mut cursor, 4)? != b"RAPM" {
            return Err(Error::format(path, "bad magic (expected RAPM)"));
        }
        let version = u32_at(&mut cursor)?;
        if version != 1 {
            return Err(Error::format(
                path,
                format!("unsupported format version {version}"),
            ));
        }
        let order = u32_at(&mut cursor)? as usize;
        let n_layers = u32_at(&mut cursor)? as usize;
        if order < 1 || n_layers != 4 {
            return Err(Error::format(path, "unsupported architecture"));
        }
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let i = u32_at(&mut cursor)? as usize;
            let o = u32_at(&mut cursor)? as usize;
            dims.push((i, o));
        }
        let expected = [
            (encoded_dim(order), HIDDEN_WIDTH),
            (HIDDEN_WIDTH, HIDDEN_WIDTH),
            (HIDDEN_WIDTH, HIDDEN_WIDTH),
            (HIDDEN_WIDTH, 1),
        ];
        if dims != expected {
            return Err(Error::format(
                path,
                format!("unexpected layer dims {dims:?}"),
            ));
        }

        let mut layers = Vec::with_capacity(n_layers);
        for (i, o) in dims {
            let mut layer = Dense::zeros(i, o);
            for v in layer.weights.iter_mut() {
                *v = f32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as f64;
            }
            for v in layer.bias.iter_mut() {
                *v = f32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as f64;
            }
            layers.push(layer);
        }
        if cursor != bytes.len() {
            return Err(Error::format(path, "trailing bytes after weights"));
        }
        Ok(PlaceabilityModel {
            fourier_order: order,
            layers,
        })
    }
}

// The bias/activation pass runs fused over the raw contiguous buffer: the
// strided view iterators do not vectorize.
fn dense_relu(x: &ArrayView2<f64>, layer: &Dense, out: &mut Array2<f64>, rows: usize) {
    general_mat_mul(
        1.0,
        x,
        &layer.weights,
        0.0,
        &mut out.slice_mut(s![..rows, ..]),
    );
    let width = layer.bias.len();
    let bias = layer.bias.as_slice().expect("contiguous bias");
    let flat = &mut out.as_slice_mut().expect("row-major buffer")[..rows * width];
    for row in flat.chunks_exact_mut(width) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = (*v + *b).max(0.0);
        }
    }
}

/// Weighted binary cross-entropy for one prediction; the prediction is
/// clamped away from 0 and 1 before the logs.
pub fn bce_loss(pred: f64, label: f64, weight: f64) -> f64 {
    let p = pred.clamp(PRED_CLAMP, 1.0 - PRED_CLAMP);
    -(weight * label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mini-batch gradient-descent settings. Training is single-threaded and
/// bit-reproducible for a fixed seed.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub positive_class_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 40,
            batch_size: 256,
            seed: 0,
            positive_class_weight: 1.0,
        }
    }
}

struct ForwardTrace {
    x: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    z3: Array2<f64>,
    a3: Array2<f64>,
    p: Array1<f64>,
}

fn forward_trace(model: &PlaceabilityModel, points: &[Point]) -> ForwardTrace {
    let n = points.len();
    let mut x = Array2::zeros((n, model.input_dim()));
    encode_batch(points, model.fourier_order, &mut x);
    let relu = |a: &Array2<f64>| a.mapv(|v| v.max(0.0));
    let affine = |a: &Array2<f64>, layer: &Dense| a.dot(&layer.weights) + &layer.bias;

    let z1 = affine(&x, &model.layers[0]);
    let a1 = relu(&z1);
    let z2 = affine(&a1, &model.layers[1]);
    let a2 = relu(&z2);
    let z3 = affine(&a2, &model.layers[2]);
    let a3 = relu(&z3);
    let z4 = affine(&a3, &model.layers[3]);
    let p = z4.column(0).mapv(sigmoid);
    ForwardTrace {
        x,
        z1,
        a1,
        z2,
        a2,
        z3,
        a3,
        p,
    }
}

struct Gradients {
    layers: Vec<Dense>,
}

/// Mean weighted BCE over the batch plus its gradient with respect to every
/// weight and bias. Fourier features are fixed: no gradient flows to inputs.
fn batch_loss_and_grads(
    model: &PlaceabilityModel,
    points: &[Point],
    labels: &[f64],
    positive_weight: f64,
) -> (f64, Gradients) {
    assert_eq!(points.len(), labels.len());
    let n = points.len();
    let trace = forward_trace(model, points);

    let mut loss = 0.0;
    for (p, y) in trace.p.iter().zip(labels) {
        loss += bce_loss(*p, *y, positive_weight);
    }
    loss /= n as f64;

    // d(mean loss)/dz for the logistic head under weighted BCE.
    let mut delta = Array2::zeros((n, 1));
    for i in 0..n {
        let p = trace.p[i];
        let y = labels[i];
        delta[[i, 0]] = ((1.0 - y) * p - positive_weight * y * (1.0 - p)) / n as f64;
    }

    let relu_gate = |delta: &mut Array2<f64>, z: &Array2<f64>| {
        for (d, zv) in delta.iter_mut().zip(z.iter()) {
            if *zv <= 0.0 {
                *d = 0.0;
            }
        }
    };
    let colsum = |m: &Array2<f64>| -> Array1<f64> { m.sum_axis(ndarray::Axis(0)) };

    let g4 = Dense {
        weights: trace.a3.t().dot(&delta),
        bias: colsum(&delta),
    };
    let mut delta3 = delta.dot(&model.layers[3].weights.t());
    relu_gate(&mut delta3, &trace.z3);
    let g3 = Dense {
        weights: trace.a2.t().dot(&delta3),
        bias: colsum(&delta3),
    };
    let mut delta2 = delta3.dot(&model.layers[2].weights.t());
    relu_gate(&mut delta2, &trace.z2);
    let g2 = Dense {
        weights: trace.a1.t().dot(&delta2),
        bias: colsum(&delta2),
    };
    let mut delta1 = delta2.dot(&model.layers[1].weights.t());
    relu_gate(&mut delta1, &trace.z1);
    let g1 = Dense {
        weights: trace.x.t().dot(&delta1),
        bias: colsum(&delta1),
    };

    (
        loss,
        Gradients {
            layers: vec![g1, g2, g3, g4],
        },
    )
}

/// Smallest absolute hidden pre-activation over a batch. Finite-difference
/// gradient checks are only meaningful when this margin comfortably exceeds
/// the probe step, otherwise a rectifier gate flips mid-probe.
pub fn relu_margin(model: &PlaceabilityModel, points: &[Point]) -> f64 {
    let trace = forward_trace(model, points);
    [&trace.z1, &trace.z2, &trace.z3]
        .into_iter()
        .flat_map(|z| z.iter())
        .fold(f64::INFINITY, |m, z| m.min(z.abs()))
}

/// Flat-gradient adapter for finite-difference checks.
pub fn loss_and_flat_gradient(
    model: &PlaceabilityModel,
    points: &[Point],
    labels: &[f64],
    positive_weight: f64,
) -> (f64, Vec<f64>) {
    let (loss, grads) = batch_loss_and_grads(model, points, labels, positive_weight);
    let mut flat = Vec::with_capacity(model.param_count());
    for layer in &grads.layers {
        flat.extend(layer.weights.iter());
        flat.extend(layer.bias.iter());
    }
    (loss, flat)
}

/// Mean weighted BCE of the model on a labeled set (no gradient).
pub fn dataset_loss(
    model: &PlaceabilityModel,
    points: &[Point],
    labels: &[f64],
    positive_weight: f64,
) -> f64 {
    let preds = model.forward_batch(points);
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, y)| bce_loss(*p, *y, positive_weight))
        .sum();
    total / points.len().max(1) as f64
}

/// Train in place by shuffled mini-batch gradient descent, returning the
/// per-epoch mean loss. Aborts with a diagnostic if the loss leaves the
/// finite range.
pub fn train(
    model: &mut PlaceabilityModel,
    frames: &[(&PointCloud, &GroundLabels)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if cfg.learning_rate <= 0.0 {
        return Err(Error::Validation("learning_rate must be positive".into()));
    }
    if cfg.epochs < 1 {
        return Err(Error::Validation("epochs must be >= 1".into()));
    }
    if frames.is_empty() {
        return Err(Error::Validation(
            "training needs at least one labeled frame".into(),
        ));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (cloud, ground) in frames {
        if cloud.len() != ground.len() {
            return Err(Error::Validation(format!(
                "label mask length {} does not match cloud length {}",
                ground.len(),
                cloud.len()
            )));
        }
        points.extend_from_slice(cloud.points());
        labels.extend(ground.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    }
    if points.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..points.len()).collect();
    let batch = cfg.batch_size.max(1);
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut batch_points = Vec::with_capacity(batch);
    let mut batch_labels = Vec::with_capacity(batch);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(batch).enumerate() {
            batch_points.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_points.push(points[i]);
                batch_labels.push(labels[i]);
            }
            let (loss, grads) = batch_loss_and_grads(
                model,
                &batch_points,
                &batch_labels,
                cfg.positive_class_weight,
            );
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            for (layer, grad) in model.layers.iter_mut().zip(&grads.layers) {
                layer.weights.scaled_add(-cfg.learning_rate, &grad.weights);
                layer.bias.scaled_add(-cfg.learning_rate, &grad.bias);
            }
            epoch_loss += loss * chunk.len() as f64;
        }
        history.push(epoch_loss / points.len() as f64);
    }
    Ok(history)
}

/// Threshold the model over a cloud; the comparison is inclusive.
pub fn infer_mask(model: &PlaceabilityModel, cloud: &PointCloud, threshold: f64) -> GroundLabels {
    let preds = model.forward_batch(cloud.points());
    GroundLabels {
        mask: preds.into_iter().map(|p| p >= threshold).collect(),
    }
}
