//! Forward pass, cross-entropy, backpropagation and SGD.

use super::arch::{Architecture, LayerSpec, Shape, KERNEL, NUM_CLASSES, POOL};
use super::batch::{Batch, Dataset};
use super::params::ModelParameters;
use super::tensor::Tensor;
use crate::digest::Fnv1a;
use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Activations recorded by [`forward`] and consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T = f64> {
    // Input to every layer, batched.
    inputs: Vec<Tensor<T>>,
    // Flat input index of the max element for each pooled output.
    pool_argmax: Vec<Option<Vec<usize>>>,
    probs: Tensor<T>,
    params_digest: u64,
    batch_digest: u64,
}

fn digest_values<'a, T: Scalar>(h: &mut Fnv1a, values: impl IntoIterator<Item = &'a T>) {
    for v in values {
        h.update(&v.as_f64().to_bits().to_le_bytes());
    }
}

fn params_digest<T: Scalar>(params: &ModelParameters<T>) -> u64 {
    let mut h = Fnv1a::default();
    for t in params.tensors() {
        digest_values(&mut h, t.values());
    }
    h.finish()
}

fn batch_digest<T: Scalar>(batch: &Batch<T>) -> u64 {
    let mut h = Fnv1a::default();
    digest_values(&mut h, batch.inputs().values());
    for &l in batch.labels() {
        h.update(&(l as u64).to_le_bytes());
    }
    h.finish()
}

fn check_input<T: Scalar>(arch: &Architecture, batch: &Batch<T>) -> Result<()> {
    let [c, h, w] = arch.input();
    let expected = vec![batch.size(), c, h, w];
    if batch.inputs().dims() != expected.as_slice() {
        return Err(Error::Shape {
            expected,
            actual: batch.inputs().dims().to_vec(),
        });
    }
    Ok(())
}

fn image_dims(shape: Shape) -> (usize, usize, usize) {
    match shape {
        Shape::Image { c, h, w } => (c, h, w),
        Shape::Flat(n) => (n, 1, 1),
    }
}

fn conv_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    (cin, h, w): (usize, usize, usize),
    cout: usize,
    weight: &[T],
    bias: &[T],
) -> Vec<T> {
    let (ho, wo) = (h - KERNEL + 1, w - KERNEL + 1);
    let mut out = vec![T::zero(); batch * cout * ho * wo];
    for b in 0..batch {
        let xb = &x[b * cin * h * w..(b + 1) * cin * h * w];
        for o in 0..cout {
            let ob = &mut out[(b * cout + o) * ho * wo..(b * cout + o + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        let wk = &weight[(o * cin + i) * KERNEL * KERNEL..];
                        let xi = &xb[i * h * w..];
                        for ky in 0..KERNEL {
                            for kx in 0..KERNEL {
                                acc = acc + wk[ky * KERNEL + kx] * xi[(y + ky) * w + xx + kx];
                            }
                        }
                    }
                    ob[y * wo + xx] = acc;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    (cin, h, w): (usize, usize, usize),
    cout: usize,
    weight: &[T],
    dout: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let (ho, wo) = (h - KERNEL + 1, w - KERNEL + 1);
    let mut dx = need_input_grad.then(|| vec![T::zero(); x.len()]);
    for b in 0..batch {
        let xb = &x[b * cin * h * w..(b + 1) * cin * h * w];
        for o in 0..cout {
            let db = &dout[(b * cout + o) * ho * wo..(b * cout + o + 1) * ho * wo];
            for y in 0..ho {
                for xx in 0..wo {
                    let g = db[y * wo + xx];
                    dbias[o] = dbias[o] + g;
                    for i in 0..cin {
                        let base = (o * cin + i) * KERNEL * KERNEL;
                        for ky in 0..KERNEL {
                            for kx in 0..KERNEL {
                                let xi = i * h * w + (y + ky) * w + xx + kx;
                                dweight[base + ky * KERNEL + kx] =
                                    dweight[base + ky * KERNEL + kx] + g * xb[xi];
                                if let Some(dx) = dx.as_mut() {
                                    let d = &mut dx[b * cin * h * w + xi];
                                    *d = *d + g * weight[base + ky * KERNEL + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward<T: Scalar>(x: &[T], batch: usize, (ch, h, w): (usize, usize, usize)) -> (Vec<T>, Vec<usize>) {
    let (ho, wo) = (h / POOL, w / POOL);
    let mut out = Vec::with_capacity(batch * ch * ho * wo);
    let mut arg = Vec::with_capacity(batch * ch * ho * wo);
    for bc in 0..batch * ch {
        let base = bc * h * w;
        for y in 0..ho {
            for xx in 0..wo {
                let mut best = base + (y * POOL) * w + xx * POOL;
                for dy in 0..POOL {
                    for dx in 0..POOL {
                        let idx = base + (y * POOL + dy) * w + xx * POOL + dx;
                        // first maximum wins on ties
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn softmax_rows<T: Scalar>(logits: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for r in 0..rows {
        let row = &logits[r * cols..(r + 1) * cols];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - m).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

/// Runs the network on a batch, returning class probabilities `[B, 2]`.
pub fn forward<T: Scalar>(
    params: &ModelParameters<T>,
    arch: &Architecture,
    batch: &Batch<T>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    params.check_architecture(arch)?;
    check_input(arch, batch)?;
    let bsz = batch.size();
    let mut inputs = Vec::with_capacity(arch.layers().len());
    let mut pool_argmax = Vec::with_capacity(arch.layers().len());
    let mut cur = batch.inputs().values().to_vec();
    let mut p = 0;
    for (k, layer) in arch.layers().iter().enumerate() {
        let in_shape = arch.shape_at(k);
        let out_shape = arch.shape_at(k + 1);
        let mut dims = vec![bsz];
        dims.extend(in_shape.dims());
        inputs.push(Tensor::from_parts_unchecked(dims, cur.clone()));
        let mut argmax = None;
        cur = match *layer {
            LayerSpec::Conv2d { out_channels, .. } => {
                let (wt, bs) = (&params.tensors()[p], &params.tensors()[p + 1]);
                p += 2;
                conv_forward(&cur, bsz, image_dims(in_shape), out_channels, wt.values(), bs.values())
            }
            LayerSpec::Maxpool2d => {
                let (out, arg) = pool_forward(&cur, bsz, image_dims(in_shape));
                argmax = Some(arg);
                out
            }
            LayerSpec::Relu => cur.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
            LayerSpec::Flatten => cur,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let (wt, bs) = (params.tensors()[p].values(), params.tensors()[p + 1].values());
                p += 2;
                let mut out = Vec::with_capacity(bsz * out_features);
                for b in 0..bsz {
                    let xb = &cur[b * in_features..(b + 1) * in_features];
                    for o in 0..out_features {
                        let row = &wt[o * in_features..(o + 1) * in_features];
                        let dot = row.iter().zip(xb).fold(bs[o], |acc, (&a, &x)| acc + a * x);
                        out.push(dot);
                    }
                }
                out
            }
            LayerSpec::Softmax => softmax_rows(&cur, bsz, out_shape.len()),
        };
        pool_argmax.push(argmax);
    }
    let probs = Tensor::from_parts_unchecked(vec![bsz, NUM_CLASSES], cur);
    if !probs.is_finite() {
        return Err(Error::Numeric("non-finite probabilities in forward pass".into()));
    }
    let cache = ForwardCache {
        inputs,
        pool_argmax,
        probs: probs.clone(),
        params_digest: params_digest(params),
        batch_digest: batch_digest(batch),
    };
    Ok((probs, cache))
}

/// Per-row cross-entropy terms, `-ln(max(p[label], 1e-12))`.
fn ce_terms<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<Vec<T>> {
    if probs.rank() != 2 || probs.dims()[0] != labels.len() || probs.dims()[1] != NUM_CLASSES {
        return Err(Error::Shape {
            expected: vec![labels.len(), NUM_CLASSES],
            actual: probs.dims().to_vec(),
        });
    }
    let clamp = c::<T>(LOG_CLAMP);
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l >= NUM_CLASSES {
                return Err(Error::config(format!("label {l} outside {{0,1}}")));
            }
            Ok(-probs.row(i)[l].max(clamp).ln())
        })
        .collect()
}

/// Mean categorical cross-entropy over the batch.
pub fn loss_ce<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    if labels.is_empty() {
        return Err(Error::config("cross-entropy of an empty batch"));
    }
    let terms = ce_terms(probs, labels)?;
    let sum: T = terms.into_iter().sum();
    Ok(sum / c::<T>(labels.len() as f64))
}

/// Gradient of the mean cross-entropy with respect to every parameter.
pub fn backward<T: Scalar>(
    params: &ModelParameters<T>,
    arch: &Architecture,
    batch: &Batch<T>,
    cache: &ForwardCache<T>,
) -> Result<ModelParameters<T>> {
    params.check_architecture(arch)?;
    check_input(arch, batch)?;
    if cache.inputs.len() != arch.layers().len()
        || cache.params_digest != params_digest(params)
        || cache.batch_digest != batch_digest(batch)
    {
        return Err(Error::Consistency(
            "forward cache was produced for different parameters or batch".into(),
        ));
    }
    let bsz = batch.size();
    let scale = c::<T>(1.0) / c::<T>(bsz as f64);
    let mut grad = ModelParameters::zeros_like(arch);
    let n_tensors = arch.parameter_dims().len();
    let last = arch.layers().len() - 1;

    // Per-sample gradients are summed in sample order, so a batch of
    // duplicates reproduces the single-sample gradient exactly.
    for b in 0..bsz {
        let mut sample_grad = ModelParameters::zeros_like(arch);
        // Softmax + cross-entropy: dL/dz = (p - onehot) / B.
        let label = batch.labels()[b];
        let mut delta: Vec<T> = cache
            .probs
            .row(b)
            .iter()
            .enumerate()
            .map(|(k, &p)| (if k == label { p - T::one() } else { p }) * scale)
            .collect();
        let mut p = n_tensors;
        for k in (0..last).rev() {
            let layer = arch.layers()[k];
            let in_shape = arch.shape_at(k);
            let per = in_shape.len();
            let x = &cache.inputs[k].values()[b * per..(b + 1) * per];
            delta = match layer {
                LayerSpec::Softmax => unreachable!("softmax is validated to be the final layer"),
                LayerSpec::Relu => x
                    .iter()
                    .zip(&delta)
                    .map(|(&xi, &d)| if xi > T::zero() { d } else { T::zero() })
                    .collect(),
                LayerSpec::Flatten => delta,
                LayerSpec::Maxpool2d => {
                    let arg = cache.pool_argmax[k]
                        .as_ref()
                        .ok_or_else(|| Error::Consistency("missing pooling indices".into()))?;
                    let out_per = arch.shape_at(k + 1).len();
                    let mut dx = vec![T::zero(); per];
                    for (&i, &d) in arg[b * out_per..(b + 1) * out_per].iter().zip(&delta) {
                        dx[i - b * per] = dx[i - b * per] + d;
                    }
                    dx
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    p -= 2;
                    let wt = params.tensors()[p].values();
                    let (dw_part, db_part) = sample_grad.tensors_mut().split_at_mut(p + 1);
                    let dw = dw_part[p].values_mut();
                    let db = db_part[0].values_mut();
                    let mut dx = vec![T::zero(); in_features];
                    for o in 0..out_features {
                        let g = delta[o];
                        db[o] = db[o] + g;
                        for j in 0..in_features {
                            dw[o * in_features + j] = dw[o * in_features + j] + g * x[j];
                            dx[j] = dx[j] + g * wt[o * in_features + j];
                        }
                    }
                    dx
                }
                LayerSpec::Conv2d { out_channels, .. } => {
                    p -= 2;
                    let wt = params.tensors()[p].values();
                    let (dw_part, db_part) = sample_grad.tensors_mut().split_at_mut(p + 1);
                    conv_backward(
                        x,
                        1,
                        image_dims(in_shape),
                        out_channels,
                        wt,
                        &delta,
                        dw_part[p].values_mut(),
                        db_part[0].values_mut(),
                        k > 0,
                    )
                    .unwrap_or_default()
                }
            };
        }
        grad = grad.zip_map(&sample_grad, |a, g| a + g)?;
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(grad)
}

/// `params - lr * gradient`, elementwise.
pub fn sgd_step<T: Scalar>(
    params: &ModelParameters<T>,
    gradient: &ModelParameters<T>,
    lr: T,
) -> Result<ModelParameters<T>> {
    if !lr.is_finite() || lr < T::zero() {
        return Err(Error::config(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if !gradient.is_finite() {
        return Err(Error::Numeric("non-finite gradient; round aborted".into()));
    }
    let next = params.zip_map(gradient, |w, g| w - lr * g)?;
    if !next.is_finite() {
        return Err(Error::Numeric("parameters diverged to non-finite values".into()));
    }
    Ok(next)
}

/// Accuracy and mean cross-entropy of a model on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

const EVAL_CHUNK: usize = 256;

/// Predicted class of a probability row; ties go to class 0.
pub fn predict(row: &[impl Scalar]) -> usize {
    if row[1] > row[0] {
        1
    } else {
        0
    }
}

pub fn evaluate<T: Scalar>(
    params: &ModelParameters<T>,
    arch: &Architecture,
    dataset: &Dataset<T>,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let batch = dataset.batch(chunk)?;
        let (probs, _) = forward(params, arch, &batch)?;
        for (i, &l) in batch.labels().iter().enumerate() {
            if predict(probs.row(i)) == l {
                correct += 1;
            }
        }
        for t in ce_terms(&probs, batch.labels())? {
            loss_sum += t.as_f64();
        }
    }
    let n = dataset.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: loss_sum / n,
    })
}
