use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::diffcompute::kernels::{self, Geometry};
use crate::diffcompute::scalar::{gemm, MatRef};
use crate::diffcompute::{ParameterSet, Scalar, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// One entry of the fixed layer menu. Shapes exclude the batch dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// Valid (unpadded) convolution; weight is `out x in x k x k`.
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize },
    /// Transposed convolution; weight is `in x out x k x k`.
    Deconv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        output_padding: usize,
    },
    /// Affine map over the flattened sample; weight is `out x in`.
    Dense { in_features: usize, out_features: usize },
    Relu,
    Tanh,
    /// Normalizes the flattened sample, then applies a learned gain and bias.
    LayerNorm { features: usize },
    /// Reinterprets the flattened sample with a new shape.
    Reshape { shape: Vec<usize> },
}

/// Spatial size after a valid convolution: `floor((in - k) / s) + 1`.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input < kernel {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

/// Spatial size after a transposed convolution: `(in - 1) * s + k + output_padding`.
pub fn deconv_output_size(input: usize, kernel: usize, stride: usize, output_padding: usize) -> usize {
    (input - 1) * stride + kernel + output_padding
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. }
                | LayerSpec::Deconv2d { .. }
                | LayerSpec::Dense { .. }
                | LayerSpec::LayerNorm { .. }
        )
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let flat: usize = input.iter().product();
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride } => {
                let [c, h, w] = image_shape(input)?;
                if c != in_channels {
                    return Err(Error::Config(format!(
                        "conv expects {in_channels} channels, got {c}"
                    )));
                }
                let oh = conv_output_size(h, kernel, stride);
                let ow = conv_output_size(w, kernel, stride);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![out_channels, oh, ow]),
                    _ => Err(Error::Config(format!(
                        "conv kernel {kernel} stride {stride} does not fit {h}x{w}"
                    ))),
                }
            }
            LayerSpec::Deconv2d { in_channels, out_channels, kernel, stride, output_padding } => {
                let [c, h, w] = image_shape(input)?;
                if c != in_channels {
                    return Err(Error::Config(format!(
                        "deconv expects {in_channels} channels, got {c}"
                    )));
                }
                if stride == 0 || kernel == 0 || output_padding >= stride {
                    return Err(Error::Config(format!(
                        "deconv output padding {output_padding} must be below stride {stride}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    deconv_output_size(h, kernel, stride, output_padding),
                    deconv_output_size(w, kernel, stride, output_padding),
                ])
            }
            LayerSpec::Dense { in_features, out_features } => {
                if flat != in_features {
                    return Err(Error::Config(format!(
                        "dense layer expects {in_features} features, got {flat} ({input:?})"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerSpec::LayerNorm { features } => {
                if flat != features {
                    return Err(Error::Config(format!(
                        "layer norm expects {features} features, got {flat}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Reshape { ref shape } => {
                if shape.iter().product::<usize>() != flat {
                    return Err(Error::Config(format!("cannot reshape {input:?} into {shape:?}")));
                }
                Ok(shape.clone())
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
        }
    }

    /// `(weight shape, bias shape)` for parameterized layers.
    fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                Some((vec![out_channels, in_channels, kernel, kernel], vec![out_channels]))
            }
            LayerSpec::Deconv2d { in_channels, out_channels, kernel, .. } => {
                Some((vec![in_channels, out_channels, kernel, kernel], vec![out_channels]))
            }
            LayerSpec::Dense { in_features, out_features } => {
                Some((vec![out_features, in_features], vec![out_features]))
            }
            LayerSpec::LayerNorm { features } => Some((vec![features], vec![features])),
            _ => None,
        }
    }
}

fn image_shape(shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Config(format!("expected a CxHxW sample, got {shape:?}"))),
    }
}

/// Values saved by [`Sequential::forward`] for the matching backward pass.
#[derive(Debug)]
pub struct Tape<T> {
    net: String,
    batch: usize,
    inputs: Vec<Tensor<T>>,
}

impl<T> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// A feed-forward stack of [`LayerSpec`]s whose parameters live in a
/// [`ParameterSet`] under `"{name}.{index}.weight"` / `"{name}.{index}.bias"`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequential {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Per-sample input shape of every layer, plus the final output shape.
    shapes: Vec<Vec<usize>>,
}

impl Sequential {
    /// Validates the shape chain from `input_shape` through every layer.
    pub fn new(name: impl Into<String>, input_shape: &[usize], layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = vec![input_shape.to_vec()];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| Error::Config(format!("layer {i} ({layer:?}): {e}")))?;
            shapes.push(next);
        }
        Ok(Sequential { name: name.into(), input_shape: input_shape.to_vec(), layers, shapes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    /// Per-sample shape entering layer `i`; index `layers().len()` is the output.
    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.weight", self.name)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.bias", self.name)
    }

    /// Adds freshly initialized parameters for every layer to `params`.
    ///
    /// Convolutions use He-uniform weights, dense layers Glorot-uniform;
    /// biases start at zero, layer-norm gains at one.
    pub fn init_params<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &mut ParameterSet<T>,
        rng: &mut R,
    ) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            let Some((w_shape, b_shape)) = layer.param_shapes() else { continue };
            let n: usize = w_shape.iter().product();
            let weight = match *layer {
                LayerSpec::LayerNorm { .. } => vec![T::one(); n],
                LayerSpec::Dense { in_features, out_features } => {
                    let limit = (6.0 / (in_features + out_features) as f64).sqrt();
                    uniform_vec(n, limit, rng)
                }
                LayerSpec::Conv2d { in_channels, kernel, .. }
                | LayerSpec::Deconv2d { in_channels, kernel, .. } => {
                    let limit = (6.0 / (in_channels * kernel * kernel) as f64).sqrt();
                    uniform_vec(n, limit, rng)
                }
                _ => unreachable!("only parameterized layers reach here"),
            };
            params.insert(self.weight_name(i), Tensor::new(w_shape, weight)?)?;
            params.insert(self.bias_name(i), Tensor::zeros(&b_shape))?;
        }
        Ok(())
    }

    fn check_input<T: Scalar>(&self, input: &Tensor<T>) -> Result<usize> {
        let shape = input.shape();
        if shape.len() < 2 || shape[1..] != self.input_shape[..] {
            return Err(Error::Config(format!(
                "{}: expected input [batch, {:?}], got {:?}",
                self.name, self.input_shape, shape
            )));
        }
        Ok(shape[0])
    }

    /// Forward pass recording what the backward pass needs.
    pub fn forward<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        input: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tape<T>)> {
        let batch = self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            let y = self.layer_forward(i, params, &x, batch)?;
            inputs.push(x);
            x = y;
        }
        x.ensure_finite(&format!("{} forward output", self.name))?;
        Ok((x, Tape { net: self.name.clone(), batch, inputs }))
    }

    /// Forward pass without a tape.
    pub fn infer<T: Scalar>(&self, params: &ParameterSet<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check_input(input)?;
        let mut x = self.layer_forward(0, params, input, batch)?;
        for i in 1..self.layers.len() {
            x = self.layer_forward(i, params, &x, batch)?;
        }
        x.ensure_finite(&format!("{} forward output", self.name))?;
        Ok(x)
    }

    /// Reverse pass: accumulates `d(output . output_grad)/dp` into every
    /// parameter gradient and returns the input gradient when `need_input_grad`.
    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParameterSet<T>,
        tape: Tape<T>,
        output_grad: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        self.reverse(Grads::Accumulate(params), tape, output_grad, need_input_grad)
    }

    /// Reverse pass that only propagates to the input; parameter gradients are untouched.
    pub fn input_grad<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        tape: Tape<T>,
        output_grad: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        self.reverse(Grads::Frozen(params), tape, output_grad, true)
            .map(|g| g.expect("input gradient requested"))
    }

    fn reverse<T: Scalar>(
        &self,
        mut grads: Grads<'_, T>,
        tape: Tape<T>,
        output_grad: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        if tape.net != self.name || tape.inputs.len() != self.layers.len() {
            return Err(Error::Internal(format!(
                "tape from '{}' ({} layers) replayed on '{}' ({} layers)",
                tape.net,
                tape.inputs.len(),
                self.name,
                self.layers.len()
            )));
        }
        let mut want_out = vec![tape.batch];
        want_out.extend_from_slice(self.output_shape());
        if output_grad.shape() != want_out.as_slice() {
            return Err(Error::Internal(format!(
                "{}: output gradient shape {:?}, expected {want_out:?}",
                self.name,
                output_grad.shape()
            )));
        }
        let mut dy = output_grad.clone();
        let mut inputs = tape.inputs;
        for i in (0..self.layers.len()).rev() {
            let x = inputs.pop().expect("one input per layer");
            let need_dx = i > 0 || need_input_grad;
            match self.layer_backward(i, &mut grads, &x, &dy, tape.batch, need_dx)? {
                Some(dx) => dy = dx,
                None => return Ok(None),
            }
        }
        dy.ensure_finite(&format!("{} input gradient", self.name))?;
        Ok(Some(dy))
    }

    fn batch_shape(&self, i: usize, batch: usize) -> Vec<usize> {
        let mut s = vec![batch];
        s.extend_from_slice(&self.shapes[i]);
        s
    }

    fn layer_forward<T: Scalar>(
        &self,
        i: usize,
        params: &ParameterSet<T>,
        x: &Tensor<T>,
        batch: usize,
    ) -> Result<Tensor<T>> {
        let out_shape = self.batch_shape(i + 1, batch);
        let out = match self.layers[i] {
            LayerSpec::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            LayerSpec::Tanh => x.map(T::tanh),
            LayerSpec::Reshape { .. } => x.clone().reshape(&out_shape)?,
            LayerSpec::Dense { in_features, out_features } => {
                let w = params.value(&self.weight_name(i))?;
                let b = params.value(&self.bias_name(i))?;
                let mut y = vec![T::zero(); batch * out_features];
                gemm(
                    MatRef::new(x.data(), batch, in_features),
                    MatRef::new(w.data(), out_features, in_features).t(),
                    T::zero(),
                    &mut y,
                );
                for row in y.chunks_mut(out_features) {
                    row.iter_mut().zip(b.data()).for_each(|(v, &bb)| *v += bb);
                }
                Tensor::new(out_shape, y)?
            }
            LayerSpec::LayerNorm { features } => {
                let g = params.value(&self.weight_name(i))?.data();
                let b = params.value(&self.bias_name(i))?.data();
                let mut y = Vec::with_capacity(batch * features);
                for row in x.data().chunks(features) {
                    let (mean, inv) = norm_stats(row);
                    for ((&v, &gg), &bb) in row.iter().zip(g).zip(b) {
                        y.push((v - mean) * inv * gg + bb);
                    }
                }
                Tensor::new(out_shape, y)?
            }
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = self.conv_geometry(i);
                let w = params.value(&self.weight_name(i))?.data();
                let b = params.value(&self.bias_name(i))?.data();
                let in_len = self.shapes[i].iter().product::<usize>();
                let out_len = out_channels * g.positions();
                let mut cols = vec![T::zero(); g.col_rows() * g.positions()];
                let mut y = vec![T::zero(); batch * out_len];
                for (xs, ys) in x.data().chunks(in_len).zip(y.chunks_mut(out_len)) {
                    kernels::conv_forward(&g, w, b, xs, &mut cols, ys);
                }
                Tensor::new(out_shape, y)?
            }
            LayerSpec::Deconv2d { in_channels, .. } => {
                let g = self.deconv_geometry(i);
                let w = params.value(&self.weight_name(i))?.data();
                let b = params.value(&self.bias_name(i))?.data();
                let in_len = self.shapes[i].iter().product::<usize>();
                let out_len = self.shapes[i + 1].iter().product::<usize>();
                let mut cols = vec![T::zero(); g.col_rows() * g.positions()];
                let mut y = vec![T::zero(); batch * out_len];
                for (xs, ys) in x.data().chunks(in_len).zip(y.chunks_mut(out_len)) {
                    kernels::deconv_forward(&g, w, b, xs, in_channels, &mut cols, ys);
                }
                Tensor::new(out_shape, y)?
            }
        };
        Ok(out)
    }

    fn layer_backward<T: Scalar>(
        &self,
        i: usize,
        grads: &mut Grads<'_, T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        batch: usize,
        need_dx: bool,
    ) -> Result<Option<Tensor<T>>> {
        let in_shape = self.batch_shape(i, batch);
        let zero = T::zero();
        match self.layers[i] {
            LayerSpec::Relu => {
                if !need_dx {
                    return Ok(None);
                }
                let d = x.data().iter().zip(dy.data()).map(|(&v, &g)| if v > zero { g } else { zero });
                Ok(Some(Tensor::new(in_shape, d.collect())?))
            }
            LayerSpec::Tanh => {
                if !need_dx {
                    return Ok(None);
                }
                let d = x.data().iter().zip(dy.data()).map(|(&v, &g)| {
                    let t = v.tanh();
                    g * (T::one() - t * t)
                });
                Ok(Some(Tensor::new(in_shape, d.collect())?))
            }
            LayerSpec::Reshape { .. } => {
                if !need_dx {
                    return Ok(None);
                }
                Ok(Some(dy.clone().reshape(&in_shape)?))
            }
            LayerSpec::Dense { in_features, out_features } => {
                let (w_name, b_name) = (self.weight_name(i), self.bias_name(i));
                let xm = MatRef::new(x.data(), batch, in_features);
                let dym = MatRef::new(dy.data(), batch, out_features);
                if let Some(p) = grads.params_mut() {
                    let e = p.entry_mut(&w_name)?;
                    gemm(dym.t(), xm, T::one(), e.grad.data_mut());
                    let db = p.entry_mut(&b_name)?.grad.data_mut();
                    for row in dy.data().chunks(out_features) {
                        db.iter_mut().zip(row).for_each(|(b, &g)| *b += g);
                    }
                }
                if !need_dx {
                    return Ok(None);
                }
                let w = grads.params().value(&w_name)?;
                let mut dx = vec![zero; batch * in_features];
                gemm(dym, MatRef::new(w.data(), out_features, in_features), zero, &mut dx);
                Ok(Some(Tensor::new(in_shape, dx)?))
            }
            LayerSpec::LayerNorm { features } => {
                let (w_name, b_name) = (self.weight_name(i), self.bias_name(i));
                let gain = grads.params().value(&w_name)?.data().to_vec();
                let f = T::of(features as f64);
                let mut dgain = vec![zero; features];
                let mut dbias = vec![zero; features];
                let mut dx = Vec::with_capacity(batch * features);
                let mut dxhat = vec![zero; features];
                for (row, drow) in x.data().chunks(features).zip(dy.data().chunks(features)) {
                    let (mean, inv) = norm_stats(row);
                    let mut sum_d = zero;
                    let mut sum_dx = zero;
                    for j in 0..features {
                        let xhat = (row[j] - mean) * inv;
                        dgain[j] += drow[j] * xhat;
                        dbias[j] += drow[j];
                        dxhat[j] = drow[j] * gain[j];
                        sum_d += dxhat[j];
                        sum_dx += dxhat[j] * xhat;
                    }
                    for j in 0..features {
                        let xhat = (row[j] - mean) * inv;
                        dx.push(inv / f * (f * dxhat[j] - sum_d - xhat * sum_dx));
                    }
                }
                if let Some(p) = grads.params_mut() {
                    add_into(p.entry_mut(&w_name)?.grad.data_mut(), &dgain);
                    add_into(p.entry_mut(&b_name)?.grad.data_mut(), &dbias);
                }
                if !need_dx {
                    return Ok(None);
                }
                Ok(Some(Tensor::new(in_shape, dx)?))
            }
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = self.conv_geometry(i);
                let (w_name, b_name) = (self.weight_name(i), self.bias_name(i));
                let in_len = self.shapes[i].iter().product::<usize>();
                let out_len = out_channels * g.positions();
                let mut cols = vec![zero; g.col_rows() * g.positions()];
                let mut db = vec![zero; out_channels];
                let mut dx = if need_dx { vec![zero; batch * in_len] } else { Vec::new() };
                let accumulate = grads.params_mut().is_some();
                let mut dw = if accumulate {
                    Some(std::mem::replace(&mut grads.params_mut().unwrap().entry_mut(&w_name)?.grad, Tensor::zeros(&[1])))
                } else {
                    None
                };
                let w = grads.params().value(&w_name)?.data();
                for b in 0..batch {
                    let xs = &x.data()[b * in_len..(b + 1) * in_len];
                    let dys = &dy.data()[b * out_len..(b + 1) * out_len];
                    let dxs = need_dx.then(|| &mut dx[b * in_len..(b + 1) * in_len]);
                    kernels::conv_backward(
                        &g,
                        w,
                        xs,
                        dys,
                        &mut cols,
                        dw.as_mut().map(|t| t.data_mut()),
                        accumulate.then_some(db.as_mut_slice()),
                        dxs,
                        out_channels,
                    );
                }
                if let Some(dw) = dw.take() {
                    let p = grads.params_mut().unwrap();
                    p.entry_mut(&w_name)?.grad = dw;
                    add_into(p.entry_mut(&b_name)?.grad.data_mut(), &db);
                }
                if !need_dx {
                    return Ok(None);
                }
                Ok(Some(Tensor::new(in_shape, dx)?))
            }
            LayerSpec::Deconv2d { in_channels, out_channels, .. } => {
                let g = self.deconv_geometry(i);
                let (w_name, b_name) = (self.weight_name(i), self.bias_name(i));
                let in_len = self.shapes[i].iter().product::<usize>();
                let out_len = self.shapes[i + 1].iter().product::<usize>();
                let mut cols = vec![zero; g.col_rows() * g.positions()];
                let mut db = vec![zero; out_channels];
                let mut dx = if need_dx { vec![zero; batch * in_len] } else { Vec::new() };
                let accumulate = grads.params_mut().is_some();
                let mut dw = if accumulate {
                    Some(std::mem::replace(&mut grads.params_mut().unwrap().entry_mut(&w_name)?.grad, Tensor::zeros(&[1])))
                } else {
                    None
                };
                let w = grads.params().value(&w_name)?.data();
                for b in 0..batch {
                    let xs = &x.data()[b * in_len..(b + 1) * in_len];
                    let dys = &dy.data()[b * out_len..(b + 1) * out_len];
                    let dxs = need_dx.then(|| &mut dx[b * in_len..(b + 1) * in_len]);
                    kernels::deconv_backward(
                        &g,
                        w,
                        xs,
                        dys,
                        in_channels,
                        &mut cols,
                        dw.as_mut().map(|t| t.data_mut()),
                        accumulate.then_some(db.as_mut_slice()),
                        dxs,
                    );
                }
                if let Some(dw) = dw.take() {
                    let p = grads.params_mut().unwrap();
                    p.entry_mut(&w_name)?.grad = dw;
                    add_into(p.entry_mut(&b_name)?.grad.data_mut(), &db);
                }
                if !need_dx {
                    return Ok(None);
                }
                Ok(Some(Tensor::new(in_shape, dx)?))
            }
        }
    }

    fn conv_geometry(&self, i: usize) -> Geometry {
        let LayerSpec::Conv2d { kernel, stride, .. } = self.layers[i] else {
            unreachable!("conv geometry on non-conv layer")
        };
        let (inp, out) = (&self.shapes[i], &self.shapes[i + 1]);
        Geometry {
            channels: inp[0],
            height: inp[1],
            width: inp[2],
            kernel,
            stride,
            out_h: out[1],
            out_w: out[2],
        }
    }

    /// Window geometry over the deconv *output*, one window per input pixel.
    fn deconv_geometry(&self, i: usize) -> Geometry {
        let LayerSpec::Deconv2d { kernel, stride, .. } = self.layers[i] else {
            unreachable!("deconv geometry on non-deconv layer")
        };
        let (inp, out) = (&self.shapes[i], &self.shapes[i + 1]);
        Geometry {
            channels: out[0],
            height: out[1],
            width: out[2],
            kernel,
            stride,
            out_h: inp[1],
            out_w: inp[2],
        }
    }
}

enum Grads<'a, T> {
    Accumulate(&'a mut ParameterSet<T>),
    Frozen(&'a ParameterSet<T>),
}

impl<T> Grads<'_, T> {
    fn params(&self) -> &ParameterSet<T> {
        match self {
            Grads::Accumulate(p) => p,
            Grads::Frozen(p) => p,
        }
    }

    fn params_mut(&mut self) -> Option<&mut ParameterSet<T>> {
        match self {
            Grads::Accumulate(p) => Some(p),
            Grads::Frozen(_) => None,
        }
    }
}

fn norm_stats<T: Scalar>(row: &[T]) -> (T, T) {
    let n = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + T::of(LAYER_NORM_EPS)).sqrt())
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn uniform_vec<T: Scalar, R: Rng + ?Sized>(n: usize, limit: f64, rng: &mut R) -> Vec<T> {
    let dist = Uniform::new_inclusive(-limit, limit);
    (0..n).map(|_| T::of(dist.sample(rng))).collect()
}
