//! Regularized autoencoder over stacked pixel observations.
//!
//! The encoder (`phi`) is shared with both actor-critic agents; the decoder
//! (`theta`) is trained only here. The per-sample training loss doubles as
//! the curious agent's intrinsic reward.

use std::path::Path;

use rand::Rng;

use crate::diffcompute::{adam_step, AdamConfig, LayerSpec, ParameterSet, Scalar, Sequential, Tape, Tensor};
use crate::envs::{save_rgb_png, CHANNELS};
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 50;
pub const CONV_CHANNELS: usize = 32;
const KERNEL: usize = 3;
const CONV_LAYERS: usize = 4;

/// Width knobs shared by encoder and decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SrlArch {
    pub channels: usize,
    pub latent_dim: usize,
}

impl Default for SrlArch {
    fn default() -> Self {
        SrlArch { channels: CONV_CHANNELS, latent_dim: LATENT_DIM }
    }
}

/// Four 3x3 convolutions (stride 2, 1, 1, 1) with ReLU, then
/// dense -> layer norm -> tanh.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoder {
    net: Sequential,
    conv_shape: [usize; 3],
}

impl Encoder {
    pub fn new(obs_shape: [usize; 3], arch: SrlArch) -> Result<Self> {
        if arch.channels == 0 || arch.latent_dim == 0 {
            return Err(Error::Config(format!("encoder widths must be positive: {arch:?}")));
        }
        let ch = arch.channels;
        let mut layers = Vec::new();
        for i in 0..CONV_LAYERS {
            let in_channels = if i == 0 { obs_shape[0] } else { ch };
            let stride = if i == 0 { 2 } else { 1 };
            layers.push(LayerSpec::Conv2d { in_channels, out_channels: ch, kernel: KERNEL, stride });
            layers.push(LayerSpec::Relu);
        }
        let probe = Sequential::new("encoder", &obs_shape, layers.clone())?;
        let conv_shape: [usize; 3] = probe
            .output_shape()
            .try_into()
            .map_err(|_| Error::Internal("conv stack lost its image shape".into()))?;
        let flat = conv_shape.iter().product();
        layers.push(LayerSpec::Dense { in_features: flat, out_features: arch.latent_dim });
        layers.push(LayerSpec::LayerNorm { features: arch.latent_dim });
        layers.push(LayerSpec::Tanh);
        Ok(Encoder { net: Sequential::new("encoder", &obs_shape, layers)?, conv_shape })
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_shape()[0]
    }

    /// `[channels, h, w]` after the last convolution.
    pub fn conv_shape(&self) -> [usize; 3] {
        self.conv_shape
    }

    pub fn obs_shape(&self) -> [usize; 3] {
        let s = self.net.input_shape();
        [s[0], s[1], s[2]]
    }

    /// Spatial size entering each convolution followed by the final one.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        (0..=CONV_LAYERS).map(|i| self.net.shape_at(2 * i)[1]).collect()
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet<T>> {
        let mut p = ParameterSet::new();
        self.net.init_params(&mut p, rng)?;
        Ok(p)
    }

    pub fn encode<T: Scalar>(&self, phi: &ParameterSet<T>, obs: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.infer(phi, obs)
    }

    pub fn forward<T: Scalar>(&self, phi: &ParameterSet<T>, obs: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        self.net.forward(phi, obs)
    }

    /// Accumulates `dL/dphi` given `dL/dz`.
    pub fn backward<T: Scalar>(&self, phi: &mut ParameterSet<T>, tape: Tape<T>, dz: &Tensor<T>) -> Result<()> {
        self.net.backward(phi, tape, dz, false).map(|_| ())
    }
}

/// Dense expansion to the encoder's conv shape, three stride-1
/// deconvolutions with ReLU, and a stride-2 deconvolution back to the
/// observation shape. The output is linear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoder {
    net: Sequential,
}

impl Decoder {
    pub fn new(encoder: &Encoder) -> Result<Self> {
        let [ch, h, w] = encoder.conv_shape();
        let obs = encoder.obs_shape();
        let latent = encoder.latent_dim();
        let mut layers = vec![
            LayerSpec::Dense { in_features: latent, out_features: ch * h * w },
            LayerSpec::Relu,
            LayerSpec::Reshape { shape: vec![ch, h, w] },
        ];
        for _ in 1..CONV_LAYERS {
            layers.push(LayerSpec::Deconv2d {
                in_channels: ch,
                out_channels: ch,
                kernel: KERNEL,
                stride: 1,
                output_padding: 0,
            });
            layers.push(LayerSpec::Relu);
        }
        // undo the stride-2 floor; the encoder only accepts square inputs here
        let before = h + 2 * (CONV_LAYERS - 1);
        let output_padding = obs[1]
            .checked_sub(2 * (before - 1) + KERNEL)
            .filter(|&p| p < 2 && obs[1] == obs[2])
            .ok_or_else(|| Error::Config(format!("decoder cannot mirror observation shape {obs:?}")))?;
        layers.push(LayerSpec::Deconv2d {
            in_channels: ch,
            out_channels: obs[0],
            kernel: KERNEL,
            stride: 2,
            output_padding,
        });
        let net = Sequential::new("decoder", &[latent], layers)?;
        if net.output_shape() != obs {
            return Err(Error::Internal(format!(
                "decoder output {:?} does not match observation {obs:?}",
                net.output_shape()
            )));
        }
        Ok(Decoder { net })
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet<T>> {
        let mut p = ParameterSet::new();
        self.net.init_params(&mut p, rng)?;
        Ok(p)
    }

    pub fn decode<T: Scalar>(&self, theta: &ParameterSet<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.infer(theta, z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaeHyper {
    pub lambda_z: f64,
    pub lambda_theta: f64,
    pub lr: f64,
    /// Decoder updates per call site; 1 means every training step.
    pub update_freq: usize,
}

impl Default for RaeHyper {
    fn default() -> Self {
        RaeHyper { lambda_z: 1e-6, lambda_theta: 1e-7, lr: 1e-3, update_freq: 1 }
    }
}

impl RaeHyper {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lambda_z >= 0.0 && self.lambda_z.is_finite()) {
            bad.push(format!("lambda_z = {} must be >= 0", self.lambda_z));
        }
        if !(self.lambda_theta >= 0.0 && self.lambda_theta.is_finite()) {
            bad.push(format!("lambda_theta = {} must be >= 0", self.lambda_theta));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(format!("rae lr = {} must be > 0", self.lr));
        }
        if self.update_freq == 0 {
            bad.push("rae update_freq must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

fn check_batch<T: Scalar>(what: &str, t: &Tensor<T>, batch: usize) -> Result<usize> {
    if t.shape().is_empty() || t.shape()[0] != batch {
        return Err(Error::Config(format!("{what}: expected batch {batch}, got shape {:?}", t.shape())));
    }
    Ok(t.row_len())
}

/// Per-sample `mean((recon - obs)^2) + lambda_z * |z|^2`.
pub fn rae_loss_per_sample<T: Scalar>(
    obs: &Tensor<T>,
    recon: &Tensor<T>,
    z: &Tensor<T>,
    lambda_z: f64,
) -> Result<Vec<T>> {
    let batch = obs.rows();
    let pixels = check_batch("observation", obs, batch)?;
    if recon.shape() != obs.shape() {
        return Err(Error::Config(format!(
            "reconstruction shape {:?} differs from observation {:?}",
            recon.shape(),
            obs.shape()
        )));
    }
    check_batch("latent", z, batch)?;
    let lz = T::of(lambda_z);
    let inv = T::of(1.0 / pixels as f64);
    let losses: Vec<T> = (0..batch)
        .map(|i| {
            let mse: T = obs.row(i).iter().zip(recon.row(i)).map(|(&o, &r)| (r - o) * (r - o)).sum::<T>() * inv;
            let zz: T = z.row(i).iter().map(|&v| v * v).sum();
            mse + lz * zz
        })
        .collect();
    if losses.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite autoencoder loss".into()));
    }
    Ok(losses)
}

/// Mean of the per-sample losses plus `lambda_theta * |theta|^2`.
pub fn rae_batch_loss<T: Scalar>(per_sample: &[T], theta: &ParameterSet<T>, lambda_theta: f64) -> T {
    let n = T::of(per_sample.len() as f64);
    per_sample.iter().copied().sum::<T>() / n + T::of(lambda_theta) * theta.sum_squares()
}

/// Result of one autoencoder update.
#[derive(Clone, Debug, PartialEq)]
pub struct RaeStep<T> {
    /// Per-sample losses measured before the parameter step.
    pub r_cure: Vec<T>,
    /// Batch objective before the step, decay term included.
    pub batch_loss: T,
}

#[derive(Clone, Debug)]
pub struct Rae<T> {
    encoder: Encoder,
    decoder: Decoder,
    /// Encoder parameters; the RAE optimizer keeps its moments in the entries.
    pub phi: ParameterSet<T>,
    pub theta: ParameterSet<T>,
    hyper: RaeHyper,
    updates: u64,
}

impl<T: Scalar> Rae<T> {
    pub fn new<R: Rng + ?Sized>(obs_shape: [usize; 3], arch: SrlArch, hyper: RaeHyper, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let encoder = Encoder::new(obs_shape, arch)?;
        let decoder = Decoder::new(&encoder)?;
        let phi = encoder.init_params(rng)?;
        let theta = decoder.init_params(rng)?;
        Ok(Rae { encoder, decoder, phi, theta, hyper, updates: 0 })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// Split borrow for callers that update `phi` through the encoder.
    pub fn encoder_and_phi(&mut self) -> (&Encoder, &mut ParameterSet<T>) {
        (&self.encoder, &mut self.phi)
    }

    pub fn hyper(&self) -> &RaeHyper {
        &self.hyper
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn set_updates(&mut self, n: u64) {
        self.updates = n;
    }

    pub fn encode(&self, obs: &Tensor<T>) -> Result<Tensor<T>> {
        self.encoder.encode(&self.phi, obs)
    }

    /// `(z, reconstruction)`.
    pub fn reconstruct(&self, obs: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let z = self.encode(obs)?;
        let recon = self.decoder.decode(&self.theta, &z)?;
        Ok((z, recon))
    }

    pub fn per_sample_loss(&self, obs: &Tensor<T>) -> Result<Vec<T>> {
        let (z, recon) = self.reconstruct(obs)?;
        rae_loss_per_sample(obs, &recon, &z, self.hyper.lambda_z)
    }

    pub fn batch_loss(&self, obs: &Tensor<T>) -> Result<T> {
        Ok(rae_batch_loss(&self.per_sample_loss(obs)?, &self.theta, self.hyper.lambda_theta))
    }

    /// Replaces the gradients of `phi` and `theta` with those of the batch
    /// objective and reports its value.
    pub fn compute_gradients(&mut self, obs: &Tensor<T>) -> Result<RaeStep<T>> {
        self.phi.zero_grad();
        self.theta.zero_grad();
        let (z, enc_tape) = self.encoder.forward(&self.phi, obs)?;
        let (recon, dec_tape) = self.decoder.net.forward(&self.theta, &z)?;
        let r_cure = rae_loss_per_sample(obs, &recon, &z, self.hyper.lambda_z)?;
        let batch_loss = rae_batch_loss(&r_cure, &self.theta, self.hyper.lambda_theta);

        let batch = obs.rows();
        let pixels = obs.row_len();
        let g_pix = T::of(2.0 / (batch * pixels) as f64);
        let d_recon: Vec<T> = recon.data().iter().zip(obs.data()).map(|(&r, &o)| g_pix * (r - o)).collect();
        let d_recon = Tensor::new(recon.shape().to_vec(), d_recon)?;
        let mut dz = self
            .decoder
            .net
            .backward(&mut self.theta, dec_tape, &d_recon, true)?
            .expect("input gradient requested");
        let g_z = T::of(2.0 * self.hyper.lambda_z / batch as f64);
        for (d, &v) in dz.data_mut().iter_mut().zip(z.data()) {
            *d += g_z * v;
        }
        self.encoder.backward(&mut self.phi, enc_tape, &dz)?;
        self.theta.add_l2_penalty_grad(T::of(self.hyper.lambda_theta));
        Ok(RaeStep { r_cure, batch_loss })
    }

    /// One Adam step on `phi` and `theta`; returns the pre-step per-sample
    /// losses as intrinsic rewards.
    pub fn update_rae(&mut self, obs: &Tensor<T>) -> Result<RaeStep<T>> {
        let step = self.compute_gradients(obs)?;
        let cfg = AdamConfig::with_lr(self.hyper.lr);
        adam_step(&mut self.phi, &cfg)?;
        adam_step(&mut self.theta, &cfg)?;
        self.phi.zero_grad();
        self.theta.zero_grad();
        self.updates += 1;
        Ok(step)
    }

    /// Writes the newest frame of sample 0 and its reconstruction as
    /// `recon_{index}_obs.png` / `recon_{index}_rec.png` under `dir`.
    pub fn dump_reconstruction(&self, obs: &Tensor<T>, index: u64, dir: &Path) -> Result<()> {
        let (_, recon) = self.reconstruct(obs)?;
        let [c, h, w] = self.encoder.obs_shape();
        if h != w || c < CHANNELS {
            return Err(Error::Config(format!("cannot dump a {c}x{h}x{w} observation")));
        }
        let newest = (c - CHANNELS) * h * w..c * h * w;
        let to_bytes = |row: &[T]| -> Vec<u8> {
            row[newest.clone()].iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8).collect()
        };
        std::fs::create_dir_all(dir)?;
        save_rgb_png(&dir.join(format!("recon_{index:06}_obs.png")), h, &to_bytes(obs.row(0)))?;
        save_rgb_png(&dir.join(format!("recon_{index:06}_rec.png")), h, &to_bytes(recon.row(0)))
    }
}
