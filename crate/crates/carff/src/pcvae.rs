//! Pose-conditional VAE.
//!
//! The encoder is pose-agnostic: any view of a scene state maps to the same
//! Gaussian latent, so views that underdetermine the state (occlusions,
//! shared initial states) get broad or in-between posteriors. The decoder is
//! pose-conditioned: it takes the latent concatenated with a one-hot camera
//! id and reconstructs that camera's view. Training pairs an input view with
//! a random target view of the same (scene, timestamp), which is what forces
//! the latent to carry scene state rather than appearance-from-one-angle.

use crate::ckpt::{check_provenance, Checkpoint};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::nn::{randn_tensor, Conv2d, ConvT2d, Linear, ParamSet};
use crate::scenegen::DatasetManifest;
use candle_core::{DType, Device, Tensor};
use candle_nn::ops::leaky_relu;
use candle_nn::Optimizer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

const LOGVAR_CLAMP: f64 = 10.0;

/// Diagonal Gaussian belief over the latent space: q(z|I) = N(mu, var).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f32>,
    pub var: Vec<f32>,
}

impl LatentGaussian {
    /// One reparameterized draw.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f32> {
        use rand_distr::{Distribution, StandardNormal};
        self.mu
            .iter()
            .zip(&self.var)
            .map(|(&m, &v)| {
                let e: f32 = StandardNormal.sample(rng);
                m + e * v.sqrt()
            })
            .collect()
    }
}

/// Delayed-linear KL weight schedule: hold `w_start` until `start_epoch`,
/// ramp linearly to `w_end` at `end_epoch`, then hold `w_end`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct KlSchedule {
    pub w_start: f64,
    pub w_end: f64,
    pub start_epoch: usize,
    pub end_epoch: usize,
}

impl Default for KlSchedule {
    fn default() -> Self {
        KlSchedule {
            w_start: 1e-6,
            w_end: 1e-5,
            start_epoch: 50,
            end_epoch: 80,
        }
    }
}

impl KlSchedule {
    pub fn weight(&self, epoch: usize) -> f64 {
        if epoch <= self.start_epoch {
            self.w_start
        } else if epoch >= self.end_epoch {
            self.w_end
        } else {
            let f = (epoch - self.start_epoch) as f64
                / (self.end_epoch - self.start_epoch) as f64;
            self.w_start + f * (self.w_end - self.w_start)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PcVaeConfig {
    pub latent_dim: usize,
    pub pose_count: usize,
    /// Square input resolution.
    pub image_size: usize,
    /// Encoder channel progression; the decoder mirrors it. Each stage
    /// halves (encoder) or doubles (decoder) the spatial size.
    pub channels: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub kl: KlSchedule,
    pub seed: u64,
}

impl Default for PcVaeConfig {
    fn default() -> Self {
        PcVaeConfig {
            latent_dim: 8,
            pose_count: 24,
            image_size: 64,
            channels: vec![16, 32, 64, 128],
            lr: 0.002,
            epochs: 80,
            batch_size: 64,
            kl: KlSchedule::default(),
            seed: 0,
        }
    }
}

impl PcVaeConfig {
    pub fn validate(&self) -> Result<()> {
        let down = 1usize << self.channels.len();
        if self.channels.is_empty() || self.image_size % down != 0 || self.image_size / down == 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} not divisible into {} conv stages",
                self.image_size,
                self.channels.len()
            )));
        }
        if self.latent_dim == 0 || self.pose_count == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "latent_dim, pose_count, batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    fn bottom_spatial(&self) -> usize {
        self.image_size >> self.channels.len()
    }
}

pub struct PcVae {
    pub cfg: PcVaeConfig,
    enc_convs: Vec<Conv2d>,
    enc_fc: Linear,
    dec_fc: Linear,
    dec_convs: Vec<ConvT2d>,
    pub params: ParamSet,
}

impl PcVae {
    pub fn new(cfg: PcVaeConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut ps = ParamSet::new(device);
        let mut enc_convs = Vec::new();
        let mut in_ch = 3;
        for (i, &ch) in cfg.channels.iter().enumerate() {
            enc_convs.push(Conv2d::new(
                &mut ps,
                &format!("enc.conv{i}"),
                in_ch,
                ch,
                4,
                2,
                1,
                &mut rng,
            )?);
            in_ch = ch;
        }
        let s = cfg.bottom_spatial();
        let bottom = cfg.channels.last().unwrap() * s * s;
        let enc_fc = Linear::new(&mut ps, "enc.fc", bottom, 2 * cfg.latent_dim, &mut rng)?;
        let dec_fc = Linear::new(
            &mut ps,
            "dec.fc",
            cfg.latent_dim + cfg.pose_count,
            bottom,
            &mut rng,
        )?;
        let mut dec_convs = Vec::new();
        let mut chans: Vec<usize> = cfg.channels.clone();
        chans.reverse(); // e.g. [128, 64, 32, 16]
        for i in 0..chans.len() {
            let out = if i + 1 < chans.len() { chans[i + 1] } else { 3 };
            dec_convs.push(ConvT2d::new(
                &mut ps,
                &format!("dec.conv{i}"),
                chans[i],
                out,
                4,
                2,
                1,
                &mut rng,
            )?);
        }
        Ok(PcVae {
            cfg,
            enc_convs,
            enc_fc,
            dec_fc,
            dec_convs,
            params: ps,
        })
    }

    /// (mu, logvar), each (B, D). Input (B, 3, S, S) in [0,1].
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = x.clone();
        for conv in &self.enc_convs {
            h = leaky_relu(&conv.forward(&h)?, 0.2)?;
        }
        let b = h.dim(0)?;
        let h = h.reshape((b, ()))?;
        let out = self.enc_fc.forward(&h)?;
        let mu = out.narrow(1, 0, self.cfg.latent_dim)?;
        // The -8 offset starts the posterior near-deterministic (sigma ~ 0.02
        // at init); otherwise unit-variance sampling noise drowns the latent
        // early on and the decoder learns to ignore it.
        let logvar = (out.narrow(1, self.cfg.latent_dim, self.cfg.latent_dim)? - 8.0)?
            .clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)?;
        Ok((mu, logvar))
    }

    /// z = mu + eps * sigma, with the noise supplied by the caller so runs
    /// stay reproducible.
    pub fn reparameterize(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Result<Tensor> {
        Ok(mu.add(&eps.mul(&(logvar * 0.5)?.exp()?)?)?)
    }

    /// Decode latents (B, D) with target pose ids to images (B, 3, S, S).
    pub fn decode(&self, z: &Tensor, pose_ids: &[usize]) -> Result<Tensor> {
        let b = z.dim(0)?;
        if pose_ids.len() != b {
            return Err(Error::ShapeMismatch {
                expected: format!("{b} pose ids"),
                got: format!("{}", pose_ids.len()),
            });
        }
        let mut onehot = vec![0.0f32; b * self.cfg.pose_count];
        for (i, &p) in pose_ids.iter().enumerate() {
            if p >= self.cfg.pose_count {
                return Err(Error::PoseOutOfRange(p, self.cfg.pose_count));
            }
            onehot[i * self.cfg.pose_count + p] = 1.0;
        }
        let onehot = Tensor::from_vec(onehot, (b, self.cfg.pose_count), z.device())?;
        let h = Tensor::cat(&[z, &onehot], 1)?;
        let s = self.cfg.bottom_spatial();
        let ch = *self.cfg.channels.last().unwrap();
        let h = self.dec_fc.forward(&h)?;
        let mut h = leaky_relu(&h, 0.2)?.reshape((b, ch, s, s))?;
        let n = self.dec_convs.len();
        for (i, conv) in self.dec_convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if i + 1 < n {
                h = leaky_relu(&h, 0.2)?;
            }
        }
        Ok(candle_nn::ops::sigmoid(&h)?)
    }

    /// Per-batch KL to the unit Gaussian: sum over latent dims, mean over
    /// the batch.
    pub fn kl_divergence(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
        let term = ((mu.sqr()? + logvar.exp()?)? - logvar)? - 1.0;
        Ok((term?.sum(1)? * 0.5)?.mean(0)?)
    }

    /// Encode a single image to its latent belief.
    pub fn encode_image(&self, img: &Image) -> Result<LatentGaussian> {
        let x = images_to_tensor(std::slice::from_ref(img), self.params.device())?;
        let (mu, logvar) = self.encode(&x)?;
        Ok(LatentGaussian {
            mu: mu.flatten_all()?.to_vec1::<f32>()?,
            var: logvar.exp()?.flatten_all()?.to_vec1::<f32>()?,
        })
    }

    /// Decode a single latent mean to the view from `pose_id`.
    pub fn decode_image(&self, z: &[f32], pose_id: usize) -> Result<Image> {
        let zt = Tensor::from_vec(z.to_vec(), (1, z.len()), self.params.device())?;
        let out = self.decode(&zt, &[pose_id])?;
        tensor_to_images(&out).map(|mut v| v.remove(0))
    }
}

/// ELBO pieces: (total, recon mse, kl). Reconstruction is the pixel-mean MSE,
/// KL is dimension-summed, and `w` trades them off per the schedule.
pub fn pcvae_loss(
    recon: &Tensor,
    target: &Tensor,
    mu: &Tensor,
    logvar: &Tensor,
    w: f64,
) -> Result<(Tensor, Tensor, Tensor)> {
    let mse = recon.sub(target)?.sqr()?.mean_all()?;
    let kl = PcVae::kl_divergence(mu, logvar)?;
    let total = (&mse + (&kl * w)?)?;
    Ok((total, mse, kl))
}

/// Images (row-major RGB in [0,1]) to an NCHW tensor.
pub fn images_to_tensor(images: &[Image], device: &Device) -> Result<Tensor> {
    let (w, h) = (images[0].width, images[0].height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width != w || img.height != h {
            return Err(Error::Dataset("mixed image resolutions".into()));
        }
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(img.data[(y * w + x) * 3 + c]);
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?)
}

/// NCHW tensor back to images.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<Image>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::ShapeMismatch {
            expected: "3 channels".into(),
            got: format!("{c}"),
        });
    }
    let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let mut img = Image::new(w, h);
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    img.data[(y * w + x) * 3 + ch] = flat[((i * 3 + ch) * h + y) * w + x];
                }
            }
        }
        out.push(img);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub recon_mse: f64,
    pub kl: f64,
    pub kl_weight: f64,
}

/// Train on every frame of the dataset with cross-pose reconstruction
/// targets. Returns the model and per-epoch loss curves.
pub fn train_pcvae(
    manifest: &DatasetManifest,
    images: &[Image],
    cfg: PcVaeConfig,
    device: &Device,
) -> Result<(PcVae, Vec<EpochStats>)> {
    if cfg.pose_count != manifest.poses.len() {
        return Err(Error::InvalidConfig(format!(
            "config pose_count {} != dataset pose count {}",
            cfg.pose_count,
            manifest.poses.len()
        )));
    }
    let model = PcVae::new(cfg.clone(), device)?;
    let mut opt = candle_nn::AdamW::new(
        model.params.all(),
        candle_nn::ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;

    // frames of the same (scene, t), keyed for target-pose lookup
    let mut by_state: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (i, f) in manifest.frames.iter().enumerate() {
        by_state.entry((f.scene_id, f.timestamp)).or_default().push(i);
    }
    let all = images_to_tensor(images, device)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..manifest.frames.len()).collect();
    let mut stats = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let w = cfg.kl.weight(epoch);
        order.shuffle(&mut rng);
        let mut sum_mse = 0.0;
        let mut sum_kl = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tgt_idx = Vec::with_capacity(chunk.len());
            let mut tgt_pose = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let f = &manifest.frames[i];
                let peers = &by_state[&(f.scene_id, f.timestamp)];
                let j = peers[rng.gen_range(0..peers.len())];
                tgt_idx.push(j as u32);
                tgt_pose.push(manifest.frames[j].pose_id);
            }
            let in_idx: Vec<u32> = chunk.iter().map(|&i| i as u32).collect();
            let input = all.index_select(
                &Tensor::from_vec(in_idx, chunk.len(), device)?,
                0,
            )?;
            let target = all.index_select(
                &Tensor::from_vec(tgt_idx, chunk.len(), device)?,
                0,
            )?;
            let (mu, logvar) = model.encode(&input)?;
            let eps = randn_tensor(mu.dims(), &mut rng, device)?;
            let z = PcVae::reparameterize(&mu, &logvar, &eps)?;
            let recon = model.decode(&z, &tgt_pose)?;
            let (loss, mse, kl) = pcvae_loss(&recon, &target, &mu, &logvar, w)?;
            opt.backward_step(&loss)?;
            sum_mse += mse.to_scalar::<f32>()? as f64;
            sum_kl += kl.to_scalar::<f32>()? as f64;
            batches += 1.0;
        }
        stats.push(EpochStats {
            epoch,
            recon_mse: sum_mse / batches,
            kl: sum_kl / batches,
            kl_weight: w,
        });
    }
    Ok((model, stats))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcVaeHeader {
    pub config: PcVaeConfig,
    /// SHA-256 of the dataset manifest this encoder was trained on.
    pub dataset_sha256: String,
}

pub fn save_pcvae(model: &PcVae, dataset_sha256: &str, path: &Path) -> Result<()> {
    Checkpoint {
        header: PcVaeHeader {
            config: model.cfg.clone(),
            dataset_sha256: dataset_sha256.to_string(),
        },
        tensors: model.params.to_named_tensors()?,
    }
    .save(path)
}

/// Load a checkpoint; when `expect_dataset_sha256` is given, refuse one
/// trained against a different dataset.
pub fn load_pcvae(
    path: &Path,
    expect_dataset_sha256: Option<&str>,
    device: &Device,
) -> Result<(PcVae, PcVaeHeader)> {
    let ckpt: Checkpoint<PcVaeHeader> = Checkpoint::load(path)?;
    if let Some(expected) = expect_dataset_sha256 {
        check_provenance("dataset_sha256", &ckpt.header.dataset_sha256, expected)?;
    }
    let mut model = PcVae::new(ckpt.header.config.clone(), device)?;
    model.params.load_named_tensors(&ckpt.tensors)?;
    Ok((model, ckpt.header))
}
