//! Latent-conditioned neural radiance field.
//!
//! A positional-encoding MLP maps (position, view direction, scene latent) to
//! density and color; images come out of emission-absorption quadrature along
//! camera rays, with residual transmittance hitting a constant background.
//! Training supervises pixel colors of dataset frames, with each frame's
//! latent drawn from the frozen encoder posterior: early iterations use the
//! posterior mean, later ones increasingly sample it, so the field learns to
//! decode the whole latent neighborhood rather than isolated points.

use crate::ckpt::{check_provenance, Checkpoint};
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::img::Image;
use crate::nn::{Linear, ParamSet};
use crate::pcvae::PcVae;
use crate::scenegen::{CameraPose, DatasetManifest};
use candle_core::{Device, Tensor};
use candle_nn::Optimizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NerfConfig {
    pub latent_dim: usize,
    /// Frequency bands of the position / direction encodings.
    pub pos_bands: usize,
    pub dir_bands: usize,
    pub density_layers: usize,
    pub density_hidden: usize,
    pub color_layers: usize,
    pub color_hidden: usize,
    pub feat_dim: usize,
    /// Quadrature samples per ray.
    pub samples: usize,
    pub rays_per_batch: usize,
    pub iters: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of the initial one (exponential decay).
    pub lr_final_frac: f64,
    /// Probability of using the posterior mean anneals linearly from 1 down
    /// to this floor over training; otherwise the latent is sampled.
    pub latent_anneal_min: f64,
    pub background: [f32; 3],
    pub world_bounds: Aabb,
    pub seed: u64,
}

impl Default for NerfConfig {
    fn default() -> Self {
        NerfConfig {
            latent_dim: 8,
            pos_bands: 8,
            dir_bands: 4,
            density_layers: 4,
            density_hidden: 128,
            color_layers: 2,
            color_hidden: 64,
            feat_dim: 16,
            samples: 64,
            rays_per_batch: 1024,
            iters: 3000,
            lr: 0.002,
            lr_final_frac: 0.1,
            latent_anneal_min: 0.5,
            background: [0.5, 0.5, 0.5],
            world_bounds: Aabb {
                min: [-4.6, -4.6, -0.1],
                max: [4.6, 4.6, 3.4],
            },
            seed: 0,
        }
    }
}

impl NerfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || self.rays_per_batch == 0 || self.density_layers == 0 {
            return Err(Error::InvalidConfig(
                "samples >= 2, rays_per_batch >= 1, density_layers >= 1 required".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr_final_frac > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.latent_anneal_min) {
            return Err(Error::InvalidConfig(
                "latent_anneal_min must be in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// sin/cos positional encoding with frequencies 2^0..2^(bands-1), identity
/// included: 3 + 6*bands output dims.
pub fn positional_encoding(x: &Tensor, bands: usize) -> Result<Tensor> {
    let mut parts = vec![x.clone()];
    for b in 0..bands {
        let scaled = (x * (std::f64::consts::PI * f64::powi(2.0, b as i32)))?;
        parts.push(scaled.sin()?);
        parts.push(scaled.cos()?);
    }
    Ok(Tensor::cat(&parts, candle_core::D::Minus1)?)
}

pub struct RadianceField {
    pub cfg: NerfConfig,
    density_net: Vec<Linear>,
    density_out: Linear, // hidden -> 1 + feat_dim
    color_net: Vec<Linear>,
    color_out: Linear, // hidden -> 3
    pub params: ParamSet,
}

impl RadianceField {
    pub fn new(cfg: NerfConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut ps = ParamSet::new(device);
        let pos_dim = 3 + 6 * cfg.pos_bands;
        let dir_dim = 3 + 6 * cfg.dir_bands;

        let mut density_net = Vec::new();
        let mut in_dim = pos_dim + cfg.latent_dim;
        for i in 0..cfg.density_layers {
            density_net.push(Linear::new(
                &mut ps,
                &format!("density.{i}"),
                in_dim,
                cfg.density_hidden,
                &mut rng,
            )?);
            in_dim = cfg.density_hidden;
        }
        let density_out = Linear::new(
            &mut ps,
            "density.out",
            cfg.density_hidden,
            1 + cfg.feat_dim,
            &mut rng,
        )?;

        let mut color_net = Vec::new();
        let mut in_dim = cfg.feat_dim + dir_dim + cfg.latent_dim;
        for i in 0..cfg.color_layers {
            color_net.push(Linear::new(
                &mut ps,
                &format!("color.{i}"),
                in_dim,
                cfg.color_hidden,
                &mut rng,
            )?);
            in_dim = cfg.color_hidden;
        }
        let color_out = Linear::new(&mut ps, "color.out", cfg.color_hidden, 3, &mut rng)?;

        Ok(RadianceField {
            cfg,
            density_net,
            density_out,
            color_net,
            color_out,
            params: ps,
        })
    }

    /// Density (softplus) and geometry feature for points (N, 3) with latents
    /// (N, D). Returns (sigma (N,), feat (N, F)).
    pub fn density(&self, points: &Tensor, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let enc = positional_encoding(points, self.cfg.pos_bands)?;
        let mut h = Tensor::cat(&[&enc, z], 1)?;
        for l in &self.density_net {
            h = l.forward(&h)?.relu()?;
        }
        let out = self.density_out.forward(&h)?;
        let sigma = softplus(&out.narrow(1, 0, 1)?)?.squeeze(1)?;
        let feat = out.narrow(1, 1, self.cfg.feat_dim)?;
        Ok((sigma, feat))
    }

    /// Color (sigmoid RGB) for features, directions (N, 3), latents (N, D).
    pub fn color(&self, feat: &Tensor, dirs: &Tensor, z: &Tensor) -> Result<Tensor> {
        let enc = positional_encoding(dirs, self.cfg.dir_bands)?;
        let mut h = Tensor::cat(&[feat, &enc, z], 1)?;
        for l in &self.color_net {
            h = l.forward(&h)?.relu()?;
        }
        Ok(candle_nn::ops::sigmoid(&self.color_out.forward(&h)?)?)
    }

    /// Emission-absorption quadrature for a batch of rays sharing one latent.
    ///
    /// `origins`/`dirs`: (R, 3); `t0`/`t1`: per-ray integration range (a ray
    /// that misses the world bounds gets t0 == t1 and renders the exact
    /// background); `jitter`: optional (R, S) stratified offsets in [0,1).
    /// Returns colors (R, 3), differentiable.
    pub fn render_rays(
        &self,
        origins: &Tensor,
        dirs: &Tensor,
        t0: &Tensor,
        t1: &Tensor,
        z: &[f32],
        jitter: Option<&Tensor>,
    ) -> Result<Tensor> {
        let dev = origins.device();
        let r = origins.dim(0)?;
        let s = self.cfg.samples;

        // sample positions: t = t0 + (i + u)/S * (t1 - t0), u = 0.5 or jitter
        let idx: Vec<f32> = (0..s).map(|i| i as f32).collect();
        let idx = Tensor::from_vec(idx, (1, s), dev)?;
        let offs = match jitter {
            Some(j) => idx.broadcast_add(j)?,
            None => (idx + 0.5)?,
        };
        let span = t1.sub(t0)?.reshape((r, 1))?; // (R, 1)
        let t = t0
            .reshape((r, 1))?
            .broadcast_add(&(offs.broadcast_mul(&span)? / s as f64)?)?; // (R, S)

        // deltas between consecutive samples, last one closes out to t1
        let t_next = Tensor::cat(
            &[&t.narrow(1, 1, s - 1)?, &t1.reshape((r, 1))?],
            1,
        )?;
        let delta = (t_next - &t)?.clamp(0.0, f64::INFINITY)?; // (R, S)

        let pts = origins
            .reshape((r, 1, 3))?
            .broadcast_add(&dirs.reshape((r, 1, 3))?.broadcast_mul(&t.reshape((r, s, 1))?)?)?
            .reshape((r * s, 3))?;
        let z_t = Tensor::from_vec(z.to_vec(), (1, z.len()), dev)?;
        let z_pts = z_t.broadcast_as((r * s, z.len()))?.contiguous()?;
        let (sigma, feat) = self.density(&pts, &z_pts)?;
        let dirs_rep = dirs
            .reshape((r, 1, 3))?
            .broadcast_as((r, s, 3))?
            .contiguous()?
            .reshape((r * s, 3))?;
        let rgb = self.color(&feat, &dirs_rep, &z_pts)?.reshape((r, s, 3))?;

        composite(&sigma.reshape((r, s))?, &rgb, &delta, self.cfg.background)
    }

    /// Render a full image for one latent, in chunks, without gradients.
    pub fn render_image(&self, cam: &CameraPose, z: &[f32]) -> Result<Image> {
        cam.validate()?;
        let dev = self.params.device().clone();
        let (origins, dirs, t0, t1) = camera_rays(cam, &self.cfg.world_bounds, &dev)?;
        let n = cam.width * cam.height;
        let mut colors = Vec::with_capacity(n * 3);
        let chunk = 4096;
        let mut i = 0;
        while i < n {
            let len = chunk.min(n - i);
            let c = self
                .render_rays(
                    &origins.narrow(0, i, len)?,
                    &dirs.narrow(0, i, len)?,
                    &t0.narrow(0, i, len)?,
                    &t1.narrow(0, i, len)?,
                    z,
                    None,
                )?
                .detach();
            colors.extend(c.flatten_all()?.to_vec1::<f32>()?);
            i += len;
        }
        let mut img = Image::new(cam.width, cam.height);
        img.data.copy_from_slice(&colors);
        Ok(img)
    }

    /// Densities at arbitrary world points for one latent.
    pub fn probe_density(&self, points: &[[f32; 3]], z: &[f32]) -> Result<Vec<f32>> {
        let dev = self.params.device().clone();
        let n = points.len();
        let flat: Vec<f32> = points.iter().flatten().copied().collect();
        let pts = Tensor::from_vec(flat, (n, 3), &dev)?;
        let z_t = Tensor::from_vec(z.to_vec(), (1, z.len()), &dev)?
            .broadcast_as((n, z.len()))?
            .contiguous()?;
        let (sigma, _) = self.density(&pts, &z_t)?;
        Ok(sigma.detach().to_vec1::<f32>()?)
    }

}

/// Emission-absorption quadrature: composite per-sample densities `sigma`
/// (R, S) and colors `rgb` (R, S, 3) over slab widths `delta` (R, S), with
/// the residual transmittance hitting a constant background.
pub fn composite(
    sigma: &Tensor,
    rgb: &Tensor,
    delta: &Tensor,
    background: [f32; 3],
) -> Result<Tensor> {
    let (r, s) = sigma.dims2()?;
    let a = sigma.mul(delta)?; // optical depth per slab
    let cum = a.cumsum(1)?;
    let trans = (cum.sub(&a))?.neg()?.exp()?; // exclusive cumsum -> T_i
    let alpha = (a.neg()?.exp()?.neg()? + 1.0)?; // 1 - exp(-sigma*delta)
    let weights = trans.mul(&alpha)?; // (R, S)
    let fg = weights.reshape((r, s, 1))?.broadcast_mul(rgb)?.sum(1)?; // (R, 3)

    let t_final = cum.narrow(1, s - 1, 1)?.neg()?.exp()?; // (R, 1)
    let bg = Tensor::from_vec(background.to_vec(), (1, 3), sigma.device())?;
    Ok(fg.add(&t_final.broadcast_mul(&bg)?)?)
}

fn softplus(x: &Tensor) -> Result<Tensor> {
    // ln(1 + e^x), computed stably as max(x, 0) + ln(1 + e^-|x|)
    let relu = x.relu()?;
    let nabs = x.abs()?.neg()?;
    Ok((relu + (nabs.exp()? + 1.0)?.log()?)?)
}

/// All primary rays of a camera with their world-bounds integration ranges:
/// (origins (N,3), dirs (N,3), t0 (N,), t1 (N,)), row-major pixel order.
pub fn camera_rays(
    cam: &CameraPose,
    bounds: &Aabb,
    device: &Device,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let n = cam.width * cam.height;
    let origin = Vec3::from_array(cam.position);
    let mut origins = Vec::with_capacity(n * 3);
    let mut dirs = Vec::with_capacity(n * 3);
    let mut t0s = Vec::with_capacity(n);
    let mut t1s = Vec::with_capacity(n);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let d = cam.ray_dir(px, py);
            let (t0, t1) = match bounds.intersect(origin, d) {
                Some((a, b)) if b > 0.0 => (a.max(0.0), b),
                _ => (0.0, 0.0), // miss: zero-length range renders background
            };
            origins.extend_from_slice(&origin.to_array());
            dirs.extend_from_slice(&d.to_array());
            t0s.push(t0);
            t1s.push(t1);
        }
    }
    Ok((
        Tensor::from_vec(origins, (n, 3), device)?,
        Tensor::from_vec(dirs, (n, 3), device)?,
        Tensor::from_vec(t0s, n, device)?,
        Tensor::from_vec(t1s, n, device)?,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct NerfIterStats {
    pub iter: usize,
    pub mse: f64,
    pub lr: f64,
    pub mean_prob: f64,
}

/// Train the field on dataset frames with latents from the frozen encoder.
/// Reports loss every `report_every` iterations.
pub fn train_nerf(
    manifest: &DatasetManifest,
    images: &[Image],
    encoder: &PcVae,
    cfg: NerfConfig,
    device: &Device,
    report_every: usize,
) -> Result<(RadianceField, Vec<NerfIterStats>)> {
    if cfg.latent_dim != encoder.cfg.latent_dim {
        return Err(Error::InvalidConfig(format!(
            "field latent_dim {} != encoder latent_dim {}",
            cfg.latent_dim, encoder.cfg.latent_dim
        )));
    }
    let field = RadianceField::new(cfg.clone(), device)?;
    let mut opt = candle_nn::AdamW::new(
        field.params.all(),
        candle_nn::ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;

    // frozen posteriors, one per frame
    let mut posteriors = Vec::with_capacity(images.len());
    for img in images {
        posteriors.push(encoder.encode_image(img)?);
    }

    // precompute one ray bundle per pose (shared across frames)
    let mut pose_rays = Vec::with_capacity(manifest.poses.len());
    for cam in &manifest.poses {
        pose_rays.push(camera_rays(cam, &cfg.world_bounds, device)?);
    }

    // Per-pose CDF over pixels, weighted by the pixel's variance across all
    // states sharing that pose. Uniform ray sampling starves the
    // state-dependent pixels (the actor covers a few percent of the image),
    // which lets the field converge to a latent-blind average; drawing half
    // of every batch from this distribution keeps gradient on the pixels the
    // latent has to explain.
    let pixel_cdfs = state_variance_cdfs(manifest, images);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut stats = Vec::new();
    let mut running = 0.0;
    let mut running_n = 0.0;
    for it in 0..cfg.iters {
        // one frame per iteration; its latent from the annealed posterior
        let fi = rng.gen_range(0..images.len());
        let frame = &manifest.frames[fi];
        let frac = it as f64 / cfg.iters.max(1) as f64;
        let p_mean = 1.0 - (1.0 - cfg.latent_anneal_min) * frac;
        let post = &posteriors[fi];
        let z: Vec<f32> = if rng.gen_bool(p_mean) {
            post.mu.clone()
        } else {
            post.sample(&mut rng)
        };

        let (origins, dirs, t0, t1) = &pose_rays[frame.pose_id];
        let n_pix = images[fi].width * images[fi].height;
        let n_rays = cfg.rays_per_batch.min(n_pix);
        let cdf = &pixel_cdfs[frame.pose_id];
        let picks: Vec<u32> = (0..n_rays)
            .map(|i| {
                if i % 2 == 0 || cdf.is_empty() {
                    rng.gen_range(0..n_pix) as u32
                } else {
                    let u: f32 = rng.gen_range(0.0..cdf[cdf.len() - 1]);
                    cdf.partition_point(|&c| c <= u) as u32
                }
            })
            .collect();
        let mut truth = Vec::with_capacity(n_rays * 3);
        for &p in &picks {
            let base = p as usize * 3;
            truth.extend_from_slice(&images[fi].data[base..base + 3]);
        }
        let idx = Tensor::from_vec(picks, n_rays, device)?;
        let o = origins.index_select(&idx, 0)?;
        let d = dirs.index_select(&idx, 0)?;
        let a = t0.index_select(&idx, 0)?;
        let b = t1.index_select(&idx, 0)?;
        let jit: Vec<f32> = (0..n_rays * cfg.samples).map(|_| rng.gen::<f32>()).collect();
        let jit = Tensor::from_vec(jit, (n_rays, cfg.samples), device)?;
        let truth = Tensor::from_vec(truth, (n_rays, 3), device)?;

        let pred = field.render_rays(&o, &d, &a, &b, &z, Some(&jit))?;
        let loss = pred.sub(&truth)?.sqr()?.mean_all()?;
        let lr = cfg.lr * cfg.lr_final_frac.powf(frac);
        opt.set_learning_rate(lr);
        opt.backward_step(&loss)?;

        running += loss.to_scalar::<f32>()? as f64;
        running_n += 1.0;
        if (it + 1) % report_every.max(1) == 0 || it + 1 == cfg.iters {
            stats.push(NerfIterStats {
                iter: it + 1,
                mse: running / running_n,
                lr,
                mean_prob: p_mean,
            });
            running = 0.0;
            running_n = 0.0;
        }
    }
    Ok((field, stats))
}

/// One cumulative distribution per pose over its pixels, weighted by the
/// pixel's variance across every (scene, timestamp) rendered from that pose.
/// A pose whose images are all identical gets an empty CDF (no state signal).
fn state_variance_cdfs(manifest: &DatasetManifest, images: &[Image]) -> Vec<Vec<f32>> {
    let mut cdfs = Vec::with_capacity(manifest.poses.len());
    for pose_id in 0..manifest.poses.len() {
        let members: Vec<&Image> = manifest
            .frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.pose_id == pose_id)
            .map(|(i, _)| &images[i])
            .collect();
        if members.len() < 2 {
            cdfs.push(Vec::new());
            continue;
        }
        let n_pix = members[0].width * members[0].height;
        let mut cdf = Vec::with_capacity(n_pix);
        let mut total = 0.0f32;
        for p in 0..n_pix {
            let mut var = 0.0f32;
            for c in 0..3 {
                let vals: Vec<f32> = members.iter().map(|im| im.data[p * 3 + c]).collect();
                let mean = vals.iter().sum::<f32>() / vals.len() as f32;
                var += vals.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / vals.len() as f32;
            }
            total += var;
            cdf.push(total);
        }
        if total <= 0.0 {
            cdf.clear();
        }
        cdfs.push(cdf);
    }
    cdfs
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NerfHeader {
    pub config: NerfConfig,
    pub dataset_sha256: String,
    /// SHA-256 of the encoder checkpoint whose posteriors supervised training.
    pub pcvae_sha256: String,
}

pub fn save_nerf(
    field: &RadianceField,
    dataset_sha256: &str,
    pcvae_sha256: &str,
    path: &Path,
) -> Result<()> {
    Checkpoint {
        header: NerfHeader {
            config: field.cfg.clone(),
            dataset_sha256: dataset_sha256.to_string(),
            pcvae_sha256: pcvae_sha256.to_string(),
        },
        tensors: field.params.to_named_tensors()?,
    }
    .save(path)
}

pub fn load_nerf(
    path: &Path,
    expect_pcvae_sha256: Option<&str>,
    device: &Device,
) -> Result<(RadianceField, NerfHeader)> {
    let ckpt: Checkpoint<NerfHeader> = Checkpoint::load(path)?;
    if let Some(expected) = expect_pcvae_sha256 {
        check_provenance("pcvae_sha256", &ckpt.header.pcvae_sha256, expected)?;
    }
    let mut field = RadianceField::new(ckpt.header.config.clone(), device)?;
    field.params.load_named_tensors(&ckpt.tensors)?;
    Ok((field, ckpt.header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_dims_and_values() {
        let dev = Device::Cpu;
        let x = Tensor::from_vec(vec![0.5f32, 0.0, -1.0], (1, 3), &dev).unwrap();
        let enc = positional_encoding(&x, 2).unwrap();
        assert_eq!(enc.dims(), &[1, 3 + 6 * 2]);
        let v = enc.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        // identity part
        assert_eq!(&v[0..3], &[0.5, 0.0, -1.0]);
        // first band: sin(pi * x)
        assert!((v[3] - (std::f32::consts::PI * 0.5).sin()).abs() < 1e-5);
        assert!(v[4].abs() < 1e-6);
    }

    #[test]
    fn softplus_matches_reference() {
        let dev = Device::Cpu;
        let x = Tensor::from_vec(vec![-20.0f32, -1.0, 0.0, 1.0, 20.0], (5, 1), &dev).unwrap();
        let y = softplus(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for (xv, yv) in [-20.0f32, -1.0, 0.0, 1.0, 20.0].iter().zip(&y) {
            let expect = (xv.exp() + 1.0).ln().min(xv.max(0.0) + (-xv.abs()).exp().ln_1p());
            // for large x the naive form overflows to x; compare against stable form
            let stable = xv.max(0.0) + (-xv.abs()).exp().ln_1p();
            assert!((yv - stable).abs() < 1e-5, "{xv}: {yv} vs {stable} ({expect})");
        }
    }

    #[test]
    fn miss_rays_render_exact_background() {
        let dev = Device::Cpu;
        let cfg = NerfConfig {
            samples: 8,
            ..Default::default()
        };
        let field = RadianceField::new(cfg.clone(), &dev).unwrap();
        let o = Tensor::from_vec(vec![0.0f32, 0.0, 10.0], (1, 3), &dev).unwrap();
        let d = Tensor::from_vec(vec![0.0f32, 0.0, 1.0], (1, 3), &dev).unwrap();
        let t0 = Tensor::from_vec(vec![0.0f32], 1, &dev).unwrap();
        let t1 = Tensor::from_vec(vec![0.0f32], 1, &dev).unwrap();
        let z = vec![0.0f32; cfg.latent_dim];
        let c = field
            .render_rays(&o, &d, &t0, &t1, &z, None)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        for (a, b) in c.iter().zip(&cfg.background) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn camera_ray_ranges_clip_to_bounds() {
        let dev = Device::Cpu;
        let cam = CameraPose {
            pose_id: 0,
            position: [0.0, -10.0, 0.5],
            target: [0.0, 0.0, 0.5],
            up: [0.0, 0.0, 1.0],
            focal: 60.0,
            width: 16,
            height: 16,
        };
        let bounds = Aabb {
            min: [-2.0, -2.0, 0.0],
            max: [2.0, 2.0, 1.0],
        };
        let (_, _, t0, t1) = camera_rays(&cam, &bounds, &dev).unwrap();
        let t0 = t0.to_vec1::<f32>().unwrap();
        let t1 = t1.to_vec1::<f32>().unwrap();
        // center pixel: straight down the -y axis, entering at y=-2 (t=8)
        let mid = 16 * 8 + 8;
        assert!((t0[mid] - 8.0).abs() < 0.2);
        assert!((t1[mid] - 12.0).abs() < 0.2);
        assert!(t0.iter().zip(&t1).all(|(a, b)| a <= b));
    }
}
