//! Belief forecasting: a mixture density network (MDN) maps the encoder
//! posterior of one timestamp to a K-Gaussian mixture over the next latent,
//! and a density-probing localizer turns sampled latents back into discrete
//! (scene, timestamp) states for auto-regressive rollouts.
//!
//! The MDN sees only belief parameters — the flat (mu ⊕ var) vector — never
//! pixels. Ambiguity thus lives entirely in the latent: two scenes that look
//! identical from some view share a posterior, and the network has to spread
//! probability mass over both continuations, which is what the bimodality
//! checks assert after training.

use crate::ckpt::{check_provenance, Checkpoint};
use crate::error::{Error, Result};
use crate::img::Image;
use crate::nerf::RadianceField;
use crate::nn::{Linear, ParamSet};
use crate::pcvae::{LatentGaussian, PcVae};
use crate::scenegen::{first_ego_pose, DatasetManifest};
use candle_core::{Device, Tensor, D};
use candle_nn::Optimizer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const SIGMA2_FLOOR: f64 = 1e-6;

/// K-component diagonal Gaussian mixture over the latent space.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GaussianMixture {
    pub pi: Vec<f32>,
    pub mu: Vec<Vec<f32>>,
    pub sigma2: Vec<Vec<f32>>,
}

impl GaussianMixture {
    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        if self.mu.len() != k || self.sigma2.len() != k || k == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("{k} components in mu and sigma2"),
                got: format!("{} / {}", self.mu.len(), self.sigma2.len()),
            });
        }
        let sum: f32 = self.pi.iter().sum();
        if self.pi.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights must be a distribution (sum {sum})"
            )));
        }
        if self.sigma2.iter().flatten().any(|&v| v <= 0.0) {
            return Err(Error::InvalidConfig("non-positive mixture variance".into()));
        }
        Ok(())
    }

    /// Index of the highest-weight component.
    pub fn dominant(&self) -> usize {
        self.pi
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap()
    }
}

/// log p(y) = log Σ_j π_j N(y; μ_j, σ_j²), via log-sum-exp for stability.
pub fn mixture_logpdf(m: &GaussianMixture, y: &[f32]) -> f64 {
    let mut terms = Vec::with_capacity(m.k());
    for j in 0..m.k() {
        let mut logp = if m.pi[j] > 0.0 {
            (m.pi[j] as f64).ln()
        } else {
            f64::NEG_INFINITY
        };
        for d in 0..y.len() {
            let v = m.sigma2[j][d] as f64;
            let diff = y[d] as f64 - m.mu[j][d] as f64;
            logp += -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + diff * diff / v);
        }
        terms.push(logp);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Negative log-likelihood of a sample set: −Σ_i log p(y_i).
pub fn mdn_nll(m: &GaussianMixture, samples: &[Vec<f32>]) -> f64 {
    samples.iter().map(|y| -mixture_logpdf(m, y)).sum()
}

/// Draw one latent: component j ~ Categorical(π), then z ~ N(μ_j, σ_j²).
pub fn sample_mixture(m: &GaussianMixture, rng: &mut ChaCha8Rng) -> Vec<f32> {
    use rand_distr::{Distribution, StandardNormal};
    let u: f32 = rng.gen();
    let mut acc = 0.0;
    let mut j = m.k() - 1;
    for (i, &p) in m.pi.iter().enumerate() {
        acc += p;
        if u < acc {
            j = i;
            break;
        }
    }
    m.mu[j]
        .iter()
        .zip(&m.sigma2[j])
        .map(|(&mu, &v)| {
            let e: f32 = StandardNormal.sample(rng);
            mu + e * v.sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MdnConfig {
    pub latent_dim: usize,
    pub k: usize,
    pub hidden: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of the initial one.
    pub lr_final_frac: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Samples drawn from each target belief per iteration.
    pub nll_samples: usize,
    /// Per-iteration input-noise std is drawn uniformly from this range.
    pub noise_min: f64,
    pub noise_max: f64,
    /// Fraction of training with mixture weights pinned uniform. Without the
    /// warmup the weight head can collapse onto one component before the
    /// means separate, leaving the other component dead and multi-modal
    /// targets covered by a single broad Gaussian.
    pub pi_warmup_frac: f64,
    /// Pose-index distance defining "neighboring view" targets.
    pub neighbor_radius: usize,
    pub seed: u64,
}

impl Default for MdnConfig {
    fn default() -> Self {
        MdnConfig {
            latent_dim: 8,
            k: 2,
            hidden: 512,
            lr: 0.005,
            lr_final_frac: 0.1,
            epochs: 3000,
            batch_size: 128,
            nll_samples: 1000,
            noise_min: 0.001,
            noise_max: 0.01,
            pi_warmup_frac: 0.3,
            neighbor_radius: 2,
            seed: 0,
        }
    }
}

impl MdnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0
            || self.k == 0
            || self.hidden == 0
            || self.batch_size == 0
            || self.nll_samples == 0
        {
            return Err(Error::InvalidConfig("MDN dimensions must be positive".into()));
        }
        if !(self.noise_min > 0.0 && self.noise_max >= self.noise_min) {
            return Err(Error::InvalidConfig("bad noise range".into()));
        }
        if !(0.0..=1.0).contains(&self.pi_warmup_frac) {
            return Err(Error::InvalidConfig("pi_warmup_frac must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// MDN: a 2-layer backbone feeding separate mean / variance heads (2 layers
/// each) and a 3-layer weight head. π comes out of a normalized exponential,
/// σ² out of an exponential with a small floor.
pub struct Mdn {
    pub cfg: MdnConfig,
    backbone: Vec<Linear>,
    mu_head: Vec<Linear>,
    var_head: Vec<Linear>,
    pi_head: Vec<Linear>,
    pub params: ParamSet,
}

impl Mdn {
    pub fn new(cfg: MdnConfig, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut ps = ParamSet::new(device);
        let h = cfg.hidden;
        let kd = cfg.k * cfg.latent_dim;
        let mk = |ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, dims: &[usize]| {
            let mut layers = Vec::new();
            for i in 0..dims.len() - 1 {
                layers.push(Linear::new(
                    ps,
                    &format!("{name}.{i}"),
                    dims[i],
                    dims[i + 1],
                    rng,
                )?);
            }
            Ok::<_, Error>(layers)
        };
        let backbone = mk(&mut ps, &mut rng, "backbone", &[2 * cfg.latent_dim, h, h])?;
        let mu_head = mk(&mut ps, &mut rng, "mu", &[h, h, kd])?;
        let var_head = mk(&mut ps, &mut rng, "var", &[h, h, kd])?;
        let pi_head = mk(&mut ps, &mut rng, "pi", &[h, h, h, cfg.k])?;
        Ok(Mdn {
            cfg,
            backbone,
            mu_head,
            var_head,
            pi_head,
            params: ps,
        })
    }

    fn head(layers: &[Linear], mut h: Tensor) -> Result<Tensor> {
        let n = layers.len();
        for (i, l) in layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < n {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    /// Batched forward on raw (B, 2D) belief vectors. Returns
    /// (log_pi (B,K), mu (B,K,D), sigma2 (B,K,D)), all differentiable.
    pub fn forward_raw(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let b = x.dim(0)?;
        let mut h = x.clone();
        for l in &self.backbone {
            h = l.forward(&h)?.relu()?;
        }
        let (k, d) = (self.cfg.k, self.cfg.latent_dim);
        let mu = Self::head(&self.mu_head, h.clone())?.reshape((b, k, d))?;
        let sigma2 = (Self::head(&self.var_head, h.clone())?
            .reshape((b, k, d))?
            .exp()?
            + SIGMA2_FLOOR)?;
        let logits = Self::head(&self.pi_head, h)?;
        let log_pi = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
        Ok((log_pi, mu, sigma2))
    }

    /// Predict the next-step mixture from one belief.
    pub fn forward(&self, g: &LatentGaussian) -> Result<GaussianMixture> {
        let d = self.cfg.latent_dim;
        if g.mu.len() != d || g.var.len() != d {
            return Err(Error::ShapeMismatch {
                expected: format!("latent dim {d}"),
                got: format!("{}/{}", g.mu.len(), g.var.len()),
            });
        }
        let mut x = g.mu.clone();
        x.extend_from_slice(&g.var);
        let xt = Tensor::from_vec(x, (1, 2 * d), self.params.device())?;
        let (log_pi, mu, sigma2) = self.forward_raw(&xt)?;
        let pi: Vec<f32> = log_pi.exp()?.flatten_all()?.to_vec1::<f32>()?;
        let mu_f: Vec<f32> = mu.flatten_all()?.to_vec1::<f32>()?;
        let s2_f: Vec<f32> = sigma2.flatten_all()?.to_vec1::<f32>()?;
        let m = GaussianMixture {
            pi,
            mu: mu_f.chunks(d).map(|c| c.to_vec()).collect(),
            sigma2: s2_f.chunks(d).map(|c| c.to_vec()).collect(),
        };
        m.validate()?;
        Ok(m)
    }
}

/// Differentiable batched NLL: mean over batch and samples of
/// −log Σ_j π_j N(y; μ_j, σ_j²), with y (B, N, D).
pub fn mdn_nll_tensor(
    log_pi: &Tensor,
    mu: &Tensor,
    sigma2: &Tensor,
    samples: &Tensor,
) -> Result<Tensor> {
    let (b, n, d) = samples.dims3()?;
    let k = log_pi.dim(1)?;
    let y = samples.reshape((b, 1, n, d))?;
    let m = mu.reshape((b, k, 1, d))?;
    let v = sigma2.reshape((b, k, 1, d))?;
    let diff = y.broadcast_sub(&m)?;
    let quad = diff.sqr()?.broadcast_div(&v)?; // (B,K,N,D)
    let log_norm = ((v * (2.0 * std::f64::consts::PI))?).log()?;
    let comp_logp = ((quad.broadcast_add(&log_norm)?).sum(3)? * (-0.5))?; // (B,K,N)
    let with_pi = comp_logp.broadcast_add(&log_pi.reshape((b, k, 1))?)?;
    // log-sum-exp over K
    let mx = with_pi.max(1)?.reshape((b, 1, n))?; // (B,1,N)
    let lse = (with_pi.broadcast_sub(&mx)?.exp()?.sum(1)?.log()?
        + mx.reshape((b, n))?)?;
    Ok(lse.mean_all()?.neg()?)
}

/// What the auto-regressive loop localizes against: one reference belief per
/// (scene, timestamp), plus the slot geometry for density probing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeliefTable {
    /// Reference belief of one canonical unoccluded view per state.
    #[serde(with = "state_entries")]
    pub beliefs: BTreeMap<(usize, usize), LatentGaussian>,
    /// Distinct candidate actor positions across the whole dataset.
    pub slots: Vec<[f32; 3]>,
    /// Per-state occupancy pattern: `Some(i)` = actor in slot i, `None` = absent.
    #[serde(with = "state_entries")]
    pub occupancy: BTreeMap<(usize, usize), Option<usize>>,
    /// Density threshold separating occupied from empty slots, calibrated on
    /// the reference beliefs (see [`calibrate_tau`]).
    #[serde(default = "default_tau")]
    pub tau: f32,
}

fn default_tau() -> f32 {
    0.5
}

/// JSON object keys must be strings, so the per-state maps are stored as
/// entry lists keyed by the (scene, timestamp) pair.
mod state_entries {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer, V: Serialize>(
        map: &BTreeMap<(usize, usize), V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        map.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, V: Deserialize<'de>>(
        d: D,
    ) -> Result<BTreeMap<(usize, usize), V>, D::Error> {
        Ok(Vec::<((usize, usize), V)>::deserialize(d)?
            .into_iter()
            .collect())
    }
}

impl BeliefTable {
    pub fn states(&self) -> Vec<(usize, usize)> {
        self.beliefs.keys().copied().collect()
    }
}

fn slot_key(p: [f32; 3]) -> [i64; 3] {
    [
        (p[0] * 1000.0).round() as i64,
        (p[1] * 1000.0).round() as i64,
        (p[2] * 1000.0).round() as i64,
    ]
}

/// Build the table from a trained encoder: for every (scene, t), encode the
/// first unoccluded frame (lowest pose id) as that state's reference belief.
pub fn build_belief_table(
    manifest: &DatasetManifest,
    images: &[Image],
    encoder: &PcVae,
) -> Result<BeliefTable> {
    let mut slots: Vec<[f32; 3]> = Vec::new();
    let mut slot_of = BTreeMap::new();
    for f in &manifest.frames {
        if let Some(p) = f.actor_position {
            let key = slot_key(p);
            if !slot_of.contains_key(&key) {
                slot_of.insert(key, slots.len());
                slots.push(p);
            }
        }
    }
    let mut beliefs = BTreeMap::new();
    let mut occupancy = BTreeMap::new();
    for (i, f) in manifest.frames.iter().enumerate() {
        let state = (f.scene_id, f.timestamp);
        if f.occluded || beliefs.contains_key(&state) {
            continue;
        }
        beliefs.insert(state, encoder.encode_image(&images[i])?);
        occupancy.insert(state, f.actor_position.map(|p| slot_of[&slot_key(p)]));
    }
    for s in &manifest.scenes {
        for t in 0..s.timestamps {
            if !beliefs.contains_key(&(s.scene_id, t)) {
                return Err(Error::Dataset(format!(
                    "state ({},{t}) has no unoccluded view",
                    s.scene_id
                )));
            }
        }
    }
    Ok(BeliefTable {
        beliefs,
        slots,
        occupancy,
        tau: default_tau(),
    })
}

/// One supervised transition: the belief of (s, t−1, pose c) should predict
/// the belief of (s, t) seen from a pose near c. All neighbor candidates are
/// kept; training samples one per visit so each epoch sees a fresh pairing.
#[derive(Debug, Clone)]
pub struct TransitionPair {
    pub input: LatentGaussian,
    pub targets: Vec<LatentGaussian>,
    pub scene_id: usize,
    pub from_t: usize,
}

/// Pose ids within `radius` of `pose`, staying inside its group: arc poses
/// wrap around the arc, ego poses wrap within the ego block.
fn neighbor_poses(pose: usize, pose_count: usize, radius: usize) -> Vec<usize> {
    let ego0 = first_ego_pose(pose_count);
    let (base, len) = if pose < ego0 { (0, ego0) } else { (ego0, pose_count - ego0) };
    let i = pose - base;
    let r = radius.min(len / 2);
    let mut out = Vec::new();
    for off in -(r as isize)..=(r as isize) {
        let j = (i as isize + off).rem_euclid(len as isize) as usize;
        let p = base + j;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Encoder posteriors for every frame, then one [`TransitionPair`] per
/// (scene, t−1→t, pose).
pub fn build_transition_dataset(
    manifest: &DatasetManifest,
    images: &[Image],
    encoder: &PcVae,
    neighbor_radius: usize,
) -> Result<Vec<TransitionPair>> {
    let mut posteriors = Vec::with_capacity(images.len());
    for img in images {
        posteriors.push(encoder.encode_image(img)?);
    }
    let index = manifest.frame_index();
    let pose_count = manifest.poses.len();
    let mut pairs = Vec::new();
    for f in &manifest.frames {
        let scene = manifest.scene(f.scene_id);
        if f.timestamp + 1 >= scene.timestamps {
            continue;
        }
        let i = index[&crate::scenegen::FrameKey {
            scene_id: f.scene_id,
            timestamp: f.timestamp,
            pose_id: f.pose_id,
        }];
        // Targets must represent the scene's true next state, so occluded
        // views — whose posteriors encode the ambiguous appearance, not the
        // state — are excluded. If every neighbor view is occluded (deep
        // inside an occlusion shadow), fall back to the state's first
        // unoccluded view so the pair still points at the right state.
        let next_frame = |p: usize| {
            &manifest.frames[index[&crate::scenegen::FrameKey {
                scene_id: f.scene_id,
                timestamp: f.timestamp + 1,
                pose_id: p,
            }]]
        };
        let mut targets: Vec<LatentGaussian> =
            neighbor_poses(f.pose_id, pose_count, neighbor_radius)
                .into_iter()
                .filter(|&p| !next_frame(p).occluded)
                .map(|p| {
                    let j = index[&crate::scenegen::FrameKey {
                        scene_id: f.scene_id,
                        timestamp: f.timestamp + 1,
                        pose_id: p,
                    }];
                    posteriors[j].clone()
                })
                .collect();
        if targets.is_empty() {
            let j = manifest
                .frames
                .iter()
                .position(|g| {
                    g.scene_id == f.scene_id && g.timestamp == f.timestamp + 1 && !g.occluded
                })
                .ok_or_else(|| {
                    Error::Dataset(format!(
                        "state ({},{}) has no unoccluded view",
                        f.scene_id,
                        f.timestamp + 1
                    ))
                })?;
            targets.push(posteriors[j].clone());
        }
        pairs.push(TransitionPair {
            input: posteriors[i].clone(),
            targets,
            scene_id: f.scene_id,
            from_t: f.timestamp,
        });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Serialize)]
pub struct MdnEpochStats {
    pub epoch: usize,
    pub nll: f64,
    pub lr: f64,
}

/// Train by sampled NLL with per-iteration Gaussian noise augmentation on
/// the input belief parameters.
pub fn train_mdn(
    pairs: &[TransitionPair],
    cfg: MdnConfig,
    device: &Device,
) -> Result<(Mdn, Vec<MdnEpochStats>)> {
    if pairs.is_empty() {
        return Err(Error::Dataset("empty transition dataset".into()));
    }
    let model = Mdn::new(cfg.clone(), device)?;
    let mut opt = candle_nn::AdamW::new(
        model.params.all(),
        candle_nn::ParamsAdamW {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let d = cfg.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut stats = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let frac = epoch as f64 / cfg.epochs.max(1) as f64;
        let lr = cfg.lr * cfg.lr_final_frac.powf(frac);
        opt.set_learning_rate(lr);
        let mut epoch_nll = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            // fresh noise scale each iteration, applied to mu and var alike
            let noise_sigma = rng.gen_range(cfg.noise_min..=cfg.noise_max);
            let mut x = Vec::with_capacity(b * 2 * d);
            let mut y = Vec::with_capacity(b * cfg.nll_samples * d);
            use rand_distr::{Distribution, StandardNormal};
            for &pi in chunk {
                let pair = &pairs[pi];
                for &m in pair.input.mu.iter().chain(&pair.input.var) {
                    let e: f32 = StandardNormal.sample(&mut rng);
                    x.push(m + e * noise_sigma as f32);
                }
                let target = &pair.targets[rng.gen_range(0..pair.targets.len())];
                for _ in 0..cfg.nll_samples {
                    y.extend(target.sample(&mut rng));
                }
            }
            let x = Tensor::from_vec(x, (b, 2 * d), device)?;
            let y = Tensor::from_vec(y, (b, cfg.nll_samples, d), device)?;
            let (log_pi, mu, sigma2) = model.forward_raw(&x)?;
            let log_pi = if frac < cfg.pi_warmup_frac {
                Tensor::full(
                    -(cfg.k as f64).ln() as f32,
                    log_pi.shape(),
                    device,
                )?
            } else {
                log_pi
            };
            let loss = mdn_nll_tensor(&log_pi, &mu, &sigma2, &y)?;
            opt.backward_step(&loss)?;
            epoch_nll += loss.to_scalar::<f32>()? as f64;
            batches += 1.0;
        }
        stats.push(MdnEpochStats {
            epoch,
            nll: epoch_nll / batches,
            lr,
        });
    }
    Ok((model, stats))
}

/// Fixed probe offsets around a slot center (six axis jitters).
const PROBE_JITTER: [[f32; 3]; 6] = [
    [0.15, 0.0, 0.0],
    [-0.15, 0.0, 0.0],
    [0.0, 0.15, 0.0],
    [0.0, -0.15, 0.0],
    [0.0, 0.0, 0.15],
    [0.0, 0.0, -0.15],
];

/// Calibrate the slot-occupancy density threshold from the table's reference
/// beliefs: probe every (state, slot) pair, split the mean densities into
/// occupied vs empty according to the known occupancy, and take the geometric
/// mean of the two groups' closest members. This puts the threshold at the
/// largest relative margin between the populations the probe must separate.
pub fn calibrate_tau(field: &RadianceField, table: &BeliefTable) -> Result<f32> {
    let mut occupied = Vec::new();
    let mut empty = Vec::new();
    for (state, belief) in &table.beliefs {
        let occ = table.occupancy[state];
        for (i, slot) in table.slots.iter().enumerate() {
            let mut points = vec![*slot];
            for j in PROBE_JITTER {
                points.push([slot[0] + j[0], slot[1] + j[1], slot[2] + j[2]]);
            }
            let sigma = field.probe_density(&points, &belief.mu)?;
            let mean = sigma.iter().sum::<f32>() / sigma.len() as f32;
            if occ == Some(i) {
                occupied.push(mean);
            } else {
                empty.push(mean);
            }
        }
    }
    let min_occ = occupied.iter().cloned().fold(f32::INFINITY, f32::min);
    let max_emp = empty.iter().cloned().fold(0.0f32, f32::max);
    if !min_occ.is_finite() {
        // No occupied slot anywhere (degenerate dataset): anything above the
        // empty-slot residuals counts as occupied.
        return Ok((max_emp * 10.0).max(default_tau()));
    }
    if min_occ <= max_emp {
        // Populations overlap; fall back to the midpoint so the probe at
        // least splits the bulk of each group.
        return Ok(0.5 * (min_occ + max_emp));
    }
    Ok((min_occ * max_emp.max(1e-6)).sqrt())
}

/// Probe every candidate slot and return the per-slot occupancy votes.
pub fn probe_slots(
    field: &RadianceField,
    z: &[f32],
    slots: &[[f32; 3]],
    tau: f32,
) -> Result<Vec<bool>> {
    let mut points = Vec::with_capacity(slots.len() * 7);
    for s in slots {
        points.push(*s);
        for j in PROBE_JITTER {
            points.push([s[0] + j[0], s[1] + j[1], s[2] + j[2]]);
        }
    }
    let sigma = field.probe_density(&points, z)?;
    Ok((0..slots.len())
        .map(|i| {
            let votes = sigma[i * 7..(i + 1) * 7]
                .iter()
                .filter(|&&s| s >= tau)
                .count();
            votes >= 4
        })
        .collect())
}

/// Map a latent to the (scene, timestamp) whose slot occupancy pattern
/// matches the probed one. Ties (states with identical patterns, e.g. shared
/// initial conditions) resolve to the lowest (scene, timestamp); no matching
/// pattern is an [`Error::AmbiguousLocalization`].
pub fn localize(
    field: &RadianceField,
    z: &[f32],
    table: &BeliefTable,
) -> Result<(usize, usize)> {
    let pattern = probe_slots(field, z, &table.slots, table.tau)?;
    for (&state, &occ) in &table.occupancy {
        let expected: Vec<bool> = (0..table.slots.len()).map(|i| occ == Some(i)).collect();
        if expected == pattern {
            return Ok(state);
        }
    }
    Err(Error::AmbiguousLocalization)
}

/// One step of the auto-regressive loop.
#[derive(Debug, Clone, Serialize)]
pub struct PredictStep {
    pub mixture: GaussianMixture,
    pub sample: Vec<f32>,
    pub state: (usize, usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictReport {
    pub initial_belief: LatentGaussian,
    pub steps: Vec<PredictStep>,
}

/// Fig.-6-style rollout: encode the image, then repeatedly predict a mixture,
/// sample it, localize the sample by density probing, and substitute the
/// localized state's reference belief as the next input.
pub fn autoregressive_predict(
    image: &Image,
    steps: usize,
    encoder: &PcVae,
    mdn: &Mdn,
    field: &RadianceField,
    table: &BeliefTable,
    rng: &mut ChaCha8Rng,
) -> Result<PredictReport> {
    let initial_belief = encoder.encode_image(image)?;
    let mut belief = initial_belief.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mixture = mdn.forward(&belief)?;
        let sample = sample_mixture(&mixture, rng);
        let state = localize(field, &sample, table)?;
        belief = table.beliefs[&state].clone();
        out.push(PredictStep {
            mixture,
            sample,
            state,
        });
    }
    Ok(PredictReport {
        initial_belief,
        steps: out,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdnHeader {
    pub config: MdnConfig,
    pub dataset_sha256: String,
    pub pcvae_sha256: String,
    pub nerf_sha256: String,
}

pub fn save_mdn(
    model: &Mdn,
    table: &BeliefTable,
    header: MdnHeader,
    path: &Path,
) -> Result<()> {
    // the belief table rides along in the header: it is small, and rollouts
    // are meaningless without the exact beliefs the MDN was trained against
    #[derive(Serialize)]
    struct Full<'a> {
        #[serde(flatten)]
        header: &'a MdnHeader,
        belief_table: &'a BeliefTable,
    }
    let json = serde_json::to_value(Full {
        header: &header,
        belief_table: table,
    })?;
    Checkpoint {
        header: json,
        tensors: model.params.to_named_tensors()?,
    }
    .save(path)
}

pub fn load_mdn(
    path: &Path,
    expect_pcvae_sha256: Option<&str>,
    expect_nerf_sha256: Option<&str>,
    device: &Device,
) -> Result<(Mdn, BeliefTable, MdnHeader)> {
    let ckpt: Checkpoint<serde_json::Value> = Checkpoint::load(path)?;
    let header: MdnHeader = serde_json::from_value(ckpt.header.clone())
        .map_err(|e| Error::CorruptCheckpoint(format!("bad MDN header: {e}")))?;
    let table: BeliefTable = serde_json::from_value(
        ckpt.header
            .get("belief_table")
            .cloned()
            .ok_or_else(|| Error::CorruptCheckpoint("missing belief_table".into()))?,
    )
    .map_err(|e| Error::CorruptCheckpoint(format!("bad belief table: {e}")))?;
    if let Some(expected) = expect_pcvae_sha256 {
        check_provenance("pcvae_sha256", &header.pcvae_sha256, expected)?;
    }
    if let Some(expected) = expect_nerf_sha256 {
        check_provenance("nerf_sha256", &header.nerf_sha256, expected)?;
    }
    let mut model = Mdn::new(header.config.clone(), device)?;
    model.params.load_named_tensors(&ckpt.tensors)?;
    Ok((model, table, header))
}
