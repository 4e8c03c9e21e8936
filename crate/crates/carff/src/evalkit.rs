//! Metrics: PSNR, the predicted/toggled PSNR table over scene states, SVM
//! latent separability, and reconstruction grids.

use crate::error::{Error, Result};
use crate::forecast::BeliefTable;
use crate::img::Image;
use crate::pcvae::PcVae;
use crate::planner::Models;
use crate::scenegen::{render_frame, CameraPose, DatasetManifest, FrameKey};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smartcore::linalg::basic::matrix::DenseMatrix;
use smartcore::svm::svc::{SVCParameters, SVC};
use smartcore::svm::Kernels;
use std::collections::{BTreeMap, BTreeSet};

/// Peak signal-to-noise ratio in dB for [0,1] images; identical images clamp
/// to 100 dB so reports stay finite.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", a.width, a.height),
            got: format!("{}x{}", b.width, b.height),
        });
    }
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.data.len() as f64;
    if mse < 1e-10 {
        return Ok(100.0);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

// ---------------------------------------------------------------------------
// Prediction PSNR table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// Rendered from the state's own reference belief mean ("toggle").
    Toggled,
    /// Rendered from the dominant MDN component predicted off the state's
    /// predecessor.
    Predicted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsnrRow {
    pub kind: RowKind,
    pub state: (usize, usize),
    /// PSNR against each state's ground-truth frame, in `states` order.
    pub values: Vec<f64>,
    /// States whose ground truth this row is allowed to hit (the state
    /// itself, pixel-identical twins, and — for predicted rows — every
    /// continuation plausible from the predecessor's appearance).
    pub matches: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsnrReport {
    pub states: Vec<(usize, usize)>,
    pub rows: Vec<PsnrRow>,
    pub matching_mean: f64,
    pub unmatching_mean: f64,
}

impl PsnrReport {
    /// True when every row's best column is one of its allowed matches.
    pub fn diagonal_property(&self) -> bool {
        self.rows.iter().all(|r| {
            let best = r
                .values
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| self.states[i]);
            best.map_or(false, |s| r.matches.contains(&s))
        })
    }
}

/// An overhead camera centered on the dataset's world bounds.
pub fn bird_eye_pose(manifest: &DatasetManifest, width: usize, height: usize) -> CameraPose {
    let b = &manifest.world_bounds;
    let cx = (b.min[0] + b.max[0]) / 2.0;
    let cy = (b.min[1] + b.max[1]) / 2.0;
    CameraPose {
        pose_id: usize::MAX,
        position: [cx, cy, b.max[2] + 4.0],
        target: [cx, cy, 0.0],
        up: [0.0, 1.0, 0.0],
        focal: 42.0 * width as f32 / 64.0,
        width,
        height,
    }
}

/// States whose frames agree pixel-for-pixel at every pose are one
/// appearance class; keyed per state, sorted.
fn identical_state_sets(
    manifest: &DatasetManifest,
    images: &[Image],
) -> BTreeMap<(usize, usize), Vec<(usize, usize)>> {
    let index = manifest.frame_index();
    let states: Vec<(usize, usize)> = manifest
        .scenes
        .iter()
        .flat_map(|s| (0..s.timestamps).map(move |t| (s.scene_id, t)))
        .collect();
    let frames_of = |state: (usize, usize)| -> Vec<&Image> {
        (0..manifest.poses.len())
            .map(|p| {
                &images[index[&FrameKey {
                    scene_id: state.0,
                    timestamp: state.1,
                    pose_id: p,
                }]]
            })
            .collect()
    };
    let mut out = BTreeMap::new();
    for &a in &states {
        let fa = frames_of(a);
        let twins: Vec<(usize, usize)> = states
            .iter()
            .copied()
            .filter(|&b| fa == frames_of(b))
            .collect();
        out.insert(a, twins);
    }
    out
}

/// Table-8-style PSNR grid: for every state, render its toggled belief (and,
/// when a predecessor exists, its predicted belief) from the bird-eye pose
/// and compare against every state's ground-truth bird-eye frame.
pub fn prediction_psnr_table(
    manifest: &DatasetManifest,
    images: &[Image],
    models: &Models,
    bird_eye: &CameraPose,
) -> Result<PsnrReport> {
    let table: &BeliefTable = models.table;
    let states = table.states();
    let twins = identical_state_sets(manifest, images);

    let mut gt = Vec::with_capacity(states.len());
    for &(s, t) in &states {
        gt.push(render_frame(manifest.scene(s), t, bird_eye)?);
    }

    let mut rows = Vec::new();
    for (si, &state) in states.iter().enumerate() {
        let _ = si;
        // toggled row
        let toggled = models
            .field
            .render_image(bird_eye, &table.beliefs[&state].mu)?;
        let values: Result<Vec<f64>> = gt.iter().map(|g| psnr(&toggled, g)).collect();
        rows.push(PsnrRow {
            kind: RowKind::Toggled,
            state,
            values: values?,
            matches: twins[&state].clone(),
        });

        // predicted row, off the predecessor's belief
        let (s, t) = state;
        if t == 0 {
            continue;
        }
        let mixture = models.mdn.forward(&table.beliefs[&(s, t - 1)])?;
        let z = mixture.mu[mixture.dominant()].clone();
        let predicted = models.field.render_image(bird_eye, &z)?;
        let values: Result<Vec<f64>> = gt.iter().map(|g| psnr(&predicted, g)).collect();
        // everything reachable from any state that looks like the predecessor
        let mut matches = BTreeSet::new();
        for &(ps, pt) in &twins[&(s, t - 1)] {
            if pt + 1 < manifest.scene(ps).timestamps {
                for &m in &twins[&(ps, pt + 1)] {
                    matches.insert(m);
                }
            }
        }
        rows.push(PsnrRow {
            kind: RowKind::Predicted,
            state,
            values: values?,
            matches: matches.into_iter().collect(),
        });
    }

    let mut match_sum = 0.0f64;
    let mut match_n = 0.0f64;
    let mut un_sum = 0.0f64;
    let mut un_n = 0.0f64;
    for r in &rows {
        for (i, &v) in r.values.iter().enumerate() {
            if r.matches.contains(&states[i]) {
                match_sum += v;
                match_n += 1.0;
            } else {
                un_sum += v;
                un_n += 1.0;
            }
        }
    }
    Ok(PsnrReport {
        states,
        rows,
        matching_mean: match_sum / match_n.max(1.0),
        unmatching_mean: un_sum / un_n.max(1.0),
    })
}

// ---------------------------------------------------------------------------
// SVM separability
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub accuracy: f64,
    pub folds: usize,
    pub fold_seed: u64,
    pub label_scheme: String,
}

/// 10-fold cross-validated accuracy of an RBF-kernel SVM (C = 1, one-vs-one
/// multiclass). Fold assignment is canonicalized by sorting samples first, so
/// the score is invariant to input order under a fixed fold seed.
pub fn svm_separability(
    samples: &[Vec<f32>],
    labels: &[usize],
    label_scheme: &str,
    fold_seed: u64,
) -> Result<SeparabilityReport> {
    if samples.len() != labels.len() || samples.is_empty() {
        return Err(Error::Metric("samples/labels length mismatch".into()));
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::Metric("need at least two label classes".into()));
    }
    let folds = 10usize.min(samples.len());

    // canonical order, then seeded shuffle, then round-robin folds
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        labels[a]
            .cmp(&labels[b])
            .then_with(|| samples[a].partial_cmp(&samples[b]).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);
    order.shuffle(&mut rng);
    let fold_of: Vec<usize> = {
        let mut f = vec![0usize; samples.len()];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos % folds;
        }
        f
    };

    // gamma = "scale": 1 / (D * mean feature variance)
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0f64; d];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v as f64 / n;
        }
    }
    let mut var = 0.0f64;
    for s in samples {
        for (m, &v) in mean.iter().zip(s) {
            var += (v as f64 - m).powi(2) / (n * d as f64);
        }
    }
    let gamma = 1.0 / (d as f64 * var.max(1e-12));

    let classes: Vec<usize> = classes.into_iter().collect();
    let mut correct = 0usize;
    let mut total = 0usize;
    for fold in 0..folds {
        let train: Vec<usize> = (0..samples.len()).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..samples.len()).filter(|&i| fold_of[i] == fold).collect();
        if test.is_empty() {
            continue;
        }
        let test_rows: Vec<Vec<f64>> = test
            .iter()
            .map(|&i| samples[i].iter().map(|&v| v as f64).collect())
            .collect();
        let x_test = DenseMatrix::from_2d_vec(&test_rows);
        let mut votes = vec![BTreeMap::<usize, usize>::new(); test.len()];

        for a in 0..classes.len() {
            for b in a + 1..classes.len() {
                let (ca, cb) = (classes[a], classes[b]);
                let sel: Vec<usize> = train
                    .iter()
                    .copied()
                    .filter(|&i| labels[i] == ca || labels[i] == cb)
                    .collect();
                if sel.iter().all(|&i| labels[i] == ca) || sel.iter().all(|&i| labels[i] == cb) {
                    continue;
                }
                let rows: Vec<Vec<f64>> = sel
                    .iter()
                    .map(|&i| samples[i].iter().map(|&v| v as f64).collect())
                    .collect();
                let x = DenseMatrix::from_2d_vec(&rows);
                let y: Vec<i32> = sel
                    .iter()
                    .map(|&i| if labels[i] == ca { -1 } else { 1 })
                    .collect();
                let params = SVCParameters::default()
                    .with_c(1.0)
                    .with_kernel(Kernels::rbf().with_gamma(gamma));
                let svc = SVC::fit(&x, &y, &params)
                    .map_err(|e| Error::Metric(format!("svm fit: {e}")))?;
                let pred = svc
                    .predict(&x_test)
                    .map_err(|e| Error::Metric(format!("svm predict: {e}")))?;
                for (vi, &p) in pred.iter().enumerate() {
                    let winner = if p < 0.0 { ca } else { cb };
                    *votes[vi].entry(winner).or_insert(0) += 1;
                }
            }
        }
        for (vi, &i) in test.iter().enumerate() {
            let winner = votes[vi]
                .iter()
                .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(x.0))) // ties -> lower class
                .map(|(&c, _)| c);
            if winner == Some(labels[i]) {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(SeparabilityReport {
        accuracy: correct as f64 / total as f64,
        folds,
        fold_seed,
        label_scheme: label_scheme.to_string(),
    })
}

/// One reparameterized latent draw per frame plus its timestamp and
/// scene×timestamp labels, ready for [`svm_separability`].
pub fn latent_samples(
    manifest: &DatasetManifest,
    images: &[Image],
    encoder: &PcVae,
    use_means: bool,
    seed: u64,
) -> Result<(Vec<Vec<f32>>, Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timestamps_max = manifest
        .scenes
        .iter()
        .map(|s| s.timestamps)
        .max()
        .unwrap_or(1);
    let mut samples = Vec::with_capacity(images.len());
    let mut t_labels = Vec::with_capacity(images.len());
    let mut st_labels = Vec::with_capacity(images.len());
    for (i, f) in manifest.frames.iter().enumerate() {
        let g = encoder.encode_image(&images[i])?;
        samples.push(if use_means { g.mu.clone() } else { g.sample(&mut rng) });
        t_labels.push(f.timestamp);
        st_labels.push(f.scene_id * timestamps_max + f.timestamp);
    }
    Ok((samples, t_labels, st_labels))
}

// ---------------------------------------------------------------------------
// Reconstruction grid
// ---------------------------------------------------------------------------

/// Tile layout: one row per input; columns are [input | ground truth at each
/// timestamp of the input's scene | cross-pose reconstructions].
pub fn reconstruction_grid(
    encoder: &PcVae,
    manifest: &DatasetManifest,
    images: &[Image],
    inputs: &[FrameKey],
    sample_poses: &[usize],
) -> Result<Image> {
    if inputs.is_empty() {
        return Err(Error::Metric("no grid inputs".into()));
    }
    let index = manifest.frame_index();
    let (tw, th) = (images[0].width, images[0].height);
    let timestamps = manifest.scene(inputs[0].scene_id).timestamps;
    let cols = 1 + timestamps + sample_poses.len();
    let mut grid = Image::filled(cols * tw, inputs.len() * th, [0.0, 0.0, 0.0]);
    let mut blit = |img: &Image, row: usize, col: usize| {
        for y in 0..th {
            for x in 0..tw {
                grid.set(col * tw + x, row * th + y, img.get(x, y));
            }
        }
    };
    for (row, key) in inputs.iter().enumerate() {
        let input = &images[*index.get(key).ok_or_else(|| {
            Error::Metric(format!("grid input {key:?} not in manifest"))
        })?];
        blit(input, row, 0);
        for t in 0..manifest.scene(key.scene_id).timestamps {
            let k = FrameKey {
                scene_id: key.scene_id,
                timestamp: t,
                pose_id: key.pose_id,
            };
            blit(&images[index[&k]], row, 1 + t);
        }
        let g = encoder.encode_image(input)?;
        for (pi, &pose) in sample_poses.iter().enumerate() {
            let recon = encoder.decode_image(&g.mu, pose)?;
            blit(&recon, row, 1 + timestamps + pi);
        }
    }
    Ok(grid)
}
