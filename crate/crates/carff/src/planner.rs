//! Open-loop sampling controller and its evaluation harness.
//!
//! The controller encodes one image, predicts the next-step mixture, draws n
//! latents, localizes each, and acts progressively only when the samples are
//! consistent enough about the hazard-free outcome. Two degenerate baselines
//! (always progressive / always cautious) bound the comparison, and the
//! accuracy/recall sweep characterizes sample-count behavior.

use crate::error::{Error, Result};
use crate::forecast::{localize, sample_mixture, BeliefTable, Mdn};
use crate::img::Image;
use crate::nerf::RadianceField;
use crate::pcvae::PcVae;
use crate::scenegen::{first_ego_pose, Archetype, DatasetManifest, FrameKey};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Advance,
    Halt,
    MergeBefore,
    MergeAfter,
}

/// The action taken when the way ahead is believed clear.
pub fn progressive_action(archetype: Archetype) -> Action {
    match archetype {
        Archetype::TwoLaneMerge => Action::MergeBefore,
        _ => Action::Advance,
    }
}

/// The action taken under suspected hazard.
pub fn cautious_action(archetype: Archetype) -> Action {
    match archetype {
        Archetype::TwoLaneMerge => Action::MergeAfter,
        _ => Action::Halt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum ControllerKind {
    Carff,
    Overconfident,
    Underconfident,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Samples drawn per decision.
    pub n: usize,
    /// Fraction of samples that must agree on the hazard-free state for the
    /// progressive action; 1.0 = unanimity.
    pub rho: f64,
    pub kind: ControllerKind,
}

impl ControllerConfig {
    pub fn new(n: usize, kind: ControllerKind) -> Self {
        ControllerConfig { n, rho: 1.0, kind }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidConfig(
                "controller needs n >= 1 and rho in (0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// The trained stack a decision needs.
pub struct Models<'a> {
    pub encoder: &'a PcVae,
    pub mdn: &'a Mdn,
    pub field: &'a RadianceField,
    pub table: &'a BeliefTable,
}

/// One decision over one image. Ambiguous localization of any sample counts
/// as a hazard vote. Deterministic given (image, cfg, rng state).
pub fn decide(
    image: &Image,
    archetype: Archetype,
    hazard_scene: usize,
    cfg: &ControllerConfig,
    models: &Models,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    cfg.validate()?;
    match cfg.kind {
        ControllerKind::Overconfident => return Ok(progressive_action(archetype)),
        ControllerKind::Underconfident => return Ok(cautious_action(archetype)),
        ControllerKind::Carff => {}
    }
    let belief = models.encoder.encode_image(image)?;
    let mixture = models.mdn.forward(&belief)?;
    let mut safe_votes = 0usize;
    for _ in 0..cfg.n {
        let z = sample_mixture(&mixture, rng);
        match localize(models.field, &z, models.table) {
            Ok((scene, _)) if scene != hazard_scene => safe_votes += 1,
            Ok(_) => {}
            Err(Error::AmbiguousLocalization) => {}
            Err(e) => return Err(e),
        }
    }
    let frac = safe_votes as f64 / cfg.n as f64;
    Ok(if frac >= cfg.rho {
        progressive_action(archetype)
    } else {
        cautious_action(archetype)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrialResult {
    pub cell: String,
    pub successes: usize,
    pub trials: usize,
}

fn cell_names(archetype: Archetype) -> (&'static str, &'static str) {
    match archetype {
        Archetype::TwoLaneMerge => ("fast_actor", "slow_actor"),
        _ => ("actor_exists", "no_actor"),
    }
}

/// Table-3-style protocol: one fixed input image per scenario cell, repeated
/// seeded decisions. Success = cautious action in the hazard cell,
/// progressive action in the clear cell.
pub fn run_trials(
    manifest: &DatasetManifest,
    images: &[Image],
    cfg: &ControllerConfig,
    models: &Models,
    trials: usize,
    seed: u64,
) -> Result<Vec<TrialResult>> {
    let index = manifest.frame_index();
    let meta = &manifest.planner;
    let (hazard_cell, clear_cell) = cell_names(manifest.archetype);
    let mut cells: Vec<(&str, FrameKey, Action)> = vec![(
        hazard_cell,
        meta.hazard_input,
        cautious_action(manifest.archetype),
    )];
    if meta.clear_input != meta.hazard_input {
        cells.push((
            clear_cell,
            meta.clear_input,
            progressive_action(manifest.archetype),
        ));
    }
    let mut out = Vec::new();
    for (ci, (cell, key, want)) in cells.into_iter().enumerate() {
        let image = &images[*index.get(&key).ok_or_else(|| {
            Error::Dataset(format!("planner input frame {key:?} not in manifest"))
        })?];
        let mut successes = 0;
        for trial in 0..trials {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (ci as u64) << 32 ^ trial as u64);
            if decide(
                image,
                manifest.archetype,
                meta.hazard_scene,
                cfg,
                models,
                &mut rng,
            )? == want
            {
                successes += 1;
            }
        }
        out.push(TrialResult {
            cell: cell.to_string(),
            successes,
            trials,
        });
    }
    Ok(out)
}

/// Accuracy / recall as functions of sample count n, Fig.-7 style.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCurves {
    pub n: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub recall: Vec<f64>,
}

/// States that look identical under density probing collapse to one label;
/// this is the resolution at which localization can be graded.
fn canonical_state(table: &BeliefTable, state: (usize, usize)) -> (usize, usize) {
    let occ = table.occupancy[&state];
    table
        .occupancy
        .iter()
        .find(|(_, &o)| o == occ)
        .map(|(&s, _)| s)
        .unwrap_or(state)
}

/// For each ego-pose frame with a successor: the set of canonical next
/// states consistent with what the frame shows. Frames that other scenes
/// reproduce pixel-for-pixel admit every such scene's continuation.
pub fn plausible_next_states(
    manifest: &DatasetManifest,
    images: &[Image],
    table: &BeliefTable,
) -> BTreeMap<FrameKey, BTreeSet<(usize, usize)>> {
    let index = manifest.frame_index();
    let ego0 = first_ego_pose(manifest.poses.len());
    let mut out = BTreeMap::new();
    for f in &manifest.frames {
        if f.pose_id < ego0 || f.timestamp + 1 >= manifest.scene(f.scene_id).timestamps {
            continue;
        }
        let key = FrameKey {
            scene_id: f.scene_id,
            timestamp: f.timestamp,
            pose_id: f.pose_id,
        };
        let img = &images[index[&key]];
        let mut next = BTreeSet::new();
        for s in &manifest.scenes {
            if f.timestamp + 1 >= s.timestamps {
                continue;
            }
            let twin = FrameKey {
                scene_id: s.scene_id,
                timestamp: f.timestamp,
                pose_id: f.pose_id,
            };
            if let Some(&j) = index.get(&twin) {
                if &images[j] == img {
                    next.insert(canonical_state(table, (s.scene_id, f.timestamp + 1)));
                }
            }
        }
        out.insert(key, next);
    }
    out
}

/// Sweep n = 1..n_max with nested sample sets.
///
/// accuracy(n): over up to 3 fully observable ego inputs, the fraction of the
/// first n localized samples hitting the unique ground-truth next state.
/// recall(n): over ambiguous (occluded / shared-appearance) ego inputs, the
/// deduplicated fraction of plausible next states covered by the first n
/// samples — non-decreasing by construction.
pub fn accuracy_recall_sweep(
    manifest: &DatasetManifest,
    images: &[Image],
    models: &Models,
    n_max: usize,
    seed: u64,
) -> Result<SweepCurves> {
    let index = manifest.frame_index();
    let plausible = plausible_next_states(manifest, images, models.table);
    let mut clear_inputs: Vec<(FrameKey, (usize, usize))> = Vec::new();
    let mut ambiguous_inputs: Vec<(FrameKey, BTreeSet<(usize, usize)>)> = Vec::new();
    for (key, next) in &plausible {
        if next.len() == 1 {
            clear_inputs.push((*key, *next.iter().next().unwrap()));
        } else if next.len() > 1 {
            ambiguous_inputs.push((*key, next.clone()));
        }
    }
    // the protocol averages over a small random subset of clear inputs
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    clear_inputs.shuffle(&mut rng);
    clear_inputs.truncate(3);
    clear_inputs.sort();

    // per input: one mixture, then a nested stream of localized samples
    let mut localized: Vec<(Vec<Option<(usize, usize)>>, SweepRole)> = Vec::new();
    enum SweepRole {
        Clear((usize, usize)),
        Ambiguous(BTreeSet<(usize, usize)>),
    }
    let mut prepare = |key: FrameKey, role: SweepRole| -> Result<()> {
        let img = &images[index[&key]];
        let belief = models.encoder.encode_image(img)?;
        let mixture = models.mdn.forward(&belief)?;
        let mut states = Vec::with_capacity(n_max);
        for _ in 0..n_max {
            let z = sample_mixture(&mixture, &mut rng);
            states.push(match localize(models.field, &z, models.table) {
                Ok(s) => Some(s),
                Err(Error::AmbiguousLocalization) => None,
                Err(e) => return Err(e),
            });
        }
        localized.push((states, role));
        Ok(())
    };
    for (key, truth) in &clear_inputs {
        prepare(*key, SweepRole::Clear(*truth))?;
    }
    for (key, set) in &ambiguous_inputs {
        prepare(*key, SweepRole::Ambiguous(set.clone()))?;
    }

    let mut curves = SweepCurves {
        n: (1..=n_max).collect(),
        accuracy: Vec::with_capacity(n_max),
        recall: Vec::with_capacity(n_max),
    };
    for n in 1..=n_max {
        let mut acc_sum = 0.0;
        let mut acc_cnt = 0.0;
        let mut rec_sum = 0.0;
        let mut rec_cnt = 0.0;
        for (states, role) in &localized {
            match role {
                SweepRole::Clear(truth) => {
                    let hits = states[..n]
                        .iter()
                        .filter(|s| **s == Some(*truth))
                        .count();
                    acc_sum += hits as f64 / n as f64;
                    acc_cnt += 1.0;
                }
                SweepRole::Ambiguous(set) => {
                    let covered: BTreeSet<_> = states[..n]
                        .iter()
                        .flatten()
                        .filter(|s| set.contains(s))
                        .collect();
                    rec_sum += covered.len() as f64 / set.len() as f64;
                    rec_cnt += 1.0;
                }
            }
        }
        curves.accuracy.push(if acc_cnt > 0.0 { acc_sum / acc_cnt } else { f64::NAN });
        curves.recall.push(if rec_cnt > 0.0 { rec_sum / rec_cnt } else { f64::NAN });
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_mapping_per_archetype() {
        assert_eq!(progressive_action(Archetype::MultiSceneIntersection), Action::Advance);
        assert_eq!(cautious_action(Archetype::MultiSceneIntersection), Action::Halt);
        assert_eq!(progressive_action(Archetype::TwoLaneMerge), Action::MergeBefore);
        assert_eq!(cautious_action(Archetype::TwoLaneMerge), Action::MergeAfter);
    }

    #[test]
    fn controller_config_validation() {
        assert!(ControllerConfig::new(0, ControllerKind::Carff).validate().is_err());
        let mut c = ControllerConfig::new(5, ControllerKind::Carff);
        c.rho = 0.0;
        assert!(c.validate().is_err());
        c.rho = 1.0;
        assert!(c.validate().is_ok());
    }
}
