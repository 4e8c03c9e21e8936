use candle_core::Device;
use carff::forecast::{load_mdn, localize, sample_mixture};
use carff::nerf::load_nerf;
use carff::pcvae::load_pcvae;
use carff::planner::{accuracy_recall_sweep, run_trials, ControllerConfig, ControllerKind, Models};
use carff::scenegen::DatasetManifest;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[test]
#[ignore]
fn dbg_criteria() {
    let dev = Device::Cpu;
    let root = Path::new("/tmp/acc");
    let manifest = DatasetManifest::load(&root.join("ms6")).unwrap();
    let images = manifest.load_images(&root.join("ms6")).unwrap();
    let (encoder, _) = load_pcvae(&root.join("ms6b_vae.ckpt"), None, &dev).unwrap();
    let (field, _) = load_nerf(&root.join("ms6_nerf.ckpt"), None, &dev).unwrap();
    let (mdn, table, _) = load_mdn(&root.join("ms9_mdn.ckpt"), None, None, &dev).unwrap();

    // pixel identity audit for the hazard input
    let index = manifest.frame_index();
    let key = manifest.planner.hazard_input;
    println!("hazard input {key:?}");
    let twin = carff::scenegen::FrameKey { scene_id: 1, ..key };
    println!(
        "identical to scene-1 twin: {}",
        images[index[&key]] == images[index[&twin]]
    );

    // criterion 5 analog
    let idx = index[&key];
    let belief = encoder.encode_image(&images[idx]).unwrap();
    let mixture = mdn.forward(&belief).unwrap();
    println!("hazard mixture pi {:?}", mixture.pi);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut present, mut absent, mut ambiguous) = (0, 0, 0);
    for _ in 0..100 {
        let z = sample_mixture(&mixture, &mut rng);
        match localize(&field, &z, &table) {
            Ok(state) => {
                if table.occupancy[&state].is_some() {
                    present += 1;
                } else {
                    absent += 1;
                }
            }
            Err(_) => ambiguous += 1,
        }
    }
    println!("C5: present {present} absent {absent} ambiguous {ambiguous}");

    let models = Models {
        encoder: &encoder,
        mdn: &mdn,
        field: &field,
        table: &table,
    };

    // criterion 6 analog
    let curves = accuracy_recall_sweep(&manifest, &images, &models, 50, 1).unwrap();
    println!("C6 recall[0..10]: {:?}", &curves.recall[..10]);
    println!("C6 acc[0..10]:    {:?}", &curves.accuracy[..10]);
    println!("C6 acc[39..50]:   {:?}", &curves.accuracy[39..50]);

    // criterion 7 analog (multi_scene only)
    for (kind, n) in [
        (ControllerKind::Overconfident, 10),
        (ControllerKind::Underconfident, 10),
        (ControllerKind::Carff, 10),
        (ControllerKind::Carff, 35),
    ] {
        let r = run_trials(&manifest, &images, &ControllerConfig::new(n, kind), &models, 30, 1)
            .unwrap();
        for cell in &r {
            println!("C7 {kind:?} n={n} cell {} -> {}/30", cell.cell, cell.successes);
        }
    }
}
