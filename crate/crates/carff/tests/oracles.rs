//! Closed-form oracles for the numerical kernels: KL divergence, volume
//! rendering, mixture densities, PSNR, the KL-weight schedule, and mixture
//! sampling. None of these require training.

use candle_core::{Device, Tensor};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use carff::evalkit::psnr;
use carff::forecast::{mixture_logpdf, sample_mixture, GaussianMixture};
use carff::img::Image;
use carff::nerf::composite;
use carff::pcvae::{KlSchedule, PcVae};

fn kl_case(mu: &[f32], logvar: &[f32], batch: usize, expected: f64) {
    let dev = Device::Cpu;
    let d = mu.len() / batch;
    let mu_t = Tensor::from_vec(mu.to_vec(), (batch, d), &dev).unwrap();
    let lv_t = Tensor::from_vec(logvar.to_vec(), (batch, d), &dev).unwrap();
    let kl = PcVae::kl_divergence(&mu_t, &lv_t)
        .unwrap()
        .to_scalar::<f32>()
        .unwrap() as f64;
    assert!(
        (kl - expected).abs() < 1e-9,
        "kl {kl} vs closed form {expected}"
    );
}

pub fn check_kl_divergence_closed_forms() {
    // Standard normal posterior: KL = 0.
    kl_case(&[0.0, 0.0], &[0.0, 0.0], 1, 0.0);
    // Unit variance, mean 2 per dim: KL = 0.5 * (4 + 1 - 0 - 1) per dim.
    kl_case(&[2.0, 2.0], &[0.0, 0.0], 1, 4.0);
    // Batch mean over one zero-KL row and one 0.5-per-dim row.
    kl_case(&[0.0, 0.0, 1.0, 1.0], &[0.0; 4], 2, 0.5);
}

pub fn check_homogeneous_slab_matches_beer_lambert() {
    // Ray marches t in [0, 4]; a slab of constant density fills [1, 3].
    // Analytic color: (1 - e^{-s*l}) * c + e^{-s*l} * bg.
    let dev = Device::Cpu;
    let s = 256usize;
    let (t_min, t_max) = (0.0f64, 4.0f64);
    let dt = (t_max - t_min) / s as f64;
    let density = 1.5f64;
    let c = [0.9f32, 0.2, 0.1];
    let bg = [0.5f32, 0.5, 0.5];

    let sigma: Vec<f32> = (0..s)
        .map(|i| {
            let t = t_min + (i as f64 + 0.5) * dt;
            if (1.0..3.0).contains(&t) {
                density as f32
            } else {
                0.0
            }
        })
        .collect();
    let rgb: Vec<f32> = (0..s).flat_map(|_| c).collect();
    let delta: Vec<f32> = vec![dt as f32; s];

    let sigma = Tensor::from_vec(sigma, (1, s), &dev).unwrap();
    let rgb = Tensor::from_vec(rgb, (1, s, 3), &dev).unwrap();
    let delta = Tensor::from_vec(delta, (1, s), &dev).unwrap();
    let out = composite(&sigma, &rgb, &delta, bg)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1::<f32>()
        .unwrap();

    let trans = (-density * 2.0).exp();
    for ch in 0..3 {
        let expected = (1.0 - trans) * c[ch] as f64 + trans * bg[ch] as f64;
        let rel = ((out[ch] as f64 - expected) / expected).abs();
        assert!(rel < 0.02, "channel {ch}: {} vs {expected}", out[ch]);
    }
}

pub fn check_mixture_logpdf_matches_naive_summation() {
    let m = GaussianMixture {
        pi: vec![0.3, 0.45, 0.25],
        mu: vec![vec![-1.0, 0.5], vec![2.0, -0.25], vec![0.0, 3.0]],
        sigma2: vec![vec![0.5, 2.0], vec![1.0, 0.1], vec![3.0, 0.7]],
    };
    for y in [[0.0f32, 0.0], [1.5, -1.0], [-2.0, 2.5]] {
        // Naive: log of the direct probability sum, no log-sum-exp tricks.
        let mut p = 0.0f64;
        for k in 0..3 {
            let mut comp = m.pi[k] as f64;
            for d in 0..2 {
                let s2 = m.sigma2[k][d] as f64;
                let diff = y[d] as f64 - m.mu[k][d] as f64;
                comp *= (-diff * diff / (2.0 * s2)).exp()
                    / (2.0 * std::f64::consts::PI * s2).sqrt();
            }
            p += comp;
        }
        let naive = p.ln();
        let lse = mixture_logpdf(&m, &y);
        assert!((lse - naive).abs() < 1e-9, "{lse} vs {naive}");
    }
}

pub fn check_psnr_closed_forms() {
    let a = Image::filled(8, 8, [0.25, 0.5, 0.75]);
    // Uniform offset of 0.25 (exact in binary): MSE = 1/16, PSNR = 40 log10 2.
    let mut b = a.clone();
    for v in b.data.iter_mut() {
        *v += 0.25;
    }
    let expected = 40.0 * 2f64.log10();
    assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
    // Identical images clamp at 100 dB instead of diverging.
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
}

pub fn check_kl_schedule_endpoints_and_midpoint() {
    let s = KlSchedule {
        w_start: 1e-6,
        w_end: 1e-5,
        start_epoch: 50,
        end_epoch: 80,
    };
    assert_eq!(s.weight(0), 1e-6);
    assert_eq!(s.weight(50), 1e-6);
    assert_eq!(s.weight(80), 1e-5);
    assert_eq!(s.weight(200), 1e-5);
    assert_eq!(s.weight(65), 1e-6 + 0.5 * (1e-5 - 1e-6));
}

pub fn check_sample_mixture_chi_square() {
    // 1-D two-component mixture; bin samples and compare against the exact
    // mixture CDF with a chi-square goodness-of-fit test.
    let m = GaussianMixture {
        pi: vec![0.4, 0.6],
        mu: vec![vec![-2.0], vec![1.5]],
        sigma2: vec![vec![0.5], vec![1.0]],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;
    let edges: Vec<f64> = (1..16).map(|i| -5.0 + i as f64 * 0.6).collect();
    let mut counts = vec![0usize; edges.len() + 1];
    for _ in 0..n {
        let x = sample_mixture(&m, &mut rng)[0] as f64;
        let bin = edges.iter().take_while(|&&e| x > e).count();
        counts[bin] += 1;
    }

    let cdf = |x: f64| -> f64 {
        let n0 = Normal::new(-2.0, 0.5f64.sqrt()).unwrap();
        let n1 = Normal::new(1.5, 1.0).unwrap();
        0.4 * n0.cdf(x) + 0.6 * n1.cdf(x)
    };
    let mut chi2 = 0.0;
    let mut prev = 0.0;
    for (bin, &count) in counts.iter().enumerate() {
        let hi = if bin < edges.len() {
            cdf(edges[bin])
        } else {
            1.0
        };
        let expected = (hi - prev) * n as f64;
        prev = hi;
        if expected > 1e-9 {
            chi2 += (count as f64 - expected).powi(2) / expected;
        }
    }
    let df = counts.len() as f64 - 1.0;
    let p = 1.0 - ChiSquared::new(df).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

#[test]
fn kl_divergence_closed_forms() {
    check_kl_divergence_closed_forms();
}

#[test]
fn homogeneous_slab_matches_beer_lambert() {
    check_homogeneous_slab_matches_beer_lambert();
}

#[test]
fn mixture_logpdf_matches_naive_summation() {
    check_mixture_logpdf_matches_naive_summation();
}

#[test]
fn psnr_closed_forms() {
    check_psnr_closed_forms();
}

#[test]
fn kl_schedule_endpoints_and_midpoint() {
    check_kl_schedule_endpoints_and_midpoint();
}

#[test]
fn sample_mixture_chi_square() {
    check_sample_mixture_chi_square();
}
