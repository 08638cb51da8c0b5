use nexf_core::config::RunConfig;
use nexf_core::geometry::angle_fan;
use nexf_core::metrics::{dice, overall, psnr, psnr_masked, ssim, MetricReport};
use nexf_core::pipeline::run;
use nexf_core::training::{AdamState, LrSchedule};
use nexf_core::volume::{Dims, Volume};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn adam_matches_scalar_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 5;
    let mut params: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut adam = AdamState::new(n);
    // each coordinate tracked on its own with the textbook update
    let mut p = params.clone();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    for t in 1..=200 {
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lr = if t < 100 { 1e-3 } else { 1e-4 };
        adam.step(&mut params, &g, lr).unwrap();
        for i in 0..n {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            p[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }
    for (a, b) in params.iter().zip(&p) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
    assert_eq!(adam.step, 200);
}

#[test]
fn adam_first_step_moves_by_the_learning_rate() {
    let mut p = vec![0.0, 0.0, 0.0];
    let mut adam = AdamState::new(3);
    adam.step(&mut p, &[4.0, -0.01, 0.0], 0.01).unwrap();
    assert!((p[0] + 0.01).abs() < 1e-10);
    assert!((p[1] - 0.01).abs() < 1e-7);
    assert_eq!(p[2], 0.0);
}

#[test]
fn adam_settles_at_a_quadratic_minimum() {
    let mut p = vec![3.0, -2.0];
    let target = [0.5, 1.5];
    let mut adam = AdamState::new(2);
    for _ in 0..20_000 {
        let g: Vec<f64> = p.iter().zip(target).map(|(x, t)| 2.0 * (x - t)).collect();
        adam.step(&mut p, &g, 1e-2).unwrap();
    }
    for (x, t) in p.iter().zip(target) {
        assert!((x - t).abs() < 1e-3, "{x} vs {t}");
    }
}

#[test]
fn adam_rejects_non_finite_gradients_untouched() {
    let mut p = vec![1.0, 2.0];
    let mut adam = AdamState::new(2);
    adam.step(&mut p, &[0.5, 0.5], 0.1).unwrap();
    let (before_p, before) = (p.clone(), adam.clone());
    assert_eq!(adam.step(&mut p, &[0.1, f64::NAN], 0.1), Err(1));
    assert_eq!(p, before_p);
    assert_eq!(adam, before);
}

#[test]
fn learning_rate_drops_at_the_switch() {
    let s = LrSchedule::default();
    assert_eq!(s.at(0), 1e-3);
    assert_eq!(s.at(19_999), 1e-3);
    assert_eq!(s.at(20_000), 1e-4);
    assert_eq!(s.at(99_999), 1e-4);
}

fn random_volume(dims: Dims, rng: &mut ChaCha8Rng) -> Volume {
    Volume::from_fn(dims, |_, _, _| rng.gen_range(-1000.0f32..2000.0)).unwrap()
}

/// SSIM averaged over every 7x7x7 window, each window computed from scratch.
fn ssim_oracle(a: &Volume, b: &Volume, range: f64) -> f64 {
    let d = a.dims();
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for z in 0..=d.nz - 7 {
        for y in 0..=d.ny - 7 {
            for x in 0..=d.nx - 7 {
                let mut xs = Vec::with_capacity(343);
                let mut ys = Vec::with_capacity(343);
                for k in 0..7 {
                    for j in 0..7 {
                        for i in 0..7 {
                            xs.push(a.get(x + i, y + j, z + k) as f64);
                            ys.push(b.get(x + i, y + j, z + k) as f64);
                        }
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / (n - 1.0);
                let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (n - 1.0);
                let cxy = xs.iter().zip(&ys).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (n - 1.0);
                total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_windowed_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..6 {
        let dims = Dims::new(rng.gen_range(7..11), rng.gen_range(7..11), rng.gen_range(7..10));
        let a = random_volume(dims, &mut rng);
        // correlated partner so the score is far from zero
        let b = Volume::from_fn(dims, |x, y, z| a.get(x, y, z) * 0.8 + rng.gen_range(-300.0..300.0)).unwrap();
        let got = ssim(&a, &b, 3000.0).unwrap();
        let want = ssim_oracle(&a, &b, 3000.0);
        assert!((got - want).abs() < 1e-9, "{dims}: {got} vs {want}");
    }
}

#[test]
fn psnr_matches_scalar_formula() {
    let a = Volume::from_fn(Dims::new(2, 2, 1), |x, y, _| (x + 2 * y) as f32).unwrap();
    let b = Volume::from_fn(Dims::new(2, 2, 1), |x, y, _| (x + 2 * y) as f32 + if x == 0 { 2.0 } else { 0.0 }).unwrap();
    // MSE = (4 + 4) / 4 = 2
    let want = 10.0 * (100.0f64 / 2.0).log10();
    assert!((psnr(&a, &b, 10.0).unwrap() - want).abs() < 1e-12);
    let mask = [false, true, true, true];
    // only one differing voxel of three: MSE = 4 / 3
    let masked = 10.0 * (100.0f64 / (4.0 / 3.0)).log10();
    assert!((psnr_masked(&a, &b, &mask, 10.0).unwrap() - masked).abs() < 1e-12);
    assert_eq!(psnr(&a, &a, 10.0).unwrap(), f64::INFINITY);
}

#[test]
fn dice_counts_overlap_above_threshold() {
    let dims = Dims::new(4, 1, 1);
    let a = Volume::from_fn(dims, |x, _, _| [1500.0, 1500.0, 0.0, 1000.0][x]).unwrap();
    let b = Volume::from_fn(dims, |x, _, _| [1500.0, 0.0, 1500.0, 1001.0][x]).unwrap();
    // a = {0, 1}, b = {0, 2, 3}: 1000 is not above the threshold
    assert!((dice(&a, &b, 1000.0).unwrap() - 2.0 / 5.0).abs() < 1e-12);
    let empty = Volume::filled(dims, 0.0).unwrap();
    assert_eq!(dice(&empty, &empty, 1000.0).unwrap(), 1.0);
    assert_eq!(dice(&empty, &a, 1000.0).unwrap(), 0.0);
}

#[test]
fn overall_is_capped_and_averaged() {
    assert!((overall(40.0, 1.0, 1.0) - 100.0).abs() < 1e-12);
    assert_eq!(overall(55.0, 0.5, 0.25), overall(40.0, 0.5, 0.25));
    assert!((overall(20.0, 0.6, 0.3) - (50.0 + 60.0 + 30.0) / 3.0).abs() < 1e-12);
    assert_eq!(overall(f64::INFINITY, 1.0, 1.0), 100.0);
}

#[test]
fn report_survives_text_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = Dims::new(8, 8, 8);
    let a = random_volume(dims, &mut rng);
    let b = random_volume(dims, &mut rng);
    let r = MetricReport::evaluate(&a, &b, 1000.0).unwrap();
    assert_eq!(MetricReport::from_text(&r.to_text()).unwrap(), r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ssim_is_symmetric_and_one_on_identity(seed in any::<u64>(), nx in 7usize..10, nz in 7usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims::new(nx, 7, nz);
        let a = random_volume(dims, &mut rng);
        let b = random_volume(dims, &mut rng);
        let ab = ssim(&a, &b, 3000.0).unwrap();
        let ba = ssim(&b, &a, 3000.0).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert!((ssim(&a, &a, 3000.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overall_is_monotone_in_each_score(p in 0.0f64..60.0, s in 0.0f64..1.0, d in 0.0f64..1.0, bump in 1e-3f64..0.5) {
        let base = overall(p, s, d);
        prop_assert!(overall(p + bump, s, d) >= base);
        prop_assert!(overall(p, s + bump, d) > base);
        prop_assert!(overall(p, s, d + bump) > base);
        prop_assert!(base <= 100.0);
    }

    #[test]
    fn dice_is_symmetric(seed in any::<u64>(), t in 0.0f64..1500.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims::new(5, 4, 3);
        let a = random_volume(dims, &mut rng);
        let b = random_volume(dims, &mut rng);
        prop_assert_eq!(dice(&a, &b, t).unwrap(), dice(&b, &a, t).unwrap());
    }
}

#[test]
fn short_run_lowers_the_loss() {
    let mut c = RunConfig::desk();
    c.dims = Dims::new(16, 16, 8);
    c.shape.heads = 8;
    c.phantom.tooth_axes = [1.5, 1.5, 2.0];
    c.segments = 32;
    c.angles = angle_fan(5);
    c.encoder_frequencies = 3;
    c.train.iterations = 300;
    c.train.lr.switch_iteration = 300;
    let out = run(&c).unwrap();
    let mean = |r: &[nexf_core::training::LossRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    let first = mean(&out.history[..30]);
    let last = mean(&out.history[270..]);
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert_eq!(out.reconstruction.dims(), c.dims);
}

#[test]
fn shipped_configs_match_built_in_profiles() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    assert_eq!(RunConfig::load(format!("{root}/desk.cfg")).unwrap(), RunConfig::desk());
    assert_eq!(RunConfig::load(format!("{root}/full.cfg")).unwrap(), RunConfig::default());
}

#[test]
fn config_text_round_trips() {
    for c in [RunConfig::desk(), RunConfig::default()] {
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }
}
