use fan_core::data::{load_png, random_crop, save_png, transform, PairedSample};
use fan_core::infer::{infer_tiled, nearest_upsample, TilingPlan};
use fan_core::metrics::{psnr, ssim, SsimParams};
use fan_core::tensor::{pixel_shuffle, pixel_unshuffle, softmax_rows, Dihedral, Shape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::rand_uniform(Shape::new(n, c, h, w), 0.0, 1.0, &mut rng)
}

fn sorted(t: &Tensor<f32>) -> Vec<f32> {
    let mut v = t.data().to_vec();
    v.sort_by(f32::total_cmp);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>(), h in 11usize..28, w in 11usize..28, mix in 0.0f32..1.0) {
        let a = image(seed, 1, 3, h, w);
        let noise = image(seed ^ 1, 1, 3, h, w);
        let b = a.zip_map(&noise, |x, y| (1.0 - mix) * x + mix * y).unwrap();
        let p = SsimParams::default();
        let ab = ssim(&a, &b, &p).unwrap();
        let ba = ssim(&b, &a, &p).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_falls_as_noise_grows(seed in any::<u64>(), amps in proptest::collection::vec(0.001f32..0.3, 2..6)) {
        let gt = image(seed, 1, 3, 16, 16);
        let dir = image(seed ^ 7, 1, 3, 16, 16).map(|v| v - 0.5);
        let mut amps = amps;
        amps.sort_by(f32::total_cmp);
        amps.dedup_by(|a, b| (*a - *b).abs() < 1e-4);
        let scores: Vec<f64> = amps
            .iter()
            .map(|&k| psnr(&gt.zip_map(&dir, |g, d| g + k * d).unwrap(), &gt, 1.0).unwrap())
            .collect();
        for pair in scores.windows(2) {
            prop_assert!(pair[1] < pair[0], "{scores:?}");
        }
    }

    #[test]
    fn dihedral_maps_permute_and_invert(seed in any::<u64>(), k in 0u8..8, h in 1usize..9, w in 1usize..9) {
        let x = image(seed, 2, 3, h, w);
        let t = Dihedral::from_index(k);
        let y = t.apply(&x);
        prop_assert_eq!(sorted(&y), sorted(&x));
        prop_assert!(t.invert(&y).data() == x.data());
        let s = y.shape();
        if k % 2 == 1 {
            prop_assert_eq!((s.h, s.w), (w, h));
        } else {
            prop_assert_eq!((s.h, s.w), (h, w));
        }
    }

    #[test]
    fn pixel_shuffle_permutes_values(seed in any::<u64>(), c in 1usize..4, r in 1usize..4, h in 1usize..6, w in 1usize..6) {
        let x = image(seed, 2, c * r * r, h, w);
        let y = pixel_shuffle(&x, r).unwrap();
        prop_assert_eq!(y.shape(), Shape::new(2, c, h * r, w * r));
        prop_assert_eq!(sorted(&y), sorted(&x));
        prop_assert!(pixel_unshuffle(&y, r).unwrap().data() == x.data());
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..12, spread in 0.1f64..500.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::rand_uniform(Shape::new(2, 1, rows, cols), -spread, spread, &mut rng);
        let y = softmax_rows(&x);
        for row in y.data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn png_round_trip_stays_within_a_level(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let x = image(seed, 1, 3, h, w);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        save_png(&x, &path).unwrap();
        let y = load_png(&path).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.max_abs_diff(&x) <= 1.0 / 255.0);
        save_png(&y, &path).unwrap();
        prop_assert!(load_png(&path).unwrap().data() == y.data());
    }

    #[test]
    fn tiling_is_deterministic_and_exact_for_local_maps(
        seed in any::<u64>(),
        h in 8usize..40,
        w in 8usize..40,
        tile in prop::sample::select(vec![8usize, 12, 16, 20]),
        overlap in prop::sample::select(vec![0usize, 2, 4]),
    ) {
        let plan = TilingPlan::new(h, w, tile, overlap);
        prop_assume!(plan.is_ok());
        let plan = plan.unwrap();
        let x = image(seed, 1, 3, h, w);
        let up = |t: &Tensor<f32>| Ok(nearest_upsample(t, 4));
        let a = infer_tiled(&x, &plan, up).unwrap();
        let b = infer_tiled(&x, &plan, up).unwrap();
        prop_assert!(a.data() == b.data());
        prop_assert!(a.max_abs_diff(&nearest_upsample(&x, 4)) < 1e-6);
    }

    #[test]
    fn crops_and_flips_keep_pairs_aligned(seed in any::<u64>(), k in 0u8..8, patch in prop::sample::select(vec![4usize, 8, 12])) {
        let lr = image(seed, 1, 3, 14, 17);
        let pair = PairedSample { hr: nearest_upsample(&lr, 4), lr, id: "p".into() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let crop = random_crop(&pair, patch, &mut rng).unwrap();
        prop_assert_eq!(crop.lr.shape(), Shape::new(1, 3, patch, patch));
        prop_assert!(crop.hr.data() == nearest_upsample(&crop.lr, 4).data());
        let t = transform(&crop, Dihedral::from_index(k));
        prop_assert!(t.hr.data() == nearest_upsample(&t.lr, 4).data());
    }
}
