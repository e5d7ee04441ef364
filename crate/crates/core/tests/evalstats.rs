mod oracles;

use mldgseg_core::evalstats::{
    assd, dice, significance_stars, wilcoxon_signed_rank, wilcoxon_signed_rank_normal,
    PValueMethod,
};
use mldgseg_core::data::LabelMap;
use mldgseg_core::Error;
use oracles::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn dice_and_assd_match_brute_force_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let (a, b, spacing) = random_mask_pair(&mut rng, 12);
        assert_eq!(dice(&a, &b).unwrap(), brute_dice(&a, &b));
        let got = assd(&a, &b, spacing).unwrap();
        let want = brute_assd(&a, &b, spacing);
        assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }
}

#[test]
fn one_voxel_offset_is_one_millimetre() {
    let (a, b) = one_voxel_offset_fixture();
    assert_eq!(assd(&a, &b, [1.0; 3]).unwrap(), 1.0);
    assert_eq!(dice(&a, &b).unwrap(), 0.0);
}

#[test]
fn empty_masks() {
    let e = LabelMap::empty([3, 3, 3], [1.0; 3]);
    let (a, _) = one_voxel_offset_fixture();
    assert_eq!(dice(&e, &e).unwrap(), 100.0);
    assert!(matches!(assd(&e, &e, [1.0; 3]), Err(Error::EmptyMask(_))));
    let e5 = LabelMap::empty([5, 5, 5], [1.0; 3]);
    assert!(matches!(assd(&a, &e5, [1.0; 3]), Err(Error::EmptyMask(_))));
    assert!(matches!(dice(&a, &e), Err(Error::Shape { .. })));
}

proptest! {
    #[test]
    fn assd_is_symmetric_and_scales_with_spacing(seed in any::<u64>(), k in 0.25f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, s) = random_mask_pair(&mut rng, 8);
        let ab = assd(&a, &b, s).unwrap();
        prop_assert!((ab - assd(&b, &a, s).unwrap()).abs() <= 1e-12);
        let scaled = assd(&a, &b, s.map(|v| v * k)).unwrap();
        prop_assert!((scaled - k * ab).abs() <= 1e-9 * (1.0 + ab * k));
        prop_assert_eq!(assd(&a, &a, s).unwrap(), 0.0);
        prop_assert_eq!(dice(&a, &a).unwrap(), 100.0);
    }
}

#[test]
fn exact_wilcoxon_matches_sign_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 2..=10 {
        for _ in 0..50 {
            let (x, y) = random_paired_sample(&mut rng, n);
            let r = wilcoxon_signed_rank(&x, &y).unwrap();
            assert_eq!(r.method, PValueMethod::Exact);
            let want = enumerated_wilcoxon_p(&x, &y);
            assert!((r.p_value - want).abs() <= 1e-12, "n={n}: {} vs {want}", r.p_value);
        }
    }
}

#[test]
fn five_positive_differences_give_one_sixteenth() {
    let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).unwrap();
    assert_eq!(r.p_value, 0.0625);
    assert_eq!(r.statistic, 0.0);
}

#[test]
fn normal_approximation_tracks_exact_at_twenty() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.6..0.5)).collect();
        let e = wilcoxon_signed_rank(&x, &y).unwrap().p_value;
        let a = wilcoxon_signed_rank_normal(&x, &y).unwrap().p_value;
        assert!((e - a).abs() <= 0.01, "{e} vs {a}");
    }
}

#[test]
fn star_bands() {
    assert_eq!(significance_stars(0.0004), "***");
    assert_eq!(significance_stars(0.0005), "**");
    assert_eq!(significance_stars(0.004), "**");
    assert_eq!(significance_stars(0.005), "*");
    assert_eq!(significance_stars(0.049), "*");
    assert_eq!(significance_stars(0.05), "");
}
