use num_rational::Ratio;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gc_core::accounting::{ecal_param_count, gc_param_count, CountingMode};
use gc_core::backbone::{BlockSpec, BlockStyle, Bottleneck, SiteSpec};
use gc_core::calib::{CalibratorKind, GcConfig, GcModule, Placement};
use gc_core::io::WeightFile;
use gc_core::ops::{self, Mode};
use gc_core::reference;
use gc_core::{Shape, Tensor};

fn ratio() -> impl Strategy<Value = Ratio<usize>> {
    prop_oneof![Just(Ratio::new(1, 4)), Just(Ratio::new(1, 2)), Just(Ratio::from_integer(1))]
}

fn block(
    style: BlockStyle,
    width: usize,
    in_channels: usize,
    stride: usize,
    site: SiteSpec,
    shift: Ratio<usize>,
) -> BlockSpec {
    BlockSpec { style, width, in_channels, out_channels: 4 * width, stride, site, shift_ratio: shift }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_gc_halves_calibrated_chunks(p in ratio(), site in 0usize..20, per_chunk in 1usize..3, t in 1usize..4, seed: u64) {
        let cfg = GcConfig::new(p, Placement::Loop).unwrap();
        let n_chunks = cfg.n_chunks().unwrap();
        let c = n_chunks * per_chunk;
        let mut gc = GcModule::<f64>::new(&cfg, c, site).unwrap();
        let x = Tensor::<f64>::randn(Shape::new(2, t, 3, 3, c), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let y = gc.forward(&x, Mode::Eval).unwrap();
        let used: Vec<usize> = gc.assignment().unwrap().iter().map(|a| a.1).collect();
        prop_assert_eq!(used.len(), 4);
        for (i, (&a, &b)) in x.data().iter().zip(y.data()).enumerate() {
            let chunk = (i % c) / per_chunk;
            let want = if used.contains(&chunk) { a * 0.5 } else { a };
            prop_assert_eq!(b.to_bits(), want.to_bits());
        }
    }

    #[test]
    fn ecal_counts_follow_closed_form(p in ratio(), c16 in 1usize..40) {
        let c = 16 * c16;
        let pc = (p * c).to_integer() as u64;
        let parts: u64 = CalibratorKind::ECALS.iter().map(|&k| ecal_param_count(k, p, c, CountingMode::Paper).unwrap()).sum();
        prop_assert_eq!(parts, pc * pc);
        prop_assert_eq!(gc_param_count(p, c, CountingMode::Paper).unwrap(), pc * pc);
        prop_assert!(gc_param_count(p, c, CountingMode::Full).unwrap() > pc * pc);
    }

    #[test]
    fn split_concat_round_trip(sizes in prop::collection::vec(1usize..4, 1..5), seed: u64) {
        let c: usize = sizes.iter().sum();
        let x = Tensor::<f64>::randn(Shape::new(1, 2, 2, 3, c), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let parts = ops::split_channels(&x, &sizes).unwrap();
        prop_assert_eq!(ops::concat_channels(&parts).unwrap(), x);
    }

    #[test]
    fn bottleneck_matches_reference(
        style in prop_oneof![Just(BlockStyle::Tsn), Just(BlockStyle::Tsm), Just(BlockStyle::Gst)],
        width in prop_oneof![Just(4usize), Just(8)],
        stride in 1usize..3,
        project in any::<bool>(),
        with_gc in any::<bool>(),
        p in ratio(),
        seed: u64,
    ) {
        let in_channels = if project { 6 } else { 4 * width };
        let site = if with_gc && (p * width).is_integer() && (p * width / 4).to_integer() >= 1 {
            SiteSpec::Gc { cfg: GcConfig::new(p, Placement::Standard).unwrap(), site_index: 0 }
        } else {
            SiteSpec::None
        };
        let spec = block(style, width, in_channels, stride, site, Ratio::new(1, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Bottleneck::<f64>::new(spec).unwrap();
        b.init(&mut rng);
        let x = Tensor::<f64>::randn(Shape::new(2, 3, 4, 4, in_channels), 1.0, &mut rng);
        let fast = b.forward(&x, Mode::Train).unwrap();
        let slow = reference::bottleneck(&x, &b);
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(fast.max_abs_diff(&slow) < 1e-10, "diff {}", fast.max_abs_diff(&slow));
    }

    #[test]
    fn tsm_without_shift_is_tsn(width in prop_oneof![Just(4usize), Just(8)], stride in 1usize..3, seed: u64) {
        let make = |style| {
            let mut b = Bottleneck::<f64>::new(block(style, width, 4 * width, stride, SiteSpec::None, Ratio::from_integer(0))).unwrap();
            b.init(&mut ChaCha8Rng::seed_from_u64(seed));
            b
        };
        let x = Tensor::<f64>::randn(Shape::new(2, 4, 4, 4, 4 * width), 1.0, &mut ChaCha8Rng::seed_from_u64(!seed));
        let a = make(BlockStyle::Tsm).forward(&x, Mode::Train).unwrap();
        let b = make(BlockStyle::Tsn).forward(&x, Mode::Train).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn temporal_shift_preserves_unshifted_channels(fold in 0usize..3, t in 1usize..5, seed: u64) {
        let c = 8;
        let r = Ratio::new(fold, 8);
        let x = Tensor::<f64>::randn(Shape::new(1, t, 2, 2, c), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let y = ops::temporal_shift(&x, r).unwrap();
        prop_assert_eq!(&y, &reference::temporal_shift(&x, r));
        for (i, (a, b)) in x.data().iter().zip(y.data()).enumerate() {
            if i % c >= 2 * fold {
                prop_assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn weight_file_round_trips_a_model() {
    let spec = gc_core::toybench::Variant::Gc.spec();
    let model = gc_core::backbone::build_network::<f32>(&spec, 3).unwrap();
    let file = WeightFile::from_model(&model);
    let bytes = file.to_bytes().unwrap();
    let back = WeightFile::from_bytes(&bytes).unwrap();
    assert_eq!(back, file);
    let mut fresh = gc_core::backbone::Model::<f32>::zeros(&spec).unwrap();
    back.apply(&mut fresh).unwrap();
    assert_eq!(WeightFile::from_model(&fresh).to_bytes().unwrap(), bytes);
}
