use invres_core::data::{
    center_class, crop, generate_synthetic, histogram_overlap, LabelVolume, PatchSampler, SamplingStrategy,
    SyntheticConfig, Volume,
};
use invres_core::metrics::{dice_score, Mask};
use invres_core::Tensor;

fn noiseless() -> SyntheticConfig {
    SyntheticConfig { num_volumes: 1, noise_sigma: 0.0, bias_strength: 0.0, seed: 3, ..Default::default() }
}

#[test]
fn generation_is_bit_identical_per_seed() {
    let cfg = SyntheticConfig { num_volumes: 2, seed: 9, ..Default::default() };
    assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    let other = SyntheticConfig { seed: 10, ..cfg.clone() };
    assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
}

#[test]
fn threshold_oracle_separates_noiseless_classes() {
    let cfg = noiseless();
    let (v, l) = &generate_synthetic(&cfg).unwrap()[0];
    let vox = l.labels.len();
    // modality 0 renders class k at k/(K−1), so rounding recovers the label
    let k = (cfg.num_classes - 1) as f32;
    let predicted: Vec<u8> = v.data.data()[..vox].iter().map(|&x| (x * k).round() as u8).collect();
    for class in 0..cfg.num_classes as u8 {
        let p = Mask::from_labels(&predicted, l.shape, class).unwrap();
        let t = Mask::from_labels(&l.labels, l.shape, class).unwrap();
        assert_eq!(dice_score(&p, &t).unwrap(), 1.0);
    }
}

#[test]
fn default_difficulty_is_moderate() {
    let data = generate_synthetic(&SyntheticConfig::default()).unwrap();
    let overlap = histogram_overlap(&data, 64);
    assert!(overlap > 0.0 && overlap < 0.5, "{overlap}");
    let clean = generate_synthetic(&noiseless()).unwrap();
    assert_eq!(histogram_overlap(&clean, 64), 0.0);
}

#[test]
fn patches_are_exact_sub_volumes() {
    let (v, l) = &generate_synthetic(&SyntheticConfig { num_volumes: 1, ..Default::default() }).unwrap()[0];
    let mut sampler = PatchSampler::new([8, 16, 4], 1, SamplingStrategy::Uniform);
    for p in sampler.sample_patches(v, l, 20).unwrap() {
        let [oz, oy, ox] = p.origin;
        for c in 0..2 {
            for z in 0..8 {
                for y in 0..16 {
                    for x in 0..4 {
                        let src = v.data.data()[(((c * 32) + oz + z) * 32 + oy + y) * 32 + ox + x];
                        assert_eq!(p.image.data()[((c * 8 + z) * 16 + y) * 4 + x], src);
                        if c == 0 {
                            assert_eq!(
                                p.labels[(z * 16 + y) * 4 + x],
                                l.labels[((oz + z) * 32 + oy + y) * 32 + ox + x]
                            );
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn full_size_patch_is_the_whole_volume() {
    let (v, l) = &generate_synthetic(&SyntheticConfig { num_volumes: 1, ..Default::default() }).unwrap()[0];
    for strategy in [SamplingStrategy::Uniform, SamplingStrategy::ClassBalanced] {
        let mut sampler = PatchSampler::new([32; 3], 2, strategy);
        let patches = sampler.sample_patches(v, l, 3).unwrap();
        assert_eq!(patches.len(), 3);
        for p in patches {
            assert_eq!(p.image, v.data);
            assert_eq!(p.labels, l.labels);
        }
    }
    let mut too_big = PatchSampler::new([64, 8, 8], 2, SamplingStrategy::Uniform);
    assert!(too_big.sample_patches(v, l, 1).is_err());
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let (_, l) = &generate_synthetic(&SyntheticConfig { num_volumes: 1, ..Default::default() }).unwrap()[0];
    for strategy in [SamplingStrategy::Uniform, SamplingStrategy::ClassBalanced] {
        let a = PatchSampler::new([16; 3], 5, strategy).origins(l, 50).unwrap();
        let b = PatchSampler::new([16; 3], 5, strategy).origins(l, 50).unwrap();
        assert_eq!(a, b);
    }
}

/// Known geometry: three slabs along the depth axis, so every class has
/// voxels whose centred patch fits.
fn slabs() -> (Volume, LabelVolume) {
    let shape = [24, 16, 16];
    let labels: Vec<u8> = (0..24 * 256)
        .map(|i| {
            if i / 256 < 12 {
                0
            } else if i / 256 < 18 {
                1
            } else {
                2
            }
        })
        .collect();
    let data = Tensor::new(&[1, 24, 16, 16], labels.iter().map(|&l| l as f32).collect()).unwrap();
    (Volume::new("slabs", data, [1.0; 3]).unwrap(), LabelVolume::new("slabs", shape, labels, 3).unwrap())
}

#[test]
fn class_balanced_centres_follow_target_frequencies() {
    let (v, l) = slabs();
    let draws = 10_000;
    let mut sampler = PatchSampler::new([8; 3], 11, SamplingStrategy::ClassBalanced);
    let mut counts = [0usize; 3];
    for origin in sampler.origins(&l, draws).unwrap() {
        let p = crop(&v, &l, origin, [8; 3]).unwrap();
        counts[center_class(&p) as usize] += 1;
    }
    let p = 1.0 / 3.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn validation_errors() {
    assert!(generate_synthetic(&SyntheticConfig { num_classes: 1, ..Default::default() }).is_err());
    assert!(LabelVolume::new("x", [2, 2, 2], vec![0; 8], 0).is_err());
    assert!(LabelVolume::new("x", [2, 2, 2], vec![0; 7], 2).is_err());
    let t = Tensor::<f32>::zeros(&[1, 2, 2, 2]).unwrap();
    assert!(Volume::new("x", t, [1.0, 0.0, 1.0]).is_err());
}
