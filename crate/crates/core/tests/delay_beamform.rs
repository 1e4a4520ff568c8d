use ndarray::{Array2, Array3};
use parecon::beamform::{
    das, dmas, dmas_pixel, dmas_prefilter, minimum_variance, mv_weights, DasConfig, DmasConfig,
    MvConfig,
};
use parecon::delay::DelayLut;
use parecon::forward::{ForwardConfig, ForwardOperator, ImpulseResponse};
use parecon::{AcquisitionParams, ArrayGeometry, DelayTensor, GridSpec, ImageGrid, RawFrame};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup() -> (GridSpec, ArrayGeometry, AcquisitionParams) {
    let grid = GridSpec {
        z_origin: 0.5e-3,
        ..GridSpec::centered(64, 48, 0.05e-3, 0.1e-3)
    };
    let geometry = ArrayGeometry::new(32, 0.1e-3, 15.63e6, 1540.0).unwrap();
    let acq = AcquisitionParams {
        sample_count: 256,
        acquisition_delay: 0.2e-6,
        ..Default::default()
    };
    (grid, geometry, acq)
}

fn random_frame(geometry: &ArrayGeometry, acq: AcquisitionParams, seed: u64) -> RawFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = Array2::from_shape_fn((acq.sample_count, geometry.element_count()), |_| {
        rng.random_range(-1.0..1.0)
    });
    RawFrame::new(data, geometry.clone(), acq).unwrap()
}

/// Unit-weight delay-and-sum evaluated straight from the geometry.
fn direct_das(frame: &RawFrame, grid: &GridSpec) -> Array2<f64> {
    let acq = frame.acquisition;
    let k = acq.sample_count;
    Array2::from_shape_fn(grid.shape(), |(row, col)| {
        let (z, x) = (grid.z(row), grid.x(col));
        let mut sum = 0.0;
        for (j, xe) in frame.geometry.element_positions().iter().enumerate() {
            let r = ((x - xe).powi(2) + z * z).sqrt();
            let t = (r / acq.sound_speed - acq.acquisition_delay) * acq.sampling_rate;
            if t < 0.0 || t > (k - 1) as f64 {
                continue;
            }
            let lo = (t.floor() as usize).min(k - 2);
            let w = t - lo as f64;
            sum += (1.0 - w) * frame.data[[lo, j]] + w * frame.data[[lo + 1, j]];
        }
        sum
    })
}

#[test]
fn lut_sum_matches_direct_delay_and_sum() {
    let (grid, geometry, acq) = setup();
    let lut = DelayLut::build(&grid, &geometry, &acq).unwrap();
    for seed in 0..5 {
        let frame = random_frame(&geometry, acq, seed);
        let tensor = lut.apply(&frame).unwrap();
        let via_lut = tensor.channel_sum().data;
        let direct = direct_das(&frame, &grid);
        let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = (&via_lut - &direct)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-12 * scale, "seed {seed}: {err} vs {scale}");

        // the full-aperture DAS is the same sum divided by J
        let cfg = DasConfig {
            f_number: 0.0,
            apply_hilbert: false,
            ..Default::default()
        };
        let mean = das(&tensor, &cfg).unwrap().data * geometry.element_count() as f64;
        let err = (&mean - &direct).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-12 * scale);
    }
}

#[test]
fn lut_cache_round_trip() {
    let (grid, geometry, acq) = setup();
    let dir = tempfile::tempdir().unwrap();
    let (built, hit) = DelayLut::load_or_build(dir.path(), &grid, &geometry, &acq).unwrap();
    assert!(!hit);
    let key = DelayLut::cache_key(&grid, &geometry, &acq);
    let file = dir.path().join(DelayLut::cache_file_name(&key));
    assert!(file.exists());
    let loaded = DelayLut::load(&file, &grid, &geometry, &acq).unwrap();
    assert_eq!(built, loaded);
    let (_, hit) = DelayLut::load_or_build(dir.path(), &grid, &geometry, &acq).unwrap();
    assert!(hit);

    let other = AcquisitionParams {
        sound_speed: 1500.0,
        ..acq
    };
    assert!(DelayLut::load(&file, &grid, &geometry, &other).is_err());
}

fn brute_force_dmas(f: &[f64]) -> f64 {
    let mut sum = 0.0;
    for a in 0..f.len() {
        for b in a + 1..f.len() {
            let p = f[a] * f[b];
            sum += p.signum() * p.abs().sqrt();
        }
    }
    sum
}

#[test]
fn dmas_matches_pairwise_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let j = rng.random_range(1..=16);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let f: Vec<f64> = (0..j)
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect();
        let fast = dmas_pixel(&f);
        let slow = brute_force_dmas(&f);
        assert!(
            (fast - slow).abs() <= 1e-12 * slow.abs().max(scale),
            "{fast} vs {slow} for {f:?}"
        );
    }
}

#[test]
fn dmas_prefilter_is_pair_normalized() {
    let (grid, geometry, _) = setup();
    let j = geometry.element_count();
    let data = Array3::from_elem((grid.nz, grid.nx, j), 4.0);
    let t = DelayTensor::new(data, grid, geometry).unwrap();
    // every pair contributes sqrt(16) = 4, so the mean is 4 at any aperture
    for f_number in [0.0, 0.5] {
        let img = dmas_prefilter(&t, f_number);
        assert!(img.iter().all(|&v| v == 0.0 || (v - 4.0).abs() < 1e-12));
    }
    assert!(dmas_prefilter(&t, 0.0)
        .iter()
        .all(|&v| (v - 4.0).abs() < 1e-12));
}

fn point_tensor() -> DelayTensor {
    let (grid, geometry, acq) = setup();
    let op = ForwardOperator::new(
        grid,
        geometry.clone(),
        acq,
        ImpulseResponse::default_probe(acq.sampling_rate),
        ForwardConfig {
            noise_std: 1e-3,
            ..Default::default()
        },
    )
    .unwrap();
    let mut image = ImageGrid::zeros(grid);
    image.data[[40, 24]] = 1.0;
    image.data[[50, 8]] = 0.5;
    let frame = op.simulate(&image, 1).unwrap().frame;
    DelayLut::build(&grid, &geometry, &acq)
        .unwrap()
        .apply(&frame)
        .unwrap()
}

#[test]
fn mv_weights_have_unit_gain_over_a_frame() {
    let tensor = point_tensor();
    for cfg in [
        MvConfig::default(),
        MvConfig {
            subarray_length: 16,
            f_number: 0.0,
            ..Default::default()
        },
    ] {
        let out = minimum_variance(&tensor, &cfg).unwrap();
        assert_eq!(out.fallbacks, 0);
        let worst = out
            .weight_sums
            .iter()
            .fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
        assert!(worst < 1e-10, "weight sum off by {worst}");
    }
}

#[test]
fn identity_covariance_gives_uniform_weights() {
    for l in [1, 2, 7, 32, 64] {
        let w = mv_weights(&nalgebra::DMatrix::identity(l, l), 1e-2).unwrap();
        assert!(w.iter().all(|&v| (v - 1.0 / l as f64).abs() < 1e-6));
    }
}

#[test]
fn beamformers_peak_at_the_source() {
    let tensor = point_tensor();
    let argmax = |img: &Array2<f64>| {
        img.indexed_iter()
            .fold(
                ((0, 0), f64::MIN),
                |b, (i, &v)| if v > b.1 { (i, v) } else { b },
            )
            .0
    };
    let images = [
        das(&tensor, &DasConfig::default()).unwrap().data,
        minimum_variance(&tensor, &MvConfig::default())
            .unwrap()
            .image
            .data,
        dmas(&tensor, &DmasConfig::default()).unwrap().data,
    ];
    for img in &images {
        let (r, c) = argmax(img);
        assert!(
            r.abs_diff(40) <= 2 && c.abs_diff(24) <= 1,
            "peak at ({r}, {c})"
        );
    }
}

proptest! {
    #[test]
    fn das_is_linear(seed in 0u64..1000, alpha in -3.0f64..3.0) {
        let (grid, geometry, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = geometry.element_count();
        let mut sample = || Array3::from_shape_fn((8, 6, j), |_| rng.random_range(-1.0..1.0));
        let small = GridSpec { nz: 8, nx: 6, ..grid };
        let (a, b) = (sample(), sample());
        let cfg = DasConfig { apply_hilbert: false, ..Default::default() };
        let run = |d: Array3<f64>| {
            das(&DelayTensor::new(d, small, geometry.clone()).unwrap(), &cfg).unwrap().data
        };
        let lhs = run(&a * alpha + &b);
        let rhs = run(a) * alpha + run(b);
        prop_assert!((lhs - rhs).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dmas_pixel_is_positively_homogeneous(
        f in prop::collection::vec(-1.0f64..1.0, 1..16),
        alpha in 0.01f64..100.0,
    ) {
        let scaled: Vec<f64> = f.iter().map(|v| v * alpha).collect();
        let lhs = dmas_pixel(&scaled);
        let rhs = alpha * dmas_pixel(&f);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn dmas_pixel_ignores_channel_order(mut f in prop::collection::vec(-1.0f64..1.0, 2..16)) {
        let before = dmas_pixel(&f);
        f.reverse();
        prop_assert!((dmas_pixel(&f) - before).abs() < 1e-12);
    }
}
