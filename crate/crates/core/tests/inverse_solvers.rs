use ndarray::Array2;
use parecon::forward::{ForwardConfig, ForwardOperator, ImpulseResponse};
use parecon::inverse::{
    frame_spectrum, ista_reconstruct, kspace_forward_map, kspace_reconstruct, CsConfig,
    KspaceConfig, StepSize,
};
use parecon::metrics::{compare, SsimParams};
use parecon::phantom::{generate_dataset, AugmentSpec, MaskSource};
use parecon::{AcquisitionParams, ArrayGeometry, DatasetRecord, GridSpec, ImageGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

fn small_operator() -> ForwardOperator {
    let grid = GridSpec {
        z_origin: 0.05e-3,
        ..GridSpec::centered(64, 32, 0.05e-3, 0.1e-3)
    };
    let geometry = ArrayGeometry::new(32, 0.1e-3, 15.63e6, 1540.0).unwrap();
    let acq = AcquisitionParams {
        sample_count: 256,
        ..Default::default()
    };
    ForwardOperator::new(
        grid,
        geometry,
        acq,
        ImpulseResponse::default_probe(acq.sampling_rate),
        ForwardConfig::default(),
    )
    .unwrap()
}

fn closed_loop_phantom(op: &ForwardOperator, seed: u64) -> DatasetRecord {
    let spec = AugmentSpec {
        snr_range: [25.0, 25.0],
        ..Default::default()
    };
    generate_dataset(1, &spec, op, 1.0, MaskSource::Procedural, seed)
        .unwrap()
        .records
        .remove(0)
}

#[test]
fn ista_objective_never_increases() {
    let op = small_operator();
    let record = closed_loop_phantom(&op, 3);
    let cfg = CsConfig {
        step: StepSize::Auto,
        tv_weight: 0.02,
        wavelet_weight: 0.005,
        max_iters: 100,
        grad_norm_tol: 0.0,
        ..Default::default()
    };
    let (image, out) = ista_reconstruct(&record.raw, &op, &cfg).unwrap();
    assert_eq!(out.log.len(), 101);
    for pair in out.log.windows(2) {
        assert!(
            pair[1].objective <= pair[0].objective,
            "objective rose at iteration {}: {} -> {}",
            pair[1].iteration,
            pair[0].objective,
            pair[1].objective
        );
    }
    assert!(out.log[100].objective < out.log[0].objective);

    // the iterate fits the data better than the scaled back-projection it starts from
    let p = SsimParams::default();
    let first = compare(
        &record.ground_truth.data,
        &op.adjoint(&record.raw.data).unwrap(),
        &p,
    )
    .unwrap();
    let last = compare(&record.ground_truth.data, &image.data, &p).unwrap();
    assert!(last.psnr > first.psnr, "{} vs {}", last.psnr, first.psnr);
}

#[test]
fn ista_rejects_a_mismatched_frame() {
    let op = small_operator();
    let record = closed_loop_phantom(&op, 1);
    let mut raw = record.raw;
    raw.acquisition.sound_speed = 1500.0;
    assert!(ista_reconstruct(&raw, &op, &CsConfig::default()).is_err());
}

fn kspace_setup() -> (GridSpec, ArrayGeometry, AcquisitionParams) {
    let grid = GridSpec {
        z_origin: 0.05e-3,
        ..GridSpec::centered(64, 64, 0.05e-3, 0.1e-3)
    };
    let geometry = ArrayGeometry::new(64, 0.1e-3, 15.63e6, 1540.0).unwrap();
    let acq = AcquisitionParams {
        sample_count: 256,
        ..Default::default()
    };
    (grid, geometry, acq)
}

#[test]
fn mapped_spectra_vanish_in_the_evanescent_region() {
    let (grid, geometry, acq) = kspace_setup();
    let c = acq.sound_speed;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let data = Array2::from_shape_fn(grid.shape(), |_| rng.random_range(0.0..1.0));
        let image = ImageGrid::new(data, grid).unwrap();
        let y = kspace_forward_map(&image, &geometry, &acq, &KspaceConfig::default()).unwrap();
        let mut evanescent = 0.0;
        for ((p, q), v) in y.data.indexed_iter() {
            if y.axial_frequency(p).abs() < c * y.kx(q).abs() {
                evanescent += v.norm_sqr();
            }
        }
        assert_eq!(evanescent, 0.0);
        assert!(y.energy() > 0.0);
    }
}

#[test]
fn kspace_reconstruction_localizes_a_simulated_source() {
    let (grid, geometry, acq) = kspace_setup();
    let op = ForwardOperator::new(
        grid,
        geometry,
        acq,
        ImpulseResponse::default_probe(acq.sampling_rate),
        ForwardConfig::default(),
    )
    .unwrap();
    let mut image = ImageGrid::zeros(grid);
    image.data[[30, 40]] = 1.0;
    let frame = op.simulate(&image, 0).unwrap().frame;
    let rec = kspace_reconstruct(&frame, &grid, &KspaceConfig::default()).unwrap();
    let env = parecon::signal::axial_envelope(&rec.data);
    let (peak, _) = env.indexed_iter().fold(
        ((0, 0), 0.0f64),
        |b, (i, &v)| if v > b.1 { (i, v) } else { b },
    );
    assert!(peak.0.abs_diff(30) <= 2 && peak.1 == 40, "peak at {peak:?}");
}

/// The time-domain model spreads as `1/R` from a point (a 3-D Green's
/// function) while the mapping assumes the planar relation, so the two
/// spectra differ by a frequency-dependent amplitude and a `pi/4` phase.
#[test]
#[ignore = "time-domain and k-space models use different Green's functions; measured about -1 dB"]
fn mapped_spectrum_matches_simulated_spectrum() {
    let (grid, geometry, acq) = kspace_setup();
    let cfg = ForwardConfig {
        use_directivity: false,
        use_derivative: false,
        ..Default::default()
    };
    let op = ForwardOperator::new(
        grid,
        geometry.clone(),
        acq,
        ImpulseResponse::identity(acq.sampling_rate),
        cfg,
    )
    .unwrap();
    let mut image = ImageGrid::zeros(grid);
    image.data[[30, 32]] = 1.0;
    let kc = KspaceConfig::default();
    let frame = op.simulate(&image, 0).unwrap().frame;
    let simulated = frame_spectrum(&frame, &grid, &kc).unwrap();
    let mapped = kspace_forward_map(&image, &geometry, &acq, &kc).unwrap();
    let mut cross = Complex64::new(0.0, 0.0);
    let (mut mm, mut ss) = (0.0, 0.0);
    let mut pairs = Vec::new();
    for ((p, q), m) in mapped.data.indexed_iter() {
        if m.norm_sqr() > 0.0 {
            let s = simulated.data[[p, q]];
            cross += m.conj() * s;
            mm += m.norm_sqr();
            ss += s.norm_sqr();
            pairs.push((*m, s));
        }
    }
    let scale = cross / mm;
    let err: f64 = pairs.iter().map(|(m, s)| (scale * m - s).norm_sqr()).sum();
    let db = 10.0 * (err / ss).log10();
    assert!(db < -30.0, "normalized error {db:.1} dB");
}
