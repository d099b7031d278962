use bbvel::dataset::write_samples;
use bbvel::geometry::{back_project, bbox_reference_point, Camera};
use bbvel::priors::PriorModel;
use bbvel::synth::{generate_dataset, generate_track, GenConfig, Outcome, PAPER_SAMPLE_COUNT};

fn bin(z: f64) -> usize {
    ((z / 10.0) as usize).min(9)
}

fn histogram(zs: impl Iterator<Item = f64>) -> [f64; 10] {
    let mut h = [0.0; 10];
    let mut n = 0.0;
    for z in zs {
        h[bin(z)] += 1.0;
        n += 1.0;
    }
    h.map(|c| c / n)
}

#[test]
fn full_size_run_respects_physical_bands() {
    let cam = Camera::default();
    let prior = PriorModel::motorway_default(&cam);
    let ds = generate_dataset(
        &cam,
        &prior,
        &GenConfig {
            seed: 17,
            ..GenConfig::default()
        },
    )
    .unwrap();
    assert_eq!(ds.samples.len() + ds.skipped.len(), PAPER_SAMPLE_COUNT);
    assert_eq!(ds.samples.len(), PAPER_SAMPLE_COUNT);

    for s in &ds.samples {
        for b in s.track.boxes() {
            assert!(cam.contains(b), "{} leaves the image", s.id);
            let z = back_project(&cam, bbox_reference_point(&cam, b).unwrap()).unwrap().z;
            let (h_m, w_m) = (b.h * z / cam.focal(), b.w * z / cam.focal());
            assert!((1.3..=2.5).contains(&h_m), "{}: height {h_m}", s.id);
            assert!((1.5..=3.0).contains(&w_m), "{}: width {w_m}", s.id);
        }
    }

    // Starting depths follow the seed-point distribution up to jitter.
    let seeds = histogram(prior.seed_points.iter().map(|p| p.z));
    let starts = histogram(ds.samples.iter().map(|s| {
        back_project(&cam, bbox_reference_point(&cam, s.track.first()).unwrap())
            .unwrap()
            .z
    }));
    for (i, (a, b)) in seeds.iter().zip(&starts).enumerate() {
        assert!((a - b).abs() < 0.03, "bin {i}: seeds {a:.3}, samples {b:.3}");
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let cam = Camera::default();
    let prior = PriorModel::motorway_default(&cam);
    let cfg = GenConfig {
        n_samples: 2000,
        seed: 7,
        noise: Some(Default::default()),
        ..GenConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let paths = [dir.path().join("a.jsonl"), dir.path().join("b.jsonl")];
    for p in &paths {
        write_samples(p, &generate_dataset(&cam, &prior, &cfg).unwrap().samples).unwrap();
    }
    assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
}

#[test]
fn one_sample_dataset_is_track_zero() {
    let cam = Camera::default();
    let prior = PriorModel::motorway_default(&cam);
    let cfg = GenConfig {
        n_samples: 1,
        seed: 3,
        ..GenConfig::default()
    };
    let ds = generate_dataset(&cam, &prior, &cfg).unwrap();
    match generate_track(&cam, &prior, &cfg, 0).unwrap() {
        Outcome::Sample(s) => assert_eq!(ds.samples, vec![s]),
        Outcome::Skipped(_) => panic!("index 0 skipped"),
    }
}

#[test]
fn fitted_prior_stays_inside_physical_bands() {
    let cam = Camera::default();
    let truth = PriorModel::motorway_default(&cam);
    let ann = generate_dataset(
        &cam,
        &truth,
        &GenConfig {
            n_samples: 500,
            seed: 1,
            ..GenConfig::default()
        },
    )
    .unwrap();
    let fitted = bbvel::priors::fit_priors(&ann.samples, &cam, &Default::default())
        .unwrap()
        .model;
    let ds = generate_dataset(
        &cam,
        &fitted,
        &GenConfig {
            seed: 2,
            ..GenConfig::default()
        },
    )
    .unwrap();
    assert_eq!(ds.samples.len(), PAPER_SAMPLE_COUNT);
    for s in &ds.samples {
        for b in s.track.boxes() {
            let z = back_project(&cam, bbox_reference_point(&cam, b).unwrap()).unwrap().z;
            let (h_m, w_m) = (b.h * z / cam.focal(), b.w * z / cam.focal());
            assert!(
                (1.3..=2.5).contains(&h_m) && (1.5..=3.0).contains(&w_m),
                "{}: {h_m} x {w_m}",
                s.id
            );
        }
    }
}
