use bbvel::geometry::{back_project, bbox_reference_point, Camera};
use bbvel::priors::{fit_priors, FitConfig, PriorModel};
use bbvel::synth::{generate_dataset, GenConfig};
use bbvel::Error;

#[test]
fn fit_recovers_generating_prior() {
    let cam = Camera::default();
    let truth = PriorModel::motorway_default(&cam);
    for seed in [1, 2, 3] {
        let ds = generate_dataset(
            &cam,
            &truth,
            &GenConfig {
                n_samples: 500,
                seed,
                ..GenConfig::default()
            },
        )
        .unwrap();
        let fit = fit_priors(&ds.samples, &cam, &FitConfig::default()).unwrap();
        let m = &fit.model;
        assert!(
            (m.vel_mean.vx - truth.vel_mean.vx).abs() < 0.1,
            "seed {seed}: {:?}",
            m.vel_mean
        );
        assert!(
            (m.vel_mean.vz - truth.vel_mean.vz).abs() < 0.1,
            "seed {seed}: {:?}",
            m.vel_mean
        );
        for z in (10..=80).map(f64::from) {
            let (h, w) = m.size_px(z);
            let (th, tw) = truth.size_px(z);
            assert!((h / th - 1.0).abs() < 0.05, "seed {seed}, h at Z={z}: {h} vs {th}");
            assert!((w / tw - 1.0).abs() < 0.05, "seed {seed}, w at Z={z}: {w} vs {tw}");
        }
    }
}

#[test]
fn seeds_are_back_projected_first_boxes() {
    let cam = Camera::default();
    let ds = generate_dataset(
        &cam,
        &PriorModel::motorway_default(&cam),
        &GenConfig {
            n_samples: 200,
            seed: 9,
            ..GenConfig::default()
        },
    )
    .unwrap();
    let fit = fit_priors(&ds.samples, &cam, &FitConfig::default()).unwrap();
    assert_eq!(fit.dropped_seeds, 0);
    assert_eq!(fit.model.seed_points.len(), ds.samples.len());
    for (p, s) in fit.model.seed_points.iter().zip(&ds.samples) {
        let expected = back_project(&cam, bbox_reference_point(&cam, s.track.first()).unwrap()).unwrap();
        assert_eq!(*p, expected);
    }
}

#[test]
fn single_sample_cannot_fit_velocity() {
    let cam = Camera::default();
    let ds = generate_dataset(
        &cam,
        &PriorModel::motorway_default(&cam),
        &GenConfig {
            n_samples: 1,
            seed: 1,
            ..GenConfig::default()
        },
    )
    .unwrap();
    let err = fit_priors(&ds.samples, &cam, &FitConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Fit(_)), "{err}");
}

#[test]
fn fitted_prior_survives_json() {
    let cam = Camera::default();
    let ds = generate_dataset(
        &cam,
        &PriorModel::motorway_default(&cam),
        &GenConfig {
            n_samples: 300,
            seed: 4,
            ..GenConfig::default()
        },
    )
    .unwrap();
    let m = fit_priors(&ds.samples, &cam, &FitConfig::default()).unwrap().model;
    let back: PriorModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
    assert_eq!(back, m);
}
