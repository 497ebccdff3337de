//! Training-stage properties on a small seeded synthetic scenario.

use sa_core::data::synth::{generate_scenario, EventScript, SaRamp, Scenario, ScenarioScript, VideoScript};
use sa_core::graph::{train_autoencoder, GcnConfig, InteractionGraph};
use sa_core::model::{predict_curve, train, HeadKind, SaModel, SaModelConfig};
use sa_core::pipeline::{build_labeled_data, prepare_videos, train_graph_encoder, PipelineConfig};
use sa_numerics::RngSeed;

fn scenario() -> Scenario {
    let peaks = [[1.5, 1.0, 1.0], [4.0, 2.0, 1.0], [4.5, 4.0, 3.5]];
    let videos = (0..2)
        .map(|v| VideoScript {
            video_id: format!("video_{v:02}"),
            events: (0..4)
                .map(|e| EventScript {
                    name: format!("event_{e}"),
                    duration_frames: 250 + 30 * e + 20 * v,
                    ramp: SaRamp {
                        rise_frames: 60,
                        peak: peaks[(e + v) % 3],
                    },
                })
                .collect(),
        })
        .collect();
    generate_scenario(&ScenarioScript {
        fps: 50.0,
        frame: Default::default(),
        position_noise: 3.0,
        rating_noise: 0.2,
        raters: 2,
        seed: RngSeed(11),
        videos,
    })
    .unwrap()
}

fn graphs(s: &Scenario) -> Vec<InteractionGraph> {
    let cfg = PipelineConfig::default();
    prepare_videos(s.frames.clone(), cfg.geometry)
        .unwrap()
        .into_iter()
        .flat_map(|v| v.graphs.into_iter().step_by(4))
        .collect()
}

#[test]
fn autoencoder_loss_is_finite_and_trends_down() {
    let s = scenario();
    let (_, history) = train_autoencoder(&graphs(&s), GcnConfig::default()).unwrap();
    let losses = &history.epoch_losses;
    assert_eq!(losses.len(), 50);
    assert!(history.initial_loss.is_finite());
    assert!(losses.iter().all(|l| l.is_finite()));
    let trailing: Vec<f64> = losses.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for pair in trailing.windows(2) {
        assert!(pair[1] <= pair[0], "trailing average rose: {pair:?}");
    }
    assert!(losses[49] <= 0.5 * history.initial_loss);
}

#[test]
fn autoencoder_training_is_reproducible() {
    let g = graphs(&scenario());
    let cfg = GcnConfig {
        epochs: 3,
        ..GcnConfig::default()
    };
    let (a, ha) = train_autoencoder(&g, cfg.clone()).unwrap();
    let (b, hb) = train_autoencoder(&g, cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.to_checkpoint().unwrap().to_json().unwrap(), b.to_checkpoint().unwrap().to_json().unwrap());
}

#[test]
fn classifier_training_and_inference_are_reproducible() {
    let s = scenario();
    let cfg = PipelineConfig {
        gcn: GcnConfig {
            epochs: 2,
            ..GcnConfig::default()
        },
        graph_stride: 8,
        ..PipelineConfig::default()
    }
    .resolved();
    let videos = prepare_videos(s.frames.clone(), cfg.geometry).unwrap();
    let (encoder, _) = train_graph_encoder(&videos, &cfg).unwrap();
    let data = build_labeled_data(&videos, &encoder, &s.ratings, &s.events, &cfg).unwrap();
    assert!(data.samples.len() > 100);

    for head in [HeadKind::Ternary, HeadKind::Binary] {
        let model_cfg = SaModelConfig {
            head,
            max_epochs: 3,
            ..cfg.model.clone()
        };
        let (val, tr) = data.samples.split_at(20);
        let (a, ha) = train(SaModel::new(model_cfg.clone()).unwrap(), tr, val).unwrap();
        let (b, hb) = train(SaModel::new(model_cfg).unwrap(), tr, val).unwrap();
        assert_eq!(ha, hb);
        let (ja, jb) = (a.to_checkpoint().unwrap().to_json().unwrap(), b.to_checkpoint().unwrap().to_json().unwrap());
        assert_eq!(ja, jb);

        let rows = &data.rows["video_00"];
        let p1 = predict_curve(&a, rows).unwrap();
        let p2 = predict_curve(&a, rows).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.len(), rows.len());
        if head == HeadKind::Ternary {
            assert!(p1.iter().all(|p| (p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6));
        }
    }
}
