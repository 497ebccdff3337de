//! Cross-module invariants checked on generated inputs.

use std::collections::BTreeMap;

use proptest::prelude::*;
use sa_core::data::balance::{balance_resample, class_histogram, BalanceMode};
use sa_core::data::frames::{load_frames, write_frames, FrameFeatures, ObjectFeatures, Role, NUM_KEYPOINTS};
use sa_core::data::synth::{event_starts, generate_scenario, EventScript, SaRamp, ScenarioScript, VideoScript};
use sa_core::data::window::window_sequences;
use sa_core::evaluation::{iou, mof};
use sa_core::graph::{fully_connected, gcn_layer, NODE_DIM, NUM_NODES};
use sa_core::labels::{accumulate_ternary, build_curve, Anchor, SaLabel};
use sa_numerics::{Activation, RngSeed, Tape, Tensor};

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn values(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

/// ReLU(A·Φ·W) by explicit index sums.
fn dense_oracle(phi: &Tensor, adj: &Tensor, w: &Tensor) -> Vec<f64> {
    let (n, f) = (phi.shape()[0], phi.shape()[1]);
    let h = w.shape()[1];
    let mut out = vec![0.0; n * h];
    for i in 0..n {
        for j in 0..h {
            let mut acc = 0.0;
            for k in 0..n {
                let mut inner = 0.0;
                for m in 0..f {
                    inner += phi.at(&[k, m]) * w.at(&[m, j]);
                }
                acc += adj.at(&[i, k]) * inner;
            }
            out[i * h + j] = acc.max(0.0);
        }
    }
    out
}

fn apply_gcn(phi: &Tensor, adj: &Tensor, w: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let (p, a, wv) = (tape.constant(phi.clone()), tape.constant(adj.clone()), tape.constant(w.clone()));
    let out = gcn_layer(&mut tape, p, a, wv, Activation::Relu).unwrap();
    tape.value(out).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gcn_matches_dense_oracle(
        phi in values(NUM_NODES * NODE_DIM, -1.0, 1.0),
        adj in values(NUM_NODES * NUM_NODES, 0.0, 1.0),
        w1 in values(NODE_DIM * 16, -1.0, 1.0),
        w2 in values(16 * 8, -1.0, 1.0),
    ) {
        let phi = tensor(&[NUM_NODES, NODE_DIM], phi);
        let adj = tensor(&[NUM_NODES, NUM_NODES], adj);
        let w1 = tensor(&[NODE_DIM, 16], w1);
        let w2 = tensor(&[16, 8], w2);

        let hidden = apply_gcn(&phi, &adj, &w1);
        prop_assert_eq!(hidden.shape(), &[NUM_NODES, 16]);
        let expect = dense_oracle(&phi, &adj, &w1);
        for (g, e) in hidden.data().iter().zip(&expect) {
            prop_assert!((g - e).abs() <= 1e-10);
        }

        let embed = apply_gcn(&hidden, &adj, &w2);
        prop_assert_eq!(embed.shape(), &[NUM_NODES, 8]);
        let expect = dense_oracle(&hidden, &adj, &w2);
        for (g, e) in embed.data().iter().zip(&expect) {
            prop_assert!((g - e).abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gcn_is_permutation_equivariant(
        phi in values(NUM_NODES * NODE_DIM, -1.0, 1.0),
        adj in values(NUM_NODES * NUM_NODES, 0.0, 1.0),
        w in values(NODE_DIM * 16, -1.0, 1.0),
        all_ones in any::<bool>(),
    ) {
        let phi = tensor(&[NUM_NODES, NODE_DIM], phi);
        let adj = if all_ones { fully_connected(NUM_NODES) } else { tensor(&[NUM_NODES, NUM_NODES], adj) };
        let w = tensor(&[NODE_DIM, 16], w);
        // swap the two middle nodes
        let perm = [0, 2, 1, 3];
        let mut phi_p = phi.clone();
        let mut adj_p = adj.clone();
        for i in 0..NUM_NODES {
            for m in 0..NODE_DIM {
                phi_p.set(&[i, m], phi.at(&[perm[i], m]));
            }
            for j in 0..NUM_NODES {
                adj_p.set(&[i, j], adj.at(&[perm[i], perm[j]]));
            }
        }
        let out = apply_gcn(&phi, &adj, &w);
        let out_p = apply_gcn(&phi_p, &adj_p, &w);
        for i in 0..NUM_NODES {
            for j in 0..16 {
                prop_assert!((out_p.at(&[i, j]) - out.at(&[perm[i], j])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn ternary_class_is_monotone_and_consistent(bits in prop::array::uniform3(0u8..=1), flip in 0usize..3) {
        let (acc, cls) = accumulate_ternary(bits);
        prop_assert_eq!(cls, acc.min(2));
        // accumulated 2 and 3 share the top class
        if cls == 2 {
            prop_assert_eq!(&bits[..2], &[1, 1]);
        }
        if cls >= 1 {
            prop_assert_eq!(bits[0], 1);
        }
        let mut raised = bits;
        raised[flip] = 1;
        prop_assert!(accumulate_ternary(raised).1 >= cls);
    }

    #[test]
    fn curve_hits_anchors_and_resets_at_boundaries(
        len in 200usize..2000,
        cuts in prop::collection::btree_set(1usize..2000, 0..4),
        ratings in prop::collection::vec(prop::array::uniform3(1.0f64..=5.0), 10),
    ) {
        let mut boundaries = vec![0];
        boundaries.extend(cuts.into_iter().filter(|&c| c < len));
        let anchors: Vec<Anchor> = (0..10)
            .map(|c| Anchor { frame: ((c + 1) * len / 10) - 1, value: ratings[c] })
            .collect();
        let curve = build_curve(&anchors, &boundaries, len).unwrap();
        prop_assert_eq!(curve.len(), len);
        for &b in &boundaries {
            prop_assert_eq!(curve.values[b], [0.0; 3]);
            let label = SaLabel::from_values(curve.values[b]);
            prop_assert_eq!(label.binary, [0, 0, 0]);
            prop_assert_eq!(label.ternary, 0);
        }
        for a in anchors.iter().filter(|a| !boundaries.contains(&a.frame)) {
            prop_assert_eq!(curve.values[a.frame], a.value);
        }
    }

    #[test]
    fn windows_count_and_disjoint(lens in prop::collection::vec(0usize..80, 1..5)) {
        let frames: Vec<FrameFeatures> = lens
            .iter()
            .enumerate()
            .flat_map(|(v, &n)| (0..n).map(move |i| bare_frame(&format!("v{v}"), i as u64)))
            .collect();
        let windows = window_sequences(&frames, 15, 15).unwrap();
        prop_assert_eq!(windows.len(), lens.iter().map(|n| n / 15).sum::<usize>());
        let mut seen = std::collections::BTreeSet::new();
        for w in &windows {
            for f in w.start_frame..w.start_frame + w.len as u64 {
                prop_assert!(seen.insert((w.video_id.clone(), f)));
            }
        }
    }

    #[test]
    fn balance_histogram_is_uniform(
        classes in prop::collection::vec(0usize..3, 3..200),
        upsample in any::<bool>(),
        seed in any::<u64>(),
    ) {
        prop_assume!((0..3).all(|c| classes.contains(&c)));
        let mode = if upsample { BalanceMode::Upsample { per_class: 40 } } else { BalanceMode::Downsample };
        let out = balance_resample(&classes, 3, |&c| c, mode, RngSeed(seed)).unwrap();
        let hist = class_histogram(&out, 3, |&c| c);
        prop_assert!(hist.iter().all(|&h| h == hist[0]));
        prop_assert_eq!(hist.iter().sum::<usize>(), out.len());
    }

    #[test]
    fn mof_identity_and_symmetry(
        a in prop::collection::vec(0usize..5, 1..200),
        b_seed in any::<u64>(),
    ) {
        let b: Vec<usize> = a.iter().enumerate().map(|(i, &x)| (x + ((b_seed >> (i % 60)) & 1) as usize) % 5).collect();
        prop_assert_eq!(mof(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        prop_assert_eq!(mof(&a, &b).unwrap(), mof(&b, &a).unwrap());
    }
}

fn bare_frame(video: &str, idx: u64) -> FrameFeatures {
    FrameFeatures {
        video_id: video.to_string(),
        frame_idx: idx,
        t_ms: idx as f64 * 20.0,
        objects: BTreeMap::new(),
        imputed: BTreeMap::new(),
    }
}

fn object_strategy(role: Role) -> impl Strategy<Value = ObjectFeatures> {
    let kp = if role.has_keypoints() {
        prop::collection::vec(prop::array::uniform2(-1e4f64..1e4), NUM_KEYPOINTS).prop_map(Some).boxed()
    } else {
        Just(None).boxed()
    };
    (0.0f64..1000.0, 0.0f64..1000.0, 0.001f64..900.0, 0.001f64..900.0, kp, -1e3f64..1e3, any::<i64>()).prop_map(
        |(x, y, w, h, keypoints, depth, track_id)| ObjectFeatures {
            bbox: [x, y, x + w, y + h],
            keypoints,
            depth,
            track_id,
        },
    )
}

fn frame_strategy() -> impl Strategy<Value = FrameFeatures> {
    (
        object_strategy(Role::Bystander),
        object_strategy(Role::Instructor),
        object_strategy(Role::Patient),
        object_strategy(Role::Drone),
        -1e9f64..1e9,
    )
        .prop_map(|(b, i, p, d, t_ms)| {
            let mut f = bare_frame("v", 0);
            f.t_ms = t_ms;
            f.objects = [(Role::Bystander, b), (Role::Instructor, i), (Role::Patient, p), (Role::Drone, d)].into();
            f
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frames_round_trip_bit_exact(mut frames in prop::collection::vec(frame_strategy(), 1..12)) {
        for (i, f) in frames.iter_mut().enumerate() {
            f.video_id = format!("v{}", i % 2);
            f.frame_idx = i as u64 * 3;
        }
        // load output is grouped by video
        frames.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frames.jsonl");
        write_frames(&path, &frames).unwrap();
        let back = load_frames(&path).unwrap();
        prop_assert_eq!(back, frames);
    }

    #[test]
    fn synthetic_boundaries_are_cumulative_durations(
        durations in prop::collection::vec(prop::collection::vec(60usize..400, 1..5), 1..3),
        seed in any::<u64>(),
    ) {
        let videos: Vec<VideoScript> = durations
            .iter()
            .enumerate()
            .map(|(v, ds)| VideoScript {
                video_id: format!("video_{v:02}"),
                events: ds
                    .iter()
                    .enumerate()
                    .map(|(e, &d)| EventScript {
                        name: format!("event_{e}"),
                        duration_frames: d,
                        ramp: SaRamp { rise_frames: 30, peak: [4.0, 3.5, 2.0] },
                    })
                    .collect(),
            })
            .collect();
        let script = ScenarioScript {
            fps: 50.0,
            frame: Default::default(),
            position_noise: 2.0,
            rating_noise: 0.3,
            raters: 2,
            seed: RngSeed(seed),
            videos: videos.clone(),
        };
        let scenario = generate_scenario(&script).unwrap();
        for (video, ds) in videos.iter().zip(&durations) {
            let mut expect = vec![0];
            let mut acc = 0;
            for d in &ds[..ds.len() - 1] {
                acc += d;
                expect.push(acc);
            }
            prop_assert_eq!(&event_starts(video), &expect);
            let ev = scenario.events.iter().find(|e| e.video_id == video.video_id).unwrap();
            prop_assert_eq!(&ev.boundaries, &expect);
            let frames = scenario.frames.iter().filter(|f| f.video_id == video.video_id).count();
            prop_assert_eq!(frames, ds.iter().sum::<usize>());
        }
    }
}
