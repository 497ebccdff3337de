//! Exit codes, config layering and artifacts of the `sa-assess` binary.

use std::path::Path;
use std::process::{Command, Output};

use sa_core::data::synth::{EventScript, SaRamp, ScenarioScript, VideoScript};
use sa_numerics::RngSeed;

fn sa_assess(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sa-assess"));
    cmd.args(args).env_remove("SA_ASSESS_CONFIG");
    if let Some(c) = config {
        cmd.env("SA_ASSESS_CONFIG", c);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn script(dir: &Path, events_per_video: &[usize]) -> String {
    let script = ScenarioScript {
        fps: 50.0,
        frame: Default::default(),
        position_noise: 1.0,
        rating_noise: 0.0,
        raters: 1,
        seed: RngSeed(1),
        videos: events_per_video
            .iter()
            .enumerate()
            .map(|(v, &n)| VideoScript {
                video_id: format!("v{v}"),
                events: (0..n)
                    .map(|e| EventScript {
                        name: format!("e{e}"),
                        duration_frames: 60,
                        ramp: SaRamp {
                            rise_frames: 20,
                            peak: [4.0; 3],
                        },
                    })
                    .collect(),
            })
            .collect(),
    };
    let path = dir.join("script.json");
    std::fs::write(&path, serde_json::to_string(&script).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn help_exits_zero_and_usage_errors_exit_two() {
    assert_eq!(sa_assess(&["--help"], None).status.code(), Some(0));
    assert_eq!(sa_assess(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(sa_assess(&["verify", "--quick", "--threads", "0"], None).status.code(), Some(2));
}

#[test]
fn missing_input_exits_two_and_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o").display().to_string();
    let o = sa_assess(&["synth", "--script", "/no/such/script.json", "--out", &out], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/script.json"), "{}", stderr(&o));
}

#[test]
fn bad_config_file_exits_two_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sa.conf");
    std::fs::write(&cfg, "# comment\nseed = 4\nwindow = wide\n").unwrap();
    let o = sa_assess(&["verify", "--quick"], Some(&cfg));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sa.conf:3"), "{}", stderr(&o));
}

#[test]
fn injected_fault_fails_verify_and_names_the_primitive() {
    let o = sa_assess(&["verify", "--quick", "--inject-fault", "sigmoid-backward"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sigmoid"), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL  sigmoid"));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let script = script(dir.path(), &[2]);
    let cfg = dir.path().join("sa.conf");
    std::fs::write(&cfg, "seed = 11\ntau = 0.4\n").unwrap();
    let pipeline = |out: &str, extra: &[&str], config: Option<&Path>| {
        let out = dir.path().join(out).display().to_string();
        let mut args = extra.to_vec();
        args.extend(["synth", "--script", &script, "--out", &out]);
        assert_eq!(sa_assess(&args, config).status.code(), Some(0));
        let text = std::fs::read_to_string(Path::new(&out).join("config.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["pipeline"].clone()
    };
    let defaults = pipeline("a", &[], None);
    let file = pipeline("b", &[], Some(&cfg));
    let flag = pipeline("c", &["--seed", "12"], Some(&cfg));
    assert_eq!(defaults["seed"], 42);
    assert_eq!(defaults["smoothing"]["tau"], 0.5);
    assert_eq!(file["seed"], 11);
    assert_eq!(file["smoothing"]["tau"], 0.4);
    assert_eq!(flag["seed"], 12);
    assert_eq!(flag["smoothing"]["tau"], 0.4);
}

#[test]
fn synth_writes_one_boundary_row_per_event() {
    let dir = tempfile::tempdir().unwrap();
    let script = script(dir.path(), &[2, 3, 1]);
    let out = dir.path().join("o");
    let o = sa_assess(&["synth", "--script", &script, "--out", &out.display().to_string()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let events = std::fs::read_to_string(out.join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), 1 + 6);
    let frames = std::fs::read_to_string(out.join("frames.jsonl")).unwrap();
    assert_eq!(frames.lines().count(), 6 * 60);
    for f in ["ratings.csv", "labels.jsonl", "script.json", "config.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let script = script(dir.path(), &[3, 3]);
    let data = dir.path().join("data");
    let d = |f: &str| data.join(f).display().to_string();
    assert_eq!(
        sa_assess(&["synth", "--script", &script, "--out", &d("")], None).status.code(),
        Some(0)
    );
    let cfg = dir.path().join("sa.conf");
    std::fs::write(&cfg, "gae_lr = 1e300\n").unwrap();
    let model = dir.path().join("model").display().to_string();
    let o = sa_assess(
        &[
            "--gae-epochs", "2", "--epochs", "1", "train", "--frames", &d("frames.jsonl"), "--ratings",
            &d("ratings.csv"), "--events", &d("events.csv"), "--out", &model, "--no-cv",
        ],
        Some(&cfg),
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(stderr(&o).matches("training aborted").count(), 1, "{}", stderr(&o));
}
