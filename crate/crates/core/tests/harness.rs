use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use skilllab::dsd::{intrinsic_rewards, RewardConfig, RewardMode};
use skilllab::env::{BehaviorId, EnvId};
use skilllab::harness::cli::{cli_dispatch, gen_videos, parse_behaviors};
use skilllab::harness::train::{CHECKPOINT_DIR, DUMP_FILE, METRICS_FILE};
use skilllab::harness::*;
use skilllab::instructor::Instructor;
use skilllab::metrics::csv_header;
use skilllab::rng::rng_from_seed;
use skilllab::videodata::{load_clips, ClipLabel};
use skilllab::Error;

fn tiny(mode: RewardMode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.reward.mode = mode;
    cfg.phi.hidden_width = 16;
    cfg.sac.hidden_width = 16;
    cfg.train.epochs = 3;
    cfg.train.episodes_per_epoch = 2;
    cfg.train.gradient_steps_per_epoch = 4;
    cfg.train.batch_size = 32;
    cfg.train.eval_every = 1;
    cfg.train.eval_skills = 6;
    cfg.env.episode_length = 20;
    cfg
}

fn half() -> Option<Instructor<f64>> {
    Some(Instructor::constant(0.5).unwrap())
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("skilllab").chain(list.iter().copied()).map(String::from).collect()
}

#[test]
fn zero_epochs_writes_header_only() {
    let mut cfg = tiny(RewardMode::Metra);
    cfg.train.epochs = 0;
    let out = run_training_with::<f64>(&cfg, None).unwrap();
    assert!(out.rows.is_empty());
    assert_eq!(out.csv, format!("{}\n", csv_header(&cfg.env_spec())));
}

#[test]
fn unit_instructor_direct_matches_metra_bytes() {
    let one = Some(Instructor::constant(1.0).unwrap());
    let mut direct = tiny(RewardMode::DodontDirect);
    direct.reward.alpha = 1.0;
    let metra = tiny(RewardMode::Metra);
    let a = run_training_with::<f64>(&direct, one.clone()).unwrap();
    let b = run_training_with::<f64>(&metra, one).unwrap();
    assert_eq!(a.csv, b.csv);
}

#[test]
fn alpha_two_breaks_the_reduction() {
    let one = Some(Instructor::constant(1.0).unwrap());
    let a = run_training_with::<f64>(&tiny(RewardMode::DodontDirect), one.clone()).unwrap();
    let b = run_training_with::<f64>(&tiny(RewardMode::Metra), one).unwrap();
    assert_ne!(a.csv, b.csv);
}

#[test]
fn same_seed_same_csv_other_seed_differs() {
    let cfg = tiny(RewardMode::DodontDirect);
    let a = run_training_with::<f64>(&cfg, half()).unwrap();
    let b = run_training_with::<f64>(&cfg, half()).unwrap();
    assert_eq!(a.csv, b.csv);
    let mut other = cfg.clone();
    other.train.seed = 99;
    let c = run_training_with::<f64>(&other, half()).unwrap();
    assert_ne!(a.csv, c.csv);
}

#[test]
fn f32_runs_are_deterministic_too() {
    let cfg = tiny(RewardMode::Metra);
    let a = run_training_with::<f32>(&cfg, None).unwrap();
    let b = run_training_with::<f32>(&cfg, None).unwrap();
    assert_eq!(a.csv, b.csv);
    assert_eq!(a.rows.len(), 3);
}

#[test]
fn missing_instructor_is_a_startup_error() {
    let cfg = tiny(RewardMode::DodontDirect);
    assert!(matches!(run_training::<f64>(&cfg), Err(Error::InvalidConfig(_))));
    assert!(run_training_with::<f64>(&cfg, None).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &cfg);
    assert_ne!(cli_dispatch(args(&["train-skills", "--config", path.to_str().unwrap()])), 0);
}

#[test]
fn divergence_aborts_with_a_batch_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(RewardMode::Metra);
    cfg.phi.lr = 1e300;
    cfg.paths.out_dir = Some(dir.path().to_path_buf());
    let err = run_training_with::<f64>(&cfg, None).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    let dump = fs::read_to_string(dir.path().join(DUMP_FILE)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&dump).unwrap();
    assert!(v["batch"].is_object());
}

#[test]
fn output_directory_holds_csv_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(RewardMode::DodontDirect);
    cfg.paths.out_dir = Some(dir.path().to_path_buf());
    let out = run_training_with::<f64>(&cfg, half()).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap(), out.csv);

    let ck = load_checkpoint::<f64>(&dir.path().join(CHECKPOINT_DIR)).unwrap();
    assert_eq!(ck.epoch, 3);
    assert_eq!(ck.phi, out.state.phi);
    assert_eq!(ck.policy, out.state.agent.policy);
    assert_eq!(ck.dual, out.state.dual);

    let row = evaluate_checkpoint(&cfg, ck, half()).unwrap();
    let last = out.rows.last().unwrap();
    assert_eq!(row.state_coverage, last.state_coverage);
    assert_eq!(row.zero_shot, last.zero_shot);
    assert_eq!(row.instructor_mean_p, last.instructor_mean_p);
}

#[test]
fn rewards_follow_the_current_representation() {
    let cfg = tiny(RewardMode::Metra);
    let mut state = init_state::<f64>(&cfg, None).unwrap();
    let first = run_training_with::<f64>(&cfg, None).unwrap().state;
    state.buffer = first.buffer.clone();
    let batch = state.buffer.sample(16, &mut rng_from_seed(3)).unwrap();
    let rc = RewardConfig::new(RewardMode::Metra, 2.0);
    let before = intrinsic_rewards(&rc, &state.phi, None, &batch).unwrap();
    let after = intrinsic_rewards(&rc, &first.phi, None, &batch).unwrap();
    assert_ne!(before, after);
}

#[test]
fn ablation_covers_every_mode() {
    let modes = parse_modes("METRA,DODONT_DIRECT,DODONT_DELAYED,ADDITIVE,ONLY_DOS").unwrap();
    let mut cfg = tiny(RewardMode::Metra);
    cfg.train.epochs = 1;
    let csv = run_ablation::<f64>(&cfg, &modes, &[0, 1], half()).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("mode,seed,epoch,"));
    let seen: BTreeSet<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seen.len(), 5);
}

#[test]
fn gen_videos_counts_clips_per_behavior() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("clips.txt");
    let behaviors = parse_behaviors("MOVE_RIGHT:DO,MOVE_LEFT:DONT").unwrap();
    assert_eq!(behaviors[1], (BehaviorId::MoveLeft, ClipLabel::Dont));
    assert_eq!(gen_videos(EnvId::PointMass2D, &behaviors, 4, 30, 0, &out).unwrap(), 8);
    let clips = load_clips::<f64>(&out).unwrap();
    assert_eq!(clips.len(), 8);
    assert_eq!(clips.iter().filter(|c| c.label == ClipLabel::Do).count(), 4);
}

#[test]
fn cli_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let code = cli_dispatch(args(&[
        "gen-videos", "--env", "POINTMASS2D", "--behaviors", "MOVE_RIGHT:DO,MOVE_LEFT:DONT", "--count", "2",
        "--length", "30", "--out", &p("clips.txt"),
    ]));
    assert_eq!(code, 0);
    let code = cli_dispatch(args(&[
        "train-instructor", "--clips", &p("clips.txt"), "--out", &p("ins.bin"), "--epochs", "50", "--hidden-width", "16",
    ]));
    assert_eq!(code, 0);

    let mut cfg = tiny(RewardMode::DodontDirect);
    cfg.train.epochs = 2;
    cfg.paths.instructor = Some(dir.path().join("ins.bin"));
    cfg.paths.out_dir = Some(dir.path().join("run"));
    let config = write_config(dir.path(), &cfg);
    assert_eq!(cli_dispatch(args(&["train-skills", "--config", config.to_str().unwrap()])), 0);
    let metrics = fs::read_to_string(dir.path().join("run").join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let ck = dir.path().join("run").join(CHECKPOINT_DIR);
    let code = cli_dispatch(args(&[
        "eval", "--checkpoint", ck.to_str().unwrap(), "--config", config.to_str().unwrap(), "--out", &p("eval.csv"),
    ]));
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(p("eval.csv")).unwrap().lines().count(), 2);

    cfg.train.epochs = 1;
    let config = write_config(dir.path(), &cfg);
    let code = cli_dispatch(args(&[
        "ablate", "--config", config.to_str().unwrap(), "--modes", "METRA,DODONT_DIRECT", "--seeds", "0,1", "--out",
        &p("ablation.csv"),
    ]));
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(p("ablation.csv")).unwrap().lines().count(), 5);
}

#[test]
fn cli_rejects_bad_usage() {
    assert_ne!(cli_dispatch(args(&["fly"])), 0);
    assert_ne!(cli_dispatch(args(&["gen-videos", "--env", "POINTMASS2D"])), 0);
    assert_ne!(cli_dispatch(args(&[])), 0);
    assert_eq!(cli_dispatch(args(&["--help"])), 0);
}
