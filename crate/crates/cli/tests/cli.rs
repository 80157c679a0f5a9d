use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use strange_marl::envs::EnvConfig;
use strange_marl::exploration::BonusKind;
use strange_marl::marl::MixerKind;
use strange_marl::trainer::{MetricsRow, TrainConfig};
use strange_marl_cli::config::{EnvSection, Overrides, RunConfig};
use strange_marl_cli::error::exit;
use strange_marl_cli::metrics::{aggregate_csv, format_sig, mean_ci95, metrics_csv, parse_metrics, read_metrics, write_metrics};
use strange_marl_cli::run::{self, seed_dir, RunDir, TrainOptions};
use strange_marl_cli::{parse_config, CliError, RunManifest, RunStatus};

const TINY: &str = r#"
[env]
name = "matrix_game"
k = 4

[algo]
name = "qmix+sim"
bonus_width = 8

[train]
hidden = 8
mixer_embed = 8
batch_size = 4
buffer_capacity = 32
epsilon_anneal_steps = 200
total_env_steps = 240
eval_interval = 60
eval_episodes = 2
"#;

fn tiny() -> RunConfig {
    RunConfig::from_toml(TINY).unwrap().resolve().unwrap()
}

fn quiet() -> impl FnMut(u64, &MetricsRow) {
    |_, _| {}
}

fn row(step: u64, ret: f64, q: Option<f64>) -> MetricsRow {
    MetricsRow {
        env_steps: step,
        episodes: step / 2,
        train_loss_goal: Some(0.125),
        train_loss_exp: None,
        mean_r_int: q.map(|v| v / 10.0),
        epsilon: 0.5,
        eval_return_mean: ret,
        eval_episode_length_mean: 3.25,
        eval_win_or_solve_rate: 0.5,
        q_goal_mean: q,
        q_exp_mean: None,
    }
}

#[test]
fn empty_file_is_the_default_config() {
    let c = RunConfig::from_toml("").unwrap().resolve().unwrap();
    assert_eq!(c.env, EnvSection::MatrixGame { k: 16 });
    let t = c.train_config().unwrap();
    assert_eq!((t.mixer, t.bonus), (MixerKind::Qmix, BonusKind::Sim));
    let expected = TrainConfig { use_exploration_q: Some(true), ..TrainConfig::default() };
    assert_eq!(t, expected);
    assert!(matches!(c.env_config().unwrap(), EnvConfig::MatrixGame(m) if m.k == 16));
    let b = c.bonus_config().unwrap();
    assert_eq!((b.beta, b.rho, b.d), (0.1, 0.5, 32));
}

#[test]
fn defaults_depend_on_the_environment() {
    let c = RunConfig::from_toml("[env]\nname = \"pressureplate\"\nlayout = \"small\"\n").unwrap().resolve().unwrap();
    let t = c.train_config().unwrap();
    assert_eq!((t.beta, t.buffer_capacity), (1.0, 2000));
    match c.env_config().unwrap() {
        EnvConfig::PressurePlate(p) => assert_eq!((p.layout.n_agents(), p.max_steps), (2, 250)),
        other => panic!("{other:?}"),
    }
    let explicit = RunConfig::from_toml("[env]\nname = \"pressureplate\"\n[algo]\nbeta = 0.25\n").unwrap().resolve().unwrap();
    assert_eq!(explicit.train_config().unwrap().beta, 0.25);
    let four = explicit.env_config().unwrap();
    assert!(matches!(four, EnvConfig::PressurePlate(p) if p.layout.n_agents() == 4));
}

#[test]
fn out_of_range_and_unknown_keys_are_rejected() {
    let err = RunConfig::from_toml("[train]\ngamma = 1.5\n").unwrap().resolve().unwrap_err();
    assert!(matches!(&err, CliError::Core(strange_marl::Error::Config(m)) if m.contains("gamma")), "{err}");
    assert_eq!(err.exit_code(), exit::CONFIG);
    for text in [
        "[train]\ngama = 0.9\n",
        "[algo]\nbeta = 1.0\nepsilon = 0.1\n",
        "[env]\nname = \"matrix_game\"\nlayout = \"small\"\n",
        "[env]\nname = \"gridworld\"\n",
        "[sweep]\nseeds = [1, 2]\n",
        "[train\n",
        "[train]\nseed = -1\n",
    ] {
        let err = RunConfig::from_toml(text).unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{text}");
    }
    for text in ["[algo]\nname = \"qmix+emc\"\n", "[env]\nname = \"matrix_game\"\nk = 0\n", "[algo]\nbeta = -1.0\n"] {
        assert!(RunConfig::from_toml(text).unwrap().resolve().is_err(), "{text}");
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = parse_config(Path::new("/nonexistent/run.toml")).unwrap_err();
    assert_eq!(err.exit_code(), exit::IO);
}

#[test]
fn flag_overrides() {
    let mut c = RunConfig::from_toml(TINY).unwrap();
    c.apply(&Overrides { seed: Some(9), algo: Some("vdn+rnd".into()), env: Some("pressureplate:small:40".into()) })
        .unwrap();
    let c = c.resolve().unwrap();
    assert_eq!(c.train.seed, 9);
    assert_eq!(c.env, EnvSection::PressurePlate { layout: "small".into(), max_steps: 40 });
    let t = c.train_config().unwrap();
    assert_eq!((t.mixer, t.bonus, t.beta), (MixerKind::Vdn, BonusKind::Rnd, 1.0));
    assert_eq!(EnvSection::from_flag("matrix_game:64").unwrap(), EnvSection::MatrixGame { k: 64 });
    assert_eq!(EnvSection::from_flag("matrix_game").unwrap(), EnvSection::MatrixGame { k: 16 });
    for bad in ["matrix_game:x", "matrix_game:4:5", "smac:3m", "pressureplate:small:zero"] {
        assert!(EnvSection::from_flag(bad).is_err(), "{bad}");
    }
}

#[test]
fn layout_files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.txt");
    std::fs::write(&path, "#####\n#.$.#\n##A##\n#a..#\n#0.1#\n#####\nassign a:0 $:1\n").unwrap();
    let text = format!("[env]\nname = \"pressureplate\"\nlayout = {:?}\nmax_steps = 30\n", path.to_str().unwrap());
    let c = RunConfig::from_toml(&text).unwrap().resolve().unwrap();
    assert!(matches!(c.env_config().unwrap(), EnvConfig::PressurePlate(p) if p.max_steps == 30 && p.layout.width == 5));
    let missing = "[env]\nname = \"pressureplate\"\nlayout = \"/nonexistent/layout.txt\"\n";
    assert!(RunConfig::from_toml(missing).unwrap().resolve().is_err());
}

proptest! {
    #[test]
    fn config_round_trips(
        k in 1usize..300,
        pp in any::<bool>(),
        algo in prop::sample::select(vec!["qmix+sim", "vdn+sim_wo_eq", "qmix+rnd", "vdn+icm", "qmix+none"]),
        beta in prop::option::of(0.0f64..20.0),
        alpha in 1e-6f64..1e-1,
        gamma in 0.0f64..0.999,
        seed in 0u64..1_000_000,
        steps in 1u64..10_000_000,
    ) {
        let env = if pp { EnvSection::PressurePlate { layout: "small".into(), max_steps: k } } else { EnvSection::MatrixGame { k } };
        let mut c = RunConfig { env, ..RunConfig::default() };
        c.algo.name = algo.into();
        c.algo.beta = beta;
        c.train.alpha = alpha;
        c.train.gamma = gamma;
        c.train.seed = seed;
        c.train.total_env_steps = steps;
        let resolved = c.resolve().unwrap();
        let text = resolved.to_toml();
        let again = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&again, &resolved);
        prop_assert_eq!(again.resolve().unwrap().to_toml(), text);
    }
}

#[test]
fn significant_digits() {
    let cases = [
        (0.0, "0"),
        (1.0, "1"),
        (-2.5, "-2.5"),
        (123456.0, "123456"),
        (1234567.0, "1.23457e6"),
        (0.1234567, "0.123457"),
        (9.9999996, "10"),
        (0.00001234567, "0.0000123457"),
        (0.000001234567, "1.23457e-6"),
        (1.0 / 3.0, "0.333333"),
        (16.0, "16"),
    ];
    for (v, s) in cases {
        assert_eq!(format_sig(v), s, "{v}");
    }
}

proptest! {
    #[test]
    fn formatted_values_reread_within_tolerance(v in -1e9f64..1e9, scale in -12i32..6) {
        let x = v * 10f64.powi(scale);
        let back: f64 = format_sig(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-6 * x.abs());
    }
}

#[test]
fn metrics_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_metrics(&[row(100, 2.0, Some(1.5))], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().next().unwrap(), MetricsRow::COLUMNS.join(","));
    assert_eq!(text.lines().nth(1).unwrap(), "100,50,0.125,,0.15,0.5,2,3.25,0.5,1.5,");

    let rows: Vec<MetricsRow> = (1..20).map(|i| row(i * 1000, 1.0 / i as f64, (i % 3 == 0).then_some(i as f64 * 0.7))).collect();
    write_metrics(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().all(|l| l.split(',').count() == MetricsRow::COLUMNS.len()));
    let back = read_metrics(&path).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        for (x, y) in a.values().iter().zip(b.values()) {
            match (x, y) {
                (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-5 * x.abs().max(1.0)),
                (None, None) => {}
                _ => panic!("presence changed: {a:?} vs {b:?}"),
            }
        }
    }
    assert!(parse_metrics("a,b\n1,2\n").is_err());
    assert!(parse_metrics(&format!("{}\n1,2,3\n", MetricsRow::COLUMNS.join(","))).is_err());
}

#[test]
fn confidence_half_width() {
    let (m, ci) = mean_ci95(&[1.0, 2.0, 4.0]).unwrap();
    assert!((m - 7.0 / 3.0).abs() < 1e-12);
    // s^2 = ((4/3)^2 + (1/3)^2 + (5/3)^2) / 2 = 7/3, so 1.96 * sqrt(7/3) / sqrt(3)
    assert!((ci.unwrap() - 1.96 * 7f64.sqrt() / 3.0).abs() < 1e-12);
    assert_eq!(mean_ci95(&[5.0]), Some((5.0, None)));
    assert_eq!(mean_ci95(&[]), None);
    assert_eq!(mean_ci95(&[2.0, 2.0, 2.0]), Some((2.0, Some(0.0))));
}

#[test]
fn aggregate_over_fabricated_runs() {
    let runs = vec![
        vec![row(10, 1.0, Some(3.0)), row(20, 2.0, None)],
        vec![row(10, 2.0, Some(5.0)), row(20, 2.0, None)],
        vec![row(10, 4.0, None)],
    ];
    let text = aggregate_csv(&runs);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(header.len(), 2 + 2 * MetricsRow::COLUMNS.len());
    let col = |line: &str, name: &str| -> String {
        let k = header.iter().position(|h| *h == name).unwrap();
        line.split(',').nth(k).unwrap().to_string()
    };
    assert_eq!(col(lines[1], "n"), "3");
    assert_eq!(col(lines[1], "eval_return_mean_mean"), format_sig(7.0 / 3.0));
    assert_eq!(col(lines[1], "eval_return_mean_ci95"), format_sig(1.96 * 7f64.sqrt() / 3.0));
    assert_eq!(col(lines[1], "q_goal_mean_mean"), "4");
    assert_eq!(col(lines[1], "q_exp_mean_mean"), "");
    assert_eq!(col(lines[1], "epsilon_ci95"), "0");
    assert_eq!(col(lines[2], "n"), "2");
    assert_eq!(col(lines[2], "eval_return_mean_ci95"), "0");
    assert_eq!(col(lines[2], "q_goal_mean_mean"), "");
}

#[test]
fn train_writes_a_reproducible_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (RunDir::new(tmp.path().join("a")), RunDir::new(tmp.path().join("b")));
    let config = tiny();
    let mut seen = Vec::new();
    let rows = run::train(&config, &a, &TrainOptions::default(), &mut |s, r: &MetricsRow| seen.push((s, r.env_steps))).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(seen.len(), 4);
    run::train(&config, &b, &TrainOptions::default(), &mut quiet()).unwrap();
    let bytes = |d: &RunDir| std::fs::read(d.metrics()).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(read_metrics(&a.metrics()).unwrap().len(), 4);

    let m = RunManifest::read(&a.manifest()).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    assert_eq!(m.config, std::fs::read_to_string(a.config()).unwrap());
    assert_eq!(m.seeds, vec![0]);
    assert!(m.finished_unix.unwrap() >= m.started_unix);
    assert_eq!(m.config_sha256.len(), 64);
    // the snapshot is a complete input: re-running it reproduces the metrics
    let c = tmp.path().join("c");
    let again = parse_config(&a.config()).unwrap();
    assert_eq!(again, config);
    run::train(&again, &RunDir::new(&c), &TrainOptions::default(), &mut quiet()).unwrap();
    assert_eq!(bytes(&a), bytes(&RunDir::new(&c)));

    let e = run::eval(&a, Some(3)).unwrap();
    assert!(e.mean_return >= 0.0 && e.mean_return <= 4.0);
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = tiny();
    config.train.total_env_steps = 480;
    let full = RunDir::new(tmp.path().join("full"));
    run::train(&config, &full, &TrainOptions::default(), &mut quiet()).unwrap();

    let mut half = config.clone();
    half.train.total_env_steps = 200;
    let part = RunDir::new(tmp.path().join("part"));
    run::train(&half, &part, &TrainOptions::default(), &mut quiet()).unwrap();
    let resumed = run::resume(&part, Some(480), &TrainOptions::default(), &mut quiet()).unwrap();
    assert_eq!(resumed.len(), 8);
    assert_eq!(std::fs::read(part.metrics()).unwrap(), std::fs::read(full.metrics()).unwrap());
    assert_eq!(parse_config(&part.config()).unwrap(), config);
    assert_eq!(RunManifest::read(&part.manifest()).unwrap().command, "resume");

    // intermediate checkpoints do not disturb the run
    let ck = RunDir::new(tmp.path().join("ck"));
    run::train(&config, &ck, &TrainOptions { checkpoint_interval: Some(100) }, &mut quiet()).unwrap();
    assert_eq!(std::fs::read(ck.metrics()).unwrap(), std::fs::read(full.metrics()).unwrap());
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path());
    run::train(&tiny(), &dir, &TrainOptions::default(), &mut quiet()).unwrap();
    let mut bytes = std::fs::read(dir.checkpoint()).unwrap();
    bytes[0] = b'X';
    std::fs::write(dir.checkpoint(), &bytes).unwrap();
    let err = run::eval(&dir, None).unwrap_err();
    assert_eq!(err.exit_code(), exit::CHECKPOINT, "{err}");
    assert_eq!(run::resume(&dir, None, &TrainOptions::default(), &mut quiet()).unwrap_err().exit_code(), exit::CHECKPOINT);
}

#[test]
fn sweep_aggregates_and_keeps_partial_results() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tiny();
    assert!(matches!(run::sweep(&config, &[7], tmp.path(), &TrainOptions::default(), &mut quiet()), Err(CliError::Config(_))));
    assert!(run::sweep(&config, &[1, 1], tmp.path(), &TrainOptions::default(), &mut quiet()).is_err());

    let out = tmp.path().join("ok");
    let runs = run::sweep(&config, &[3, 4], &out, &TrainOptions::default(), &mut quiet()).unwrap();
    assert_eq!(runs.len(), 2);
    let agg = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 5);
    for s in [3, 4] {
        assert_eq!(std::fs::read_to_string(seed_dir(&out, s).metrics()).unwrap(), metrics_csv(&runs[(s - 3) as usize]));
        assert_eq!(parse_config(&seed_dir(&out, s).config()).unwrap().train.seed, s);
    }
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!((m.seeds.clone(), m.status.clone()), (vec![3, 4], RunStatus::Completed));
    assert_eq!(m.metrics_files.len(), 2);

    // seed 6 cannot create its directory; seed 5 still completes
    let broken = tmp.path().join("broken");
    std::fs::create_dir_all(&broken).unwrap();
    std::fs::write(broken.join("seed-6"), "occupied").unwrap();
    let err = run::sweep(&config, &[5, 6], &broken, &TrainOptions::default(), &mut quiet()).unwrap_err();
    assert!(matches!(&err, CliError::Sweep { seeds, .. } if seeds == &vec![6]));
    assert_eq!(err.exit_code(), exit::IO);
    assert_eq!(read_metrics(&seed_dir(&broken, 5).metrics()).unwrap().len(), 4);
    let agg = std::fs::read_to_string(broken.join("aggregate.csv")).unwrap();
    assert!(agg.lines().nth(1).unwrap().starts_with("0,1,"));
    let m = RunManifest::read(&broken.join("manifest.json")).unwrap();
    assert!(matches!(m.status, RunStatus::Failed { ref seeds, .. } if seeds == &vec![6]));
}

#[test]
fn divergence_is_recorded_in_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = tiny();
    config.algo.name = "qmix+none".into();
    config.train.alpha = 1e30;
    config.train.optimizer = strange_marl::nn::OptimizerKind::RmsProp;
    let dir = RunDir::new(tmp.path());
    let err = run::train(&config, &dir, &TrainOptions::default(), &mut quiet()).unwrap_err();
    assert_eq!(err.exit_code(), exit::DIVERGED);
    let m = RunManifest::read(&dir.manifest()).unwrap();
    assert!(matches!(m.status, RunStatus::Failed { .. }));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strange-marl"))
}

#[test]
fn binary_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = tmp.path().join("run");
    let status = bin().args(["train", "--quiet", "--config"]).arg(&cfg).args(["--seed", "2", "--out"]).arg(&out).output().unwrap().status;
    assert!(status.success());
    assert_eq!(parse_config(&out.join("config.toml")).unwrap().train.seed, 2);

    let eval = bin().args(["eval", "--episodes", "2"]).env("STRANGE_MARL_OUT", &out).output().unwrap();
    assert!(eval.status.success());
    let json: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(json["mean_return"].as_f64().unwrap() >= 0.0);
    assert!(json["solve_rate"].as_f64().is_some());

    let resumed = bin().args(["resume", "--quiet", "--total-env-steps", "300", "--out"]).arg(&out).output().unwrap().status;
    assert!(resumed.success());
    assert!(read_metrics(&out.join("metrics.csv")).unwrap().last().unwrap().env_steps >= 300);

    let code = |args: &[&str]| bin().args(args).output().unwrap().status.code().unwrap();
    let o = out.to_str().unwrap();
    assert_eq!(code(&["train", "--config", "/nonexistent.toml", "--out", o]), exit::IO);
    assert_eq!(code(&["train", "--env", "smac:3m", "--out", o]), exit::CONFIG);
    assert_eq!(code(&["sweep", "--seeds", "1", "--out", o]), exit::CONFIG);
    assert_eq!(code(&["frobnicate"]), exit::CONFIG);
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[train]\ngamma = 1.5\n").unwrap();
    assert_eq!(code(&["train", "--config", bad.to_str().unwrap(), "--out", o]), exit::CONFIG);
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let config = parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.train_config().unwrap();
        config.env_config().unwrap();
        n += 1;
    }
    assert!(n >= 4);
}
