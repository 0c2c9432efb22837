use std::path::Path;

use nalgebra::DVector;
use rrpcp::harness::*;
use rrpcp::model::{read_binary, ScenarioConfig};
use rrpcp::tracker::Method;

fn small(trials: usize) -> RunConfig {
    let mut cfg = RunConfig::paper(300);
    cfg.scenario.t_total = 330;
    cfg.trials = trials;
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn timeless(frames: &[FrameMetrics]) -> Vec<FrameMetrics> {
    frames.iter().map(|f| FrameMetrics { wall_ms: 0.0, ..f.clone() }).collect()
}

#[test]
fn percentage_error_definition() {
    let s = DVector::from_vec(vec![3.0, 4.0, 0.0]);
    assert_eq!(percentage_error(&s, &s), Some(0.0));
    assert_eq!(percentage_error(&s, &DVector::zeros(3)), Some(1.0));
    let e = percentage_error(&s, &DVector::from_vec(vec![3.0, 0.0, 0.0])).unwrap();
    assert!((e - 0.8).abs() < 1e-15);
    assert_eq!(percentage_error(&DVector::zeros(3), &s), None);
}

#[test]
fn cli_run_writes_the_metrics_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(1);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("run.csv");
    let code = cli_main(["rrpcp", "run", "--config", &config, "--method", "nc", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,method,percentage_error,beta_sq,beta_resid_sq,eps_used,rank_est,status,support_size,wall_ms"
    );
    let parsed = read_run_csv(text.as_bytes()).unwrap();
    assert_eq!(parsed.len(), 30);
    let direct = run_single(&RunConfig { methods: vec![Method::NoiseCanceled], ..cfg.clone() }, cfg.scenario.seed).unwrap();
    assert_eq!(timeless(&parsed), timeless(&direct.frames));
}

#[test]
fn cli_generate_mc_and_noise_curve() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small(2));
    let data = dir.path().join("data.bin");
    assert_eq!(cli_main(["rrpcp", "generate", "--config", &config, "--out", data.to_str().unwrap()]), 0);
    let frames = read_binary(std::fs::File::open(&data).unwrap()).unwrap();
    assert_eq!((frames.m, frames.frames.len()), (128, 330));

    let mc = dir.path().join("mc.csv");
    assert_eq!(cli_main(["rrpcp", "mc", "--config", &config, "--method", "nc,basic", "--out", mc.to_str().unwrap()]), 0);
    let text = std::fs::read_to_string(&mc).unwrap();
    assert!(text.starts_with("t,method,n,mean_percentage_error,stderr_percentage_error"));
    assert_eq!(text.lines().count(), 1 + 2 * 30);

    let noise = dir.path().join("noise.csv");
    assert_eq!(cli_main(["rrpcp", "noise-curve", "--dt-max", "30", "--out", noise.to_str().unwrap()]), 0);
    let text = std::fs::read_to_string(&noise).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let row = reader.records().next().unwrap().unwrap();
    let vals: Vec<f64> = row.iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(vals[0], 1.0);
    assert!((vals[1] - 0.514).abs() < 1e-12 && (vals[2] - 0.19).abs() < 1e-12);
    assert_eq!(text.lines().count(), 31);
}

#[test]
fn cli_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(1);
    cfg.methods.clear();
    let config = write_config(dir.path(), &cfg);
    assert_ne!(cli_main(["rrpcp", "run", "--config", &config]), 0);
    assert_ne!(cli_main(["rrpcp", "run", "--config", &config, "--method", "svd"]), 0);
    assert_ne!(cli_main(["rrpcp", "noise-curve", "--dt-max", "0"]), 0);
    assert_ne!(cli_main(["rrpcp", "mc"]), 0);
}

#[test]
fn monte_carlo_is_a_plain_average() {
    let cfg = small(3);
    let mc = run_monte_carlo(&cfg).unwrap();
    for &method in &cfg.methods {
        for t in [301, 315, 330] {
            let errs: Vec<f64> = mc
                .trials
                .iter()
                .filter_map(|r| r.method_frames(method).find(|f| f.t == t).unwrap().percentage_error)
                .collect();
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            assert!((mc.mean_error(method, t).unwrap() - mean).abs() <= 1e-15 * mean.max(1.0));
        }
    }
    let one = run_monte_carlo(&small(1)).unwrap();
    let single = run_single(&cfg, trial_seed(cfg.master_seed, 0)).unwrap();
    for f in single.method_frames(Method::Basic) {
        assert_eq!(one.mean_error(Method::Basic, f.t), f.percentage_error);
    }
}

#[test]
fn more_trials_keep_the_first_ones() {
    let two = run_monte_carlo(&small(2)).unwrap();
    let four = run_monte_carlo(&small(4)).unwrap();
    for (a, b) in two.trials.iter().zip(&four.trials) {
        assert_eq!(a.seed, b.seed);
        assert_eq!(timeless(&a.frames), timeless(&b.frames));
    }
}

#[test]
fn empty_scene_yields_no_foreground() {
    let mut cfg = small(1);
    cfg.scenario = ScenarioConfig {
        k_objects: 0,
        events: cfg.scenario.events[..1].to_vec(),
        ..cfg.scenario
    };
    let run = run_single(&cfg, 5).unwrap();
    assert!(run.frames.iter().all(|f| f.support_size == 0 && f.percentage_error.is_none()));
}

#[test]
fn config_validation() {
    let mut cfg = small(1);
    cfg.trials = 0;
    assert!(cfg.validate().is_err());
    let text = serde_json::to_string(&small(1)).unwrap();
    assert!(text.contains("\"T_total\""));
    let back: RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, small(1));
}

#[test]
fn shipped_configs_match_the_builder() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (name, t0, trials) in [("paper.json", 5000, 50), ("paper-fast.json", 2000, 20)] {
        let cfg = RunConfig::load(&dir.join(name)).unwrap();
        assert_eq!(cfg, RunConfig { trials, ..RunConfig::paper(t0) }, "{name}");
    }
}
