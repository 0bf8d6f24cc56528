mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use upsilon_core::agents::AgentSpec;
use upsilon_core::environments::{make_copy_env, EnvSpec};
use upsilon_core::external::ExternalEndpoint;
use upsilon_core::report::REPORT_SCHEMA;
use upsilon_core::valuation::{estimate_value, ValuationMode, ValuationParams};
use upsilon_core::SpaceConfig;

fn external(policy: &str, timeout_ms: u64) -> AgentSpec {
    let command = vec![STDIO_AGENT.to_string(), "--policy".into(), policy.into(), "--seed".into(), "9".into()];
    AgentSpec::External(Arc::new(ExternalEndpoint::new(policy, command, Duration::from_millis(timeout_ms))))
}

fn copy() -> EnvSpec {
    EnvSpec::Native(make_copy_env(SpaceConfig::default()).unwrap())
}

fn discounted(episodes: u64, horizon: u64) -> ValuationParams {
    ValuationParams { episodes, horizon, ..ValuationParams::new(ValuationMode::Discounted { gamma: 0.9 }, 4) }
}

#[test]
fn uniform_process_matches_builtin_random() {
    let params = discounted(300, 100);
    let ext = estimate_value(&external("uniform", 5000), &copy(), &params, 0).unwrap().estimate;
    let rnd = estimate_value(&AgentSpec::Random, &copy(), &params, 0).unwrap().estimate;
    assert_eq!(ext.episodes_failed, 0);
    assert_eq!(ext.timeouts, 0);
    let tolerance = ext.ci_half_width + rnd.ci_half_width;
    assert!((ext.mean - rnd.mean).abs() <= tolerance, "{} vs {} (tolerance {tolerance})", ext.mean, rnd.mean);
    assert!((ext.mean - 0.45).abs() < 0.05);
}

#[test]
fn first_action_process_is_deterministic() {
    let params = discounted(5, 100);
    let e = estimate_value(&external("first", 5000), &copy(), &params, 0).unwrap().estimate;
    assert_eq!(e.mean, 0.0);
    assert_eq!(e.ci_half_width, 0.0);
}

#[test]
fn silent_process_times_out_every_cycle() {
    let params = discounted(2, 10);
    let e = estimate_value(&external("silent", 20), &copy(), &params, 0).unwrap().estimate;
    assert_eq!(e.episodes_failed, 0);
    assert_eq!(e.timeouts, 20);
}

#[test]
fn malformed_replies_fail_rollouts() {
    let params = discounted(3, 10);
    let e = estimate_value(&external("malformed", 5000), &copy(), &params, 0).unwrap().estimate;
    assert_eq!(e.episodes_failed, 3);
    assert_eq!(e.episodes_used, 0);
}

#[test]
fn missing_executable_fails_rollouts() {
    let command = vec!["/nonexistent/agent".to_string()];
    let spec = AgentSpec::External(Arc::new(ExternalEndpoint::new("ghost", command, Duration::from_millis(100))));
    let e = estimate_value(&spec, &copy(), &discounted(2, 5), 0).unwrap().estimate;
    assert_eq!(e.episodes_failed, 2);
}

#[test]
fn cli_logs_one_warning_per_timed_out_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "seed = 2\nagents = []\nexternal = [\"mute={STDIO_AGENT} --policy silent\"]\nexternal_timeout_ms = 20\n\
         environment = \"copy\"\nmode = \"discounted\"\ngamma = 0.9\nhorizon = 6\nepisodes = 2\n"
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let o = upsilon(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let warnings = stderr(&o).lines().filter(|l| l.contains("timed out")).count();
    assert_eq!(warnings, 12);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["agents"][0]["timeouts"], 12);
    assert_eq!(report["rows"][0]["timeouts"], 12);
}

#[test]
fn cli_counts_failed_rollouts() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "seed = 2\nagents = [\"random\"]\nexternal = [\"broken={STDIO_AGENT} --policy malformed\"]\n\
         max_length_bits = 11\nepisodes = 3\nhorizon = 20\n"
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = dir.path().join("out");
    let o = upsilon(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("report.json"));
    assert_eq!(schema_errors(REPORT_SCHEMA, &report), Vec::<String>::new());
    let broken = &report["agents"][1];
    assert_eq!(broken["agent"], "broken");
    let envs = report["environment"]["environment_count"].as_u64().unwrap();
    // the empty program halts before asking for an action, so only the others fail
    assert!(broken["episodes_failed"].as_u64().unwrap() >= 3 * (envs - 1));
    assert_eq!(broken["upsilon"], 0.0);
    for row in report["rows"].as_array().unwrap().iter().filter(|r| r["agent"] == "broken") {
        assert_eq!(row["episodes"].as_u64().unwrap() + row["episodes_failed"].as_u64().unwrap(), 3);
    }
}
