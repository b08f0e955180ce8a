use std::path::PathBuf;
use std::process::{Command, Output};

fn scue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scue")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scue-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn run_prints_a_csv_row_deterministically() {
    let a = scue(&["run", "--gen", "btree:500", "--seed", "3"]);
    let b = scue(&["run", "--gen", "btree:500", "--seed", "3"]);
    assert_eq!(a.status.code(), Some(0));
    let text = stdout(&a);
    assert!(text.starts_with("schema_version,scheme,"));
    assert_eq!(text.lines().count(), 2);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn compare_normalizes_to_scue() {
    let o = scue(&["compare", "--gen", "hash:500"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "norm_write_latency").unwrap();
    let scue_row = text.lines().find(|l| l.split(',').nth(1) == Some("scue")).unwrap();
    assert_eq!(scue_row.split(',').nth(col), Some("1.0"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn json_output_echoes_the_config() {
    let path = scratch("run.json");
    let arg = format!("json:{}", path.display());
    let o = scue(&["run", "--gen", "queue:100", "--hash-cycles", "160", "--out", &arg]);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(doc["config"]["hash_cycles"], 160);
    assert_eq!(doc["reports"][0]["ops"], 100);
}

#[test]
fn trace_files_and_config_files_are_read() {
    let trace = scratch("t.trace");
    std::fs::write(&trace, "# two ops\nW 0x40\n\nR 0x40\n").unwrap();
    let config = scratch("c.toml");
    std::fs::write(&config, "scheme = \"eager\"\nmem_size = 16777216\n").unwrap();
    let o = scue(&["run", "--trace", trace.to_str().unwrap(), "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().nth(1).unwrap().contains(",eager,"));
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(scue(&["run"]).status.code(), Some(1));
    assert_eq!(scue(&["run", "--gen", "nope:3"]).status.code(), Some(1));
    assert_eq!(scue(&["frobnicate"]).status.code(), Some(1));
    let config = scratch("bad.toml");
    std::fs::write(&config, "no_such_key = 1\n").unwrap();
    assert_eq!(scue(&["run", "--gen", "array:10", "--config", config.to_str().unwrap()]).status.code(), Some(1));
    let trace = scratch("bad.trace");
    std::fs::write(&trace, "W 0x41\n").unwrap();
    let o = scue(&["run", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn help_exits_0() {
    assert_eq!(scue(&["--help"]).status.code(), Some(0));
}

#[test]
fn crash_and_tamper_exit_codes() {
    let clean = scue(&["run", "--gen", "btree:300", "--crash-at", "200"]);
    assert_eq!(clean.status.code(), Some(0));
    for tamper in ["roll-forward", "replay", "roll-back@199"] {
        let o = scue(&["run", "--gen", "btree:300", "--crash-at", "200", "--tamper", tamper]);
        assert_eq!(o.status.code(), Some(2), "{tamper}");
    }
}

#[test]
fn saved_images_recover_with_the_same_seed() {
    let image = scratch("crash.img");
    let o = scue(&["run", "--gen", "rbtree:300", "--seed", "9", "--crash-at", "120", "--image", image.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(scue(&["recover", "--image", image.to_str().unwrap(), "--seed", "9"]).status.code(), Some(0));
    // wrong key: every MAC fails
    assert_eq!(scue(&["recover", "--image", image.to_str().unwrap(), "--seed", "10"]).status.code(), Some(2));
}

#[test]
fn sweeps_and_fuzzing() {
    let empty = scratch("empty.trace");
    std::fs::write(&empty, "# nothing\n").unwrap();
    let o = scue(&["crash-sweep", "--trace", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("1 crash points, 1 clean"));
    assert_eq!(scue(&["crash-sweep", "--gen", "queue:200", "--scheme", "eager"]).status.code(), Some(0));
    assert_eq!(scue(&["crash-sweep", "--gen", "queue:200", "--scheme", "lazy"]).status.code(), Some(2));
    let o = scue(&["attack-fuzz", "--gen", "hash:200", "--cases", "50", "--modes", "replay"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("50 detected, 0 missed"));
}
