//! The `grounder` binary: subcommands, overrides and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn grounder(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grounder"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
seed = 3
dataset_dir = "data"
output_dir = "run"
train_size = 24
val_size = 8
test_size = 12
num_objects = 4
distractor_count = 1
visual_dim = 8
token_dim = 5
hidden_dim = 4
category_dim = 3
color_dim = 3
spatial_dim = 3
node_dim = 5
edge_dim = 4
chunk_match_dim = 3
match_dim = 4
egr_hidden = 4
epochs = 1
batch_size = 8
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn full_pipeline_succeeds() {
    let dir = workspace();
    let d = dir.path();
    let c = ["--config", "run.toml"];
    let o = grounder(d, &[&["generate"][..], &c].concat());
    assert!(o.status.success(), "{o:?}");
    assert!(d.join("data/test.jsonl").exists());

    let o = grounder(d, &[&["train", "--trace"][..], &c].concat());
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(d.join("run/checkpoint.bin").exists());
    assert!(d.join("run/trace-test-nodes.csv").exists());

    let o = grounder(d, &[&["eval", "--split", "val"][..], &c].concat());
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("acc@0.5"));

    let o = grounder(
        d,
        &[
            &["trace", "--index", "2", "--expression", "red box"][..],
            &c,
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("expression: red box"));
    assert!(text.contains("selected_node,"));

    let o = grounder(d, &[&["ablate"][..], &c].concat());
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("DGC"));
}

#[test]
fn overrides_change_the_config_hash() {
    let dir = workspace();
    let d = dir.path();
    let hash = |extra: &[&str]| {
        let o = grounder(
            d,
            &[&["generate", "--config", "run.toml"][..], extra].concat(),
        );
        assert!(o.status.success(), "{o:?}");
        stdout(&o).lines().next().unwrap().to_string()
    };
    let base = hash(&[]);
    assert_eq!(hash(&[]), base);
    for extra in [
        &["--seed", "4"][..],
        &["--order", "forward"],
        &["--no-dgc"],
        &["--no-egr"],
        &["--graphs", "a"],
    ] {
        assert_ne!(hash(extra), base, "{extra:?}");
    }
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = workspace();
    let d = dir.path();
    for args in [
        &["train"][..],
        &["bogus"],
        &["train", "--config", "missing.toml"],
        &["train", "--config", "run.toml"],
        &["eval", "--config", "run.toml"],
        &["generate", "--config", "run.toml", "--order", "sideways"],
        &["generate", "--config", "run.toml", "--graphs", "x"],
        &["parse", "--dump", "zebra"],
    ] {
        let o = grounder(d, args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {o:?}");
    }
    std::fs::write(d.join("bad.toml"), "epochs = \"many\"\n").unwrap();
    let o = grounder(d, &["generate", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_with_3() {
    let dir = workspace();
    let d = dir.path();
    // A learning rate this large drives the parameters to infinity.
    std::fs::write(
        d.join("hot.toml"),
        format!("{CONFIG}learning_rate = 1e300\n").replace("epochs = 1", "epochs = 3"),
    )
    .unwrap();
    let c = ["--config", "hot.toml"];
    assert!(grounder(d, &[&["generate"][..], &c].concat())
        .status
        .success());
    let o = grounder(d, &[&["train"][..], &c].concat());
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("numeric"));
}

#[test]
fn parse_dump_prints_the_graph() {
    let dir = workspace();
    let o = grounder(dir.path(), &["parse", "--dump", "red box left of blue box"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("chunks: 2"));
    assert!(text.contains("[0] --left of--> [1]"));
}
