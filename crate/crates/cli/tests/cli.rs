use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const QUESTIONS: &str = "\
# desk spot battery
What is on the desk?
Is there a person in the image?
Is the door open?

How many cups are on the desk?
";

const SCENARIO: &str = r#"{
  "default_answer": "unknown",
  "answers": {
    "ref.jpg": {
      "What is on the desk?": "a laptop",
      "Is there a person in the image?": "no",
      "Is the door open?": "yes",
      "How many cups are on the desk?": "one"
    },
    "same.jpg": {
      "What is on the desk?": "a laptop",
      "Is there a person in the image?": "no",
      "Is the door open?": "yes",
      "How many cups are on the desk?": "one"
    },
    "person.jpg": {
      "What is on the desk?": "a laptop and a phone",
      "Is there a person in the image?": "yes",
      "Is the door open?": "yes",
      "How many cups are on the desk?": "two"
    }
  }
}"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ws = Self { dir };
        ws.write("questions.txt", QUESTIONS);
        ws.write("scenario.json", SCENARIO);
        for img in ["ref.jpg", "same.jpg", "person.jpg"] {
            ws.write(img, "not really a jpeg");
        }
        ws.write(
            "config.toml",
            "store_dir = \"refs\"\nquestions = \"questions.txt\"\nthreshold = 0.2\n\n[thresholds]\nlab = 0.9\n\n[embedder]\ndimension = 64\nseed = 3\n\n[answerer]\nscenario = \"scenario.json\"\n",
        );
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) {
        fs::write(self.path(name), text).unwrap();
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_env(args, &[])
    }

    fn run_env(&self, args: &[&str], env: &[(&str, &Path)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_scenediff"));
        cmd.current_dir(self.dir.path())
            .args(args)
            .env_remove("SCENEDIFF_STORE");
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not one JSON document ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn init(ws: &Workspace, spot: &str) -> Output {
    let out = ws.run(&[
        "init-reference",
        "--spot",
        spot,
        "--image",
        "ref.jpg",
        "--config",
        "config.toml",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    out
}

#[test]
fn identical_scene_scores_zero() {
    let ws = Workspace::new();
    init(&ws, "desk");
    assert!(ws.path("refs/desk.json").exists());
    let out = ws.run(&[
        "score",
        "--spot",
        "desk",
        "--image",
        "same.jpg",
        "--config",
        "config.toml",
        "--json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc = stdout_json(&out);
    assert_eq!(doc["sd"], 0.0);
    assert_eq!(doc["verdict"]["changed"], false);
    assert_eq!(doc["verdict"]["threshold"], 0.2);
    assert_eq!(doc["per_question"].as_array().unwrap().len(), 4);
}

#[test]
fn changed_scene_is_flagged_with_contributors() {
    let ws = Workspace::new();
    init(&ws, "desk");
    let out = ws.run(&[
        "score",
        "--spot",
        "desk",
        "--image",
        "person.jpg",
        "--config",
        "config.toml",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("CHANGED"), "{text}");
    assert!(text.contains("Is there a person in the image?"), "{text}");
}

#[test]
fn per_spot_and_flag_thresholds_take_precedence() {
    let ws = Workspace::new();
    init(&ws, "lab");
    let score = |extra: &[&str]| {
        let mut args = vec![
            "score",
            "--spot",
            "lab",
            "--image",
            "person.jpg",
            "--config",
            "config.toml",
            "--json",
        ];
        args.extend_from_slice(extra);
        stdout_json(&ws.run(&args))
    };
    let doc = score(&[]);
    assert_eq!(doc["verdict"]["threshold"], 0.9);
    assert_eq!(doc["verdict"]["changed"], false);
    let doc = score(&["--threshold", "0.05"]);
    assert_eq!(doc["verdict"]["threshold"], 0.05);
    assert_eq!(doc["verdict"]["changed"], true);
}

#[test]
fn weighting_flag_overrides_config() {
    let ws = Workspace::new();
    init(&ws, "desk");
    let out = ws.run(&[
        "score",
        "--spot",
        "desk",
        "--image",
        "person.jpg",
        "--config",
        "config.toml",
        "--json",
        "--weighting",
        "uniform",
    ]);
    let doc = stdout_json(&out);
    assert_eq!(doc["weighting"], "uniform");
    for row in doc["per_question"].as_array().unwrap() {
        assert_eq!(row["w"], 0.25);
    }
}

#[test]
fn unregistered_spot_exits_one_and_names_it() {
    let ws = Workspace::new();
    let out = ws.run(&[
        "score",
        "--spot",
        "kitchen",
        "--image",
        "same.jpg",
        "--config",
        "config.toml",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("kitchen"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn errors_under_json_still_emit_one_document() {
    let ws = Workspace::new();
    let out = ws.run(&[
        "score",
        "--spot",
        "kitchen",
        "--image",
        "same.jpg",
        "--config",
        "config.toml",
        "--json",
    ]);
    assert_eq!(code(&out), 1);
    let doc = stdout_json(&out);
    assert!(doc["error"].as_str().unwrap().contains("kitchen"));
}

#[test]
fn usage_errors_exit_two() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.run(&["score", "--image", "same.jpg"])), 2);
    assert_eq!(code(&ws.run(&["frobnicate"])), 2);
    assert_eq!(
        code(&ws.run(&[
            "score",
            "--spot",
            "d",
            "--image",
            "x",
            "--weighting",
            "loud"
        ])),
        2
    );
    assert_eq!(
        code(&ws.run(&["qoq", "--questions", "questions.txt", "--subset", "a,b"])),
        2
    );
    assert_eq!(code(&ws.run(&["--help"])), 0);
}

#[test]
fn changed_battery_is_refused() {
    let ws = Workspace::new();
    init(&ws, "desk");
    ws.write("questions.txt", "What is on the desk?\nIs the door open?\n");
    let out = ws.run(&[
        "score",
        "--spot",
        "desk",
        "--image",
        "same.jpg",
        "--config",
        "config.toml",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("battery"), "{}", stderr(&out));
}

#[test]
fn store_env_var_overrides_config() {
    let ws = Workspace::new();
    let elsewhere = ws.path("elsewhere");
    let out = ws.run_env(
        &[
            "init-reference",
            "--spot",
            "desk",
            "--image",
            "ref.jpg",
            "--config",
            "config.toml",
        ],
        &[("SCENEDIFF_STORE", &elsewhere)],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(elsewhere.join("desk.json").exists());
    assert!(!ws.path("refs/desk.json").exists());
}

#[test]
fn reregistering_replaces_the_reference() {
    let ws = Workspace::new();
    init(&ws, "desk");
    let out = ws.run(&[
        "init-reference",
        "--spot",
        "desk",
        "--image",
        "ref.jpg",
        "--config",
        "config.toml",
        "--json",
    ]);
    let doc = stdout_json(&out);
    assert_eq!(doc["replaced"], true);
    assert_eq!(doc["questions"], 4);
}

#[test]
fn mock_backend_without_scenario_is_an_error() {
    let ws = Workspace::new();
    let out = ws.run(&[
        "init-reference",
        "--spot",
        "desk",
        "--image",
        "ref.jpg",
        "--questions",
        "questions.txt",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("scenario"), "{}", stderr(&out));
}

#[test]
fn http_backend_needs_endpoints() {
    let ws = Workspace::new();
    let out = ws.run(&["qoq", "--questions", "questions.txt", "--backend", "http"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("endpoint"), "{}", stderr(&out));
}

#[test]
fn qoq_of_subsets() {
    let ws = Workspace::new();
    let full = stdout_json(&ws.run(&["qoq", "--questions", "questions.txt", "--json"]));
    let sub = stdout_json(&ws.run(&[
        "qoq",
        "--questions",
        "questions.txt",
        "--subset",
        "0,2",
        "--json",
    ]));
    assert_eq!(full["questions"], 4);
    assert_eq!(sub["questions"], 2);
    assert!(sub["qoq"].as_f64().unwrap() < full["qoq"].as_f64().unwrap());
    let bad = ws.run(&["qoq", "--questions", "questions.txt", "--subset", "0,9"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn selected_battery_is_a_usable_battery_file() {
    let ws = Workspace::new();
    let out = ws.run(&["select-battery", "--pool", "questions.txt", "--k", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    fs::write(ws.path("picked.txt"), &out.stdout).unwrap();
    let picked = stdout_json(&ws.run(&["qoq", "--questions", "picked.txt", "--json"]));
    let doc = stdout_json(&ws.run(&[
        "select-battery",
        "--pool",
        "questions.txt",
        "--k",
        "3",
        "--json",
    ]));
    assert_eq!(picked["questions"], 3);
    assert_eq!(picked["qoq"], doc["qoq"]);
    assert_eq!(picked["battery_hash"], doc["battery_hash"]);
    assert_eq!(
        code(&ws.run(&["select-battery", "--pool", "questions.txt", "--k", "5"])),
        1
    );
}

fn pool_file(ws: &Workspace) {
    let mut text = String::from("# question\treference\tcurrent\n");
    for i in 0..25 {
        let changed = if i % 3 == 0 {
            format!("changed {i}")
        } else {
            format!("answer {i}")
        };
        text.push_str(&format!(
            "Pool question number {}?\tanswer {i}\t{changed}\n",
            i % 20
        ));
    }
    ws.write("pool.tsv", &text);
}

#[test]
fn analyze_subsets_is_deterministic() {
    let ws = Workspace::new();
    pool_file(&ws);
    let run = |out_dir: &str| {
        let out = ws.run(&[
            "analyze-subsets",
            "--pool",
            "pool.tsv",
            "--k",
            "10",
            "--n",
            "10000",
            "--seed",
            "7",
            "--out-dir",
            out_dir,
            "--json",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        stdout_json(&out)
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a["bins"], b["bins"]);
    for name in ["subsets.csv", "bins.csv"] {
        let x = fs::read(ws.path("a").join(name)).unwrap();
        let y = fs::read(ws.path("b").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
    let subsets = fs::read_to_string(ws.path("a/subsets.csv")).unwrap();
    assert_eq!(subsets.lines().count(), 10_001);
    let total: u64 = a["bins"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["count"].as_u64().unwrap())
        .sum();
    assert_eq!(total, 10_000);
}

#[test]
fn analyze_subsets_from_a_stored_reference() {
    let ws = Workspace::new();
    init(&ws, "desk");
    let out = ws.run(&[
        "analyze-subsets",
        "--pool",
        "questions.txt",
        "--k",
        "2",
        "--n",
        "30",
        "--seed",
        "1",
        "--out-dir",
        "out",
        "--spot",
        "desk",
        "--image",
        "person.jpg",
        "--config",
        "config.toml",
        "--bins",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bins = fs::read_to_string(ws.path("out/bins.csv")).unwrap();
    assert!(bins.starts_with("qoq_lo,qoq_hi,count,var_uniform,var_relevance"));
}

#[test]
fn analyze_subsets_without_answers_explains_itself() {
    let ws = Workspace::new();
    let out = ws.run(&[
        "analyze-subsets",
        "--pool",
        "questions.txt",
        "--k",
        "2",
        "--n",
        "5",
        "--out-dir",
        "o",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--spot"), "{}", stderr(&out));
}
