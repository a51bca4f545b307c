use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/worked")
        .join(name)
}

fn readmit(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_readmit"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn worked_config(dir: &Path, medical: &Path) -> PathBuf {
    write_config(
        dir,
        &format!(
            "[inputs]\nmedical = {:?}\npharmacy = {:?}\ndemographics = {:?}\n",
            medical,
            fixture("pharmacy_claims.csv"),
            fixture("demographics.csv")
        ),
    )
}

const SMALL_RUN: &str = r#"
seed = 5
[generator]
n_users = 120
readmission_fraction = 0.15
[[generator.signals]]
feature = { kind = "previous_admissions" }
effect = "increase"
strength = 1.1
[train]
folds = 3
[train.forest_grid]
ntree = [20, 10]
mtry = [10]
nodesize = [3]
maxnodes = [50]
[train.svm_grid]
c = [0.1, 1.0]
epochs = 5
"#;

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn episodes_on_worked_claims() {
    let dir = tempfile::tempdir().unwrap();
    let config = worked_config(dir.path(), &fixture("medical_claims.csv"));
    let out = dir.path().join("out");
    let run = readmit(&["episodes"], &config, &out);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let text = std::fs::read_to_string(out.join("episodes/admissions.csv")).unwrap();
    assert_eq!(
        text,
        "user_id,admission_id,start,end,is_ed,readmitted_within_30d,removed_readmission_count\n\
         User1,A1,2017-05-01,2017-05-08,1,1,1\n\
         User1,A2,2017-07-01,2017-07-03,0,0,0\n\
         User2,A3,2018-01-03,2018-01-15,0,0,0\n"
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("episodes/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["details"]["readmissions"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let before = files(&out);
    assert!(readmit(&["episodes"], &config, &out).status.success());
    assert_eq!(before, files(&out));
}

#[test]
fn features_need_the_episode_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = worked_config(dir.path(), &fixture("medical_claims.csv"));
    let run = readmit(&["features"], &config, &dir.path().join("out"));
    assert_eq!(run.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(
        stderr.contains("stage=features kind=missing_input"),
        "{stderr}"
    );
}

#[test]
fn malformed_rows_fail_only_in_strict_mode() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = std::fs::read_to_string(fixture("medical_claims.csv")).unwrap();
    text.push_str("User3,C8,not-a-date,2018-02-01,78903,00000,99231\n");
    let medical = dir.path().join("medical.csv");
    std::fs::write(&medical, text).unwrap();
    let config = worked_config(dir.path(), &medical);
    let out = dir.path().join("out");

    let strict = readmit(&["episodes", "--strict"], &config, &out);
    assert_eq!(strict.status.code(), Some(4));
    let lenient = readmit(&["episodes"], &config, &out);
    assert!(lenient.status.success());
    let stderr = String::from_utf8_lossy(&lenient.stderr);
    assert!(
        stderr.contains("readmit: warning stage=episodes") && stderr.contains("line=9"),
        "{stderr}"
    );
}

#[test]
fn empty_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[train.svm_grid]\nc = []\n");
    let run = readmit(&["train"], &config, &dir.path().join("out"));
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("kind=usage"));
}

#[test]
fn bad_flags_and_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "sede = 1\n");
    assert_eq!(
        readmit(&["episodes"], &config, dir.path()).status.code(),
        Some(2)
    );
    let run = Command::new(env!("CARGO_BIN_EXE_readmit"))
        .arg("bogus")
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn infeasible_grid_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_RUN.replace("mtry = [10]", "mtry = [100000]");
    let config = write_config(dir.path(), &body);
    let out = dir.path().join("out");
    for stage in ["generate", "episodes", "features"] {
        assert!(readmit(&[stage], &config, &out).status.success());
    }
    let run = readmit(&["train"], &config, &out);
    assert_eq!(
        run.status.code(),
        Some(5),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
}

#[test]
fn staged_run_matches_all() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let all = dir.path().join("all");
    let staged = dir.path().join("staged");
    let run = readmit(&["all", "--jobs", "1"], &config, &all);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    for stage in ["generate", "episodes", "features", "train", "evaluate"] {
        let run = readmit(&[stage], &config, &staged);
        assert!(
            run.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&run.stderr)
        );
    }
    let (a, b) = (files(&all), files(&staged));
    assert!(a.iter().any(|(p, _)| p == Path::new("report/report.csv")));
    assert!(a
        .iter()
        .any(|(p, _)| p == Path::new("report/roc_svm_best_test.csv")));
    assert_eq!(a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs", pa.display());
    }
    let report = std::fs::read_to_string(all.join("report/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 7);
}

#[test]
fn threshold_flag_changes_only_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let out = dir.path().join("out");
    assert!(readmit(&["all"], &config, &out).status.success());
    let before = std::fs::read_to_string(out.join("report/report.csv")).unwrap();
    assert!(readmit(&["evaluate", "--threshold", "0.05"], &config, &out)
        .status
        .success());
    let after = std::fs::read_to_string(out.join("report/report.csv")).unwrap();
    assert_ne!(before, after);
    let auc = |t: &str| {
        t.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .take(3)
            .collect::<Vec<_>>()
            .join(",")
    };
    assert_eq!(auc(&before), auc(&after));
}
