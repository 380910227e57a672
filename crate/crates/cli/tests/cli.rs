use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crt_core::design::write_dataset;
use crt_core::simulation::{generate, generate_regularity, ForcedChoiceDgp, RegularityDgp};
use crt_core::ConjointDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn crt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crt")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn binary_config(names: &[String]) -> String {
    names.iter().map(|n| format!("[factor.{n}]\nlevels = [\"lo\", \"hi\"]\n\n")).collect()
}

fn write_files(dir: &Path, ds: &ConjointDataset) -> (PathBuf, PathBuf) {
    let data = dir.join("data.csv");
    write_dataset(ds, std::fs::File::create(&data).unwrap()).unwrap();
    let names: Vec<String> = ds.schema.profile.iter().map(|f| f.name.clone()).collect();
    let config = dir.join("experiment.toml");
    std::fs::write(&config, binary_config(&names)).unwrap();
    (data, config)
}

fn single_task(dir: &Path) -> (String, String) {
    let d = generate(&ForcedChoiceDgp::default().with_interactions(0.2, 12).with_n(250), 3, 0).unwrap();
    let (a, b) = write_files(dir, &d.data);
    (a.display().to_string(), b.display().to_string())
}

fn multi_task(dir: &Path, j: usize) -> (String, String) {
    let d = generate_regularity(&RegularityDgp::default().with_size(120, j), 5, 0).unwrap();
    let (a, b) = write_files(dir, &d);
    (a.display().to_string(), b.display().to_string())
}

fn last_line(o: &Output) -> String {
    stdout(o).lines().last().unwrap_or_default().to_string()
}

/// JSON text without the wall-clock line.
fn without_wall_time(text: &str) -> String {
    text.lines().filter(|l| !l.contains("\"wall_time\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn test_command_writes_json_and_a_parsable_last_line() {
    let dir = TempDir::new().unwrap();
    let (data, config) = single_task(dir.path());
    let out = dir.path().join("r.json");
    let o = crt(&[
        "test", "--data", &data, "--config", &config, "--statistic", "hiernet", "--target", "X", "--B", "19", "--seed", "7",
        "--lambda", "cv-null", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last = last_line(&o);
    let (a, b) = last.strip_prefix("p_value=").unwrap().split_once('/').unwrap();
    let (a, b): (u64, u64) = (a.parse().unwrap(), b.parse().unwrap());
    assert_eq!(b, 20);
    assert!((1..=20).contains(&a));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["p_value"], format!("{a}/{b}"));
    assert_eq!(json["resampled_statistics"].as_array().unwrap().len(), 19);
    assert_eq!(json["master_seed"], 7);
    assert!(stdout(&o).contains("runtime="));
}

#[test]
fn same_seed_gives_identical_output_for_any_worker_count() {
    let dir = TempDir::new().unwrap();
    let (data, config) = single_task(dir.path());
    let multi = TempDir::new().unwrap();
    let (mdata, mconfig) = multi_task(multi.path(), 4);
    let runs: Vec<Vec<&str>> = vec![
        vec!["test", "--data", &data, "--config", &config, "--target", "X", "--B", "15", "--seed", "3", "--lambda", "cv-null"],
        vec!["test", "--data", &data, "--config", &config, "--statistic", "dicrt", "--target", "X", "--B", "15", "--seed", "3"],
        vec!["regularity", "carryover", "--data", &mdata, "--config", &mconfig, "--B", "15", "--seed", "3", "--lambda", "cv-null"],
    ];
    for args in runs {
        let mut outputs = Vec::new();
        for w in ["1", "3"] {
            let out = dir.path().join(format!("w{w}.json"));
            let mut full = args.clone();
            full.extend(["--workers", w, "--out", out.to_str().unwrap()]);
            let o = crt(&full);
            assert!(o.status.success(), "{args:?}: {}", stderr(&o));
            let text = std::fs::read_to_string(&out).unwrap();
            outputs.push((without_wall_time(&text), last_line(&o)));
        }
        assert_eq!(outputs[0], outputs[1], "{args:?}");
    }

    let mut csvs = Vec::new();
    for w in ["1", "3"] {
        let out = dir.path().join(format!("sim{w}"));
        let o = crt(&[
            "simulate", "power", "--reps", "3", "--B", "9", "--n", "200", "--sizes", "0.1", "--panel", "size", "--seed", "5",
            "--workers", w, "--out-dir", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        csvs.push((
            std::fs::read(out.join("power_records.csv")).unwrap(),
            std::fs::read(out.join("power_summary.csv")).unwrap(),
        ));
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn regularity_task_count_contracts() {
    let one = TempDir::new().unwrap();
    let (data, config) = multi_task(one.path(), 1);
    let o = crt(&["regularity", "fatigue", "--data", &data, "--config", &config, "--B", "9", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fatigue test requires J ≥ 2"), "{}", stderr(&o));

    let three = TempDir::new().unwrap();
    let (data, config) = multi_task(three.path(), 3);
    let o = crt(&["regularity", "carryover", "--data", &data, "--config", &config, "--B", "9", "--seed", "1", "--lambda", "cv-null"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("dropping final task"), "{}", stderr(&o));
    assert!(stdout(&o).contains("dropping final task"));
    assert!(last_line(&o).starts_with("p_value="));

    let o = crt(&["regularity", "order", "--data", &data, "--config", &config, "--B", "9", "--lambda", "cv-null"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("seed="), "omitted seed is printed");
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let (data, config) = single_task(dir.path());
    let o = crt(&["simulate", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown study"));

    let o = crt(&["test", "--data", &data, "--config", &config, "--target", "W", "--B", "9", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("W"));

    let o = crt(&["test", "--data", &data, "--config", &config, "--target", "X", "--B", "0", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[factor.X]\nlevel = [\"lo\", \"hi\"]\n").unwrap();
    let o = crt(&["test", "--data", &data, "--config", bad.to_str().unwrap(), "--target", "X", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.toml"), "{}", stderr(&o));

    let o = crt(&["test", "--data", "missing.csv", "--config", &config, "--target", "X"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn amce_and_screen_commands() {
    let dir = TempDir::new().unwrap();
    let (data, config) = single_task(dir.path());
    let o = crt(&["amce", "--data", &data, "--config", &config, "--target", "X", "--cluster", "task"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let p: f64 = last_line(&o).strip_prefix("p_value=").unwrap().parse().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    assert!(stdout(&o).contains("\"estimates\""));

    let table = dir.path().join("screen.csv");
    let o = crt(&[
        "screen", "--data", &data, "--config", &config, "--target", "X", "--variables", "Z1,Z2,Z3", "--B", "9", "--seed", "2",
        "--lambda", "cv-null", "--out", table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("variable,observed_statistic,p_value,"));
    assert_eq!(text.lines().count(), 4);
    assert!(last_line(&o).starts_with("p_value="));
}

#[test]
fn inflation_study_writes_one_row_per_factor_count() {
    let dir = TempDir::new().unwrap();
    let o = crt(&["simulate", "inflation", "--reps", "3", "--seed", "1", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("inflation_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 7);
    assert!(dir.path().join("inflation_histogram.csv").exists());
}

const IMMIGRATION: &str = r#"
[factor.reason]
levels = ["work", "family", "persecution"]

[factor.origin]
levels = ["Mexico", "Germany", "France", "Iraq", "Sudan", "Somalia"]

[factor.gender]
levels = ["female", "male"]

[[restriction]]
if_factor = "reason"
if_levels = ["persecution"]
then_factor = "origin"
allowed_levels = ["Iraq", "Sudan", "Somalia"]
"#;

const EUROPE: &str = r#"
sources = ["origin"]
map = [
  { from = ["Mexico"], to = "Mexico" },
  { from = ["Germany"], to = "Europe" },
  { from = ["France"], to = "Europe" },
  { from = ["Iraq"], to = "Other" },
  { from = ["Sudan"], to = "Other" },
  { from = ["Somalia"], to = "Other" },
]
groups = { Mexico = "mexico-europe", Europe = "mexico-europe" }
"#;

/// Immigration-style profiles honoring the restriction; Mexican origin is
/// strongly preferred over European origin.
fn immigration_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reasons = ["work", "family", "persecution"];
    let origins = ["Mexico", "Germany", "France", "Iraq", "Sudan", "Somalia"];
    let genders = ["female", "male"];
    let profile = |rng: &mut ChaCha8Rng| {
        let r = rng.random_range(0..3);
        let o = if r == 2 { rng.random_range(3..6) } else { rng.random_range(0..6) };
        (r, o, rng.random_range(0..2))
    };
    let mut out = String::from("respondent_id,task,Y,reason_L,reason_R,origin_L,origin_R,gender_L,gender_R\n");
    for i in 0..n {
        let (l, r) = (profile(&mut rng), profile(&mut rng));
        let eta = 2.0 * ((l.1 == 0) as i32 - (r.1 == 0) as i32) as f64;
        let u: f64 = rng.random_range(1e-12..1.0);
        let y = (eta + (u / (1.0 - u)).ln() > 0.0) as u8;
        out += &format!(
            "r{i},1,{y},{},{},{},{},{},{}\n",
            reasons[l.0], reasons[r.0], origins[l.1], origins[r.1], genders[l.2], genders[r.2]
        );
    }
    out
}

#[test]
fn coarsened_test_detects_a_strong_grouped_level_effect() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("immigration.toml");
    std::fs::write(&config, IMMIGRATION).unwrap();
    let europe = dir.path().join("europe.toml");
    std::fs::write(&europe, EUROPE).unwrap();
    let mut small = 0;
    for rep in 0..20 {
        let data = dir.path().join(format!("d{rep}.csv"));
        std::fs::write(&data, immigration_csv(400, rep)).unwrap();
        let o = crt(&[
            "test", "--data", data.to_str().unwrap(), "--config", config.to_str().unwrap(), "--coarsen",
            europe.to_str().unwrap(), "--group", "mexico-europe", "--B", "39", "--seed", &rep.to_string(), "--lambda",
            "cv-null", "--out", dir.path().join("r.json").to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let (a, b) = last_line(&o).strip_prefix("p_value=").unwrap().split_once('/').map(|(a, b)| (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap())).unwrap();
        if a / b < 0.05 {
            small += 1;
        }
    }
    assert!(small >= 16, "{small}/20 below 0.05");
}
