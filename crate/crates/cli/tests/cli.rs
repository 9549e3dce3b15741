use std::path::Path;
use std::process::{Command, Output};

const ISIC_COUNTS: [usize; 8] = [4522, 12875, 3323, 867, 2624, 239, 253, 628];
const CODES: [&str; 8] = ["MEL", "NV", "BCC", "AK", "BKL", "DF", "VASC", "SCC"];

fn pht(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pht")).args(args).output().expect("binary runs")
}

fn write_labels(path: &Path, counts: &[usize]) {
    let mut csv = String::from("filename,label\n");
    let mut k = 0;
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            csv.push_str(&format!("img_{k:05}.png,{}\n", CODES[class]));
            k += 1;
        }
    }
    std::fs::write(path, csv).unwrap();
}

fn shard_sizes(dir: &Path) -> (usize, Vec<usize>) {
    let text = std::fs::read_to_string(dir.join("partition.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let len = |x: &serde_json::Value| x.as_array().unwrap().len();
    let stations = v["stations"].as_array().unwrap().iter().map(|s| len(&s["train"]) + len(&s["validation"])).collect();
    (len(&v["test"]), stations)
}

#[test]
fn partition_single_class_thirty() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.csv");
    write_labels(&labels, &[30]);
    let out = pht(&["partition", "--labels", labels.to_str().unwrap(), "--output", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(shard_sizes(dir.path()), (6, vec![8, 8, 8]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("test: 6"));
}

#[test]
fn partition_full_isic_label_file() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.csv");
    write_labels(&labels, &ISIC_COUNTS);
    let out = pht(&["partition", "--labels", labels.to_str().unwrap(), "--output", dir.path().to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(shard_sizes(dir.path()), (5066, vec![6755, 6755, 6755]));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(pht(&["partition", "--labels", missing.to_str().unwrap()]).status.code(), Some(2));

    let labels = dir.path().join("labels.csv");
    write_labels(&labels, &[30]);
    let out = pht(&["partition", "--labels", labels.to_str().unwrap(), "--test-frac", "1.0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test_fraction"));

    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[dataset.synthetic]\nn = 100\nimage_size = 8\n[partition]\ntest_fraction = 1.0\n").unwrap();
    let out = pht(&["run", config.to_str().unwrap(), "--output", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test_fraction"));
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(
        &config,
        "seed = 2\n[dataset.synthetic]\nn = 150\nimage_size = 6\n[augment]\ntarget_size = 6\n[training]\nepochs = 2\nlearning_rate = 0.01\n[plan]\nrounds = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = pht(&["run", config.to_str().unwrap(), "--output", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("| Mean Accuracy | Mean Recall |"), "{stdout}");

    let iil = out_dir.join("iil_summary.json");
    let fl = out_dir.join("fl_summary.json");
    let out = pht(&["compare", iil.to_str().unwrap(), fl.to_str().unwrap()]);
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("Distributed (IIL)") && table.contains("Distributed (FL)"), "{table}");

    let out = pht(&["compare", iil.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
