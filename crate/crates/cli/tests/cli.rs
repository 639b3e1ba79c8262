use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_recsample"));
    c.env_remove("RECSAMPLE_STORE")
        .env_remove("RECSAMPLE_CONFIG");
    c
}

fn run(store: &Path, args: &[&str]) -> Output {
    bin().arg("--store").arg(store).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 60 users with 12..=24 interactions each over 40 items; ratings follow a
/// hidden user/item affinity so models have something to learn.
fn write_dataset(dir: &Path) -> PathBuf {
    let path = dir.join("toy.csv");
    let mut body = String::from("user_id,item_id,rating,timestamp\n");
    let mut state: u64 = 0x9e3779b97f4a7c15;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for u in 0..60u64 {
        let n = 12 + (next() % 13) as usize;
        let mut items: Vec<u64> = (0..40).collect();
        for k in 0..n {
            let j = k + (next() as usize) % (40 - k);
            items.swap(k, j);
        }
        for (t, &i) in items[..n].iter().enumerate() {
            let rating = 1 + (u % 5 + i % 5 + next() % 2) % 5;
            body.push_str(&format!("u{u},i{i},{rating},{}\n", 1000 + t));
        }
    }
    std::fs::write(&path, body).unwrap();
    path
}

fn sha(path: &Path) -> u64 {
    // FNV-1a is enough to compare two files
    std::fs::read(path)
        .unwrap()
        .iter()
        .fold(0xcbf29ce484222325u64, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x100000001b3)
        })
}

fn field(out: &str, key: &str) -> usize {
    out.lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("{key} missing from {out}"))
}

#[test]
fn sample_count_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let store = dir.path().join("store");
    let ingest = run(
        &store,
        &["ingest", "--data", data.to_str().unwrap(), "--name", "toy"],
    );
    assert!(ingest.status.success(), "{ingest:?}");

    let args = [
        "--seed",
        "7",
        "sample",
        "--data",
        "toy",
        "--sampler",
        "random_interaction",
        "--p",
        "10",
    ];
    let first = run(&store, &args);
    assert!(first.status.success(), "{first:?}");
    let out = stdout(&first);
    assert_eq!(field(&out, "actual_count"), field(&out, "train_count") / 10);
    let csv = store.join("samples/toy_implicit_random_interaction_10_7.csv");
    let h1 = sha(&csv);
    let second = run(&store, &args);
    assert!(second.status.success());
    assert_eq!(sha(&csv), h1);
    assert!(store
        .join("samples/toy_implicit_random_interaction_10_7.json")
        .is_file());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let d = data.to_str().unwrap();
    let zero = run(
        dir.path(),
        &[
            "sample",
            "--data",
            d,
            "--sampler",
            "random_interaction",
            "--p",
            "0",
        ],
    );
    assert_eq!(zero.status.code(), Some(2));
    let unknown = run(
        dir.path(),
        &["sample", "--data", d, "--sampler", "snowball", "--p", "10"],
    );
    assert_eq!(unknown.status.code(), Some(2));
    let missing = run(
        dir.path(),
        &[
            "sample",
            "--data",
            "nope",
            "--sampler",
            "random_interaction",
            "--p",
            "10",
        ],
    );
    assert_eq!(missing.status.code(), Some(2));
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "samplers = snowball\n").unwrap();
    let bad = bin()
        .args([
            "--store",
            dir.path().to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "benchmark",
            "--data",
            d,
        ])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn predict_without_model_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let o = run(
        dir.path(),
        &[
            "genie",
            "predict",
            "--data",
            data.to_str().unwrap(),
            "--p",
            "10",
            "--metric",
            "ndcg",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no usable genie model"));
}

const QUICK: &str = "\
# tiny grid so the test runs in seconds
grid.bias_only.learning_rates = 0.05
grid.bias_only.max_epochs = 5
grid.mf.dims = 8
grid.mf.learning_rates = 0.05
grid.mf.max_epochs = 5
grid.neumf_lite.dims = 4
grid.neumf_lite.dropouts = 0
grid.neumf_lite.learning_rates = 0.05
grid.neumf_lite.max_epochs = 5
proxy.epochs = 3
";

#[test]
fn benchmark_then_genie_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let store = dir.path().join("store");
    let config = dir.path().join("quick.conf");
    std::fs::write(&config, QUICK).unwrap();
    let with_config = |args: &[&str]| {
        bin()
            .arg("--store")
            .arg(&store)
            .arg("--config")
            .arg(&config)
            .args(args)
            .output()
            .unwrap()
    };
    assert!(
        with_config(&["ingest", "--data", data.to_str().unwrap(), "--name", "toy"])
            .status
            .success()
    );

    let bench = with_config(&[
        "benchmark",
        "--data",
        "toy",
        "--scenarios",
        "implicit",
        "--percents",
        "80,40",
        "--featurize",
    ]);
    assert_eq!(
        bench.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&bench.stderr)
    );
    let psi = stdout(&bench);
    assert!(psi.starts_with("sampler,toy,average"), "{psi}");
    assert_eq!(psi.lines().count(), 17);

    // a complete store runs nothing new
    let again = with_config(&[
        "benchmark",
        "--data",
        "toy",
        "--scenarios",
        "implicit",
        "--percents",
        "80,40",
        "--featurize",
    ]);
    assert!(String::from_utf8_lossy(&again.stderr).contains("0 completed"));
    assert_eq!(stdout(&again), psi);

    for mode in ["regression", "ranking"] {
        let train = with_config(&["genie", "train", "--mode", mode]);
        assert!(
            train.status.success(),
            "{}",
            String::from_utf8_lossy(&train.stderr)
        );
        assert!(stdout(&train).contains("p_at_1_genie"));
        let eval = with_config(&["genie", "eval", "--mode", mode]);
        assert!(eval.status.success());
        assert_eq!(stdout(&eval), stdout(&train));

        let out = dir.path().join(format!("ranked_{mode}.csv"));
        let predict = with_config(&[
            "genie",
            "predict",
            "--mode",
            mode,
            "--data",
            data.to_str().unwrap(),
            "--p",
            "10",
            "--metric",
            "ndcg",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(
            predict.status.success(),
            "{}",
            String::from_utf8_lossy(&predict.stderr)
        );
        let ranked = std::fs::read_to_string(&out).unwrap();
        let mut lines = ranked.lines();
        assert_eq!(lines.next(), Some("rank,sampler,tau_hat,relative_only"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 16);
        let flag = if mode == "ranking" { "true" } else { "false" };
        assert!(rows.iter().all(|r| r.ends_with(flag)), "{ranked}");
        if mode == "regression" {
            for r in &rows {
                let tau: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
                assert!((-1.0..=1.0).contains(&tau), "{ranked}");
            }
        }
    }

    let report = run(&store, &["report"]);
    assert!(report.status.success());
    for f in [
        "psi.csv",
        "p_mle.csv",
        "p_mle.svg",
        "genie_ranking.csv",
        "genie_regression.csv",
    ] {
        assert!(stdout(&report).contains(f), "{f}");
    }
}
