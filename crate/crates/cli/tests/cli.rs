use polo_core::hard_instances::{build, HardInstanceParams};
use polo_core::mdp::Factorization;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
k_episodes = 40
seeds = [1, 2]
algos = ["polo", "uniform"]
[instance]
kind = "random"
n_states = 4
n_actions = 3
dim = 2
gamma = 0.8
seed = 5
[adversary]
kind = "switching"
period = 4
[model_class]
size = 3
[hyper]
xi = 0.2
epoch_len = 10
eta = 0.5
c_alpha = 0.1
"#;

fn polo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polo")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn data_lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn missing_config_is_a_config_error() {
    let out = polo(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/nonexistent/config.toml"), "{}", stderr(&out));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "k_episodes = \"many\"\n");
    assert_eq!(polo(&["run", &cfg]).status.code(), Some(1));
}

#[test]
fn single_episode_run_writes_one_row_per_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("k_episodes = 40", "k_episodes = 1"));
    let out_dir = dir.path().join("out");
    let out = polo(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for name in ["polo_seed1.csv", "polo_seed2.csv", "uniform_seed1.csv", "uniform_seed2.csv"] {
        assert_eq!(data_lines(&out_dir.join(name)), 1, "{name}");
    }
    assert_eq!(data_lines(&out_dir.join("summary.csv")), 2);
    assert!(out_dir.join("manifest.toml").exists());
}

#[test]
fn reruns_are_byte_identical_and_the_manifest_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(polo(&["run", &cfg, "--out", a.to_str().unwrap(), "--jobs", "1"]).status.code(), Some(0));
    assert_eq!(polo(&["run", &cfg, "--out", b.to_str().unwrap()]).status.code(), Some(0));
    let manifest = a.join("manifest.toml");
    assert_eq!(polo(&["run", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()]).status.code(), Some(0));
    for name in ["polo_seed1.csv", "polo_seed2.csv", "uniform_seed2.csv", "summary.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
        assert_eq!(x, std::fs::read(c.join(name)).unwrap(), "{name}");
    }
    assert_eq!(std::fs::read(&manifest).unwrap(), std::fs::read(c.join("manifest.toml")).unwrap());
}

#[test]
fn validate_reference_instance() {
    let out = polo(&["validate", "hard:dim=8,n_states=12,n_actions=5,gamma=0.9"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(!stderr(&out).contains("bound-only"));
    let out = polo(&["validate", "hard:dim=8,n_states=12,n_actions=5,gamma=0.9,target=2:3,epsilon=0.1"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn validate_large_instance_warns() {
    let out = polo(&["validate", "hard:dim=8,n_states=30,n_actions=5,gamma=0.9"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("bound-only"));
}

#[test]
fn validate_bad_specs() {
    assert_eq!(polo(&["validate", "hard:dim=8,n_states=12"]).status.code(), Some(1));
    assert_eq!(polo(&["validate", "hard:dim=x,n_states=12,n_actions=5,gamma=0.9"]).status.code(), Some(1));
    assert_eq!(polo(&["validate", "no-such-file.toml"]).status.code(), Some(1));
}

#[test]
fn validate_corrupted_features_fails_with_a_witness() {
    let inst = build(HardInstanceParams::reference(8, 12, 5, 0.9)).unwrap();
    let f = inst.mdp.factors();
    let mut phi = f.phi_flat().to_vec();
    for x in &mut phi[(3 * 5 + 2) * 8..(3 * 5 + 3) * 8] {
        *x *= 2.0;
    }
    let bad = inst.mdp.with_factors(Factorization::new(12, 5, 8, phi, f.mu_flat().to_vec()).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    bad.save(&path).unwrap();
    let out = polo(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("s=3, a=2"));

    let good = dir.path().join("good.toml");
    inst.mdp.save(&good).unwrap();
    assert_eq!(polo(&["validate", good.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("algos = [\"polo\", \"uniform\"]", "algos = [\"polo\"]"));
    let out_dir = dir.path().join("sweep");
    let out = polo(&["sweep", &cfg, "--param", "c_alpha", "--values", "0,0.5", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(data_lines(&out_dir.join("sweep_summary.csv")), 2);
    assert!(out_dir.join("c_alpha=0").join("polo_seed1.csv").exists());
    assert!(out_dir.join("c_alpha=0.5").join("summary.csv").exists());
}

#[test]
fn sweep_over_epoch_length_fits_three_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("algos = [\"polo\", \"uniform\"]", "algos = [\"polo\"]"));
    let out = polo(&["sweep", &cfg, "--param", "L", "--values", "5,10,20", "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = stdout.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let slope: f64 = row.split(',').nth(6).unwrap().parse().unwrap();
        assert!(slope.is_finite(), "{row}");
    }
}

#[test]
fn sweep_rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    assert_eq!(polo(&["sweep", &cfg, "--param", "c_alpha", "--values"]).status.code(), Some(1));
    assert_eq!(polo(&["sweep", &cfg, "--param", "nonsense", "--values", "1"]).status.code(), Some(1));
}
