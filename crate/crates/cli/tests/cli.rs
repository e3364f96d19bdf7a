use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn imgopt(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_imgopt"));
    cmd.args(args).env_remove("IMGOPT_OUT");
    if let Some(p) = env_out {
        cmd.env("IMGOPT_OUT", p);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const IMG: &str = r#"
preset = "multiwell3"
[run]
algorithm = "img"
seeds = [0, 1]
[img]
N = 4
M = 2
tau = 8
"#;

const EGD: &str = r#"
preset = "multiwell3"
[run]
algorithm = "egd"
seeds = [0, 1]
[ea]
P = 4
generations = 16
tau = 10
"#;

#[test]
fn run_summarize_fronts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let out_s = out.to_string_lossy().into_owned();
    let img = write_config(tmp.path(), "img.toml", IMG);
    let egd = write_config(tmp.path(), "egd.toml", EGD);

    let r = imgopt(&["run", "--config", &img, "--out", &out_s], None);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    // Output root from the environment.
    let r = imgopt(&["run", "--config", &egd], Some(&out));
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    for file in [
        "records.csv",
        "timing.csv",
        "final_points.csv",
        "front.csv",
        "trajectory.csv",
        "summary.json",
    ] {
        assert!(out.join("img/seed_1").join(file).exists(), "{file}");
    }
    assert!(out.join("egd/seed_0/generations.csv").exists());
    assert!(out.join("egd/summary.json").exists());

    let table = tmp.path().join("table.csv");
    let r = imgopt(
        &[
            "summarize",
            "--in",
            &out_s,
            "--out",
            &table.to_string_lossy(),
            "--checkpoints",
            "32,64",
        ],
        None,
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("label,evaluations,mean,std,runs"));
    assert!(
        text.contains("egd,64,") && text.contains("img,64,"),
        "{text}"
    );
    assert!(tmp.path().join("table_curve_img.csv").exists());

    let r = imgopt(&["fronts", "--in", &out_s, "--combined"], None);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("seed 0: combined front"), "{stdout}");
    assert!(out.join("combined_front_seed_1.csv").exists());
}

#[test]
fn invalid_config_exits_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.toml", "preset = \"multiwell3\"\n[run]\nalgorithm = \"img\"\nbudget = 7\n[img]\nN = 2\nM = 2\ntau = 2\n");
    let r = imgopt(
        &[
            "run",
            "--config",
            &bad,
            "--out",
            &tmp.path().to_string_lossy(),
        ],
        None,
    );
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("budget"), "{err}");

    let r = imgopt(
        &[
            "run",
            "--config",
            &tmp.path().join("missing.toml").to_string_lossy(),
        ],
        None,
    );
    assert!(!r.status.success());
}
