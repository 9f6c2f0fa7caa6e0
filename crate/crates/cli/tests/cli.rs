use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn can(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_can")).args(args).output().expect("spawn can")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 8] = ["--set", "frames=4", "--set", "height=16", "--set", "width=16", "--set", "clips_per_class=4"];

fn small_dataset(dir: &Path, seed: &str) -> std::path::PathBuf {
    let mut args = vec!["generate", "--out", p(dir), "--seed", seed];
    args.extend(SMALL);
    let o = can(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("dataset.canv")
}

#[test]
fn generate_is_reproducible_and_records_its_config() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = small_dataset(a.path(), "11");
    let db = small_dataset(b.path(), "11");
    assert_eq!(fs::read(&da).unwrap(), fs::read(&db).unwrap());
    let echo = fs::read_to_string(a.path().join("config.txt")).unwrap();
    assert!(echo.contains("seed = 11\n"));
    assert!(echo.contains("frames = 4\n"));
    let id = fs::read_to_string(a.path().join("run_id")).unwrap();
    assert_eq!(id.trim().len(), 12);
    assert!(id.trim().chars().all(|c| c.is_ascii_hexdigit()));
    let other = tempfile::tempdir().unwrap();
    small_dataset(other.path(), "12");
    assert_ne!(fs::read_to_string(other.path().join("run_id")).unwrap(), id);
}

#[test]
fn train_then_eval_round_trip_is_bit_reproducible() {
    let data = tempfile::tempdir().unwrap();
    let ds = small_dataset(data.path(), "3");
    let run = |dir: &Path| {
        let o = can(&[
            "train", "tinycan", "--out", p(dir), "--set", &format!("dataset={}", p(&ds)),
            "--set", "epochs=2", "--set", "batch_size=4",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout(&o)
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report = run(a.path());
    run(b.path());
    assert!(report.contains("best epoch"));
    for f in ["best.ckpt", "metrics.tsv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.path().join("metrics.tsv")).unwrap().lines().count(), 2);

    let ev = tempfile::tempdir().unwrap();
    let o = can(&[
        "eval", "tinycan", "--out", p(ev.path()),
        "--set", &format!("dataset={}", p(&ds)),
        "--set", &format!("checkpoint={}", p(&a.path().join("best.ckpt"))),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(ev.path().join("eval.tsv")).unwrap();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[0], "tinycan");
    assert_eq!(row[1], "4");
    let best = fs::read_to_string(a.path().join("metrics.tsv")).unwrap();
    let best_val = best.lines().map(|l| l.split('\t').nth(3).unwrap().to_string()).max().unwrap();
    assert_eq!(row[2], best_val);
}

#[test]
fn eval_of_another_networks_checkpoint_is_a_config_error() {
    let data = tempfile::tempdir().unwrap();
    let ds = small_dataset(data.path(), "4");
    let run = tempfile::tempdir().unwrap();
    let o = can(&["train", "tinycan-baseline", "--out", p(run.path()), "--set", &format!("dataset={}", p(&ds)), "--set", "epochs=1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = can(&[
        "eval", "tinycan", "--out", p(run.path()),
        "--set", &format!("dataset={}", p(&ds)),
        "--set", &format!("checkpoint={}", p(&run.path().join("best.ckpt"))),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn class_count_mismatch_fails_before_training() {
    let data = tempfile::tempdir().unwrap();
    let ds = small_dataset(data.path(), "5");
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("run");
    let o = can(&["train", "resnet50", "--out", p(&dir), "--set", &format!("dataset={}", p(&ds))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("classes"), "{}", stderr(&o));
    assert!(!dir.exists());
}

#[test]
fn bad_inputs_map_to_exit_codes_without_side_effects() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("run");
    let d = p(&dir);
    assert_eq!(code(&can(&["train", "--out", d, "--set", "dataset=/nonexistent/x.canv"])), 2);
    assert_eq!(code(&can(&["train", "--out", d])), 2);
    assert_eq!(code(&can(&["generate"])), 2);
    assert_eq!(code(&can(&["generate", "--out", d, "--set", "colour=red"])), 2);
    assert_eq!(code(&can(&["generate", "--out", d, "--set", "seed=many"])), 2);
    assert_eq!(code(&can(&["count", "resnet51"])), 2);
    assert_eq!(code(&can(&["count", "--set", "spec=resnet51"])), 2);
    assert_eq!(code(&can(&["bench", "--set", "iterations=0"])), 2);
    assert!(!dir.exists());

    let data = tempfile::tempdir().unwrap();
    let ds = small_dataset(data.path(), "6");
    let bytes = fs::read(&ds).unwrap();
    let cut = data.path().join("cut.canv");
    fs::write(&cut, &bytes[..bytes.len() - 10]).unwrap();
    let o = can(&["train", "--out", d, "--set", &format!("dataset={}", p(&cut))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("format error at byte"), "{}", stderr(&o));
}

#[test]
fn precedence_is_file_then_set_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\nseed = 3\nclips_per_class = 1\nframes = 2\nheight = 8\nwidth = 8\nlr = 0.5\n").unwrap();
    let out = dir.path().join("a");
    let o = can(&["generate", "--config", p(&cfg), "--set", "seed=4", "--set", "lr=0.25", "--seed", "5", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("seed = 5\n"));
    assert!(echo.contains("lr = 0.25\n"));
    assert!(echo.contains("height = 8\n"));

    fs::write(&cfg, "seed = 3\nbogus line\n").unwrap();
    let o = can(&["generate", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn gradcheck_reports_and_catches_an_injected_fault() {
    let o = can(&["gradcheck", "--set", "modules=sigmoid,temporal_diff", "--set", "seeds=1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.starts_with("module\tmax_rel_error"));
    assert_eq!(s.lines().filter(|l| l.ends_with("\tok")).count(), 2);

    let o = can(&["gradcheck", "--set", "modules=sigmoid,temporal_diff", "--set", "seeds=1", "--set", "inject_fault=sigmoid"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("sigmoid"));
    assert!(!stderr(&o).contains("temporal_diff"));

    assert_eq!(code(&can(&["gradcheck", "--set", "modules="])), 2);
    assert_eq!(code(&can(&["gradcheck", "--set", "modules=warp_drive"])), 2);
}

#[test]
fn count_prints_layers_and_rounded_totals() {
    let o = can(&["count", "resnet50can"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.lines().any(|l| l.starts_with("stem.conv.weight\t")));
    assert!(s.contains("resnet50can at T=8: 25.3 M params, 34.7 G MACs"), "{s}");
    let o = can(&["count", "resnet50can", "--set", "frames=16"]);
    assert!(stdout(&o).contains("at T=16: 25.3 M params, 69.3 G MACs"), "{}", stdout(&o));
}

#[test]
fn bench_emits_a_fixed_tsv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let o = can(&["bench", "--out", p(dir.path()), "--set", "iterations=1", "--set", "shape=1,2,6,6,16"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = fs::read_to_string(dir.path().join("bench.tsv")).unwrap();
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines[0], can_cli::BENCH_HEADER);
    let kernels: Vec<&str> = lines[1..].iter().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(kernels, ["conv3d", "conv3d_oracle", "mtcm_forward", "gscm_forward", "tinycan_forward"]);
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 6));
}
