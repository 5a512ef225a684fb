use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const RIG: &str = "tag=rigD shaft=20 rate=5120 resonance=1200 load=0.5 gain=1.2 noise=0.06 decay=0.0025\n";
const CONFIG: &str = "preset=compact\nn_f=6000\nbatch_size=32\nepochs=40\nlr=0.003\ntarget_val_acc=1.0\n";

fn bearing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bearing")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One dataset and one trained checkpoint shared by every test in this file.
struct Fixture {
    _dir: TempDir,
    root: PathBuf,
    data: PathBuf,
    ckpt: PathBuf,
    config: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let rigs = root.join("rigs.txt");
        fs::write(&rigs, RIG).unwrap();
        let config = root.join("run.conf");
        fs::write(&config, CONFIG).unwrap();
        let data = root.join("data");
        let o = bearing(&["gen-data", "--rigs", s(&rigs), "--out", s(&data), "--segments", "10", "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let ckpt = root.join("model.ckpt");
        let o = bearing(&["train", "--data", s(&data), "--config", s(&config), "--out", s(&ckpt), "--seed", "1"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Fixture {
            _dir: dir,
            root,
            data,
            ckpt,
            config,
        }
    })
}

#[test]
fn gen_data_summary_and_repeatability() {
    let f = fixture();
    let rigs = f.root.join("rigs.txt");
    let again = f.root.join("again");
    let o = bearing(&["gen-data", "--rigs", s(&rigs), "--out", s(&again), "--segments", "10", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("conditions\t1"));
    assert!(out.contains("labels\t10"));
    assert!(out.contains("segments\t100 (train 70, val 20, test 10)"));
    assert_eq!(
        fs::read(f.data.join("manifest.tsv")).unwrap(),
        fs::read(again.join("manifest.tsv")).unwrap()
    );
}

#[test]
fn bad_rig_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let rigs = dir.path().join("bad.txt");
    fs::write(&rigs, "tag=x shaft=fast\n").unwrap();
    let o = bearing(&["gen-data", "--rigs", s(&rigs), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
}

#[test]
fn training_is_repeatable_and_logged() {
    let f = fixture();
    let log = fs::read_to_string(format!("{}.log.tsv", f.ckpt.display())).unwrap();
    assert!(log.starts_with("epoch\ttrain_loss\ttrain_acc\tval_acc\tlr\n"));
    let again = f.root.join("again.ckpt");
    let o = bearing(&["train", "--data", s(&f.data), "--config", s(&f.config), "--out", s(&again), "--seed", "1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("best val accuracy"));
    assert_eq!(fs::read(&f.ckpt).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn missing_data_dir_is_an_io_error() {
    let f = fixture();
    let o = bearing(&[
        "train",
        "--data",
        s(&f.root.join("nowhere")),
        "--config",
        s(&f.config),
        "--out",
        s(&f.root.join("x.ckpt")),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn eval_reports_and_writes_confusion() {
    let f = fixture();
    let conf = f.root.join("conf.tsv");
    let feats = f.root.join("feats.tsv");
    let o = bearing(&[
        "eval",
        "--data",
        s(&f.data),
        "--ckpt",
        s(&f.ckpt),
        "--confusion",
        s(&conf),
        "--dump-features",
        s(&feats),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("seed\t0"));
    assert!(out.contains("accuracy\t"));
    assert!(out.contains("false_alarm\t"));
    let grid = fs::read_to_string(&conf).unwrap();
    assert_eq!(grid.lines().count(), 10);
    let total: u64 = grid
        .split(['\t', '\n'])
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 10);
    let rows = fs::read_to_string(&feats).unwrap();
    assert_eq!(rows.lines().count(), 10);
    assert!(rows.lines().all(|l| l.split('\t').count() == 4 + 32));
}

#[test]
fn eval_ablation_and_unknown_variant() {
    let f = fixture();
    let conf = f.root.join("conf_nores.tsv");
    let quick = f.root.join("quick.conf");
    fs::write(&quick, "preset=compact\nn_f=6000\nbatch_size=32\nepochs=1\n").unwrap();
    let o = bearing(&[
        "eval", "--data", s(&f.data), "--ckpt", s(&f.ckpt), "--ablation", "no_res", "--config", s(&quick),
        "--confusion", s(&conf),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("variant\tno_res"));
    let o = bearing(&["eval", "--data", s(&f.data), "--ckpt", s(&f.ckpt), "--ablation", "no_query"]);
    assert_eq!(code(&o), 2);
    let o = bearing(&["eval", "--data", s(&f.data), "--ckpt", s(&f.ckpt), "--holdout", "rigZ"]);
    assert_eq!(code(&o), 2);
}

fn segment_path(f: &Fixture, label: usize) -> PathBuf {
    let manifest = fs::read_to_string(f.data.join("manifest.tsv")).unwrap();
    let row = manifest
        .lines()
        .skip(1)
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .find(|c| c[1] == label.to_string() && c[4] == "test")
        .unwrap();
    f.data.join(row[0])
}

fn answer(o: &Output) -> String {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("answer\t"))
        .unwrap()
        .to_string()
}

#[test]
fn diagnose_healthy_and_severe_outer() {
    let f = fixture();
    let store = f.data.join("store");
    let healthy = segment_path(f, 0);
    let o = bearing(&[
        "diagnose", "--signal", s(&healthy), "--condition", "0", "--store", s(&store), "--ckpt", s(&f.ckpt),
        "--task", "A",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(answer(&o), "no");
    assert!(stdout(&o).contains("class\t0"));

    let outer = segment_path(f, 9);
    let o = bearing(&[
        "diagnose", "--signal", s(&outer), "--condition", "0", "--store", s(&store), "--ckpt", s(&f.ckpt),
        "--task", "B",
    ]);
    assert_eq!(code(&o), 0);
    let a = answer(&o).to_lowercase();
    assert!(a.contains("severe") && a.contains("outer ring"), "{a}");
    let conf: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("confidence\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert!(conf > 0.1 && conf <= 1.0);
}

#[test]
fn diagnose_unknown_condition_exits_5() {
    let f = fixture();
    let o = bearing(&[
        "diagnose",
        "--signal",
        s(&segment_path(f, 0)),
        "--condition",
        "7",
        "--store",
        s(&f.data.join("store")),
        "--ckpt",
        s(&f.ckpt),
        "--task",
        "A",
    ]);
    assert_eq!(code(&o), 5);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fault-free reference"));
}

#[test]
fn align_init_prints_identity_and_rejects_class_mismatch() {
    let f = fixture();
    let out = f.root.join("align.bdxw");
    let o = bearing(&["align-init", "--ckpt", s(&f.ckpt), "--tau", "8", "--hidden", "16", "--seed", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("one-hot identity: PASS"));
    assert!(out.exists());

    let o = bearing(&["align-init", "--ckpt", s(&f.ckpt), "--tau", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("one-hot identity: PASS"));

    let nine = f.root.join("nine.txt");
    let text: Vec<String> = (0..9).map(|i| format!("description {i}")).collect();
    fs::write(&nine, text.join("\n")).unwrap();
    let o = bearing(&["align-init", "--ckpt", s(&f.ckpt), "--descriptions", s(&nine), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn inspect_sweep_is_monotone() {
    let f = fixture();
    let o = bearing(&["inspect", "--data", s(&f.data), "--nf-sweep", "6000,1000,48000,24000"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let rows: Vec<(usize, f64, usize)> = out
        .lines()
        .filter_map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            (c.len() == 3).then(|| c[0].parse().ok().map(|n| (n, c[1].parse().unwrap(), c[2].parse().unwrap())))?
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1000, 6000, 24000, 48000]);
    assert!(rows.windows(2).all(|w| w[0].1 <= w[1].1 && w[0].2 < w[1].2));
    assert_eq!(rows[3].1, 1.0);
    assert!(out.contains("0.9747M"));
}
