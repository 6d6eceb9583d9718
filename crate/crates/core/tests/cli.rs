use std::path::Path;
use std::process::{Command, Output};

fn frrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frrc")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = frrc(args);
    assert!(
        out.status.success(),
        "frrc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const EIGHT: &str = "\
d0=16 motif_dim=4 embed_seed=3 noise=0.05
split=train id=a count=2 period=6 len=20 seed=1
split=train id=b count=3 period=5 len=20 seed=2
split=train id=c count=4 period=4 len=20 seed=3
split=train id=d count=2 period=8 len=24 seed=4
split=val   id=e count=3 period=6 len=24 seed=5
split=val   id=f count=2 period=7 len=20 seed=6
split=test  id=g count=3 period=4 len=16 seed=7
split=test  id=h count=0 period=4 len=16 seed=8
";

fn dataset(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.txt");
    std::fs::write(&spec, EIGHT).unwrap();
    let data = dir.join("data");
    ok(&["gen-synth", "--spec", p(&spec), "--out", p(&data)]);
    data
}

#[test]
fn gen_synth_writes_one_file_per_video() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let feats = std::fs::read_dir(&data)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "frfeat"))
        .count();
    assert_eq!(feats, 8);
    assert!(data.join("manifest.json").exists());
    assert!(data.join("annotations.jsonl").exists());
}

#[test]
fn infeasible_spec_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.txt");
    std::fs::write(&spec, "# header\nid=ok count=2 period=4 len=10 seed=1\nid=x count=7 period=20 len=120 seed=2\n").unwrap();
    let out = frrc(&["gen-synth", "--spec", p(&spec), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn perfect_predictions_score_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("pred.csv");
    std::fs::write(&f, "video_id,true_count,predicted_count\na,3,3\nb,7,7\n").unwrap();
    let out = ok(&["eval", "--predictions", p(&f)]);
    assert!(out.starts_with("MAE 0.0000, OBO 1.0000"), "{out}");

    std::fs::write(&f, "a,3,3\nb,x,7\n").unwrap();
    let bad = frrc(&["eval", "--predictions", p(&f)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 2"));
}

#[test]
fn overrides_are_echoed_in_the_run_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let manifest = data.join("manifest.json");
    let mut configs = Vec::new();
    for (name, extra) in [
        ("n6", vec!["--num-blocks", "6"]),
        ("n4", vec!["--num-blocks", "4"]),
        ("v3", vec!["--kernel-kind", "vanilla-3"]),
    ] {
        let run = dir.path().join(name);
        let mut args = vec![
            "train", "--desk", "--d0", "16", "--max-steps", "3", "--manifest", p(&manifest), "--run-dir", p(&run),
        ];
        args.extend(extra);
        ok(&args);
        assert!(run.join("best.frrc").exists());
        configs.push(std::fs::read_to_string(run.join("config.toml")).unwrap());
    }
    assert!(configs[0].contains("num_blocks = 6"), "{}", configs[0]);
    assert!(configs[1].contains("num_blocks = 4"));
    assert!(configs[2].contains("vanilla-3"));
    assert_ne!(configs[0], configs[1]);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[model]\nnum_blockz = 3\n").unwrap();
    let out = frrc(&["grad-check", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_blockz"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(frrc(&[]).status.code(), Some(1));
    assert_eq!(frrc(&["train", "--bogus"]).status.code(), Some(1));
    let missing = dir.path().join("none.frrc");
    let feats = dir.path().join("none.frfeat");
    assert_eq!(
        frrc(&["predict", "--checkpoint", p(&missing), "--features", p(&feats)]).status.code(),
        Some(2)
    );
    assert_eq!(frrc(&["train", "--kernel-kind", "dilated-9"]).status.code(), Some(1));
    let out = frrc(&["grad-check", "--desk", "--len", "16", "--samples", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradient check passed"));
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn plot_and_predict_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let run = dir.path().join("run");
    ok(&[
        "train", "--desk", "--d0", "16", "--max-steps", "5", "--manifest",
        p(&data.join("manifest.json")), "--run-dir", p(&run),
    ]);
    let listed = ok(&["plot", "--run-dir", p(&run)]);
    assert_eq!(listed.lines().count(), 2);
    let plots = run.join("plots");
    for (id, len) in [("g", 16), ("h", 16)] {
        let rows = read_csv(&plots.join(format!("{id}.density.csv")));
        assert_eq!(rows.len(), len);
        let tsm = std::fs::read_to_string(plots.join(format!("{id}.tsm.csv"))).unwrap();
        assert_eq!(tsm.lines().count(), len);
        let pgm = std::fs::read(plots.join(format!("{id}.tsm.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(pgm.len(), 13 + len * len);
    }
    let zero = read_csv(&plots.join("h.density.csv"));
    assert!(zero.iter().all(|r| r[2] == 0.0));

    let eval = ok(&["eval", "--run-dir", p(&run)]);
    assert!(eval.contains("warning: h has true count 0"), "{eval}");

    let dens = dir.path().join("g.csv");
    let out = ok(&[
        "predict", "--checkpoint", p(&run.join("best.frrc")), "--features",
        p(&data.join("g.frfeat")), "--out", p(&dens),
    ]);
    let count: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    let rows = read_csv(&dens);
    assert_eq!(rows.len(), 16);
    let sum: f64 = rows.iter().map(|r| r[1]).sum();
    assert!((sum - count).abs() < 1e-3);
}

#[test]
fn trained_similarity_repeats_at_the_period() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    std::fs::write(
        &spec,
        "d0=16 motif_dim=4 embed_seed=3 noise=0\n\
         split=train id=a count=5 period=6 len=30 lead_in=0 seed=1\n\
         split=test  id=b count=5 period=6 len=30 lead_in=0 seed=1\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    ok(&["gen-synth", "--spec", p(&spec), "--out", p(&data)]);
    let run = dir.path().join("run");
    ok(&[
        "train", "--desk", "--d0", "16", "--max-steps", "100", "--manifest",
        p(&data.join("manifest.json")), "--run-dir", p(&run),
    ]);
    ok(&["plot", "--run-dir", p(&run)]);
    let tsm: Vec<Vec<f64>> = std::fs::read_to_string(run.join("plots/b.tsm.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // Away from the edges (receptive radius 7) frames one period apart have
    // identical embeddings, so every row repeats its diagonal value at lag 6.
    let (period, radius) = (6, 7);
    let t = tsm.len();
    for i in radius..t - radius - period {
        assert!(
            (tsm[i][i + period] - tsm[i][i]).abs() < 1e-9,
            "row {i}: {} vs {}",
            tsm[i][i + period],
            tsm[i][i]
        );
    }
    assert!(
        (tsm[0][period] - tsm[0][0]).abs() > 1e-9,
        "the zero-padded edge should break the band"
    );
}
