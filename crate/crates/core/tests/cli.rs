use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emlabel::io::{read_vlv, write_vlv};
use emlabel::{LabeledVolume, ProbabilityVolume, Role, Volume};
use tempfile::TempDir;

fn emlabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emlabel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn save(dir: &TempDir, name: &str, vol: impl Into<Volume>) -> PathBuf {
    let p = dir.path().join(name);
    write_vlv(&vol.into(), &p).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two 2x2 blobs in one slice, separated by a background column.
fn two_blobs() -> LabeledVolume {
    #[rustfmt::skip]
    let data = vec![
        1, 1, 0, 1, 1,
        1, 1, 0, 1, 1,
    ];
    LabeledVolume::from_shape([1, 2, 5], Role::Semantic, data).unwrap()
}

#[test]
fn convert_two_blobs() {
    let dir = TempDir::new().unwrap();
    let input = save(&dir, "sem.vlv", two_blobs());
    let out = dir.path().join("inst.vlv");
    for schedule in ["sync", "sweeps"] {
        let o = emlabel(&["convert", "--in", s(&input), "--out", s(&out), "--schedule", schedule]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = stdout(&o);
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("convert: K=2 "), "{text}");
        let inst = read_vlv(&out).unwrap().into_labels().unwrap();
        assert_eq!(inst.role(), Role::Instance);
        assert_eq!(inst.data(), &[1, 1, 0, 2, 2, 1, 1, 0, 2, 2]);
    }
}

#[test]
fn convert_empty_and_missing() {
    let dir = TempDir::new().unwrap();
    let empty = LabeledVolume::from_shape([2, 2, 2], Role::Semantic, vec![0; 8]).unwrap();
    let input = save(&dir, "empty.vlv", empty);
    let out = dir.path().join("o.vlv");
    let o = emlabel(&["convert", "--in", s(&input), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("K=0 iterations=0"));

    let o = emlabel(&["convert", "--in", s(&dir.path().join("nope.vlv")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.vlv"));
}

#[test]
fn convert_per_class_keeps_touching_classes_apart() {
    let dir = TempDir::new().unwrap();
    let sem = LabeledVolume::from_shape([1, 1, 4], Role::Semantic, vec![1, 1, 2, 2]).unwrap();
    let input = save(&dir, "sem.vlv", sem);
    let out = dir.path().join("o.vlv");
    let o = emlabel(&["convert", "--in", s(&input), "--out", s(&out), "--per-class"]);
    assert!(stdout(&o).starts_with("convert: K=2 "));
    let o = emlabel(&["convert", "--in", s(&input), "--out", s(&out)]);
    assert!(stdout(&o).starts_with("convert: K=1 "));
}

#[test]
fn decode_blob_and_blank() {
    let dir = TempDir::new().unwrap();
    let n = 9;
    let mut data = vec![0.0f32; n * n * n];
    for z in 2..7 {
        for y in 2..7 {
            for x in 2..7 {
                data[(z * n + y) * n + x] = 0.8;
            }
        }
    }
    let blob = save(&dir, "blob.vlv", ProbabilityVolume::from_shape([n, n, n], data).unwrap());
    let blank = save(&dir, "blank.vlv", ProbabilityVolume::from_shape([3, 3, 3], vec![0.0; 27]).unwrap());
    let out = dir.path().join("o.vlv");

    let o = emlabel(&["decode", "--in", s(&blob), "--out", s(&out)]);
    assert_eq!(stdout(&o).trim(), "decode: instances=1");
    let o = emlabel(&["decode", "--in", s(&blank), "--out", s(&out)]);
    assert_eq!(stdout(&o).trim(), "decode: instances=0");
    let o = emlabel(&["decode", "--in", s(&blob), "--out", s(&out), "--theta", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_outputs() {
    let dir = TempDir::new().unwrap();
    let gt = LabeledVolume::from_shape([1, 1, 5], Role::Semantic, vec![1, 2, 3, 4, 5]).unwrap();
    let pred = LabeledVolume::from_shape([1, 1, 5], Role::Semantic, vec![1, 2, 3, 4, 1]).unwrap();
    let gt_p = save(&dir, "gt.vlv", gt.clone());
    let pred_p = save(&dir, "pred.vlv", pred);
    let csv = dir.path().join("m.csv");

    let o = emlabel(&["eval", "--pred", s(&gt_p), "--gt", s(&gt_p)]);
    assert!(stdout(&o).trim_end().ends_with("dice=1.000000 iou=1.000000"));

    let o = emlabel(&["eval", "--pred", s(&pred_p), "--gt", s(&gt_p), "--avg", "macro", "--csv", s(&csv)]);
    assert!(o.status.success());
    // class 1: pred 2 voxels, gt 1, overlap 1 -> 2/3; class 5 -> 0; others 1
    let expected = (2.0 / 3.0 + 3.0 + 0.0) / 5.0;
    let text = stdout(&o);
    assert!(text.contains(&format!("dice={expected:.6}")), "{text}");
    let table = std::fs::read_to_string(&csv).unwrap();
    let first = table.clone();
    assert!(table.starts_with("class,dice,iou\n1,"));
    assert!(table.lines().last().unwrap().starts_with("average,"));
    emlabel(&["eval", "--pred", s(&pred_p), "--gt", s(&gt_p), "--csv", s(&csv)]);
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), first);

    let other = save(&dir, "small.vlv", LabeledVolume::from_shape([1, 1, 4], Role::Semantic, vec![0; 4]).unwrap());
    let o = emlabel(&["eval", "--pred", s(&other), "--gt", s(&gt_p)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn five_class_fixture_with_one_wrong_class() {
    let dir = TempDir::new().unwrap();
    let gt = LabeledVolume::from_shape([1, 1, 5], Role::Semantic, vec![1, 2, 3, 4, 5]).unwrap();
    let pred = LabeledVolume::from_shape([1, 1, 5], Role::Semantic, vec![1, 2, 3, 4, 0]).unwrap();
    let o = emlabel(&[
        "eval",
        "--pred",
        s(&save(&dir, "p.vlv", pred)),
        "--gt",
        s(&save(&dir, "g.vlv", gt)),
        "--classes",
        "1,2,3,4,5",
    ]);
    assert!(stdout(&o).contains("dice=0.800000"), "{}", stdout(&o));
}

#[test]
fn stats_writes_one_row_per_instance() {
    let dir = TempDir::new().unwrap();
    let input = save(&dir, "sem.vlv", two_blobs());
    let csv = dir.path().join("stats.csv");
    let hist = dir.path().join("hist.csv");
    let o = emlabel(&["stats", "--in", s(&input), "--csv", s(&csv), "--hist", s(&hist), "--bins", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "stats: instances=2 voxels=8 small=2 medium=0 large=0");
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap(),
        "id,voxels,class,size_class\n1,4,1,small\n2,4,1,small\n"
    );
    let h = std::fs::read_to_string(&hist).unwrap();
    assert_eq!(h.lines().count(), 4);
}

#[test]
fn resample_identity_and_halving() {
    let dir = TempDir::new().unwrap();
    let vs = emlabel::VoxelSize::new(8.0, 8.0, 8.0).unwrap();
    let vol = LabeledVolume::from_vec(
        emlabel::Dims::new(2, 4, 4).unwrap(),
        vs,
        Role::Semantic,
        (0..32).collect(),
    )
    .unwrap();
    let input = save(&dir, "in.vlv", vol);
    let out = dir.path().join("out.vlv");

    let o = emlabel(&["resample", "--in", s(&input), "--out", s(&out)]);
    assert_eq!(stdout(&o).trim(), "resample: 2x4x4 -> 2x4x4");
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&out).unwrap());

    let o = emlabel(&["resample", "--in", s(&input), "--out", s(&out), "--target-res", "16"]);
    assert_eq!(stdout(&o).trim(), "resample: 2x4x4 -> 2x2x2");
    let back = read_vlv(&out).unwrap();
    assert_eq!(back.voxel_size(), emlabel::VoxelSize::new(8.0, 16.0, 16.0).unwrap());
}

#[test]
fn tile_then_stitch() {
    let dir = TempDir::new().unwrap();
    let n = 2 * 5 * 7;
    let vol = LabeledVolume::from_shape([2, 5, 7], Role::Instance, (0..n as u64).collect()).unwrap();
    let input = save(&dir, "in.vlv", vol);
    let tiles = dir.path().join("tiles");
    let o = emlabel(&["tile", "--in", s(&input), "--out-dir", s(&tiles), "--tile", "3x4", "--overlap", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("tile: tiles=8 "), "{}", stdout(&o));
    let out = dir.path().join("back.vlv");
    let o = emlabel(&["stitch", "--index", s(&tiles.join("tiles.json")), "--out", s(&out)]);
    assert_eq!(stdout(&o).trim(), "stitch: tiles=8 dims=2x5x7");
    assert_eq!(std::fs::read(&input).unwrap(), std::fs::read(&out).unwrap());
}

#[test]
fn fragreport_on_spanning_line() {
    let dir = TempDir::new().unwrap();
    let mut data = vec![0u64; 4 * 8];
    for x in 0..8 {
        data[8 + x] = 1;
    }
    let input = save(&dir, "line.vlv", LabeledVolume::from_shape([1, 4, 8], Role::Semantic, data).unwrap());
    let csv = dir.path().join("frag.csv");
    let o = emlabel(&["fragreport", "--in", s(&input), "--tile", "4x4", "--csv", s(&csv)]);
    assert_eq!(
        stdout(&o).trim(),
        "fragreport: instances_global=1 instances_after_tiling=2 split_instances=1"
    );
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "instance_id,fragments\n1,2\n");
}

#[test]
fn output_is_thread_count_invariant() {
    let dir = TempDir::new().unwrap();
    let input = save(&dir, "sem.vlv", two_blobs());
    let a = dir.path().join("a.vlv");
    let b = dir.path().join("b.vlv");
    let oa = emlabel(&["--threads", "1", "convert", "--in", s(&input), "--out", s(&a), "--schedule", "sync"]);
    let ob = emlabel(&["convert", "--in", s(&input), "--out", s(&b), "--schedule", "sync", "--threads", "3", "--seed", "5"]);
    assert_eq!(stdout(&oa), stdout(&ob));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = emlabel(&["stats", "--in", "x", "--csv", "y", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}
