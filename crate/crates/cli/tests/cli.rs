use std::path::Path;
use std::process::{Command, Output};

use buddy_core::codec::{Block128, SizeClass};
use buddy_core::memory::{write_snapshot, Allocation, AllocationRecord, Snapshot};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn buddy(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_buddy"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, blocks: &[Block128]) {
    let data: Vec<u8> = blocks.iter().flat_map(|b| b.to_bytes()).collect();
    let rec = AllocationRecord {
        alloc_id: 1,
        base_va: 0x10_0000,
        length_bytes: data.len() as u64,
    };
    let s = Snapshot::new(0, vec![Allocation::new(rec, data)]).unwrap();
    write_snapshot(&s, dir.join(name)).unwrap();
}

fn random_blocks(n: usize) -> Vec<Block128> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n).map(|_| Block128::from_fn(|_| rng.next_u32())).collect()
}

fn mean_ratio(csv: &str) -> String {
    csv.lines().last().unwrap().rsplit(',').next().unwrap().to_string()
}

#[test]
fn stats_bucket_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "zero.bdyc", &[Block128::zeroed(); 64]);
    write(d, "rand.bdyc", &random_blocks(64));
    let mut half = vec![Block128::zeroed(); 32];
    half.extend(random_blocks(32));
    write(d, "half.bdyc", &half);

    let out = buddy(d, &["stats", "zero.bdyc", "--csv", "z.csv"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("∞ (all-zero)"));
    assert_eq!(mean_ratio(&std::fs::read_to_string(d.join("z.csv")).unwrap()), "");

    buddy(d, &["stats", "rand.bdyc", "--csv", "r.csv"]);
    assert_eq!(mean_ratio(&std::fs::read_to_string(d.join("r.csv")).unwrap()), "1");
    // 128 / ((0 + 128) / 2)
    buddy(d, &["stats", "half.bdyc", "--csv", "h.csv"]);
    assert_eq!(mean_ratio(&std::fs::read_to_string(d.join("h.csv")).unwrap()), "2");
}

#[test]
fn gen_single_pattern_mixes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (mix, class) in [("1:0:0", SizeClass::Fits8B), ("0:0:1", SizeClass::Raw)] {
        assert!(buddy(d, &["gen", "--entries", "500", "--mix", mix, "--seed", "3", "g"]).status.success());
        let m = std::fs::read_to_string(d.join("g_manifest.csv")).unwrap();
        assert!(m.lines().skip(1).all(|l| l.ends_with(&format!(",{class}"))), "{mix}");
        assert_eq!(m.lines().count(), 501);
    }
    assert_eq!(buddy(d, &["gen", "--entries", "10", "--mix", "0.5:0.6:0", "g"]).status.code(), Some(1));
}

#[test]
fn heatmap_writes_csv_and_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "z.bdyc", &[Block128::zeroed(); 128]);
    assert!(buddy(d, &["heatmap", "z.bdyc", "hm"]).status.success());
    let pgm = std::fs::read(d.join("hm.pgm")).unwrap();
    let header = b"P5\n64 2\n4\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 128);
    let csv = std::fs::read_to_string(d.join("hm.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().all(|l| l.split(',').all(|v| v == "1")));
}

#[test]
fn codec_modes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = buddy(d, &["codec", "--selftest", "--blocks", "2000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("selftest pass") && stdout.contains("corrupted stream rejected"));

    std::fs::write(d.join("blob"), vec![7u8; 300]).unwrap();
    let out = buddy(d, &["codec", "--roundtrip", "blob"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("3 blocks"));
    assert_eq!(buddy(d, &["codec"]).status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(buddy(d, &["stats", "missing.bdyc"]).status.code(), Some(2));
    std::fs::write(d.join("bad.bdyc"), b"nope").unwrap();
    assert_eq!(buddy(d, &["stats", "bad.bdyc"]).status.code(), Some(1));
    write(d, "z.bdyc", &[Block128::zeroed(); 8]);
    assert_eq!(buddy(d, &["profile", "z.bdyc", "--threshold", "1.5", "-o", "p.json"]).status.code(), Some(1));
    assert_eq!(buddy(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(buddy(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn simulate_rejects_mismatched_targets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "z.bdyc", &[Block128::zeroed(); 8]);
    std::fs::write(d.join("t.json"), r#"{"9": "R2"}"#).unwrap();
    std::fs::write(d.join("tr.csv"), "op,va,size\nR,0x100000,128\n").unwrap();
    let args = ["simulate", "--snapshot", "z.bdyc", "--targets", "t.json", "--trace", "tr.csv", "-o", "r.json"];
    assert_eq!(buddy(d, &args).status.code(), Some(1));

    std::fs::write(d.join("t.json"), r#"{"1": "R2"}"#).unwrap();
    let out = buddy(d, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["events"], 1);
    assert!(d.join("r_windows.csv").exists());
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    buddy(d, &["gen", "--entries", "3000", "--snapshots", "2", "--drift", "0.1", "--seed", "5", "g"]);
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_buddy"))
            .current_dir(d)
            .env("BUDDY_SIM_THREADS", threads)
            .args(["profile", "g_0.bdyc", "g_1.bdyc", "-o", out])
            .output()
            .unwrap();
        assert!(o.status.success());
        std::fs::read(d.join(out)).unwrap()
    };
    assert_eq!(run("1", "a.json"), run("4", "b.json"));
    let bad = Command::new(env!("CARGO_BIN_EXE_buddy"))
        .current_dir(d)
        .env("BUDDY_SIM_THREADS", "zero")
        .args(["stats", "g_0.bdyc"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
