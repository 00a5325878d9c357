//! The ten acceptance criteria, run in order. Each prints one PASS/FAIL line
//! to stderr (written directly so the test harness does not capture it).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use buddy_cli::{check_block, seeded_block, structured_corpus};
use buddy_core::codec::{compress_block, decompress_block, size_class, Block128, SizeClass, BLOCK_BYTES};
use buddy_core::gen::{generate_series, generate_trace, GenConfig, Mix, PatternRegistry, TraceKind};
use buddy_core::memory::snapshot::series_path;
use buddy_core::memory::{
    entry_access_split, load_series, static_buddy_fraction, Allocation, AllocationRecord, MetadataStore, Snapshot,
    TargetRatio, Targets,
};
use buddy_core::profiler::{build_histograms, overflow_fraction, select_targets, sweep_thresholds, ThresholdConfig};
use buddy_core::sim::{
    cost_estimate, run_trace, CostModelParams, MetadataCacheConfig, Simulator, TraceEvent, TrafficCounters, WriteData,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn snapshot_of(allocs: &[Vec<Block128>]) -> Snapshot {
    let mut va = 0x1000_0000u64;
    let allocations = allocs
        .iter()
        .enumerate()
        .map(|(i, blocks)| {
            let data: Vec<u8> = blocks.iter().flat_map(|b| b.to_bytes()).collect();
            let len = data.len() as u64;
            let a = Allocation::new(
                AllocationRecord {
                    alloc_id: i as u64 + 1,
                    base_va: va,
                    length_bytes: len,
                },
                data,
            );
            va += len.next_multiple_of(8192) + 8192;
            a
        })
        .collect();
    Snapshot::new(0, allocations).unwrap()
}

fn all_targets(s: &Snapshot, t: TargetRatio) -> Targets {
    s.allocations.iter().map(|a| (a.record.alloc_id, t)).collect()
}

fn noisy_ramp(rng: &mut impl RngCore) -> Block128 {
    let bits = rng.gen_range(0..=24u32);
    let mask = ((1u64 << bits) - 1) as u32;
    let base = rng.next_u32();
    let stride = rng.gen_range(0..256u32);
    Block128::from_fn(|i| base.wrapping_add(stride * i as u32) ^ (rng.next_u32() & mask))
}

fn c1_codec_roundtrip() -> Outcome {
    let start = Instant::now();
    let mut blocks: Vec<Block128> = (0..1_000_000u64).map(|i| seeded_block(1, i)).collect();
    blocks.extend(structured_corpus());
    let t = Instant::now();
    let mut failures = 0usize;
    for b in &blocks {
        let cb = compress_block(b);
        match decompress_block(&cb) {
            Ok(back) if back == *b => {}
            _ => failures += 1,
        }
    }
    let codec_secs = t.elapsed().as_secs_f64();
    let total = start.elapsed().as_secs_f64();
    let mbps = (blocks.len() * BLOCK_BYTES) as f64 / 1e6 / codec_secs;
    let detail = format!("{} blocks, {failures} failures, {mbps:.0} MB/s, {total:.1}s total", blocks.len());
    ensure(failures == 0 && mbps >= 100.0 && total < 60.0, || detail.clone())?;
    Ok(detail)
}

fn c2_hand_sizes() -> Outcome {
    // written symbol by symbol from the code table
    let zero = "000".to_string() + "001" + "11111";
    let ramp = format!("1{:032b}001{:05b}00000001{:05b}", 100, 28, 0);
    let bits = |b: &Block128| {
        let cb = compress_block(b);
        (0..cb.bit_length)
            .map(|i| if cb.bytes[i / 8] >> (7 - i % 8) & 1 == 1 { '1' } else { '0' })
            .collect::<String>()
    };
    let got_zero = bits(&Block128::zeroed());
    let got_ramp = bits(&Block128::from_fn(|i| 100 + 7 * i as u32));
    ensure(got_zero == zero && zero.len() == 11, || format!("zero block encodes to {got_zero}"))?;
    ensure(got_ramp == ramp && ramp.len() == 54, || format!("ramp encodes to {got_ramp}"))?;
    Ok("zero 11 bits, ramp 54 bits, bit-exact".into())
}

fn c3_quantization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut blocks = structured_corpus();
    while blocks.len() < 100_000 {
        let b = if rng.gen_bool(0.5) {
            Block128::from_fn(|_| rng.next_u32())
        } else {
            noisy_ramp(&mut rng)
        };
        blocks.push(b);
    }
    let mut per_class = [0usize; 6];
    for (i, b) in blocks.iter().enumerate() {
        check_block(b).map_err(|e| format!("block {i}: {e}"))?;
        per_class[size_class(b).index()] += 1;
    }
    ensure(per_class.iter().all(|&n| n > 0), || format!("corpus misses a class: {per_class:?}"))?;
    Ok(format!("{} blocks, 0 violations, classes {per_class:?}", blocks.len()))
}

fn buddy_bin() -> &'static str {
    env!("CARGO_BIN_EXE_buddy")
}

fn run_bin(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(buddy_bin())
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("buddy {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn gen_corpus(dir: &Path, stem: &str, mix: &str, seed: u64, snapshots: usize) -> Result<Vec<Snapshot>, String> {
    let s = snapshots.to_string();
    let seed = seed.to_string();
    run_bin(
        dir,
        &["gen", "--entries", "6000", "--mix", mix, "--snapshots", &s, "--drift", "0.05", "--seed", &seed, "--allocs", "6", "--shuffle", stem],
    )?;
    let paths: Vec<_> = (0..snapshots).map(|i| series_path(&dir.join(stem), i)).collect();
    load_series(&paths).map_err(|e| e.to_string())
}

fn c4_profiler_oracle() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (k, mix) in ["zero=0.3,ramp=0.2,noisy=0.3,random=0.2", "zero=0.05,noisy=0.6,random=0.35", "0.7:0.2:0.1"]
        .iter()
        .enumerate()
    {
        let stem = format!("c{k}");
        let series = gen_corpus(dir.path(), &stem, mix, 40 + k as u64, 3)?;
        let manifest = std::fs::read_to_string(dir.path().join(format!("{stem}_manifest.csv"))).map_err(|e| e.to_string())?;
        let mut truth: BTreeMap<u64, [u64; 6]> = BTreeMap::new();
        for line in manifest.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let class: SizeClass = f[4].parse().map_err(|e| format!("{e}"))?;
            truth.entry(f[1].parse().unwrap()).or_default()[class.index()] += 1;
        }
        let hists = build_histograms(&series).map_err(|e| e.to_string())?;
        ensure(hists.len() == truth.len(), || "allocation count differs from manifest".into())?;
        for h in &hists {
            ensure(h.counts == truth[&h.alloc_id], || format!("alloc {} histogram {:?} vs manifest {:?}", h.alloc_id, h.counts, truth[&h.alloc_id]))?;
        }
        for th in [0.0, 0.1, 0.3, 0.5, 1.0] {
            let uncapped = ThresholdConfig { buddy_threshold: th, zero_mode_enabled: true, carveout_cap: f64::INFINITY };
            let r = select_targets(&hists, &uncapped);
            for (h, p) in hists.iter().zip(&r.allocations) {
                let best = TargetRatio::ALL
                    .into_iter()
                    .filter(|&t| overflow_fraction(h, t) <= th)
                    .max_by(|a, b| a.ratio().total_cmp(&b.ratio()))
                    .unwrap();
                ensure(p.target == best, || format!("alloc {} threshold {th}: chose {} over {best}", h.alloc_id, p.target))?;
                checked += 1;
            }
            let capped = select_targets(&hists, &ThresholdConfig { buddy_threshold: th, ..Default::default() });
            for (a, b) in r.allocations.iter().zip(&capped.allocations) {
                ensure(a.target == b.target || (a.target == TargetRatio::R16zero && b.target == TargetRatio::R4), || {
                    format!("cap changed {} to {}", a.target, b.target)
                })?;
            }
        }
    }
    Ok(format!("3 corpora match manifests, {checked} selections maximal"))
}

fn c5_sweep() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    for (k, mix) in ["zero=0.6,ramp=0.1,noisy=0.2,random=0.1", "0.8:0.1:0.1", "zero=0.3,noisy=0.5,random=0.2"].iter().enumerate() {
        let series = gen_corpus(dir.path(), &format!("s{k}"), mix, 50 + k as u64, 2)?;
        let hists = build_histograms(&series).map_err(|e| e.to_string())?;
        let table = sweep_thresholds(&hists, &[0.10, 0.20, 0.30, 0.40], &ThresholdConfig::default()).map_err(|e| e.to_string())?;
        for w in table.rows.windows(2) {
            ensure(w[0].ratio <= w[1].ratio && w[0].buddy_fraction <= w[1].buddy_fraction, || {
                format!("mix {mix}: {:?} then {:?}", w[0], w[1])
            })?;
        }
        ensure(table.rows.iter().all(|r| r.ratio <= 4.0) && table.unconstrained_best_ratio <= 4.0, || {
            format!("mix {mix}: cap exceeded {:?}", table.rows)
        })?;
        details.push(format!("{:.3}", table.rows[3].ratio));
    }
    Ok(format!("monotone, cap holds (ratios at 0.40: {})", details.join(", ")))
}

fn c6_static_dynamic() -> Outcome {
    let reg = PatternRegistry::builtin();
    let mut cfg = GenConfig::new(8000, Mix::parse("zero=0.25,ramp=0.25,noisy=0.3,random=0.2", &reg).unwrap());
    cfg.allocations = 5;
    cfg.shuffle = true;
    cfg.seed = 6;
    let s = generate_series(&cfg, &reg).map_err(|e| e.to_string())?.snapshots.remove(0);
    let trace = generate_trace(&s, TraceKind::Sequential, 0);
    for t in TargetRatio::ALL {
        let targets = all_targets(&s, t);
        let r = run_trace(&s, &targets, &trace, Default::default(), Default::default()).map_err(|e| e.to_string())?;
        let stat = static_buddy_fraction(&s, &targets).map_err(|e| e.to_string())?;
        ensure(r.buddy_access_fraction == stat, || format!("{t}: dynamic {} static {stat}", r.buddy_access_fraction))?;
    }
    Ok("all 5 targets agree bit-for-bit".into())
}

fn c7_metadata_cache() -> Outcome {
    let s = snapshot_of(&[vec![Block128::zeroed(); 64 * 40], vec![Block128::zeroed(); 64 * 24]]);
    let t = all_targets(&s, TargetRatio::R2);
    let r = run_trace(&s, &t, &generate_trace(&s, TraceKind::Sequential, 0), Default::default(), Default::default())
        .map_err(|e| e.to_string())?;
    ensure(r.metadata_hit_rate == 63.0 / 64.0, || format!("sequential hit rate {}", r.metadata_hit_rate))?;

    // 5 metadata lines in one set: 16 KB apart in metadata space, 32768 entries
    let stride = 32768u64;
    let big = snapshot_of(&[vec![Block128::zeroed(); 4 * stride as usize + 1]]);
    let base = big.allocations[0].record.base_va;
    let loop_trace: Vec<TraceEvent> = (0..500).map(|i| TraceEvent::read(base + 128 * stride * (i % 5), 128)).collect();
    let cfg = MetadataCacheConfig::default();
    let r = run_trace(&big, &all_targets(&big, TargetRatio::R2), &loop_trace, cfg, Default::default()).map_err(|e| e.to_string())?;
    ensure(r.metadata_hits == 0, || format!("conflict loop hit {} times", r.metadata_hits))?;

    let overhead = MetadataStore::new(1 << 20).capacity_overhead();
    ensure(overhead == 0.00390625, || format!("overhead {overhead}"))?;
    Ok("63/64 sequential, 0 hits on 5-line loop, overhead 0.390625%".into())
}

fn c8_no_data_movement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let blocks: Vec<Vec<Block128>> = (0..3)
        .map(|_| (0..96).map(|_| if rng.gen_bool(0.3) { Block128::zeroed() } else { noisy_ramp(&mut rng) }).collect())
        .collect();
    let s = snapshot_of(&blocks);
    let targets: Targets = [(1, TargetRatio::R2), (2, TargetRatio::R4), (3, TargetRatio::R16zero)].into();
    let mut sim = Simulator::new(&s, &targets, Default::default()).map_err(|e| e.to_string())?;
    let placements: Vec<Vec<_>> = (0..3).map(|a| (0..96).map(|e| sim.placement(a, e)).collect()).collect();
    let mut expect: Vec<Vec<[u8; 128]>> = blocks.iter().map(|v| v.iter().map(|b| b.to_bytes()).collect()).collect();
    let target_of = [TargetRatio::R2, TargetRatio::R4, TargetRatio::R16zero];

    for trial in 0..10_000 {
        let (a, e) = (rng.gen_range(0..3), rng.gen_range(0..96));
        let off = rng.gen_range(0..128usize);
        let len = rng.gen_range(1..=128 - off);
        let payload: Vec<u8> = match rng.gen_range(0..3) {
            0 => vec![0; len],
            1 => (0..len).map(|_| rng.gen()).collect(),
            _ => (0..len).map(|i| (i as u8).wrapping_mul(3)).collect(),
        };
        let va = s.allocations[a].record.base_va + (e * 128 + off) as u64;
        expect[a][e][off..off + len].copy_from_slice(&payload);
        sim.apply(trial, &TraceEvent::write(va, len as u32, WriteData::Payload(payload)))
            .map_err(|err| err.to_string())?;
        for (ai, row) in expect.iter().enumerate() {
            for (ei, bytes) in row.iter().enumerate() {
                let class = size_class(&Block128::from_bytes(bytes));
                ensure(sim.class_of(ai, ei) == class, || format!("trial {trial}: entry {ai}/{ei} class drifted"))?;
                ensure(sim.split_of(ai, ei) == entry_access_split(class, target_of[ai]), || {
                    format!("trial {trial}: entry {ai}/{ei} occupancy differs")
                })?;
                ensure(sim.placement(ai, ei) == placements[ai][ei], || format!("trial {trial}: entry {ai}/{ei} moved"))?;
            }
        }
    }
    Ok("10000 writes, only the written entry changed".into())
}

fn c9_cost_trends() -> Outcome {
    let counters = TrafficCounters {
        device_bytes: 40 << 20,
        buddy_bytes: 9 << 20,
        metadata_fill_bytes: 1 << 20,
        metadata_writeback_bytes: 1 << 18,
        ..Default::default()
    };
    let at = |link: f64| cost_estimate(&counters, &CostModelParams { link_gbps: link, ..Default::default() }, 64 << 20).unwrap();
    let s: Vec<f64> = [50.0, 100.0, 150.0, 200.0].into_iter().map(at).collect();
    ensure(s.windows(2).all(|w| w[0] >= w[1]), || format!("slowdowns {s:?}"))?;

    let zero = snapshot_of(&[vec![Block128::from_fn(|i| 100 + 7 * i as u32); 64 * 16]]);
    let r = run_trace(&zero, &all_targets(&zero, TargetRatio::R4), &generate_trace(&zero, TraceKind::Sequential, 0), Default::default(), Default::default())
        .map_err(|e| e.to_string())?;
    ensure(r.counters.buddy_bytes == 0 && r.estimated_slowdown <= 1.0, || format!("streaming slowdown {}", r.estimated_slowdown))?;
    Ok(format!(
        "link 50/100/150/200: {:.3} >= {:.3} >= {:.3} >= {:.3}; streaming {:.3}",
        s[0], s[1], s[2], s[3], r.estimated_slowdown
    ))
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    run_bin(d, &["gen", "--entries", "5000", "--mix", "zero=0.3,ramp=0.2,noisy=0.3,random=0.2", "--snapshots", "2", "--drift", "0.1", "--seed", "10", "--trace-events", "20000", "c"])?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let profile = format!("p{run}.json");
        let report = format!("r{run}.json");
        run_bin(d, &["profile", "c_0.bdyc", "c_1.bdyc", "--sweep", "0.1,0.2,0.3,0.4", "-o", &profile])?;
        run_bin(d, &["simulate", "--snapshot", "c_0.bdyc", "--targets", &profile, "--trace", "c_trace.csv", "--windows", "8", "-o", &report])?;
        let read = |f: String| std::fs::read(d.join(f)).map_err(|e| e.to_string());
        outputs.push((read(profile)?, read(report)?, read(format!("r{run}_windows.csv"))?));
    }
    ensure(outputs[0] == outputs[1], || "profile/simulate outputs differ between runs".into())?;
    Ok("profile JSON, report JSON and window CSV byte-identical".into())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("codec roundtrip and throughput", c1_codec_roundtrip),
        ("hand-computed sizes", c2_hand_sizes),
        ("quantization soundness", c3_quantization),
        ("profiler oracle equivalence", c4_profiler_oracle),
        ("threshold sweep monotonicity", c5_sweep),
        ("static/dynamic agreement", c6_static_dynamic),
        ("metadata cache oracle", c7_metadata_cache),
        ("no data movement", c8_no_data_movement),
        ("cost-model trends", c9_cost_trends),
        ("end-to-end determinism", c10_determinism),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(i + 1);
                ("FAIL", d)
            }
        };
        let _ = writeln!(err, "criterion {:>2} {tag}: {name}: {detail}", i + 1);
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
