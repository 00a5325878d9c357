//! Subcommands of the `buddy` tool. `main.rs` only parses arguments and maps
//! errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use buddy_core::codec::{compress_block, decompress_block, size_bucket, size_class, Block128, CompressedBlock, BLOCK_BYTES};
use buddy_core::gen::{generate_series, generate_trace, GenConfig, Mix, PatternRegistry, TraceKind};
use buddy_core::memory::snapshot::series_path;
use buddy_core::memory::{heatmap_matrix, load_series, load_snapshot, write_snapshot, Snapshot, TargetRatio, Targets};
use buddy_core::profiler::{build_histograms, select_targets, sweep_thresholds, ProfileResult, ThresholdConfig};
use buddy_core::sim::trace::write_trace_csv;
use buddy_core::sim::{load_trace, run_trace, timeseries_report, CostModelParams, MetadataCacheConfig};
use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use buddy_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("usage: {0}")]
    Usage(String),
    /// A result the tool checks for itself turned out wrong.
    #[error("internal check failed: {0}")]
    Internal(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::Io(_)) => 2,
            CliError::Internal(_) => 3,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "buddy", version, about = "Buddy Compression simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compression ratio of snapshots under 8-bucket accounting.
    Stats(StatsArgs),
    /// Per-entry sector heatmap of one snapshot as CSV and PGM.
    Heatmap(HeatmapArgs),
    /// Choose per-allocation target ratios from a snapshot series.
    Profile(ProfileArgs),
    /// Replay an access trace against a snapshot.
    Simulate(SimulateArgs),
    /// Generate a synthetic snapshot series with a class manifest.
    Gen(GenArgs),
    /// Codec roundtrip checks.
    Codec(CodecArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(required = true)]
    pub snapshots: Vec<PathBuf>,
    /// Also write the per-allocation breakdown as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    pub snapshot: PathBuf,
    /// Output stem; writes <out>.csv and <out>.pgm.
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(required = true)]
    pub snapshots: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.30)]
    pub threshold: f64,
    /// Comma separated thresholds to sweep.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    #[arg(long)]
    pub no_zero_mode: bool,
    /// Maximum overall compression ratio.
    #[arg(long, default_value_t = 4.0)]
    pub carveout_cap: f64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Profile JSON, or a plain object mapping allocation id to target.
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, default_value_t = 150.0)]
    pub link_gbps: f64,
    #[arg(long, default_value_t = 900.0)]
    pub device_gbps: f64,
    #[arg(long, default_value_t = 64)]
    pub metadata_cache_kb: usize,
    #[arg(long, default_value_t = 1)]
    pub windows: usize,
    /// Report JSON; the window table goes next to it as <stem>_windows.csv.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub entries: usize,
    /// zero:ramp:random fractions, or name=fraction pairs.
    #[arg(long, default_value = "0.4:0.3:0.3")]
    pub mix: String,
    #[arg(long, default_value_t = 1)]
    pub snapshots: usize,
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub allocs: usize,
    #[arg(long)]
    pub shuffle: bool,
    /// Also write a random trace of this many events over the first snapshot.
    #[arg(long)]
    pub trace_events: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub write_fraction: f64,
    /// Output stem; writes <stem>_<i>.bdyc, <stem>_manifest.csv and <stem>_trace.csv.
    pub out_stem: PathBuf,
}

#[derive(Debug, Args)]
pub struct CodecArgs {
    #[arg(long, conflicts_with = "roundtrip", required_unless_present = "roundtrip")]
    pub selftest: bool,
    /// Roundtrip a file as a sequence of zero-padded 128-byte blocks.
    #[arg(long)]
    pub roundtrip: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Caps the rayon pool from `BUDDY_SIM_THREADS` if set.
pub fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("BUDDY_SIM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("BUDDY_SIM_THREADS={v:?} is not a positive integer")))?;
        // a second call in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs one command, returning the human-readable summary.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Stats(a) => cmd_stats(&a),
        Command::Heatmap(a) => cmd_heatmap(&a),
        Command::Profile(a) => cmd_profile(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Gen(a) => cmd_gen(&a),
        Command::Codec(a) => cmd_codec(&a),
    }
}

/// Fails with an I/O error naming the path when an input cannot be read.
fn check_readable(paths: &[PathBuf]) -> CliResult<()> {
    for p in paths {
        if let Err(e) = fs::metadata(p) {
            return Err(CliError::Core(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display())))));
        }
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| {
        CliError::Core(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

// ---- stats

/// 128 bytes per entry over the summed bucket sizes; `None` when every entry is zero.
pub fn bucket_ratio(entries: u64, bucket_bytes: u64) -> Option<f64> {
    (bucket_bytes > 0).then(|| (entries * BLOCK_BYTES as u64) as f64 / bucket_bytes as f64)
}

fn fmt_human(r: Option<f64>) -> String {
    r.map_or("∞ (all-zero)".into(), |r| format!("{r:.4}"))
}

fn fmt_csv(r: Option<f64>) -> String {
    r.map_or(String::new(), |r| r.to_string())
}

fn alloc_bucket_bytes(s: &Snapshot) -> Vec<(u64, u64, u64)> {
    s.allocations
        .iter()
        .map(|a| {
            let bytes: u64 = (0..a.entries())
                .into_par_iter()
                .map(|e| size_bucket(&a.block(e)).bytes() as u64)
                .sum();
            (a.record.alloc_id, a.entries() as u64, bytes)
        })
        .collect()
}

pub fn cmd_stats(a: &StatsArgs) -> CliResult<String> {
    check_readable(&a.snapshots)?;
    let series = load_series(&a.snapshots)?;
    let mut human = String::new();
    let mut csv = String::from("snapshot,alloc_id,entries,bucket_bytes,ratio\n");
    let (mut all_entries, mut all_bytes) = (0u64, 0u64);
    for s in &series {
        let rows = alloc_bucket_bytes(s);
        let entries: u64 = rows.iter().map(|r| r.1).sum();
        let bytes: u64 = rows.iter().map(|r| r.2).sum();
        all_entries += entries;
        all_bytes += bytes;
        let _ = writeln!(human, "snapshot {}: ratio {} over {entries} entries", s.index, fmt_human(bucket_ratio(entries, bytes)));
        for (id, n, b) in rows {
            let r = bucket_ratio(n, b);
            let _ = writeln!(human, "  alloc {id}: {n} entries, ratio {}", fmt_human(r));
            let _ = writeln!(csv, "{},{id},{n},{b},{}", s.index, fmt_csv(r));
        }
        let _ = writeln!(csv, "{},all,{entries},{bytes},{}", s.index, fmt_csv(bucket_ratio(entries, bytes)));
    }
    let mean = bucket_ratio(all_entries, all_bytes);
    let _ = writeln!(human, "mean ratio {} over {} snapshots", fmt_human(mean), series.len());
    let _ = writeln!(csv, "mean,all,{all_entries},{all_bytes},{}", fmt_csv(mean));
    if let Some(p) = &a.csv {
        write_file(p, csv)?;
    }
    Ok(human)
}

// ---- heatmap

pub fn heatmap_csv(rows: &[[u8; 64]]) -> String {
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().map(u8::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Binary PGM, 64 columns, one row per page, maxval 4.
pub fn heatmap_pgm(rows: &[[u8; 64]]) -> Vec<u8> {
    let mut out = format!("P5\n64 {}\n4\n", rows.len()).into_bytes();
    for r in rows {
        out.extend_from_slice(r);
    }
    out
}

pub fn cmd_heatmap(a: &HeatmapArgs) -> CliResult<String> {
    check_readable(std::slice::from_ref(&a.snapshot))?;
    let s = load_snapshot(&a.snapshot)?;
    let rows = heatmap_matrix(&s);
    write_file(&a.out.with_extension("csv"), heatmap_csv(&rows))?;
    write_file(&a.out.with_extension("pgm"), heatmap_pgm(&rows))?;
    Ok(format!("heatmap: {} pages x 64 entries\n", rows.len()))
}

// ---- profile

pub fn cmd_profile(a: &ProfileArgs) -> CliResult<String> {
    let cfg = ThresholdConfig {
        buddy_threshold: a.threshold,
        zero_mode_enabled: !a.no_zero_mode,
        carveout_cap: a.carveout_cap,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    check_readable(&a.snapshots)?;
    let series = load_series(&a.snapshots)?;
    let hists = build_histograms(&series)?;
    let mut result = select_targets(&hists, &cfg);
    if let Some(th) = &a.sweep {
        result.sweep = Some(sweep_thresholds(&hists, th, &cfg).map_err(|e| CliError::Usage(e.to_string()))?);
    }
    write_file(&a.out, result.to_json() + "\n")?;
    let mut human = format!(
        "threshold {}: predicted ratio {:.4}, buddy fraction {:.6}\n",
        result.threshold, result.predicted_ratio, result.predicted_buddy_fraction
    );
    for p in &result.allocations {
        let _ = writeln!(human, "  alloc {}: {}", p.alloc_id, p.target);
    }
    Ok(human)
}

// ---- simulate

pub fn load_targets(path: &Path) -> CliResult<Targets> {
    let text = fs::read_to_string(path)?;
    if let Ok(p) = ProfileResult::from_json(&text) {
        return Ok(p.targets());
    }
    serde_json::from_str::<std::collections::BTreeMap<u64, TargetRatio>>(&text)
        .map_err(|e| CliError::Core(Error::Config(format!("{}: not a profile or target map: {e}", path.display()))))
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliResult<String> {
    let cost = CostModelParams {
        device_gbps: a.device_gbps,
        link_gbps: a.link_gbps,
        ..Default::default()
    };
    cost.validate()?;
    let cache = MetadataCacheConfig::with_total_kb(a.metadata_cache_kb)?;
    if a.windows == 0 {
        return Err(CliError::Usage("--windows must be at least 1".into()));
    }
    check_readable(&[a.snapshot.clone(), a.targets.clone(), a.trace.clone()])?;
    let snapshot = load_snapshot(&a.snapshot)?;
    let targets = load_targets(&a.targets)?;
    let trace = load_trace(&a.trace)?;
    let mut report = run_trace(&snapshot, &targets, &trace, cache, cost)?;
    report.windows = timeseries_report(&report, a.windows)?;
    write_file(&a.out, report.to_json() + "\n")?;
    write_file(&sibling(&a.out, "_windows.csv"), report.windows_csv())?;
    Ok(format!(
        "{} events: metadata hit rate {:.6}, buddy access fraction {:.6}, ratio {:.4}, slowdown {:.4}\n",
        report.events,
        report.metadata_hit_rate,
        report.buddy_access_fraction,
        report.compression_ratio,
        report.estimated_slowdown
    ))
}

// ---- gen

pub fn cmd_gen(a: &GenArgs) -> CliResult<String> {
    let reg = PatternRegistry::builtin();
    let mix = Mix::parse(&a.mix, &reg).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cfg = GenConfig::new(a.entries, mix);
    cfg.snapshots = a.snapshots;
    cfg.drift = a.drift;
    cfg.seed = a.seed;
    cfg.allocations = a.allocs;
    cfg.shuffle = a.shuffle;
    cfg.validate(&reg).map_err(|e| CliError::Usage(e.to_string()))?;
    let g = generate_series(&cfg, &reg)?;
    for s in &g.snapshots {
        write_snapshot(s, series_path(&a.out_stem, s.index))?;
    }
    write_file(&sibling(&a.out_stem, "_manifest.csv"), g.manifest_csv())?;
    if let Some(events) = a.trace_events {
        if !(0.0..=1.0).contains(&a.write_fraction) {
            return Err(CliError::Usage(format!("write fraction {} outside [0, 1]", a.write_fraction)));
        }
        let kind = TraceKind::Random {
            events,
            write_fraction: a.write_fraction,
        };
        write_trace_csv(&generate_trace(&g.snapshots[0], kind, a.seed), sibling(&a.out_stem, "_trace.csv"))?;
    }
    Ok(format!("generated {} snapshots of {} entries\n", g.snapshots.len(), a.entries))
}

// ---- codec

/// All-zero, all-ones, ramps of every stride 1..=255 both ways, and
/// sign-boundary patterns.
pub fn structured_corpus() -> Vec<Block128> {
    let mut v = vec![Block128::zeroed(), Block128::from_fn(|_| u32::MAX)];
    for stride in 1..=255u32 {
        v.push(Block128::from_fn(|i| stride * i as u32));
        v.push(Block128::from_fn(|i| u32::MAX - stride * i as u32));
        v.push(Block128::from_fn(|i| 0x7fff_ff00u32.wrapping_add(stride * i as u32)));
    }
    for i in 0..32 {
        v.push(Block128::from_fn(|j| if j < i { 0x7fff_ffff } else { 0x8000_0000 }));
        v.push(Block128::from_fn(|j| if j == i { u32::MAX } else { 0 }));
        v.push(Block128::from_fn(|j| if (j + i) % 2 == 0 { 0 } else { 0x8000_0000 }));
    }
    v
}

/// Seeded random block `i`; each block has its own stream so chunks can be
/// generated in parallel and still match a sequential run.
pub fn seeded_block(seed: u64, i: u64) -> Block128 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    Block128::from_fn(|_| rng.next_u32())
}

/// Roundtrip plus quantization checks for one block. Returns a description
/// of the first violation.
pub fn check_block(b: &Block128) -> Result<(), String> {
    let cb = compress_block(b);
    let back = decompress_block(&cb).map_err(|e| e.to_string())?;
    if back != *b {
        return Err("roundtrip mismatch".into());
    }
    let stored = cb.stored_bytes();
    let class = size_class(b);
    if !b.is_zero() && size_bucket(b).bytes() < stored {
        return Err(format!("bucket {} below {stored} stored bytes", size_bucket(b).bytes()));
    }
    if !(1..=4).contains(&class.sectors()) || class.sectors() * 32 < stored {
        return Err(format!("class {class} cannot hold {stored} bytes"));
    }
    if (class == buddy_core::codec::SizeClass::Raw) != (cb.byte_len() >= BLOCK_BYTES) {
        return Err(format!("class {class} for {} compressed bytes", cb.byte_len()));
    }
    Ok(())
}

fn selftest(blocks: usize, seed: u64) -> CliResult<String> {
    let start = Instant::now();
    let failures: Vec<String> = structured_corpus()
        .par_iter()
        .enumerate()
        .filter_map(|(i, b)| check_block(b).err().map(|e| format!("structured block {i}: {e}")))
        .chain(
            (0..blocks as u64)
                .into_par_iter()
                .filter_map(|i| check_block(&seeded_block(seed, i)).err().map(|e| format!("random block {i}: {e}"))),
        )
        .collect();
    let elapsed = start.elapsed().as_secs_f64();

    // a stream cut short must be reported, not decoded
    let ramp = compress_block(&Block128::from_fn(|i| 100 + 7 * i as u32));
    let cut = CompressedBlock {
        bit_length: ramp.bit_length - 1,
        ..ramp
    };
    let corrupt = match decompress_block(&cut) {
        Err(e) => format!("corrupted stream rejected: {e}\n"),
        Ok(_) => return Err(CliError::Internal("truncated stream decoded without error".into())),
    };
    if let Some(f) = failures.first() {
        return Err(CliError::Internal(format!("{} failures, first: {f}", failures.len())));
    }
    let mb = (blocks + structured_corpus().len()) as f64 * BLOCK_BYTES as f64 / 1e6;
    Ok(format!(
        "selftest pass: {blocks} random + {} structured blocks in {elapsed:.2}s ({:.1} MB/s)\n{corrupt}",
        structured_corpus().len(),
        mb / elapsed.max(1e-9)
    ))
}

fn roundtrip_file(path: &Path) -> CliResult<String> {
    check_readable(&[path.to_path_buf()])?;
    let data = fs::read(path)?;
    let blocks: Vec<Block128> = data
        .chunks(BLOCK_BYTES)
        .map(|c| {
            let mut buf = [0u8; BLOCK_BYTES];
            buf[..c.len()].copy_from_slice(c);
            Block128::from_bytes(&buf)
        })
        .collect();
    let results: Vec<Result<usize, String>> = blocks
        .par_iter()
        .map(|b| {
            let cb = compress_block(b);
            match decompress_block(&cb) {
                Ok(back) if back == *b => Ok(cb.stored_bytes()),
                Ok(_) => Err("roundtrip mismatch".into()),
                Err(e) => Err(e.to_string()),
            }
        })
        .collect();
    if let Some((i, Err(e))) = results.iter().enumerate().find(|(_, r)| r.is_err()) {
        return Err(CliError::Internal(format!("block {i}: {e}")));
    }
    let stored: usize = results.iter().map(|r| *r.as_ref().unwrap()).sum();
    Ok(format!(
        "roundtrip pass: {} blocks, {} bytes compressed to {stored}\n",
        blocks.len(),
        blocks.len() * BLOCK_BYTES
    ))
}

pub fn cmd_codec(a: &CodecArgs) -> CliResult<String> {
    match &a.roundtrip {
        Some(p) => roundtrip_file(p),
        None => selftest(a.blocks, a.seed),
    }
}
