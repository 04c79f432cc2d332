//! Desk-scale benchmark: per-resolution serialize/hash timing, algorithm
//! and batching comparison, and end-to-end pipeline timing against an
//! in-process three-member cluster.
//!
//! Absolute times are hardware-specific and never asserted; what the
//! trend check pins down is shape: total per-frame cost grows with pixel
//! count, MD5 stays at or below SHA-256, and hashing one frame in thirty
//! costs no more than hashing all of them. `docs/pi3_reference_timings.csv`
//! carries per-frame numbers measured on a Raspberry Pi 3 class device
//! for side-by-side plotting against a bench run.
//!
//! `bytes_hashed` counts the input to the ledger-write digests: for
//! per-frame and byte-batching that is the selected pixel volume; for
//! digest-batching it is the concatenated per-frame digests, which is
//! the whole point of that mode.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use serde::Deserialize;
use thiserror::Error;

use crate::digest::{timed_digest, DigestAlgorithm, WriteMode};
use crate::frame_io::{
    selected_count, synthetic_frame, SelectionPolicy, StreamHeader, StreamId, SyntheticStream,
};
use crate::ledger::{NetScript, SimCluster};
use crate::transport::{
    ingest_offline, run_capture_agent, CaptureConfig, MemArchive, VecDigestSink, VecFrameSink,
};

/// One benched stream shape.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ResolutionPreset {
    pub name: String,
    pub width: u32,
    pub height: u32,
}

impl ResolutionPreset {
    pub fn pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

/// The six standard presets, v1 through v6.
pub fn standard_presets() -> Vec<ResolutionPreset> {
    [
        ("v1", 256u32, 134u32),
        ("v2", 426, 224),
        ("v3", 640, 338),
        ("v4", 854, 450),
        ("v5", 1280, 674),
        ("v6", 1920, 1012),
    ]
    .into_iter()
    .map(|(name, width, height)| ResolutionPreset {
        name: name.to_string(),
        width,
        height,
    })
    .collect()
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub resolutions: Vec<ResolutionPreset>,
    pub frames: u64,
    pub reps: u32,
    pub e2e_reps: u32,
    pub algorithms: Vec<DigestAlgorithm>,
    pub modes: Vec<WriteMode>,
    pub policies: Vec<SelectionPolicy>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            resolutions: standard_presets(),
            frames: 303,
            reps: 20,
            e2e_reps: 3,
            algorithms: vec![DigestAlgorithm::Md5, DigestAlgorithm::Sha256],
            modes: vec![
                WriteMode::PerFrame,
                WriteMode::BatchBytes(30),
                WriteMode::BatchDigests(30),
            ],
            policies: vec![
                SelectionPolicy::All,
                SelectionPolicy::EveryNth(30),
                SelectionPolicy::EveryNth(15),
            ],
            seed: 1,
        }
    }
}

#[derive(Deserialize)]
struct BenchConfigFile {
    #[serde(default)]
    resolutions: Option<Vec<ResolutionPreset>>,
    #[serde(default)]
    frames: Option<u64>,
    #[serde(default)]
    reps: Option<u32>,
    #[serde(default)]
    e2e_reps: Option<u32>,
    #[serde(default)]
    algorithms: Option<Vec<String>>,
    #[serde(default)]
    modes: Option<Vec<String>>,
    #[serde(default)]
    policies: Option<Vec<String>>,
    #[serde(default)]
    seed: Option<u64>,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.reps < 3 {
            return Err(BenchError::Config("reps must be >= 3".into()));
        }
        if self.e2e_reps < 1 {
            return Err(BenchError::Config("e2e_reps must be >= 1".into()));
        }
        if self.resolutions.is_empty()
            || self.algorithms.is_empty()
            || self.modes.is_empty()
            || self.policies.is_empty()
        {
            return Err(BenchError::Config("empty config axis".into()));
        }
        for preset in &self.resolutions {
            if preset.width == 0 || preset.height == 0 {
                return Err(BenchError::Config(format!(
                    "preset {} has a zero dimension",
                    preset.name
                )));
            }
        }
        Ok(())
    }

    /// Loads a TOML config; absent keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let file: BenchConfigFile =
            toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        let mut config = BenchConfig::default();
        if let Some(resolutions) = file.resolutions {
            config.resolutions = resolutions;
        }
        if let Some(frames) = file.frames {
            config.frames = frames;
        }
        if let Some(reps) = file.reps {
            config.reps = reps;
        }
        if let Some(e2e_reps) = file.e2e_reps {
            config.e2e_reps = e2e_reps;
        }
        if let Some(algorithms) = file.algorithms {
            config.algorithms = algorithms
                .iter()
                .map(|s| DigestAlgorithm::parse(s))
                .collect::<Result<_, _>>()
                .map_err(|e| BenchError::Config(e.to_string()))?;
        }
        if let Some(modes) = file.modes {
            config.modes = modes
                .iter()
                .map(|s| WriteMode::parse(s))
                .collect::<Result<_, _>>()
                .map_err(|e| BenchError::Config(e.to_string()))?;
        }
        if let Some(policies) = file.policies {
            config.policies = policies
                .iter()
                .map(|s| SelectionPolicy::parse(s))
                .collect::<Result<_, _>>()
                .map_err(|e| BenchError::Config(e.to_string()))?;
        }
        if let Some(seed) = file.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

/// One (resolution, algorithm, mode, policy) measurement row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchCell {
    pub resolution: String,
    pub width: u32,
    pub height: u32,
    pub algorithm: DigestAlgorithm,
    pub mode: WriteMode,
    pub policy: SelectionPolicy,
    pub frames: u64,
    pub reps: u32,
    pub median_serialize_us: u64,
    pub median_hash_us: u64,
    pub median_e2e_us: u64,
    /// Bytes fed to the ledger-write digests under this mode.
    pub bytes_hashed: u64,
    /// Digest records produced.
    pub records: u64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchResult {
    pub cells: Vec<BenchCell>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench config: {0}")]
    Config(String),
    #[error("pipeline stage failed: {0}")]
    Pipeline(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn median_us(samples: &mut [u64]) -> u64 {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

/// Ledger-write digest input volume and record count for one cell.
pub fn mode_arithmetic(
    frame_bytes: u64,
    selected: u64,
    mode: WriteMode,
    algorithm: DigestAlgorithm,
) -> (u64, u64) {
    let records = if selected == 0 {
        0
    } else {
        selected.div_ceil(mode.k())
    };
    let bytes = match mode {
        WriteMode::PerFrame | WriteMode::BatchBytes(_) => selected * frame_bytes,
        WriteMode::BatchDigests(_) => selected * algorithm.output_len() as u64,
    };
    (bytes, records)
}

fn e2e_once(
    header: &StreamHeader,
    config: &BenchConfig,
    algorithm: DigestAlgorithm,
    mode: WriteMode,
    policy: SelectionPolicy,
) -> Result<u64, BenchError> {
    let start = Instant::now();
    let mut digest_sink = VecDigestSink::default();
    let mut frame_sink = VecFrameSink::default();
    let frames = SyntheticStream::new(*header, config.seed)
        .map_err(|e| BenchError::Pipeline(e.to_string()))?;
    run_capture_agent(
        header,
        frames.map(Ok),
        &CaptureConfig {
            policy,
            algorithm,
            mode,
            drop_prob: 0.0,
            seed: config.seed,
        },
        &mut digest_sink,
        &mut frame_sink,
    )
    .map_err(|e| BenchError::Pipeline(e.to_string()))?;
    let report = ingest_offline(
        MemArchive::default(),
        &frame_sink.datagrams,
        &digest_sink.messages,
    );
    drop(frame_sink);
    if report.protocol_error.is_some() || !report.discarded.is_empty() {
        return Err(BenchError::Pipeline("lossless ingest discarded records".into()));
    }
    let mut cluster =
        SimCluster::new_in_memory(3, config.seed).map_err(|e| BenchError::Pipeline(e.to_string()))?;
    for record in &report.committed {
        cluster.submit(record.clone());
    }
    cluster
        .run_until_drained(&NetScript::reorder_only(config.seed), 1024)
        .map_err(|e| BenchError::Pipeline(e.to_string()))?;
    Ok(start.elapsed().as_micros() as u64)
}

/// Runs the whole grid. Timing loops are sequential on purpose: cells
/// must not contend with each other.
pub fn run_bench(config: &BenchConfig) -> Result<BenchResult, BenchError> {
    config.validate()?;
    // Serialize/hash medians depend only on (resolution, algorithm).
    let mut timing: BTreeMap<(String, u8), (u64, u64)> = BTreeMap::new();
    for preset in &config.resolutions {
        let header = StreamHeader {
            stream_id: StreamId::from_seed(config.seed),
            width: preset.width,
            height: preset.height,
            channels: 1,
            fps_numerator: 30,
            fps_denominator: 1,
            frame_count: 1,
        };
        let frame = synthetic_frame(&header, config.seed, 0);
        for &algorithm in &config.algorithms {
            for _ in 0..3 {
                timed_digest(&frame, algorithm); // warmup
            }
            let mut serialize_ns: Vec<u64> = Vec::with_capacity(config.reps as usize);
            let mut hash_ns: Vec<u64> = Vec::with_capacity(config.reps as usize);
            for _ in 0..config.reps {
                let timed = timed_digest(&frame, algorithm);
                serialize_ns.push(timed.serialize_duration.as_nanos() as u64);
                hash_ns.push(timed.hash_duration.as_nanos() as u64);
            }
            let key = (preset.name.clone(), algorithm.wire_code());
            timing.insert(
                key,
                (
                    median_us(&mut serialize_ns) / 1_000,
                    median_us(&mut hash_ns) / 1_000,
                ),
            );
            debug!(
                "{} {}: serialize/hash medians cached",
                preset.name, algorithm
            );
        }
    }

    let mut cells = Vec::new();
    for preset in &config.resolutions {
        let header = StreamHeader {
            stream_id: StreamId::from_seed(config.seed),
            width: preset.width,
            height: preset.height,
            channels: 1,
            fps_numerator: 30,
            fps_denominator: 1,
            frame_count: config.frames,
        };
        let frame_bytes = header.frame_len() as u64;
        for &algorithm in &config.algorithms {
            let (median_serialize_us, median_hash_us) =
                timing[&(preset.name.clone(), algorithm.wire_code())];
            for &mode in &config.modes {
                for &policy in &config.policies {
                    let mut e2e: Vec<u64> = Vec::with_capacity(config.e2e_reps as usize);
                    for _ in 0..config.e2e_reps {
                        e2e.push(e2e_once(&header, config, algorithm, mode, policy)?);
                    }
                    let selected = selected_count(policy, config.frames)
                        .map_err(|e| BenchError::Pipeline(e.to_string()))?;
                    let (bytes_hashed, records) =
                        mode_arithmetic(frame_bytes, selected, mode, algorithm);
                    cells.push(BenchCell {
                        resolution: preset.name.clone(),
                        width: preset.width,
                        height: preset.height,
                        algorithm,
                        mode,
                        policy,
                        frames: config.frames,
                        reps: config.reps,
                        median_serialize_us,
                        median_hash_us,
                        median_e2e_us: median_us(&mut e2e),
                        bytes_hashed,
                        records,
                    });
                    info!(
                        "bench cell done: {} {} {} {}",
                        preset.name, algorithm, mode, policy
                    );
                }
            }
        }
    }
    Ok(BenchResult { cells })
}

pub const CSV_HEADER: &str = "resolution,width,height,algorithm,mode,policy,frames,reps,median_serialize_us,median_hash_us,median_e2e_us,bytes_hashed,records";

/// Emits the result as CSV, one row per cell.
pub fn write_csv<W: Write>(result: &BenchResult, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for cell in &result.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            cell.resolution,
            cell.width,
            cell.height,
            cell.algorithm,
            cell.mode,
            cell.policy,
            cell.frames,
            cell.reps,
            cell.median_serialize_us,
            cell.median_hash_us,
            cell.median_e2e_us,
            cell.bytes_hashed,
            cell.records
        )?;
    }
    Ok(())
}

pub fn to_csv_string(result: &BenchResult) -> String {
    let mut buf = Vec::new();
    write_csv(result, &mut buf).expect("write to vec");
    String::from_utf8(buf).expect("csv is utf8")
}

/// Parses CSV emitted by [`write_csv`] back into cells.
pub fn parse_csv(text: &str) -> Result<BenchResult, BenchError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| BenchError::Csv("empty".into()))?;
    if header != CSV_HEADER {
        return Err(BenchError::Csv("unexpected header row".into()));
    }
    let mut cells = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(BenchError::Csv(format!(
                "row {}: expected 13 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let bad = |what: &str| BenchError::Csv(format!("row {}: bad {what}", lineno + 2));
        cells.push(BenchCell {
            resolution: fields[0].to_string(),
            width: fields[1].parse().map_err(|_| bad("width"))?,
            height: fields[2].parse().map_err(|_| bad("height"))?,
            algorithm: DigestAlgorithm::parse(fields[3]).map_err(|_| bad("algorithm"))?,
            mode: WriteMode::parse(fields[4]).map_err(|_| bad("mode"))?,
            policy: SelectionPolicy::parse(fields[5]).map_err(|_| bad("policy"))?,
            frames: fields[6].parse().map_err(|_| bad("frames"))?,
            reps: fields[7].parse().map_err(|_| bad("reps"))?,
            median_serialize_us: fields[8].parse().map_err(|_| bad("median_serialize_us"))?,
            median_hash_us: fields[9].parse().map_err(|_| bad("median_hash_us"))?,
            median_e2e_us: fields[10].parse().map_err(|_| bad("median_e2e_us"))?,
            bytes_hashed: fields[11].parse().map_err(|_| bad("bytes_hashed"))?,
            records: fields[12].parse().map_err(|_| bad("records"))?,
        });
    }
    Ok(BenchResult { cells })
}

/// One trend assertion outcome.
#[derive(Debug, Clone)]
pub struct TrendAssertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrendReport {
    pub assertions: Vec<TrendAssertion>,
}

impl TrendReport {
    pub fn all_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for a in &self.assertions {
            out.push_str(if a.pass { "PASS " } else { "FAIL " });
            out.push_str(&a.name);
            if !a.detail.is_empty() {
                out.push_str(": ");
                out.push_str(&a.detail);
            }
            out.push('\n');
        }
        out
    }
}

/// Shape checks over a bench result:
/// (a) median serialize+hash grows (non-strictly) with pixel count,
/// (b) MD5 median hash time is at most SHA-256's per resolution,
/// (c) hashing one frame in thirty never costs more end-to-end than
///     hashing every frame, per (resolution, algorithm, mode).
///
/// All six standard presets must be present; absolute times are never
/// compared against anything.
pub fn compare_trend(result: &BenchResult) -> TrendReport {
    let mut report = TrendReport::default();
    let present: std::collections::BTreeSet<&str> =
        result.cells.iter().map(|c| c.resolution.as_str()).collect();
    let missing: Vec<String> = standard_presets()
        .iter()
        .filter(|p| !present.contains(p.name.as_str()))
        .map(|p| p.name.clone())
        .collect();
    if !missing.is_empty() {
        report.assertions.push(TrendAssertion {
            name: "coverage".into(),
            pass: false,
            detail: format!("missing resolutions: {}", missing.join(", ")),
        });
        return report;
    }
    report.assertions.push(TrendAssertion {
        name: "coverage".into(),
        pass: true,
        detail: "all six presets present".into(),
    });

    // (a) monotone serialize+hash per algorithm over pixel count.
    let mut algos: Vec<DigestAlgorithm> = result.cells.iter().map(|c| c.algorithm).collect();
    algos.sort_unstable();
    algos.dedup();
    for algorithm in &algos {
        let mut points: BTreeMap<u64, (String, u64)> = BTreeMap::new();
        for cell in result.cells.iter().filter(|c| c.algorithm == *algorithm) {
            let pixels = cell.width as u64 * cell.height as u64;
            points.entry(pixels).or_insert_with(|| {
                (
                    cell.resolution.clone(),
                    cell.median_serialize_us + cell.median_hash_us,
                )
            });
        }
        let series: Vec<(String, u64)> = points.into_values().collect();
        let pass = series.windows(2).all(|w| w[0].1 <= w[1].1);
        report.assertions.push(TrendAssertion {
            name: format!("monotone-serialize+hash[{algorithm}]"),
            pass,
            detail: series
                .iter()
                .map(|(name, us)| format!("{name}={us}us"))
                .collect::<Vec<_>>()
                .join(" "),
        });
    }

    // (b) MD5 <= SHA-256 median hash time per resolution.
    let mut by_res: BTreeMap<String, BTreeMap<u8, u64>> = BTreeMap::new();
    for cell in &result.cells {
        by_res
            .entry(cell.resolution.clone())
            .or_default()
            .entry(cell.algorithm.wire_code())
            .or_insert(cell.median_hash_us);
    }
    for (resolution, algos) in &by_res {
        match (algos.get(&1), algos.get(&2)) {
            (Some(md5), Some(sha256)) => {
                report.assertions.push(TrendAssertion {
                    name: format!("md5<=sha256[{resolution}]"),
                    pass: md5 <= sha256,
                    detail: format!("md5={md5}us sha256={sha256}us"),
                });
            }
            _ => {
                report.assertions.push(TrendAssertion {
                    name: format!("md5<=sha256[{resolution}]"),
                    pass: false,
                    detail: "missing one algorithm".into(),
                });
            }
        }
    }

    // (c) EveryNth(30) e2e <= All e2e per (resolution, algorithm, mode).
    let mut pairs = 0;
    let mut failures = Vec::new();
    let mut index: BTreeMap<(String, u8, String, String), u64> = BTreeMap::new();
    for cell in &result.cells {
        index.insert(
            (
                cell.resolution.clone(),
                cell.algorithm.wire_code(),
                cell.mode.to_string(),
                cell.policy.to_string(),
            ),
            cell.median_e2e_us,
        );
    }
    for ((resolution, algo, mode, policy), &all_us) in &index {
        if policy != "all" {
            continue;
        }
        let key = (
            resolution.clone(),
            *algo,
            mode.clone(),
            "nth:30".to_string(),
        );
        if let Some(&nth_us) = index.get(&key) {
            pairs += 1;
            if nth_us > all_us {
                failures.push(format!("{resolution}/{algo}/{mode}: nth30={nth_us}us > all={all_us}us"));
            }
        }
    }
    report.assertions.push(TrendAssertion {
        name: "nth30<=all".into(),
        pass: pairs > 0 && failures.is_empty(),
        detail: if pairs == 0 {
            "no (all, nth:30) policy pairs in result".into()
        } else if failures.is_empty() {
            format!("{pairs} pairs hold")
        } else {
            failures.join("; ")
        },
    });
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(
        resolution: &str,
        width: u32,
        height: u32,
        algorithm: DigestAlgorithm,
        policy: SelectionPolicy,
        serialize_us: u64,
        hash_us: u64,
        e2e_us: u64,
    ) -> BenchCell {
        BenchCell {
            resolution: resolution.into(),
            width,
            height,
            algorithm,
            mode: WriteMode::PerFrame,
            policy,
            frames: 303,
            reps: 20,
            median_serialize_us: serialize_us,
            median_hash_us: hash_us,
            median_e2e_us: e2e_us,
            bytes_hashed: 0,
            records: 0,
        }
    }

    fn synthetic_result() -> BenchResult {
        let presets = standard_presets();
        let mut cells = Vec::new();
        for (i, preset) in presets.iter().enumerate() {
            let base = (i as u64 + 1) * 100;
            for algorithm in [DigestAlgorithm::Md5, DigestAlgorithm::Sha256] {
                let hash = if algorithm == DigestAlgorithm::Md5 {
                    base
                } else {
                    base + 50
                };
                for (policy, e2e) in [
                    (SelectionPolicy::All, base * 10),
                    (SelectionPolicy::EveryNth(30), base * 2),
                ] {
                    cells.push(cell(
                        &preset.name,
                        preset.width,
                        preset.height,
                        algorithm,
                        policy,
                        base / 2,
                        hash,
                        e2e,
                    ));
                }
            }
        }
        BenchResult { cells }
    }

    #[test]
    fn trend_passes_on_well_shaped_result() {
        let report = compare_trend(&synthetic_result());
        assert!(report.all_pass(), "{}", report.render());
    }

    #[test]
    fn trend_detects_swapped_rows() {
        let mut result = synthetic_result();
        // Swap v1 and v6 timing columns: monotonicity must fail.
        for cell in result.cells.iter_mut() {
            if cell.resolution == "v1" {
                cell.median_hash_us += 100_000;
                cell.median_serialize_us += 100_000;
            }
        }
        let report = compare_trend(&result);
        assert!(!report.all_pass());
        assert!(report
            .assertions
            .iter()
            .any(|a| a.name.starts_with("monotone") && !a.pass));
    }

    #[test]
    fn trend_fails_on_missing_resolutions() {
        let mut result = synthetic_result();
        result.cells.retain(|c| c.resolution == "v1");
        let report = compare_trend(&result);
        assert!(!report.all_pass());
        assert!(report.assertions[0].detail.contains("v2"));
    }

    #[test]
    fn csv_round_trips_exactly() {
        let result = synthetic_result();
        let text = to_csv_string(&result);
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed.cells, result.cells);
    }

    #[test]
    fn csv_rejects_malformed_rows() {
        assert!(parse_csv("bogus header\n").is_err());
        let text = format!("{CSV_HEADER}\nv1,256,134,md5,perframe,all,303\n");
        assert!(parse_csv(&text).is_err());
    }

    #[test]
    fn mode_arithmetic_matches_hand_computation() {
        // 303 selected at BatchDigests(30)/MD5: 11 records, each full
        // batch hashing 30 * 16 = 480 digest bytes, 303 * 16 total.
        let (bytes, records) =
            mode_arithmetic(34304, 303, WriteMode::BatchDigests(30), DigestAlgorithm::Md5);
        assert_eq!(records, 11);
        assert_eq!(bytes, 303 * 16);
        let (bytes, records) =
            mode_arithmetic(34304, 303, WriteMode::BatchBytes(30), DigestAlgorithm::Md5);
        assert_eq!(records, 11);
        assert_eq!(bytes, 303 * 34304);
        let (bytes, records) =
            mode_arithmetic(34304, 11, WriteMode::PerFrame, DigestAlgorithm::Sha256);
        assert_eq!(records, 11);
        assert_eq!(bytes, 11 * 34304);
        assert_eq!(mode_arithmetic(100, 0, WriteMode::PerFrame, DigestAlgorithm::Md5), (0, 0));
    }

    #[test]
    fn config_toml_overrides_defaults() {
        let text = r#"
frames = 60
reps = 5
algorithms = ["md5"]
policies = ["all", "nth:30"]

[[resolutions]]
name = "tiny"
width = 64
height = 48
"#;
        let config = BenchConfig::from_toml(text).unwrap();
        assert_eq!(config.frames, 60);
        assert_eq!(config.reps, 5);
        assert_eq!(config.algorithms, vec![DigestAlgorithm::Md5]);
        assert_eq!(config.resolutions.len(), 1);
        assert_eq!(config.resolutions[0].name, "tiny");
        // Defaults survive for unspecified keys.
        assert_eq!(config.e2e_reps, 3);
        assert!(BenchConfig::from_toml("reps = 1").is_err());
    }

    // run_bench itself is exercised by the acceptance suite with a
    // reduced grid; a full default run is a CLI-scale operation.
}
