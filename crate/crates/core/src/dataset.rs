//! Trajectory files, sidecar manifests, set batching and translation augmentation.
//!
//! Binary layout (little-endian): a 53-byte header
//!
//! | field | type |
//! |---|---|
//! | magic `MQTJ` | 4 bytes |
//! | version (1) | u16 |
//! | L, T = 2L | u16, u16 |
//! | gamma | f64 |
//! | task, label, noise flag | u8 ×3 |
//! | p1q, p2q | f64 ×2 |
//! | count, master seed | u64 ×2 |
//!
//! followed by `count` records of `ceil(2L²/8)` bytes each. Bit `i = t·L + x`
//! of a record lives in byte `i / 8` at position `i % 8` (LSB first).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuits::{TaskKind, TrajectoryRecord};
use crate::rng::{stream_rng, stream_seed};
use crate::statevec::NoiseModel;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MQTJ";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 53;

/// Metadata shared by every record of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub l: usize,
    pub gamma: f64,
    pub task: TaskKind,
    pub label: u8,
    pub noise: Option<NoiseModel>,
    pub master_seed: u64,
}

impl DatasetMeta {
    pub fn record_bytes(&self) -> usize {
        record_bytes(self.l)
    }

    fn check_record(&self, r: &TrajectoryRecord) -> Result<()> {
        if r.l != self.l
            || r.gamma.to_bits() != self.gamma.to_bits()
            || r.task != self.task
            || r.label != self.label
        {
            return Err(Error::Metadata(format!(
                "record (L={}, gamma={}, task={:?}, label={}) does not match file (L={}, gamma={}, task={:?}, label={})",
                r.l, r.gamma, r.task, r.label, self.l, self.gamma, self.task, self.label
            )));
        }
        if r.bits.len() != 2 * r.l * r.l {
            return Err(Error::Metadata(format!("record has {} bits, expected {}", r.bits.len(), 2 * r.l * r.l)));
        }
        Ok(())
    }
}

pub fn record_bytes(l: usize) -> usize {
    (2 * l * l).div_ceil(8)
}

/// Packs a bit grid LSB-first.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b & 1) << (i % 8);
    }
    out
}

pub fn unpack_bits(bytes: &[u8], nbits: usize) -> Vec<u8> {
    (0..nbits).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()
}

fn encode_header(meta: &DatasetMeta, count: u64) -> Result<Vec<u8>> {
    let l = u16::try_from(meta.l).map_err(|_| Error::invalid("L does not fit in u16"))?;
    let t = l.checked_mul(2).ok_or_else(|| Error::invalid("2L does not fit in u16"))?;
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.extend_from_slice(&l.to_le_bytes());
    h.extend_from_slice(&t.to_le_bytes());
    h.extend_from_slice(&meta.gamma.to_le_bytes());
    h.push(meta.task.code());
    h.push(meta.label);
    let (flag, p1, p2) = match meta.noise {
        Some(n) => (1u8, n.p1q, n.p2q),
        None => (0u8, 0.0, 0.0),
    };
    h.push(flag);
    h.extend_from_slice(&p1.to_le_bytes());
    h.extend_from_slice(&p2.to_le_bytes());
    h.extend_from_slice(&count.to_le_bytes());
    h.extend_from_slice(&meta.master_seed.to_le_bytes());
    debug_assert_eq!(h.len(), HEADER_LEN);
    Ok(h)
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

fn le_f64(b: &[u8], at: usize) -> f64 {
    f64::from_bits(le_u64(b, at))
}

fn decode_header(h: &[u8]) -> Result<(DatasetMeta, u64)> {
    if h.len() < HEADER_LEN {
        return Err(Error::Format(format!("header truncated: {} of {HEADER_LEN} bytes", h.len())));
    }
    if &h[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = le_u16(h, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let l = le_u16(h, 6) as usize;
    let t = le_u16(h, 8) as usize;
    if t != 2 * l {
        return Err(Error::Format(format!("T = {t} but L = {l}")));
    }
    let gamma = le_f64(h, 10);
    let task = TaskKind::from_code(h[18])?;
    let label = h[19];
    let noise = match h[20] {
        0 => None,
        1 => Some(NoiseModel::new(le_f64(h, 21), le_f64(h, 29)).map_err(|e| Error::Format(e.to_string()))?),
        f => return Err(Error::Format(format!("bad noise flag {f}"))),
    };
    let count = le_u64(h, 37);
    let master_seed = le_u64(h, 45);
    Ok((DatasetMeta { l, gamma, task, label, noise, master_seed }, count))
}

/// Serializes a homogeneous batch of records.
pub fn encode_trajectories<W: Write>(mut out: W, meta: &DatasetMeta, records: &[TrajectoryRecord]) -> Result<()> {
    for r in records {
        meta.check_record(r)?;
    }
    out.write_all(&encode_header(meta, records.len() as u64)?)?;
    for r in records {
        out.write_all(&pack_bits(&r.bits))?;
    }
    Ok(())
}

/// Parses records; record `i` gets the trajectory seed of stream index `i`.
pub fn decode_trajectories<R: Read>(mut input: R) -> Result<(DatasetMeta, Vec<TrajectoryRecord>)> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_or(&mut input, &mut header, "header")?;
    let (meta, count) = decode_header(&header)?;
    let nbytes = meta.record_bytes();
    let nbits = 2 * meta.l * meta.l;
    let mut buf = vec![0u8; nbytes];
    let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
    for i in 0..count {
        read_exact_or(&mut input, &mut buf, "payload")?;
        records.push(TrajectoryRecord {
            l: meta.l,
            bits: unpack_bits(&buf, nbits),
            gamma: meta.gamma,
            task: meta.task,
            label: meta.label,
            trajectory_seed: stream_seed(meta.master_seed, i),
        });
    }
    Ok((meta, records))
}

fn read_exact_or<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated {what}")),
        _ => Error::Io(e),
    })
}

/// Sidecar manifest written next to each trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub l: usize,
    pub t: usize,
    pub gamma: f64,
    pub task: String,
    pub label: u8,
    pub count: u64,
    pub seed: u64,
    pub sha256: String,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Writes the trajectory file and its `.manifest.json` sidecar.
pub fn write_trajectories(path: &Path, meta: &DatasetMeta, records: &[TrajectoryRecord]) -> Result<Manifest> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + records.len() * meta.record_bytes());
    encode_trajectories(&mut bytes, meta, records)?;
    fs::write(path, &bytes)?;
    let manifest = Manifest {
        l: meta.l,
        t: 2 * meta.l,
        gamma: meta.gamma,
        task: meta.task.name().to_string(),
        label: meta.label,
        count: records.len() as u64,
        seed: meta.master_seed,
        sha256: hex::encode(Sha256::digest(&bytes)),
    };
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_trajectories(path: &Path) -> Result<(DatasetMeta, Vec<TrajectoryRecord>)> {
    let bytes = fs::read(path)?;
    let (meta, records) = decode_trajectories(bytes.as_slice())?;
    let expected = HEADER_LEN + records.len() * meta.record_bytes();
    if bytes.len() != expected {
        return Err(Error::Format(format!("file has {} bytes, expected {expected}", bytes.len())));
    }
    Ok((meta, records))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?)
}

/// Checks the sidecar checksum against the binary file.
pub fn verify_manifest(path: &Path) -> Result<bool> {
    let manifest = read_manifest(path)?;
    let digest = hex::encode(Sha256::digest(fs::read(path)?));
    Ok(digest == manifest.sha256)
}

/// A fixed-size set of trajectories sharing one label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub records: Vec<TrajectoryRecord>,
    pub label: u8,
}

impl TrajectorySet {
    pub fn new(records: Vec<TrajectoryRecord>) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::invalid("a set needs at least one record"))?;
        let (l, gamma, task, label) = (first.l, first.gamma, first.task, first.label);
        if records.iter().any(|r| r.l != l || r.gamma.to_bits() != gamma.to_bits() || r.task != task || r.label != label) {
            return Err(Error::Metadata("set members must share L, gamma, task and label".into()));
        }
        Ok(TrajectorySet { records, label })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn l(&self) -> usize {
        self.records[0].l
    }

    pub fn gamma(&self) -> f64 {
        self.records[0].gamma
    }
}

/// Sets produced by [`make_sets`].
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub sets: Vec<TrajectorySet>,
    /// Records left over after the last full set.
    pub dropped: usize,
    /// Set when fewer than `N` records were supplied.
    pub insufficient: bool,
}

/// Randomly permutes `records` and cuts them into `floor(M / N)` sets of `N`.
pub fn make_sets<R: Rng + ?Sized>(records: &[TrajectoryRecord], n: usize, rng: &mut R) -> Result<Partition> {
    if n == 0 {
        return Err(Error::invalid("set size N must be at least 1"));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(rng);
    let insufficient = n > records.len();
    if insufficient {
        log::warn!("only {} records for sets of size {n}", records.len());
    }
    let sets = order
        .chunks_exact(n)
        .map(|chunk| TrajectorySet::new(chunk.iter().map(|&i| records[i].clone()).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Partition { dropped: records.len() % n, sets, insufficient })
}

const RESHUFFLE_STREAM: u64 = 0x5e75_5e75_5e75_5e75;

/// Deterministic partition that changes every 10 epochs.
pub fn reshuffle_sets(records: &[TrajectoryRecord], n: usize, epoch: usize, master_seed: u64) -> Result<Partition> {
    let mut rng = stream_rng(master_seed ^ RESHUFFLE_STREAM, (epoch / 10) as u64);
    make_sets(records, n, &mut rng)
}

/// Cyclically shifts every time slice: site `x` moves to `(x + shift) mod L`.
pub fn translate_record(record: &TrajectoryRecord, shift: usize) -> TrajectoryRecord {
    let l = record.l;
    let shift = shift % l;
    let mut bits = vec![0u8; record.bits.len()];
    for (src, dst) in record.bits.chunks_exact(l).zip(bits.chunks_exact_mut(l)) {
        for x in 0..l {
            dst[(x + shift) % l] = src[x];
        }
    }
    TrajectoryRecord { bits, ..record.clone() }
}

/// All `L` translates of every record.
pub fn augment_translations(records: &[TrajectoryRecord]) -> Vec<TrajectoryRecord> {
    records
        .iter()
        .flat_map(|r| (0..r.l).map(move |s| translate_record(r, s)))
        .collect()
}
