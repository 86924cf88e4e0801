//! On-disk result store for spectrum tables and computed `Q` values.
//!
//! Records are keyed by (form content hash, modulus). Binary layout per
//! file: magic `CQS1`, `n` (u32 LE), modulus (u64 LE), form hash (32 bytes),
//! then the payload as little-endian `f64` pairs (plus integer counters).
//! Writes go to a temp file in the same directory and are renamed into
//! place, so a crash never leaves a partial record visible.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use num::complex::Complex64;

use crate::expsum::{ExpSumValue, Method, SpectrumTable};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CQS1";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub struct ResultStore {
    dir: PathBuf,
}

fn hash_prefix(hash: &[u8; 32]) -> String {
    hash[..8].iter().map(|b| format!("{b:02x}")).collect()
}

struct Header {
    n: u32,
    modulus: u64,
    hash: [u8; 32],
}

fn write_header(buf: &mut Vec<u8>, n: u32, modulus: u64, hash: &[u8; 32]) {
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&modulus.to_le_bytes());
    buf.extend_from_slice(hash);
}

fn read_header(data: &[u8]) -> Result<(Header, &[u8])> {
    if data.len() < 48 || &data[..4] != MAGIC {
        return Err(Error::Store("bad magic or truncated header".into()));
    }
    let n = u32::from_le_bytes(data[4..8].try_into().unwrap());
    let modulus = u64::from_le_bytes(data[8..16].try_into().unwrap());
    let mut hash = [0u8; 32];
    hash.copy_from_slice(&data[16..48]);
    Ok((Header { n, modulus, hash }, &data[48..]))
}

fn take_u64(data: &mut &[u8]) -> Result<u64> {
    if data.len() < 8 {
        return Err(Error::Store("truncated record".into()));
    }
    let v = u64::from_le_bytes(data[..8].try_into().unwrap());
    *data = &data[8..];
    Ok(v)
}

fn take_f64(data: &mut &[u8]) -> Result<f64> {
    Ok(f64::from_bits(take_u64(data)?))
}

impl ResultStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResultStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn spectrum_path(&self, hash: &[u8; 32], p: u64) -> PathBuf {
        self.dir.join(format!("sp_{}_p{p}.cqs", hash_prefix(hash)))
    }

    fn qvalues_path(&self, hash: &[u8; 32], k: u64) -> PathBuf {
        self.dir.join(format!("qv_{}_k{k}.cqs", hash_prefix(hash)))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let tmp = self.dir.join(format!(
            ".tmp.{}.{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn save_spectrum(&self, hash: &[u8; 32], table: &SpectrumTable) -> Result<()> {
        let mut buf = Vec::with_capacity(64 + table.data().len() * 16);
        write_header(&mut buf, table.n() as u32, table.p(), hash);
        buf.extend_from_slice(&table.zero_count().to_le_bytes());
        buf.extend_from_slice(&(table.data().len() as u64).to_le_bytes());
        for z in table.data() {
            buf.extend_from_slice(&z.re.to_bits().to_le_bytes());
            buf.extend_from_slice(&z.im.to_bits().to_le_bytes());
        }
        self.write_atomic(&self.spectrum_path(hash, table.p()), &buf)
    }

    /// Load a cached spectrum; `Ok(None)` when absent. The loaded table is
    /// revalidated (Parseval) before use, so silent corruption cannot slip
    /// through.
    pub fn load_spectrum(
        &self,
        hash: &[u8; 32],
        p: u64,
        n: usize,
    ) -> Result<Option<SpectrumTable>> {
        let path = self.spectrum_path(hash, p);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let (header, mut rest) = read_header(&bytes)?;
        if header.hash != *hash || header.modulus != p || header.n as usize != n {
            return Err(Error::Store(format!(
                "spectrum file {} does not match its key",
                path.display()
            )));
        }
        let zero_count = take_u64(&mut rest)?;
        let count = take_u64(&mut rest)? as usize;
        if rest.len() != count * 16 {
            return Err(Error::Store("spectrum payload size mismatch".into()));
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let re = take_f64(&mut rest)?;
            let im = take_f64(&mut rest)?;
            data.push(Complex64::new(re, im));
        }
        SpectrumTable::from_raw_parts(p, n, data, zero_count).map(Some)
    }

    /// Persist one `Q(m,k)` value, merging with existing records for this
    /// `(form, k)` file. Records are kept sorted by `m`.
    pub fn save_q(&self, hash: &[u8; 32], k: u64, m: &[u64], value: &ExpSumValue) -> Result<()> {
        let mut records = self.load_q_records(hash, k, m.len())?;
        let key: Vec<u64> = m.to_vec();
        match records.binary_search_by(|(mm, _)| mm.as_slice().cmp(key.as_slice())) {
            Ok(i) => records[i].1 = *value,
            Err(i) => records.insert(i, (key, *value)),
        }
        let mut buf = Vec::new();
        write_header(&mut buf, m.len() as u32, k, hash);
        buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
        for (mm, v) in &records {
            for &c in mm {
                buf.extend_from_slice(&c.to_le_bytes());
            }
            buf.extend_from_slice(&v.value.re.to_bits().to_le_bytes());
            buf.extend_from_slice(&v.value.im.to_bits().to_le_bytes());
            buf.extend_from_slice(&v.err.to_bits().to_le_bytes());
            buf.push(method_tag(v.method));
        }
        self.write_atomic(&self.qvalues_path(hash, k), &buf)
    }

    pub fn load_q(&self, hash: &[u8; 32], k: u64, m: &[u64]) -> Result<Option<ExpSumValue>> {
        let records = self.load_q_records(hash, k, m.len())?;
        Ok(records
            .binary_search_by(|(mm, _)| mm.as_slice().cmp(m))
            .ok()
            .map(|i| records[i].1))
    }

    fn load_q_records(
        &self,
        hash: &[u8; 32],
        k: u64,
        arity: usize,
    ) -> Result<Vec<(Vec<u64>, ExpSumValue)>> {
        let path = self.qvalues_path(hash, k);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let (header, mut rest) = read_header(&bytes)?;
        if header.hash != *hash || header.modulus != k || header.n as usize != arity {
            return Err(Error::Store(format!(
                "q-value file {} does not match its key",
                path.display()
            )));
        }
        let count = take_u64(&mut rest)?;
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut m = Vec::with_capacity(arity);
            for _ in 0..arity {
                m.push(take_u64(&mut rest)?);
            }
            let re = take_f64(&mut rest)?;
            let im = take_f64(&mut rest)?;
            let err = take_f64(&mut rest)?;
            if rest.is_empty() {
                return Err(Error::Store("truncated record".into()));
            }
            let method = parse_method_tag(rest[0])?;
            rest = &rest[1..];
            records.push((
                m,
                ExpSumValue {
                    value: Complex64::new(re, im),
                    err,
                    method,
                },
            ));
        }
        Ok(records)
    }
}

fn method_tag(m: Method) -> u8 {
    match m {
        Method::Naive => 0,
        Method::Gauss => 1,
        Method::Char => 2,
        Method::Crt => 3,
        Method::Stationary => 4,
    }
}

fn parse_method_tag(t: u8) -> Result<Method> {
    Ok(match t {
        0 => Method::Naive,
        1 => Method::Gauss,
        2 => Method::Char,
        3 => Method::Crt,
        4 => Method::Stationary,
        _ => return Err(Error::Store(format!("unknown method tag {t}"))),
    })
}
