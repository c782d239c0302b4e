//! On-disk sketch store.
//!
//! Records file (little-endian):
//!
//! ```text
//! header (40 bytes): "GTRC" | u32 version | u64 spec id | u64 K | u8 dtype (1 = f16) | 7 zero bytes | u64 count
//! record (24 + 2K bytes): u64 sample | u32 token (u32::MAX = whole sample) | u32 zero | K x u16 f16 bits | u64 checksum
//! ```
//!
//! The checksum is the first 8 bytes (little-endian) of the SHA-256 of the
//! record bytes before it. The index file sits next to the records file with
//! an `.idx` suffix and holds one `id<TAB>offset<TAB>flags` line per
//! committed record; it is rewritten through a temporary file and a rename,
//! so a reader always sees a complete index. The header count is updated
//! after the rename. Records past the last indexed one are uncommitted and
//! are cut off when the store is reopened for writing.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use half::f16;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sketch::{RapidGrad, SpecId};
use crate::source::SourceId;

pub const MAGIC: &[u8; 4] = b"GTRC";
pub const FORMAT_VERSION: u32 = 1;
pub const INDEX_VERSION: u32 = 1;
pub const DTYPE_F16: u8 = 1;
pub const HEADER_LEN: u64 = 40;
/// Index rewrites happen after this many uncommitted puts.
pub const COMMIT_BATCH: usize = 64;

const NO_TOKEN: u32 = u32::MAX;
const FLAG_COMPLETE: u32 = 1;
const FLAG_TOKEN: u32 = 2;

pub fn record_len(k: usize) -> u64 {
    24 + 2 * k as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpenMode {
    Read,
    /// Create a new store, or resume an existing one with the same spec.
    Create,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheHeader {
    pub format_version: u32,
    pub spec_id: SpecId,
    pub k: u64,
    pub dtype: u8,
    pub count: u64,
}

impl CacheHeader {
    fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(MAGIC);
        b[4..8].copy_from_slice(&self.format_version.to_le_bytes());
        b[8..16].copy_from_slice(&self.spec_id.0.to_le_bytes());
        b[16..24].copy_from_slice(&self.k.to_le_bytes());
        b[24] = self.dtype;
        b[32..40].copy_from_slice(&self.count.to_le_bytes());
        b
    }

    fn decode(b: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptHeader { path: path.display().to_string(), reason: reason.into() };
        if b.len() < HEADER_LEN as usize {
            return Err(corrupt("file shorter than header"));
        }
        if &b[0..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        let h = Self {
            format_version: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            spec_id: SpecId(u64_at(8)),
            k: u64_at(16),
            dtype: b[24],
            count: u64_at(32),
        };
        if h.format_version != FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported format version {}", h.format_version)));
        }
        if h.dtype != DTYPE_F16 {
            return Err(corrupt(&format!("unknown value dtype {}", h.dtype)));
        }
        if h.k == 0 || b[25..32].iter().any(|&x| x != 0) {
            return Err(corrupt("invalid K or reserved bytes"));
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub offset: u64,
    pub flags: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PutOutcome {
    Written,
    /// Identical bytes already stored under this id.
    AlreadyPresent,
}

#[derive(Debug)]
struct Inner {
    file: File,
    index: BTreeMap<SourceId, IndexEntry>,
    end: u64,
    uncommitted: usize,
}

/// A sketch store bound to one spec id.
#[derive(Debug)]
pub struct CacheStore {
    path: PathBuf,
    index_path: PathBuf,
    header: CacheHeader,
    mode: OpenMode,
    inner: Mutex<Inner>,
}

pub fn index_path_for(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".idx");
    PathBuf::from(p)
}

impl CacheStore {
    /// Opens or creates the store at `path`. `k` is only consulted when a new
    /// store is created.
    pub fn open(path: impl AsRef<Path>, spec_id: SpecId, k: usize, mode: OpenMode) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let index_path = index_path_for(&path);
        let exists = path.exists();
        if mode == OpenMode::Read && !exists {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no cache at {}", path.display()),
            )));
        }
        let file = match mode {
            OpenMode::Read => File::open(&path)?,
            OpenMode::Create => OpenOptions::new().read(true).write(true).create(true).truncate(false).open(&path)?,
        };
        let len = file.metadata()?.len();

        if mode == OpenMode::Create && len == 0 {
            if k == 0 {
                return Err(Error::config("K must be at least 1"));
            }
            let header =
                CacheHeader { format_version: FORMAT_VERSION, spec_id, k: k as u64, dtype: DTYPE_F16, count: 0 };
            file.write_all_at(&header.encode(), 0)?;
            file.sync_all()?;
            write_index(&index_path, &BTreeMap::new())?;
            let inner = Inner { file, index: BTreeMap::new(), end: HEADER_LEN, uncommitted: 0 };
            return Ok(Self { path, index_path, header, mode, inner: Mutex::new(inner) });
        }

        let mut hb = vec![0u8; HEADER_LEN.min(len) as usize];
        file.read_exact_at(&mut hb, 0)?;
        let mut header = CacheHeader::decode(&hb, &path)?;
        if header.spec_id != spec_id {
            return Err(Error::SpecMismatch { expected: spec_id.to_string(), found: header.spec_id.to_string() });
        }
        let rec = record_len(header.k as usize);
        let index = read_index(&index_path)?
            .into_iter()
            .filter(|(_, e)| {
                e.offset >= HEADER_LEN && (e.offset - HEADER_LEN).is_multiple_of(rec) && e.offset + rec <= len
            })
            .collect::<BTreeMap<_, _>>();
        let end = index.values().map(|e| e.offset + rec).max().unwrap_or(HEADER_LEN);
        header.count = index.len() as u64;

        if mode == OpenMode::Create {
            // Drop uncommitted or torn tail records and resync the header.
            file.set_len(end)?;
            file.write_all_at(&header.encode(), 0)?;
            write_index(&index_path, &index)?;
            file.sync_all()?;
        }
        let inner = Inner { file, index, end, uncommitted: 0 };
        Ok(Self { path, index_path, header, mode, inner: Mutex::new(inner) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn index_path(&self) -> &Path {
        &self.index_path
    }

    pub fn spec_id(&self) -> SpecId {
        self.header.spec_id
    }

    pub fn k(&self) -> usize {
        self.header.k as usize
    }

    /// Header as last committed.
    pub fn header(&self) -> CacheHeader {
        let inner = self.inner.lock().unwrap();
        CacheHeader { count: inner.index.len() as u64, ..self.header }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: SourceId) -> bool {
        self.inner.lock().unwrap().index.contains_key(&id)
    }

    /// Indexed ids in ascending order.
    pub fn ids(&self) -> Vec<SourceId> {
        self.inner.lock().unwrap().index.keys().copied().collect()
    }

    pub fn put(&self, rg: &RapidGrad) -> Result<PutOutcome> {
        if self.mode != OpenMode::Create {
            return Err(Error::input("cache opened read-only"));
        }
        if rg.spec_id() != self.header.spec_id {
            return Err(Error::SpecMismatch {
                expected: self.header.spec_id.to_string(),
                found: rg.spec_id().to_string(),
            });
        }
        if rg.len() != self.k() {
            return Err(Error::input(format!("sketch has {} values, store expects {}", rg.len(), self.k())));
        }
        let bytes = encode_record(rg);
        let mut inner = self.inner.lock().unwrap();
        if let Some(entry) = inner.index.get(&rg.source()).copied() {
            let mut stored = vec![0u8; bytes.len()];
            inner.file.read_exact_at(&mut stored, entry.offset)?;
            return if stored == bytes {
                Ok(PutOutcome::AlreadyPresent)
            } else {
                Err(Error::Conflict(rg.source().to_string()))
            };
        }
        let offset = inner.end;
        inner.file.write_all_at(&bytes, offset)?;
        inner.end += bytes.len() as u64;
        let flags = FLAG_COMPLETE | if rg.source().is_token() { FLAG_TOKEN } else { 0 };
        inner.index.insert(rg.source(), IndexEntry { offset, flags });
        inner.uncommitted += 1;
        if inner.uncommitted >= COMMIT_BATCH {
            self.commit_locked(&mut inner)?;
        }
        Ok(PutOutcome::Written)
    }

    /// Makes every put so far durable and visible to other readers.
    pub fn commit(&self) -> Result<()> {
        if self.mode != OpenMode::Create {
            return Ok(());
        }
        let mut inner = self.inner.lock().unwrap();
        self.commit_locked(&mut inner)
    }

    fn commit_locked(&self, inner: &mut Inner) -> Result<()> {
        inner.file.sync_data()?;
        write_index(&self.index_path, &inner.index)?;
        let header = CacheHeader { count: inner.index.len() as u64, ..self.header };
        inner.file.write_all_at(&header.encode(), 0)?;
        inner.file.sync_data()?;
        inner.uncommitted = 0;
        Ok(())
    }

    pub fn get(&self, id: SourceId) -> Result<Option<RapidGrad>> {
        let inner = self.inner.lock().unwrap();
        let Some(entry) = inner.index.get(&id).copied() else {
            return Ok(None);
        };
        let mut buf = vec![0u8; record_len(self.k()) as usize];
        inner.file.read_exact_at(&mut buf, entry.offset)?;
        drop(inner);
        self.decode_checked(&buf, entry.offset, Some(id)).map(Some)
    }

    /// Every indexed record in ascending id order, checksums verified.
    pub fn load_all(&self) -> Result<Vec<RapidGrad>> {
        let entries: Vec<(SourceId, IndexEntry)> =
            self.inner.lock().unwrap().index.iter().map(|(k, v)| (*k, *v)).collect();
        self.read_entries(&entries)
    }

    /// Like [`load_all`](Self::load_all) restricted to whole-sample or to
    /// token records.
    pub fn load_kind(&self, tokens: bool) -> Result<Vec<RapidGrad>> {
        let entries: Vec<(SourceId, IndexEntry)> = self
            .inner
            .lock()
            .unwrap()
            .index
            .iter()
            .filter(|(k, _)| k.is_token() == tokens)
            .map(|(k, v)| (*k, *v))
            .collect();
        self.read_entries(&entries)
    }

    fn read_entries(&self, entries: &[(SourceId, IndexEntry)]) -> Result<Vec<RapidGrad>> {
        let rec = record_len(self.k()) as usize;
        let mut buf = vec![0u8; rec];
        let file = File::open(&self.path)?;
        entries
            .iter()
            .map(|(id, e)| {
                file.read_exact_at(&mut buf, e.offset)?;
                self.decode_checked(&buf, e.offset, Some(*id))
            })
            .collect()
    }

    /// Checks every indexed record's checksum.
    pub fn verify(&self) -> Result<usize> {
        Ok(self.load_all()?.len())
    }

    fn decode_checked(&self, buf: &[u8], offset: u64, expect: Option<SourceId>) -> Result<RapidGrad> {
        let body = &buf[..buf.len() - 8];
        let stored = u64::from_le_bytes(buf[buf.len() - 8..].try_into().unwrap());
        let sample = u64::from_le_bytes(buf[0..8].try_into().unwrap());
        let token = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        let id = SourceId { sample, token: (token != NO_TOKEN).then_some(token) };
        if checksum(body) != stored || expect.is_some_and(|e| e != id) {
            return Err(Error::Checksum { source_id: expect.unwrap_or(id).to_string(), offset });
        }
        let values = body[16..].chunks_exact(2).map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]]))).collect();
        RapidGrad::from_parts(values, id, self.header.spec_id)
    }
}

impl Drop for CacheStore {
    fn drop(&mut self) {
        if self.mode == OpenMode::Create {
            if let Ok(mut inner) = self.inner.lock() {
                if inner.uncommitted > 0 {
                    let _ = self.commit_locked(&mut inner);
                }
            }
        }
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn encode_record(rg: &RapidGrad) -> Vec<u8> {
    let mut b = Vec::with_capacity(record_len(rg.len()) as usize);
    let id = rg.source();
    b.extend_from_slice(&id.sample.to_le_bytes());
    b.extend_from_slice(&id.token.unwrap_or(NO_TOKEN).to_le_bytes());
    b.extend_from_slice(&0u32.to_le_bytes());
    for v in rg.values() {
        b.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    let sum = checksum(&b);
    b.extend_from_slice(&sum.to_le_bytes());
    b
}

fn write_index(path: &Path, index: &BTreeMap<SourceId, IndexEntry>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut out = String::with_capacity(32 + index.len() * 24);
    out.push_str(&format!("# gradtrace-index {INDEX_VERSION}\n"));
    let mut by_offset: Vec<_> = index.iter().collect();
    by_offset.sort_by_key(|(_, e)| e.offset);
    for (id, e) in by_offset {
        out.push_str(&format!("{id}\t{}\t{}\n", e.offset, e.flags));
    }
    {
        let mut f = File::create(&tmp)?;
        f.write_all(out.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_index(path: &Path) -> Result<BTreeMap<SourceId, IndexEntry>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(e.into()),
    };
    let mut index = BTreeMap::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# gradtrace-index ") {
            if rest.trim() != INDEX_VERSION.to_string() {
                return Err(Error::data(format!("unsupported index version {rest}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let bad = || Error::data(format!("malformed index line {line:?}"));
        let id: SourceId = parts.next().ok_or_else(bad)?.parse()?;
        let offset: u64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let flags: u32 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if flags & FLAG_COMPLETE != 0 {
            index.insert(id, IndexEntry { offset, flags });
        }
    }
    Ok(index)
}
