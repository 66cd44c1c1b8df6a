//! The `HDMD` dictionary file: a 64-byte little-endian header followed by
//! an `N × M` row-major signal block and an `N × L` row-major parameter
//! block.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "HDMD"
//!      4     2  version (u16)
//!      6     1  dtype tag: 1 = f32, 2 = f64
//!      7     1  reserved, zero
//!      8     8  N rows (u64)
//!     16     4  M signal length (u32)
//!     20     4  L parameter count (u32)
//!     24    40  reserved, zero
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{RowBlock, SignalSource};
use crate::error::{Error, Result};

pub const DICT_MAGIC: [u8; 4] = *b"HDMD";
pub const DICT_VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 64;

/// On-disk scalar type. Model arithmetic is always `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            t => Err(Error::Format(format!("unknown dtype tag {t}"))),
        }
    }

    /// The value as it will read back after a round trip through this type.
    pub fn round(self, v: f64) -> f64 {
        match self {
            Dtype::F32 => v as f32 as f64,
            Dtype::F64 => v,
        }
    }

    pub(crate) fn encode(self, values: &[f64], out: &mut Vec<u8>) {
        match self {
            Dtype::F32 => values.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
            Dtype::F64 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
    }

    pub(crate) fn decode(self, bytes: &[u8], out: &mut Vec<f64>) {
        match self {
            Dtype::F32 => out.extend(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)),
            Dtype::F64 => out.extend(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictHeader {
    pub version: u16,
    pub dtype: Dtype,
    pub n: u64,
    pub m: u32,
    pub l: u32,
}

impl DictHeader {
    pub fn new(n: u64, m: usize, l: usize, dtype: Dtype) -> Result<Self> {
        let m = u32::try_from(m).map_err(|_| Error::InvalidArgument("signal length too large".into()))?;
        let l = u32::try_from(l).map_err(|_| Error::InvalidArgument("parameter count too large".into()))?;
        if m == 0 {
            return Err(Error::InvalidArgument("signal length must be positive".into()));
        }
        Ok(Self { version: DICT_VERSION, dtype, n, m, l })
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN as usize] {
        let mut out = [0u8; HEADER_LEN as usize];
        out[0..4].copy_from_slice(&DICT_MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6] = self.dtype.tag();
        out[8..16].copy_from_slice(&self.n.to_le_bytes());
        out[16..20].copy_from_slice(&self.m.to_le_bytes());
        out[20..24].copy_from_slice(&self.l.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN as usize {
            return Err(Error::Format("truncated header".into()));
        }
        if bytes[0..4] != DICT_MAGIC {
            return Err(Error::Format("not a dictionary file (bad magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != DICT_VERSION {
            return Err(Error::Format(format!("unsupported dictionary version {version}")));
        }
        let dtype = Dtype::from_tag(bytes[6])?;
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let m = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
        let l = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
        if m == 0 {
            return Err(Error::Format("zero signal length".into()));
        }
        Ok(Self { version, dtype, n, m, l })
    }

    pub fn signal_len(&self) -> usize {
        self.m as usize
    }

    pub fn param_len(&self) -> usize {
        self.l as usize
    }

    fn signals_offset(&self) -> u64 {
        HEADER_LEN
    }

    fn params_offset(&self) -> u64 {
        HEADER_LEN + self.n * self.m as u64 * self.dtype.size() as u64
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN + self.n * (self.m as u64 + self.l as u64) * self.dtype.size() as u64
    }
}

/// Streaming writer of `(signal, parameters)` rows. The row count is fixed
/// up front so the two blocks can be written concurrently.
pub struct DictionaryWriter {
    header: DictHeader,
    signals: BufWriter<File>,
    params: BufWriter<File>,
    written: u64,
    buf: Vec<u8>,
}

impl DictionaryWriter {
    pub fn create(path: impl AsRef<Path>, n: u64, m: usize, l: usize, dtype: Dtype) -> Result<Self> {
        let header = DictHeader::new(n, m, l, dtype)?;
        let path = path.as_ref();
        let mut file = File::create(path)?;
        file.write_all(&header.to_bytes())?;
        file.set_len(header.file_len())?;
        let mut params = OpenOptions::new().write(true).open(path)?;
        params.seek(SeekFrom::Start(header.params_offset()))?;
        file.seek(SeekFrom::Start(header.signals_offset()))?;
        Ok(Self { header, signals: BufWriter::new(file), params: BufWriter::new(params), written: 0, buf: Vec::new() })
    }

    pub fn header(&self) -> &DictHeader {
        &self.header
    }

    pub fn push(&mut self, signal: &[f64], params: &[f64]) -> Result<()> {
        if signal.len() != self.header.signal_len() {
            return Err(Error::dim(self.header.signal_len(), signal.len()));
        }
        if params.len() != self.header.param_len() {
            return Err(Error::dim(self.header.param_len(), params.len()));
        }
        if self.written >= self.header.n {
            return Err(Error::InvalidArgument(format!("dictionary declared {} rows", self.header.n)));
        }
        if signal.iter().chain(params).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite value in row {}", self.written)));
        }
        let dtype = self.header.dtype;
        if dtype == Dtype::F32 && signal.iter().chain(params).any(|v| !(*v as f32).is_finite()) {
            return Err(Error::InvalidArgument(format!("row {} overflows f32", self.written)));
        }
        self.buf.clear();
        dtype.encode(signal, &mut self.buf);
        self.signals.write_all(&self.buf)?;
        self.buf.clear();
        dtype.encode(params, &mut self.buf);
        self.params.write_all(&self.buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn push_block(&mut self, signals: &RowBlock, params: &RowBlock) -> Result<()> {
        if signals.rows() != params.rows() {
            return Err(Error::dim(signals.rows(), params.rows()));
        }
        for i in 0..signals.rows() {
            self.push(signals.row(i), params.row(i))?;
        }
        Ok(())
    }

    /// Flushes and checks that exactly `N` rows were written.
    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.n {
            return Err(Error::InvalidArgument(format!(
                "dictionary declared {} rows but {} were written",
                self.header.n, self.written
            )));
        }
        self.signals.flush()?;
        self.params.flush()?;
        self.signals.get_ref().sync_all()?;
        Ok(())
    }
}

/// Writes a whole in-memory dictionary.
pub fn write_dictionary(path: impl AsRef<Path>, signals: &RowBlock, params: &RowBlock, dtype: Dtype) -> Result<()> {
    let mut w = DictionaryWriter::create(path, signals.rows() as u64, signals.dim(), params.dim(), dtype)?;
    w.push_block(signals, params)?;
    w.finish()
}

/// Sequential reader over one of the two row blocks of a dictionary file.
struct RegionReader {
    file: BufReader<File>,
    offset: u64,
    width: usize,
    dtype: Dtype,
    total: u64,
    pos: u64,
    bytes: Vec<u8>,
}

impl RegionReader {
    fn open(path: &Path, offset: u64, width: usize, dtype: Dtype, total: u64, start: u64) -> Result<Self> {
        let mut file = File::open(path)?;
        file.seek(SeekFrom::Start(offset + start * (width * dtype.size()) as u64))?;
        Ok(Self { file: BufReader::new(file), offset, width, dtype, total, pos: start, bytes: Vec::new() })
    }

    fn seek_row(&mut self, row: u64) -> Result<()> {
        self.file.seek(SeekFrom::Start(self.offset + row * (self.width * self.dtype.size()) as u64))?;
        self.pos = row;
        Ok(())
    }

    fn read(&mut self, max_rows: usize) -> Result<Option<RowBlock>> {
        let rows = (self.total - self.pos).min(max_rows.max(1) as u64) as usize;
        if rows == 0 {
            return Ok(None);
        }
        self.bytes.resize(rows * self.width * self.dtype.size(), 0);
        self.file.read_exact(&mut self.bytes).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated payload".into()),
            _ => Error::Io(e),
        })?;
        let mut values = Vec::with_capacity(rows * self.width);
        self.dtype.decode(&self.bytes, &mut values);
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value at row {}", self.pos + (bad / self.width.max(1)) as u64)));
        }
        self.pos += rows as u64;
        RowBlock::new(rows, self.width, values).map(Some)
    }
}

/// Validated handle on a dictionary file. Cheap to clone; every iterator
/// opens its own file handles, so several can run concurrently.
#[derive(Debug, Clone)]
pub struct DictionaryReader {
    path: PathBuf,
    header: DictHeader,
}

/// One block of consecutive dictionary rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DictChunk {
    pub start_row: u64,
    pub signals: RowBlock,
    pub params: RowBlock,
}

impl DictionaryReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path)?;
        let mut head = [0u8; HEADER_LEN as usize];
        let len = file.metadata()?.len();
        if len < HEADER_LEN {
            return Err(Error::Format("truncated header".into()));
        }
        file.read_exact(&mut head)?;
        let header = DictHeader::from_bytes(&head)?;
        let expected = header.file_len();
        if len < expected {
            return Err(Error::Format(format!("truncated payload: {len} bytes, header implies {expected}")));
        }
        if len > expected {
            return Err(Error::Format(format!("trailing bytes: {len} bytes, header implies {expected}")));
        }
        Ok(Self { path, header })
    }

    pub fn header(&self) -> &DictHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn rows(&self) -> u64 {
        self.header.n
    }

    /// Iterator over `(signals, params)` blocks of at most `chunk_rows` rows.
    pub fn chunks(&self, chunk_rows: usize) -> Result<DictChunks> {
        if chunk_rows == 0 {
            return Err(Error::InvalidArgument("chunk size must be at least 1".into()));
        }
        let h = &self.header;
        Ok(DictChunks {
            signals: RegionReader::open(&self.path, h.signals_offset(), h.signal_len(), h.dtype, h.n, 0)?,
            params: RegionReader::open(&self.path, h.params_offset(), h.param_len(), h.dtype, h.n, 0)?,
            chunk_rows,
        })
    }

    /// Signal-only [`SignalSource`] over the dictionary.
    pub fn signals(&self) -> Result<DictionarySignals> {
        let h = &self.header;
        Ok(DictionarySignals {
            region: RegionReader::open(&self.path, h.signals_offset(), h.signal_len(), h.dtype, h.n, 0)?,
        })
    }

    /// Signal rows in a seeded pseudo-random order, for fitting on
    /// dictionaries stored in parameter-grid order. See [`ShuffledSignals`].
    pub fn shuffled_signals(&self, chunk_rows: usize, pool_chunks: usize, seed: u64) -> Result<ShuffledSignals> {
        if chunk_rows == 0 || pool_chunks == 0 {
            return Err(Error::InvalidArgument("shuffle chunk and pool sizes must be positive".into()));
        }
        let h = &self.header;
        let mut s = ShuffledSignals {
            region: RegionReader::open(&self.path, h.signals_offset(), h.signal_len(), h.dtype, h.n, 0)?,
            chunk_rows,
            pool_chunks,
            seed,
            order: Vec::new(),
            next_chunk: 0,
            pool: RowBlock::with_capacity(h.signal_len(), 0),
            pool_pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.rewind()?;
        Ok(s)
    }

    /// Whole dictionary in memory. Only for small files.
    pub fn read_all(&self) -> Result<(RowBlock, RowBlock)> {
        let h = &self.header;
        let mut signals = RowBlock::with_capacity(h.signal_len(), h.n as usize);
        let mut params = RowBlock::with_capacity(h.param_len(), h.n as usize);
        for chunk in self.chunks(65_536)? {
            let chunk = chunk?;
            signals.append(&chunk.signals)?;
            params.append(&chunk.params)?;
        }
        Ok((signals, params))
    }

    /// Signals of the given rows, in increasing row order, read in one pass.
    pub fn read_signal_rows(&self, rows: &[u64]) -> Result<RowBlock> {
        let mut sorted = rows.to_vec();
        sorted.sort_unstable();
        if let Some(&last) = sorted.last() {
            if last >= self.header.n {
                return Err(Error::InvalidArgument(format!("row {last} out of range")));
            }
        }
        let h = &self.header;
        let mut region = RegionReader::open(&self.path, h.signals_offset(), h.signal_len(), h.dtype, h.n, 0)?;
        let mut out = RowBlock::with_capacity(h.signal_len(), sorted.len());
        for r in sorted {
            region.seek_row(r)?;
            let block = region.read(1)?.ok_or_else(|| Error::Format("truncated payload".into()))?;
            out.append(&block)?;
        }
        Ok(out)
    }
}

pub struct DictChunks {
    signals: RegionReader,
    params: RegionReader,
    chunk_rows: usize,
}

impl Iterator for DictChunks {
    type Item = Result<DictChunk>;

    fn next(&mut self) -> Option<Self::Item> {
        let start_row = self.signals.pos;
        let signals = match self.signals.read(self.chunk_rows) {
            Ok(Some(s)) => s,
            Ok(None) => return None,
            Err(e) => return Some(Err(e)),
        };
        let params = match self.params.read(self.chunk_rows) {
            Ok(Some(p)) => p,
            Ok(None) => RowBlock::zeros(signals.rows(), 0),
            Err(e) => return Some(Err(e)),
        };
        Some(Ok(DictChunk { start_row, signals, params }))
    }
}

pub struct DictionarySignals {
    region: RegionReader,
}

impl SignalSource for DictionarySignals {
    fn dim(&self) -> usize {
        self.region.width
    }

    fn len_hint(&self) -> Option<u64> {
        Some(self.region.total)
    }

    fn rewind(&mut self) -> Result<()> {
        self.region.seek_row(0)
    }

    fn next_block(&mut self, max_rows: usize) -> Result<Option<RowBlock>> {
        self.region.read(max_rows)
    }
}

/// Visits contiguous chunks of rows in a random permutation and shuffles
/// rows within a pool of consecutive chunks of that permutation. Holds at
/// most `chunk_rows · pool_chunks` rows; `rewind` replays the same order.
pub struct ShuffledSignals {
    region: RegionReader,
    chunk_rows: usize,
    pool_chunks: usize,
    seed: u64,
    order: Vec<u64>,
    next_chunk: usize,
    pool: RowBlock,
    pool_pos: usize,
    rng: ChaCha8Rng,
}

impl ShuffledSignals {
    fn refill(&mut self) -> Result<()> {
        let width = self.region.width;
        let mut pool = RowBlock::with_capacity(width, self.chunk_rows * self.pool_chunks);
        let end = (self.next_chunk + self.pool_chunks).min(self.order.len());
        for &chunk in &self.order[self.next_chunk..end] {
            self.region.seek_row(chunk * self.chunk_rows as u64)?;
            if let Some(block) = self.region.read(self.chunk_rows)? {
                pool.append(&block)?;
            }
        }
        self.next_chunk = end;
        let mut perm: Vec<usize> = (0..pool.rows()).collect();
        perm.shuffle(&mut self.rng);
        let mut shuffled = RowBlock::with_capacity(width, pool.rows());
        for i in perm {
            shuffled.push_row(pool.row(i))?;
        }
        self.pool = shuffled;
        self.pool_pos = 0;
        Ok(())
    }
}

impl SignalSource for ShuffledSignals {
    fn dim(&self) -> usize {
        self.region.width
    }

    fn len_hint(&self) -> Option<u64> {
        Some(self.region.total)
    }

    fn rewind(&mut self) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
        let chunks = self.region.total.div_ceil(self.chunk_rows as u64);
        self.order = (0..chunks).collect();
        self.order.shuffle(&mut self.rng);
        self.next_chunk = 0;
        self.pool = RowBlock::with_capacity(self.region.width, 0);
        self.pool_pos = 0;
        Ok(())
    }

    fn next_block(&mut self, max_rows: usize) -> Result<Option<RowBlock>> {
        let mut out = RowBlock::with_capacity(self.region.width, max_rows);
        while out.rows() < max_rows.max(1) {
            if self.pool_pos == self.pool.rows() {
                if self.next_chunk == self.order.len() {
                    break;
                }
                self.refill()?;
                continue;
            }
            let take = (max_rows.max(1) - out.rows()).min(self.pool.rows() - self.pool_pos);
            out.append(&self.pool.slice(self.pool_pos, self.pool_pos + take))?;
            self.pool_pos += take;
        }
        Ok(if out.is_empty() { None } else { Some(out) })
    }
}
