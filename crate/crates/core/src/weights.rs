//! Named parameter store, deterministic initialization, and the binary
//! weight file format.
//!
//! Random draws come from a fixed 64-bit linear congruential generator
//! (Knuth's MMIX multiplier) with Box-Muller for normals, two uniforms
//! per normal, no caching. Each tensor gets its own stream seeded from
//! FNV-1a over (name bytes ++ seed bytes), so the draw for a given name
//! never depends on which other tensors exist. The exact recipe is
//! documented here so another implementation can reproduce the bytes.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// PRNG
// ---------------------------------------------------------------------------

const LCG_MUL: u64 = 6364136223846793005;
const LCG_INC: u64 = 1442695040888963407;
const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Linear congruential generator; uniform doubles use the top 53 bits.
#[derive(Debug, Clone)]
pub struct Rng64 {
    state: u64,
}

impl Rng64 {
    pub fn new(seed: u64) -> Self {
        let mut r = Rng64 { state: seed };
        r.next_u64(); // decouple the first output from the raw seed
        r
    }

    /// Stream for one named tensor: FNV-1a over the name followed by the
    /// little-endian seed bytes.
    pub fn for_tensor(seed: u64, name: &str) -> Self {
        let mut bytes = Vec::with_capacity(name.len() + 8);
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&seed.to_le_bytes());
        Rng64::new(fnv1a64(&bytes))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(LCG_MUL).wrapping_add(LCG_INC);
        self.state
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Normal(0, std) by Box-Muller; u1 is shifted into (0, 1].
    pub fn normal(&mut self, std: f64) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64;
        let u2 = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std
    }
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

/// Ordered map of dotted parameter names to tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: IndexMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        WeightStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate weight name `{}`", name)));
        }
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    /// Replace an existing entry, keeping its position.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(slot) => {
                *slot = t;
                Ok(())
            }
            None => Err(Error::Config(format!("no weight named `{}`", name))),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn total_params(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"DASF";
const VERSION: u32 = 1;

/// Write the store: magic "DASF", version u32 LE, entry count u64 LE,
/// then per entry: name length u16 LE + UTF-8 name, rank u8, dims u64 LE
/// each, raw f32 LE payload.
pub fn save(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, t) in store.iter() {
        let nb = name.as_bytes();
        if nb.len() > u16::MAX as usize {
            return Err(Error::Config(format!("weight name too long: {}", name)));
        }
        w.write_all(&(nb.len() as u16).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            offset: at,
            msg: format!("truncated while reading {}: {}", what, e),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<WeightStore> {
    let mut r = Cursor {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {:?}, expected {:?}", magic, MAGIC),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {}", version),
        });
    }
    let count = r.u64("entry count")?;
    let mut store = WeightStore::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name, "name")?;
        let at = r.offset;
        let name = String::from_utf8(name).map_err(|e| Error::Format {
            offset: at,
            msg: format!("name is not UTF-8: {}", e),
        })?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(r.u64("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 4];
        for _ in 0..numel {
            r.read_exact(&mut buf, "tensor payload")?;
            data.push(f32::from_le_bytes(buf));
        }
        let at = r.offset;
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format {
            offset: at,
            msg: format!("invalid tensor `{}`: {}", name, e),
        })?;
        store.insert(name, t).map_err(|e| Error::Format {
            offset: at,
            msg: e.to_string(),
        })?;
    }
    Ok(store)
}

// ---------------------------------------------------------------------------
// Parameter sourcing (shared by init and bind)
// ---------------------------------------------------------------------------

/// How a tensor is filled at initialization time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
    Const(f32),
    /// First `k` entries 1, the rest 0 (sectioned bias vectors).
    PrefixOnes(usize),
}

/// One construction path serves both random initialization and strict
/// binding from a loaded store; the model-building code calls `take`
/// once per parameter, in a fixed order.
pub trait ParamSource {
    fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor>;
}

/// Generates parameters and records them under their names.
pub struct RandomSource {
    seed: u64,
    pub store: WeightStore,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            seed,
            store: WeightStore::new(),
        }
    }
}

impl ParamSource for RandomSource {
    fn take(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let mut rng = Rng64::for_tensor(self.seed, name);
        let t = match init {
            Init::Normal(std) => Tensor::from_fn(shape, |_| rng.normal(std))?,
            Init::Zeros => Tensor::zeros(shape)?,
            Init::Ones => Tensor::full(shape, 1.0)?,
            Init::Const(v) => Tensor::full(shape, v as f64)?,
            Init::PrefixOnes(k) => Tensor::from_fn(shape, |i| if i < k { 1.0 } else { 0.0 })?,
        };
        self.store.insert(name, t.clone())?;
        Ok(t)
    }
}

/// Pulls parameters from a loaded store, tracking consumption so unused
/// entries can be reported.
pub struct StoreSource<'a> {
    store: &'a WeightStore,
    consumed: HashSet<String>,
}

impl<'a> StoreSource<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        StoreSource {
            store,
            consumed: HashSet::new(),
        }
    }

    /// Strict-mode check: every entry of the store must have been taken.
    pub fn finish(self) -> Result<()> {
        let unused: Vec<&str> = self
            .store
            .names()
            .filter(|n| !self.consumed.contains(*n))
            .collect();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "weight store has {} unconsumed entries: {}",
                unused.len(),
                unused.join(", ")
            )))
        }
    }
}

impl ParamSource for StoreSource<'_> {
    fn take(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Tensor> {
        let t = self
            .store
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing weight `{}`", name)))?;
        if t.shape() != shape {
            return Err(Error::Config(format!(
                "weight `{}` has shape {:?}, model expects {:?}",
                name,
                t.shape(),
                shape
            )));
        }
        if !self.consumed.insert(name.to_string()) {
            return Err(Error::Config(format!("weight `{}` consumed twice", name)));
        }
        Ok(t.clone())
    }
}
