//! Joint simulation of Brownian increments and chain paths, plus a stable
//! on-disk batch format.
//!
//! Every path draws from its own counter-derived RNG stream, keyed by
//! `(master seed, path index, process tag)`, with disjoint tags for the chain
//! and the Brownian component.  Path `i` of a batch is therefore reproducible
//! in isolation and independent of how many worker threads generated the
//! batch, which is what makes bitwise replay possible.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::chain::{simulate_chain, ChainPath, RateMatrix};

/// Process tag for the chain substream.
pub const STREAM_CHAIN: u64 = 1;
/// Process tag for the Brownian substream.
pub const STREAM_BROWNIAN: u64 = 2;

/// File-format version written by [`save_batch`].
pub const STORE_VERSION: u32 = 1;
const STORE_MAGIC: &[u8; 8] = b"BSDEBMPS";

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit stream id for `(master_seed, index, tag)`.
pub fn stream_id(master_seed: u64, index: u64, tag: u64) -> u64 {
    let mut s = master_seed;
    let a = splitmix64(&mut s);
    let mut s2 = a ^ index.wrapping_mul(0xd134_2543_de82_ef95);
    let b = splitmix64(&mut s2);
    let mut s3 = b ^ tag.wrapping_mul(0x2545_f491_4f6c_dd1d);
    splitmix64(&mut s3)
}

/// Deterministic per-stream RNG derived from `(master_seed, index, tag)`.
///
/// Streams for distinct triples are statistically independent, and creating
/// them in any order (or from any thread) yields identical draws.
pub fn stream_rng(master_seed: u64, index: u64, tag: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    let mut s = stream_id(master_seed, index, tag);
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Error constructing a time grid.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("time grid needs at least two nodes starting at 0, got {0} nodes")]
    TooFewNodes(usize),
    #[error("time grid nodes must start at 0 and strictly increase")]
    NotIncreasing,
}

/// Partition `0 = t_0 < t_1 < ... < t_K = T` of the solve horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `n_steps` intervals on `[0, horizon]`.
    pub fn uniform(horizon: f64, n_steps: usize) -> Self {
        assert!(horizon > 0.0 && horizon.is_finite());
        assert!(n_steps >= 1);
        let nodes = (0..=n_steps)
            .map(|k| horizon * k as f64 / n_steps as f64)
            .collect();
        Self { nodes }
    }

    /// Grid from explicit nodes; must start at 0 and strictly increase.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, GridError> {
        if nodes.len() < 2 {
            return Err(GridError::TooFewNodes(nodes.len()));
        }
        if nodes[0] != 0.0 || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GridError::NotIncreasing);
        }
        Ok(Self { nodes })
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Number of intervals `K`.
    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Width of interval `k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Largest interval width.
    pub fn max_dt(&self) -> f64 {
        (0..self.n_steps()).map(|k| self.dt(k)).fold(0.0, f64::max)
    }

    /// Index `k` such that `node(k) == t` within `1e-12`, if any.
    pub fn find_node(&self, t: f64) -> Option<usize> {
        self.nodes
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * self.horizon().max(1.0))
    }

    /// Coarsened grid keeping every `factor`-th node (requires divisibility).
    pub fn coarsen(&self, factor: usize) -> Self {
        assert!(factor >= 1 && self.n_steps() % factor == 0);
        let nodes = self.nodes.iter().step_by(factor).copied().collect();
        Self { nodes }
    }
}

/// One joint trajectory: a chain path plus Brownian increments on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPath {
    /// Stream id this path was generated from (diagnostic; the chain and
    /// Brownian substreams are derived from the batch seed and path index).
    pub seed: u64,
    pub chain: ChainPath,
    /// `dW_k` over each grid interval.
    pub brownian_increments: Vec<f64>,
}

impl JointPath {
    /// Brownian levels `W_{t_k}` at the grid nodes (starting from 0).
    pub fn brownian_nodes(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.brownian_increments.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for dw in &self.brownian_increments {
            acc += dw;
            w.push(acc);
        }
        w
    }
}

/// A reproducible batch of joint paths on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub master_seed: u64,
    pub n_states: usize,
    pub paths: Vec<JointPath>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Batch on a coarser grid: Brownian increments are summed pairwise per
    /// retained interval; chain paths are untouched (they are exact).
    pub fn coarsen(&self, factor: usize) -> PathBatch {
        let grid = self.grid.coarsen(factor);
        let paths = self
            .paths
            .iter()
            .map(|p| JointPath {
                seed: p.seed,
                chain: p.chain.clone(),
                brownian_increments: p
                    .brownian_increments
                    .chunks(factor)
                    .map(|c| c.iter().sum())
                    .collect(),
            })
            .collect();
        PathBatch {
            grid,
            master_seed: self.master_seed,
            n_states: self.n_states,
            paths,
        }
    }
}

/// Generates one path of the batch keyed by `(master_seed, index)`.
pub fn generate_path(
    a: &RateMatrix,
    x0: usize,
    grid: &TimeGrid,
    master_seed: u64,
    index: u64,
) -> JointPath {
    let mut chain_rng = stream_rng(master_seed, index, STREAM_CHAIN);
    let chain = simulate_chain(a, x0, grid.horizon(), &mut chain_rng);
    let mut w_rng = stream_rng(master_seed, index, STREAM_BROWNIAN);
    let brownian_increments = (0..grid.n_steps())
        .map(|k| {
            let z: f64 = w_rng.sample(StandardNormal);
            z * grid.dt(k).sqrt()
        })
        .collect();
    JointPath {
        seed: stream_id(master_seed, index, 0),
        chain,
        brownian_increments,
    }
}

/// Generates `n_paths` joint paths in parallel.  The result is a function of
/// `(a, x0, grid, n_paths, master_seed)` only — never of thread count or
/// scheduling — because each path owns its derived RNG streams and the
/// collection preserves index order.
pub fn generate_batch(
    a: &RateMatrix,
    x0: usize,
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
) -> PathBatch {
    let paths: Vec<JointPath> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| generate_path(a, x0, grid, master_seed, i))
        .collect();
    PathBatch {
        grid: grid.clone(),
        master_seed,
        n_states: a.n_states(),
        paths,
    }
}

/// Path-store I/O failure.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported path-store version {found} (this build reads {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt path store: {0}")]
    CorruptRecord(String),
}

fn corrupt(msg: impl Into<String>) -> StoreError {
    StoreError::CorruptRecord(msg.into())
}

/// Writes the batch in the versioned binary layout described in the README.
/// All floating-point fields round-trip bit-exactly through [`load_batch`].
pub fn save_batch(batch: &PathBatch, path: &Path) -> Result<(), StoreError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STORE_MAGIC)?;
    w.write_u32::<LittleEndian>(STORE_VERSION)?;
    w.write_u64::<LittleEndian>(batch.master_seed)?;
    w.write_u32::<LittleEndian>(batch.n_states as u32)?;
    w.write_u64::<LittleEndian>(batch.n_paths() as u64)?;
    w.write_u64::<LittleEndian>(batch.grid.n_steps() as u64)?;
    for &t in batch.grid.nodes() {
        w.write_u64::<LittleEndian>(t.to_bits())?;
    }
    for p in &batch.paths {
        w.write_u64::<LittleEndian>(p.seed)?;
        w.write_u32::<LittleEndian>(p.chain.initial_state() as u32)?;
        w.write_u64::<LittleEndian>(p.chain.n_jumps() as u64)?;
        for (t, _, to) in p.chain.jumps() {
            w.write_u64::<LittleEndian>(t.to_bits())?;
            w.write_u32::<LittleEndian>(to as u32)?;
        }
        for &dw in &p.brownian_increments {
            w.write_u64::<LittleEndian>(dw.to_bits())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, StoreError> {
    Ok(f64::from_bits(r.read_u64::<LittleEndian>().map_err(
        |e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                corrupt("truncated record")
            } else {
                StoreError::Io(e)
            }
        },
    )?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, StoreError> {
    r.read_u64::<LittleEndian>().map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            corrupt("truncated record")
        } else {
            StoreError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, StoreError> {
    r.read_u32::<LittleEndian>().map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            corrupt("truncated record")
        } else {
            StoreError::Io(e)
        }
    })
}

/// Reads a batch previously written by [`save_batch`].
///
/// A wrong magic header or any structural inconsistency yields
/// [`StoreError::CorruptRecord`]; a newer format version yields
/// [`StoreError::VersionMismatch`].
pub fn load_batch(path: &Path) -> Result<PathBatch, StoreError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt("missing magic header"))?;
    if &magic != STORE_MAGIC {
        return Err(corrupt("bad magic header"));
    }
    let version = read_u32(&mut r)?;
    if version != STORE_VERSION {
        return Err(StoreError::VersionMismatch {
            found: version,
            supported: STORE_VERSION,
        });
    }
    let master_seed = read_u64(&mut r)?;
    let n_states = read_u32(&mut r)? as usize;
    if n_states < 2 {
        return Err(corrupt(format!("state count {n_states} out of range")));
    }
    let n_paths = read_u64(&mut r)? as usize;
    let n_steps = read_u64(&mut r)? as usize;
    if n_steps == 0 || n_steps > 100_000_000 {
        return Err(corrupt(format!("step count {n_steps} out of range")));
    }
    let mut nodes = Vec::with_capacity(n_steps + 1);
    for _ in 0..=n_steps {
        nodes.push(read_f64(&mut r)?);
    }
    let grid =
        TimeGrid::from_nodes(nodes).map_err(|e| corrupt(format!("invalid grid nodes: {e}")))?;
    let horizon = grid.horizon();
    let mut paths = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let seed = read_u64(&mut r)?;
        let x0 = read_u32(&mut r)? as usize;
        if x0 >= n_states {
            return Err(corrupt(format!("initial state {x0} out of range")));
        }
        let n_jumps = read_u64(&mut r)? as usize;
        if n_jumps > 100_000_000 {
            return Err(corrupt(format!("jump count {n_jumps} out of range")));
        }
        let mut jump_times = Vec::with_capacity(n_jumps);
        let mut states = Vec::with_capacity(n_jumps + 1);
        states.push(x0);
        for _ in 0..n_jumps {
            let t = read_f64(&mut r)?;
            let to = read_u32(&mut r)? as usize;
            if !(t > 0.0 && t < horizon) || jump_times.last().is_some_and(|&p| t < p) {
                return Err(corrupt(format!("jump time {t} out of order or range")));
            }
            if to >= n_states || to == *states.last().unwrap() {
                return Err(corrupt(format!("jump target {to} invalid")));
            }
            jump_times.push(t);
            states.push(to);
        }
        let mut brownian_increments = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            brownian_increments.push(read_f64(&mut r)?);
        }
        paths.push(JointPath {
            seed,
            chain: ChainPath::from_parts(horizon, jump_times, states),
            brownian_increments,
        });
    }
    // Trailing garbage means the writer and reader disagree on the layout.
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(PathBatch {
            grid,
            master_seed,
            n_states,
            paths,
        }),
        _ => Err(corrupt("trailing bytes after final record")),
    }
}

/// Fills `buf` with bytes from independent streams — helper for tests that
/// need to corrupt a file deterministically.
pub fn fill_random_bytes(seed: u64, buf: &mut [u8]) {
    stream_rng(seed, 0, 99).fill_bytes(buf);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_state() -> RateMatrix {
        RateMatrix::two_state_symmetric(1.0, 0.5).unwrap()
    }

    #[test]
    fn uniform_grid_nodes_and_widths() {
        let g = TimeGrid::uniform(1.0, 4);
        assert_eq!(g.n_steps(), 4);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.horizon(), 1.0);
        assert_relative_eq!(g.dt(2), 0.25);
        assert_eq!(g.find_node(0.5), Some(2));
        assert_eq!(g.find_node(0.3), None);
    }

    #[test]
    fn from_nodes_rejects_bad_grids() {
        assert!(matches!(
            TimeGrid::from_nodes(vec![0.0]),
            Err(GridError::TooFewNodes(1))
        ));
        assert!(matches!(
            TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]),
            Err(GridError::NotIncreasing)
        ));
        assert!(matches!(
            TimeGrid::from_nodes(vec![0.1, 0.5]),
            Err(GridError::NotIncreasing)
        ));
    }

    #[test]
    fn stream_rng_is_order_independent() {
        let mut a = stream_rng(42, 7, STREAM_BROWNIAN);
        let first: f64 = a.sample(StandardNormal);
        // Interleave other streams, then recreate: identical draw.
        let _ = stream_rng(42, 8, STREAM_BROWNIAN).gen::<f64>();
        let _ = stream_rng(42, 7, STREAM_CHAIN).gen::<f64>();
        let mut b = stream_rng(42, 7, STREAM_BROWNIAN);
        let again: f64 = b.sample(StandardNormal);
        assert_eq!(first, again);
    }

    #[test]
    fn chain_and_brownian_streams_are_disjoint() {
        assert_ne!(
            stream_id(1, 0, STREAM_CHAIN),
            stream_id(1, 0, STREAM_BROWNIAN)
        );
        assert_ne!(stream_id(1, 0, STREAM_CHAIN), stream_id(1, 1, STREAM_CHAIN));
        assert_ne!(stream_id(1, 0, STREAM_CHAIN), stream_id(2, 0, STREAM_CHAIN));
    }

    #[test]
    fn smallest_batch_has_expected_shape() {
        let a = two_state();
        let g = TimeGrid::uniform(1.0, 1);
        let b = generate_batch(&a, 0, &g, 1, 9);
        assert_eq!(b.n_paths(), 1);
        assert_eq!(b.paths[0].brownian_increments.len(), 1);
        assert_eq!(b.paths[0].chain.initial_state(), 0);
    }

    #[test]
    fn batch_is_reproducible_path_by_path() {
        let a = two_state();
        let g = TimeGrid::uniform(1.0, 16);
        let batch = generate_batch(&a, 0, &g, 64, 2024);
        for (i, p) in batch.paths.iter().enumerate() {
            let solo = generate_path(&a, 0, &g, 2024, i as u64);
            assert_eq!(p, &solo);
        }
        // Same inputs, fresh call: identical batch.
        assert_eq!(batch, generate_batch(&a, 0, &g, 64, 2024));
    }

    #[test]
    fn terminal_brownian_moments_are_sane() {
        let a = two_state();
        let g = TimeGrid::uniform(2.0, 8);
        let n = 20_000;
        let batch = generate_batch(&a, 0, &g, n, 31337);
        let terminals: Vec<f64> = batch
            .paths
            .iter()
            .map(|p| p.brownian_increments.iter().sum())
            .collect();
        let mean = terminals.iter().sum::<f64>() / n as f64;
        let var = terminals.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n as f64;
        let se_mean = (2.0_f64 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
        // Var(W_T) = T = 2; SE of the sample variance ~ T sqrt(2/n).
        assert!((var - 2.0).abs() < 3.0 * 2.0 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn chain_and_brownian_are_uncorrelated() {
        let a = two_state();
        let g = TimeGrid::uniform(1.0, 4);
        let n = 20_000;
        let batch = generate_batch(&a, 0, &g, n, 555);
        let mut cov = 0.0;
        for p in &batch.paths {
            let w: f64 = p.brownian_increments.iter().sum();
            let jumps = p.chain.n_jumps() as f64;
            cov += w * jumps;
        }
        cov /= n as f64;
        // E[W_T] = 0 so cov ~ E[W J]; scale by std(W) std(J) ~ 1 * ~1.
        assert!(cov.abs() < 5.0 / (n as f64).sqrt() * 3.0, "cov {cov}");
    }

    #[test]
    fn coarsened_batch_sums_increment_pairs() {
        let a = two_state();
        let g = TimeGrid::uniform(1.0, 8);
        let batch = generate_batch(&a, 0, &g, 3, 1);
        let coarse = batch.coarsen(2);
        assert_eq!(coarse.grid.n_steps(), 4);
        for (p, cp) in batch.paths.iter().zip(&coarse.paths) {
            for k in 0..4 {
                assert_eq!(
                    cp.brownian_increments[k],
                    p.brownian_increments[2 * k] + p.brownian_increments[2 * k + 1]
                );
            }
        }
    }
}
