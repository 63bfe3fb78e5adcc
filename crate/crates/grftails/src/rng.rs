//! Reproducible, worker-independent random number streams.
//!
//! Every Monte Carlo driver partitions its `n` samples into fixed-size
//! chunks. Chunk `c` of run label `l` draws from a dedicated ChaCha12 stream
//! derived from `(seed, l, c)`, and per-chunk statistics are reduced in chunk
//! order. The set of streams, the samples they produce and the reduction
//! order are therefore functions of the seed alone, so estimates are
//! bit-identical for any worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

/// Samples per RNG stream; one unit of parallel work.
pub const CHUNK: u64 = 4096;

/// Run labels keep streams of different estimators disjoint under one seed.
/// The panel-sum and union estimators deliberately share a label: common
/// random numbers reduce the variance of their ratio, and a single-panel
/// cover then yields bit-identical numerator and denominator.
pub mod labels {
    pub const FIELD_SAMPLE: u64 = 1;
    pub const CRUDE: u64 = 2;
    pub const IMPORTANCE: u64 = 3;
    pub const SUP: u64 = 4;
    pub const PANELS_VS_UNION: u64 = 5;
    pub const LOGNORMAL: u64 = 6;
    pub const H_INTEGRAL: u64 = 7;
}

/// Identifies the exact stream that produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamId {
    pub seed: u64,
    pub label: u64,
    pub chunk: u64,
}

impl StreamId {
    pub fn rng(&self) -> ChaCha12Rng {
        assert!(self.chunk < (1 << 48), "chunk index exceeds 2^48");
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream((self.label << 48) | self.chunk);
        rng
    }
}

/// Seed plus worker count for an MC run.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    pub seed: u64,
    pub workers: usize,
}

impl Streams {
    pub fn new(seed: u64, workers: usize) -> Self {
        Streams {
            seed,
            workers: workers.max(1),
        }
    }

    pub fn stream(&self, label: u64, chunk: u64) -> StreamId {
        StreamId {
            seed: self.seed,
            label,
            chunk,
        }
    }

    /// Chunk index/sample count pairs covering `n` samples.
    pub fn chunks(&self, n: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut done = 0u64;
        let mut c = 0u64;
        while done < n {
            let take = CHUNK.min(n - done);
            out.push((c, take));
            done += take;
            c += 1;
        }
        out
    }

    /// Maps `f` over the chunks of an `n`-sample run on a private pool and
    /// returns results in chunk order.
    pub fn run_chunks<T, F>(&self, label: u64, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(StreamId, u64) -> T + Sync,
    {
        let chunks = self.chunks(n);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .expect("worker pool");
        pool.install(|| {
            chunks
                .par_iter()
                .map(|&(c, take)| f(self.stream(label, c), take))
                .collect()
        })
    }
}
