//! Persistent formats: dictionaries, models, compressed dictionaries, and
//! the synthetic dictionary generator.

mod bytes;
pub mod compressed;
pub mod csv_import;
pub mod format;
pub mod model;
pub mod synthetic;

pub use compressed::{compress, ClusterPartition, CompressOptions, CompressedDictionary};
pub use csv_import::{import_csv, read_csv};
pub use format::{
    write_dictionary, DictChunk, DictChunks, DictHeader, DictionaryReader, DictionarySignals, DictionaryWriter, Dtype,
    ShuffledSignals,
};
pub use model::{deserialize_model, load_model, save_model, serialize_model};
pub use synthetic::{basis, generate_synthetic, ParamRange, SyntheticSpec};

/// Distinct row indices drawn uniformly, returned in increasing order.
pub fn sample_row_indices(n: u64, count: usize, seed: u64) -> Vec<u64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let count = count.min(n as usize);
    let mut idx: Vec<u64> = rand::seq::index::sample(&mut rng, n as usize, count).into_iter().map(|i| i as u64).collect();
    idx.sort_unstable();
    idx
}
