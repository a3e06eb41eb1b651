use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{streams, SimRng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum PartitionMode {
    #[default]
    /// Uniform shuffle, then near-equal contiguous splits.
    Iid,
    /// Sort by label, cut into `shards_per_client · K` contiguous shards and
    /// deal them out, so each client sees only a few classes.
    LabelShards { shards_per_client: usize },
}

/// Sample indices owned by each client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub clients: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(Vec::len).collect()
    }

    /// Number of distinct labels held by each client.
    pub fn label_counts(&self, labels: &[usize]) -> Vec<usize> {
        self.clients
            .iter()
            .map(|c| {
                let mut ls: Vec<usize> = c.iter().map(|&i| labels[i]).collect();
                ls.sort_unstable();
                ls.dedup();
                ls.len()
            })
            .collect()
    }
}

/// Splits `labels.len()` samples across `clients`. Every sample goes to
/// exactly one client and every client gets at least one sample.
pub fn partition(
    labels: &[usize],
    clients: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Partition> {
    let n = labels.len();
    if clients == 0 {
        return Err(invalid("need at least one client"));
    }
    if n < clients {
        return Err(invalid(format!(
            "{n} samples cannot cover {clients} clients"
        )));
    }
    let mut rng = SimRng::new(seed).fork(streams::PARTITION);
    let out = match mode {
        PartitionMode::Iid => {
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            even_chunks(&idx, clients)
        }
        PartitionMode::LabelShards { shards_per_client } => {
            if shards_per_client == 0 {
                return Err(invalid("shards_per_client must be >= 1"));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            // Shuffle first so ties within a label are broken by the seed.
            rng.shuffle(&mut idx);
            idx.sort_by_key(|&i| labels[i]);
            let n_shards = (shards_per_client * clients).min(n);
            let mut shards = even_chunks(&idx, n_shards);
            rng.shuffle(&mut shards);
            let mut out = vec![Vec::new(); clients];
            for (s, shard) in shards.into_iter().enumerate() {
                out[s % clients].extend(shard);
            }
            out
        }
    };
    Ok(Partition { clients: out })
}

fn even_chunks(idx: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = idx.len();
    (0..k)
        .map(|c| idx[c * n / k..(c + 1) * n / k].to_vec())
        .collect()
}
