use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::seed::{self, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    NoniidShards,
}

/// How a training pool is split across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    /// Only used by `noniid_shards`; must equal `num_clients * shards_per_client`.
    #[serde(default)]
    pub shards_total: usize,
    #[serde(default = "default_shards_per_client")]
    pub shards_per_client: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_shards_per_client() -> usize {
    2
}

impl PartitionSpec {
    pub fn iid(num_clients: usize, seed: u64) -> Self {
        Self {
            scheme: PartitionScheme::Iid,
            num_clients,
            shards_total: 0,
            shards_per_client: 0,
            seed,
        }
    }

    pub fn shards(num_clients: usize, shards_per_client: usize, seed: u64) -> Self {
        Self {
            scheme: PartitionScheme::NoniidShards,
            num_clients,
            shards_total: num_clients * shards_per_client,
            shards_per_client,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Plan("partition needs at least one client".into()));
        }
        if self.scheme == PartitionScheme::NoniidShards
            && (self.shards_per_client == 0 || self.shards_total != self.num_clients * self.shards_per_client)
        {
            return Err(Error::Plan(format!(
                "shards_total ({}) must equal num_clients ({}) x shards_per_client ({})",
                self.shards_total, self.num_clients, self.shards_per_client
            )));
        }
        Ok(())
    }
}

/// Client shards plus the server's holdout, with the source indices of each.
#[derive(Debug, Clone)]
pub struct Partition {
    pub clients: Vec<LabeledSet>,
    pub server: LabeledSet,
    pub client_indices: Vec<Vec<usize>>,
    pub server_indices: Vec<usize>,
}

/// Removes a random holdout of `server_size` examples, then splits the rest
/// across clients.
///
/// IID: shuffle and cut into `num_clients` contiguous parts whose sizes
/// differ by at most one, larger parts going to the lowest client ids.
///
/// Non-IID: stable-sort by label and cut into `shards_total` shards that
/// never straddle a class boundary (shards per class proportional to its
/// count, at least one), then deal `shards_per_client` random shards to each
/// client. Every client therefore sees at most `shards_per_client` labels.
pub fn partition(set: &LabeledSet, spec: &PartitionSpec, server_size: usize) -> Result<Partition> {
    spec.validate()?;
    let mut rng = seed::stream(spec.seed, &[purpose::PARTITION]);
    let n = set.len();
    if server_size > n {
        return Err(Error::InsufficientData {
            needed: server_size,
            available: n,
        });
    }
    let mut server_indices = index::sample(&mut rng, n, server_size).into_vec();
    server_indices.sort_unstable();
    let mut held = vec![false; n];
    server_indices.iter().for_each(|&i| held[i] = true);
    let mut pool: Vec<usize> = (0..n).filter(|&i| !held[i]).collect();

    let client_indices = match spec.scheme {
        PartitionScheme::Iid => {
            if pool.len() < spec.num_clients {
                return Err(Error::InsufficientData {
                    needed: spec.num_clients,
                    available: pool.len(),
                });
            }
            pool.shuffle(&mut rng);
            let (base, extra) = (pool.len() / spec.num_clients, pool.len() % spec.num_clients);
            let mut start = 0;
            (0..spec.num_clients)
                .map(|c| {
                    let len = base + usize::from(c < extra);
                    let part = pool[start..start + len].to_vec();
                    start += len;
                    part
                })
                .collect::<Vec<_>>()
        }
        PartitionScheme::NoniidShards => {
            if pool.len() < spec.shards_total {
                return Err(Error::InsufficientData {
                    needed: spec.shards_total,
                    available: pool.len(),
                });
            }
            pool.sort_by_key(|&i| set.labels()[i]);
            let mut shards = class_pure_shards(set, &pool, spec.shards_total)?;
            shards.shuffle(&mut rng);
            shards
                .chunks(spec.shards_per_client)
                .map(|group| group.concat())
                .collect()
        }
    };

    Ok(Partition {
        clients: client_indices.iter().map(|idx| set.subset(idx)).collect(),
        server: set.subset(&server_indices),
        client_indices,
        server_indices,
    })
}

/// Cuts label-sorted `pool` into `total` non-empty shards, none spanning two
/// labels.
fn class_pure_shards(set: &LabeledSet, pool: &[usize], total: usize) -> Result<Vec<Vec<usize>>> {
    let mut runs: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    for end in 1..=pool.len() {
        if end == pool.len() || set.labels()[pool[end]] != set.labels()[pool[start]] {
            runs.push(&pool[start..end]);
            start = end;
        }
    }
    if runs.len() > total {
        return Err(Error::Plan(format!(
            "{total} shards cannot keep {} classes apart; need at least one shard per class",
            runs.len()
        )));
    }
    // One shard per class, then hand out the rest by largest shortfall
    // against the proportional quota.
    let quota: Vec<f64> = runs
        .iter()
        .map(|r| total as f64 * r.len() as f64 / pool.len() as f64)
        .collect();
    let mut counts = vec![1usize; runs.len()];
    for _ in runs.len()..total {
        let pick = (0..runs.len())
            .filter(|&c| counts[c] < runs[c].len())
            .max_by(|&a, &b| {
                (quota[a] - counts[a] as f64)
                    .total_cmp(&(quota[b] - counts[b] as f64))
                    .then(b.cmp(&a))
            })
            .expect("pool holds at least `total` examples");
        counts[pick] += 1;
    }
    let mut shards = Vec::with_capacity(total);
    for (run, &k) in runs.iter().zip(&counts) {
        let (base, extra) = (run.len() / k, run.len() % k);
        let mut s = 0;
        for j in 0..k {
            let len = base + usize::from(j < extra);
            shards.push(run[s..s + len].to_vec());
            s += len;
        }
    }
    Ok(shards)
}
