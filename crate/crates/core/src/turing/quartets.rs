use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl;

/// Image group behind a quartet slot. `CkptA..C` are the three sampled
/// checkpoints in the order their pools were passed to [`build_quartets`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Real,
    CkptA,
    CkptB,
    CkptC,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Real, Group::CkptA, Group::CkptB, Group::CkptC];
    pub const SYNTHETIC: [Group; 3] = [Group::CkptA, Group::CkptB, Group::CkptC];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Real => "real",
            Group::CkptA => "ckpt_a",
            Group::CkptB => "ckpt_b",
            Group::CkptC => "ckpt_c",
        }
    }
}

/// What a rater sees: an opaque token per slot, nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuartetPublic {
    pub quartet_id: String,
    pub images: [String; 4],
}

/// The answer key, kept in a separate file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuartetKey {
    pub quartet_id: String,
    /// 1-based slot holding the real image.
    pub hidden_truth: u8,
    pub group_of_slot: [Group; 4],
    pub source_ids: [String; 4],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quartet {
    pub quartet_id: String,
    /// Opaque per-slot tokens in display order.
    pub slots: [String; 4],
    pub source_ids: [String; 4],
    pub hidden_truth: u8,
    pub group_of_slot: [Group; 4],
}

impl Quartet {
    pub fn public(&self) -> QuartetPublic {
        QuartetPublic {
            quartet_id: self.quartet_id.clone(),
            images: self.slots.clone(),
        }
    }

    pub fn key(&self) -> QuartetKey {
        QuartetKey {
            quartet_id: self.quartet_id.clone(),
            hidden_truth: self.hidden_truth,
            group_of_slot: self.group_of_slot,
            source_ids: self.source_ids.clone(),
        }
    }

    pub fn join(public: QuartetPublic, key: QuartetKey) -> Result<Self> {
        if public.quartet_id != key.quartet_id {
            return Err(Error::invalid(format!(
                "quartet {} paired with key {}",
                public.quartet_id, key.quartet_id
            )));
        }
        let q = Self {
            quartet_id: public.quartet_id,
            slots: public.images,
            source_ids: key.source_ids,
            hidden_truth: key.hidden_truth,
            group_of_slot: key.group_of_slot,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let mut groups = self.group_of_slot.to_vec();
        groups.sort();
        if groups != Group::ALL {
            return Err(Error::invalid(format!(
                "quartet {} must hold one image from each group",
                self.quartet_id
            )));
        }
        let truth = self.group_of_slot.iter().position(|&g| g == Group::Real).unwrap() + 1;
        if truth != self.hidden_truth as usize {
            return Err(Error::invalid(format!("quartet {} key disagrees with its groups", self.quartet_id)));
        }
        Ok(())
    }

    /// Group shown in 1-based `slot`.
    pub fn group_at(&self, slot: u8) -> Option<Group> {
        self.group_of_slot.get((slot as usize).checked_sub(1)?).copied()
    }
}

/// Stable opaque token for an image within one study seed.
pub fn image_token(seed: u64, source_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(source_id.as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Draws `n` images from each pool without replacement and shuffles every
/// quartet's slot order independently.
pub fn build_quartets(real_pool: &[String], synth_pools: [&[String]; 3], n: usize, seed: u64) -> Result<Vec<Quartet>> {
    if n == 0 {
        return Err(Error::invalid("need at least one quartet"));
    }
    let pools = [real_pool, synth_pools[0], synth_pools[1], synth_pools[2]];
    let mut seen = HashSet::new();
    for (pool, group) in pools.iter().zip(Group::ALL) {
        if pool.len() < n {
            return Err(Error::invalid(format!(
                "{} pool has {} images, {n} needed",
                group.name(),
                pool.len()
            )));
        }
        for id in pool.iter() {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("image {id} appears in more than one pool or twice")));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<&String>> = pools
        .iter()
        .map(|p| p.choose_multiple(&mut rng, n).collect())
        .collect();
    let mut tokens = HashSet::new();
    (0..n)
        .map(|i| {
            let mut order = Group::ALL;
            order.shuffle(&mut rng);
            let source_ids = order.map(|g| draws[g.index()][i].clone());
            let slots = source_ids.clone().map(|id| image_token(seed, &id));
            for t in &slots {
                if !tokens.insert(t.clone()) {
                    return Err(Error::Conflict(format!("image token collision on {t}")));
                }
            }
            Ok(Quartet {
                quartet_id: format!("q{i:03}"),
                slots,
                source_ids,
                hidden_truth: (order.iter().position(|&g| g == Group::Real).unwrap() + 1) as u8,
                group_of_slot: order,
            })
        })
        .collect()
}

pub fn save_quartets(quartets: &[Quartet], public_path: &Path, key_path: &Path) -> Result<()> {
    jsonl::write(public_path, &quartets.iter().map(Quartet::public).collect::<Vec<_>>())?;
    jsonl::write(key_path, &quartets.iter().map(Quartet::key).collect::<Vec<_>>())
}

pub fn load_quartets(public_path: &Path, key_path: &Path) -> Result<Vec<Quartet>> {
    let public: Vec<QuartetPublic> = jsonl::read(public_path)?;
    let mut keys: HashMap<String, QuartetKey> = jsonl::read::<QuartetKey>(key_path)?
        .into_iter()
        .map(|k| (k.quartet_id.clone(), k))
        .collect();
    if keys.len() != public.len() {
        return Err(Error::invalid(format!(
            "{} quartets but {} distinct keys",
            public.len(),
            keys.len()
        )));
    }
    public
        .into_iter()
        .map(|p| {
            let key = keys
                .remove(&p.quartet_id)
                .ok_or_else(|| Error::NotFound(format!("no key for quartet {}", p.quartet_id)))?;
            Quartet::join(p, key)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn full_pools_used_once() {
        let (r, a, b, c) = (pool("r", 50), pool("a", 50), pool("b", 50), pool("c", 50));
        let qs = build_quartets(&r, [&a, &b, &c], 50, 7).unwrap();
        assert_eq!(qs.len(), 50);
        let mut used: Vec<&String> = qs.iter().flat_map(|q| q.source_ids.iter()).collect();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 200);
        for q in &qs {
            q.validate().unwrap();
            assert!(q.source_ids[q.hidden_truth as usize - 1].starts_with('r'));
        }
        assert_eq!(qs, build_quartets(&r, [&a, &b, &c], 50, 7).unwrap());
    }

    #[test]
    fn public_file_is_opaque() {
        let (r, a, b, c) = (pool("real", 3), pool("ckA", 3), pool("ckB", 3), pool("ckC", 3));
        let qs = build_quartets(&r, [&a, &b, &c], 3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p, k) = (dir.path().join("q.jsonl"), dir.path().join("key.jsonl"));
        save_quartets(&qs, &p, &k).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains("real") && !text.contains("ck") && !text.contains("truth"));
        assert_eq!(load_quartets(&p, &k).unwrap(), qs);
    }

    #[test]
    fn preconditions() {
        let (r, a, b) = (pool("r", 5), pool("a", 5), pool("b", 5));
        assert!(build_quartets(&r, [&a, &b, &pool("c", 4)], 5, 0).is_err());
        assert!(build_quartets(&r, [&a, &b, &pool("r", 5)], 5, 0).is_err());
        assert!(build_quartets(&r, [&a, &b, &pool("c", 5)], 0, 0).is_err());
    }
}
