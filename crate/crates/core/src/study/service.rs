use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{encode_png, load, ImageMeta, Origin};
use crate::jsonl;
use crate::memaudit::{AuditVerdict, BundleRecord, Verdict, VerdictLog};
use crate::turing::{image_token, Quartet, QuartetPublic, ResponseRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Rating,
    Triage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SessionRecord {
    session_id: String,
    rater_id: String,
    mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: String,
    pub rater_id: String,
    pub mode: Mode,
    /// Item indices in presentation order.
    pub order: Vec<usize>,
    answered: HashSet<usize>,
}

impl Session {
    /// Position of the first unanswered item; equals `order.len()` when done.
    pub fn cursor(&self) -> usize {
        self.order
            .iter()
            .position(|i| !self.answered.contains(i))
            .unwrap_or(self.order.len())
    }

    pub fn answered(&self) -> usize {
        self.answered.len()
    }
}

/// A memorization pair as shown for review: the composite only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPayload {
    pub pair_rank: usize,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NextItem {
    Quartet(QuartetPublic),
    Pair(PairPayload),
    Done { done: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub next_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub session_id: String,
    pub mode: Mode,
    pub answered: usize,
    pub total: usize,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct StudyFiles {
    pub responses: PathBuf,
    pub sessions: PathBuf,
    pub verdicts: PathBuf,
}

impl StudyFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            responses: dir.join("responses.jsonl"),
            sessions: dir.join("sessions.jsonl"),
            verdicts: dir.join("audit_verdicts.jsonl"),
        }
    }
}

/// Everything the service serves.
#[derive(Debug, Clone, Default)]
pub struct StudySetup {
    pub seed: u64,
    pub quartets: Vec<Quartet>,
    /// Image file for every source id that appears in a quartet.
    pub image_paths: HashMap<String, PathBuf>,
    /// Review bundle directory and its index, for triage sessions.
    pub review: Option<(PathBuf, Vec<BundleRecord>)>,
}

/// Session state machine over append-only logs. Restarting from the same
/// files rebuilds identical state.
#[derive(Debug)]
pub struct StudyService {
    seed: u64,
    quartets: Vec<Quartet>,
    pairs: Vec<BundleRecord>,
    images: HashMap<String, PathBuf>,
    sessions: BTreeMap<String, Session>,
    files: StudyFiles,
    verdicts: VerdictLog,
}

fn hash_u64(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

impl StudyService {
    pub fn open(setup: StudySetup, files: StudyFiles) -> Result<Self> {
        let mut images = HashMap::new();
        for q in &setup.quartets {
            for (token, id) in q.slots.iter().zip(&q.source_ids) {
                let path = setup
                    .image_paths
                    .get(id)
                    .ok_or_else(|| Error::NotFound(format!("no image file for {id}")))?;
                images.insert(token.clone(), path.clone());
            }
        }
        let (pairs, ranks) = match &setup.review {
            Some((dir, records)) => {
                for r in records {
                    images.insert(image_token(setup.seed, &r.composite.to_string_lossy()), dir.join(&r.composite));
                }
                (records.clone(), records.iter().map(|r| r.rank).collect::<Vec<_>>())
            }
            None => (Vec::new(), Vec::new()),
        };
        for f in [&files.responses, &files.sessions, &files.verdicts] {
            if let Some(dir) = f.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let verdicts = VerdictLog::open(&files.verdicts, ranks)?;
        let mut svc = Self {
            seed: setup.seed,
            quartets: setup.quartets,
            pairs,
            images,
            sessions: BTreeMap::new(),
            files,
            verdicts,
        };
        svc.replay()?;
        Ok(svc)
    }

    fn replay(&mut self) -> Result<()> {
        if self.files.sessions.exists() {
            for s in jsonl::read::<SessionRecord>(&self.files.sessions)? {
                self.insert_session(&s.rater_id, s.mode);
            }
        }
        if self.files.responses.exists() {
            for r in jsonl::read::<ResponseRecord>(&self.files.responses)? {
                let item = self.quartet_index(&r.quartet_id)?;
                self.insert_session(&r.rater_id, Mode::Rating).answered.insert(item);
            }
        }
        let done: Vec<(String, usize)> = self
            .verdicts
            .verdicts()
            .iter()
            .map(|v| (v.reviewer_id.clone(), v.rank))
            .collect();
        for (rater, rank) in done {
            let item = self.pair_index(rank)?;
            self.insert_session(&rater, Mode::Triage).answered.insert(item);
        }
        Ok(())
    }

    fn quartet_index(&self, id: &str) -> Result<usize> {
        self.quartets
            .iter()
            .position(|q| q.quartet_id == id)
            .ok_or_else(|| Error::NotFound(format!("quartet {id}")))
    }

    fn pair_index(&self, rank: usize) -> Result<usize> {
        self.pairs
            .iter()
            .position(|p| p.rank == rank)
            .ok_or_else(|| Error::NotFound(format!("pair {rank}")))
    }

    fn item_count(&self, mode: Mode) -> usize {
        match mode {
            Mode::Rating => self.quartets.len(),
            Mode::Triage => self.pairs.len(),
        }
    }

    pub fn session_id(&self, rater_id: &str, mode: Mode) -> String {
        let tag = [mode as u8];
        hex::encode(&hash_u64(&[b"session", &self.seed.to_le_bytes(), rater_id.as_bytes(), &tag])[..8])
    }

    /// Per-rater presentation order.
    pub fn order_for(&self, rater_id: &str, mode: Mode) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.item_count(mode)).collect();
        if mode == Mode::Rating {
            let h = hash_u64(&[b"order", &self.seed.to_le_bytes(), rater_id.as_bytes()]);
            let seed = u64::from_le_bytes(h[..8].try_into().unwrap());
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }

    fn insert_session(&mut self, rater_id: &str, mode: Mode) -> &mut Session {
        let id = self.session_id(rater_id, mode);
        if !self.sessions.contains_key(&id) {
            let order = self.order_for(rater_id, mode);
            self.sessions.insert(
                id.clone(),
                Session {
                    session_id: id.clone(),
                    rater_id: rater_id.to_string(),
                    mode,
                    order,
                    answered: HashSet::new(),
                },
            );
        }
        self.sessions.get_mut(&id).unwrap()
    }

    /// Creates the rater's session, or returns the existing one.
    pub fn create_session(&mut self, rater_id: &str, mode: Mode) -> Result<Progress> {
        if rater_id.trim().is_empty() {
            return Err(Error::Validation(vec!["rater_id".into()]));
        }
        if self.item_count(mode) == 0 {
            return Err(Error::invalid(format!("no items loaded for {mode:?} sessions")));
        }
        let id = self.session_id(rater_id, mode);
        if !self.sessions.contains_key(&id) {
            jsonl::append(
                &self.files.sessions,
                &SessionRecord {
                    session_id: id.clone(),
                    rater_id: rater_id.to_string(),
                    mode,
                },
            )?;
            self.insert_session(rater_id, mode);
        }
        self.progress(&id)
    }

    pub fn session(&self, id: &str) -> Result<&Session> {
        self.sessions
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn progress(&self, id: &str) -> Result<Progress> {
        let s = self.session(id)?;
        Ok(Progress {
            session_id: s.session_id.clone(),
            mode: s.mode,
            answered: s.answered(),
            total: s.order.len(),
            done: s.cursor() == s.order.len(),
        })
    }

    pub fn next_item(&self, id: &str) -> Result<NextItem> {
        let s = self.session(id)?;
        let Some(&item) = s.order.get(s.cursor()) else {
            return Ok(NextItem::Done { done: true });
        };
        Ok(match s.mode {
            Mode::Rating => NextItem::Quartet(self.quartets[item].public()),
            Mode::Triage => {
                let p = &self.pairs[item];
                NextItem::Pair(PairPayload {
                    pair_rank: p.rank,
                    image: image_token(self.seed, &p.composite.to_string_lossy()),
                })
            }
        })
    }

    /// Validates and records one answer for the session's current item.
    pub fn submit(&mut self, id: &str, body: &Value) -> Result<Ack> {
        let s = self.session(id)?;
        let (mode, rater) = (s.mode, s.rater_id.clone());
        let item = match mode {
            Mode::Rating => {
                let record = parse_response(body, &rater)?;
                let item = self
                    .quartet_index(&record.quartet_id)
                    .map_err(|_| Error::Validation(vec!["quartet_id".into()]))?;
                self.check_turn(id, item)?;
                jsonl::append(&self.files.responses, &record)?;
                item
            }
            Mode::Triage => {
                let verdict = parse_verdict(body, &rater)?;
                let item = self
                    .pair_index(verdict.rank)
                    .map_err(|_| Error::Validation(vec!["rank".into()]))?;
                self.check_turn(id, item)?;
                self.verdicts.record(verdict)?;
                item
            }
        };
        let s = self.sessions.get_mut(id).unwrap();
        s.answered.insert(item);
        Ok(Ack {
            accepted: true,
            next_index: s.cursor(),
        })
    }

    fn check_turn(&self, id: &str, item: usize) -> Result<()> {
        let s = self.session(id)?;
        if s.answered.contains(&item) {
            return Err(Error::Conflict("item already answered in this session".into()));
        }
        if s.order.get(s.cursor()) != Some(&item) {
            return Err(Error::Conflict("item is not the session's current item".into()));
        }
        Ok(())
    }

    /// PNG bytes for an opaque image token.
    pub fn image_png(&self, token: &str) -> Result<Vec<u8>> {
        let path = self
            .images
            .get(token)
            .ok_or_else(|| Error::NotFound(format!("image {token}")))?;
        encode_png(&load(path, ImageMeta::new(token, Origin::Synthetic))?)
    }
}

fn parse_response(body: &Value, rater: &str) -> Result<ResponseRecord> {
    let mut bad = Vec::new();
    let quartet_id = body.get("quartet_id").and_then(Value::as_str).filter(|s| !s.is_empty());
    if quartet_id.is_none() {
        bad.push("quartet_id".to_string());
    }
    let in_range = |v: &Value| v.as_u64().filter(|n| (1..=4).contains(n)).map(|n| n as u8);
    let chosen = body.get("chosen_slot").and_then(in_range);
    if chosen.is_none() {
        bad.push("chosen_slot".to_string());
    }
    let ratings: Option<[u8; 4]> = body
        .get("ratings")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 4)
        .and_then(|a| a.iter().map(in_range).collect::<Option<Vec<u8>>>())
        .map(|v| [v[0], v[1], v[2], v[3]]);
    if ratings.is_none() {
        bad.push("ratings".to_string());
    }
    if body.get("rater_id").is_some_and(|r| r.as_str() != Some(rater)) {
        bad.push("rater_id".to_string());
    }
    let timestamp = match body.get("timestamp") {
        None | Some(Value::Null) => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            bad.push("timestamp".to_string());
            String::new()
        }
    };
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    Ok(ResponseRecord {
        rater_id: rater.to_string(),
        quartet_id: quartet_id.unwrap().to_string(),
        chosen_slot: chosen.unwrap(),
        ratings: ratings.unwrap(),
        timestamp,
    })
}

fn parse_verdict(body: &Value, rater: &str) -> Result<AuditVerdict> {
    let mut bad = Vec::new();
    let rank = body.get("rank").and_then(Value::as_u64);
    if rank.is_none() {
        bad.push("rank".to_string());
    }
    let verdict = body
        .get("verdict")
        .and_then(|v| serde_json::from_value::<Verdict>(v.clone()).ok());
    if verdict.is_none() {
        bad.push("verdict".to_string());
    }
    let note = match body.get("note") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            bad.push("note".to_string());
            String::new()
        }
    };
    if body.get("reviewer_id").is_some_and(|r| r.as_str() != Some(rater)) {
        bad.push("reviewer_id".to_string());
    }
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    Ok(AuditVerdict {
        rank: rank.unwrap() as usize,
        reviewer_id: rater.to_string(),
        verdict: verdict.unwrap(),
        note,
    })
}
