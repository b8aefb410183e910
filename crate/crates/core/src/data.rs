//! Interaction logs, the three distribution-shift splits, the id map, and
//! the item-frequency shift meter.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedAliasIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InteractionGraph;

/// Smoothing added to zero item frequencies by [`shift_kl`].
pub const SHIFT_KL_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub timestamp: Option<i64>,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, timestamp: Option<i64>) -> Self {
        Self {
            user: user.into(),
            item: item.into(),
            timestamp,
        }
    }

    fn key(&self) -> (&str, &str) {
        (&self.user, &self.item)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Popularity,
    Temporal,
    Exposure,
}

impl std::fmt::Display for SplitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitMode::Popularity => "popularity",
            SplitMode::Temporal => "temporal",
            SplitMode::Exposure => "exposure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub mode: SplitMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub quota: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub min_count: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// `KL(test ‖ train)` of item frequencies.
    pub shift_kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: Vec<Interaction>,
    pub valid: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub meta: SplitMeta,
}

impl SplitBundle {
    fn new(
        mode: SplitMode,
        quota: Option<usize>,
        seed: Option<u64>,
        train: Vec<Interaction>,
        valid: Vec<Interaction>,
        test: Vec<Interaction>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data(format!("{mode} split produced an empty training set")));
        }
        if test.is_empty() {
            return Err(Error::Data(format!("{mode} split produced an empty test set")));
        }
        let meta = SplitMeta {
            mode,
            quota,
            seed,
            min_count: 0,
            train: train.len(),
            valid: valid.len(),
            test: test.len(),
            shift_kl: shift_kl(&train, &test)?,
        };
        Ok(Self {
            train,
            valid,
            test,
            meta,
        })
    }

    /// Writes `<name>.train.tsv`, `<name>.valid.tsv`, `<name>.test.tsv` and
    /// `<name>.split.json` into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (part, rows) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            write_interactions(&dir.join(format!("{name}.{part}.tsv")), rows)?;
        }
        let meta_path = dir.join(format!("{name}.split.json"));
        let text = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&meta_path, text + "\n").map_err(|e| Error::io(&meta_path, e))
    }
}

/// Paths of the three split files sharing a prefix.
pub fn split_paths(dir: &Path, name: &str) -> [PathBuf; 3] {
    ["train", "valid", "test"].map(|p| dir.join(format!("{name}.{p}.tsv")))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines split on tabs, with 1-based line numbers. Lines starting
/// with `#` are comments.
fn tsv_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        rows.push((n + 1, trimmed.split('\t').map(str::to_owned).collect()));
    }
    Ok(rows)
}

/// Reads `user<TAB>item[<TAB>timestamp]` lines.
pub fn read_interactions(path: &Path) -> Result<Vec<Interaction>> {
    tsv_rows(path)?
        .into_iter()
        .map(|(line, fields)| {
            let timestamp = match fields.len() {
                2 => None,
                3 => Some(fields[2].trim().parse::<i64>().map_err(|e| {
                    parse_error(path, line, format!("timestamp {:?}: {e}", fields[2]))
                })?),
                n => {
                    return Err(parse_error(path, line, format!("expected 2 or 3 columns, found {n}")))
                }
            };
            if fields[0].is_empty() || fields[1].is_empty() {
                return Err(parse_error(path, line, "empty id"));
            }
            Ok(Interaction::new(fields[0].clone(), fields[1].clone(), timestamp))
        })
        .collect()
}

pub fn write_interactions(path: &Path, rows: &[Interaction]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for r in rows {
        match r.timestamp {
            Some(t) => writeln!(w, "{}\t{}\t{t}", r.user, r.item).map_err(io)?,
            None => writeln!(w, "{}\t{}", r.user, r.item).map_err(io)?,
        }
    }
    w.flush().map_err(io)
}

/// Reads `user<TAB>item<TAB>rating` lines and keeps those rated above 3.
pub fn read_positive_ratings(path: &Path) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (line, fields) in tsv_rows(path)? {
        if fields.len() != 3 {
            return Err(parse_error(
                path,
                line,
                format!("expected user, item and rating columns, found {}", fields.len()),
            ));
        }
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| parse_error(path, line, format!("rating {:?}: {e}", fields[2])))?;
        if rating > 3.0 {
            out.push(Interaction::new(fields[0].clone(), fields[1].clone(), None));
        }
    }
    Ok(out)
}

/// First occurrence of every (user, item) pair, in input order.
pub fn dedup_interactions(interactions: &[Interaction]) -> Vec<Interaction> {
    let mut seen = HashSet::new();
    interactions
        .iter()
        .filter(|r| seen.insert(r.key()))
        .cloned()
        .collect()
}

/// Repeatedly drops users and items with fewer than `min_count` interactions
/// until every survivor meets the threshold.
pub fn filter_min_count(interactions: &[Interaction], min_count: usize) -> Vec<Interaction> {
    let mut rows = interactions.to_vec();
    if min_count <= 1 {
        return rows;
    }
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for r in &rows {
            *users.entry(&r.user).or_default() += 1;
            *items.entry(&r.item).or_default() += 1;
        }
        let keep: Vec<bool> = rows
            .iter()
            .map(|r| users[r.user.as_str()] >= min_count && items[r.item.as_str()] >= min_count)
            .collect();
        if keep.iter().all(|&k| k) {
            return rows;
        }
        let mut k = keep.into_iter();
        rows.retain(|_| k.next().unwrap());
    }
}

fn drop_users_missing_from(train: &[Interaction], rows: Vec<Interaction>) -> Vec<Interaction> {
    let users: HashSet<&str> = train.iter().map(|r| r.user.as_str()).collect();
    rows.into_iter().filter(|r| users.contains(r.user.as_str())).collect()
}

/// Per item, moves `min(count, quota)` uniformly chosen interactions to the
/// test set; the rest stay in training. Test interactions of users left
/// without training data are dropped. The validation set is empty.
pub fn split_popularity(interactions: &[Interaction], quota: usize, seed: u64) -> Result<SplitBundle> {
    if quota == 0 {
        return Err(Error::InvalidArgument("popularity quota must be at least 1".into()));
    }
    let rows = dedup_interactions(interactions);
    let mut by_item: Vec<Vec<usize>> = Vec::new();
    let mut item_slot: HashMap<&str, usize> = HashMap::new();
    for (k, r) in rows.iter().enumerate() {
        let slot = *item_slot.entry(&r.item).or_insert_with(|| {
            by_item.push(Vec::new());
            by_item.len() - 1
        });
        by_item[slot].push(k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; rows.len()];
    for members in &by_item {
        let take = members.len().min(quota);
        for k in index::sample(&mut rng, members.len(), take) {
            in_test[members[k]] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in rows.into_iter().zip(in_test) {
        if t {
            test.push(r);
        } else {
            train.push(r);
        }
    }
    let test = drop_users_missing_from(&train, test);
    SplitBundle::new(SplitMode::Popularity, Some(quota), Some(seed), train, Vec::new(), test)
}

/// Per user in timestamp order (stable on ties): the earliest
/// `max(1, ⌊0.6n⌋)` interactions train, the latest `min(⌈0.2n⌉, n − train)`
/// test, and whatever lies between validates. A repeated (user, item) pair
/// keeps only its earliest occurrence.
pub fn split_temporal(interactions: &[Interaction]) -> Result<SplitBundle> {
    if let Some(pos) = interactions.iter().position(|r| r.timestamp.is_none()) {
        return Err(Error::Data(format!(
            "temporal split requires a timestamp column; interaction {} has none",
            pos + 1
        )));
    }
    let mut by_user: Vec<Vec<&Interaction>> = Vec::new();
    let mut user_slot: HashMap<&str, usize> = HashMap::new();
    for r in interactions {
        let slot = *user_slot.entry(&r.user).or_insert_with(|| {
            by_user.push(Vec::new());
            by_user.len() - 1
        });
        by_user[slot].push(r);
    }
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut rows in by_user {
        rows.sort_by_key(|r| r.timestamp);
        let mut seen = HashSet::new();
        rows.retain(|r| seen.insert(r.item.as_str()));
        let (n_train, _, n_test) = temporal_counts(rows.len());
        let n_valid = rows.len() - n_train - n_test;
        let mut it = rows.into_iter().cloned();
        train.extend(it.by_ref().take(n_train));
        valid.extend(it.by_ref().take(n_valid));
        test.extend(it);
    }
    SplitBundle::new(SplitMode::Temporal, None, None, train, valid, test)
}

/// (train, valid, test) sizes for a user with `n` interactions.
pub fn temporal_counts(n: usize) -> (usize, usize, usize) {
    if n == 0 {
        return (0, 0, 0);
    }
    let train = ((n as f64 * 0.6).floor() as usize).max(1);
    let test = ((n as f64 * 0.2).ceil() as usize).min(n - train);
    (train, n - train - test, test)
}

/// Biased training log plus randomly exposed test log, both as
/// `user<TAB>item<TAB>rating`. No re-splitting happens.
pub fn load_exposure_pair(train_file: &Path, test_file: &Path) -> Result<SplitBundle> {
    let train = dedup_interactions(&read_positive_ratings(train_file)?);
    let test = dedup_interactions(&read_positive_ratings(test_file)?);
    let train_pairs: HashSet<(&str, &str)> = train.iter().map(Interaction::key).collect();
    let test: Vec<Interaction> = test
        .iter()
        .filter(|r| !train_pairs.contains(&r.key()))
        .cloned()
        .collect();
    let test = drop_users_missing_from(&train, test);
    SplitBundle::new(SplitMode::Exposure, None, None, train, Vec::new(), test)
}

/// `KL(test ‖ train)` between item frequency distributions over the union of
/// items, with zero counts replaced by [`SHIFT_KL_EPSILON`] before
/// renormalizing.
pub fn shift_kl(train: &[Interaction], test: &[Interaction]) -> Result<f64> {
    let mut slots: HashMap<&str, usize> = HashMap::new();
    let mut counts: Vec<(f64, f64)> = Vec::new();
    for (rows, test_side) in [(train, false), (test, true)] {
        for r in rows {
            let slot = *slots.entry(&r.item).or_insert_with(|| {
                counts.push((0.0, 0.0));
                counts.len() - 1
            });
            if test_side {
                counts[slot].1 += 1.0;
            } else {
                counts[slot].0 += 1.0;
            }
        }
    }
    let (train_counts, test_counts): (Vec<f64>, Vec<f64>) = counts.into_iter().unzip();
    shift_kl_counts(&train_counts, &test_counts)
}

/// [`shift_kl`] on aligned per-item counts.
pub fn shift_kl_counts(train_counts: &[f64], test_counts: &[f64]) -> Result<f64> {
    if train_counts.len() != test_counts.len() {
        return Err(Error::Shape("count vectors differ in length".into()));
    }
    let smooth = |c: &[f64]| -> Result<Vec<f64>> {
        let total: f64 = c.iter().sum();
        if total <= 0.0 {
            return Err(Error::Data("shift KL needs non-empty train and test sets".into()));
        }
        let p: Vec<f64> = c
            .iter()
            .map(|&x| if x > 0.0 { x / total } else { SHIFT_KL_EPSILON })
            .collect();
        let z: f64 = p.iter().sum();
        Ok(p.into_iter().map(|x| x / z).collect())
    };
    let p = smooth(test_counts)?;
    let q = smooth(train_counts)?;
    Ok(p.iter().zip(&q).map(|(&a, &b)| a * (a / b).ln()).sum::<f64>().max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Item,
}

/// Raw string ids to dense indices, separately for users and items.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    users: Vec<String>,
    items: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

impl IdMap {
    /// Assigns ids in first-appearance order across the given lists.
    pub fn from_interactions<'a, I>(lists: I) -> Self
    where
        I: IntoIterator<Item = &'a [Interaction]>,
    {
        let mut map = Self::default();
        for list in lists {
            for r in list {
                map.intern(Role::User, &r.user);
                map.intern(Role::Item, &r.item);
            }
        }
        map
    }

    fn intern(&mut self, role: Role, raw: &str) -> usize {
        let (names, index) = match role {
            Role::User => (&mut self.users, &mut self.user_index),
            Role::Item => (&mut self.items, &mut self.item_index),
        };
        if let Some(&k) = index.get(raw) {
            return k;
        }
        names.push(raw.to_owned());
        index.insert(raw.to_owned(), names.len() - 1);
        names.len() - 1
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user(&self, raw: &str) -> Option<usize> {
        self.user_index.get(raw).copied()
    }

    pub fn item(&self, raw: &str) -> Option<usize> {
        self.item_index.get(raw).copied()
    }

    pub fn user_name(&self, dense: usize) -> &str {
        &self.users[dense]
    }

    pub fn item_name(&self, dense: usize) -> &str {
        &self.items[dense]
    }

    /// Dense pairs for interactions whose ids are both known; unknown ids are
    /// counted and skipped.
    pub fn encode(&self, rows: &[Interaction]) -> (Vec<(usize, usize)>, usize) {
        let mut skipped = 0;
        let pairs = rows
            .iter()
            .filter_map(|r| match (self.user(&r.user), self.item(&r.item)) {
                (Some(u), Some(i)) => Some((u, i)),
                _ => {
                    skipped += 1;
                    None
                }
            })
            .collect();
        (pairs, skipped)
    }

    /// `raw_id<TAB>dense_id<TAB>role`, users first.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        for (k, raw) in self.users.iter().enumerate() {
            writeln!(w, "{raw}\t{k}\tuser").map_err(io)?;
        }
        for (k, raw) in self.items.iter().enumerate() {
            writeln!(w, "{raw}\t{k}\titem").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut users: Vec<Option<String>> = Vec::new();
        let mut items: Vec<Option<String>> = Vec::new();
        for (line, fields) in tsv_rows(path)? {
            if fields.len() != 3 {
                return Err(parse_error(path, line, "expected raw_id, dense_id and role"));
            }
            let dense: usize = fields[1]
                .parse()
                .map_err(|e| parse_error(path, line, format!("dense id {:?}: {e}", fields[1])))?;
            let slots = match fields[2].as_str() {
                "user" => &mut users,
                "item" => &mut items,
                other => return Err(parse_error(path, line, format!("unknown role {other:?}"))),
            };
            if slots.len() <= dense {
                slots.resize(dense + 1, None);
            }
            if slots[dense].replace(fields[0].clone()).is_some() {
                return Err(parse_error(path, line, format!("dense id {dense} repeated")));
            }
        }
        let finish = |v: Vec<Option<String>>, role: &str| -> Result<Vec<String>> {
            v.into_iter()
                .enumerate()
                .map(|(k, s)| s.ok_or_else(|| Error::Data(format!("{role} id {k} missing from id map"))))
                .collect()
        };
        let mut map = Self::default();
        for raw in finish(users, "user")? {
            map.intern(Role::User, &raw);
        }
        for raw in finish(items, "item")? {
            map.intern(Role::Item, &raw);
        }
        Ok(map)
    }
}

/// A split encoded against one id map and ready for training.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: IdMap,
    pub train: Vec<(usize, usize)>,
    pub valid: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

impl Dataset {
    /// Encodes a bundle. Ids are assigned over train, valid and test in file
    /// order so that every raw id gets a slot; evaluation only counts users
    /// with training edges implicitly through masking.
    pub fn from_bundle(bundle: &SplitBundle) -> Result<Self> {
        Self::from_parts(&bundle.train, &bundle.valid, &bundle.test)
    }

    pub fn from_parts(train: &[Interaction], valid: &[Interaction], test: &[Interaction]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let ids = IdMap::from_interactions([train, valid, test]);
        Ok(Self {
            train: ids.encode(train).0,
            valid: ids.encode(valid).0,
            test: ids.encode(test).0,
            ids,
        })
    }

    /// Loads the three TSV files of a split, applying the `min_count` filter
    /// to the training part first. A missing validation file counts as empty.
    pub fn load(train: &Path, valid: Option<&Path>, test: Option<&Path>, min_count: usize) -> Result<Self> {
        let train_rows = filter_min_count(&read_interactions(train)?, min_count);
        let read_opt = |p: Option<&Path>| -> Result<Vec<Interaction>> {
            match p {
                Some(p) if p.exists() => read_interactions(p),
                Some(p) => {
                    log::warn!("{} not found, treating it as empty", p.display());
                    Ok(Vec::new())
                }
                None => Ok(Vec::new()),
            }
        };
        let valid_rows = read_opt(valid)?;
        let test_rows = read_opt(test)?;
        Self::from_parts(&train_rows, &valid_rows, &test_rows)
    }

    pub fn num_users(&self) -> usize {
        self.ids.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.ids.num_items()
    }

    pub fn train_graph(&self) -> Result<InteractionGraph> {
        InteractionGraph::build(&self.train, self.num_users(), self.num_items())
    }

    /// Per-user sorted item lists, excluding anything also in training.
    pub fn held_out(&self, pairs: &[(usize, usize)]) -> Vec<Vec<usize>> {
        let train: HashSet<(usize, usize)> = self.train.iter().copied().collect();
        let mut lists = vec![Vec::new(); self.num_users()];
        for &(u, i) in pairs {
            if !train.contains(&(u, i)) {
                lists[u].push(i);
            }
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        lists
    }

    pub fn valid_lists(&self) -> Vec<Vec<usize>> {
        self.held_out(&self.valid)
    }

    pub fn test_lists(&self) -> Vec<Vec<usize>> {
        self.held_out(&self.test)
    }
}

/// Synthetic implicit feedback with clustered tastes and a long-tailed item
/// popularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_topics: usize,
    /// Popularity of the item at rank `r` is proportional to `r^{−s}`.
    pub zipf_exponent: f64,
    /// Mean interactions per user; actual counts vary uniformly by ±50%.
    pub interactions_per_user: usize,
    /// Share of each user's choices drawn uniformly from their own topic;
    /// the rest follow global popularity.
    pub preference_share: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 2000,
            num_items: 1000,
            num_topics: 10,
            zipf_exponent: 1.2,
            interactions_per_user: 20,
            preference_share: 0.5,
            seed: 0,
        }
    }
}

/// Generates interactions with timestamps increasing in generation order.
/// Items are assigned to topics round-robin and popularity ranks are a
/// random permutation, so topics and popularity are independent.
pub fn synthetic_interactions(cfg: &SyntheticConfig) -> Result<Vec<Interaction>> {
    if cfg.num_users == 0 || cfg.num_items == 0 || cfg.num_topics == 0 {
        return Err(Error::InvalidArgument("synthetic sizes must be positive".into()));
    }
    if !(cfg.zipf_exponent >= 0.0) || !(0.0..=1.0).contains(&cfg.preference_share) {
        return Err(Error::InvalidArgument(
            "zipf exponent must be non-negative and preference share in [0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ranks: Vec<usize> = (0..cfg.num_items).collect();
    ranks.shuffle(&mut rng);
    let popularity: Vec<f64> = ranks
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-cfg.zipf_exponent))
        .collect();
    let total_pop: f64 = popularity.iter().sum();
    let item_topic: Vec<usize> = (0..cfg.num_items).map(|i| i % cfg.num_topics).collect();
    let topic_size = |t: usize| item_topic.iter().filter(|&&it| it == t).count().max(1) as f64;
    let share = cfg.preference_share;
    let samplers: Vec<WeightedAliasIndex<f64>> = (0..cfg.num_topics)
        .map(|t| {
            let in_topic = share / topic_size(t);
            let w: Vec<f64> = popularity
                .iter()
                .zip(&item_topic)
                .map(|(&p, &it)| (1.0 - share) * p / total_pop + if it == t { in_topic } else { 0.0 })
                .collect();
            WeightedAliasIndex::new(w).map_err(|e| Error::Numeric(e.to_string()))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(cfg.num_users * cfg.interactions_per_user);
    let mut clock = 0i64;
    let half = cfg.interactions_per_user / 2;
    let max_count = cfg.num_items;
    for u in 0..cfg.num_users {
        let topic = rng.gen_range(0..cfg.num_topics);
        let count = rng
            .gen_range(cfg.interactions_per_user - half..=cfg.interactions_per_user + half)
            .clamp(1, max_count);
        let mut chosen = HashSet::with_capacity(count);
        let mut attempts = 0;
        while chosen.len() < count && attempts < 50 * count {
            attempts += 1;
            let item = samplers[topic].sample(&mut rng);
            if chosen.insert(item) {
                clock += 1;
                out.push(Interaction::new(format!("u{u}"), format!("i{item}"), Some(clock)));
            }
        }
    }
    Ok(out)
}

/// Item-frequency KL of `counts` against the uniform distribution over the
/// same items.
pub fn kl_to_uniform(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    let n = counts.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            p * (p * n).ln()
        })
        .sum()
}

/// Number of interactions per distinct item, keyed by raw id.
pub fn item_counts(rows: &[Interaction]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for r in rows {
        *counts.entry(r.item.as_str()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(pairs: &[(&str, &str)]) -> Vec<Interaction> {
        pairs.iter().map(|&(u, i)| Interaction::new(u, i, None)).collect()
    }

    #[test]
    fn temporal_boundaries() {
        assert_eq!(temporal_counts(10), (6, 2, 2));
        assert_eq!(temporal_counts(1), (1, 0, 0));
        assert_eq!(temporal_counts(2), (1, 0, 1));
        assert_eq!(temporal_counts(5), (3, 1, 1));
    }

    #[test]
    fn temporal_split_in_time_order() {
        let input: Vec<Interaction> = (0..10)
            .rev()
            .map(|t| Interaction::new("u", format!("i{t}"), Some(t)))
            .chain([Interaction::new("w", "i0", Some(3)), Interaction::new("w", "i1", Some(1))])
            .collect();
        let b = split_temporal(&input).unwrap();
        let items = |v: &[Interaction], u: &str| -> Vec<String> {
            v.iter().filter(|r| r.user == u).map(|r| r.item.clone()).collect()
        };
        assert_eq!(items(&b.train, "u"), ["i0", "i1", "i2", "i3", "i4", "i5"]);
        assert_eq!(items(&b.valid, "u"), ["i6", "i7"]);
        assert_eq!(items(&b.test, "u"), ["i8", "i9"]);
        assert_eq!(items(&b.train, "w"), ["i1"]);
        assert_eq!(items(&b.test, "w"), ["i0"]);
    }

    #[test]
    fn temporal_ties_keep_input_order() {
        let input = vec![
            Interaction::new("u", "a", Some(5)),
            Interaction::new("u", "b", Some(5)),
            Interaction::new("u", "c", Some(5)),
            Interaction::new("u", "d", Some(5)),
            Interaction::new("u", "e", Some(5)),
        ];
        let b = split_temporal(&input).unwrap();
        assert_eq!(b.train.iter().map(|r| r.item.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(b.test[0].item, "e");
    }

    #[test]
    fn temporal_needs_timestamps() {
        let err = split_temporal(&rows(&[("u", "i")])).unwrap_err();
        assert!(err.to_string().contains("temporal"));
    }

    #[test]
    fn popularity_quota_per_item() {
        let mut input = Vec::new();
        for u in 0..100 {
            input.push(Interaction::new(format!("u{u}"), "hot", None));
            input.push(Interaction::new(format!("u{u}"), format!("x{}", u % 10), None));
            input.push(Interaction::new(format!("u{u}"), format!("y{}", u % 7), None));
        }
        let b = split_popularity(&input, 2, 1).unwrap();
        let hot_test = b.test.iter().filter(|r| r.item == "hot").count();
        assert_eq!(hot_test, 2);
        assert!(b.valid.is_empty());
        // every user appearing in test is also in train
        let train_users: HashSet<&str> = b.train.iter().map(|r| r.user.as_str()).collect();
        assert!(b.test.iter().all(|r| train_users.contains(r.user.as_str())));
        assert_eq!(split_popularity(&input, 2, 1).unwrap(), b);
    }

    #[test]
    fn shift_kl_examples() {
        let kl = shift_kl_counts(&[3.0, 1.0], &[1.0, 1.0]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((kl - expected).abs() < 1e-8, "{kl}");
        assert!((kl - 0.1438).abs() < 1e-4);
        let same = rows(&[("a", "x"), ("b", "y"), ("c", "x")]);
        assert!(shift_kl(&same, &same).unwrap() < 1e-9);
        let disjoint = shift_kl(&rows(&[("a", "x")]), &rows(&[("a", "y")])).unwrap();
        assert!(disjoint.is_finite() && disjoint > 10.0);
    }

    #[test]
    fn min_count_reaches_fixed_point() {
        let input = rows(&[("a", "x"), ("a", "y"), ("b", "x"), ("b", "y"), ("c", "x")]);
        let kept = filter_min_count(&input, 2);
        assert_eq!(kept.len(), 4);
        assert!(kept.iter().all(|r| r.user != "c"));
    }

    #[test]
    fn dataset_lists_exclude_train_pairs() {
        let train = rows(&[("a", "x"), ("b", "y")]);
        let test = rows(&[("a", "y"), ("a", "x"), ("b", "z")]);
        let d = Dataset::from_parts(&train, &[], &test).unwrap();
        let lists = d.test_lists();
        assert_eq!(lists[0], vec![1]);
        assert_eq!(lists[1], vec![2]);
        assert_eq!(d.num_items(), 3);
    }

    #[test]
    fn synthetic_is_reproducible_and_long_tailed() {
        let cfg = SyntheticConfig {
            num_users: 200,
            num_items: 100,
            ..SyntheticConfig::default()
        };
        let a = synthetic_interactions(&cfg).unwrap();
        assert_eq!(a, synthetic_interactions(&cfg).unwrap());
        let skew = |rows: &[Interaction]| {
            let counts: Vec<f64> = item_counts(rows).values().map(|&c| c as f64).collect();
            kl_to_uniform(&counts)
        };
        let flat = synthetic_interactions(&SyntheticConfig { zipf_exponent: 0.0, ..cfg }).unwrap();
        assert!(skew(&a) > 3.0 * skew(&flat), "{} vs {}", skew(&a), skew(&flat));
    }
}
