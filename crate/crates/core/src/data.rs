//! Implicit-feedback ingestion, per-user train/test splitting and synthetic
//! ground-truth worlds.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use indexmap::IndexSet;

use crate::error::{Error, Result};
use crate::numkit::{dot, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Csv,
}

impl Format {
    pub fn separator(self) -> char {
        match self {
            Format::Tsv => '\t',
            Format::Csv => ',',
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Tsv => "tsv",
            Format::Csv => "csv",
        })
    }
}

/// External id <-> dense index bijection, indices assigned in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: IndexSet<String>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ids named `{prefix}{index}` for `0..n`.
    pub fn sequential(prefix: &str, n: usize) -> Self {
        Self {
            ids: (0..n).map(|k| format!("{prefix}{k}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.get_index_of(id)
    }

    pub fn id_of(&self, index: usize) -> Option<&str> {
        self.ids.get_index(index).map(String::as_str)
    }

    fn intern(&mut self, id: &str) -> usize {
        match self.ids.get_index_of(id) {
            Some(k) => k,
            None => self.ids.insert_full(id.to_owned()).0,
        }
    }

    /// One id per line, in index order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for id in &self.ids {
            writeln!(w, "{id}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut map = IdMap::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let id = line.trim_end_matches('\r');
            if id.is_empty() {
                continue;
            }
            if map.ids.contains(id) {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("duplicate id `{id}` in id map"),
                });
            }
            map.ids.insert(id.to_owned());
        }
        Ok(map)
    }
}

/// Dense user -> sorted item-list adjacency of observed positives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    n_items: usize,
    adjacency: Vec<Vec<u32>>,
    users: IdMap,
    items: IdMap,
}

const HEADER_TOKENS: &[&str] = &["user", "user_id", "userid", "uid", "users"];

fn is_numeric(field: &str) -> bool {
    field.parse::<f64>().is_ok()
}

struct Record<'a> {
    line: usize,
    user: &'a str,
    item: &'a str,
}

fn parse_records(text: &str, format: Format) -> Result<Vec<Record<'_>>> {
    let sep = format.separator();
    let mut out = Vec::new();
    let mut first_data = true;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    for (pos, &(line, raw)) in lines.iter().enumerate() {
        let mut fields = raw.split(sep).map(str::trim);
        let user = fields.next().unwrap_or("");
        let item = fields.next();
        if first_data {
            first_data = false;
            // A header is a non-numeric first field that is either a known
            // column name or sits above a numeric first field.
            if !is_numeric(user) {
                let known = HEADER_TOKENS.contains(&user.to_ascii_lowercase().as_str());
                let next_numeric = lines
                    .get(pos + 1)
                    .map(|(_, l)| is_numeric(l.split(sep).next().unwrap_or("").trim()))
                    .unwrap_or(false);
                if known || next_numeric {
                    continue;
                }
            }
        }
        let item = match item {
            Some(i) if !i.is_empty() && !user.is_empty() => i,
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected `user{sep}item[{sep}timestamp]`, got `{raw}`"),
                })
            }
        };
        out.push(Record { line, user, item });
    }
    Ok(out)
}

impl InteractionSet {
    /// Builds a set from dense adjacency. Lists are sorted and deduplicated.
    pub fn from_adjacency(
        mut adjacency: Vec<Vec<u32>>,
        n_items: usize,
        users: IdMap,
        items: IdMap,
    ) -> Result<Self> {
        if adjacency.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if users.len() != adjacency.len() || items.len() != n_items {
            return Err(Error::ShapeMismatch(format!(
                "id maps ({} users, {} items) vs adjacency ({} users, {} items)",
                users.len(),
                items.len(),
                adjacency.len(),
                n_items
            )));
        }
        for (u, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if list.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "user {} has no interactions",
                    users.id_of(u).unwrap_or("?")
                )));
            }
            if list.last().map_or(false, |&i| i as usize >= n_items) {
                return Err(Error::InvalidArgument(format!(
                    "user {u} references an item outside [0, {n_items})"
                )));
            }
        }
        Ok(Self {
            n_items,
            adjacency,
            users,
            items,
        })
    }

    pub fn ingest<R: BufRead>(reader: R, format: Format) -> Result<Self> {
        Self::ingest_with_vocab(reader, format, IdMap::new(), IdMap::new())
    }

    /// Ingests with pre-seeded id maps; unseen ids are appended.
    pub fn ingest_with_vocab<R: BufRead>(
        mut reader: R,
        format: Format,
        mut users: IdMap,
        mut items: IdMap,
    ) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let records = parse_records(&text, format)?;
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); users.len()];
        for rec in &records {
            let u = users.intern(rec.user);
            let i = items.intern(rec.item);
            if u >= adjacency.len() {
                adjacency.resize(u + 1, Vec::new());
            }
            adjacency[u].push(i as u32);
        }
        let n_items = items.len();
        Self::from_adjacency(adjacency, n_items, users, items)
    }

    /// Writes one `user<sep>item` line per interaction, ordered by user index then item index.
    pub fn export<W: Write>(&self, mut w: W, format: Format) -> Result<()> {
        let sep = format.separator();
        for (u, list) in self.adjacency.iter().enumerate() {
            let uid = self.users.id_of(u).expect("user id map covers adjacency");
            for &i in list {
                let iid = self
                    .items
                    .id_of(i as usize)
                    .expect("item id map covers catalog");
                writeln!(w, "{uid}{sep}{iid}")?;
            }
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.adjacency.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_interactions(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn items_of(&self, user: usize) -> &[u32] {
        &self.adjacency[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.adjacency[user].binary_search(&(item as u32)).is_ok()
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    pub fn user_ids(&self) -> &IdMap {
        &self.users
    }

    pub fn item_ids(&self) -> &IdMap {
        &self.items
    }

    /// All `(user, item)` positives in canonical order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, l)| l.iter().map(move |&i| (u as u32, i)))
    }
}

/// Train interactions plus per-user held-out test items in the same index space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: InteractionSet,
    pub test: Vec<Vec<u32>>,
}

impl SplitDataset {
    pub fn new(train: InteractionSet, mut test: Vec<Vec<u32>>) -> Result<Self> {
        if test.len() != train.n_users() {
            return Err(Error::ShapeMismatch(format!(
                "test lists for {} users, train has {}",
                test.len(),
                train.n_users()
            )));
        }
        for (u, list) in test.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            for &i in list.iter() {
                if i as usize >= train.n_items() {
                    return Err(Error::InvalidArgument(format!(
                        "test item {i} outside the item index space"
                    )));
                }
                if train.contains(u, i as usize) {
                    return Err(Error::InvalidArgument(format!(
                        "user {u} has item {i} in both train and test"
                    )));
                }
            }
        }
        Ok(Self { train, test })
    }

    pub fn n_test_interactions(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }

    /// Reads a train file and a test file into one index space. With `vocab`
    /// the id maps are pre-seeded; otherwise they grow in first-appearance
    /// order over train then test. Test users must exist in train.
    pub fn load<R1: BufRead, R2: BufRead>(
        mut train: R1,
        mut test: R2,
        format: Format,
        vocab: Option<(IdMap, IdMap)>,
    ) -> Result<Self> {
        let (mut users, mut items) = vocab.unwrap_or_default();
        let mut train_text = String::new();
        train.read_to_string(&mut train_text)?;
        let mut test_text = String::new();
        test.read_to_string(&mut test_text)?;

        let train_recs = parse_records(&train_text, format)?;
        if train_recs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); users.len()];
        for rec in &train_recs {
            let u = users.intern(rec.user);
            let i = items.intern(rec.item);
            if u >= adjacency.len() {
                adjacency.resize(u + 1, Vec::new());
            }
            adjacency[u].push(i as u32);
        }
        let mut held: Vec<Vec<u32>> = vec![Vec::new(); adjacency.len()];
        for rec in parse_records(&test_text, format)? {
            let u = users.index_of(rec.user).ok_or_else(|| Error::Parse {
                line: rec.line,
                message: format!("test user `{}` has no train interactions", rec.user),
            })?;
            let i = items.intern(rec.item);
            held[u].push(i as u32);
        }
        let n_items = items.len();
        let train = InteractionSet::from_adjacency(adjacency, n_items, users, items)?;
        SplitDataset::new(train, held)
    }

    pub fn export_test<W: Write>(&self, mut w: W, format: Format) -> Result<()> {
        let sep = format.separator();
        for (u, list) in self.test.iter().enumerate() {
            let uid = self.train.users.id_of(u).expect("user id");
            for &i in list {
                let iid = self.train.items.id_of(i as usize).expect("item id");
                writeln!(w, "{uid}{sep}{iid}")?;
            }
        }
        Ok(())
    }
}

/// Per-user uniform split: `max(1, floor(ratio * n_u))` items stay in train.
pub fn split_train_test(
    set: &InteractionSet,
    ratio: f64,
    rng: &mut RngStream,
) -> Result<SplitDataset> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let mut train = Vec::with_capacity(set.n_users());
    let mut test = Vec::with_capacity(set.n_users());
    for list in &set.adjacency {
        let mut items = list.clone();
        rng.shuffle(&mut items);
        // The epsilon absorbs representation error such as 0.7 * 10 = 6.999...
        let n_train = ((ratio * items.len() as f64 + 1e-9).floor() as usize).max(1);
        let held = items.split_off(n_train.min(items.len()));
        train.push(items);
        test.push(held);
    }
    let train =
        InteractionSet::from_adjacency(train, set.n_items, set.users.clone(), set.items.clone())?;
    SplitDataset::new(train, test)
}

/// Latent factors behind a synthetic world.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub d_lat: usize,
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
    pub threshold: f64,
}

impl GroundTruth {
    pub fn true_score(&self, user: usize, item: usize) -> f64 {
        let d = self.d_lat;
        dot(
            &self.user_factors[user * d..(user + 1) * d],
            &self.item_factors[item * d..(item + 1) * d],
        )
    }

    pub fn n_users(&self) -> usize {
        self.user_factors.len() / self.d_lat
    }

    pub fn n_items(&self) -> usize {
        self.item_factors.len() / self.d_lat
    }

    pub fn is_relevant(&self, user: usize, item: usize) -> bool {
        self.true_score(user, item) > self.threshold
    }
}

const SYNTH_REDRAWS: usize = 100;

/// Draws standard-normal user/item factors and observes `(u, i)` iff its true
/// score exceeds `threshold` and an independent exposure coin lands heads.
pub fn synth_dataset(
    n_users: usize,
    n_items: usize,
    d_lat: usize,
    threshold: f64,
    exposure: f64,
    rng: &mut RngStream,
) -> Result<(InteractionSet, GroundTruth)> {
    if n_users == 0 || n_items == 0 || d_lat == 0 {
        return Err(Error::InvalidArgument(
            "synthetic counts must be >= 1".into(),
        ));
    }
    if !(exposure > 0.0 && exposure <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "exposure must lie in (0, 1], got {exposure}"
        )));
    }
    let mut item_factors = Vec::with_capacity(n_items * d_lat);
    for _ in 0..n_items * d_lat {
        item_factors.push(rng.gaussian());
    }
    let mut user_factors = Vec::with_capacity(n_users * d_lat);
    let mut adjacency = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let mut attempt = 0;
        loop {
            let factor: Vec<f64> = (0..d_lat).map(|_| rng.gaussian()).collect();
            let mut observed = Vec::new();
            for i in 0..n_items {
                let s = dot(&factor, &item_factors[i * d_lat..(i + 1) * d_lat]);
                if s > threshold && rng.uniform() < exposure {
                    observed.push(i as u32);
                }
            }
            if !observed.is_empty() {
                user_factors.extend_from_slice(&factor);
                adjacency.push(observed);
                break;
            }
            attempt += 1;
            if attempt > SYNTH_REDRAWS {
                return Err(Error::Synthesis(format!(
                    "user {u} observed nothing after {SYNTH_REDRAWS} redraws"
                )));
            }
        }
    }
    let set = InteractionSet::from_adjacency(
        adjacency,
        n_items,
        IdMap::sequential("u", n_users),
        IdMap::sequential("i", n_items),
    )?;
    let truth = GroundTruth {
        d_lat,
        user_factors,
        item_factors,
        threshold,
    };
    Ok((set, truth))
}
