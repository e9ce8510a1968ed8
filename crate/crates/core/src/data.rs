//! Interaction-log ingestion, k-core filtering and train/validation/test splitting.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::DataError;
use crate::graph::{IdMap, InteractionGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Tsv,
    Csv,
}

impl InputFormat {
    fn delimiter(self) -> char {
        match self {
            InputFormat::Tsv => '\t',
            InputFormat::Csv => ',',
        }
    }

    /// Guesses the format from the file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => InputFormat::Csv,
            _ => InputFormat::Tsv,
        }
    }
}

/// Raw (user key, item key) pairs in file order. Duplicates are allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawInteractions {
    pub pairs: Vec<(String, String)>,
}

impl RawInteractions {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Drops repeated pairs, keeping the first occurrence.
    pub fn dedup(&self) -> Self {
        let mut seen = HashSet::with_capacity(self.pairs.len());
        let pairs = self
            .pairs
            .iter()
            .filter(|p| seen.insert((p.0.as_str(), p.1.as_str())))
            .cloned()
            .collect();
        Self { pairs }
    }
}

pub fn load_interactions(path: &Path, format: InputFormat) -> Result<RawInteractions, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    let delim = format.delimiter();
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(delim).map(str::trim);
        match (fields.next(), fields.next()) {
            (Some(u), Some(i)) if !u.is_empty() && !i.is_empty() => {
                pairs.push((u.to_owned(), i.to_owned()));
            }
            _ => {
                return Err(DataError::MalformedLine {
                    path: path.to_owned(),
                    line: lineno + 1,
                })
            }
        }
    }
    if pairs.is_empty() {
        log::warn!("{} contains no interactions", path.display());
    } else {
        log::info!("loaded {} interactions from {}", pairs.len(), path.display());
    }
    Ok(RawInteractions { pairs })
}

/// Keeps the maximal sub-log in which every user and item has at least `k`
/// distinct interactions. Input is deduplicated first.
pub fn apply_k_core(raw: &RawInteractions, k: usize) -> Result<RawInteractions, DataError> {
    if k == 0 {
        return Err(DataError::InvalidK(k));
    }
    let mut pairs = raw.dedup().pairs;
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (u, i) in &pairs {
            *user_deg.entry(u).or_default() += 1;
            *item_deg.entry(i).or_default() += 1;
        }
        let keep: Vec<bool> = pairs
            .iter()
            .map(|(u, i)| user_deg[u.as_str()] >= k && item_deg[i.as_str()] >= k)
            .collect();
        if keep.iter().all(|&b| b) {
            break;
        }
        let mut flags = keep.into_iter();
        pairs.retain(|_| flags.next().unwrap());
    }
    if pairs.is_empty() {
        return Err(DataError::KCoreEmpty);
    }
    Ok(RawInteractions { pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// One permutation over all edges.
    #[default]
    Global,
    /// The same floor rule applied to each user's edges separately.
    PerUser,
}

/// Edge-count ratios for train/validation/test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 7.0,
            val: 1.0,
            test: 2.0,
        }
    }
}

impl SplitRatios {
    /// Floor for train and validation, remainder to test.
    pub fn counts(&self, total: usize) -> (usize, usize, usize) {
        let sum = self.train + self.val + self.test;
        // Small epsilon keeps exact products like 0.7 * 10 from flooring to 6.
        let n_train = ((self.train / sum) * total as f64 + 1e-9).floor() as usize;
        let n_val = ((self.val / sum) * total as f64 + 1e-9).floor() as usize;
        let n_val = n_val.min(total - n_train);
        (n_train, n_val, total - n_train - n_val)
    }
}

/// Train graph plus held-out edge lists, all indexed in the train graph's id space.
///
/// The node universe covers every post-k-core user and item, so users or items
/// that only appear in held-out edges exist in the graph with degree 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub graph: InteractionGraph,
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub seed: u64,
    pub mode: SplitMode,
}

pub fn split_dataset(
    raw: &RawInteractions,
    ratios: SplitRatios,
    seed: u64,
    mode: SplitMode,
) -> Result<DatasetSplit, DataError> {
    let raw = raw.dedup();
    if raw.len() < 10 {
        return Err(DataError::TooFewEdges(raw.len()));
    }
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let edges: Vec<(usize, usize)> = raw
        .pairs
        .iter()
        .map(|(u, i)| (users.intern(u), items.intern(i)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    match mode {
        SplitMode::Global => {
            let mut order = edges;
            order.shuffle(&mut rng);
            let (a, b, _) = ratios.counts(order.len());
            test = order.split_off(a + b);
            val = order.split_off(a);
            train = order;
        }
        SplitMode::PerUser => {
            let mut by_user: Vec<Vec<(usize, usize)>> = vec![Vec::new(); users.len()];
            for e in edges {
                by_user[e.0].push(e);
            }
            for mut list in by_user {
                list.shuffle(&mut rng);
                let (a, b, _) = ratios.counts(list.len());
                test.extend_from_slice(&list[a + b..]);
                val.extend_from_slice(&list[a..a + b]);
                train.extend_from_slice(&list[..a]);
            }
        }
    }
    if train.is_empty() {
        return Err(DataError::EmptyGraph);
    }
    let graph = InteractionGraph::from_indexed(users, items, &train);
    Ok(DatasetSplit {
        graph,
        train,
        val,
        test,
        seed,
        mode,
    })
}

/// Contents of `split.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub mode: SplitMode,
    pub n_users: usize,
    pub n_items: usize,
    pub train_edges: usize,
    pub val_edges: usize,
    pub test_edges: usize,
    pub train_sha256: String,
    pub val_sha256: String,
    pub test_sha256: String,
}

const SPLIT_FILES: [&str; 3] = ["train.tsv", "val.tsv", "test.tsv"];

fn edge_list_text(g: &InteractionGraph, edges: &[(usize, usize)]) -> String {
    let mut s = String::with_capacity(edges.len() * 12);
    for &(u, i) in edges {
        s.push_str(g.user_ids().key(u));
        s.push('\t');
        s.push_str(g.item_ids().key(i));
        s.push('\n');
    }
    s
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_owned(),
        source,
    }
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        let texts = self.edge_texts();
        SplitManifest {
            seed: self.seed,
            mode: self.mode,
            n_users: self.graph.n_users(),
            n_items: self.graph.n_items(),
            train_edges: self.train.len(),
            val_edges: self.val.len(),
            test_edges: self.test.len(),
            train_sha256: sha256_hex(texts[0].as_bytes()),
            val_sha256: sha256_hex(texts[1].as_bytes()),
            test_sha256: sha256_hex(texts[2].as_bytes()),
        }
    }

    fn edge_texts(&self) -> [String; 3] {
        [
            edge_list_text(&self.graph, &self.train),
            edge_list_text(&self.graph, &self.val),
            edge_list_text(&self.graph, &self.test),
        ]
    }

    /// Writes edge lists, the id universe and `split.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<SplitManifest, DataError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (name, text) in SPLIT_FILES.iter().zip(self.edge_texts()) {
            let p = dir.join(name);
            fs::write(&p, text).map_err(io_err(&p))?;
        }
        for (name, ids) in [("users.txt", self.graph.user_ids()), ("items.txt", self.graph.item_ids())] {
            let p = dir.join(name);
            let mut text = ids.keys().join("\n");
            text.push('\n');
            fs::write(&p, text).map_err(io_err(&p))?;
        }
        let manifest = self.manifest();
        let p = dir.join("split.json");
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&p, json + "\n").map_err(io_err(&p))?;
        Ok(manifest)
    }

    /// Reads a split written by [`DatasetSplit::write`], verifying checksums.
    pub fn read(dir: &Path) -> Result<Self, DataError> {
        let read = |name: &str| -> Result<String, DataError> {
            let p: PathBuf = dir.join(name);
            fs::read_to_string(&p).map_err(io_err(&p))
        };
        let manifest: SplitManifest = serde_json::from_str(&read("split.json")?)
            .map_err(|e| DataError::Manifest(e.to_string()))?;
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        read("users.txt")?.lines().for_each(|k| {
            users.intern(k);
        });
        read("items.txt")?.lines().for_each(|k| {
            items.intern(k);
        });

        let mut lists: Vec<Vec<(usize, usize)>> = Vec::new();
        for (name, expected) in SPLIT_FILES.iter().zip([
            &manifest.train_sha256,
            &manifest.val_sha256,
            &manifest.test_sha256,
        ]) {
            let text = read(name)?;
            if &sha256_hex(text.as_bytes()) != expected {
                return Err(DataError::Manifest(format!("checksum mismatch for {name}")));
            }
            let mut list = Vec::new();
            for line in text.lines() {
                let (u, i) = line
                    .split_once('\t')
                    .ok_or_else(|| DataError::Manifest(format!("bad line in {name}: {line:?}")))?;
                let u = users.get(u).ok_or_else(|| DataError::UnknownKey(u.to_owned()))?;
                let i = items.get(i).ok_or_else(|| DataError::UnknownKey(i.to_owned()))?;
                list.push((u, i));
            }
            lists.push(list);
        }
        let test = lists.pop().unwrap();
        let val = lists.pop().unwrap();
        let train = lists.pop().unwrap();
        if train.is_empty() {
            return Err(DataError::EmptyGraph);
        }
        let graph = InteractionGraph::from_indexed(users, items, &train);
        Ok(Self {
            graph,
            train,
            val,
            test,
            seed: manifest.seed,
            mode: manifest.mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn raw(pairs: &[(&str, &str)]) -> RawInteractions {
        RawInteractions {
            pairs: pairs.iter().map(|(u, i)| (u.to_string(), i.to_string())).collect(),
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_three_pairs() {
        let f = write_tmp("u1\ti1\nu1\ti2\nu2\ti1\n");
        let r = load_interactions(f.path(), InputFormat::Tsv).unwrap();
        assert_eq!(r, raw(&[("u1", "i1"), ("u1", "i2"), ("u2", "i1")]));
    }

    #[test]
    fn load_empty_file() {
        let f = write_tmp("");
        assert!(load_interactions(f.path(), InputFormat::Tsv).unwrap().is_empty());
    }

    #[test]
    fn load_keeps_duplicates_and_ignores_extras() {
        let f = write_tmp("# header\nu1,i1,5,1234\nu1,i1\n\n");
        let r = load_interactions(f.path(), InputFormat::Csv).unwrap();
        assert_eq!(r, raw(&[("u1", "i1"), ("u1", "i1")]));
    }

    #[test]
    fn malformed_line_reports_number() {
        let f = write_tmp("u1\ti1\nlonely\n");
        match load_interactions(f.path(), InputFormat::Tsv) {
            Err(DataError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_interactions(Path::new("/nonexistent/x.tsv"), InputFormat::Tsv).unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
    }

    #[test]
    fn k1_is_dedup() {
        let r = raw(&[("a", "x"), ("a", "x"), ("b", "y")]);
        assert_eq!(apply_k_core(&r, 1).unwrap(), r.dedup());
    }

    #[test]
    fn star_graph_collapses() {
        let r = raw(&[("u", "a"), ("u", "b"), ("u", "c"), ("u", "d"), ("u", "e")]);
        assert!(matches!(apply_k_core(&r, 2), Err(DataError::KCoreEmpty)));
    }

    #[test]
    fn k_zero_rejected() {
        assert!(matches!(apply_k_core(&raw(&[("a", "b")]), 0), Err(DataError::InvalidK(0))));
    }

    fn numbered(n: usize) -> RawInteractions {
        RawInteractions {
            pairs: (0..n).map(|e| (format!("u{}", e % 4), format!("i{e}"))).collect(),
        }
    }

    #[test]
    fn split_counts_follow_floor_rule() {
        let s = split_dataset(&numbered(10), SplitRatios::default(), 3, SplitMode::Global).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        let s = split_dataset(&numbered(15), SplitRatios::default(), 3, SplitMode::Global).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 1, 4));
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset(&numbered(40), SplitRatios::default(), 9, SplitMode::Global).unwrap();
        let b = split_dataset(&numbered(40), SplitRatios::default(), 9, SplitMode::Global).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&numbered(40), SplitRatios::default(), 10, SplitMode::Global).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn too_few_edges() {
        assert!(matches!(
            split_dataset(&numbered(9), SplitRatios::default(), 0, SplitMode::Global),
            Err(DataError::TooFewEdges(9))
        ));
    }

    #[test]
    fn per_user_split_partitions_each_user() {
        let s = split_dataset(&numbered(80), SplitRatios::default(), 1, SplitMode::PerUser).unwrap();
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 80);
        for u in 0..4 {
            let tr = s.train.iter().filter(|e| e.0 == u).count();
            let va = s.val.iter().filter(|e| e.0 == u).count();
            assert_eq!((tr, va), (14, 2));
        }
    }

    #[test]
    fn write_then_read_round_trips() {
        let s = split_dataset(&numbered(30), SplitRatios::default(), 5, SplitMode::Global).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m1 = s.write(dir.path()).unwrap();
        let back = DatasetSplit::read(dir.path()).unwrap();
        assert_eq!(back, s);
        let m2 = back.write(dir.path()).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn tampered_split_is_rejected() {
        let s = split_dataset(&numbered(30), SplitRatios::default(), 5, SplitMode::Global).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write(dir.path()).unwrap();
        fs::write(dir.path().join("val.tsv"), "u0\ti0\n").unwrap();
        assert!(matches!(DatasetSplit::read(dir.path()), Err(DataError::Manifest(_))));
    }
}
