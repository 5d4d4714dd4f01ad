//! MovieLens parsing, binarization to implicit feedback, and reproducible
//! per-user train/validation/test splits.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Source file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// `u.data`: tab-separated user, item, rating, timestamp.
    Ml100k,
    /// `ratings.dat`: "::"-separated user, item, rating, timestamp.
    Ml1m,
}

impl DatasetFormat {
    pub fn parse_name(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ml100k" | "ml-100k" => Ok(DatasetFormat::Ml100k),
            "ml1m" | "ml-1m" => Ok(DatasetFormat::Ml1m),
            other => Err(Error::Config(format!("unknown dataset format '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetFormat::Ml100k => "ml100k",
            DatasetFormat::Ml1m => "ml1m",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub timestamp: i64,
}

/// Raw explicit-feedback rows as read from disk.
#[derive(Debug, Clone)]
pub struct RatingsTable {
    pub rows: Vec<Rating>,
}

/// Binary implicit user×item feedback. Rows hold each user's interacted
/// items as sorted, duplicate-free dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    m: usize,
    n: usize,
    rows: Vec<Vec<u32>>,
}

impl InteractionMatrix {
    pub fn new(m: usize, n: usize, mut rows: Vec<Vec<u32>>) -> Result<Self> {
        if rows.len() != m {
            return Err(Error::InvalidArgument(format!(
                "expected {m} rows, got {}",
                rows.len()
            )));
        }
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate item in row {u}"
                )));
            }
            if row.last().is_some_and(|&i| i as usize >= n) {
                return Err(Error::InvalidArgument(format!(
                    "item index out of range in row {u} (n={n})"
                )));
            }
        }
        Ok(InteractionMatrix { m, n, rows })
    }

    pub fn empty_like(m: usize, n: usize) -> Self {
        InteractionMatrix {
            m,
            n,
            rows: vec![Vec::new(); m],
        }
    }

    pub fn users(&self) -> usize {
        self.m
    }

    pub fn items(&self) -> usize {
        self.n
    }

    pub fn row(&self, u: usize) -> &[u32] {
        &self.rows[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.rows[u].len()
    }

    pub fn contains(&self, u: usize, i: u32) -> bool {
        self.rows[u].binary_search(&i).is_ok()
    }

    pub fn total_interactions(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        if self.m == 0 || self.n == 0 {
            0.0
        } else {
            self.total_interactions() as f64 / (self.m as f64 * self.n as f64)
        }
    }

    /// Dense 0/1 view of one row.
    pub fn dense_row(&self, u: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for &i in &self.rows[u] {
            v[i as usize] = 1.0;
        }
        v
    }

    /// Items the user has not interacted with, ascending.
    pub fn negatives(&self, u: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.n - self.rows[u].len());
        let mut pos = self.rows[u].iter().peekable();
        for i in 0..self.n as u32 {
            if pos.peek() == Some(&&i) {
                pos.next();
            } else {
                out.push(i);
            }
        }
        out
    }

    /// Union of two matrices over the same index space.
    pub fn union(&self, other: &InteractionMatrix) -> Result<InteractionMatrix> {
        if self.m != other.m || self.n != other.n {
            return Err(Error::ShapeMismatch {
                op: "union",
                lhs: vec![self.m, self.n],
                rhs: vec![other.m, other.n],
            });
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| {
                let mut r: Vec<u32> = a.iter().chain(b.iter()).copied().collect();
                r.sort_unstable();
                r.dedup();
                r
            })
            .collect();
        InteractionMatrix::new(self.m, self.n, rows)
    }

    /// Per-item interaction counts.
    pub fn item_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.n];
        for row in &self.rows {
            for &i in row {
                counts[i as usize] += 1;
            }
        }
        counts
    }
}

/// Train/validation/test interaction sets over one dense index space,
/// plus the raw-id maps.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: InteractionMatrix,
    pub valid: InteractionMatrix,
    pub test: InteractionMatrix,
    /// dense user index -> raw user id
    pub user_ids: Vec<u32>,
    /// dense item index -> raw item id
    pub item_ids: Vec<u32>,
}

impl SplitDataset {
    pub fn users(&self) -> usize {
        self.train.users()
    }

    pub fn items(&self) -> usize {
        self.train.items()
    }

    /// Training interactions merged with validation ones, used when a
    /// final model is refit before test evaluation.
    pub fn train_plus_valid(&self) -> Result<InteractionMatrix> {
        self.train.union(&self.valid)
    }

    /// Dense 0/1 profile vector for user `u`: training interactions, plus
    /// validation interactions when `include_validation` is set.
    pub fn condition_vector(&self, u: usize, include_validation: bool) -> Result<Vec<f64>> {
        if u >= self.users() {
            return Err(Error::UserOutOfRange {
                user: u,
                m: self.users(),
            });
        }
        let mut v = self.train.dense_row(u);
        if include_validation {
            for &i in self.valid.row(u) {
                v[i as usize] = 1.0;
            }
        }
        Ok(v)
    }

    /// One line per interaction: `user item {train|valid|test}`, users
    /// ascending, items ascending within a user. Byte-identical for
    /// identical splits.
    pub fn write_manifest(&self, w: &mut dyn Write) -> Result<()> {
        for u in 0..self.users() {
            let mut tagged: Vec<(u32, &str)> = self
                .train
                .row(u)
                .iter()
                .map(|&i| (i, "train"))
                .chain(self.valid.row(u).iter().map(|&i| (i, "valid")))
                .chain(self.test.row(u).iter().map(|&i| (i, "test")))
                .collect();
            tagged.sort_unstable_by_key(|&(i, _)| i);
            for (i, tag) in tagged {
                writeln!(w, "{u} {i} {tag}")?;
            }
        }
        Ok(())
    }
}

/// Parse a MovieLens ratings file. Every well-formed row is captured;
/// malformed rows abort with their line number.
pub fn parse_ratings(path: &Path, format: DatasetFormat) -> Result<RatingsTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: format!("cannot open: {e}"),
    })?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    let mut seen: HashMap<(u32, u32), usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            DatasetFormat::Ml100k => line.split('\t').collect(),
            DatasetFormat::Ml1m => line.split("::").collect(),
        };
        let parse_err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg,
        };
        if fields.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 fields, got {}",
                fields.len()
            )));
        }
        let user: u32 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad user id '{}'", fields[0])))?;
        let item: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad item id '{}'", fields[1])))?;
        let rating: u8 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad rating '{}'", fields[2])))?;
        if !(1..=5).contains(&rating) {
            return Err(parse_err(format!("rating {rating} outside 1..=5")));
        }
        let timestamp: i64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp '{}'", fields[3])))?;
        if let Some(first) = seen.insert((user, item), lineno) {
            return Err(parse_err(format!(
                "duplicate (user {user}, item {item}) pair, first seen at line {first}"
            )));
        }
        rows.push(Rating {
            user,
            item,
            rating,
            timestamp,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no ratings in {}",
            path.display()
        )));
    }
    Ok(RatingsTable { rows })
}

/// Convert ratings to binary implicit feedback with dense ids assigned in
/// ascending raw-id order. Every rating, whatever its value, becomes an
/// interaction.
pub fn binarize_and_index(table: &RatingsTable) -> Result<(InteractionMatrix, Vec<u32>, Vec<u32>)> {
    if table.rows.is_empty() {
        return Err(Error::EmptyInput("empty ratings table".into()));
    }
    let mut user_ids: Vec<u32> = table.rows.iter().map(|r| r.user).collect();
    user_ids.sort_unstable();
    user_ids.dedup();
    let mut item_ids: Vec<u32> = table.rows.iter().map(|r| r.item).collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let user_index: HashMap<u32, u32> = user_ids
        .iter()
        .enumerate()
        .map(|(i, &raw)| (raw, i as u32))
        .collect();
    let item_index: HashMap<u32, u32> = item_ids
        .iter()
        .enumerate()
        .map(|(i, &raw)| (raw, i as u32))
        .collect();
    let mut rows = vec![Vec::new(); user_ids.len()];
    for r in &table.rows {
        rows[user_index[&r.user] as usize].push(item_index[&r.item]);
    }
    let matrix = InteractionMatrix::new(user_ids.len(), item_ids.len(), rows)?;
    Ok((matrix, user_ids, item_ids))
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-user random partition of interactions into train/validation/test.
///
/// `⌊test_ratio·deg+0.5⌋` interactions go to test (never all of them);
/// the same rule then carves validation out of the remaining pool, always
/// leaving at least one training interaction. Deterministic given `seed`.
pub fn split_dataset(
    matrix: &InteractionMatrix,
    user_ids: Vec<u32>,
    item_ids: Vec<u32>,
    test_ratio: f64,
    valid_ratio_of_train: f64,
    seed: u64,
) -> Result<SplitDataset> {
    if !(0.0..1.0).contains(&test_ratio) || !(0.0..1.0).contains(&valid_ratio_of_train) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must lie in [0,1): test={test_ratio}, valid={valid_ratio_of_train}"
        )));
    }
    let (m, n) = (matrix.users(), matrix.items());
    let mut train_rows = Vec::with_capacity(m);
    let mut valid_rows = Vec::with_capacity(m);
    let mut test_rows = Vec::with_capacity(m);
    for u in 0..m {
        let deg = matrix.degree(u);
        if deg < 2 {
            return Err(Error::TooFewInteractions {
                user: user_ids.get(u).copied().unwrap_or(u as u32),
                count: deg,
            });
        }
        let mut items = matrix.row(u).to_vec();
        let mut rng = rng::stream(seed, Stream::Split, &[u as u64]);
        // Full shuffle, then cut: [test | valid | train].
        let shuffled = rng::sample_without_replacement(&mut items, deg, &mut rng);
        let n_test = round_half_up(test_ratio * deg as f64).min(deg - 1);
        let pool = deg - n_test;
        let n_valid = round_half_up(valid_ratio_of_train * pool as f64).min(pool - 1);
        test_rows.push(shuffled[..n_test].to_vec());
        valid_rows.push(shuffled[n_test..n_test + n_valid].to_vec());
        train_rows.push(shuffled[n_test + n_valid..].to_vec());
    }
    Ok(SplitDataset {
        train: InteractionMatrix::new(m, n, train_rows)?,
        valid: InteractionMatrix::new(m, n, valid_rows)?,
        test: InteractionMatrix::new(m, n, test_rows)?,
        user_ids,
        item_ids,
    })
}

/// Convenience: parse, binarize, split.
pub fn load_and_split(
    path: &Path,
    format: DatasetFormat,
    test_ratio: f64,
    valid_ratio: f64,
    seed: u64,
) -> Result<SplitDataset> {
    let table = parse_ratings(path, format)?;
    let (matrix, user_ids, item_ids) = binarize_and_index(&table)?;
    split_dataset(&matrix, user_ids, item_ids, test_ratio, valid_ratio, seed)
}


#[cfg(test)]
mod dataset_tests {
    //! Statistics checks against the real MovieLens files; skipped when
    //! the data directory is absent (see README / scripts/fetch-data.sh).

    use super::*;

    fn data_file(rel: &str) -> Option<std::path::PathBuf> {
        let root = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .parent()?
            .parent()?
            .join("data")
            .join(rel);
        root.exists().then_some(root)
    }

    #[test]
    fn ml100k_statistics() {
        let Some(path) = data_file("ml-100k/u.data") else {
            eprintln!("skipping: MovieLens-100K not present");
            return;
        };
        let table = parse_ratings(&path, DatasetFormat::Ml100k).unwrap();
        assert_eq!(table.rows.len(), 100_000);
        let (matrix, users, items) = binarize_and_index(&table).unwrap();
        assert_eq!(users.len(), 943);
        assert_eq!(items.len(), 1682);
        assert_eq!(matrix.total_interactions(), 100_000);
        assert!((matrix.density() - 0.063).abs() < 0.001);
    }

    #[test]
    fn ml1m_statistics() {
        let Some(path) = data_file("ml-1m/ratings.dat") else {
            eprintln!("skipping: MovieLens-1M not present");
            return;
        };
        let table = parse_ratings(&path, DatasetFormat::Ml1m).unwrap();
        assert_eq!(table.rows.len(), 1_000_209);
        let (matrix, users, items) = binarize_and_index(&table).unwrap();
        assert_eq!(users.len(), 6040);
        assert_eq!(items.len(), 3706);
        assert!((matrix.density() - 0.0447).abs() < 0.001);
        drop(matrix);
    }

    #[test]
    fn ml100k_split_is_exhaustive_and_disjoint() {
        let Some(path) = data_file("ml-100k/u.data") else {
            eprintln!("skipping: MovieLens-100K not present");
            return;
        };
        let s = load_and_split(&path, DatasetFormat::Ml100k, 0.2, 0.2, 0).unwrap();
        let (train, valid, test) = (
            s.train.total_interactions(),
            s.valid.total_interactions(),
            s.test.total_interactions(),
        );
        assert_eq!(train + valid + test, 100_000);
        // ≈ 80/20 at the dataset level, with ±m/2 rounding slack.
        assert!((test as f64 - 20_000.0).abs() <= 943.0 / 2.0, "test={test}");
        for u in 0..s.users() {
            let mut all: Vec<u32> = s
                .train
                .row(u)
                .iter()
                .chain(s.valid.row(u))
                .chain(s.test.row(u))
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all.len(), s.train.degree(u) + s.valid.degree(u) + s.test.degree(u));
            all.dedup();
            assert_eq!(
                all.len(),
                s.train.degree(u) + s.valid.degree(u) + s.test.degree(u),
                "split sets overlap for user {u}"
            );
            assert!(s.train.degree(u) >= 1);
        }
    }
}
