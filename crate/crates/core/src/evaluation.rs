//! Top-k recommendation and ranking metrics: P@k, R@k, N@k at k ∈ {5, 20},
//! averaged over users that have at least one target interaction.

use crate::dataio::SplitDataset;
use crate::error::{Error, Result};

pub const KS: [usize; 2] = [5, 20];

/// Which interaction set metrics are computed against. Validation ranks
/// against the validation set excluding training items; test ranks against
/// the test set excluding training and validation items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Valid,
    Test,
}

impl SplitTag {
    pub fn name(&self) -> &'static str {
        match self {
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
        }
    }
}

/// Mean metrics over evaluated users.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub p5: f64,
    pub p20: f64,
    pub r5: f64,
    pub r20: f64,
    pub n5: f64,
    pub n20: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

impl MetricsReport {
    pub fn in_unit_range(&self) -> bool {
        [self.p5, self.p20, self.r5, self.r20, self.n5, self.n20]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub split: SplitTag,
    pub report: MetricsReport,
}

/// Per-epoch metric rows; epochs strictly increase within a split tag.
#[derive(Debug, Clone, Default)]
pub struct LearningCurve {
    rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, epoch: usize, split: SplitTag, report: MetricsReport) -> Result<()> {
        if let Some(last) = self.rows.iter().rev().find(|r| r.split == split) {
            if last.epoch >= epoch {
                return Err(Error::InvalidArgument(format!(
                    "curve epochs must strictly increase per split: {} after {}",
                    epoch, last.epoch
                )));
            }
        }
        self.rows.push(CurveRow {
            epoch,
            split,
            report,
        });
        Ok(())
    }

    pub fn rows(&self) -> &[CurveRow] {
        &self.rows
    }

    pub fn extend(&mut self, other: &LearningCurve) -> Result<()> {
        for r in &other.rows {
            self.push(r.epoch, r.split, r.report)?;
        }
        Ok(())
    }
}

/// Top-k item indices by descending score, ties broken by ascending item
/// index, after removing `exclude` (a sorted slice). Returns fewer than k
/// items when fewer are rankable.
pub fn rank_items(scores: &[f64], exclude: &[u32], k: usize) -> Vec<u32> {
    debug_assert!(exclude.windows(2).all(|w| w[0] < w[1]));
    let mut candidates: Vec<u32> = (0..scores.len() as u32)
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let take = k.min(candidates.len());
    candidates.sort_unstable_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    candidates.truncate(take);
    candidates
}

fn hits_in_prefix(list: &[u32], test: &[u32], k: usize) -> usize {
    list.iter()
        .take(k)
        .filter(|i| test.binary_search(i).is_ok())
        .count()
}

/// |top-k ∩ test| / k. The denominator stays k even when the list is
/// shorter.
pub fn precision_at_k(list: &[u32], test: &[u32], k: usize) -> f64 {
    hits_in_prefix(list, test, k) as f64 / k as f64
}

/// |top-k ∩ test| / |test|.
pub fn recall_at_k(list: &[u32], test: &[u32], k: usize) -> f64 {
    debug_assert!(!test.is_empty());
    hits_in_prefix(list, test, k) as f64 / test.len() as f64
}

/// Binary-relevance NDCG: DCG = Σ_{i≤k, hit} 1/log₂(i+1) over 1-based
/// ranks, normalized by the ideal DCG over min(k, |test|) positions.
pub fn ndcg_at_k(list: &[u32], test: &[u32], k: usize) -> f64 {
    debug_assert!(!test.is_empty());
    let dcg: f64 = list
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.binary_search(i).is_ok())
        .map(|(rank0, _)| 1.0 / ((rank0 + 2) as f64).log2())
        .sum();
    let ideal_hits = k.min(test.len());
    let idcg: f64 = (0..ideal_hits).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

/// Batch score source: returns one length-n score row per requested user.
pub trait Scorer {
    fn scores(&self, users: &[usize]) -> Result<Vec<Vec<f64>>>;
}

impl<F> Scorer for F
where
    F: Fn(&[usize]) -> Result<Vec<Vec<f64>>>,
{
    fn scores(&self, users: &[usize]) -> Result<Vec<Vec<f64>>> {
        self(users)
    }
}

const EVAL_BATCH: usize = 256;

/// Rank every user with ≥1 interaction in the target split and average the
/// metrics. Users without target interactions are skipped, not scored as
/// zero. The exclusion set mirrors what the scored model consumed: the
/// training interactions, plus the validation ones only when
/// `exclude_validation` is set (the retrain-on-train+valid protocol).
/// `threads = 1` is the sequential reference; higher counts shard users
/// across threads and reduce in user-index order, which leaves the result
/// identical.
pub fn evaluate_model<S: Scorer + Sync>(
    scorer: &S,
    split: &SplitDataset,
    tag: SplitTag,
    exclude_validation: bool,
    threads: usize,
) -> Result<MetricsReport> {
    let m = split.users();
    let target = match tag {
        SplitTag::Valid => &split.valid,
        SplitTag::Test => &split.test,
    };
    // Validation items can never be excluded when they are the target.
    let exclude_validation = exclude_validation && tag == SplitTag::Test;
    let evaluable: Vec<usize> = (0..m).filter(|&u| target.degree(u) > 0).collect();
    let skipped = m - evaluable.len();
    if evaluable.is_empty() {
        return Err(Error::NoEvaluableUsers {
            split: tag.name().into(),
        });
    }

    let per_user = |users: &[usize]| -> Result<Vec<[f64; 6]>> {
        let mut out = Vec::with_capacity(users.len());
        for chunk in users.chunks(EVAL_BATCH) {
            let score_rows = scorer.scores(chunk)?;
            if score_rows.len() != chunk.len() {
                return Err(Error::InvalidArgument(
                    "scorer returned wrong number of rows".into(),
                ));
            }
            for (&u, scores) in chunk.iter().zip(&score_rows) {
                let exclude: Vec<u32> = if exclude_validation {
                    let mut v: Vec<u32> = split
                        .train
                        .row(u)
                        .iter()
                        .chain(split.valid.row(u))
                        .copied()
                        .collect();
                    v.sort_unstable();
                    v
                } else {
                    split.train.row(u).to_vec()
                };
                let list = rank_items(scores, &exclude, 20);
                let t = target.row(u);
                out.push([
                    precision_at_k(&list, t, 5),
                    precision_at_k(&list, t, 20),
                    recall_at_k(&list, t, 5),
                    recall_at_k(&list, t, 20),
                    ndcg_at_k(&list, t, 5),
                    ndcg_at_k(&list, t, 20),
                ]);
            }
        }
        Ok(out)
    };

    let rows: Vec<[f64; 6]> = if threads <= 1 || evaluable.len() < 2 * EVAL_BATCH {
        per_user(&evaluable)?
    } else {
        let shard = evaluable.len().div_ceil(threads);
        let results: Vec<Result<Vec<[f64; 6]>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = evaluable
                .chunks(shard)
                .map(|chunk| scope.spawn(|| per_user(chunk)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("eval thread"))
                .collect()
        });
        let mut rows = Vec::with_capacity(evaluable.len());
        for r in results {
            rows.extend(r?);
        }
        rows
    };

    let mut sums = [0.0f64; 6];
    for r in &rows {
        for (s, v) in sums.iter_mut().zip(r) {
            *s += v;
        }
    }
    let count = rows.len() as f64;
    Ok(MetricsReport {
        p5: sums[0] / count,
        p20: sums[1] / count,
        r5: sums[2] / count,
        r20: sums[3] / count,
        n5: sums[4] / count,
        n20: sums[5] / count,
        evaluated: rows.len(),
        skipped,
    })
}
