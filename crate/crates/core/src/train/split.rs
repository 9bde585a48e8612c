//! Participant-disjoint train/test splits and k-fold plans that keep class
//! proportions close on every side.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Participants up to which the split search is exhaustive.
const EXHAUSTIVE_LIMIT: usize = 16;
const RESTARTS: usize = 8;

/// Per-participant class counts, in participant-id order.
#[derive(Debug, Clone)]
struct Table {
    ids: Vec<String>,
    counts: Vec<Vec<u64>>,
    k: usize,
}

impl Table {
    fn build<'a>(samples: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let mut map: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
        let mut k = 0;
        for (p, label) in samples {
            k = k.max(label + 1);
            let row = map.entry(p).or_default();
            if row.len() <= label {
                row.resize(label + 1, 0);
            }
            row[label] += 1;
        }
        let ids = map.keys().map(|s| s.to_string()).collect();
        let counts = map
            .into_values()
            .map(|mut r| {
                r.resize(k, 0);
                r
            })
            .collect();
        Table { ids, counts, k }
    }

    fn totals(&self, members: impl Iterator<Item = usize>) -> Vec<u64> {
        let mut t = vec![0; self.k];
        for m in members {
            t.iter_mut().zip(&self.counts[m]).for_each(|(a, b)| *a += b);
        }
        t
    }

    /// Classes present in the data but held by a single participant.
    fn lone_classes(&self) -> Vec<usize> {
        (0..self.k)
            .filter(|&c| {
                let holders = self.counts.iter().filter(|r| r[c] > 0).count();
                holders == 1
            })
            .collect()
    }
}

/// Largest absolute difference between the class distributions of two
/// sides, as a fraction.
pub fn proportion_deviation(a: &[u64], b: &[u64]) -> f64 {
    let (sa, sb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if sa == 0.0 || sb == 0.0 {
        return 1.0;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / sa - y as f64 / sb).abs())
        .fold(0.0, f64::max)
}

fn proportions(t: &[u64]) -> Vec<f64> {
    let s = t.iter().sum::<u64>().max(1) as f64;
    t.iter().map(|&x| x as f64 / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub train_class_proportions: Vec<f64>,
    pub test_class_proportions: Vec<f64>,
    /// Largest per-class proportion difference between the two sides.
    pub max_deviation: f64,
    /// Share of samples on the test side.
    pub test_fraction: f64,
}

impl SplitPlan {
    pub fn is_test(&self, participant: &str) -> bool {
        self.test
            .binary_search_by(|p| p.as_str().cmp(participant))
            .is_ok()
    }
}

struct SplitEval<'a> {
    table: &'a Table,
    total: Vec<u64>,
    n: u64,
    target: f64,
}

impl SplitEval<'_> {
    /// Worse of the class-proportion gap and the test-fraction gap; `None`
    /// when a side is empty.
    fn cost(&self, test: &[u64]) -> Option<f64> {
        let taken: u64 = test.iter().sum();
        if taken == 0 || taken == self.n {
            return None;
        }
        let train: Vec<u64> = self.total.iter().zip(test).map(|(a, b)| a - b).collect();
        let frac = taken as f64 / self.n as f64;
        Some(proportion_deviation(&train, test).max((frac - self.target).abs()))
    }

    fn cost_of(&self, mask: &[bool]) -> Option<f64> {
        self.cost(&self.table.totals((0..mask.len()).filter(|&i| mask[i])))
    }
}

/// Assigns whole participants to the test side so that it holds about
/// `test_fraction` of the samples while every class keeps nearly the same
/// share on both sides. Exhaustive for small participant counts, greedy
/// with single-move and swap refinement otherwise.
pub fn stratified_participant_split<'a>(
    samples: impl IntoIterator<Item = (&'a str, usize)>,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let table = Table::build(samples);
    let p = table.ids.len();
    if p < 2 {
        return Err(Error::InfeasibleSplit(format!(
            "{p} participant(s) cannot be split into disjoint sides"
        )));
    }
    let lone = table.lone_classes();
    if !lone.is_empty() {
        return Err(Error::InfeasibleSplit(format!(
            "classes {lone:?} are contributed by a single participant"
        )));
    }
    let total = table.totals(0..p);
    let eval = SplitEval {
        table: &table,
        n: total.iter().sum(),
        total,
        target: test_fraction,
    };
    let best = if p <= EXHAUSTIVE_LIMIT {
        exhaustive(&eval, p)
    } else {
        (0..RESTARTS)
            .filter_map(|r| local_search(&eval, p, seed.wrapping_add(r as u64)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    };
    let (mask, _) = best.ok_or_else(|| {
        Error::InfeasibleSplit("every participant holds only empty recordings".into())
    })?;
    let test_t = table.totals((0..p).filter(|&i| mask[i]));
    let train_t = table.totals((0..p).filter(|&i| !mask[i]));
    let side = |want: bool| -> Vec<String> {
        (0..p)
            .filter(|&i| mask[i] == want)
            .map(|i| table.ids[i].clone())
            .collect()
    };
    Ok(SplitPlan {
        train: side(false),
        test: side(true),
        max_deviation: proportion_deviation(&train_t, &test_t),
        test_fraction: test_t.iter().sum::<u64>() as f64 / eval.n as f64,
        train_class_proportions: proportions(&train_t),
        test_class_proportions: proportions(&test_t),
    })
}

fn exhaustive(eval: &SplitEval, p: usize) -> Option<(Vec<bool>, f64)> {
    let mut best: Option<(u32, f64)> = None;
    let mut test = vec![0u64; eval.table.k];
    // Gray-code walk: one participant toggles per step.
    let mut mask = 0u32;
    for step in 1u32..(1 << p) {
        let bit = step.trailing_zeros() as usize;
        mask ^= 1 << bit;
        let row = &eval.table.counts[bit];
        if mask & (1 << bit) != 0 {
            test.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        } else {
            test.iter_mut().zip(row).for_each(|(a, b)| *a -= b);
        }
        if let Some(c) = eval.cost(&test) {
            let better = match best {
                None => true,
                Some((m, bc)) => c < bc - 1e-15 || (c <= bc + 1e-15 && mask < m),
            };
            if better {
                best = Some((mask, c));
            }
        }
    }
    best.map(|(m, c)| ((0..p).map(|i| m & (1 << i) != 0).collect(), c))
}

fn local_search(eval: &SplitEval, p: usize, seed: u64) -> Option<(Vec<bool>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    // Greedy fill: take participants while the test side is below target.
    let mut mask = vec![false; p];
    let mut taken = 0u64;
    for &i in &order {
        let size: u64 = eval.table.counts[i].iter().sum();
        if ((taken + size) as f64) <= eval.target * eval.n as f64 + size as f64 / 2.0 {
            mask[i] = true;
            taken += size;
        }
    }
    let score = |m: &[bool]| eval.cost_of(m).unwrap_or(f64::INFINITY);
    let mut cur = score(&mask);
    loop {
        let mut improved = false;
        for &i in &order {
            mask[i] = !mask[i];
            let c = score(&mask);
            if c < cur - 1e-12 {
                cur = c;
                improved = true;
            } else {
                mask[i] = !mask[i];
            }
        }
        for &i in &order {
            for &j in &order {
                if mask[i] && !mask[j] {
                    mask[i] = false;
                    mask[j] = true;
                    let c = score(&mask);
                    if c < cur - 1e-12 {
                        cur = c;
                        improved = true;
                    } else {
                        mask[i] = true;
                        mask[j] = false;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    eval.cost_of(&mask).map(|c| (mask, c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Participants held out by each fold.
    pub folds: Vec<Vec<String>>,
    /// Largest per-class proportion difference between any fold and the
    /// whole dataset.
    pub max_deviation: f64,
}

impl FoldPlan {
    pub fn fold_of(&self, participant: &str) -> Option<usize> {
        self.folds
            .iter()
            .position(|f| f.iter().any(|p| p == participant))
    }
}

/// Partitions participants into `k` folds whose participant counts differ
/// by at most one, then swaps participants between folds while that brings
/// fold class distributions closer to the global one.
pub fn make_folds<'a>(
    samples: impl IntoIterator<Item = (&'a str, usize)>,
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    let table = Table::build(samples);
    let p = table.ids.len();
    if k < 2 || p < k {
        return Err(Error::InfeasibleSplit(format!(
            "cannot form {k} participant-disjoint folds from {p} participant(s)"
        )));
    }
    let global = table.totals(0..p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| std::cmp::Reverse(table.counts[i].iter().sum::<u64>()));

    // Round-robin in a snake pattern gives balanced counts and sizes.
    let mut assign = vec![0usize; p];
    for (pos, &i) in order.iter().enumerate() {
        let round = pos / k;
        let slot = pos % k;
        assign[i] = if round % 2 == 0 { slot } else { k - 1 - slot };
    }
    let cost = |assign: &[usize]| -> f64 {
        (0..k)
            .map(|f| {
                let t = table.totals((0..p).filter(|&i| assign[i] == f));
                proportion_deviation(&t, &global)
            })
            .sum()
    };
    let mut cur = cost(&assign);
    loop {
        let mut improved = false;
        for a in 0..p {
            for b in (a + 1)..p {
                if assign[a] == assign[b] {
                    continue;
                }
                assign.swap(a, b);
                let c = cost(&assign);
                if c < cur - 1e-12 {
                    cur = c;
                    improved = true;
                } else {
                    assign.swap(a, b);
                }
            }
        }
        if !improved {
            break;
        }
    }
    let folds: Vec<Vec<String>> = (0..k)
        .map(|f| {
            (0..p)
                .filter(|&i| assign[i] == f)
                .map(|i| table.ids[i].clone())
                .collect()
        })
        .collect();
    let max_deviation = (0..k)
        .map(|f| proportion_deviation(&table.totals((0..p).filter(|&i| assign[i] == f)), &global))
        .fold(0.0, f64::max);
    Ok(FoldPlan {
        folds,
        max_deviation,
    })
}
