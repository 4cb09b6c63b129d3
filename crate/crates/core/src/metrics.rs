//! Ranking metrics: Kendall tau, Spearman rho, average percentile rank.

use std::collections::HashMap;
use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::BenchmarkTable;
use crate::space::Architecture;

/// Items ranked by descending score; rank 1 is the highest score and ties go
/// to the lexicographically smaller id.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    items: Vec<(String, f64)>,
    ranks: HashMap<String, usize>,
}

impl Ranking {
    pub fn from_scores(items: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let items: Vec<(String, f64)> = items.into_iter().collect();
        if let Some((id, s)) = items.iter().find(|(_, s)| s.is_nan()) {
            return Err(Error::InvalidValue {
                what: if id.is_empty() { "score" } else { "score (NaN)" },
                value: *s,
            });
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| {
            items[b]
                .1
                .total_cmp(&items[a].1)
                .then_with(|| items[a].0.cmp(&items[b].0))
        });
        let mut ranks = HashMap::with_capacity(items.len());
        for (pos, &i) in order.iter().enumerate() {
            if ranks.insert(items[i].0.clone(), pos + 1).is_some() {
                return Err(Error::MismatchedItems(format!("duplicate id {:?}", items[i].0)));
            }
        }
        Ok(Ranking { items, ranks })
    }

    /// Reads a CSV with `id,score` columns.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            score: f64,
        }
        let rows = csv::Reader::from_reader(input)
            .deserialize::<Row>()
            .map(|r| r.map(|row| (row.id, row.score)).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        Self::from_scores(rows)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn rank(&self, id: &str) -> Option<usize> {
        self.ranks.get(id).copied()
    }

    pub fn items(&self) -> &[(String, f64)] {
        &self.items
    }

    /// Paired rank vectors of `self` and `other`, in `self`'s item order.
    fn paired(&self, other: &Ranking) -> Result<(Vec<usize>, Vec<usize>)> {
        if self.len() != other.len() {
            return Err(Error::MismatchedItems(format!(
                "{} items vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.len() < 2 {
            return Err(Error::MismatchedItems("need at least two items".into()));
        }
        let mut r = Vec::with_capacity(self.len());
        let mut s = Vec::with_capacity(self.len());
        for (id, _) in &self.items {
            let theirs = other
                .rank(id)
                .ok_or_else(|| Error::MismatchedItems(format!("{id:?} missing from one ranking")))?;
            r.push(self.ranks[id]);
            s.push(theirs);
        }
        Ok((r, s))
    }
}

/// `2 / (n (n - 1)) * sum_{i<j} sign(r_i - r_j) * sign(s_i - s_j)` over
/// distinct integer ranks.
pub fn kendall_tau_ranks(r: &[usize], s: &[usize]) -> f64 {
    assert_eq!(r.len(), s.len());
    let n = r.len();
    let mut sum: i64 = 0;
    for i in 0..n {
        for j in i + 1..n {
            let a = (r[i] as i64 - r[j] as i64).signum();
            let b = (s[i] as i64 - s[j] as i64).signum();
            sum += a * b;
        }
    }
    2.0 * sum as f64 / (n as f64 * (n as f64 - 1.0))
}

/// `1 - 6 * sum (r_i - s_i)^2 / (n (n^2 - 1))` over distinct integer ranks,
/// evaluated as one rounded division of exact integers.
pub fn spearman_rho_ranks(r: &[usize], s: &[usize]) -> f64 {
    assert_eq!(r.len(), s.len());
    let n = r.len() as i128;
    let d2: i128 = r
        .iter()
        .zip(s)
        .map(|(&a, &b)| (a as i128 - b as i128).pow(2))
        .sum();
    let den = n * (n * n - 1);
    (den - 6 * d2) as f64 / den as f64
}

pub fn kendall_tau(r: &Ranking, s: &Ranking) -> Result<f64> {
    let (a, b) = r.paired(s)?;
    Ok(kendall_tau_ranks(&a, &b))
}

pub fn spearman_rho(r: &Ranking, s: &Ranking) -> Result<f64> {
    let (a, b) = r.paired(s)?;
    Ok(spearman_rho_ranks(&a, &b))
}

/// Mean of `rank / |table|` over `searched`, rank 1 being the best entry.
pub fn avg_percentile_rank(searched: &[Architecture], table: &BenchmarkTable) -> Result<f64> {
    if searched.is_empty() {
        return Err(Error::Config("no searched architectures".into()));
    }
    let ranks: HashMap<&Architecture, usize> = table
        .ranked()
        .into_iter()
        .enumerate()
        .map(|(i, a)| (a, i + 1))
        .collect();
    let space = table.space();
    let mut total = 0.0;
    for arch in searched {
        space
            .check(arch)
            .map_err(|_| Error::Benchmark(format!("{arch} is not in the benchmark")))?;
        let rank = ranks
            .get(&space.canonicalize(arch))
            .ok_or_else(|| Error::Benchmark(format!("{arch} is not in the benchmark")))?;
        total += *rank as f64 / table.len() as f64;
    }
    Ok(total / searched.len() as f64)
}
