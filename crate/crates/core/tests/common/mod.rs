//! Reference implementations the engine is checked against. They favour
//! obviousness over speed and share no code with the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use shadowpipe::corpus::{generate_corpus, CorpusConfig, Dataset};

/// The default corpus, generated once per test binary.
pub fn default_data() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| Dataset::from_bundle(&generate_corpus(&CorpusConfig::default()).unwrap()))
}

/// A train point for the Shapley oracles.
#[derive(Debug, Clone)]
pub struct Point {
    pub id: String,
    pub vector: Vec<f64>,
    pub label: u8,
}

fn similarity(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// KNN utility of the train subset `members` (indices into `train`): the
/// fraction of the K nearest members whose label matches the test label,
/// divided by K even when fewer than K members exist. Nearest means highest
/// dot product, ties broken by smaller id.
pub fn knn_utility(train: &[Point], members: &[usize], query: &[f64], label: u8, k: usize) -> f64 {
    let mut ranked: Vec<usize> = members.to_vec();
    ranked.sort_by(|&a, &b| {
        similarity(&train[b].vector, query)
            .partial_cmp(&similarity(&train[a].vector, query))
            .unwrap()
            .then_with(|| train[a].id.cmp(&train[b].id))
    });
    let hits = ranked.iter().take(k).filter(|&&i| train[i].label == label).count();
    hits as f64 / k as f64
}

/// Shapley values by the subset formula
/// `sum_S |S|! (n-|S|-1)! / n! * (v(S + i) - v(S))`.
pub fn subset_shapley(train: &[Point], query: &[f64], label: u8, k: usize) -> Vec<f64> {
    let n = train.len();
    let fact = |m: usize| (1..=m).map(|x| x as f64).product::<f64>();
    let mut values = vec![0.0; n];
    for (i, value) in values.iter_mut().enumerate() {
        for mask in 0u32..(1 << n) {
            if mask & (1 << i) != 0 {
                continue;
            }
            let members: Vec<usize> = (0..n).filter(|&j| mask & (1 << j) != 0).collect();
            let s = members.len();
            let mut with = members.clone();
            with.push(i);
            let weight = fact(s) * fact(n - s - 1) / fact(n);
            *value += weight
                * (knn_utility(train, &with, query, label, k) - knn_utility(train, &members, query, label, k));
        }
    }
    values
}

/// Shapley values by averaging marginal contributions over every ordering.
pub fn permutation_shapley(train: &[Point], query: &[f64], label: u8, k: usize) -> Vec<f64> {
    let n = train.len();
    let mut values = vec![0.0; n];
    let mut count = 0usize;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |order| {
        count += 1;
        let mut prefix = Vec::with_capacity(n);
        let mut before = knn_utility(train, &prefix, query, label, k);
        for &i in order {
            prefix.push(i);
            let after = knn_utility(train, &prefix, query, label, k);
            values[i] += after - before;
            before = after;
        }
    });
    values.iter().map(|v| v / count as f64).collect()
}

fn permute(items: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// One slice found by exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSlice {
    pub predicates: BTreeMap<String, String>,
    pub support: usize,
    pub errors: usize,
    pub score: f64,
}

/// Enumerates every conjunction of at most `max_level` equality predicates
/// on distinct features, keeps those with support at least `min_support`
/// and a positive score, and returns the best `top_k` by score, then fewer
/// predicates, then predicates in lexicographic order.
pub fn exhaustive_slices(
    features: &[(String, Vec<String>)],
    errors: &[bool],
    alpha: f64,
    min_support: usize,
    max_level: usize,
    top_k: usize,
) -> Vec<OracleSlice> {
    let n = errors.len();
    let total = errors.iter().filter(|e| **e).count();
    if n == 0 || total == 0 {
        return Vec::new();
    }
    let avg = total as f64 / n as f64;
    let domains: Vec<BTreeSet<&String>> = features.iter().map(|(_, col)| col.iter().collect()).collect();
    let mut found = Vec::new();
    let f = features.len();
    for mask in 1u32..(1 << f) {
        let chosen: Vec<usize> = (0..f).filter(|&j| mask & (1 << j) != 0).collect();
        if chosen.len() > max_level {
            continue;
        }
        let mut combos: Vec<Vec<&String>> = vec![Vec::new()];
        for &j in &chosen {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    domains[j].iter().map(move |v| {
                        let mut c = c.clone();
                        c.push(*v);
                        c
                    })
                })
                .collect();
        }
        for combo in combos {
            let rows: Vec<usize> = (0..n)
                .filter(|&r| chosen.iter().zip(&combo).all(|(&j, v)| &features[j].1[r] == *v))
                .collect();
            let support = rows.len();
            if support < min_support.max(1) {
                continue;
            }
            let errs = rows.iter().filter(|&&r| errors[r]).count();
            let score = alpha * ((errs as f64 / support as f64) / avg - 1.0)
                - (1.0 - alpha) * (n as f64 / support as f64 - 1.0);
            if score <= 0.0 {
                continue;
            }
            found.push(OracleSlice {
                predicates: chosen
                    .iter()
                    .zip(&combo)
                    .map(|(&j, v)| (features[j].0.clone(), (*v).clone()))
                    .collect(),
                support,
                errors: errs,
                score,
            });
        }
    }
    found.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.predicates.len().cmp(&b.predicates.len()))
            .then_with(|| {
                let la: Vec<_> = a.predicates.iter().collect();
                let lb: Vec<_> = b.predicates.iter().collect();
                la.cmp(&lb)
            })
    });
    found.truncate(top_k);
    found
}
