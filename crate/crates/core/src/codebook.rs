//! Transmit-vector universes, power-of-two subsets and their bit labels.
//!
//! A codeword is an `Nt`-length vector of LED drive currents in mA. Inactive
//! LEDs carry the zero level `I0 = 0`, active ones a level of the unipolar
//! M-PAM alphabet. Labels are stored as integers whose `n_bits` low bits are
//! read most-significant first.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::q_function;
use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};

/// Drive current of an inactive LED.
pub const ZERO_LEVEL_MA: f64 = 0.0;

/// Largest universe this crate will enumerate.
pub const MAX_UNIVERSE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum Scheme {
    Smx,
    Sm,
    Gsm2 { n_active: usize },
    Flim,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Smx => "smx",
            Scheme::Sm => "sm",
            Scheme::Gsm2 { .. } => "gsm2",
            Scheme::Flim => "flim",
        }
    }

    /// Whether the per-LED decision alphabet includes the zero level.
    pub fn has_zero_level(&self) -> bool {
        !matches!(self, Scheme::Smx)
    }

    /// Allowed number of active LEDs per codeword; `None` means any.
    pub fn active_count(&self, n_t: usize) -> Option<usize> {
        match *self {
            Scheme::Smx => Some(n_t),
            Scheme::Sm => Some(1),
            Scheme::Gsm2 { n_active } => Some(n_active),
            Scheme::Flim => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Gsm2 { n_active } => write!(f, "gsm2({n_active})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PamAlphabet {
    pub order: usize,
    pub i_lower_ma: f64,
    pub i_upper_ma: f64,
    pub levels: Vec<f64>,
}

/// Unipolar M-PAM levels evenly spaced over `[I_L, I_U]`; `M = 1` gives `{I_L}`.
pub fn pam_alphabet(order: usize, i_lower_ma: f64, i_upper_ma: f64) -> Result<PamAlphabet> {
    if !(i_lower_ma > 0.0 && i_lower_ma < i_upper_ma && i_upper_ma.is_finite()) {
        return Err(Error::BadRange {
            lower: i_lower_ma,
            upper: i_upper_ma,
        });
    }
    if order == 0 || order > 255 {
        return Err(Error::Domain(format!("PAM order {order} outside 1..=255")));
    }
    let levels = if order == 1 {
        vec![i_lower_ma]
    } else {
        let step = (i_upper_ma - i_lower_ma) / (order - 1) as f64;
        (0..order).map(|k| i_lower_ma + step * k as f64).collect()
    };
    Ok(PamAlphabet {
        order,
        i_lower_ma,
        i_upper_ma,
        levels,
    })
}

impl PamAlphabet {
    /// Decision alphabet for one LED: the levels, preceded by the zero level
    /// when the scheme can switch LEDs off.
    pub fn per_led_alphabet(&self, scheme: Scheme) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.order + 1);
        if scheme.has_zero_level() {
            out.push(ZERO_LEVEL_MA);
        }
        out.extend_from_slice(&self.levels);
        out
    }

    /// Index of `current` in `[I0, levels...]`, if it is one of them.
    fn extended_index(&self, current: f64) -> Option<u8> {
        let tol = 1e-9 * self.i_upper_ma;
        if (current - ZERO_LEVEL_MA).abs() <= tol {
            return Some(0);
        }
        self.levels
            .iter()
            .position(|&l| (current - l).abs() <= tol)
            .map(|k| k as u8 + 1)
    }
}

fn checked_universe_size(scheme: Scheme, n_t: usize, order: usize) -> Result<usize> {
    let pow = |base: usize, exp: usize| -> Option<usize> {
        (0..exp).try_fold(1usize, |acc, _| acc.checked_mul(base))
    };
    let size = match scheme {
        Scheme::Smx => pow(order, n_t),
        Scheme::Sm => n_t.checked_mul(order),
        Scheme::Gsm2 { n_active } => {
            binomial(n_t as u64, n_active as u64)
                .and_then(|c| usize::try_from(c).ok())
                .and_then(|c| c.checked_mul(pow(order, n_active)?))
        }
        Scheme::Flim => pow(order + 1, n_t),
    };
    match size {
        Some(s) if s <= MAX_UNIVERSE => Ok(s),
        _ => Err(Error::Domain(format!(
            "{scheme} with Nt={n_t}, M={order} exceeds the {MAX_UNIVERSE}-vector enumeration limit"
        ))),
    }
}

/// Every vector over `alphabet^len`, first position most significant.
fn cartesian(alphabet: &[f64], len: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(len)];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                alphabet.iter().map(move |&a| {
                    let mut v = prefix.clone();
                    v.push(a);
                    v
                })
            })
            .collect();
    }
    out
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

pub(crate) fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Enumerates the full transmit-vector set of a scheme, in a fixed order.
pub fn build_universe(scheme: Scheme, n_t: usize, alphabet: &PamAlphabet) -> Result<Vec<Vec<f64>>> {
    if n_t == 0 {
        return Err(Error::Domain("Nt must be positive".into()));
    }
    if let Scheme::Gsm2 { n_active } = scheme {
        if n_active == 0 || n_active > n_t {
            return Err(Error::Domain(format!(
                "GSM-II needs 1 <= Na <= Nt, got Na={n_active}, Nt={n_t}"
            )));
        }
    }
    checked_universe_size(scheme, n_t, alphabet.order)?;

    let levels = &alphabet.levels;
    Ok(match scheme {
        Scheme::Smx => cartesian(levels, n_t),
        Scheme::Flim => cartesian(&alphabet.per_led_alphabet(scheme), n_t),
        Scheme::Sm => active_sets(n_t, &combinations(n_t, 1), levels),
        Scheme::Gsm2 { n_active } => active_sets(n_t, &combinations(n_t, n_active), levels),
    })
}

fn active_sets(n_t: usize, patterns: &[Vec<usize>], levels: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for pattern in patterns {
        for values in cartesian(levels, pattern.len()) {
            let mut v = vec![ZERO_LEVEL_MA; n_t];
            for (&led, val) in pattern.iter().zip(values) {
                v[led] = val;
            }
            out.push(v);
        }
    }
    out
}

/// `2^floor(log2 K)`.
pub fn codebook_size(universe_size: usize) -> usize {
    if universe_size == 0 {
        0
    } else {
        1 << universe_size.ilog2()
    }
}

/// Space in which codeword distances are measured for selection and labelling.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DistanceSpace {
    #[default]
    Transmit,
    /// Distances between `H s` images.
    Received(ChannelMatrix),
}

impl DistanceSpace {
    fn project(&self, vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match self {
            DistanceSpace::Transmit => vectors.to_vec(),
            DistanceSpace::Received(h) => vectors.iter().map(|v| h.apply(v)).collect(),
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubsetStrategy {
    /// Keep the whole universe; only valid when it already has `C` vectors.
    All,
    /// Greedy farthest-point selection starting from the first vector.
    MaxMinDistance(DistanceSpace),
    /// Enumerate every `C`-subset and keep the one with the smallest union
    /// bound, labels taken in universe order. Capped at `max_subsets`.
    ExhaustiveUnionBound {
        channel: ChannelMatrix,
        sigma_n: f64,
        max_subsets: u64,
    },
}

/// Chooses `target` vectors out of `universe`; returns their universe indices
/// in increasing order.
pub fn select_subset_indices(
    universe: &[Vec<f64>],
    target: usize,
    strategy: &SubsetStrategy,
) -> Result<Vec<usize>> {
    let k = universe.len();
    if target > k {
        return Err(Error::SubsetInfeasible {
            requested: target,
            available: k,
        });
    }
    if !target.is_power_of_two() {
        return Err(Error::Domain(format!("subset size {target} is not a power of two")));
    }
    match strategy {
        SubsetStrategy::All => {
            if target != k {
                return Err(Error::Domain(format!(
                    "keeping all {k} vectors cannot produce a {target}-vector codebook"
                )));
            }
            Ok((0..k).collect())
        }
        SubsetStrategy::MaxMinDistance(space) => {
            let points = space.project(universe);
            Ok(farthest_point_subset(&points, target))
        }
        SubsetStrategy::ExhaustiveUnionBound {
            channel,
            sigma_n,
            max_subsets,
        } => exhaustive_union_bound_subset(universe, target, channel, *sigma_n, *max_subsets),
    }
}

pub fn select_subset(
    universe: &[Vec<f64>],
    target: usize,
    strategy: &SubsetStrategy,
) -> Result<Vec<Vec<f64>>> {
    Ok(select_subset_indices(universe, target, strategy)?
        .into_iter()
        .map(|i| universe[i].clone())
        .collect())
}

fn farthest_point_subset(points: &[Vec<f64>], target: usize) -> Vec<usize> {
    if target == 0 {
        return Vec::new();
    }
    let mut chosen = vec![false; points.len()];
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut picked = Vec::with_capacity(target);
    let mut next = 0;
    loop {
        chosen[next] = true;
        picked.push(next);
        if picked.len() == target {
            break;
        }
        for (i, p) in points.iter().enumerate() {
            if !chosen[i] {
                nearest[i] = nearest[i].min(sq_dist(p, &points[next]));
            }
        }
        // Strict comparison keeps the lowest index among ties.
        let mut best = f64::NEG_INFINITY;
        for (i, &d) in nearest.iter().enumerate() {
            if !chosen[i] && d > best {
                best = d;
                next = i;
            }
        }
    }
    picked.sort_unstable();
    picked
}

fn exhaustive_union_bound_subset(
    universe: &[Vec<f64>],
    target: usize,
    channel: &ChannelMatrix,
    sigma_n: f64,
    max_subsets: u64,
) -> Result<Vec<usize>> {
    let k = universe.len();
    let count = binomial(k as u64, target as u64).unwrap_or(u128::MAX);
    if count > max_subsets as u128 {
        return Err(Error::Domain(format!(
            "exhaustive selection would visit {count} subsets (limit {max_subsets})"
        )));
    }
    let images: Vec<Vec<f64>> = universe.iter().map(|v| channel.apply(v)).collect();
    let mut pep = vec![0.0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let p = q_function(sq_dist(&images[i], &images[j]).sqrt() / (2.0 * sigma_n));
            pep[i * k + j] = p;
            pep[j * k + i] = p;
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for subset in combinations(k, target) {
        let mut total = 0.0;
        for (a, &i) in subset.iter().enumerate() {
            for (b, &j) in subset.iter().enumerate().skip(a + 1) {
                total += ((a ^ b).count_ones() as f64) * pep[i * k + j];
            }
        }
        if best.as_ref().is_none_or(|(t, _)| total < *t) {
            best = Some((total, subset));
        }
    }
    Ok(best.map(|(_, s)| s).unwrap_or_default())
}

/// Tunables for the union-bound local search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchParams {
    pub channel: ChannelMatrix,
    pub sigma_n: f64,
    /// Number of proposed moves.
    pub budget: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelStrategy {
    /// Label `t` for the `t`-th vector.
    Natural,
    /// Gray-code each LED's level index and concatenate, LED 0 first. The
    /// off level counts as index 0 when the vector set uses it.
    GrayPerLed,
    /// Closest vector pairs receive the most distant available labels.
    MinDistMaxHamming(DistanceSpace),
    /// Label permutation local search minimizing the union bound, started
    /// from `MinDistMaxHamming` in transmit space.
    UnionBoundSearch(SearchParams),
}

fn gray(k: u32) -> u32 {
    k ^ (k >> 1)
}

/// Computes a label for each vector; labels form a permutation of `0..C`.
pub fn assign_labels(
    vectors: &[Vec<f64>],
    alphabet: &PamAlphabet,
    strategy: &LabelStrategy,
) -> Result<Vec<u32>> {
    let c = vectors.len();
    if c < 2 || !c.is_power_of_two() {
        return Err(Error::Domain(format!("cannot label {c} vectors: need a power of two >= 2")));
    }
    match strategy {
        LabelStrategy::Natural => Ok((0..c as u32).collect()),
        LabelStrategy::GrayPerLed => gray_per_led(vectors, alphabet),
        LabelStrategy::MinDistMaxHamming(space) => Ok(min_dist_max_hamming(&space.project(vectors))),
        LabelStrategy::UnionBoundSearch(params) => {
            let start = min_dist_max_hamming(vectors);
            let mut search = DesignSearch::new(vectors.to_vec(), (0..c).collect(), start, params)?;
            search.run(params, false);
            Ok(search.labels)
        }
    }
}

fn gray_per_led(vectors: &[Vec<f64>], alphabet: &PamAlphabet) -> Result<Vec<u32>> {
    // With any LED off anywhere, the off level joins the per-LED alphabet
    // as index 0.
    let extended = vectors.iter().flatten().any(|&x| x == ZERO_LEVEL_MA);
    let (levels, offset) = if extended {
        (alphabet.order + 1, 0)
    } else {
        (alphabet.order, 1)
    };
    if !levels.is_power_of_two() {
        return Err(Error::Domain(format!(
            "Gray labelling needs a power-of-two per-LED alphabet, got {levels} levels"
        )));
    }
    let bits = levels.ilog2();
    let labels = vectors
        .iter()
        .map(|v| {
            v.iter().try_fold(0u32, |acc, &x| match alphabet.extended_index(x) {
                Some(idx) if idx >= offset => Ok((acc << bits) | gray((idx - offset) as u32)),
                _ => Err(Error::Domain(format!("{x} mA is not a per-LED level"))),
            })
        })
        .collect::<Result<Vec<u32>>>()?;
    let mut seen = vec![false; vectors.len()];
    for &l in &labels {
        match seen.get_mut(l as usize) {
            Some(slot) if !*slot => *slot = true,
            _ => {
                return Err(Error::Domain(
                    "per-LED Gray codes do not form a label bijection for this vector set".into(),
                ))
            }
        }
    }
    Ok(labels)
}

fn min_dist_max_hamming(points: &[Vec<f64>]) -> Vec<u32> {
    let c = points.len();
    let mut lex_rank = vec![0usize; c];
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));
    for (rank, &i) in order.iter().enumerate() {
        lex_rank[i] = rank;
    }

    // (distance, lex-smaller, lex-larger)
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in (i + 1)..c {
            let (a, b) = if lex_rank[i] < lex_rank[j] { (i, j) } else { (j, i) };
            pairs.push((sq_dist(&points[i], &points[j]), a, b));
        }
    }
    pairs.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(lex_rank[x.1].cmp(&lex_rank[y.1]))
            .then(lex_rank[x.2].cmp(&lex_rank[y.2]))
    });

    let n_bits = c.ilog2();
    let mut label: Vec<Option<u32>> = vec![None; c];
    let mut free = vec![true; c];
    let farthest_free = |from: u32, free: &[bool]| -> Option<u32> {
        let mut best: Option<(u32, u32)> = None;
        for (l, &ok) in free.iter().enumerate() {
            if ok {
                let d = (from ^ l as u32).count_ones();
                if best.is_none_or(|(bd, _)| d > bd) {
                    best = Some((d, l as u32));
                }
            }
        }
        best.map(|(_, l)| l)
    };

    let mut remaining = c;
    for &(_, a, b) in &pairs {
        if remaining == 0 {
            break;
        }
        match (label[a], label[b]) {
            (None, None) => {
                let mut best: Option<(u32, u32, u32)> = None;
                for la in 0..c as u32 {
                    if !free[la as usize] {
                        continue;
                    }
                    free[la as usize] = false;
                    if let Some(lb) = farthest_free(la, &free) {
                        let d = (la ^ lb).count_ones();
                        if best.is_none_or(|(bd, _, _)| d > bd) {
                            best = Some((d, la, lb));
                        }
                    }
                    free[la as usize] = true;
                    if best.is_some_and(|(bd, _, _)| bd == n_bits) {
                        break;
                    }
                }
                let (_, la, lb) = best.expect("two free labels remain");
                label[a] = Some(la);
                label[b] = Some(lb);
                free[la as usize] = false;
                free[lb as usize] = false;
                remaining -= 2;
            }
            (Some(la), None) | (None, Some(la)) => {
                let lb = farthest_free(la, &free).expect("a free label remains");
                let target = if label[a].is_none() { a } else { b };
                label[target] = Some(lb);
                free[lb as usize] = false;
                remaining -= 1;
            }
            (Some(_), Some(_)) => {}
        }
    }
    label.into_iter().map(|l| l.expect("every vector labelled")).collect()
}

/// Incremental union-bound local search over label swaps and, optionally,
/// subset swaps against the rest of the universe.
struct DesignSearch {
    universe_images: Vec<Vec<f64>>,
    selected: Vec<usize>,
    labels: Vec<u32>,
    pep: Vec<f64>,
    sigma_n: f64,
}

impl DesignSearch {
    fn new(
        universe: Vec<Vec<f64>>,
        selected: Vec<usize>,
        labels: Vec<u32>,
        params: &SearchParams,
    ) -> Result<Self> {
        if !(params.sigma_n > 0.0) {
            return Err(Error::Domain(format!("sigma_n = {} must be positive", params.sigma_n)));
        }
        let universe_images: Vec<Vec<f64>> = universe.iter().map(|v| params.channel.apply(v)).collect();
        let c = selected.len();
        let mut search = DesignSearch {
            universe_images,
            selected,
            labels,
            pep: vec![0.0; c * c],
            sigma_n: params.sigma_n,
        };
        for a in 0..c {
            for b in (a + 1)..c {
                let p = search.pep_between(search.selected[a], search.selected[b]);
                search.pep[a * c + b] = p;
                search.pep[b * c + a] = p;
            }
        }
        Ok(search)
    }

    fn pep_between(&self, u: usize, v: usize) -> f64 {
        let d = sq_dist(&self.universe_images[u], &self.universe_images[v]).sqrt();
        q_function(d / (2.0 * self.sigma_n))
    }

    fn hamming(&self, a: usize, b: usize) -> f64 {
        (self.labels[a] ^ self.labels[b]).count_ones() as f64
    }

    /// Change in `sum_{i != j} d_H P` if slots `a` and `b` swap labels.
    fn label_swap_delta(&self, a: usize, b: usize) -> f64 {
        let c = self.selected.len();
        let (la, lb) = (self.labels[a], self.labels[b]);
        let mut delta = 0.0;
        for k in (0..c).filter(|&k| k != a && k != b) {
            let lk = self.labels[k];
            let da = (la ^ lk).count_ones() as f64;
            let db = (lb ^ lk).count_ones() as f64;
            delta += (self.pep[a * c + k] - self.pep[b * c + k]) * (db - da);
        }
        2.0 * delta
    }

    fn run(&mut self, params: &SearchParams, allow_subset_swaps: bool) {
        let c = self.selected.len();
        let k = self.universe_images.len();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut in_subset = vec![false; k];
        for &s in &self.selected {
            in_subset[s] = true;
        }
        let can_swap_subset = allow_subset_swaps && k > c;
        for _ in 0..params.budget {
            if can_swap_subset && rng.random_bool(0.5) {
                let slot = rng.random_range(0..c);
                let candidate = loop {
                    let v = rng.random_range(0..k);
                    if !in_subset[v] {
                        break v;
                    }
                };
                let new_row: Vec<f64> = (0..c)
                    .map(|j| {
                        if j == slot {
                            0.0
                        } else {
                            self.pep_between(candidate, self.selected[j])
                        }
                    })
                    .collect();
                let delta: f64 = 2.0
                    * (0..c)
                        .filter(|&j| j != slot)
                        .map(|j| self.hamming(slot, j) * (new_row[j] - self.pep[slot * c + j]))
                        .sum::<f64>();
                if delta < 0.0 {
                    in_subset[self.selected[slot]] = false;
                    in_subset[candidate] = true;
                    self.selected[slot] = candidate;
                    for (j, &p) in new_row.iter().enumerate() {
                        self.pep[slot * c + j] = p;
                        self.pep[j * c + slot] = p;
                    }
                }
            } else {
                let a = rng.random_range(0..c);
                let b = rng.random_range(0..c);
                if a != b && self.label_swap_delta(a, b) < 0.0 {
                    self.labels.swap(a, b);
                }
            }
        }
    }
}

/// Joint subset/label local search: starts from `selected` (universe indices)
/// with `labels`, and returns the improved `(selected, labels)`.
pub fn optimize_design(
    universe: &[Vec<f64>],
    selected: Vec<usize>,
    labels: Vec<u32>,
    params: &SearchParams,
) -> Result<(Vec<usize>, Vec<u32>)> {
    if selected.len() != labels.len() {
        return Err(Error::ConfigMismatch("subset and label counts differ".into()));
    }
    let mut search = DesignSearch::new(universe.to_vec(), selected, labels, params)?;
    search.run(params, true);
    Ok((search.selected, search.labels))
}

/// A labelled transmit-vector set.
#[derive(Debug, Clone)]
pub struct Codebook {
    scheme: Scheme,
    alphabet: PamAlphabet,
    universe_size: usize,
    vectors: Vec<Vec<f64>>,
    labels: Vec<u32>,
    n_bits: u32,
    index_of_label: Vec<usize>,
    symbol_lookup: HashMap<Vec<u8>, usize>,
}

impl PartialEq for Codebook {
    fn eq(&self, other: &Self) -> bool {
        self.scheme == other.scheme
            && self.alphabet == other.alphabet
            && self.universe_size == other.universe_size
            && self.vectors == other.vectors
            && self.labels == other.labels
    }
}

impl Codebook {
    pub fn new(
        scheme: Scheme,
        alphabet: PamAlphabet,
        universe_size: usize,
        vectors: Vec<Vec<f64>>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let c = vectors.len();
        if c < 2 || !c.is_power_of_two() {
            return Err(Error::InvalidCodebook(format!("size {c} is not a power of two >= 2")));
        }
        if labels.len() != c {
            return Err(Error::InvalidCodebook(format!("{} labels for {c} vectors", labels.len())));
        }
        if universe_size < c {
            return Err(Error::InvalidCodebook(format!(
                "universe size {universe_size} smaller than codebook size {c}"
            )));
        }
        let n_t = vectors[0].len();
        let n_bits = c.ilog2();

        let mut index_of_label = vec![usize::MAX; c];
        for (t, &l) in labels.iter().enumerate() {
            let slot = index_of_label
                .get_mut(l as usize)
                .ok_or_else(|| Error::InvalidCodebook(format!("label {l} needs more than {n_bits} bits")))?;
            if *slot != usize::MAX {
                return Err(Error::InvalidCodebook(format!("label {l} used twice")));
            }
            *slot = t;
        }

        let mut symbol_lookup = HashMap::with_capacity(c);
        for (t, v) in vectors.iter().enumerate() {
            if v.len() != n_t {
                return Err(Error::InvalidCodebook("vectors have different lengths".into()));
            }
            let key: Vec<u8> = v
                .iter()
                .map(|&x| {
                    alphabet.extended_index(x).ok_or_else(|| {
                        Error::InvalidCodebook(format!("{x} mA is neither I0 nor a PAM level"))
                    })
                })
                .collect::<Result<_>>()?;
            let active = key.iter().filter(|&&s| s > 0).count();
            if let Some(required) = scheme.active_count(n_t) {
                if active != required {
                    return Err(Error::InvalidCodebook(format!(
                        "{scheme} codeword {t} has {active} active LEDs, expected {required}"
                    )));
                }
            }
            if symbol_lookup.insert(key, t).is_some() {
                return Err(Error::InvalidCodebook(format!("codeword {t} repeated")));
            }
        }

        Ok(Codebook {
            scheme,
            alphabet,
            universe_size,
            vectors,
            labels,
            n_bits,
            index_of_label,
            symbol_lookup,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn alphabet(&self) -> &PamAlphabet {
        &self.alphabet
    }

    pub fn universe_size(&self) -> usize {
        self.universe_size
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn n_t(&self) -> usize {
        self.vectors[0].len()
    }

    /// Bits per codeword, `log2 C`.
    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.vectors[index]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    /// The mapping `f_M`: codeword index carrying `label`.
    pub fn index_of_label(&self, label: u32) -> usize {
        self.index_of_label[label as usize]
    }

    /// Codeword index whose entries match the per-LED symbol indices
    /// (`0` = off, `k + 1` = level `k`).
    pub fn index_of_symbols(&self, symbols: &[u8]) -> Option<usize> {
        self.symbol_lookup.get(symbols).copied()
    }

    pub fn label_bits(&self, index: usize) -> String {
        label_to_bits(self.labels[index], self.n_bits)
    }

    /// Mean `||s||^2` over the codewords (mA^2).
    pub fn transmit_power(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / self.len() as f64
    }

    pub fn to_document(&self) -> CodebookDocument {
        CodebookDocument {
            scheme: self.scheme,
            m: self.alphabet.order,
            i_lower_ma: self.alphabet.i_lower_ma,
            i_upper_ma: self.alphabet.i_upper_ma,
            zero_level_ma: ZERO_LEVEL_MA,
            universe_size: self.universe_size,
            vectors: self.vectors.clone(),
            labels: (0..self.len()).map(|t| self.label_bits(t)).collect(),
        }
    }

    pub fn from_document(doc: &CodebookDocument) -> Result<Self> {
        if doc.zero_level_ma != ZERO_LEVEL_MA {
            return Err(Error::InvalidCodebook(format!(
                "zero level {} mA unsupported",
                doc.zero_level_ma
            )));
        }
        let alphabet = pam_alphabet(doc.m, doc.i_lower_ma, doc.i_upper_ma)?;
        let n_bits = doc.vectors.len().checked_ilog2().unwrap_or(0);
        let labels = doc
            .labels
            .iter()
            .map(|s| bits_to_label(s, n_bits))
            .collect::<Result<Vec<_>>>()?;
        Codebook::new(doc.scheme, alphabet, doc.universe_size, doc.vectors.clone(), labels)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }

    /// SHA-256 of the compact JSON document, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_document()).expect("codebook serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn label_to_bits(label: u32, n_bits: u32) -> String {
    (0..n_bits)
        .rev()
        .map(|k| if (label >> k) & 1 == 1 { '1' } else { '0' })
        .collect()
}

pub fn bits_to_label(bits: &str, n_bits: u32) -> Result<u32> {
    if bits.len() != n_bits as usize {
        return Err(Error::InvalidCodebook(format!(
            "label `{bits}` should have {n_bits} bits"
        )));
    }
    bits.chars().try_fold(0u32, |acc, ch| match ch {
        '0' => Ok(acc << 1),
        '1' => Ok((acc << 1) | 1),
        _ => Err(Error::InvalidCodebook(format!("label `{bits}` is not binary"))),
    })
}

/// Exchange format for pinning a designed codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookDocument {
    #[serde(flatten)]
    pub scheme: Scheme,
    #[serde(rename = "M")]
    pub m: usize,
    pub i_lower_ma: f64,
    pub i_upper_ma: f64,
    pub zero_level_ma: f64,
    pub universe_size: usize,
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

/// Per-LED probability that the LED is off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationPmf {
    pub nu: Vec<f64>,
}

pub fn activation_pmf(codebook: &Codebook) -> ActivationPmf {
    let c = codebook.len() as f64;
    let nu = (0..codebook.n_t())
        .map(|i| {
            codebook
                .vectors()
                .iter()
                .filter(|v| v[i] == ZERO_LEVEL_MA)
                .count() as f64
                / c
        })
        .collect();
    ActivationPmf { nu }
}

/// Schemes whose spectral efficiency can be tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeScheme {
    Ssk,
    Sm,
    Gssk,
    Gsm,
    Gsm2,
    Smx,
    Flim,
    Gssk2,
}

impl SeScheme {
    pub const ALL: [SeScheme; 8] = [
        SeScheme::Ssk,
        SeScheme::Gssk,
        SeScheme::Gssk2,
        SeScheme::Sm,
        SeScheme::Gsm,
        SeScheme::Gsm2,
        SeScheme::Smx,
        SeScheme::Flim,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SeScheme::Ssk => "ssk",
            SeScheme::Sm => "sm",
            SeScheme::Gssk => "gssk",
            SeScheme::Gsm => "gsm",
            SeScheme::Gsm2 => "gsm2",
            SeScheme::Smx => "smx",
            SeScheme::Flim => "flim",
            SeScheme::Gssk2 => "gssk2",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        SeScheme::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Whether the active-LED count enters the formula.
    pub fn uses_n_active(&self) -> bool {
        matches!(self, SeScheme::Gssk | SeScheme::Gsm | SeScheme::Gsm2)
    }
}

/// `floor(log2(n))` for an exact integer, or a domain error below 1.
fn floor_log2(n: Option<u128>, what: &str) -> Result<f64> {
    match n {
        Some(0) => Err(Error::Domain(format!("log2 argument {what} is below 1"))),
        Some(v) => Ok(v.ilog2() as f64),
        None => Err(Error::Domain(format!("{what} overflows"))),
    }
}

fn log2_at_least_one(x: usize, what: &str) -> Result<f64> {
    if x < 1 {
        return Err(Error::Domain(format!("log2 argument {what} = {x} is below 1")));
    }
    Ok((x as f64).log2())
}

/// Bits per channel use of each scheme.
pub fn spectral_efficiency(scheme: SeScheme, n_t: usize, n_a: usize, m: usize) -> Result<f64> {
    let pow = |b: usize, e: usize| (b as u128).checked_pow(e as u32);
    let choose = binomial(n_t as u64, n_a as u64);
    match scheme {
        SeScheme::Ssk => log2_at_least_one(n_t, "Nt"),
        SeScheme::Sm => Ok(log2_at_least_one(n_t, "Nt")? + log2_at_least_one(m, "M")?),
        SeScheme::Gssk => floor_log2(choose, "C(Nt, Na)"),
        SeScheme::Gsm => Ok(floor_log2(choose, "C(Nt, Na)")? + log2_at_least_one(m, "M")?),
        SeScheme::Gsm2 => {
            log2_at_least_one(m, "M")?;
            floor_log2(choose.and_then(|c| c.checked_mul(pow(m, n_a)?)), "C(Nt, Na) M^Na")
        }
        SeScheme::Smx => Ok(n_t as f64 * log2_at_least_one(m, "M")?),
        SeScheme::Flim => {
            log2_at_least_one(n_t, "Nt")?;
            match pow(m + 1, n_t) {
                Some(v) => floor_log2(Some(v), "(M+1)^Nt"),
                None => Ok((n_t as f64 * ((m + 1) as f64).log2()).floor()),
            }
        }
        SeScheme::Gssk2 => Ok(n_t as f64),
    }
}
