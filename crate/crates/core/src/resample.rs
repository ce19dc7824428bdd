//! Data partitions for the ensembles: pair, block and stationary bootstrap
//! plus the artificial delete-d jackknife.
//!
//! Indices are 0-based. Every generator draws from one ChaCha stream seeded
//! once, so a plan is a pure function of its arguments.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `J` draws of `N` indices with replacement.
pub fn pair_bootstrap(n: usize, j: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..j).map(|_| (0..n).map(|_| rng.random_range(0..n.max(1))).collect()).collect()
}

/// Concatenated random blocks of fixed length, truncated to `len`.
pub fn block_bootstrap(len: usize, j: usize, block: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if block == 0 || block > len {
        return Err(Error::Domain(format!("block length {block} must lie in 1..={len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..j)
        .map(|_| {
            let mut idx = Vec::with_capacity(len + block);
            while idx.len() < len {
                let start = rng.random_range(0..=len - block);
                idx.extend(start..start + block);
            }
            idx.truncate(len);
            idx
        })
        .collect())
}

/// Blocks `(start, length)` of one stationary-bootstrap draw; lengths are
/// geometric with mean `mean_block` and blocks wrap at the sample end.
fn stationary_blocks(rng: &mut ChaCha8Rng, len: usize, geo: &Geometric) -> Vec<(usize, usize)> {
    let mut blocks = Vec::new();
    let mut total = 0;
    while total < len {
        let start = rng.random_range(0..len);
        let l = 1 + geo.sample(rng) as usize;
        blocks.push((start, l));
        total += l;
    }
    blocks
}

fn geometric(mean_block: f64) -> Result<Geometric> {
    if !(mean_block >= 1.0 && mean_block.is_finite()) {
        return Err(Error::Domain(format!("expected block length {mean_block} must be >= 1")));
    }
    Geometric::new(1.0 / mean_block).map_err(|e| Error::Domain(e.to_string()))
}

/// Politis–Romano stationary bootstrap.
pub fn stationary_bootstrap(len: usize, j: usize, mean_block: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    let geo = geometric(mean_block)?;
    if len == 0 {
        return Ok(vec![Vec::new(); j]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..j)
        .map(|_| {
            let mut idx: Vec<usize> = stationary_blocks(&mut rng, len, &geo)
                .into_iter()
                .flat_map(|(s, l)| (0..l).map(move |k| (s + k) % len))
                .collect();
            idx.truncate(len);
            idx
        })
        .collect())
}

/// Untruncated block lengths of `count` stationary blocks.
pub fn stationary_block_lengths(count: usize, mean_block: f64, seed: u64) -> Result<Vec<usize>> {
    let geo = geometric(mean_block)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| 1 + geo.sample(&mut rng) as usize).collect())
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        match acc.checked_mul((n - i) as u128) {
            Some(v) => acc = v / (i as u128 + 1),
            None => return u128::MAX,
        }
    }
    acc
}

fn all_combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for l in i..k {
            cur[l] = cur[l - 1] + 1;
        }
    }
}

/// `J` distinct sets of `d` cells (out of `total` observed) to hide.
///
/// When `C(total, d) <= J` every combination is returned in lexicographic
/// order; otherwise distinct uniform draws are collected by rejection.
pub fn artificial_jackknife(total: usize, d: usize, j: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if d == 0 || d >= total {
        return Err(Error::Domain(format!("deletion count {d} must lie in 1..{total}")));
    }
    if j == 0 {
        return Err(Error::Domain("jackknife needs at least one subsample".into()));
    }
    if binomial(total, d) <= j as u128 {
        return Ok(all_combinations(total, d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(j);
    while out.len() < j {
        let mut m = sample(&mut rng, total, d).into_vec();
        m.sort_unstable();
        if seen.insert(m.clone()) {
            out.push(m);
        }
    }
    Ok(out)
}

/// Resampling scheme and its tuning constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    PairBootstrap,
    BlockBootstrap { block_length: usize },
    StationaryBootstrap { expected_block_length: f64 },
    /// `d` is the share of observed cells hidden in each subsample.
    ArtificialJackknife { d_fraction: f64 },
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::PairBootstrap => "pair_bootstrap",
            Scheme::BlockBootstrap { .. } => "block_bootstrap",
            Scheme::StationaryBootstrap { .. } => "stationary_bootstrap",
            Scheme::ArtificialJackknife { .. } => "artificial_jackknife",
        }
    }

    /// Parse `pair`, `block[:L]`, `stationary[:L]` or `jackknife[:fraction]`.
    pub fn parse(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| a.parse::<f64>().map_err(|_| Error::Config(format!("bad scheme argument `{a}`"))))
        };
        match head {
            "pair" | "pair_bootstrap" => Ok(Scheme::PairBootstrap),
            "block" | "block_bootstrap" => Ok(Scheme::BlockBootstrap { block_length: num(12.0)? as usize }),
            "stationary" | "stationary_bootstrap" => Ok(Scheme::StationaryBootstrap { expected_block_length: num(12.0)? }),
            "jackknife" | "artificial_jackknife" => Ok(Scheme::ArtificialJackknife { d_fraction: num(0.2)? }),
            other => Err(Error::Config(format!("unknown resampling scheme `{other}`"))),
        }
    }
}

/// Full description of the partitions used by an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    #[serde(flatten)]
    pub scheme: Scheme,
    pub j: usize,
    pub seed: u64,
}

impl ResamplePlan {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 {
            return Err(Error::Config("ensemble size J must be at least 1".into()));
        }
        match self.scheme {
            Scheme::BlockBootstrap { block_length } if block_length == 0 => {
                Err(Error::Config("block length must be at least 1".into()))
            }
            Scheme::StationaryBootstrap { expected_block_length } if expected_block_length < 1.0 => {
                Err(Error::Config("expected block length must be at least 1".into()))
            }
            Scheme::ArtificialJackknife { d_fraction } if !(d_fraction > 0.0 && d_fraction < 1.0) => {
                Err(Error::Config("jackknife fraction must lie in (0, 1)".into()))
            }
            _ => Ok(()),
        }
    }

    /// Deletion count for `total` observed cells.
    pub fn deletion_count(d_fraction: f64, total: usize) -> usize {
        ((d_fraction * total as f64).round() as usize).clamp(1, total.saturating_sub(1).max(1))
    }

    /// Row subsets for `rows` training rows. Jackknife subsets list the
    /// retained rows.
    pub fn draw(&self, rows: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        match self.scheme {
            Scheme::PairBootstrap => Ok(pair_bootstrap(rows, self.j, seed)),
            Scheme::BlockBootstrap { block_length } => block_bootstrap(rows, self.j, block_length.min(rows.max(1)), seed),
            Scheme::StationaryBootstrap { expected_block_length } => {
                stationary_bootstrap(rows, self.j, expected_block_length, seed)
            }
            Scheme::ArtificialJackknife { d_fraction } => {
                let d = Self::deletion_count(d_fraction, rows);
                let masks = artificial_jackknife(rows, d, self.j, seed)?;
                Ok(masks
                    .into_iter()
                    .map(|m| {
                        let hidden: HashSet<usize> = m.into_iter().collect();
                        (0..rows).filter(|r| !hidden.contains(r)).collect()
                    })
                    .collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pair_bootstrap_examples() {
        assert!(pair_bootstrap(1, 3, 0).iter().all(|s| s == &vec![0]));
        assert_eq!(pair_bootstrap(20, 2, 5), pair_bootstrap(20, 2, 5));
        let plans = pair_bootstrap(1000, 200, 9);
        let frac: f64 = plans
            .iter()
            .map(|p| p.iter().collect::<HashSet<_>>().len() as f64 / 1000.0)
            .sum::<f64>()
            / 200.0;
        assert!((frac - (1.0 - (-1f64).exp())).abs() < 0.02, "{frac}");
    }

    #[test]
    fn block_bootstrap_examples() {
        assert!(block_bootstrap(30, 4, 30, 1).unwrap().iter().all(|s| *s == (0..30).collect::<Vec<_>>()));
        let plans = block_bootstrap(100, 50, 10, 3).unwrap();
        for p in &plans {
            assert_eq!(p.len(), 100);
            for chunk in p.chunks(10) {
                assert!(chunk.windows(2).all(|w| w[1] == w[0] + 1));
            }
        }
        assert!(block_bootstrap(10, 1, 0, 1).is_err());
        assert!(block_bootstrap(10, 1, 11, 1).is_err());
    }

    #[test]
    fn single_block_is_iid() {
        // L = 1 draws each index uniformly, like the pair bootstrap
        let plans = block_bootstrap(200, 200, 1, 4).unwrap();
        let mut counts = [0usize; 200];
        plans.iter().flatten().for_each(|&i| counts[i] += 1);
        let mean = 200.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        // 199 degrees of freedom: mean 199, sd ≈ 20
        assert!(chi2 < 199.0 + 5.0 * 20.0, "{chi2}");
    }

    #[test]
    fn stationary_examples() {
        let lens = stationary_block_lengths(100_000, 8.0, 2).unwrap();
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        assert!((mean - 8.0).abs() / 8.0 < 0.05, "{mean}");
        assert!(stationary_block_lengths(1000, 1.0, 2).unwrap().iter().all(|&l| l == 1));
        assert_eq!(stationary_bootstrap(50, 3, 5.0, 7).unwrap(), stationary_bootstrap(50, 3, 5.0, 7).unwrap());
        let plan = stationary_bootstrap(50, 3, 5.0, 7).unwrap();
        assert!(plan.iter().all(|p| p.len() == 50 && p.iter().all(|&i| i < 50)));
        assert!(stationary_bootstrap(10, 1, 0.5, 1).is_err());
    }

    #[test]
    fn jackknife_enumeration() {
        assert_eq!(artificial_jackknife(3, 1, 3, 0).unwrap(), vec![vec![0], vec![1], vec![2]]);
        let all = artificial_jackknife(5, 2, 10, 0).unwrap();
        assert_eq!(all.len(), 10);
        let mut oracle = Vec::new();
        for a in 0..5 {
            for b in a + 1..5 {
                oracle.push(vec![a, b]);
            }
        }
        assert_eq!(all, oracle);
        assert!(artificial_jackknife(5, 5, 1, 0).is_err());
        assert!(artificial_jackknife(5, 0, 1, 0).is_err());
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(300, 150), u128::MAX);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!(Scheme::parse("pair").unwrap(), Scheme::PairBootstrap);
        assert_eq!(Scheme::parse("block:6").unwrap(), Scheme::BlockBootstrap { block_length: 6 });
        assert_eq!(Scheme::parse("jackknife").unwrap(), Scheme::ArtificialJackknife { d_fraction: 0.2 });
        assert!(Scheme::parse("bogus").is_err());
    }

    proptest! {
        #[test]
        fn jackknife_masks_distinct_with_exact_size(total in 4usize..40, d in 1usize..4, j in 1usize..30, seed in 0u64..1000) {
            prop_assume!(d < total);
            let masks = artificial_jackknife(total, d, j, seed).unwrap();
            let set: HashSet<_> = masks.iter().cloned().collect();
            prop_assert_eq!(set.len(), masks.len());
            prop_assert!(masks.len() as u128 == (j as u128).min(binomial(total, d)));
            for m in &masks {
                prop_assert_eq!(m.len(), d);
                prop_assert!(m.windows(2).all(|w| w[0] < w[1]) && m.iter().all(|&i| i < total));
            }
        }
    }
}
