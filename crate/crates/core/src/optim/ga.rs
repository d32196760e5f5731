use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaOptions {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub seed: u64,
}

impl Default for GaOptions {
    fn default() -> Self {
        GaOptions {
            population: 60,
            generations: 300,
            mutation_rate: 0.3,
            seed: 0,
        }
    }
}

impl GaOptions {
    pub fn with_seed(&self, seed: u64) -> Self {
        GaOptions { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config("mutation_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaResult {
    pub routes: Vec<Vec<usize>>,
    pub score: f64,
}

/// A permutation of all clusters cut into consecutive non-empty routes.
#[derive(Clone, Debug, PartialEq)]
struct Chromosome {
    order: Vec<usize>,
    sizes: Vec<usize>,
}

impl Chromosome {
    fn random(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        // k - 1 distinct cut points in 1..n
        let mut cuts = rand::seq::index::sample(rng, n - 1, k - 1).into_vec();
        cuts.iter_mut().for_each(|c| *c += 1);
        cuts.sort_unstable();
        let mut sizes = Vec::with_capacity(k);
        let mut prev = 0;
        for c in cuts.into_iter().chain(std::iter::once(n)) {
            sizes.push(c - prev);
            prev = c;
        }
        Chromosome { order, sizes }
    }

    fn routes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.sizes.len());
        let mut at = 0;
        for &s in &self.sizes {
            out.push(self.order[at..at + s].to_vec());
            at += s;
        }
        out
    }

    fn route_start(&self, r: usize) -> usize {
        self.sizes[..r].iter().sum()
    }

    fn is_partition(&self, n: usize, k: usize) -> bool {
        let mut seen = vec![false; n];
        self.sizes.len() == k
            && self.sizes.iter().all(|&s| s >= 1)
            && self.sizes.iter().sum::<usize>() == n
            && self.order.len() == n
            && self
                .order
                .iter()
                .all(|&c| c < n && !std::mem::replace(&mut seen[c], true))
    }
}

/// Order crossover on the permutation; route sizes come from the first parent.
fn order_crossover(a: &Chromosome, b: &Chromosome, rng: &mut ChaCha8Rng) -> Chromosome {
    let n = a.order.len();
    let i = rng.gen_range(0..n);
    let j = rng.gen_range(i..n);
    let mut taken = vec![false; n];
    let mut child = vec![usize::MAX; n];
    for p in i..=j {
        child[p] = a.order[p];
        taken[a.order[p]] = true;
    }
    let mut fill = b.order.iter().copied().filter(|&c| !taken[c]);
    for slot in child.iter_mut().filter(|s| **s == usize::MAX) {
        *slot = fill.next().expect("order crossover fills every slot");
    }
    Chromosome {
        order: child,
        sizes: a.sizes.clone(),
    }
}

fn mutate(c: &mut Chromosome, rng: &mut ChaCha8Rng) {
    let n = c.order.len();
    let k = c.sizes.len();
    match rng.gen_range(0..3) {
        // swap two clusters, usually across routes
        0 => {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            c.order.swap(i, j);
        }
        // reverse a segment inside one route
        1 => {
            let r = rng.gen_range(0..k);
            let start = c.route_start(r);
            let len = c.sizes[r];
            if len > 1 {
                let i = rng.gen_range(0..len);
                let j = rng.gen_range(0..len);
                let (i, j) = (i.min(j), i.max(j));
                c.order[start + i..=start + j].reverse();
            }
        }
        // relocate one cluster to another route
        _ => {
            if k < 2 {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                let v = c.order.remove(i);
                c.order.insert(j, v);
                return;
            }
            let from = rng.gen_range(0..k);
            if c.sizes[from] < 2 {
                return;
            }
            let to = (from + rng.gen_range(1..k)) % k;
            let pos = c.route_start(from) + rng.gen_range(0..c.sizes[from]);
            let v = c.order.remove(pos);
            c.sizes[from] -= 1;
            let insert = c.route_start(to) + rng.gen_range(0..=c.sizes[to]);
            c.order.insert(insert, v);
            c.sizes[to] += 1;
        }
    }
}

/// Partitions clusters `0..n_clusters` into `n_robots` ordered, non-empty
/// routes maximizing `route_score`. Returns the best partition encountered.
pub fn ga_route_assign<F>(
    n_clusters: usize,
    n_robots: usize,
    mut route_score: F,
    options: &GaOptions,
) -> Result<GaResult>
where
    F: FnMut(&[Vec<usize>]) -> f64,
{
    options.validate()?;
    if n_robots == 0 || n_robots > n_clusters {
        return Err(Error::Config(format!(
            "cannot split {n_clusters} clusters into {n_robots} non-empty routes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut score = |c: &Chromosome| {
        let v = route_score(&c.routes());
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut pop: Vec<Chromosome> = (0..options.population)
        .map(|_| Chromosome::random(n_clusters, n_robots, &mut rng))
        .collect();
    let mut fitness: Vec<f64> = pop.iter().map(&mut score).collect();
    let mut best = argmax(&fitness);
    let mut best_c = pop[best].clone();
    let mut best_v = fitness[best];

    for _ in 0..options.generations {
        let mut next = Vec::with_capacity(pop.len());
        next.push(pop[best].clone());
        while next.len() < pop.len() {
            let a = tournament(&fitness, &mut rng);
            let b = tournament(&fitness, &mut rng);
            let mut child = order_crossover(&pop[a], &pop[b], &mut rng);
            while rng.gen_bool(options.mutation_rate) {
                mutate(&mut child, &mut rng);
            }
            next.push(child);
        }
        if let Some(bad) = next.iter().find(|c| !c.is_partition(n_clusters, n_robots)) {
            return Err(Error::Contract(format!("GA produced a non-partition: {bad:?}")));
        }
        pop = next;
        fitness = pop.iter().map(&mut score).collect();
        best = argmax(&fitness);
        if fitness[best] > best_v {
            best_v = fitness[best];
            best_c = pop[best].clone();
        }
    }
    Ok(GaResult {
        routes: best_c.routes(),
        score: best_v,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut b = 0;
    for i in 1..v.len() {
        if v[i] > v[b] {
            b = i;
        }
    }
    b
}

fn tournament(fitness: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut best = rng.gen_range(0..fitness.len());
    for _ in 0..2 {
        let c = rng.gen_range(0..fitness.len());
        if fitness[c] > fitness[best] {
            best = c;
        }
    }
    best
}

/// Exact optimum by enumerating every ordered partition. Intended for small
/// instances (tests and calibration).
pub fn exhaustive_route_assign<F>(n_clusters: usize, n_robots: usize, mut route_score: F) -> Result<GaResult>
where
    F: FnMut(&[Vec<usize>]) -> f64,
{
    if n_robots == 0 || n_robots > n_clusters {
        return Err(Error::Config(format!(
            "cannot split {n_clusters} clusters into {n_robots} non-empty routes"
        )));
    }
    let mut best = GaResult {
        routes: Vec::new(),
        score: f64::NEG_INFINITY,
    };
    let mut order: Vec<usize> = (0..n_clusters).collect();
    let mut sizes = vec![0; n_robots];
    permute(&mut order, 0, &mut |perm| {
        compositions(n_clusters, &mut sizes, 0, &mut |sizes| {
            let c = Chromosome {
                order: perm.to_vec(),
                sizes: sizes.to_vec(),
            };
            let routes = c.routes();
            let v = route_score(&routes);
            if v > best.score {
                best.score = v;
                best.routes = routes;
            }
        });
    });
    Ok(best)
}

fn permute(items: &mut [usize], k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Every split of `remaining` into `sizes.len() - slot` positive parts.
fn compositions(remaining: usize, sizes: &mut [usize], slot: usize, visit: &mut dyn FnMut(&[usize])) {
    let left = sizes.len() - slot;
    if left == 1 {
        sizes[slot] = remaining;
        visit(sizes);
        return;
    }
    for s in 1..=remaining - (left - 1) {
        sizes[slot] = s;
        compositions(remaining - s, sizes, slot + 1, visit);
    }
}
