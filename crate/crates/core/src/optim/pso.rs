use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsoOptions {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// A particle whose personal best has not improved for this many
    /// iterations is scattered to a random position, keeping its memory.
    /// Escapes the flat regions a discrete decode creates. Zero disables.
    pub patience: usize,
    pub seed: u64,
}

impl Default for PsoOptions {
    fn default() -> Self {
        PsoOptions {
            swarm_size: 60,
            iterations: 80,
            inertia: 0.729,
            cognitive: 1.49,
            social: 1.49,
            patience: 10,
            seed: 0,
        }
    }
}

impl PsoOptions {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::Config("swarm_size must be at least 2".into()));
        }
        for (name, v) in [
            ("inertia", self.inertia),
            ("cognitive", self.cognitive),
            ("social", self.social),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PsoOptions { seed, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsoResult {
    pub best: Vec<f64>,
    pub value: f64,
    /// Best value after initialization and after every iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Global-best particle swarm maximization over a box.
///
/// `seeds` are placed as the first particles (clamped into the box), which
/// lets a receding-horizon caller warm-start from its previous solution.
/// NaN objective values rank below every number.
pub fn particle_swarm_maximize<F>(
    mut objective: F,
    bounds: &[(f64, f64)],
    seeds: &[Vec<f64>],
    options: &PsoOptions,
) -> Result<PsoResult>
where
    F: FnMut(&[f64]) -> f64,
{
    options.validate()?;
    if bounds
        .iter()
        .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(Error::Config("PSO bounds must be finite with lo <= hi".into()));
    }
    let dim = bounds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let n = options.swarm_size;
    let mut pos: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut vel: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let p: Vec<f64> = match seeds.get(i) {
            Some(s) if s.len() == dim => s.iter().zip(bounds).map(|(&v, &(lo, hi))| v.clamp(lo, hi)).collect(),
            _ => bounds.iter().map(|&(lo, hi)| sample(&mut rng, lo, hi)).collect(),
        };
        let v = bounds
            .iter()
            .map(|&(lo, hi)| {
                let span = 0.2 * (hi - lo);
                sample(&mut rng, -span, span)
            })
            .collect();
        pos.push(p);
        vel.push(v);
    }
    let mut evaluations = 0;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = objective(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut pbest = pos.clone();
    let mut pbest_val: Vec<f64> = pos.iter().map(|p| eval(p)).collect();
    let mut g = 0;
    for i in 1..n {
        if pbest_val[i] > pbest_val[g] {
            g = i;
        }
    }
    let mut gbest = pbest[g].clone();
    let mut gbest_val = pbest_val[g];
    let mut idle = vec![0usize; n];
    let mut history = Vec::with_capacity(options.iterations + 1);
    history.push(gbest_val);

    for _ in 0..options.iterations {
        for i in 0..n {
            for d in 0..dim {
                let (lo, hi) = bounds[d];
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let v = options.inertia * vel[i][d]
                    + options.cognitive * r1 * (pbest[i][d] - pos[i][d])
                    + options.social * r2 * (gbest[d] - pos[i][d]);
                let x = pos[i][d] + v;
                if x < lo || x > hi {
                    pos[i][d] = x.clamp(lo, hi);
                    vel[i][d] = 0.0;
                } else {
                    pos[i][d] = x;
                    vel[i][d] = v;
                }
            }
            if options.patience > 0 && idle[i] >= options.patience {
                idle[i] = 0;
                for (d, &(lo, hi)) in bounds.iter().enumerate() {
                    pos[i][d] = sample(&mut rng, lo, hi);
                    let span = 0.2 * (hi - lo);
                    vel[i][d] = sample(&mut rng, -span, span);
                }
            }
            let val = eval(&pos[i]);
            idle[i] += 1;
            if val > pbest_val[i] {
                idle[i] = 0;
                pbest_val[i] = val;
                pbest[i].clone_from(&pos[i]);
                if val > gbest_val {
                    gbest_val = val;
                    gbest.clone_from(&pos[i]);
                }
            }
        }
        history.push(gbest_val);
    }
    Ok(PsoResult {
        best: gbest,
        value: gbest_val,
        history,
        evaluations,
    })
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn finds_quadratic_optimum() {
        let opts = PsoOptions {
            swarm_size: 50,
            iterations: 100,
            ..PsoOptions::default()
        };
        let f = |x: &[f64]| -x.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>();
        let r = particle_swarm_maximize(f, &[(0.0, 1.0); 8], &[], &opts).unwrap();
        assert!(r.value >= -1e-3, "{}", r.value);
        assert_eq!(r.value, f(&r.best));
        assert_eq!(r.evaluations, 50 * 101);
    }

    #[test]
    fn constant_objective() {
        let r = particle_swarm_maximize(|_| 0.25, &[(-1.0, 1.0); 3], &[], &PsoOptions::default()).unwrap();
        assert_eq!(r.value, 0.25);
        assert!(r.best.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn same_seed_same_answer() {
        let f = |x: &[f64]| (x[0] * 3.0).sin() + x[1].cos();
        let o = PsoOptions::default().with_seed(11);
        let a = particle_swarm_maximize(f, &[(0.0, 6.0); 2], &[], &o).unwrap();
        let b = particle_swarm_maximize(f, &[(0.0, 6.0); 2], &[], &o).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeded_particle_is_kept_when_best() {
        let f = |x: &[f64]| if x == [0.3, 0.7] { 10.0 } else { 0.0 };
        let r = particle_swarm_maximize(f, &[(0.0, 1.0); 2], &[vec![0.3, 0.7]], &PsoOptions::default()).unwrap();
        assert_eq!(r.best, vec![0.3, 0.7]);
    }

    #[test]
    fn nan_ranks_last_and_bad_options_fail() {
        let f = |x: &[f64]| if x[0] < 0.5 { f64::NAN } else { x[0] };
        let r = particle_swarm_maximize(f, &[(0.0, 1.0)], &[], &PsoOptions::default()).unwrap();
        assert!(r.value >= 0.5);
        let bad = PsoOptions {
            swarm_size: 1,
            ..PsoOptions::default()
        };
        assert!(particle_swarm_maximize(f, &[(0.0, 1.0)], &[], &bad).is_err());
        assert!(particle_swarm_maximize(f, &[(0.0, f64::INFINITY)], &[], &PsoOptions::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn in_bounds_and_monotone_history(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let opts = PsoOptions { swarm_size: 8, iterations: 15, seed, ..PsoOptions::default() };
            let bounds = [(-1.0, 2.0), (0.0, 0.5), (3.0, 3.0)];
            let r = particle_swarm_maximize(|x| a * x[0] + b * x[1] - x[2], &bounds, &[], &opts).unwrap();
            for (v, (lo, hi)) in r.best.iter().zip(bounds) {
                prop_assert!(*v >= lo && *v <= hi);
            }
            prop_assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
