use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sar_flmpc::optim::{exhaustive_route_assign, ga_route_assign, GaOptions};

fn tour_score(points: &[(f64, f64)]) -> impl Fn(&[Vec<usize>]) -> f64 + '_ {
    move |routes: &[Vec<usize>]| {
        let mut total = 0.0;
        for r in routes {
            let mut at = (0.0, 0.0);
            for &c in r {
                let p = points[c];
                total += ((p.0 - at.0).powi(2) + (p.1 - at.1).powi(2)).sqrt();
                at = p;
            }
        }
        -total
    }
}

#[test]
fn ga_matches_exhaustive_optimum_on_small_instances() {
    let mut hits = 0;
    let runs = 50;
    for seed in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.gen_range(4..=8);
        let k = rng.gen_range(1..=2);
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
            .collect();
        let exact = exhaustive_route_assign(n, k, tour_score(&points)).unwrap();
        let ga = ga_route_assign(
            n,
            k,
            tour_score(&points),
            &GaOptions {
                seed,
                ..GaOptions::default()
            },
        )
        .unwrap();
        assert!(ga.score <= exact.score + 1e-12);
        if (ga.score - exact.score).abs() < 1e-9 {
            hits += 1;
        }
    }
    println!("GA matched the exhaustive optimum in {hits}/{runs} runs");
    assert!(hits * 10 >= runs * 9, "{hits}/{runs}");
}
