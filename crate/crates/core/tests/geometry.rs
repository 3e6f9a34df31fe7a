use std::f64::consts::PI;

use gravalloc::index::{linear_scan, CellIndex};
use gravalloc::{kappa, rng, Error, Point, Region, StarConfig};
use rand::Rng;

fn p(c: &[f64]) -> Point {
    Point::new(c.to_vec()).unwrap()
}

fn ball(d: usize, r: f64) -> Region {
    Region::ball(Point::origin(d), r).unwrap()
}

#[test]
fn kappa_closed_forms() {
    assert!((kappa(3).unwrap() - 4.0 * PI / 3.0).abs() < 1e-15);
    assert!((kappa(5).unwrap() - 8.0 * PI * PI / 15.0).abs() < 1e-14);
    assert!((kappa(1).unwrap() - 2.0).abs() < 1e-15);
    assert!((kappa(2).unwrap() - PI).abs() < 1e-15);
    assert!(matches!(kappa(0), Err(Error::Domain(_))));
}

#[test]
fn explicit_configs_are_ordered_from_origin() {
    let c = StarConfig::from_explicit(3, &[p(&[1.0, 0.0, 0.0])], ball(3, 2.0)).unwrap();
    assert_eq!(c.order_from_origin(), &[0]);
    let c = StarConfig::from_explicit(3, &[p(&[2.0, 0.0, 0.0]), p(&[1.0, 0.0, 0.0])], ball(3, 3.0)).unwrap();
    assert_eq!(c.order_from_origin(), &[1, 0]);
}

#[test]
fn explicit_configs_reject_duplicates_and_outsiders() {
    let dup = StarConfig::from_explicit(3, &[p(&[1.0, 0.0, 0.0]), p(&[1.0, 0.0, 0.0])], ball(3, 2.0));
    assert!(matches!(dup, Err(Error::Validation(_))));
    let out = StarConfig::from_explicit(3, &[p(&[3.0, 0.0, 0.0])], ball(3, 2.0));
    assert!(matches!(out, Err(Error::Validation(_))));
}

#[test]
fn order_by_distance_with_ties() {
    let w = ball(3, 5.0);
    let c = StarConfig::from_explicit(3, &[p(&[1.0, 0.0, 0.0]), p(&[-3.0, 0.0, 0.0])], w.clone()).unwrap();
    assert_eq!(c.order_by_distance(&[0.0; 3]), vec![0, 1]);
    assert_eq!(c.order_by_distance(&[-2.0, 0.0, 0.0]), vec![1, 0]);
    let c = StarConfig::from_explicit(3, &[p(&[1.0, 0.0, 0.0]), p(&[-1.0, 0.0, 0.0])], w).unwrap();
    assert_eq!(c.order_by_distance(&[0.0; 3]), vec![1, 0]);
}

#[test]
fn order_sorts_distances() {
    let c = StarConfig::sample_poisson(3, ball(3, 6.0), 1.0, 11).unwrap();
    let x = [0.7, -1.2, 2.0];
    let order = c.order_by_distance(&x);
    let dist = |i: usize| c.star(i).iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    assert!(order.windows(2).all(|w| dist(w[0]) <= dist(w[1])));
}

#[test]
fn sampling_is_deterministic() {
    let a = StarConfig::sample_poisson(3, ball(3, 10.0), 1.0, 7).unwrap();
    let b = StarConfig::sample_poisson(3, ball(3, 10.0), 1.0, 7).unwrap();
    assert_eq!(a, b);
    assert!(a.stars().all(|z| a.window().contains(z)));
}

#[test]
fn tiny_window_is_empty() {
    let c = StarConfig::sample_poisson(3, ball(3, 1e-6), 1.0, 3).unwrap();
    assert!(c.is_empty());
}

#[test]
fn unbounded_window_is_rejected() {
    let w = Region::complement_of_ball(Point::origin(3), 1.0).unwrap();
    assert!(matches!(StarConfig::sample_poisson(3, w, 1.0, 1), Err(Error::UnsupportedRegion(_))));
}

#[test]
fn poisson_counts_have_matching_mean_and_variance() {
    let w = ball(3, 4.0);
    let target = w.volume().unwrap();
    let counts: Vec<f64> =
        (0..2000).map(|s| StarConfig::sample_poisson(3, w.clone(), 1.0, s).unwrap().len() as f64).collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((mean - target).abs() / target < 0.05, "mean {mean} vs {target}");
    assert!((var - target).abs() / target < 0.05, "variance {var} vs {target}");
}

#[test]
fn ball_in_box_hit_fraction() {
    for d in [3, 4] {
        let b = Region::cube(Point::origin(d), 1.0).unwrap();
        let unit = ball(d, 1.0);
        let mut g = rng::stream(5, "hit_fraction", d as u64);
        let mut x = vec![0.0; d];
        let n = 1_000_000;
        let mut hits = 0u64;
        for _ in 0..n {
            b.sample_uniform(&mut g, &mut x).unwrap();
            hits += unit.contains(&x) as u64;
        }
        let f = hits as f64 / n as f64;
        let target = kappa(d).unwrap() / 2f64.powi(d as i32);
        let se = (target * (1.0 - target) / n as f64).sqrt();
        assert!((f - target).abs() < 3.0 * se, "d={d}: {f} vs {target}");
    }
}

#[test]
fn region_membership_conventions() {
    let a = Region::annulus(Point::origin(3), 1.0, 2.0).unwrap();
    assert!(!a.contains(&[1.0, 0.0, 0.0]));
    assert!(a.contains(&[2.0, 0.0, 0.0]));
    assert!(a.contains(&[1.5, 0.0, 0.0]));
    let b = Region::cube(Point::origin(3), 1.0).unwrap();
    assert!(b.contains(&[1.0, -1.0, 1.0]));
    assert_eq!(b.volume(), Some(8.0));
    assert!(Region::ball(Point::origin(3), -1.0).is_err());
    assert!(Region::annulus(Point::origin(3), 2.0, 1.0).is_err());
}

#[test]
fn json_round_trip_is_exact() {
    let c = StarConfig::sample_poisson(4, ball(4, 3.0), 1.3, 99).unwrap();
    let back = StarConfig::from_json(&c.to_json().unwrap()).unwrap();
    assert_eq!(c, back);
    assert!(c.coords().iter().zip(back.coords()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn superposition_keeps_every_star() {
    let w = ball(3, 3.0);
    let a = StarConfig::sample_poisson(3, w.clone(), 1.0, 1).unwrap();
    let b = StarConfig::sample_poisson(3, w, 1.0, 2).unwrap();
    let s = StarConfig::superpose(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(s.len(), a.len() + b.len());
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

#[test]
fn index_matches_linear_scan() {
    let c = StarConfig::sample_poisson(3, Region::cube(Point::origin(3), 10.8).unwrap(), 1.0, 21).unwrap();
    assert!(c.len() > 9000);
    let index = CellIndex::build(3, c.coords());
    let mut g = rng::stream(21, "queries", 0);
    for q in 0..1000 {
        let center: Vec<f64> = (0..3).map(|_| g.random_range(-12.0..12.0)).collect();
        let r = g.random_range(0.1..6.0);
        let region = if q % 2 == 0 {
            Region::ball(p(&center), r).unwrap()
        } else {
            Region::annulus(p(&center), 0.5 * r, r).unwrap()
        };
        assert_eq!(sorted(index.query(&region)), sorted(linear_scan(3, c.coords(), &region)));
    }
}

#[test]
fn index_edge_cases() {
    let empty = CellIndex::build(3, &[]);
    assert!(empty.query(&ball(3, 100.0)).is_empty());
    let c = StarConfig::sample_poisson(3, ball(3, 5.0), 1.0, 4).unwrap();
    let index = CellIndex::build(3, c.coords());
    assert_eq!(index.query(&ball(3, 5.0)).len(), c.len());
}
