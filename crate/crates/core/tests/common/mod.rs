//! Shared generators and oracles for the integration tests.
#![allow(dead_code)]

use fibrenorm::covering::{markov_subfamily, MarkovFamily, Region};
use fibrenorm::puzzle::ClosedCurve;
use fibrenorm::C64;
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use std::f64::consts::TAU;

/// Star-shaped polygon: `r (1 + a sin(k t + phase))` about `c`.
#[derive(Clone, Copy, Debug)]
pub struct Blob {
    pub c: C64,
    pub r: f64,
    pub a: f64,
    pub k: u32,
    pub phase: f64,
    pub m: usize,
}

impl Blob {
    pub fn inner(&self) -> f64 {
        self.r * (1.0 - self.a) * (std::f64::consts::PI / self.m as f64).cos()
    }
    pub fn outer(&self) -> f64 {
        self.r * (1.0 + self.a)
    }
    pub fn curve(&self) -> ClosedCurve {
        let v = (0..self.m)
            .map(|j| {
                let t = TAU * j as f64 / self.m as f64;
                self.c + C64::from_polar(self.r * (1.0 + self.a * (self.k as f64 * t + self.phase).sin()), t)
            })
            .collect();
        ClosedCurve::new(v).unwrap()
    }
}

pub fn random_blob(rng: &mut StdRng, c: C64, r: f64) -> Blob {
    Blob { c, r, a: rng.random_range(0.0..0.25), k: rng.random_range(2..6), phase: rng.random_range(0.0..TAU), m: rng.random_range(16..40) }
}

/// A random Markov forest: roots spread over the plane, children packed inside their parents.
pub fn random_forest(rng: &mut StdRng, size: usize) -> Vec<Blob> {
    let mut blobs: Vec<Blob> = Vec::new();
    let mut parents: Vec<Option<usize>> = Vec::new();
    let mut attempts = 0;
    while blobs.len() < size && attempts < 50 * size {
        attempts += 1;
        let parent = if blobs.is_empty() || rng.random_bool(0.15) { None } else { Some(rng.random_range(0..blobs.len())) };
        let (room_c, room_r) = match parent {
            None => (C64::new(0.0, 0.0), 40.0),
            Some(p) => (blobs[p].c, blobs[p].inner()),
        };
        let r = room_r * rng.random_range(0.1..0.4);
        if r < 0.2 {
            continue;
        }
        let off = C64::from_polar(rng.random_range(0.0..(room_r - 1.3 * r).max(1e-9)), rng.random_range(0.0..TAU));
        let b = random_blob(rng, room_c + off, r);
        if parent.is_some() && (off.norm() + b.outer()) * 1.02 >= room_r {
            continue;
        }
        let mut ancestors = Vec::new();
        let mut cur = parent;
        while let Some(p) = cur {
            ancestors.push(p);
            cur = parents[p];
        }
        // Anything that is not an ancestor must stay clear.
        let clear = blobs.iter().enumerate().all(|(i, q)| ancestors.contains(&i) || (q.c - b.c).norm() > 1.02 * (q.outer() + b.outer()));
        if clear {
            blobs.push(b);
            parents.push(parent);
        }
    }
    blobs
}

/// Independent even-odd ray casting.
pub fn inside(poly: &[C64], p: C64) -> bool {
    let n = poly.len();
    let mut odd = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.im > p.im) != (b.im > p.im) {
            let x = a.re + (p.im - a.im) * (b.re - a.re) / (b.im - a.im);
            if p.re < x {
                odd = !odd;
            }
        }
    }
    odd
}

pub fn regions_of(blobs: &[Blob]) -> Vec<Region> {
    blobs.iter().enumerate().map(|(i, b)| Region::new(format!("r{i}"), b.curve()).unwrap()).collect()
}


macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Random forest, random targets, then every postcondition of `markov_subfamily` checked by
/// brute force with [`inside`].
pub fn check_subfamily(seed: u64, size: usize, n_targets: usize) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let blobs = random_forest(&mut rng, size);
    let regions = regions_of(&blobs);
    let family = MarkovFamily::new(regions.clone()).map_err(|e| e.to_string())?;

    // Targets inside random regions, at a random fraction of the inradius.
    let targets: Vec<C64> = (0..n_targets)
        .map(|_| {
            let b = blobs[rng.random_range(0..blobs.len())];
            b.c + C64::from_polar(b.inner() * rng.random_range(0.0..0.9), rng.random_range(0.0..TAU))
        })
        .collect();
    let sub = markov_subfamily(&family, &targets).map_err(|e| e.to_string())?;
    let polys: Vec<&[C64]> = sub.regions.iter().map(|r| r.boundary.vertices.as_slice()).collect();

    for &t in &targets {
        let hits = polys.iter().filter(|p| inside(p, t)).count();
        ensure!(hits == 1, "target {t} in {hits} selected regions");
    }
    // Pairwise disjoint: no vertex of one inside another, and no shared grid point.
    for i in 0..polys.len() {
        for j in 0..polys.len() {
            ensure!(i == j || polys[i].iter().all(|&v| !inside(polys[j], v)), "selected regions {i} and {j} meet");
        }
    }
    for gx in -60..=60 {
        for gy in -60..=60 {
            let p = C64::new(gx as f64 * 0.75, gy as f64 * 0.75);
            ensure!(polys.iter().filter(|q| inside(q, p)).count() <= 1, "grid point {p} covered twice");
        }
    }
    // Maximality: every family region holding a target sits inside the selected one.
    for &t in &targets {
        let chosen = polys.iter().find(|p| inside(p, t)).unwrap();
        for r in &regions {
            let v = &r.boundary.vertices;
            ensure!(!inside(v, t) || v.as_slice() == *chosen || v.iter().all(|&x| inside(chosen, x)), "region {} escapes the selection", r.id);
        }
    }
    for p in &polys {
        ensure!(targets.iter().any(|&t| inside(p, t)), "a selected region holds no target");
    }
    Ok(())
}

// Error-free transformations for a double-double Horner oracle.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

#[derive(Clone, Copy)]
struct Dd(f64, f64);

impl Dd {
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.0, o.0);
        let (s, e2) = two_sum(s, e + self.1 + o.1);
        Dd(s, e2)
    }
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.0, o.0);
        let (p, e2) = two_sum(p, e + self.0 * o.1 + self.1 * o.0);
        Dd(p, e2)
    }
    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }
}

/// Horner's rule in double-double arithmetic, rounded once at the end.
pub fn horner_dd(coeffs: &[C64], z: C64) -> C64 {
    let (zr, zi) = (Dd(z.re, 0.0), Dd(z.im, 0.0));
    let mut acc = (Dd(0.0, 0.0), Dd(0.0, 0.0));
    for a in coeffs.iter().rev() {
        let re = acc.0.mul(zr).add(acc.1.mul(zi).neg()).add(Dd(a.re, 0.0));
        let im = acc.0.mul(zi).add(acc.1.mul(zr)).add(Dd(a.im, 0.0));
        acc = (re, im);
    }
    C64::new(acc.0 .0 + acc.0 .1, acc.1 .0 + acc.1 .1)
}

