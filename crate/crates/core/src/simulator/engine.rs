//! Event-by-event simulation of the station chain.
//!
//! Stations are grouped into buckets by (capacity class, bike count). Every
//! station in a bucket has the same pickup and dropoff rate, so the next
//! event is drawn by picking a bucket with probability proportional to its
//! total rate and then a uniform station inside it. The choice denominator
//! `Σⱼ g(Xⱼ) = Σ_b |b|·g(n_b)` is recomputed from bucket sizes at every event,
//! which costs one pass over the buckets and accumulates no rounding drift.
//!
//! A time-varying arrival rate is handled by thinning: candidate pickups are
//! generated at the bound `λ_max` and accepted with probability
//! `λ(t)/λ_max`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::meanfield::DENOMINATOR_FLOOR;
use crate::model::SystemParams;

use super::state::NetworkState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Pickup,
    Dropoff,
}

/// Receives the state over every interval on which it is constant, and
/// every event.
pub trait Observer {
    /// The state seen through `engine` holds on `[from, to)`.
    fn hold(&mut self, engine: &Engine, from: f64, to: f64);

    fn event(&mut self, _engine: &Engine, _kind: EventKind, _station: usize) {}

    /// The run stopped at `t`; `engine` holds the final state.
    fn finish(&mut self, _engine: &Engine, _t: f64) {}
}

impl Observer for () {
    fn hold(&mut self, _engine: &Engine, _from: f64, _to: f64) {}
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn hold(&mut self, engine: &Engine, from: f64, to: f64) {
        self.0.hold(engine, from, to);
        self.1.hold(engine, from, to);
    }

    fn event(&mut self, engine: &Engine, kind: EventKind, station: usize) {
        self.0.event(engine, kind, station);
        self.1.event(engine, kind, station);
    }

    fn finish(&mut self, engine: &Engine, t: f64) {
        self.0.finish(engine, t);
        self.1.finish(engine, t);
    }
}

impl<O: Observer + ?Sized> Observer for &mut O {
    fn hold(&mut self, engine: &Engine, from: f64, to: f64) {
        (**self).hold(engine, from, to);
    }

    fn event(&mut self, engine: &Engine, kind: EventKind, station: usize) {
        (**self).event(engine, kind, station);
    }

    fn finish(&mut self, engine: &Engine, t: f64) {
        (**self).finish(engine, t);
    }
}

pub struct Engine<'p> {
    params: &'p SystemParams,
    weights: &'p [f64],
    /// Capacity of each class, increasing.
    classes: Vec<u32>,
    /// First bucket index of each class; bucket `offset[c] + n` holds the
    /// class-`c` stations with `n` bikes.
    offset: Vec<usize>,
    bucket_count: Vec<u32>,
    bucket_full: Vec<bool>,
    buckets: Vec<Vec<usize>>,
    class_of: Vec<usize>,
    counts: Vec<u32>,
    pos: Vec<usize>,
    fleet: u64,
    docked: u64,
    t: f64,
    events: u64,
    rejected: u64,
    rng: ChaCha8Rng,
}

impl<'p> Engine<'p> {
    pub fn new(params: &'p SystemParams, initial: &NetworkState, seed: u64) -> Result<Self> {
        if initial.n_stations() != params.n_stations {
            return Err(Error::domain(format!(
                "initial state has {} stations, configuration {}",
                initial.n_stations(),
                params.n_stations
            )));
        }
        if initial.fleet() != params.fleet {
            return Err(Error::domain(format!(
                "initial state has a fleet of {}, configuration {}",
                initial.fleet(),
                params.fleet
            )));
        }
        let classes = params.capacity.values().to_vec();
        let mut offset = Vec::with_capacity(classes.len());
        let mut total = 0;
        for &k in &classes {
            offset.push(total);
            total += k as usize + 1;
        }
        let mut bucket_count = vec![0u32; total];
        let mut bucket_full = vec![false; total];
        for (c, &k) in classes.iter().enumerate() {
            for n in 0..=k {
                bucket_count[offset[c] + n as usize] = n;
            }
            bucket_full[offset[c] + k as usize] = true;
        }
        let mut buckets = vec![Vec::new(); total];
        let mut class_of = Vec::with_capacity(initial.n_stations());
        let mut pos = Vec::with_capacity(initial.n_stations());
        for (i, (&x, &k)) in initial.counts().iter().zip(initial.capacities()).enumerate() {
            let c = classes
                .binary_search(&k)
                .map_err(|_| Error::domain(format!("station {i} has capacity {k}, not a configured class")))?;
            class_of.push(c);
            let b = offset[c] + x as usize;
            pos.push(buckets[b].len());
            buckets[b].push(i);
        }
        Ok(Engine {
            params,
            weights: params.weights().as_slice(),
            classes,
            offset,
            bucket_count,
            bucket_full,
            buckets,
            class_of,
            counts: initial.counts().to_vec(),
            pos,
            fleet: initial.fleet(),
            docked: initial.docked(),
            t: initial.t(),
            events: 0,
            rejected: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn params(&self) -> &SystemParams {
        self.params
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n_stations(&self) -> usize {
        self.counts.len()
    }

    pub fn in_circulation(&self) -> u64 {
        self.fleet - self.docked
    }

    pub fn docked(&self) -> u64 {
        self.docked
    }

    pub fn fleet(&self) -> u64 {
        self.fleet
    }

    /// Accepted events so far.
    pub fn events(&self) -> u64 {
        self.events
    }

    /// Candidate pickups discarded by thinning.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    /// Number of class-`c` stations holding `n` bikes.
    pub fn bucket_size(&self, class: usize, n: u32) -> usize {
        self.buckets[self.offset[class] + n as usize].len()
    }

    /// Station counts per bucket, flattened in class order: the layout of a
    /// flattened heterogeneous table scaled by `N`.
    pub fn bucket_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.buckets.iter().map(Vec::len)
    }

    pub fn snapshot(&self) -> NetworkState {
        let capacities = self.class_of.iter().map(|&c| self.classes[c]).collect();
        NetworkState::new(self.counts.clone(), capacities, self.fleet, self.t).expect("engine state is valid")
    }

    fn is_full(&self, b: usize) -> bool {
        self.bucket_full[b]
    }

    /// `(Σ_b |b|·g(n_b), stations not full, stations not empty)`.
    fn totals(&self) -> (f64, usize, usize) {
        let mut g_sum = 0.0;
        let mut not_full = 0;
        let mut not_empty = 0;
        for (c, &k) in self.classes.iter().enumerate() {
            let base = self.offset[c];
            for n in 0..=k as usize {
                let size = self.buckets[base + n].len();
                g_sum += size as f64 * self.weights[n];
                if n < k as usize {
                    not_full += size;
                }
                if n > 0 {
                    not_empty += size;
                }
            }
        }
        (g_sum, not_full, not_empty)
    }

    fn move_station(&mut self, station: usize, from: usize, to: usize) {
        let p = self.pos[station];
        let bucket = &mut self.buckets[from];
        bucket.swap_remove(p);
        if let Some(&moved) = bucket.get(p) {
            self.pos[moved] = p;
        }
        self.pos[station] = self.buckets[to].len();
        self.buckets[to].push(station);
    }

    fn uniform_in(&mut self, b: usize) -> usize {
        let len = self.buckets[b].len();
        self.buckets[b][self.rng.random_range(0..len)]
    }

    /// Runs until `t_end`, reporting to `observer`. `lambda_max` bounds the
    /// arrival rate on `[t, t_end]`.
    pub fn run_until(&mut self, t_end: f64, lambda_max: f64, observer: &mut impl Observer) -> Result<()> {
        if !(t_end >= self.t) {
            return Err(Error::domain(format!("cannot run backwards from {} to {t_end}", self.t)));
        }
        let params = self.params;
        let constant = params.arrival.constant_rate();
        let lambda_bar = constant.unwrap_or(lambda_max);
        let n = self.n_stations() as f64;
        let p = params.p;
        let per_return = params.mu / n;
        loop {
            let (g_sum, not_full, not_empty) = self.totals();
            let informed = if g_sum < DENOMINATOR_FLOOR { 0.0 } else { p * n / g_sum };
            let circulating = self.in_circulation() as f64;
            let drop_total = per_return * circulating * not_full as f64;
            // pickup intensity per unit λ: Σ over non-empty buckets
            let pick_unit = (1.0 - p) * not_empty as f64
                + informed * (g_sum - self.weights[0] * self.empty_stations() as f64);
            let pick_total = lambda_bar * pick_unit.max(0.0);
            let total = drop_total + pick_total;
            if !(total > 0.0) {
                observer.hold(self, self.t, t_end);
                self.t = t_end;
                break;
            }
            let u: f64 = self.rng.random();
            let next = self.t - (1.0 - u).ln() / total;
            if next >= t_end {
                observer.hold(self, self.t, t_end);
                self.t = t_end;
                break;
            }
            observer.hold(self, self.t, next);
            self.t = next;
            let pick: f64 = self.rng.random::<f64>() * total;
            if pick < drop_total {
                let station = self.choose_dropoff();
                self.apply(station, EventKind::Dropoff);
                observer.event(self, EventKind::Dropoff, station);
            } else {
                if constant.is_none() {
                    let accept: f64 = self.rng.random();
                    if accept * lambda_bar >= params.lambda(self.t) {
                        self.rejected += 1;
                        continue;
                    }
                }
                let station = self.choose_pickup(informed);
                self.apply(station, EventKind::Pickup);
                observer.event(self, EventKind::Pickup, station);
            }
        }
        observer.finish(self, self.t);
        Ok(())
    }

    fn empty_stations(&self) -> usize {
        self.offset.iter().map(|&b| self.buckets[b].len()).sum()
    }

    fn choose_dropoff(&mut self) -> usize {
        let not_full: usize = (0..self.buckets.len())
            .filter(|&b| !self.is_full(b))
            .map(|b| self.buckets[b].len())
            .sum();
        let mut target = self.rng.random_range(0..not_full);
        for b in 0..self.buckets.len() {
            if self.is_full(b) {
                continue;
            }
            let len = self.buckets[b].len();
            if target < len {
                return self.buckets[b][target];
            }
            target -= len;
        }
        unreachable!("dropoff target beyond the non-full stations")
    }

    fn choose_pickup(&mut self, informed: f64) -> usize {
        let p = self.params.p;
        let weight = |b: usize, len: usize, engine: &Engine| {
            len as f64 * ((1.0 - p) + informed * engine.weights[engine.bucket_count[b] as usize])
        };
        let total: f64 = (0..self.buckets.len())
            .filter(|&b| self.bucket_count[b] > 0)
            .map(|b| weight(b, self.buckets[b].len(), self))
            .sum();
        let mut target = self.rng.random::<f64>() * total;
        let mut last = None;
        for b in 0..self.buckets.len() {
            let len = self.buckets[b].len();
            if self.bucket_count[b] == 0 || len == 0 {
                continue;
            }
            let w = weight(b, len, self);
            last = Some(b);
            if target < w {
                return self.uniform_in(b);
            }
            target -= w;
        }
        // rounding left the target past the last bucket
        let b = last.expect("a pickup needs a non-empty station");
        self.uniform_in(b)
    }

    fn apply(&mut self, station: usize, kind: EventKind) {
        let c = self.class_of[station];
        let x = self.counts[station];
        let from = self.offset[c] + x as usize;
        match kind {
            EventKind::Pickup => {
                debug_assert!(x > 0);
                self.counts[station] = x - 1;
                self.docked -= 1;
                self.move_station(station, from, from - 1);
            }
            EventKind::Dropoff => {
                debug_assert!(x < self.classes[c]);
                self.counts[station] = x + 1;
                self.docked += 1;
                self.move_station(station, from, from + 1);
            }
        }
        self.events += 1;
        debug_assert!(self.docked <= self.fleet, "fleet conservation violated");
    }
}
