//! Fluid link model: every transfer crossing a (link, direction) resource
//! gets an equal share of it, and runs at the smallest share along its
//! path. Shares are recomputed whenever a transfer starts or finishes.

use std::collections::BTreeMap;

use crate::dataplane::{Direction, LinkIdx, Topology};

pub type Resource = (LinkIdx, Direction);
pub type TransferId = u64;

#[derive(Clone, Debug)]
struct Flow {
    resources: Vec<Resource>,
    remaining: f64,
    rate: f64,
}

/// Bytes below this are treated as delivered, absorbing float residue.
const EPSILON_BYTES: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Network {
    capacity: BTreeMap<Resource, f64>,
    flows: BTreeMap<TransferId, Flow>,
    last_update: f64,
    next_id: TransferId,
}

impl Network {
    pub fn new(topology: &Topology) -> Self {
        let mut capacity = BTreeMap::new();
        for (i, l) in topology.links().iter().enumerate() {
            capacity.insert((i, Direction::Forward), l.bytes_per_ms());
            capacity.insert((i, Direction::Reverse), l.bytes_per_ms());
        }
        Network { capacity, flows: BTreeMap::new(), last_update: 0.0, next_id: 0 }
    }

    /// Network with explicit capacities in bytes per millisecond.
    pub fn with_capacities(capacity: BTreeMap<Resource, f64>) -> Self {
        Network { capacity, flows: BTreeMap::new(), last_update: 0.0, next_id: 0 }
    }

    pub fn active(&self) -> usize {
        self.flows.len()
    }

    fn advance(&mut self, now: f64) {
        let dt = now - self.last_update;
        if dt > 0.0 {
            for f in self.flows.values_mut() {
                f.remaining = (f.remaining - f.rate * dt).max(0.0);
            }
        }
        self.last_update = now.max(self.last_update);
    }

    fn recompute(&mut self) {
        let mut load: BTreeMap<Resource, usize> = BTreeMap::new();
        for f in self.flows.values() {
            for r in &f.resources {
                *load.entry(*r).or_default() += 1;
            }
        }
        for f in self.flows.values_mut() {
            f.rate = f
                .resources
                .iter()
                .map(|r| self.capacity.get(r).copied().unwrap_or(f64::INFINITY) / load[r] as f64)
                .fold(f64::INFINITY, f64::min);
        }
    }

    /// Starts the data phase of a transfer at `now`.
    pub fn start(&mut self, now: f64, resources: Vec<Resource>, bytes: u64) -> TransferId {
        self.advance(now);
        let id = self.next_id;
        self.next_id += 1;
        let mut resources = resources;
        resources.sort();
        resources.dedup();
        self.flows.insert(id, Flow { resources, remaining: bytes as f64, rate: f64::INFINITY });
        self.recompute();
        id
    }

    /// Earliest projected completion among active transfers.
    pub fn next_completion(&self) -> Option<(f64, TransferId)> {
        self.flows
            .iter()
            .map(|(id, f)| {
                let t = if f.remaining <= EPSILON_BYTES { 0.0 } else { f.remaining / f.rate };
                (self.last_update + t, *id)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
    }

    /// Advances to `now` and removes every transfer that has finished.
    pub fn complete_due(&mut self, now: f64) -> Vec<TransferId> {
        self.advance(now);
        let done: Vec<TransferId> = self
            .flows
            .iter()
            .filter(|(_, f)| f.remaining <= EPSILON_BYTES || f.remaining / f.rate <= 1e-9)
            .map(|(id, _)| *id)
            .collect();
        for id in &done {
            self.flows.remove(id);
        }
        if !done.is_empty() {
            self.recompute();
        }
        done
    }
}

/// Completion times (ms) of transfers that all start their latency phase at
/// 0, each `(resources, one-way latency ms, bytes)`, sharing `capacity`.
pub fn simulate_transfers(capacity: BTreeMap<Resource, f64>, transfers: &[(Vec<Resource>, f64, u64)]) -> Vec<f64> {
    let mut net = Network::with_capacities(capacity);
    let mut starts: Vec<(f64, usize)> = transfers.iter().enumerate().map(|(i, t)| (t.1, i)).collect();
    starts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut ids = BTreeMap::new();
    let mut done = vec![f64::NAN; transfers.len()];
    let mut pending = starts.into_iter().peekable();
    loop {
        let next_start = pending.peek().map(|s| s.0);
        let next_done = net.next_completion();
        let take_start = match (next_start, next_done) {
            (None, None) => break,
            (Some(ts), Some((td, _))) => ts <= td,
            (Some(_), None) => true,
            (None, Some(_)) => false,
        };
        if take_start {
            let (ts, i) = pending.next().expect("peeked");
            let id = net.start(ts, transfers[i].0.clone(), transfers[i].2);
            ids.insert(id, i);
        } else {
            let (td, _) = next_done.expect("checked");
            for id in net.complete_due(td) {
                done[ids[&id]] = td;
            }
        }
    }
    done
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_link(mbps: f64) -> BTreeMap<Resource, f64> {
        BTreeMap::from([((0, Direction::Forward), mbps * 1e6 / 8.0 / 1000.0)])
    }

    #[test]
    fn single_transfer_closed_form() {
        let t = simulate_transfers(one_link(8.0), &[(vec![(0, Direction::Forward)], 10.0, 1_000_000)]);
        assert!((t[0] - 1010.0).abs() < 1e-6, "{t:?}");
    }

    #[test]
    fn two_transfers_share_equally() {
        let r = vec![(0, Direction::Forward)];
        let t = simulate_transfers(one_link(8.0), &[(r.clone(), 10.0, 1_000_000), (r, 10.0, 1_000_000)]);
        for x in t {
            assert!((x - 2010.0).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn zero_size_is_latency_only() {
        let t = simulate_transfers(one_link(8.0), &[(vec![(0, Direction::Forward)], 10.0, 0)]);
        assert_eq!(t[0], 10.0);
    }

    #[test]
    fn opposite_directions_do_not_contend() {
        let t = simulate_transfers(
            BTreeMap::from([((0, Direction::Forward), 1000.0), ((0, Direction::Reverse), 1000.0)]),
            &[(vec![(0, Direction::Forward)], 0.0, 1_000_000), (vec![(0, Direction::Reverse)], 0.0, 1_000_000)],
        );
        assert_eq!(t, vec![1000.0, 1000.0]);
    }

    #[test]
    fn bottleneck_is_the_slowest_share() {
        let caps = BTreeMap::from([((0, Direction::Forward), 1000.0), ((1, Direction::Forward), 250.0)]);
        let t = simulate_transfers(caps, &[(vec![(0, Direction::Forward), (1, Direction::Forward)], 0.0, 1_000_000)]);
        assert_eq!(t[0], 4000.0);
    }

    #[test]
    fn late_joiner_slows_the_first() {
        // first runs alone for 500 ms (half done), then both share
        let r = vec![(0, Direction::Forward)];
        let t = simulate_transfers(one_link(8.0), &[(r.clone(), 0.0, 1_000_000), (r, 500.0, 1_000_000)]);
        assert!((t[0] - 1500.0).abs() < 1e-6, "{t:?}");
        assert!((t[1] - 2000.0).abs() < 1e-6, "{t:?}");
    }
}
