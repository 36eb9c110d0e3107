//! Seeded random scenarios.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{Scenario, ScenarioConfig};
use crate::simulator::FaultSchedule;
use crate::world::{Instance, LocId, Location, LocationKind, NodeKind, RadioNode};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct GenParams {
    pub grid: i64,
    pub radio_range: i64,
    pub locations: usize,
    pub uavs: usize,
    pub targets: usize,
    pub relays: usize,
    /// Edges added on top of the random spanning tree.
    pub extra_edges: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { grid: 24, radio_range: 7, locations: 12, uavs: 2, targets: 2, relays: 3, extra_edges: 4 }
    }
}

/// A random connected instance. Location 0 is the home base; the next
/// `targets` locations are targets and the following `relays` are relay
/// sites, each carrying one relay. Every UAV starts at home.
pub fn random_instance(seed: u64, p: &GenParams) -> Instance {
    assert!(p.locations >= 1 + p.targets + p.relays, "not enough locations for targets and relays");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<(i64, i64)> = (0..p.grid).flat_map(|x| (0..p.grid).map(move |y| (x, y))).collect();
    cells.shuffle(&mut rng);
    let locations: Vec<Location> = cells[..p.locations]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let (id, kind) = if i == 0 {
                ("home".to_string(), LocationKind::HomeBase)
            } else if i <= p.targets {
                (format!("t{i}"), LocationKind::Target)
            } else if i <= p.targets + p.relays {
                (format!("s{}", i - p.targets), LocationKind::RelaySite)
            } else {
                (format!("w{}", i - p.targets - p.relays), LocationKind::Waypoint)
            };
            Location { id, x, y, kind }
        })
        .collect();

    let mut edges = Vec::new();
    for i in 1..p.locations {
        edges.push((LocId(rng.gen_range(0..i) as u16), LocId(i as u16)));
    }
    for _ in 0..p.extra_edges {
        let a = rng.gen_range(0..p.locations) as u16;
        let b = rng.gen_range(0..p.locations) as u16;
        if a != b {
            edges.push((LocId(a), LocId(b)));
        }
    }

    let mut nodes = vec![RadioNode { id: "base".into(), kind: NodeKind::Base, location: LocId(0) }];
    for r in 0..p.relays {
        nodes.push(RadioNode {
            id: format!("r{}", r + 1),
            kind: NodeKind::Relay,
            location: LocId((1 + p.targets + r) as u16),
        });
    }
    for u in 0..p.uavs {
        nodes.push(RadioNode { id: format!("u{}", u + 1), kind: NodeKind::Uav, location: LocId(0) });
    }
    Instance::new(locations, &edges, nodes, p.radio_range).expect("generated instance is valid")
}

/// A random scenario with no faults and default configuration.
pub fn random_scenario(seed: u64, p: &GenParams) -> Scenario {
    Scenario {
        grid: (p.grid, p.grid),
        instance: random_instance(seed, p),
        faults: FaultSchedule::default(),
        config: ScenarioConfig::default(),
    }
}
