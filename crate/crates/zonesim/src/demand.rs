//! Stochastic traffic demand: Poisson arrival times paired with OD pairs
//! drawn from a weighted spatial distribution.
//!
//! All randomness flows through a `ChaCha8` generator seeded from a single
//! 64-bit seed, with one stream per purpose (hot-pair choice, arrival
//! times, OD sampling) so changing one knob never perturbs the others.

use crate::net::{EdgeIdx, OdPair, RoadNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

/// RNG stream ids; see module docs.
const STREAM_HOT_PAIRS: u64 = 1;
const STREAM_ARRIVALS: u64 = 2;
const STREAM_OD: u64 = 3;

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("network offers {available} eligible OD pairs but {requested} hot pairs were requested")]
    TooFewPairs { available: u64, requested: u32 },
    #[error("network has {0} eligible spawn edges; at least 2 are required")]
    TooFewSpawnEdges(usize),
    #[error("schedule io: {0}")]
    Io(#[from] std::io::Error),
    #[error("schedule csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schedule references unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("invalid demand model: {0}")]
    Invalid(&'static str),
}

/// Demand configuration for one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    /// Vehicle insertion rate in vehicles/hour/zone.
    pub rate_per_zone: f64,
    pub zone_count: u32,
    /// Demand horizon in seconds.
    pub duration: f64,
    /// Number of OD pairs carrying boosted weight.
    pub hot_pair_count: u32,
    /// Weight multiplier on hot pairs relative to the uniform base weight.
    pub hot_multiplier: f64,
    pub seed: u64,
}

impl DemandModel {
    pub fn new(rate_per_zone: f64, zone_count: u32, seed: u64) -> Self {
        DemandModel {
            rate_per_zone,
            zone_count,
            duration: 7200.0,
            hot_pair_count: 18,
            hot_multiplier: 2.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), DemandError> {
        if self.rate_per_zone < 0.0 {
            return Err(DemandError::Invalid("rate_per_zone must be >= 0"));
        }
        if !(self.duration > 0.0) {
            return Err(DemandError::Invalid("duration must be positive"));
        }
        if self.hot_multiplier < 1.0 {
            return Err(DemandError::Invalid("hot_multiplier must be >= 1"));
        }
        Ok(())
    }
}

/// OD weight table over the eligible spawn edges of one network.
///
/// Every ordered pair of distinct eligible edges carries a uniform base
/// weight; `hot` pairs carry `multiplier` times that weight. The full pair
/// set is enumerated implicitly, so sampling stays O(1) in network size.
#[derive(Clone, Debug)]
pub struct OdWeights {
    eligible: Vec<EdgeIdx>,
    hot: Vec<(u32, u32)>,
    multiplier: f64,
}

impl OdWeights {
    pub fn eligible_edges(&self) -> &[EdgeIdx] {
        &self.eligible
    }

    pub fn pair_count(&self) -> u64 {
        let n = self.eligible.len() as u64;
        n * (n - 1)
    }

    fn pair_by_index(&self, i: u64) -> (EdgeIdx, EdgeIdx) {
        let n = self.eligible.len() as u64;
        let o = i / (n - 1);
        let mut d = i % (n - 1);
        if d >= o {
            d += 1;
        }
        (self.eligible[o as usize], self.eligible[d as usize])
    }

    /// Draw one OD pair. Hot pairs are drawn `multiplier` times as often as
    /// base pairs.
    pub fn sample(&self, rng: &mut impl Rng) -> (EdgeIdx, EdgeIdx) {
        let pairs = self.pair_count() as f64;
        let extra = self.hot.len() as f64 * (self.multiplier - 1.0);
        let r = rng.gen_range(0.0..pairs + extra);
        if r < pairs {
            self.pair_by_index(r as u64)
        } else {
            let h = ((r - pairs) / (self.multiplier - 1.0)) as usize;
            let (o, d) = self.hot[h.min(self.hot.len() - 1)];
            (self.eligible[o as usize], self.eligible[d as usize])
        }
    }

    /// Materialize the full weighted pair list. Intended for small networks
    /// and tests; the list is quadratic in the number of eligible edges.
    pub fn to_pairs(&self, net: &RoadNetwork) -> Vec<OdPair> {
        let mut pairs = Vec::with_capacity(self.pair_count() as usize);
        for i in 0..self.pair_count() {
            let (o, d) = self.pair_by_index(i);
            let hot = self.hot.iter().any(|&(ho, hd)| {
                self.eligible[ho as usize] == o && self.eligible[hd as usize] == d
            });
            pairs.push(OdPair {
                origin: net.edge(o).id.clone(),
                dest: net.edge(d).id.clone(),
                weight: if hot { self.multiplier } else { 1.0 },
            });
        }
        pairs
    }
}

/// Build the OD weight table: uniform weight over all ordered pairs of
/// eligible spawn edges, with `hot_pair_count` distinct pairs (chosen by the
/// seeded hot-pair stream) carrying `hot_multiplier` times the base weight.
pub fn build_od_weights(net: &RoadNetwork, dm: &DemandModel) -> Result<OdWeights, DemandError> {
    dm.validate()?;
    let eligible = net.spawn_edges();
    if eligible.len() < 2 {
        return Err(DemandError::TooFewSpawnEdges(eligible.len()));
    }
    let n = eligible.len() as u64;
    let pair_count = n * (n - 1);
    if pair_count < dm.hot_pair_count as u64 {
        return Err(DemandError::TooFewPairs {
            available: pair_count,
            requested: dm.hot_pair_count,
        });
    }
    let mut rng = stream_rng(dm.seed, STREAM_HOT_PAIRS);
    let mut chosen = std::collections::BTreeSet::new();
    while chosen.len() < dm.hot_pair_count as usize {
        chosen.insert(rng.gen_range(0..pair_count));
    }
    let hot = chosen
        .into_iter()
        .map(|i| {
            let o = i / (n - 1);
            let mut d = i % (n - 1);
            if d >= o {
                d += 1;
            }
            (o as u32, d as u32)
        })
        .collect();
    Ok(OdWeights { eligible, hot, multiplier: dm.hot_multiplier })
}

/// One scheduled vehicle arrival.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub origin: EdgeIdx,
    pub dest: EdgeIdx,
}

/// Time-ordered arrival list for one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrivalSchedule {
    pub arrivals: Vec<Arrival>,
}

impl ArrivalSchedule {
    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    /// Export as CSV (`time,origin,destination`) for replay.
    pub fn write_csv<W: Write>(&self, net: &RoadNetwork, out: W) -> Result<(), DemandError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "origin", "destination"])?;
        for a in &self.arrivals {
            w.write_record(&[
                format!("{:.6}", a.time),
                net.edge(a.origin).id.clone(),
                net.edge(a.dest).id.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(net: &RoadNetwork, input: R) -> Result<Self, DemandError> {
        let mut reader = csv::Reader::from_reader(input);
        let mut arrivals = Vec::new();
        for record in reader.records() {
            let record = record?;
            let time: f64 = record[0].parse().map_err(|_| DemandError::Invalid("bad time"))?;
            let origin = net
                .find_edge(&record[1])
                .ok_or_else(|| DemandError::UnknownEdge(record[1].to_string()))?;
            let dest = net
                .find_edge(&record[2])
                .ok_or_else(|| DemandError::UnknownEdge(record[2].to_string()))?;
            arrivals.push(Arrival { time, origin, dest });
        }
        Ok(ArrivalSchedule { arrivals })
    }
}

/// Generate the arrival schedule for a demand model: inter-arrival gaps are
/// i.i.d. exponential with rate `rate_per_zone * zone_count / 3600` per
/// second, and each arrival's OD pair is drawn from `weights`. The result is
/// a pure function of the model (bit-identical across runs).
pub fn generate_arrivals(dm: &DemandModel, weights: &OdWeights) -> Result<ArrivalSchedule, DemandError> {
    dm.validate()?;
    let lambda = dm.rate_per_zone * dm.zone_count as f64 / 3600.0;
    if lambda <= 0.0 {
        return Ok(ArrivalSchedule::default());
    }
    let mut time_rng = stream_rng(dm.seed, STREAM_ARRIVALS);
    let mut od_rng = stream_rng(dm.seed, STREAM_OD);
    let mut arrivals = Vec::with_capacity((lambda * dm.duration * 1.1) as usize + 16);
    let mut t = 0.0;
    loop {
        // Inverse-CDF exponential draw: u in [0,1) keeps 1-u in (0,1].
        let u: f64 = time_rng.gen();
        t += -(1.0 - u).ln() / lambda;
        if t >= dm.duration {
            break;
        }
        let (origin, dest) = weights.sample(&mut od_rng);
        arrivals.push(Arrival { time: t, origin, dest });
    }
    Ok(ArrivalSchedule { arrivals })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
