//! Synthetic benchmark datasets laid out on the demand/supply-ratio by
//! fleet-size taxonomy, plus their line-delimited file format.

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Driver, DriverId, EpisodeConfig, Location, Order, OrderId, RewardMode};
use crate::error::{Error, Result};

/// Demand/supply ratio level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
    L4,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::L1, Level::L2, Level::L3, Level::L4];

    /// `(low, high)`; the band is half-open except for L4, which is closed.
    pub fn band(self) -> (f64, f64) {
        match self {
            Level::L1 => (1.0, 1.1),
            Level::L2 => (1.1, 1.5),
            Level::L3 => (1.5, 2.0),
            Level::L4 => (2.0, 4.0),
        }
    }

    pub fn contains(self, ratio: f64) -> bool {
        let (lo, hi) = self.band();
        match self {
            Level::L4 => ratio >= lo && ratio <= hi,
            _ => ratio >= lo && ratio < hi,
        }
    }

    pub fn of_ratio(ratio: f64) -> Option<Level> {
        Level::ALL.into_iter().find(|l| l.contains(ratio))
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(Level::L1),
            "L2" => Ok(Level::L2),
            "L3" => Ok(Level::L3),
            "L4" => Ok(Level::L4),
            _ => Err(Error::InvalidConfig(format!("unknown level `{s}`"))),
        }
    }
}

/// Driver-capacity bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CapacityBin {
    #[serde(rename = "<=400")]
    Le400,
    #[serde(rename = "<=550")]
    Le550,
    #[serde(rename = "<=800")]
    Le800,
}

impl CapacityBin {
    pub const ALL: [CapacityBin; 3] = [CapacityBin::Le400, CapacityBin::Le550, CapacityBin::Le800];

    /// Nominal driver-count range at full scale.
    pub fn nominal(self) -> (f64, f64) {
        match self {
            CapacityBin::Le400 => (300.0, 400.0),
            CapacityBin::Le550 => (400.0, 550.0),
            CapacityBin::Le800 => (550.0, 800.0),
        }
    }

    /// Integer driver counts belonging to this bin after scaling.
    ///
    /// The nominal ranges share their end points (400, 550), so every bin
    /// above the first starts just past the previous bin's upper bound.
    pub fn driver_range(self, scale: f64) -> Result<(usize, usize)> {
        if !(scale.is_finite() && scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidConfig(format!("scale_factor must be in (0, 1], got {scale}")));
        }
        let floor = |v: f64| (v + 1e-9).floor() as usize;
        let ceil = |v: f64| (v - 1e-9).ceil() as usize;
        let (lo, hi) = match self {
            CapacityBin::Le400 => (ceil(300.0 * scale), floor(400.0 * scale)),
            CapacityBin::Le550 => (floor(400.0 * scale) + 1, floor(550.0 * scale)),
            CapacityBin::Le800 => (floor(550.0 * scale) + 1, floor(800.0 * scale)),
        };
        if lo > hi || hi == 0 {
            return Err(Error::InvalidConfig(format!(
                "scale_factor {scale} leaves no driver counts in bin {self}"
            )));
        }
        Ok((lo, hi))
    }

    pub fn of_count(count: usize, scale: f64) -> Option<CapacityBin> {
        CapacityBin::ALL.into_iter().find(|b| {
            b.driver_range(scale)
                .map(|(lo, hi)| (lo..=hi).contains(&count))
                .unwrap_or(false)
        })
    }
}

impl fmt::Display for CapacityBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CapacityBin::Le400 => "<=400",
            CapacityBin::Le550 => "<=550",
            CapacityBin::Le800 => "<=800",
        })
    }
}

impl FromStr for CapacityBin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim_start_matches("<=").trim_start_matches('≤') {
            "400" => Ok(CapacityBin::Le400),
            "550" => Ok(CapacityBin::Le550),
            "800" => Ok(CapacityBin::Le800),
            _ => Err(Error::InvalidConfig(format!("unknown capacity bin `{s}`"))),
        }
    }
}

/// Knobs of the synthetic arrival, location, patience and price models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Share of drivers already online at t = 0.
    pub initial_driver_fraction: f64,
    pub n_hotspots: usize,
    /// Standard deviation of points around a hotspot center, meters.
    pub hotspot_sigma: f64,
    pub order_hotspot_weight: f64,
    pub driver_hotspot_weight: f64,
    /// Relative amplitude of the sinusoidal arrival intensity.
    pub intensity_amplitude: f64,
    pub patience_min: f64,
    pub patience_mean: f64,
    pub hazard_max: f64,
    pub base_price: f64,
    pub price_per_km: f64,
    pub price_noise: f64,
    /// Travel speed used for trip durations, m/s.
    pub cruise_speed: f64,
    pub trip_overhead: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            initial_driver_fraction: 0.3,
            n_hotspots: 4,
            hotspot_sigma: 600.0,
            order_hotspot_weight: 0.7,
            driver_hotspot_weight: 0.4,
            intensity_amplitude: 0.5,
            patience_min: 30.0,
            patience_mean: 120.0,
            hazard_max: 0.005,
            base_price: 5.0,
            price_per_km: 2.0,
            price_noise: 0.5,
            cruise_speed: 8.0,
            trip_overhead: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub level: Level,
    pub capacity_bin: CapacityBin,
    pub seed: u64,
    pub scale_factor: f64,
    pub episode: EpisodeConfig,
    pub params: GeneratorParams,
}

impl ScenarioSpec {
    pub fn new(level: Level, capacity_bin: CapacityBin, seed: u64, scale_factor: f64) -> Self {
        Self {
            level,
            capacity_bin,
            seed,
            scale_factor,
            episode: EpisodeConfig { seed, ..EpisodeConfig::default() },
            params: GeneratorParams::default(),
        }
    }

    pub fn with_reward_mode(mut self, mode: RewardMode) -> Self {
        self.episode.reward_mode = mode;
        self
    }
}

/// One arrival in a dataset's event stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Event {
    Driver(Driver),
    Order(Order),
}

impl Event {
    pub fn appear_time(&self) -> f64 {
        match self {
            Event::Driver(d) => d.appear_time,
            Event::Order(o) => o.appear_time,
        }
    }
}

/// A ten-minute (by default) arrival stream and the configuration it runs under.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: EpisodeConfig,
    pub scale_factor: f64,
    pub events: Vec<Event>,
}

impl Dataset {
    pub fn empty(config: EpisodeConfig) -> Self {
        Self { config, scale_factor: 1.0, events: Vec::new() }
    }

    pub fn n_drivers(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::Driver(_))).count()
    }

    pub fn n_orders(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, Event::Order(_))).count()
    }

    /// Orders per driver over the whole stream.
    pub fn ratio(&self) -> Option<f64> {
        let d = self.n_drivers();
        (d > 0).then(|| self.n_orders() as f64 / d as f64)
    }

    /// Stable sort by arrival time; drivers first on ties, then by id.
    pub fn sort_events(&mut self) {
        self.events.sort_by(|a, b| {
            a.appear_time().total_cmp(&b.appear_time()).then_with(|| event_key(a).cmp(&event_key(b)))
        });
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].appear_time() <= w[1].appear_time())
    }
}

fn event_key(e: &Event) -> (u8, u32) {
    match e {
        Event::Driver(d) => (0, d.id.0),
        Event::Order(o) => (1, o.id.0),
    }
}

/// Draws a dataset for `spec`. Deterministic in `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.episode.validate()?;
    let (d_lo, d_hi) = spec.capacity_bin.driver_range(spec.scale_factor)?;
    let p = &spec.params;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let n_drivers = rng.random_range(d_lo..=d_hi);
    let (r_lo, r_hi) = spec.level.band();
    let target_ratio = r_lo + (r_hi - r_lo) * rng.random::<f64>();
    let n_orders = order_count(n_drivers, spec.level, target_ratio)?;

    let cfg = &spec.episode;
    let hotspots: Vec<Location> = (0..p.n_hotspots.max(1))
        .map(|_| {
            let row = rng.random_range(0..cfg.grid_rows());
            let col = rng.random_range(0..cfg.grid_cols());
            cfg.clamp(Location::new(
                (col as f64 + 0.5) * cfg.cell_size,
                (row as f64 + 0.5) * cfg.cell_size,
            ))
        })
        .collect();
    let phase = 2.0 * PI * rng.random::<f64>();
    let spread = Normal::new(0.0, p.hotspot_sigma.max(1e-9))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let patience_tail = Exp::new(1.0 / (p.patience_mean - p.patience_min).max(1e-9))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let price_noise = Normal::new(0.0, p.price_noise.max(0.0))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let sample_location = |rng: &mut ChaCha8Rng, weight: f64| -> Location {
        if rng.random::<f64>() < weight {
            let c = hotspots[rng.random_range(0..hotspots.len())];
            cfg.clamp(Location::new(c.x + spread.sample(rng), c.y + spread.sample(rng)))
        } else {
            Location::new(rng.random::<f64>() * cfg.fence_width, rng.random::<f64>() * cfg.fence_height)
        }
    };
    // Inhomogeneous arrivals by thinning: conditioned on the count, Poisson
    // arrival times are i.i.d. with density proportional to the intensity.
    let amplitude = p.intensity_amplitude.clamp(0.0, 1.0);
    let arrival = |rng: &mut ChaCha8Rng| -> f64 {
        loop {
            let t = rng.random::<f64>() * cfg.episode_length;
            let intensity = 1.0 + amplitude * (2.0 * PI * t / cfg.episode_length + phase).sin();
            if rng.random::<f64>() * (1.0 + amplitude) <= intensity {
                return t;
            }
        }
    };

    let mut driver_times: Vec<f64> = (0..n_drivers)
        .map(|_| if rng.random::<f64>() < p.initial_driver_fraction { 0.0 } else { arrival(&mut rng) })
        .collect();
    driver_times.sort_by(f64::total_cmp);
    let mut order_times: Vec<f64> = (0..n_orders).map(|_| arrival(&mut rng)).collect();
    order_times.sort_by(f64::total_cmp);

    let mut events = Vec::with_capacity(n_drivers + n_orders);
    for (i, t) in driver_times.into_iter().enumerate() {
        let position = sample_location(&mut rng, p.driver_hotspot_weight);
        events.push(Event::Driver(Driver {
            id: DriverId(i as u32),
            position,
            appear_time: t,
            offline_hazard: rng.random::<f64>() * p.hazard_max,
        }));
    }
    for (i, t) in order_times.into_iter().enumerate() {
        let origin = sample_location(&mut rng, p.order_hotspot_weight);
        let destination = sample_location(&mut rng, p.order_hotspot_weight);
        let trip = origin.distance(&destination);
        let price = (p.base_price + p.price_per_km * trip / 1000.0 + price_noise.sample(&mut rng)).max(1.0);
        events.push(Event::Order(Order {
            id: OrderId(i as u32),
            origin,
            destination,
            price,
            appear_time: t,
            patience: p.patience_min + patience_tail.sample(&mut rng),
            trip_duration: trip / p.cruise_speed + p.trip_overhead,
        }));
    }
    let mut ds = Dataset { config: spec.episode.clone(), scale_factor: spec.scale_factor, events };
    ds.sort_events();
    Ok(ds)
}

/// Order count whose realized ratio lies in the level band, nearest to the target.
fn order_count(n_drivers: usize, level: Level, target_ratio: f64) -> Result<usize> {
    let (lo, hi) = level.band();
    let d = n_drivers as f64;
    let target = (d * target_ratio).round() as i64;
    let first = ((d * lo).floor() as i64 - 1).max(0);
    let last = (d * hi).ceil() as i64 + 1;
    (first..=last)
        .filter(|&k| level.contains(k as f64 / d))
        .min_by_key(|&k| ((k - target).abs(), k))
        .map(|k| k as usize)
        .ok_or_else(|| {
            Error::InvalidConfig(format!("no order count gives a {level} ratio with {n_drivers} drivers"))
        })
}

/// Recovers the taxonomy cell of a dataset from its realized counts.
pub fn classify(ds: &Dataset) -> Result<(Level, CapacityBin)> {
    let drivers = ds.n_drivers();
    if drivers == 0 {
        return Err(Error::Unclassified("dataset has no drivers".into()));
    }
    let ratio = ds.n_orders() as f64 / drivers as f64;
    let level = Level::of_ratio(ratio)
        .ok_or_else(|| Error::Unclassified(format!("ratio {ratio:.4} is outside every level band")))?;
    let bin = CapacityBin::of_count(drivers, ds.scale_factor).ok_or_else(|| {
        Error::Unclassified(format!("{drivers} drivers at scale {} fit no capacity bin", ds.scale_factor))
    })?;
    Ok((level, bin))
}

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    episode: EpisodeConfig,
    scale_factor: f64,
    events: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Config(Header),
    Driver(Driver),
    Order(Order),
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = Record::Config(Header {
        version: FORMAT_VERSION,
        episode: ds.config.clone(),
        scale_factor: ds.scale_factor,
        events: ds.events.len(),
    });
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::other)?;
    w.write_all(b"\n")?;
    for e in &ds.events {
        serde_json::to_writer(&mut w, e).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut header: Option<Header> = None;
    let mut events = Vec::new();
    let mut last_line = 0;
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        match (rec, &header) {
            (Record::Config(h), None) => {
                if h.version != FORMAT_VERSION {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unsupported format version {}", h.version),
                    });
                }
                header = Some(h);
            }
            (Record::Config(_), Some(_)) => {
                return Err(Error::Parse { line: line_no, message: "duplicate config record".into() })
            }
            (_, None) => {
                return Err(Error::Parse { line: line_no, message: "event before config record".into() })
            }
            (Record::Driver(d), Some(_)) => events.push(Event::Driver(d)),
            (Record::Order(o), Some(_)) => events.push(Event::Order(o)),
        }
        if let (Some(prev), Some(cur)) = (events.len().checked_sub(2).map(|k| &events[k]), events.last()) {
            if cur.appear_time() < prev.appear_time() {
                return Err(Error::Parse { line: line_no, message: "events out of time order".into() });
            }
        }
    }
    let header = header.ok_or(Error::Parse { line: last_line.max(1), message: "missing config record".into() })?;
    if events.len() != header.events {
        return Err(Error::Parse {
            line: last_line + 1,
            message: format!("truncated dataset: expected {} events, found {}", header.events, events.len()),
        });
    }
    Ok(Dataset { config: header.episode, scale_factor: header.scale_factor, events })
}

pub fn save(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// A hand-built mini-episode where holding pays off.
///
/// Each cluster starts with a far driver F and an order A (1800 m apart).
/// Three batches later a near driver N appears next to A, together with an
/// order B right next to F but out of N's reach. Matching F-A immediately
/// strands B; holding lets F-B and N-A both be served. Clusters sit in the
/// fence corners, further apart than the filtering radius, and follow one
/// another in time.
pub fn delayed_dispatch_scenario(n_clusters: usize) -> Dataset {
    const BATCHES_PER_CLUSTER: usize = 5;
    let window = 2.0;
    let cfg = EpisodeConfig {
        episode_length: window * (BATCHES_PER_CLUSTER * n_clusters.max(1)) as f64,
        batch_window: window,
        reward_mode: RewardMode::Tdi,
        radius: 2000.0,
        ..EpisodeConfig::default()
    };
    let corners = [(300.0, 600.0, 1.0), (6100.0, 4200.0, -1.0), (300.0, 4200.0, 1.0), (6100.0, 600.0, -1.0)];
    let mut events = Vec::new();
    for k in 0..n_clusters {
        let (bx, by, dir) = corners[k % corners.len()];
        let t0 = window * (BATCHES_PER_CLUSTER * k) as f64;
        let t1 = t0 + 3.0 * window;
        let at = |dx: f64| Location::new(bx + dir * dx, by);
        let id = k as u32;
        let order = |oid: u32, origin: Location, t: f64, patience: f64| Order {
            id: OrderId(oid),
            origin,
            destination: origin,
            price: 10.0,
            appear_time: t,
            patience,
            trip_duration: 200.0,
        };
        let driver = |did: u32, position: Location, t: f64| Driver {
            id: DriverId(did),
            position,
            appear_time: t,
            offline_hazard: 0.0,
        };
        events.push(Event::Driver(driver(2 * id, at(1800.0), t0)));
        events.push(Event::Order(order(2 * id, at(0.0), t0, 9.0)));
        events.push(Event::Driver(driver(2 * id + 1, at(-100.0), t1)));
        events.push(Event::Order(order(2 * id + 1, at(1950.0), t1, 3.0)));
    }
    let mut ds = Dataset { config: cfg, scale_factor: 1.0, events };
    ds.sort_events();
    ds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(drivers: usize, orders: usize, scale: f64) -> Dataset {
        let mut events = Vec::new();
        for i in 0..drivers {
            events.push(Event::Driver(Driver {
                id: DriverId(i as u32),
                position: Location::new(0.0, 0.0),
                appear_time: 0.0,
                offline_hazard: 0.0,
            }));
        }
        for i in 0..orders {
            events.push(Event::Order(Order {
                id: OrderId(i as u32),
                origin: Location::new(0.0, 0.0),
                destination: Location::new(10.0, 0.0),
                price: 1.0,
                appear_time: 1.0,
                patience: 30.0,
                trip_duration: 10.0,
            }));
        }
        Dataset { config: EpisodeConfig::default(), scale_factor: scale, events }
    }

    #[test]
    fn full_scale_l1_counts() {
        for seed in 0..10 {
            let ds = generate(&ScenarioSpec::new(Level::L1, CapacityBin::Le400, seed, 1.0)).unwrap();
            let d = ds.n_drivers();
            assert!((300..=400).contains(&d), "drivers {d}");
            let r = ds.ratio().unwrap();
            assert!((1.0..1.1).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn scaled_l4_counts() {
        for seed in 0..20 {
            let ds = generate(&ScenarioSpec::new(Level::L4, CapacityBin::Le800, seed, 0.1)).unwrap();
            let d = ds.n_drivers();
            assert!((55..=80).contains(&d), "drivers {d}");
            let r = ds.ratio().unwrap();
            assert!((2.0..=4.0).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec::new(Level::L2, CapacityBin::Le550, 42, 0.2);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = ScenarioSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn generated_streams_are_valid() {
        let spec = ScenarioSpec::new(Level::L3, CapacityBin::Le400, 5, 0.2);
        let ds = generate(&spec).unwrap();
        assert!(ds.is_sorted());
        for e in &ds.events {
            match e {
                Event::Order(o) => {
                    assert!(o.price > 0.0 && o.patience >= 30.0 && o.trip_duration > 0.0);
                    assert!((0.0..600.0).contains(&o.appear_time));
                    assert!(ds.config.contains(o.origin) && ds.config.contains(o.destination));
                }
                Event::Driver(d) => {
                    assert!((0.0..0.005).contains(&d.offline_hazard) || d.offline_hazard == 0.0);
                    assert!(ds.config.contains(d.position));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(generate(&ScenarioSpec::new(Level::L1, CapacityBin::Le400, 0, 0.0)).is_err());
        assert!(generate(&ScenarioSpec::new(Level::L1, CapacityBin::Le400, 0, -0.5)).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&synthetic(350, 370, 1.0)).unwrap(), (Level::L1, CapacityBin::Le400));
        assert_eq!(classify(&synthetic(500, 900, 1.0)).unwrap(), (Level::L3, CapacityBin::Le550));
        assert!(matches!(classify(&synthetic(100, 50, 1.0)), Err(Error::Unclassified(_))));
        assert!(matches!(classify(&synthetic(0, 0, 1.0)), Err(Error::Unclassified(_))));
    }

    #[test]
    fn shared_bin_edges_go_to_the_lower_bin() {
        assert_eq!(CapacityBin::of_count(400, 1.0), Some(CapacityBin::Le400));
        assert_eq!(CapacityBin::of_count(401, 1.0), Some(CapacityBin::Le550));
        assert_eq!(CapacityBin::of_count(550, 1.0), Some(CapacityBin::Le550));
        assert_eq!(CapacityBin::Le800.driver_range(0.1).unwrap(), (56, 80));
    }

    #[test]
    fn round_trip_and_truncation() {
        let ds = generate(&ScenarioSpec::new(Level::L2, CapacityBin::Le400, 3, 0.1)).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset(&buf[..]).unwrap(), ds);

        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_dataset(cut.as_bytes()), Err(Error::Parse { .. })));

        let mid = &text[..text.len() / 2];
        match read_dataset(mid.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert!(line > 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_round_trips() {
        let ds = Dataset::empty(EpisodeConfig::default());
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.events.len(), 0);
    }

    #[test]
    fn garbage_line_reports_its_number() {
        let ds = synthetic(1, 1, 1.0);
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        buf.extend_from_slice(b"{not json\n");
        match read_dataset(&buf[..]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn crafted_scenario_shape() {
        let ds = delayed_dispatch_scenario(4);
        assert_eq!(ds.config.n_batches(), 20);
        assert_eq!(ds.n_drivers(), 8);
        assert_eq!(ds.n_orders(), 8);
        assert!(ds.is_sorted());
        for e in &ds.events {
            match e {
                Event::Driver(d) => assert!(ds.config.contains(d.position)),
                Event::Order(o) => assert!(ds.config.contains(o.origin)),
            }
        }
    }
}
