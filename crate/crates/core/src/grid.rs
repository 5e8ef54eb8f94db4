//! Network and instance data model, file I/O, and synthetic generation.
//!
//! All electrical quantities are per unit on the network's `base_mva`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub reference_flag: bool,
    /// Planar coordinates, only used by the synthetic risk field and plotting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub susceptance: f64,
    pub rating: f64,
    pub switchable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub bus: String,
    pub max_output_nominal: f64,
    pub renewable_flag: bool,
}

fn default_base_mva() -> f64 {
    100.0
}

fn default_network_name() -> String {
    "network".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(default = "default_network_name")]
    pub name: String,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
}

impl NetworkModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let net: NetworkModel = serde_json::from_str(text)?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Network(m));
        if self.buses.is_empty() {
            return bad("no buses".into());
        }
        if !(self.base_mva > 0.0) {
            return bad(format!("base_mva must be positive, got {}", self.base_mva));
        }
        let mut ids = HashSet::new();
        for b in &self.buses {
            if !ids.insert(b.id.as_str()) {
                return bad(format!("duplicate bus id '{}'", b.id));
            }
        }
        match self.buses.iter().filter(|b| b.reference_flag).count() {
            0 => return bad("no reference bus".into()),
            1 => {}
            k => return bad(format!("{k} buses flagged as reference")),
        }
        let mut line_ids = HashSet::new();
        for l in &self.lines {
            if !line_ids.insert(l.id.as_str()) {
                return bad(format!("duplicate line id '{}'", l.id));
            }
            for end in [&l.from_bus, &l.to_bus] {
                if !ids.contains(end.as_str()) {
                    return bad(format!("line '{}' references unknown bus '{}'", l.id, end));
                }
            }
            if l.from_bus == l.to_bus {
                return bad(format!("line '{}' connects bus '{}' to itself", l.id, l.from_bus));
            }
            if l.susceptance == 0.0 || !l.susceptance.is_finite() {
                return bad(format!("line '{}' has zero or non-finite susceptance", l.id));
            }
            if !(l.rating >= 0.0) || !l.rating.is_finite() {
                return bad(format!("line '{}' has invalid rating {}", l.id, l.rating));
            }
        }
        if self.generators.is_empty() {
            return bad("no generators".into());
        }
        let mut gen_ids = HashSet::new();
        for g in &self.generators {
            if !gen_ids.insert(g.id.as_str()) {
                return bad(format!("duplicate generator id '{}'", g.id));
            }
            if !ids.contains(g.bus.as_str()) {
                return bad(format!("generator '{}' references unknown bus '{}'", g.id, g.bus));
            }
            if !(g.max_output_nominal >= 0.0) || !g.max_output_nominal.is_finite() {
                return bad(format!("generator '{}' has invalid capacity", g.id));
            }
        }
        if !self.is_connected() {
            return bad("network is not connected".into());
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let idx = self.bus_index();
        let mut adj = vec![Vec::new(); self.buses.len()];
        for l in &self.lines {
            let (a, b) = (idx[l.from_bus.as_str()], idx[l.to_bus.as_str()]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn bus_index(&self) -> HashMap<&str, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect()
    }

    pub fn reference_bus(&self) -> usize {
        self.buses.iter().position(|b| b.reference_flag).unwrap_or(0)
    }

    /// Switchable lines sorted by id; this order defines the prediction vector.
    pub fn switchable_lines(&self) -> Vec<&Line> {
        let mut v: Vec<&Line> = self.lines.iter().filter(|l| l.switchable).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }
}

pub fn load_network(path: &Path) -> Result<NetworkModel> {
    NetworkModel::from_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsInstance {
    pub network_ref: String,
    pub line_risk: BTreeMap<String, f64>,
    pub bus_load: BTreeMap<String, f64>,
    pub gen_cap: BTreeMap<String, f64>,
    pub risk_budget: f64,
}

impl OpsInstance {
    pub fn validate(&self, net: &NetworkModel) -> Result<()> {
        let bad = |m: String| Err(Error::InstanceMismatch(m));
        if !(self.risk_budget >= 0.0) || !self.risk_budget.is_finite() {
            return bad(format!("risk budget {} is not a nonnegative number", self.risk_budget));
        }
        let lines: HashSet<&str> = net.lines.iter().map(|l| l.id.as_str()).collect();
        for (id, &r) in &self.line_risk {
            if !lines.contains(id.as_str()) {
                return bad(format!("risk given for unknown line '{id}'"));
            }
            if !(r >= 0.0) || !r.is_finite() {
                return bad(format!("line '{id}' has invalid risk {r}"));
            }
        }
        for l in net.switchable_lines() {
            if !self.line_risk.contains_key(&l.id) {
                return bad(format!("switchable line '{}' has no risk value", l.id));
            }
        }
        let buses: HashSet<&str> = net.buses.iter().map(|b| b.id.as_str()).collect();
        for (id, &p) in &self.bus_load {
            if !buses.contains(id.as_str()) {
                return bad(format!("load given for unknown bus '{id}'"));
            }
            if !(p >= 0.0) || !p.is_finite() {
                return bad(format!("bus '{id}' has invalid load {p}"));
            }
        }
        let gens: HashMap<&str, f64> = net
            .generators
            .iter()
            .map(|g| (g.id.as_str(), g.max_output_nominal))
            .collect();
        for (id, &c) in &self.gen_cap {
            match gens.get(id.as_str()) {
                None => return bad(format!("capacity given for unknown generator '{id}'")),
                Some(&nom) if !(c >= 0.0 && c <= nom + 1e-12) => {
                    return bad(format!("generator '{id}' cap {c} outside [0, {nom}]"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn load(&self, bus: &str) -> f64 {
        self.bus_load.get(bus).copied().unwrap_or(0.0)
    }

    pub fn risk(&self, line: &str) -> f64 {
        self.line_risk.get(line).copied().unwrap_or(0.0)
    }

    pub fn cap(&self, g: &Generator) -> f64 {
        self.gen_cap.get(&g.id).copied().unwrap_or(g.max_output_nominal)
    }

    /// Risks of the switchable lines in prediction-vector order.
    pub fn switch_risks(&self, net: &NetworkModel) -> Vec<f64> {
        net.switchable_lines().iter().map(|l| self.risk(&l.id)).collect()
    }

    pub fn total_load(&self) -> f64 {
        self.bus_load.values().sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn load_instance(path: &Path) -> Result<OpsInstance> {
    OpsInstance::from_json(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    /// Base risk per line on a 0 to `max_risk` scale.
    pub base: BTreeMap<String, f64>,
    /// Log-scale standard deviation of the system-wide daily multiplier.
    pub day_volatility: f64,
    /// Log-scale standard deviation of the independent per-line multiplier.
    pub line_volatility: f64,
    pub max_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
    /// Log-scale standard deviation of the system-wide daily load multiplier.
    pub day_volatility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Availability {
    pub mean: f64,
    /// Half-width of the uniform spread around `mean`.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewableProfile {
    pub availability: BTreeMap<String, Availability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDistribution {
    pub risk_profile: RiskProfile,
    pub load_profile: LoadProfile,
    pub renewable_profile: RenewableProfile,
    /// Threshold whose residual risk becomes each day's risk budget.
    pub budget_threshold: f64,
    pub seed: u64,
}

impl InstanceDistribution {
    pub fn validate(&self, net: &NetworkModel) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let rp = &self.risk_profile;
        if !(rp.day_volatility >= 0.0 && rp.line_volatility >= 0.0 && rp.max_risk >= 0.0) {
            return bad("risk volatilities and max_risk must be nonnegative".into());
        }
        if rp.base.values().any(|&v| !(v >= 0.0)) {
            return bad("base risks must be nonnegative".into());
        }
        let lp = &self.load_profile;
        if !(lp.day_volatility >= 0.0)
            || lp.mean.values().chain(lp.std.values()).any(|&v| !(v >= 0.0))
        {
            return bad("load parameters must be nonnegative".into());
        }
        for a in self.renewable_profile.availability.values() {
            if !(a.mean >= 0.0 && a.spread >= 0.0) {
                return bad("availability parameters must be nonnegative".into());
            }
        }
        if !(self.budget_threshold >= 0.0) {
            return bad("budget threshold must be nonnegative".into());
        }
        let lines: HashSet<&str> = net.lines.iter().map(|l| l.id.as_str()).collect();
        let buses: HashSet<&str> = net.buses.iter().map(|b| b.id.as_str()).collect();
        let gens: HashSet<&str> = net.generators.iter().map(|g| g.id.as_str()).collect();
        if let Some(k) = rp.base.keys().find(|k| !lines.contains(k.as_str())) {
            return bad(format!("risk profile names unknown line '{k}'"));
        }
        if let Some(k) = lp.mean.keys().chain(lp.std.keys()).find(|k| !buses.contains(k.as_str())) {
            return bad(format!("load profile names unknown bus '{k}'"));
        }
        if let Some(k) = self
            .renewable_profile
            .availability
            .keys()
            .find(|k| !gens.contains(k.as_str()))
        {
            return bad(format!("renewable profile names unknown generator '{k}'"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn load_distribution(path: &Path) -> Result<InstanceDistribution> {
    InstanceDistribution::from_json(&fs::read_to_string(path)?)
}

/// Mean-preserving lognormal multiplier.
fn lognormal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let n: f64 = StandardNormal.sample(rng);
    (sigma * n - 0.5 * sigma * sigma).exp()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws one day's instance. A pure function of `(net, dist, day_index)`.
pub fn sample_instance(net: &NetworkModel, dist: &InstanceDistribution, day_index: u64) -> OpsInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(dist.seed);
    rng.set_stream(day_index);
    let rp = &dist.risk_profile;
    let day_risk = lognormal(&mut rng, rp.day_volatility);
    let line_risk: BTreeMap<String, f64> = rp
        .base
        .iter()
        .map(|(id, &base)| {
            let r = base * day_risk * lognormal(&mut rng, rp.line_volatility);
            (id.clone(), r.clamp(0.0, rp.max_risk))
        })
        .collect();

    let lp = &dist.load_profile;
    let day_load = lognormal(&mut rng, lp.day_volatility);
    let bus_load: BTreeMap<String, f64> = lp
        .mean
        .iter()
        .map(|(id, &mean)| {
            let sd = lp.std.get(id).copied().unwrap_or(0.0);
            let noise = if sd > 0.0 { sd * normal(&mut rng) } else { 0.0 };
            (id.clone(), (mean * day_load + noise).max(0.0))
        })
        .collect();

    let mut gen_cap = BTreeMap::new();
    let mut gens: Vec<&Generator> = net.generators.iter().collect();
    gens.sort_by(|a, b| a.id.cmp(&b.id));
    for g in gens {
        let cap = match dist.renewable_profile.availability.get(&g.id) {
            Some(a) if g.renewable_flag => {
                let u = if a.spread > 0.0 {
                    rng.random_range(-1.0..1.0)
                } else {
                    0.0
                };
                g.max_output_nominal * (a.mean + a.spread * u).clamp(0.0, 1.0)
            }
            _ => g.max_output_nominal,
        };
        gen_cap.insert(g.id.clone(), cap);
    }

    let mut inst = OpsInstance {
        network_ref: net.name.clone(),
        line_risk,
        bus_load,
        gen_cap,
        risk_budget: 0.0,
    };
    let risks = inst.switch_risks(net);
    let z = ops::threshold_decisions(&risks, dist.budget_threshold);
    inst.risk_budget = ops::residual_risk(&risks, &z);
    inst
}

/// Parameters of the synthetic network generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub buses: usize,
    /// Extra mesh lines beyond the spanning tree, as a fraction of the bus count.
    pub mesh_ratio: f64,
    pub switchable_fraction: f64,
    pub generator_fraction: f64,
    pub renewable_fraction: f64,
    pub load_bus_fraction: f64,
    pub hotspots: usize,
    pub budget_threshold: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            buses: 36,
            mesh_ratio: 0.5,
            switchable_fraction: 0.6,
            generator_fraction: 0.25,
            renewable_fraction: 0.5,
            load_bus_fraction: 0.7,
            hotspots: 3,
            budget_threshold: 150.0,
            seed: 1,
        }
    }
}

/// Solves the dense system `a x = b` by partial-pivot elimination.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// DC power-flow line flows for the given nodal injections (reference bus absorbs the residual).
pub fn dc_flows(net: &NetworkModel, injection: &[f64]) -> Option<Vec<f64>> {
    let idx = net.bus_index();
    let n = net.buses.len();
    let r = net.reference_bus();
    let map: Vec<Option<usize>> = (0..n)
        .scan(0, |k, i| {
            Some(if i == r {
                None
            } else {
                *k += 1;
                Some(*k - 1)
            })
        })
        .collect();
    let mut bmat = vec![vec![0.0; n - 1]; n - 1];
    for l in &net.lines {
        let (a, b) = (idx[l.from_bus.as_str()], idx[l.to_bus.as_str()]);
        let y = -l.susceptance;
        for (u, v) in [(a, b), (b, a)] {
            if let Some(iu) = map[u] {
                bmat[iu][iu] += y;
                if let Some(iv) = map[v] {
                    bmat[iu][iv] -= y;
                }
            }
        }
    }
    let rhs: Vec<f64> = (0..n).filter(|&i| i != r).map(|i| injection[i]).collect();
    let theta_red = solve_dense(bmat, rhs)?;
    let theta: Vec<f64> = (0..n).map(|i| map[i].map_or(0.0, |k| theta_red[k])).collect();
    Some(
        net.lines
            .iter()
            .map(|l| -l.susceptance * (theta[idx[l.from_bus.as_str()]] - theta[idx[l.to_bus.as_str()]]))
            .collect(),
    )
}

/// Builds a random connected network plus a matching instance distribution.
pub fn synthetic_network(cfg: &SyntheticConfig) -> Result<(NetworkModel, InstanceDistribution)> {
    if cfg.buses < 3 {
        return Err(Error::InvalidParameter("synthetic network needs at least 3 buses".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.buses;
    let width = n.to_string().len().max(3);
    let bus_id = |i: usize| format!("B{:0width$}", i + 1);
    let pos: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let dist = |a: usize, b: usize| ((pos[a][0] - pos[b][0]).powi(2) + (pos[a][1] - pos[b][1]).powi(2)).sqrt();

    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut have: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 1..n {
        let j = (0..i).min_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b))).unwrap_or(0);
        edges.push((j, i));
        have.insert((j.min(i), j.max(i)));
    }
    let extra = (cfg.mesh_ratio * n as f64).round() as usize;
    let mut attempts = 0;
    while edges.len() < n - 1 + extra && attempts < 100 * n {
        attempts += 1;
        let a = rng.random_range(0..n);
        let mut near: Vec<usize> = (0..n).filter(|&b| b != a).collect();
        near.sort_by(|&x, &y| dist(a, x).total_cmp(&dist(a, y)));
        let b = near[rng.random_range(0..near.len().min(4))];
        let key = (a.min(b), a.max(b));
        if have.insert(key) {
            edges.push(key);
        }
    }

    let mut load_mean = BTreeMap::new();
    let mut load_std = BTreeMap::new();
    let mut loads = vec![0.0; n];
    for (i, load) in loads.iter_mut().enumerate() {
        if rng.random_bool(cfg.load_bus_fraction.clamp(0.0, 1.0)) {
            *load = rng.random_range(0.5..2.0);
            load_mean.insert(bus_id(i), *load);
            load_std.insert(bus_id(i), 0.1 * *load);
        }
    }
    if load_mean.is_empty() {
        loads[n - 1] = 1.0;
        load_mean.insert(bus_id(n - 1), 1.0);
        load_std.insert(bus_id(n - 1), 0.1);
    }
    let total_load: f64 = loads.iter().sum();

    let n_gen = ((cfg.generator_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut gen_buses: Vec<usize> = (0..n).collect();
    for i in 0..n_gen {
        let k = rng.random_range(i..n);
        gen_buses.swap(i, k);
    }
    gen_buses.truncate(n_gen);
    gen_buses.sort_unstable();
    let shares: Vec<f64> = (0..n_gen).map(|_| rng.random_range(0.5..1.5)).collect();
    let share_sum: f64 = shares.iter().sum();
    let gwidth = n_gen.to_string().len().max(3);
    let mut generators = Vec::new();
    let mut availability = BTreeMap::new();
    for (k, &b) in gen_buses.iter().enumerate() {
        let renewable = rng.random_bool(cfg.renewable_fraction.clamp(0.0, 1.0));
        let id = format!("G{:0gwidth$}", k + 1);
        // renewables are oversized so expected availability still covers their share
        let cap = 1.3 * total_load * shares[k] / share_sum * if renewable { 1.4 } else { 1.0 };
        if renewable {
            availability.insert(id.clone(), Availability { mean: 0.65, spread: 0.3 });
        }
        generators.push(Generator {
            id,
            bus: bus_id(b),
            max_output_nominal: cap,
            renewable_flag: renewable,
        });
    }
    let reference = gen_buses[0];
    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: bus_id(i),
            reference_flag: i == reference,
            position: Some(pos[i]),
        })
        .collect();

    let lwidth = edges.len().to_string().len().max(3);
    let mut lines: Vec<Line> = edges
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| Line {
            id: format!("L{:0lwidth$}", k + 1),
            from_bus: bus_id(a),
            to_bus: bus_id(b),
            susceptance: -1.0 / (0.05 + 0.3 * dist(a, b)),
            rating: 0.0,
            switchable: false,
        })
        .collect();
    let mut net = NetworkModel {
        name: format!("synthetic-{n}bus-{}", cfg.seed),
        base_mva: 100.0,
        buses,
        lines: lines.clone(),
        generators,
    };

    // ratings from a proportional-dispatch base case
    let total_cap: f64 = net.generators.iter().map(|g| g.max_output_nominal).sum();
    let mut inj: Vec<f64> = loads.iter().map(|l| -l).collect();
    let idx: HashMap<String, usize> = net.buses.iter().enumerate().map(|(i, b)| (b.id.clone(), i)).collect();
    for g in &net.generators {
        inj[idx[&g.bus]] += g.max_output_nominal * total_load / total_cap;
    }
    let flows = dc_flows(&net, &inj).ok_or_else(|| Error::Network("singular base-case flow".into()))?;
    for (l, f) in lines.iter_mut().zip(&flows) {
        l.rating = (1.4 * f.abs()).max(0.5);
    }

    // spatially correlated base risk from a few hotspots
    let spots: Vec<([f64; 2], f64, f64)> = (0..cfg.hotspots)
        .map(|_| {
            (
                [rng.random::<f64>(), rng.random::<f64>()],
                rng.random_range(0.06..0.16),
                rng.random_range(150.0..230.0),
            )
        })
        .collect();
    let max_risk = 247.0;
    let mut base_risk: Vec<(usize, f64)> = edges
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let mid = [(pos[a][0] + pos[b][0]) / 2.0, (pos[a][1] + pos[b][1]) / 2.0];
            let mut r = 15.0 + rng.random_range(0.0..20.0);
            for (c, rad, amp) in &spots {
                let d2 = (mid[0] - c[0]).powi(2) + (mid[1] - c[1]).powi(2);
                r += amp * (-d2 / (2.0 * rad * rad)).exp();
            }
            (k, r.min(max_risk))
        })
        .collect();
    base_risk.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let n_switch = ((cfg.switchable_fraction * edges.len() as f64).round() as usize).min(edges.len());
    let mut risk_base = BTreeMap::new();
    for &(k, r) in base_risk.iter().take(n_switch) {
        lines[k].switchable = true;
        risk_base.insert(lines[k].id.clone(), r);
    }
    net.lines = lines;
    net.validate()?;

    let distribution = InstanceDistribution {
        risk_profile: RiskProfile {
            base: risk_base,
            day_volatility: 0.3,
            line_volatility: 0.25,
            max_risk,
        },
        load_profile: LoadProfile {
            mean: load_mean,
            std: load_std,
            day_volatility: 0.1,
        },
        renewable_profile: RenewableProfile { availability },
        budget_threshold: cfg.budget_threshold,
        seed: cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
    };
    Ok((net, distribution))
}
