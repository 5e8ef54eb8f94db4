//! Benchmark metrics, dataset splits and report assembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{NetworkModel, OpsInstance};
use crate::ops::{threshold_load_shed, OpsConfig};

pub use crate::policy::recall_at_best;

/// Normalized distance of `v` from the best known `v_star`; 1 when nothing was found.
pub fn primal_gap(v: Option<f64>, v_star: f64) -> f64 {
    let Some(v) = v else { return 1.0 };
    if v.abs() == 0.0 && v_star.abs() == 0.0 {
        return 0.0;
    }
    if v * v_star < 0.0 {
        return 1.0;
    }
    ((v - v_star).abs() / v.abs().max(v_star.abs())).clamp(0.0, 1.0)
}

/// Integral over `[0, horizon]` of the primal gap of the best incumbent so far.
/// `timeline` lists `(time, objective)` improvements in time order.
pub fn primal_integral(timeline: &[(f64, f64)], v_star: f64, horizon: f64) -> f64 {
    let mut total = 0.0;
    let mut t_prev = 0.0;
    let mut gap = 1.0;
    let mut best = f64::INFINITY;
    for &(t, obj) in timeline {
        let t = t.clamp(0.0, horizon);
        total += gap * (t - t_prev);
        t_prev = t;
        if obj < best {
            best = obj;
            gap = primal_gap(Some(best), v_star);
        }
    }
    total + gap * (horizon - t_prev)
}

/// Primal gap of the best incumbent found by time `t`.
pub fn gap_at(timeline: &[(f64, f64)], v_star: f64, t: f64) -> f64 {
    let best = timeline
        .iter()
        .filter(|e| e.0 <= t)
        .map(|e| e.1)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
    primal_gap(best, v_star)
}

/// `table[m][i]` is the integral of method `m` on instance `i`.
/// Every method tied for the lowest value on an instance earns a win.
pub fn count_wins(table: &[Vec<f64>]) -> Vec<usize> {
    let mut wins = vec![0; table.len()];
    let instances = table.first().map_or(0, Vec::len);
    for i in 0..instances {
        let lo = table.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
        for (m, r) in table.iter().enumerate() {
            if r[i] == lo {
                wins[m] += 1;
            }
        }
    }
    wins
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

pub const HARD_SHED_MWH: f64 = 100.0;

/// Load shed of the threshold topology in MWh (one-hour period) and its class.
pub fn classify_difficulty(inst: &OpsInstance, net: &NetworkModel, cfg: &OpsConfig, threshold: f64) -> Result<(Difficulty, f64)> {
    let shed = threshold_load_shed(inst, net, cfg, threshold)? * net.base_mva;
    let class = if shed >= HARD_SHED_MWH {
        Difficulty::Hard
    } else {
        Difficulty::Easy
    };
    Ok((class, shed))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle into `floor(0.8 n)` / `floor(0.1 n)` / remainder.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<Split> {
    if ids.len() < 10 {
        return Err(Error::InvalidParameter(format!("need at least 10 instances to split, got {}", ids.len())));
    }
    let mut order = ids.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let (a, b) = (n * 8 / 10, n / 10);
    let test = order.split_off(a + b);
    let validation = order.split_off(a);
    Ok(Split {
        train: order,
        validation,
        test,
    })
}

/// Lowest score wins; exact ties go to the lexicographically smaller point.
pub fn grid_search<F>(points: &[(f64, f64)], mut score: F) -> Result<((f64, f64), f64)>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    sorted.dedup();
    let mut best: Option<((f64, f64), f64)> = None;
    for (phi, phi_prime) in sorted {
        let s = score(phi, phi_prime)?;
        log::info!("grid point ({phi}, {phi_prime}): {s}");
        if best.is_none_or(|b| s < b.1) {
            best = Some(((phi, phi_prime), s));
        }
    }
    best.ok_or_else(|| Error::Empty("grid".into()))
}

/// One method's outcome on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub instance: String,
    pub timeline: Vec<(f64, f64)>,
    pub best: Option<f64>,
    /// `(line id, energized)` for the best solution found.
    pub switches: Vec<(String, bool)>,
    /// Method parameters as `key=value` pairs joined by `;`.
    #[serde(default)]
    pub params: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub instance: String,
    pub ov: Option<f64>,
    pub pg: f64,
    pub pi: f64,
    pub feasible: bool,
    pub params: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub mean_ov: Option<f64>,
    pub mean_pg: f64,
    pub mean_pi: f64,
    pub wins: usize,
    pub feasible: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub horizon: f64,
    pub methods: Vec<String>,
    pub instances: Vec<String>,
    pub v_star: BTreeMap<String, f64>,
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
    /// `(method, time, mean gap)` on an evenly spaced grid.
    pub curves: Vec<(String, f64, f64)>,
    pub runs: Vec<RunRecord>,
}

impl BenchmarkReport {
    pub fn summary_for(&self, method: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.method == method)
    }
}

const CURVE_POINTS: usize = 100;

/// Scores every run against a shared per-instance best known objective, the
/// minimum over all runs and `reference`.
pub fn build_report(mut runs: Vec<RunRecord>, reference: &BTreeMap<String, f64>, horizon: f64) -> Result<BenchmarkReport> {
    if runs.is_empty() {
        return Err(Error::Empty("benchmark".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let mut methods: Vec<String> = Vec::new();
    for r in &runs {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut instances: Vec<String> = runs.iter().map(|r| r.instance.clone()).collect();
    instances.sort();
    instances.dedup();
    let rank = |m: &str| methods.iter().position(|x| x == m).unwrap_or(usize::MAX);
    runs.sort_by(|a, b| rank(&a.method).cmp(&rank(&b.method)).then(a.instance.cmp(&b.instance)));
    for m in &methods {
        let count = runs.iter().filter(|r| &r.method == m).count();
        if count != instances.len() {
            return Err(Error::InvalidParameter(format!("method {m} covers {count} of {} instances", instances.len())));
        }
    }

    let mut v_star = BTreeMap::new();
    for inst in &instances {
        let from_runs = runs.iter().filter(|r| &r.instance == inst).filter_map(|r| r.best);
        let best = from_runs
            .chain(reference.get(inst).copied())
            .fold(f64::INFINITY, f64::min);
        if best.is_finite() {
            v_star.insert(inst.clone(), best);
        }
    }

    let rows: Vec<MetricsRow> = runs
        .iter()
        .map(|r| match v_star.get(&r.instance) {
            Some(&vs) => MetricsRow {
                method: r.method.clone(),
                instance: r.instance.clone(),
                ov: r.best,
                pg: primal_gap(r.best, vs),
                pi: primal_integral(&r.timeline, vs, horizon),
                feasible: r.best.is_some(),
                params: r.params.clone(),
            },
            None => MetricsRow {
                method: r.method.clone(),
                instance: r.instance.clone(),
                ov: None,
                pg: 1.0,
                pi: horizon,
                feasible: false,
                params: r.params.clone(),
            },
        })
        .collect();

    let table: Vec<Vec<f64>> = methods
        .iter()
        .map(|m| rows.iter().filter(|r| &r.method == m).map(|r| r.pi).collect())
        .collect();
    let wins = count_wins(&table);
    let n = instances.len() as f64;
    let summary = methods
        .iter()
        .zip(&wins)
        .map(|(m, &w)| {
            let mine: Vec<&MetricsRow> = rows.iter().filter(|r| &r.method == m).collect();
            let ovs: Vec<f64> = mine.iter().filter_map(|r| r.ov).collect();
            SummaryRow {
                method: m.clone(),
                mean_ov: (!ovs.is_empty()).then(|| ovs.iter().sum::<f64>() / ovs.len() as f64),
                mean_pg: mine.iter().map(|r| r.pg).sum::<f64>() / n,
                mean_pi: mine.iter().map(|r| r.pi).sum::<f64>() / n,
                wins: w,
                feasible: ovs.len(),
                instances: mine.len(),
            }
        })
        .collect();

    let mut curves = Vec::new();
    for m in &methods {
        for k in 0..=CURVE_POINTS {
            let t = horizon * k as f64 / CURVE_POINTS as f64;
            let mean = runs
                .iter()
                .filter(|r| &r.method == m)
                .map(|r| v_star.get(&r.instance).map_or(1.0, |&vs| gap_at(&r.timeline, vs, t)))
                .sum::<f64>()
                / n;
            curves.push((m.clone(), t, mean));
        }
    }

    Ok(BenchmarkReport {
        horizon,
        methods,
        instances,
        v_star,
        rows,
        summary,
        curves,
        runs,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes `results.csv`, `summary.csv`, `pg_vs_time.csv`, `pi_scatter.csv`
/// and `decisions.csv` into `dir`.
pub fn emit_report(report: &BenchmarkReport, dir: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::Empty("benchmark report".into()));
    }
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    w.write_record(["method", "instance", "ov", "pg", "pi", "feasible", "params"])?;
    for r in &report.rows {
        w.write_record([
            r.method.clone(),
            r.instance.clone(),
            fmt_opt(r.ov),
            r.pg.to_string(),
            r.pi.to_string(),
            r.feasible.to_string(),
            r.params.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["method", "ov", "pg", "pi", "wins", "feasible", "instances"])?;
    for s in &report.summary {
        w.write_record([
            s.method.clone(),
            fmt_opt(s.mean_ov),
            s.mean_pg.to_string(),
            s.mean_pi.to_string(),
            s.wins.to_string(),
            s.feasible.to_string(),
            s.instances.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("pg_vs_time.csv"))?;
    w.write_record(["method", "time", "pg"])?;
    for (m, t, g) in &report.curves {
        w.write_record([m.clone(), t.to_string(), g.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("pi_scatter.csv"))?;
    let mut header = vec!["instance".to_string()];
    header.extend(report.methods.iter().cloned());
    w.write_record(&header)?;
    for inst in &report.instances {
        let mut rec = vec![inst.clone()];
        for m in &report.methods {
            let pi = report
                .rows
                .iter()
                .find(|r| &r.method == m && &r.instance == inst)
                .map(|r| r.pi.to_string())
                .unwrap_or_default();
            rec.push(pi);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("decisions.csv"))?;
    w.write_record(["method", "instance", "line", "energized"])?;
    for r in &report.runs {
        for (line, on) in &r.switches {
            let v = if *on { "1" } else { "0" };
            w.write_record([r.method.as_str(), r.instance.as_str(), line.as_str(), v])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_examples() {
        assert_eq!(primal_gap(Some(10.0), 10.0), 0.0);
        assert_eq!(primal_gap(Some(0.0), 0.0), 0.0);
        assert_eq!(primal_gap(Some(-1.0), 2.0), 1.0);
        assert_eq!(primal_gap(None, 2.0), 1.0);
        assert!((primal_gap(Some(12.0), 10.0) - 2.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn integral_examples() {
        assert_eq!(primal_integral(&[], 5.0, 30.0), 30.0);
        assert_eq!(primal_integral(&[(0.0, 5.0)], 5.0, 30.0), 0.0);
        // gap 0.2 from t = 10: objective 12.5 against 10
        assert!((primal_integral(&[(10.0, 12.5)], 10.0, 30.0) - 14.0).abs() < 1e-12);
        let single = primal_integral(&[(0.0, 12.0)], 10.0, 30.0);
        assert!((single - 30.0 * primal_gap(Some(12.0), 10.0)).abs() < 1e-12);
    }

    #[test]
    fn win_examples() {
        assert_eq!(count_wins(&[vec![5.0, 7.0], vec![3.0, 9.0]]), vec![1, 1]);
        assert_eq!(count_wins(&[vec![1.0, 2.0, 3.0]]), vec![3]);
        assert_eq!(count_wins(&[vec![4.0], vec![4.0]]), vec![1, 1]);
    }

    #[test]
    fn split_examples() {
        let ids: Vec<String> = (0..540).map(|i| format!("d{i:04}")).collect();
        let s = split_dataset(&ids, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (432, 54, 54));
        let small: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        let s = split_dataset(&small, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert_eq!(split_dataset(&small, 3).unwrap(), s);
        assert!(split_dataset(&small[..9], 3).is_err());
    }

    #[test]
    fn grid_examples() {
        let (p, _) = grid_search(&[(0.7, 0.1)], |_, _| Ok(3.0)).unwrap();
        assert_eq!(p, (0.7, 0.1));
        let (p, _) = grid_search(&[(0.8, 0.05), (0.5, 0.3), (0.6, 0.1)], |a, _| Ok(if a > 0.55 { 1.0 } else { 2.0 })).unwrap();
        assert_eq!(p, (0.6, 0.1));
    }

    fn run(method: &str, inst: &str, timeline: Vec<(f64, f64)>) -> RunRecord {
        RunRecord {
            method: method.into(),
            instance: inst.into(),
            best: timeline.iter().map(|e| e.1).reduce(f64::min),
            timeline,
            switches: vec![("L1".into(), true), ("L2".into(), false)],
            params: String::new(),
        }
    }

    #[test]
    fn report_counts_and_files() {
        let runs = vec![
            run("a", "i1", vec![(0.0, 2.0)]),
            run("b", "i1", vec![(5.0, 3.0)]),
            run("a", "i2", vec![]),
            run("b", "i2", vec![(1.0, 1.0)]),
        ];
        let rep = build_report(runs, &BTreeMap::new(), 10.0).unwrap();
        assert_eq!(rep.summary_for("a").unwrap().mean_pg, 0.5);
        assert_eq!(rep.summary_for("a").unwrap().wins + rep.summary_for("b").unwrap().wins, 2);
        let rows_i2: Vec<_> = rep.rows.iter().filter(|r| r.instance == "i2").collect();
        assert_eq!(rows_i2[0].pi, 10.0);
        let dir = tempfile::tempdir().unwrap();
        emit_report(&rep, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(text.starts_with("method,instance,ov,pg,pi,feasible,params\n"));
        assert_eq!(text.lines().count(), 5);
        assert!(build_report(Vec::new(), &BTreeMap::new(), 10.0).is_err());
    }
}
