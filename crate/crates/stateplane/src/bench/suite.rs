//! Full benchmark grid: benchmarks x systems x horizons x seeds.
//!
//! The grid is pure and its output is byte-deterministic: rows are emitted in
//! config order and every float is printed with a fixed width, so two runs of
//! the same config produce identical results.csv files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::baselines::{run_system, SystemKind, ALL_SYSTEMS};
use crate::bench::metrics::{compute_metrics, MetricsError, MetricsReport};
use crate::bench::scenario::{generate_scenario, BenchmarkCode, ALL_BENCHMARKS};
use crate::model::StatePlaneConfig;
use crate::service::AblationFlags;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub seeds: Vec<u64>,
    pub horizons: Vec<u32>,
    pub l_max: u64,
    pub benchmarks: Vec<String>,
    pub systems: Vec<String>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seeds: vec![1, 2, 3],
            horizons: vec![1, 2, 4, 8],
            l_max: 2048,
            benchmarks: ALL_BENCHMARKS.iter().map(|c| c.as_str().to_string()).collect(),
            systems: ALL_SYSTEMS.iter().map(|s| s.as_str().to_string()).collect(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown benchmark code: {0}")]
    UnknownBenchmark(String),
    #[error("unknown system: {0}")]
    UnknownSystem(String),
    #[error("unknown ablation component: {0}")]
    UnknownComponent(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<BenchConfig, SuiteError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    fn benchmark_codes(&self) -> Result<Vec<BenchmarkCode>, SuiteError> {
        self.benchmarks
            .iter()
            .map(|s| BenchmarkCode::parse(s).ok_or_else(|| SuiteError::UnknownBenchmark(s.clone())))
            .collect()
    }

    fn system_kinds(&self) -> Result<Vec<SystemKind>, SuiteError> {
        self.systems
            .iter()
            .map(|s| SystemKind::parse(s).ok_or_else(|| SuiteError::UnknownSystem(s.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub benchmark: String,
    pub system: String,
    pub horizon: u32,
    pub seed: u64,
    pub metrics: MetricsReport,
}

fn run_cell(
    code: BenchmarkCode,
    kind: SystemKind,
    label: &str,
    seed: u64,
    horizon: u32,
    l_max: u64,
    ablation: AblationFlags,
) -> Result<ResultRow, SuiteError> {
    let scenario = generate_scenario(code, seed, horizon, l_max);
    let cfg = StatePlaneConfig { l_max, ..StatePlaneConfig::default() };
    let transcript = run_system(kind, &scenario, &cfg, ablation);
    let metrics = compute_metrics(&transcript, &scenario.ground_truth)?;
    Ok(ResultRow {
        benchmark: code.as_str().to_string(),
        system: label.to_string(),
        horizon,
        seed,
        metrics,
    })
}

/// Runs the full configured grid.
pub fn run_suite(config: &BenchConfig) -> Result<Vec<ResultRow>, SuiteError> {
    let codes = config.benchmark_codes()?;
    let systems = config.system_kinds()?;
    let mut rows = Vec::new();
    for &code in &codes {
        for &kind in &systems {
            for &horizon in &config.horizons {
                for &seed in &config.seeds {
                    rows.push(run_cell(
                        code,
                        kind,
                        kind.as_str(),
                        seed,
                        horizon,
                        config.l_max,
                        AblationFlags::default(),
                    )?);
                }
            }
        }
    }
    Ok(rows)
}

/// Reruns the full service grid with one component disabled, labelling the
/// rows so they diff cleanly against an unablated run.
pub fn run_ablation(config: &BenchConfig, component: &str) -> Result<Vec<ResultRow>, SuiteError> {
    let disable = AblationFlags::parse_component(component)
        .ok_or_else(|| SuiteError::UnknownComponent(component.to_string()))?;
    let mut ablation = AblationFlags::default();
    disable(&mut ablation);
    let label = format!("stateplane-no-{component}");
    let codes = config.benchmark_codes()?;
    let mut rows = Vec::new();
    for &code in &codes {
        for &horizon in &config.horizons {
            for &seed in &config.seeds {
                rows.push(run_cell(
                    code,
                    SystemKind::Stateplane,
                    &label,
                    seed,
                    horizon,
                    config.l_max,
                    ablation,
                )?);
            }
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "benchmark,system,horizon,seed,ccr,contradiction_rate,eha,pc,\
rationale_stability,pvr,srl,cross_case_contamination,tpcd,tokens_per_turn_mean,\
tokens_per_turn_max,state_growth_rate,poison_stored,poison_promotions,cross_tenant_reads";

pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.6},{},{},{}\n",
            r.benchmark,
            r.system,
            r.horizon,
            r.seed,
            m.ccr,
            m.contradiction_rate,
            m.eha,
            m.pc,
            m.rationale_stability,
            m.pvr,
            m.srl,
            m.cross_case_contamination,
            m.tpcd,
            m.tokens_per_turn_mean,
            m.tokens_per_turn_max,
            m.state_growth_rate,
            m.poison_stored,
            m.poison_promotions,
            m.cross_tenant_reads,
        ));
    }
    out
}

pub fn render_summary(rows: &[ResultRow]) -> String {
    let mut out = String::from("# Benchmark summary\n\n");
    out.push_str("Mean over all horizons and seeds per (benchmark, system).\n\n");
    out.push_str("| benchmark | system | ccr | pvr | srl | eha | contradiction | tpcd | tokens/turn |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    let mut keys: Vec<(String, String)> = rows
        .iter()
        .map(|r| (r.benchmark.clone(), r.system.clone()))
        .collect();
    keys.dedup();
    for (bench, system) in keys {
        let group: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.benchmark == bench && r.system == system)
            .collect();
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| {
            group.iter().map(|r| f(&r.metrics)).sum::<f64>() / n
        };
        out.push_str(&format!(
            "| {} | {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.1} | {:.1} |\n",
            bench,
            system,
            mean(&|m| m.ccr),
            mean(&|m| m.pvr),
            mean(&|m| m.srl),
            mean(&|m| m.eha),
            mean(&|m| m.contradiction_rate),
            mean(&|m| m.tpcd),
            mean(&|m| m.tokens_per_turn_mean),
        ));
    }
    out
}

/// Writes results.csv and summary.md under `out_dir`.
pub fn write_results(rows: &[ResultRow], out_dir: &Path) -> Result<(), SuiteError> {
    fs::create_dir_all(out_dir)?;
    let mut csv = fs::File::create(out_dir.join("results.csv"))?;
    csv.write_all(render_csv(rows).as_bytes())?;
    let mut md = fs::File::create(out_dir.join("summary.md"))?;
    md.write_all(render_summary(rows).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> BenchConfig {
        BenchConfig {
            seeds: vec![1],
            horizons: vec![1, 2],
            systems: vec!["stateless".into(), "sliding_window".into(), "stateplane".into()],
            ..BenchConfig::default()
        }
    }

    #[test]
    fn suite_output_is_byte_identical_across_runs() {
        let cfg = small_config();
        let a = render_csv(&run_suite(&cfg).unwrap());
        let b = render_csv(&run_suite(&cfg).unwrap());
        assert_eq!(a, b);
        assert!(a.lines().count() > 1);
    }

    #[test]
    fn unknown_names_are_rejected() {
        let mut cfg = small_config();
        cfg.systems.push("magic".into());
        assert!(matches!(run_suite(&cfg), Err(SuiteError::UnknownSystem(_))));
        assert!(matches!(
            run_ablation(&small_config(), "gravity"),
            Err(SuiteError::UnknownComponent(_))
        ));
    }

    #[test]
    fn gate_ablation_degrades_poison_resistance() {
        let cfg = BenchConfig {
            seeds: vec![1],
            horizons: vec![2],
            benchmarks: vec!["MP-RI".into()],
            systems: vec!["stateplane".into()],
            ..BenchConfig::default()
        };
        let full = run_suite(&cfg).unwrap();
        let ablated = run_ablation(&cfg, "write_gate").unwrap();
        assert_eq!(full[0].metrics.pvr, 0.0);
        assert!(ablated[0].metrics.pvr > full[0].metrics.pvr);
        assert!(ablated[0].metrics.poison_stored > 0);
    }

    #[test]
    fn results_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BenchConfig {
            seeds: vec![1],
            horizons: vec![1],
            benchmarks: vec!["RCDS".into()],
            systems: vec!["stateless".into()],
            ..BenchConfig::default()
        };
        let rows = run_suite(&cfg).unwrap();
        write_results(&rows, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert!(csv.starts_with("benchmark,system,horizon,seed,"));
        assert!(dir.path().join("summary.md").exists());
    }
}
