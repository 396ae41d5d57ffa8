//! Run records, sweep aggregation and the CSV files written next to them.

use std::fmt::Write as _;

use crate::error::{config_err, Result};
use crate::objective::TrainLog;
use crate::pattern::{CodingPattern, PatternOrigin};
use crate::scenes::ConfusionMatrix;
use crate::surrogate::FidelityStats;

pub const CURVE_HEADER: &str = "stage,outer_iter,epoch,train_loss,test_loss,recon_term,kl_term,metric,M,strategy,seed";
pub const SWEEP_HEADER: &str = "strategy,M,mean,std,n";
pub const SUMMARY_HEADER: &str = "strategy,M,seed,metric,test_loss";
pub const CONFUSION_HEADER: &str = "strategy,M,seed,true_class,predicted_class,count";

/// Outcome of one (strategy, M, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub strategy: PatternOrigin,
    pub m: usize,
    pub seed: u64,
    /// Test SSIM (imaging) or accuracy (recognition) of the final decoder and code.
    pub metric: f64,
    pub test_loss: f64,
    pub confusion: Option<ConfusionMatrix>,
    pub seconds: f64,
    pub config_hash: String,
    /// Name of the loss-curve CSV inside the output directory.
    pub curve_file: String,
    pub pattern: CodingPattern,
    pub log: TrainLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config_text: String,
    pub config_hash: String,
    pub surrogate_fidelity: Option<FidelityStats>,
    pub records: Vec<ExperimentRecord>,
}

impl ExperimentReport {
    pub fn find(&self, strategy: PatternOrigin, m: usize, seed: u64) -> Option<&ExperimentRecord> {
        self.records
            .iter()
            .find(|r| r.strategy == strategy && r.m == m && r.seed == seed)
    }

    /// Metrics of one strategy at one M, in record order.
    pub fn metrics(&self, strategy: PatternOrigin, m: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.strategy == strategy && r.m == m)
            .map(|r| r.metric)
            .collect()
    }
}

/// One aggregated point of a sweep curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub strategy: PatternOrigin,
    pub m: usize,
    pub mean: f64,
    /// Sample standard deviation (zero for a single seed).
    pub std: f64,
    pub n: usize,
}

/// Mean and sample std of the metric per (strategy, M), in first-seen order.
pub fn aggregate(report: &ExperimentReport) -> Result<Vec<SweepRow>> {
    if report.records.is_empty() {
        return Err(config_err("experiment.m_list", "nothing to aggregate"));
    }
    let mut keys: Vec<(PatternOrigin, usize)> = Vec::new();
    for r in &report.records {
        if !keys.contains(&(r.strategy, r.m)) {
            keys.push((r.strategy, r.m));
        }
    }
    Ok(keys
        .into_iter()
        .map(|(strategy, m)| {
            let v = report.metrics(strategy, m);
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SweepRow {
                strategy,
                m,
                mean,
                std,
                n,
            }
        })
        .collect())
}

pub fn curve_csv(record: &ExperimentRecord) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in &record.log.records {
        writeln!(
            out,
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{},{},{}",
            r.stage,
            r.outer_iter,
            r.epoch,
            r.train_loss,
            r.test_loss,
            r.recon_term,
            r.kl_term,
            r.metric,
            record.m,
            record.strategy,
            record.seed
        )
        .expect("writing to a String");
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{:?},{:?},{}", r.strategy, r.m, r.mean, r.std, r.n).expect("writing to a String");
    }
    out
}

pub fn summary_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in &report.records {
        writeln!(
            out,
            "{},{},{},{:?},{:?}",
            r.strategy, r.m, r.seed, r.metric, r.test_loss
        )
        .expect("writing to a String");
    }
    out
}

pub fn confusion_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(CONFUSION_HEADER);
    out.push('\n');
    for r in &report.records {
        if let Some(c) = &r.confusion {
            for t in 0..c.classes() {
                for p in 0..c.classes() {
                    writeln!(out, "{},{},{},{},{},{}", r.strategy, r.m, r.seed, t, p, c.get(t, p))
                        .expect("writing to a String");
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding::random_pattern;

    fn record(strategy: PatternOrigin, m: usize, seed: u64, metric: f64) -> ExperimentRecord {
        ExperimentRecord {
            strategy,
            m,
            seed,
            metric,
            test_loss: 1.0,
            confusion: None,
            seconds: 0.0,
            config_hash: "h".into(),
            curve_file: String::new(),
            pattern: random_pattern(m, 4, seed).unwrap(),
            log: TrainLog::default(),
        }
    }

    fn report(records: Vec<ExperimentRecord>) -> ExperimentReport {
        ExperimentReport {
            config_text: String::new(),
            config_hash: "h".into(),
            surrogate_fidelity: None,
            records,
        }
    }

    #[test]
    fn identical_metrics_give_zero_std() {
        let rep = report((0..4).map(|s| record(PatternOrigin::Random, 3, s, 0.7)).collect());
        let rows = aggregate(&rep).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].std, 0.0);
        assert_eq!(rows[0].n, 4);
        assert!((rows[0].mean - 0.7).abs() < 1e-15);
    }

    #[test]
    fn aggregation_groups_by_strategy_and_m() {
        let rep = report(vec![
            record(PatternOrigin::Random, 3, 1, 0.5),
            record(PatternOrigin::Learned, 3, 1, 0.9),
            record(PatternOrigin::Random, 3, 2, 0.7),
            record(PatternOrigin::Learned, 3, 2, 0.8),
        ]);
        let rows = aggregate(&rep).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].strategy, rows[0].m), (PatternOrigin::Random, 3));
        assert!((rows[0].mean - 0.6).abs() < 1e-12);
        assert!((rows[0].std - 0.02f64.sqrt()).abs() < 1e-12);
        assert!(sweep_csv(&rows).starts_with("strategy,M,mean,std,n\nrandom,3,"));
    }

    #[test]
    fn empty_report_rejected() {
        assert!(aggregate(&report(Vec::new())).is_err());
    }
}
