//! CSV serialization of metric reports, ROC sweeps and training history.

use anyhow::{bail, Context, Result};
use irstd_core::metrics::{MetricsReport, RocPoint};
use irstd_core::train::EpochRecord;

/// `metric,value` rows covering the scalar fields of a report.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("metric,value\n");
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push(',');
        out.push_str(&v);
        out.push('\n');
    };
    push("iou", format!("{:?}", report.iou));
    push("niou", format!("{:?}", report.niou));
    push("pd", format!("{:?}", report.pd));
    push("fa", format!("{:?}", report.fa));
    push("auc", format!("{:?}", report.auc));
    push("tp", report.counts.tp.to_string());
    push("fp", report.counts.fp.to_string());
    push("fn", report.counts.fn_.to_string());
    push("tn", report.counts.tn.to_string());
    push("detected", report.detected.to_string());
    push("total_targets", report.total_targets.to_string());
    out
}

/// Parse the scalar block back; ROC points live in their own file.
pub fn parse_metrics_csv(text: &str) -> Result<MetricsReport> {
    let mut report = MetricsReport {
        iou: f64::NAN,
        niou: f64::NAN,
        pd: f64::NAN,
        fa: f64::NAN,
        counts: Default::default(),
        detected: 0,
        total_targets: 0,
        roc: Vec::new(),
        auc: f64::NAN,
    };
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "metric,value" {
                bail!("metrics csv: bad header {line:?}");
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(',')
            .with_context(|| format!("metrics csv: bad row {line:?}"))?;
        match key {
            "iou" => report.iou = value.parse()?,
            "niou" => report.niou = value.parse()?,
            "pd" => report.pd = value.parse()?,
            "fa" => report.fa = value.parse()?,
            "auc" => report.auc = value.parse()?,
            "tp" => report.counts.tp = value.parse()?,
            "fp" => report.counts.fp = value.parse()?,
            "fn" => report.counts.fn_ = value.parse()?,
            "tn" => report.counts.tn = value.parse()?,
            "detected" => report.detected = value.parse()?,
            "total_targets" => report.total_targets = value.parse()?,
            other => bail!("metrics csv: unknown metric {other:?}"),
        }
    }
    Ok(report)
}

/// `tau,fa,pd` rows, fa in 1e-6 units.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("tau,fa,pd\n");
    for p in points {
        out.push_str(&format!("{:?},{:?},{:?}\n", p.tau, p.fa, p.pd));
    }
    out
}

pub fn parse_roc_csv(text: &str) -> Result<Vec<RocPoint>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "tau,fa,pd" {
                bail!("roc csv: bad header {line:?}");
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let mut next = || cols.next().context("roc csv: missing column");
        points.push(RocPoint {
            tau: next()?.parse()?,
            fa: next()?.parse()?,
            pd: next()?.parse()?,
        });
    }
    Ok(points)
}

pub const HISTORY_HEADER: &str =
    "epoch,lr,seg_softiou,seg_l1,rec_mse,total,val_iou,val_niou,val_pd,val_fa";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.epoch,
            r.lr,
            r.seg_softiou,
            r.seg_l1,
            r.rec_mse,
            r.total,
            r.val_iou,
            r.val_niou,
            r.val_pd,
            r.val_fa
        ));
    }
    out
}

pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != HISTORY_HEADER {
                bail!("history csv: bad header {line:?}");
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            bail!("history csv: expected 10 columns, got {}", cols.len());
        }
        records.push(EpochRecord {
            epoch: cols[0].parse()?,
            lr: cols[1].parse()?,
            seg_softiou: cols[2].parse()?,
            seg_l1: cols[3].parse()?,
            rec_mse: cols[4].parse()?,
            total: cols[5].parse()?,
            val_iou: cols[6].parse()?,
            val_niou: cols[7].parse()?,
            val_pd: cols[8].parse()?,
            val_fa: cols[9].parse()?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip_is_lossless() {
        let report = MetricsReport {
            iou: 0.725,
            niou: 1.0 / 3.0,
            pd: 0.96,
            fa: 3.3612345678901,
            counts: irstd_core::metrics::PixelCounts {
                tp: 12,
                fp: 3,
                fn_: 4,
                tn: 4077,
            },
            detected: 9,
            total_targets: 10,
            roc: vec![],
            auc: 0.987654321,
        };
        let back = parse_metrics_csv(&metrics_csv(&report)).unwrap();
        assert_eq!(back.iou.to_bits(), report.iou.to_bits());
        assert_eq!(back.niou.to_bits(), report.niou.to_bits());
        assert_eq!(back.fa.to_bits(), report.fa.to_bits());
        assert_eq!(back.auc.to_bits(), report.auc.to_bits());
        assert_eq!(back.counts, report.counts);
        assert_eq!(back.detected, 9);
    }

    #[test]
    fn roc_round_trip_is_lossless() {
        let points = vec![
            RocPoint {
                tau: 1.0,
                fa: 0.0,
                pd: 0.0,
            },
            RocPoint {
                tau: 0.5,
                fa: 76.293945,
                pd: 2.0 / 3.0,
            },
        ];
        let back = parse_roc_csv(&roc_csv(&points)).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in points.iter().zip(&back) {
            assert_eq!(a.tau.to_bits(), b.tau.to_bits());
            assert_eq!(a.fa.to_bits(), b.fa.to_bits());
            assert_eq!(a.pd.to_bits(), b.pd.to_bits());
        }
    }

    #[test]
    fn history_round_trip_is_lossless() {
        let records = vec![EpochRecord {
            epoch: 3,
            lr: 9.5e-5,
            seg_softiou: 0.123456789012345,
            seg_l1: 0.01,
            rec_mse: 0.002,
            total: 0.1354,
            val_iou: 0.25,
            val_niou: 0.24,
            val_pd: 1.0,
            val_fa: 12.5,
        }];
        let back = parse_history_csv(&history_csv(&records)).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], records[0]);
    }
}
