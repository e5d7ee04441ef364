use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::wilcoxon::wilcoxon_signed_rank;
use crate::data::Patch;
use crate::diffcore::{ParamSet, Scalar};
use crate::error::{Error, Result};
use crate::segnet::SegNet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub subject: String,
    /// Percent.
    pub dice: f64,
    /// Millimetres.
    pub assd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureRecords {
    pub procedure: String,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub procedure: String,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub assd_mean: f64,
    pub assd_std: f64,
    /// Significance of the Dice difference against the baseline.
    pub stars: String,
    pub assd_stars: String,
}

#[derive(Serialize)]
struct LongRow<'a> {
    subject: &'a str,
    procedure: &'a str,
    dice: f64,
    assd: f64,
}

/// Mean and sample standard deviation (`n − 1`; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn stars_against(x: &[f64], y: &[f64]) -> Result<String> {
    match wilcoxon_signed_rank(x, y) {
        Ok(r) => Ok(r.stars),
        Err(Error::DegenerateInput(_)) => Ok(String::new()),
        Err(Error::Contract(_)) if x.len() < 2 => Ok(String::new()),
        Err(e) => Err(e),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Builds summary rows; every procedure must report the same subjects.
pub fn summarize(procedures: &[ProcedureRecords], baseline: &str) -> Result<Vec<SummaryRow>> {
    let base = procedures
        .iter()
        .find(|p| p.procedure == baseline)
        .ok_or_else(|| Error::Contract(format!("baseline procedure {baseline:?} missing")))?;
    let ids = |p: &ProcedureRecords| p.records.iter().map(|r| r.subject.clone()).collect::<BTreeSet<_>>();
    let base_ids = ids(base);
    if base_ids.len() != base.records.len() || base_ids.is_empty() {
        return Err(Error::Contract(format!(
            "procedure {baseline} has duplicate or no subjects"
        )));
    }
    let base_by_id: HashMap<&str, &MetricsRecord> =
        base.records.iter().map(|r| (r.subject.as_str(), r)).collect();
    let mut rows = Vec::new();
    for p in procedures {
        if ids(p) != base_ids || p.records.len() != base.records.len() {
            return Err(Error::Contract(format!(
                "procedure {} reports a different subject set than {baseline}",
                p.procedure
            )));
        }
        let dice: Vec<f64> = p.records.iter().map(|r| r.dice).collect();
        let assd: Vec<f64> = p.records.iter().map(|r| r.assd).collect();
        let (dice_mean, dice_std) = mean_std(&dice);
        let (assd_mean, assd_std) = mean_std(&assd);
        let (stars, assd_stars) = if p.procedure == baseline {
            (String::new(), String::new())
        } else {
            let bd: Vec<f64> = p.records.iter().map(|r| base_by_id[r.subject.as_str()].dice).collect();
            let ba: Vec<f64> = p.records.iter().map(|r| base_by_id[r.subject.as_str()].assd).collect();
            (stars_against(&dice, &bd)?, stars_against(&assd, &ba)?)
        };
        rows.push(SummaryRow {
            procedure: p.procedure.clone(),
            dice_mean,
            dice_std,
            assd_mean,
            assd_std,
            stars,
            assd_stars,
        });
    }
    Ok(rows)
}

/// Writes the long-format per-subject CSV and the per-procedure summary CSV.
pub fn emit_report(
    procedures: &[ProcedureRecords],
    baseline: &str,
    long_path: &Path,
    summary_path: &Path,
) -> Result<Vec<SummaryRow>> {
    let rows = summarize(procedures, baseline)?;
    let mut long = csv::Writer::from_path(long_path).map_err(|e| csv_err(long_path, e))?;
    for p in procedures {
        for r in &p.records {
            long.serialize(LongRow {
                subject: &r.subject,
                procedure: &p.procedure,
                dice: r.dice,
                assd: r.assd,
            })
            .map_err(|e| csv_err(long_path, e))?;
        }
    }
    long.flush().map_err(|e| Error::io(long_path, e))?;
    let mut summary = csv::Writer::from_path(summary_path).map_err(|e| csv_err(summary_path, e))?;
    for r in &rows {
        summary.serialize(r).map_err(|e| csv_err(summary_path, e))?;
    }
    summary.flush().map_err(|e| Error::io(summary_path, e))?;
    Ok(rows)
}

/// One CSV row per patch: subject, domain, then the flattened bottleneck activation.
pub fn export_features<T: Scalar>(
    net: &SegNet,
    params: &ParamSet<T>,
    patches: &[(String, Patch)],
    path: &Path,
) -> Result<usize> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let width = net.graph().shape(net.bottleneck_node()).iter().product::<usize>();
    let mut header = vec!["subject".to_string(), "domain".to_string()];
    header.extend((0..width).map(|i| format!("f{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (domain, patch) in patches {
        let feats = net.extract_bottleneck_features(params, &patch.image_tensor())?;
        let mut row = vec![patch.subject.clone(), domain.clone()];
        row.extend(feats.iter().map(|v| v.re().to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(patches.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(proc_: &str, vals: &[(&str, f64, f64)]) -> ProcedureRecords {
        ProcedureRecords {
            procedure: proc_.into(),
            records: vals
                .iter()
                .map(|&(s, d, a)| MetricsRecord {
                    subject: s.into(),
                    dice: d,
                    assd: a,
                })
                .collect(),
        }
    }

    #[test]
    fn report_cardinality_and_baseline_stars() {
        let dir = tempfile::tempdir().unwrap();
        let procs = [
            recs("baseline", &[("a", 80.0, 2.0), ("b", 70.0, 3.0), ("c", 60.0, 4.0)]),
            recs("mldg", &[("c", 65.0, 3.5), ("a", 85.0, 1.5), ("b", 72.0, 2.5)]),
        ];
        let long = dir.path().join("long.csv");
        let summary = dir.path().join("summary.csv");
        let rows = emit_report(&procs, "baseline", &long, &summary).unwrap();
        let text = std::fs::read_to_string(&long).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert_eq!(text.lines().next().unwrap(), "subject,procedure,dice,assd");
        assert_eq!(rows[0].stars, "");
        let (m, s) = mean_std(&[65.0, 85.0, 72.0]);
        assert_eq!(rows[1].dice_mean, m);
        assert_eq!(rows[1].dice_std, s);
        let head = std::fs::read_to_string(&summary).unwrap();
        assert!(head.starts_with("procedure,dice_mean,dice_std,assd_mean,assd_std,stars,assd_stars"));
    }

    #[test]
    fn mismatched_subjects_are_a_contract_error() {
        let procs = [
            recs("baseline", &[("a", 80.0, 2.0), ("b", 70.0, 3.0)]),
            recs("mldg", &[("a", 85.0, 1.5), ("z", 72.0, 2.5)]),
        ];
        assert!(matches!(summarize(&procs, "baseline"), Err(Error::Contract(_))));
    }
}
