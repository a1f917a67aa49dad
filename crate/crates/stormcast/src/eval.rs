//! Rare-event verification: confusion counts, ratio metrics with explicit
//! undefined handling, negative-class re-weighting, and report emission.

use std::path::Path;

use crate::error::{Error, Result};

/// Outcome counts of thresholded predictions against binary truth.
/// Counts are reals so that re-weighted matrices stay representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionMatrix {
    pub true_pos: f64,
    pub false_pos: f64,
    pub false_neg: f64,
    pub true_neg: f64,
}

impl ConfusionMatrix {
    pub fn zero() -> ConfusionMatrix {
        ConfusionMatrix {
            true_pos: 0.0,
            false_pos: 0.0,
            false_neg: 0.0,
            true_neg: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }
}

/// Ratio metrics; a `None` means the denominator was zero and the metric
/// is undefined rather than silently zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub counts: ConfusionMatrix,
    pub threshold: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub accuracy: Option<f64>,
    /// False alarm ratio FP/(TP+FP), the standard verification definition.
    pub far: Option<f64>,
    /// TP/(TP+FP), reported alongside FAR (they are complements).
    pub precision: Option<f64>,
}

impl MetricReport {
    /// Renders a ratio metric, writing `undefined` for a zero denominator.
    pub fn fmt_opt(v: Option<f64>) -> String {
        match v {
            Some(v) => format!("{v:.6}"),
            None => "undefined".into(),
        }
    }
}

/// Threshold probabilities at `threshold` (predict positive when
/// p >= threshold) and count the four outcomes against binary truth.
pub fn confuse(probs: &[f64], truth: &[f64], threshold: f64) -> Result<ConfusionMatrix> {
    if probs.len() != truth.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, truth {}",
            probs.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::zero();
    for (&p, &y) in probs.iter().zip(truth) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Data(format!("probability {p} outside [0,1]")));
        }
        if y != 0.0 && y != 1.0 {
            return Err(Error::Data(format!("truth value {y} not in {{0,1}}")));
        }
        let pos = p >= threshold;
        match (pos, y == 1.0) {
            (true, true) => cm.true_pos += 1.0,
            (true, false) => cm.false_pos += 1.0,
            (false, true) => cm.false_neg += 1.0,
            (false, false) => cm.true_neg += 1.0,
        }
    }
    Ok(cm)
}

/// Compute all ratio metrics from a confusion matrix.
pub fn metrics(cm: &ConfusionMatrix, threshold: f64) -> Result<MetricReport> {
    if cm.total() <= 0.0 {
        return Err(Error::Data("empty confusion matrix has no metrics".into()));
    }
    let ratio = |num: f64, den: f64| if den > 0.0 { Some(num / den) } else { None };
    Ok(MetricReport {
        counts: *cm,
        threshold,
        tpr: ratio(cm.true_pos, cm.true_pos + cm.false_neg),
        tnr: ratio(cm.true_neg, cm.true_neg + cm.false_pos),
        accuracy: ratio(cm.true_pos + cm.true_neg, cm.total()),
        far: ratio(cm.false_pos, cm.true_pos + cm.false_pos),
        precision: ratio(cm.true_pos, cm.true_pos + cm.false_pos),
    })
}

/// Scale the negative-class counts (TN, FP) by `factor`, emulating
/// evaluation over the full negative population after subsampling.
/// TPR and TNR are exactly invariant; accuracy and FAR shift.
pub fn reweight_negatives(cm: &ConfusionMatrix, factor: f64) -> ConfusionMatrix {
    ConfusionMatrix {
        true_pos: cm.true_pos,
        false_neg: cm.false_neg,
        false_pos: factor * cm.false_pos,
        true_neg: factor * cm.true_neg,
    }
}

/// Micro-average: sum raw counts across folds, then compute ratios once.
pub fn aggregate(folds: &[ConfusionMatrix]) -> Result<ConfusionMatrix> {
    if folds.is_empty() {
        return Err(Error::Data("no fold results to aggregate".into()));
    }
    let mut total = ConfusionMatrix::zero();
    for cm in folds {
        total.add(cm);
    }
    Ok(total)
}

/// Write the per-fold and aggregate metrics as CSV, plus a plot-data TSV
/// of `(metric, variant, value)` rows for the aggregate.
pub fn emit_report(
    variant: &str,
    folds: &[(u8, ConfusionMatrix)],
    threshold: f64,
    csv_path: &Path,
    tsv_path: &Path,
) -> Result<MetricReport> {
    let counts: Vec<ConfusionMatrix> = folds.iter().map(|&(_, cm)| cm).collect();
    let total = aggregate(&counts)?;
    let report = metrics(&total, threshold)?;

    let mut wtr = csv::Writer::from_path(csv_path)?;
    wtr.write_record([
        "fold", "tp", "fp", "fn", "tn", "tpr", "tnr", "accuracy", "far", "precision",
    ])?;
    let mut write_row = |label: String, cm: &ConfusionMatrix| -> Result<()> {
        let m = metrics(cm, threshold)?;
        wtr.write_record([
            label,
            format!("{}", cm.true_pos),
            format!("{}", cm.false_pos),
            format!("{}", cm.false_neg),
            format!("{}", cm.true_neg),
            MetricReport::fmt_opt(m.tpr),
            MetricReport::fmt_opt(m.tnr),
            MetricReport::fmt_opt(m.accuracy),
            MetricReport::fmt_opt(m.far),
            MetricReport::fmt_opt(m.precision),
        ])?;
        Ok(())
    };
    for (id, cm) in folds {
        write_row(id.to_string(), cm)?;
    }
    write_row("all".into(), &total)?;
    drop(write_row);

    let mut tsv = String::new();
    for (name, value) in [
        ("tpr", report.tpr),
        ("tnr", report.tnr),
        ("accuracy", report.accuracy),
        ("far", report.far),
        ("precision", report.precision),
    ] {
        tsv.push_str(&format!(
            "{name}\t{variant}\t{}\n",
            MetricReport::fmt_opt(value)
        ));
    }
    std::fs::write(tsv_path, tsv)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cm(tp: f64, fp: f64, fn_: f64, tn: f64) -> ConfusionMatrix {
        ConfusionMatrix {
            true_pos: tp,
            false_pos: fp,
            false_neg: fn_,
            true_neg: tn,
        }
    }

    #[test]
    fn trivial_confusion_cases() {
        let n = 24;
        let ones = vec![1.0; n];
        let zeros = vec![0.0; n];
        let all_tp = confuse(&ones, &ones, 0.5).unwrap();
        assert_eq!(all_tp, cm(n as f64, 0.0, 0.0, 0.0));
        let all_fp = confuse(&ones, &zeros, 0.5).unwrap();
        assert_eq!(all_fp, cm(0.0, n as f64, 0.0, 0.0));
    }

    #[test]
    fn confusion_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for case in 0..100 {
            let n = 16 * 16;
            let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
            let truth: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.1) { 1.0 } else { 0.0 }).collect();
            let thr = rng.random_range(0.05..0.95);
            let got = confuse(&probs, &truth, thr).unwrap();
            let (mut tp, mut fp, mut fng, mut tn) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                if probs[i] >= thr {
                    if truth[i] == 1.0 {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                } else if truth[i] == 1.0 {
                    fng += 1.0;
                } else {
                    tn += 1.0;
                }
            }
            assert_eq!(got, cm(tp, fp, fng, tn), "case {case}");
            assert_eq!(got.total(), n as f64);
        }
    }

    #[test]
    fn confusion_input_validation() {
        assert!(matches!(
            confuse(&[0.5], &[0.0, 1.0], 0.5),
            Err(Error::Shape(_))
        ));
        assert!(matches!(confuse(&[1.5], &[1.0], 0.5), Err(Error::Data(_))));
        assert!(matches!(confuse(&[0.5], &[0.3], 0.5), Err(Error::Data(_))));
    }

    #[test]
    fn metric_arithmetic_examples() {
        let m = metrics(&cm(94.0, 0.0, 6.0, 0.0), 0.5).unwrap();
        assert_eq!(m.tpr, Some(0.94));

        let m = metrics(&cm(1.0, 1.0, 1.0, 1.0), 0.5).unwrap();
        assert_eq!(m.accuracy, Some(0.5));
        assert_eq!(m.tpr, Some(0.5));
        assert_eq!(m.tnr, Some(0.5));
        assert_eq!(m.far, Some(0.5));

        let m = metrics(&cm(10.0, 0.0, 0.0, 90.0), 0.5).unwrap();
        assert_eq!(m.tpr, Some(1.0));
        assert_eq!(m.tnr, Some(1.0));
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.far, Some(0.0));
        assert_eq!(m.precision, Some(1.0));
    }

    #[test]
    fn undefined_metrics_are_flagged_not_zero() {
        // no predicted positives: FAR and precision undefined
        let m = metrics(&cm(0.0, 0.0, 3.0, 7.0), 0.5).unwrap();
        assert_eq!(m.far, None);
        assert_eq!(m.precision, None);
        assert_eq!(m.tpr, Some(0.0));
        // no actual positives: TPR undefined
        let m = metrics(&cm(0.0, 2.0, 0.0, 8.0), 0.5).unwrap();
        assert_eq!(m.tpr, None);
        // empty matrix: error
        assert!(metrics(&ConfusionMatrix::zero(), 0.5).is_err());
    }

    #[test]
    fn far_and_precision_are_complements() {
        let m = metrics(&cm(30.0, 10.0, 5.0, 55.0), 0.5).unwrap();
        let far = m.far.unwrap();
        let prec = m.precision.unwrap();
        assert!((far + prec - 1.0).abs() < 1e-12);
        assert!((far - 0.25).abs() < 1e-12);
    }

    #[test]
    fn reweight_identity_and_worked_example() {
        let base = cm(9.0, 1.0, 1.0, 9.0);
        assert_eq!(reweight_negatives(&base, 1.0), base);

        let rw = reweight_negatives(&base, 1500.0);
        assert_eq!(rw, cm(9.0, 1500.0, 1.0, 13500.0));
        let m = metrics(&rw, 0.5).unwrap();
        let acc = m.accuracy.unwrap();
        assert!((acc - 13509.0 / 15010.0).abs() < 1e-15);
        assert!((acc - 0.9000).abs() < 1e-4);
        assert_eq!(m.tnr, Some(0.9));
    }

    #[test]
    fn reweight_leaves_tpr_tnr_invariant() {
        let base = cm(37.0, 12.0, 8.0, 943.0);
        let m0 = metrics(&base, 0.5).unwrap();
        for factor in [1.0, 10.0, 1500.0] {
            let m = metrics(&reweight_negatives(&base, factor), 0.5).unwrap();
            assert_eq!(m.tpr, m0.tpr, "factor {factor}");
            assert_eq!(m.tnr, m0.tnr, "factor {factor}");
        }
    }

    #[test]
    fn reweight_drives_accuracy_toward_tnr() {
        let base = cm(90.0, 5.0, 10.0, 95.0);
        let tnr = metrics(&base, 0.5).unwrap().tnr.unwrap();
        let acc1 = metrics(&base, 0.5).unwrap().accuracy.unwrap();
        let acc_big = metrics(&reweight_negatives(&base, 1e6), 0.5)
            .unwrap()
            .accuracy
            .unwrap();
        assert!((acc_big - tnr).abs() < (acc1 - tnr).abs());
        assert!((acc_big - tnr).abs() < 1e-3);
    }

    #[test]
    fn threshold_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 512;
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let truth: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let mut prev: Option<ConfusionMatrix> = None;
        for k in 0..=20 {
            let thr = k as f64 / 20.0;
            let cur = confuse(&probs, &truth, thr).unwrap();
            if let Some(p) = prev {
                assert!(cur.true_pos <= p.true_pos, "thr {thr}");
                assert!(cur.true_neg >= p.true_neg, "thr {thr}");
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn aggregation_is_count_summed() {
        let a = cm(5.0, 2.0, 1.0, 92.0);
        // single fold: identity
        assert_eq!(aggregate(&[a]).unwrap(), a);
        // two identical folds: doubled counts, identical ratios
        let two = aggregate(&[a, a]).unwrap();
        assert_eq!(two, cm(10.0, 4.0, 2.0, 184.0));
        let m1 = metrics(&a, 0.5).unwrap();
        let m2 = metrics(&two, 0.5).unwrap();
        assert_eq!(m1.tpr, m2.tpr);
        assert_eq!(m1.accuracy, m2.accuracy);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn fold_sums_equal_concatenated_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut folds = Vec::new();
        let mut all_p = Vec::new();
        let mut all_t = Vec::new();
        for _ in 0..4 {
            let n = rng.random_range(50..200);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
            folds.push(confuse(&p, &t, 0.5).unwrap());
            all_p.extend(p);
            all_t.extend(t);
        }
        let concat = confuse(&all_p, &all_t, 0.5).unwrap();
        assert_eq!(aggregate(&folds).unwrap(), concat);
    }

    #[test]
    fn report_files_written() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("report.csv");
        let tsv_path = dir.path().join("plot.tsv");
        let folds = vec![(1u8, cm(9.0, 1.0, 1.0, 989.0)), (2u8, cm(7.0, 2.0, 3.0, 988.0))];
        let report = emit_report("runetpp", &folds, 0.5, &csv_path, &tsv_path).unwrap();
        assert_eq!(report.counts, cm(16.0, 3.0, 4.0, 1977.0));

        let csv_text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(csv_text.lines().count(), 4); // header + 2 folds + all
        assert!(csv_text.lines().last().unwrap().starts_with("all,"));

        let tsv_text = std::fs::read_to_string(&tsv_path).unwrap();
        let lines: Vec<&str> = tsv_text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("tpr\trunetpp\t"));
    }

    #[test]
    fn report_renders_undefined() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("report.csv");
        let tsv_path = dir.path().join("plot.tsv");
        let folds = vec![(1u8, cm(0.0, 0.0, 2.0, 98.0))];
        emit_report("unetpp", &folds, 0.5, &csv_path, &tsv_path).unwrap();
        let tsv_text = std::fs::read_to_string(&tsv_path).unwrap();
        assert!(tsv_text.contains("far\tunetpp\tundefined"));
    }
}
