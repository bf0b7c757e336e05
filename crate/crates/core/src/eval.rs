//! Confusion matrices, accuracy, F1, misclassification lists and cross-run
//! statistics.
//!
//! Accuracies are kept as exact fractions so that e.g. 3991/4000 is reported
//! as 99.775% rather than an already-rounded float.

use std::fmt;
use std::path::Path;

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::kv;

/// Exact non-negative fraction `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn percent(self) -> f64 {
        100.0 * self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// `counts[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum F1Average {
    Micro,
    Macro,
}

/// Macro-F1 together with classes whose term was defined as 0 because they
/// were never predicted nor present.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Score {
    pub value: f64,
    pub undefined_classes: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn counts(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Correct / actual per class; `None` for classes with no samples.
    pub fn per_class_accuracy(&self) -> [Option<Ratio>; NUM_CLASSES] {
        std::array::from_fn(|c| {
            let den = self.row_sum(c);
            (den > 0).then_some(Ratio {
                num: self.counts[c][c],
                den,
            })
        })
    }

    pub fn overall_accuracy(&self) -> Result<Ratio> {
        let den = self.total();
        if den == 0 {
            return Err(Error::Input("empty confusion matrix".into()));
        }
        Ok(Ratio {
            num: self.trace(),
            den,
        })
    }

    /// Micro-F1 (pooled counts, equal to accuracy for single-label data) or
    /// macro-F1 (mean of per-class F1).
    pub fn f1(&self, avg: F1Average) -> Result<F1Score> {
        let acc = self.overall_accuracy()?;
        match avg {
            F1Average::Micro => Ok(F1Score {
                value: acc.value(),
                undefined_classes: Vec::new(),
            }),
            F1Average::Macro => {
                let mut sum = 0.0;
                let mut undefined = Vec::new();
                for c in 0..NUM_CLASSES {
                    let tp = self.counts[c][c] as f64;
                    let denom = (self.row_sum(c) + self.col_sum(c)) as f64;
                    if denom == 0.0 {
                        undefined.push(c);
                    } else {
                        // 2·P·R/(P + R) simplified to 2·TP/(actual + predicted).
                        sum += 2.0 * tp / denom;
                    }
                }
                Ok(F1Score {
                    value: sum / NUM_CLASSES as f64,
                    undefined_classes: undefined,
                })
            }
        }
    }

    /// Relabel classes: entry `[a][p]` moves to `[perm[a]][perm[p]]`.
    pub fn permuted(&self, perm: &[usize; NUM_CLASSES]) -> Self {
        let mut counts = [[0; NUM_CLASSES]; NUM_CLASSES];
        for a in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                counts[perm[a]][perm[p]] = self.counts[a][p];
            }
        }
        ConfusionMatrix { counts }
    }

    /// CSV with header `actual,pred_0..pred_9` and one row per actual class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("actual");
        for p in 0..NUM_CLASSES {
            s.push_str(&format!(",pred_{p}"));
        }
        s.push('\n');
        for (a, row) in self.counts.iter().enumerate() {
            s.push_str(&a.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

fn check_class(v: usize, what: &str, i: usize) -> Result<()> {
    if v >= NUM_CLASSES {
        return Err(Error::Input(format!(
            "{what} {v} at position {i} outside 0..{NUM_CLASSES}"
        )));
    }
    Ok(())
}

pub fn confusion(predictions: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts = [[0; NUM_CLASSES]; NUM_CLASSES];
    for (i, (&p, &a)) in predictions.iter().zip(labels).enumerate() {
        check_class(p, "prediction", i)?;
        check_class(a, "label", i)?;
        counts[a][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Misclassified {
    pub reference: String,
    pub actual: usize,
    pub predicted: usize,
}

/// Every sample whose prediction differs from its label, in dataset order.
pub fn misclassified(
    predictions: &[usize],
    labels: &[usize],
    refs: &[String],
) -> Result<Vec<Misclassified>> {
    if predictions.len() != labels.len() || refs.len() != labels.len() {
        return Err(Error::Input(format!(
            "misaligned inputs: {} predictions, {} labels, {} references",
            predictions.len(),
            labels.len(),
            refs.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(labels)
        .zip(refs)
        .filter(|((p, a), _)| p != a)
        .map(|((&predicted, &actual), r)| Misclassified {
            reference: r.clone(),
            actual,
            predicted,
        })
        .collect())
}

pub fn misclassified_csv(list: &[Misclassified]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["reference", "actual", "predicted"])
        .expect("in-memory write");
    for m in list {
        w.write_record([
            m.reference.as_str(),
            &m.actual.to_string(),
            &m.predicted.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Mean and population standard deviation of run accuracies (percent).
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub accuracies: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

/// `σ = √((1/N) Σ (xᵢ − μ)²)`, dividing by `N`.
pub fn run_stddev(accuracies: &[f64]) -> Result<RunStats> {
    if accuracies.is_empty() {
        return Err(Error::Input(
            "run_stddev needs at least one accuracy".into(),
        ));
    }
    let n = accuracies.len() as f64;
    let mu = accuracies.iter().sum::<f64>() / n;
    let sigma = (accuracies.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RunStats {
        accuracies: accuracies.to_vec(),
        mu,
        sigma,
    })
}

/// Everything an evaluation report contains.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub matrix: ConfusionMatrix,
    pub misclassified: Vec<Misclassified>,
}

impl EvalReport {
    pub fn new(predictions: &[usize], labels: &[usize], refs: &[String]) -> Result<Self> {
        Ok(EvalReport {
            matrix: confusion(predictions, labels)?,
            misclassified: misclassified(predictions, labels, refs)?,
        })
    }

    /// `key=value` summary: counts, accuracies and both F1 averages.
    pub fn summary(&self) -> Result<String> {
        let acc = self.matrix.overall_accuracy()?;
        let micro = self.matrix.f1(F1Average::Micro)?;
        let macro_ = self.matrix.f1(F1Average::Macro)?;
        let mut pairs: Vec<(String, String)> = vec![
            ("samples".into(), acc.den.to_string()),
            ("correct".into(), acc.num.to_string()),
            ("wrong".into(), self.misclassified.len().to_string()),
            ("accuracy".into(), acc.value().to_string()),
            ("accuracy_fraction".into(), acc.to_string()),
            ("accuracy_percent".into(), format!("{:.3}", acc.percent())),
            ("f1_micro".into(), micro.value.to_string()),
            ("f1_macro".into(), macro_.value.to_string()),
        ];
        if !macro_.undefined_classes.is_empty() {
            pairs.push((
                "f1_macro_undefined_classes".into(),
                kv::join(&macro_.undefined_classes),
            ));
        }
        for (c, r) in self.matrix.per_class_accuracy().iter().enumerate() {
            let v = r.map(|r| format!("{:.2}", r.percent())).unwrap_or_default();
            pairs.push((format!("class_{c}_accuracy_percent"), v));
        }
        Ok(kv::render(&pairs))
    }

    /// Write `confusion.csv`, `summary.txt` and `misclassified.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("confusion.csv", self.matrix.to_csv()),
            ("summary.txt", self.summary()?),
            ("misclassified.csv", misclassified_csv(&self.misclassified)),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diagonal(n: u64) -> ConfusionMatrix {
        let mut c = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = n;
        }
        ConfusionMatrix::from_counts(c)
    }

    #[test]
    fn perfect_predictions() {
        let labels: Vec<usize> = (0..4000).map(|i| i % 10).collect();
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(cm, diagonal(400));
        assert_eq!(cm.overall_accuracy().unwrap().value(), 1.0);
        assert_eq!(cm.f1(F1Average::Macro).unwrap().value, 1.0);
        assert!(misclassified(&labels, &labels, &vec![String::new(); 4000])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn out_of_range_class() {
        assert!(matches!(confusion(&[10], &[0]), Err(Error::Input(_))));
        assert!(confusion(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn empty_rows_are_absent() {
        let cm = confusion(&[0, 1], &[0, 1]).unwrap();
        let pc = cm.per_class_accuracy();
        assert!(pc[0].is_some() && pc[2].is_none());
        let f = cm.f1(F1Average::Macro).unwrap();
        assert_eq!(f.undefined_classes, (2..10).collect::<Vec<_>>());
        assert!((f.value - 0.2).abs() < 1e-12);
    }

    #[test]
    fn stddev_cases() {
        let s = run_stddev(&[99.5, 99.5, 99.5]).unwrap();
        assert_eq!((s.mu, s.sigma), (99.5, 0.0));
        let s = run_stddev(&[42.0]).unwrap();
        assert_eq!((s.mu, s.sigma), (42.0, 0.0));
        let s = run_stddev(&[1.0, 3.0]).unwrap();
        assert_eq!(s.sigma, 1.0);
        assert!(run_stddev(&[]).is_err());
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let refs: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let r = EvalReport::new(&[1, 1, 2], &[1, 0, 2], &refs).unwrap();
        r.write(dir.path()).unwrap();
        let mis = std::fs::read_to_string(dir.path().join("misclassified.csv")).unwrap();
        assert_eq!(mis, "reference,actual,predicted\ns1,0,1\n");
        let cm = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
        assert_eq!(cm.lines().count(), 11);
        assert!(cm.lines().nth(2).unwrap().starts_with("1,0,1,"));
        let summary =
            kv::parse(&std::fs::read_to_string(dir.path().join("summary.txt")).unwrap()).unwrap();
        let get = |k: &str| summary.iter().find(|(a, _)| a == k).unwrap().1.clone();
        assert_eq!(get("accuracy_fraction"), "2/3");
        assert_eq!(get("accuracy"), get("f1_micro"));
    }
}
