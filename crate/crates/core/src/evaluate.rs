//! Pixel metrics and run comparison.
//!
//! Reports carry per-slide rows, a pooled row (counts summed over all slides
//! before the ratios are taken) and a per-slide mean row. Two masks that are
//! both empty score 1.
//!
//! The report text format is tab separated with a header line:
//!
//! ```text
//! scope   name  tp  fp  fn  iou  f1
//! slide   s01   50  0   50  0.5  0.6666666666666666
//! pooled  *     50  0   50  0.5  0.6666666666666666
//! mean    *     -   -   -   0.5  0.6666666666666666
//! ```
//!
//! Ratios are written in shortest round-trip form, so parsing and
//! formatting a report gives back the same text.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if d == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }

    pub fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

pub fn counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<Counts> {
    gt.check_same_grid(pred.width(), pred.height(), "ground truth")?;
    let mut c = Counts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub counts: Counts,
    pub iou: f64,
    pub f1: f64,
}

impl From<Counts> for Metrics {
    fn from(counts: Counts) -> Self {
        Metrics {
            counts,
            iou: counts.iou(),
            f1: counts.f1(),
        }
    }
}

pub fn iou_f1(pred: &BinaryMask, gt: &BinaryMask) -> Result<Metrics> {
    counts(pred, gt).map(Metrics::from)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlideMetrics {
    pub name: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub slides: Vec<SlideMetrics>,
    /// Ratios of the summed counts. The primary aggregate.
    pub pooled: Metrics,
    pub mean_iou: f64,
    pub mean_f1: f64,
}

pub const REPORT_HEADER: &str = "scope\tname\ttp\tfp\tfn\tiou\tf1";

impl MetricReport {
    pub fn from_counts(slides: impl IntoIterator<Item = (String, Counts)>) -> Result<Self> {
        let slides: Vec<SlideMetrics> = slides
            .into_iter()
            .map(|(name, c)| SlideMetrics {
                name,
                metrics: c.into(),
            })
            .collect();
        if slides.is_empty() {
            return Err(Error::validation("a report needs at least one slide"));
        }
        for s in &slides {
            if s.name.is_empty() || s.name.contains(['\t', '\n', '\r']) || s.name == "*" {
                return Err(Error::validation(format!("bad slide name {:?}", s.name)));
            }
        }
        let mut names: Vec<&str> = slides.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation(format!("slide {:?} listed twice", w[0])));
        }
        let mut total = Counts::default();
        for s in &slides {
            total.add(&s.metrics.counts);
        }
        let n = slides.len() as f64;
        let mean_iou = slides.iter().map(|s| s.metrics.iou).sum::<f64>() / n;
        let mean_f1 = slides.iter().map(|s| s.metrics.f1).sum::<f64>() / n;
        Ok(MetricReport {
            slides,
            pooled: total.into(),
            mean_iou,
            mean_f1,
        })
    }

    pub fn get(&self, name: &str) -> Option<&SlideMetrics> {
        self.slides.iter().find(|s| s.name == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(REPORT_HEADER);
        out.push('\n');
        let row = |out: &mut String, scope: &str, name: &str, m: &Metrics| {
            let c = m.counts;
            writeln!(
                out,
                "{scope}\t{name}\t{}\t{}\t{}\t{}\t{}",
                c.tp, c.fp, c.fn_, m.iou, m.f1
            )
            .unwrap();
        };
        for s in &self.slides {
            row(&mut out, "slide", &s.name, &s.metrics);
        }
        row(&mut out, "pooled", "*", &self.pooled);
        writeln!(out, "mean\t*\t-\t-\t-\t{}\t{}", self.mean_iou, self.mean_f1).unwrap();
        out
    }

    /// Parses the text written by [`MetricReport::to_tsv`]. Counts are the
    /// source of truth: ratios that disagree with them are rejected.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::format("metric report must start with the column header"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| Error::format(format!("bad count {s:?}")));
        let ratio = |s: &str| s.parse::<f64>().map_err(|_| Error::format(format!("bad ratio {s:?}")));
        let mut slides = Vec::new();
        let mut pooled = None;
        let mut mean = None;
        for line in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(Error::format(format!("report row needs 7 fields: {line:?}")));
            }
            match f[0] {
                "slide" | "pooled" => {
                    let c = Counts {
                        tp: num(f[2])?,
                        fp: num(f[3])?,
                        fn_: num(f[4])?,
                    };
                    if ratio(f[5])? != c.iou() || ratio(f[6])? != c.f1() {
                        return Err(Error::format(format!("ratios do not match counts: {line:?}")));
                    }
                    if f[0] == "slide" {
                        slides.push((f[1].to_string(), c));
                    } else {
                        pooled = Some(c);
                    }
                }
                "mean" => mean = Some((ratio(f[5])?, ratio(f[6])?)),
                other => return Err(Error::format(format!("unknown row scope {other:?}"))),
            }
        }
        let report = MetricReport::from_counts(slides)?;
        if pooled != Some(report.pooled.counts) || mean != Some((report.mean_iou, report.mean_f1)) {
            return Err(Error::format("pooled or mean row does not match the slide rows"));
        }
        Ok(report)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub scope: String,
    pub name: String,
    pub baseline_iou: f64,
    pub method_iou: f64,
    pub baseline_f1: f64,
    pub method_f1: f64,
}

impl DeltaRow {
    pub fn delta_iou(&self) -> f64 {
        self.method_iou - self.baseline_iou
    }

    pub fn delta_f1(&self) -> f64 {
        self.method_f1 - self.baseline_f1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    pub fn pooled(&self) -> &DeltaRow {
        self.rows.iter().find(|r| r.scope == "pooled").expect("pooled row")
    }

    /// Percentages with two decimals, one row per slide then pooled and mean.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scope\tname\tIoU base (%)\tIoU (%)\tdIoU\tF1 base (%)\tF1 (%)\tdF1\n");
        for r in &self.rows {
            writeln!(
                out,
                "{}\t{}\t{:.2}\t{:.2}\t{:+.2}\t{:.2}\t{:.2}\t{:+.2}",
                r.scope,
                r.name,
                100.0 * r.baseline_iou,
                100.0 * r.method_iou,
                100.0 * r.delta_iou(),
                100.0 * r.baseline_f1,
                100.0 * r.method_f1,
                100.0 * r.delta_f1()
            )
            .unwrap();
        }
        out
    }
}

/// Per-slide, pooled and mean IoU/F1 deltas of `method` over `baseline`.
pub fn compare_runs(baseline: &MetricReport, method: &MetricReport) -> Result<DeltaTable> {
    let mut a: Vec<&str> = baseline.slides.iter().map(|s| s.name.as_str()).collect();
    let mut b: Vec<&str> = method.slides.iter().map(|s| s.name.as_str()).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::validation("reports cover different slide sets"));
    }
    let mut rows: Vec<DeltaRow> = baseline
        .slides
        .iter()
        .map(|s| {
            let m = method.get(&s.name).expect("same slide set");
            DeltaRow {
                scope: "slide".into(),
                name: s.name.clone(),
                baseline_iou: s.metrics.iou,
                method_iou: m.metrics.iou,
                baseline_f1: s.metrics.f1,
                method_f1: m.metrics.f1,
            }
        })
        .collect();
    rows.push(DeltaRow {
        scope: "pooled".into(),
        name: "*".into(),
        baseline_iou: baseline.pooled.iou,
        method_iou: method.pooled.iou,
        baseline_f1: baseline.pooled.f1,
        method_f1: method.pooled.f1,
    });
    rows.push(DeltaRow {
        scope: "mean".into(),
        name: "*".into(),
        baseline_iou: baseline.mean_iou,
        method_iou: method.mean_iou,
        baseline_f1: baseline.mean_f1,
        method_f1: method.mean_f1,
    });
    Ok(DeltaTable { rows })
}
