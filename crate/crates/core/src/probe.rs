//! Linear probing on frozen features and accuracy relative to a baseline.
//!
//! The probe is multinomial logistic regression fit by full-batch gradient descent on
//! `mean cross-entropy + (l2 / 2) ||W||^2` (biases unpenalized). Step sizes follow the
//! Barzilai–Borwein rule with a non-monotone Armijo backtracking safeguard.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::io::{Read, Write};

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient's Euclidean norm drops below this.
    pub tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iter: 20_000,
            tolerance: 1e-6,
        }
    }
}

/// Weights of a fitted probe: row `k` holds class `k`'s weights, last column the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe<T> {
    pub weights: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct ProbeFit<T> {
    pub probe: LinearProbe<T>,
    pub objective: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
    /// All feature rows were identical, so no class can be told apart.
    pub degenerate: bool,
}

impl<T: Scalar> LinearProbe<T> {
    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn logits(&self, features: &Array2<T>) -> Result<Array2<T>> {
        let d = self.weights.ncols() - 1;
        if features.ncols() != d {
            return Err(Error::Shape(format!("features have width {}, probe expects {d}", features.ncols())));
        }
        Ok(features.dot(&self.weights.slice(s![.., ..d]).t()) + &self.weights.column(d))
    }

    /// Argmax per row; ties go to the lowest class index.
    pub fn predict(&self, features: &Array2<T>) -> Result<Vec<usize>> {
        let logits = self.logits(features)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }
}

struct Problem<'a, T> {
    x: &'a Array2<T>,
    labels: &'a [usize],
    classes: usize,
    l2: T,
}

impl<T: Scalar> Problem<'_, T> {
    fn objective_and_grad(&self, w: &Array2<T>) -> (T, Array2<T>) {
        let (m, d) = self.x.dim();
        let logits = self.x.dot(&w.slice(s![.., ..d]).t()) + &w.column(d);
        let mut resid = Array2::<T>::zeros((m, self.classes));
        let mut loss = T::zero();
        for (r, row) in logits.rows().into_iter().enumerate() {
            let lse = log_sum_exp(row.iter().copied());
            loss += lse - row[self.labels[r]];
            for k in 0..self.classes {
                resid[[r, k]] = (row[k] - lse).exp();
            }
            resid[[r, self.labels[r]]] -= T::one();
        }
        let inv_m = T::one() / T::of_usize(m);
        let mut grad = Array2::<T>::zeros(w.raw_dim());
        grad.slice_mut(s![.., ..d]).assign(&(resid.t().dot(self.x) * inv_m));
        grad.column_mut(d).assign(&(resid.sum_axis(Axis(0)) * inv_m));
        let wd = w.slice(s![.., ..d]);
        let penalty = wd.iter().map(|&v| v * v).sum::<T>() * self.l2 / T::of(2.0);
        grad.slice_mut(s![.., ..d]).scaled_add(self.l2, &wd);
        (loss * inv_m + penalty, grad)
    }
}

fn dot<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

/// Fits a probe starting from zero weights.
pub fn fit_linear_probe<T: Scalar>(features: &Array2<T>, labels: &[usize], config: &ProbeConfig) -> Result<ProbeFit<T>> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let init = Array2::zeros((classes, features.ncols() + 1));
    fit_linear_probe_from(features, labels, config, init)
}

/// Fits a probe from an explicit `classes x (dim + 1)` starting point.
pub fn fit_linear_probe_from<T: Scalar>(
    features: &Array2<T>,
    labels: &[usize],
    config: &ProbeConfig,
    init: Array2<T>,
) -> Result<ProbeFit<T>> {
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows, {} labels", features.nrows(), labels.len())));
    }
    let distinct: HashSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Degenerate(format!("probe needs at least 2 classes, got {}", distinct.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite feature value".into()));
    }
    let classes = labels.iter().copied().max().unwrap() + 1;
    if init.dim() != (classes, features.ncols() + 1) {
        return Err(Error::Shape(format!("initial weights have shape {:?}", init.dim())));
    }
    let degenerate = features.rows().into_iter().all(|r| r == features.row(0));

    let problem = Problem { x: features, labels, classes, l2: T::of(config.l2) };
    let tol = T::of(config.tolerance);
    let armijo = T::of(1e-4);
    let mut w = init;
    let (mut f, mut g) = problem.objective_and_grad(&w);
    let mut recent: VecDeque<T> = VecDeque::from([f]);
    let mut step = T::one();
    let mut iterations = 0;
    let mut gnorm = dot(&g, &g).sqrt();
    while gnorm >= tol && iterations < config.max_iter {
        let reference = recent.iter().copied().fold(T::neg_infinity(), T::max);
        let gg = gnorm * gnorm;
        let mut t = step;
        let (w_next, f_next, g_next) = loop {
            let cand = &w - &(&g * t);
            let (fc, gc) = problem.objective_and_grad(&cand);
            if fc <= reference - armijo * t * gg || t < T::of(1e-20) {
                break (cand, fc, gc);
            }
            t = t / T::of(2.0);
        };
        let s_vec = &w_next - &w;
        let y_vec = &g_next - &g;
        let sy = dot(&s_vec, &y_vec);
        step = if sy > T::zero() { dot(&s_vec, &s_vec) / sy } else { t };
        w = w_next;
        f = f_next;
        g = g_next;
        gnorm = dot(&g, &g).sqrt();
        recent.push_back(f);
        if recent.len() > 10 {
            recent.pop_front();
        }
        iterations += 1;
        if s_vec.iter().all(|v| *v == T::zero()) {
            break;
        }
    }

    Ok(ProbeFit {
        probe: LinearProbe { weights: w },
        objective: f,
        grad_norm: gnorm,
        iterations,
        converged: gnorm < tol,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub realm: String,
    pub top1: f64,
    pub correct: usize,
    pub n_test: usize,
}

/// Exact top-1 accuracy with lowest-index tie-breaking.
pub fn evaluate<T: Scalar>(probe: &LinearProbe<T>, features: &Array2<T>, labels: &[usize]) -> Result<ProbeResult> {
    if labels.is_empty() {
        return Err(Error::Empty("test set".into()));
    }
    if features.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} feature rows, {} labels", features.nrows(), labels.len())));
    }
    let pred = probe.predict(features)?;
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(ProbeResult {
        realm: String::new(),
        top1: correct as f64 / labels.len() as f64,
        correct,
        n_test: labels.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeReport {
    /// `(realm, candidate - baseline)` in percentage points, in candidate order.
    pub deltas: Vec<(String, f64)>,
    pub average: f64,
}

/// Per-realm top-1 difference in percentage points and its mean.
pub fn relative_report(candidate: &[ProbeResult], baseline: &[ProbeResult]) -> Result<RelativeReport> {
    let mut base: HashMap<&str, f64> = HashMap::new();
    for r in baseline {
        if base.insert(r.realm.as_str(), r.top1).is_some() {
            return Err(Error::RealmMismatch(format!("baseline lists `{}` twice", r.realm)));
        }
    }
    let mut seen = HashSet::new();
    let mut deltas = Vec::with_capacity(candidate.len());
    for r in candidate {
        if !seen.insert(r.realm.as_str()) {
            return Err(Error::RealmMismatch(format!("candidate lists `{}` twice", r.realm)));
        }
        let b = base
            .get(r.realm.as_str())
            .ok_or_else(|| Error::RealmMismatch(format!("`{}` missing from baseline", r.realm)))?;
        deltas.push((r.realm.clone(), 100.0 * (r.top1 - b)));
    }
    if seen.len() != base.len() {
        let missing: Vec<&str> = base.keys().filter(|k| !seen.contains(*k)).copied().collect();
        return Err(Error::RealmMismatch(format!("missing from candidate: {}", missing.join(", "))));
    }
    if deltas.is_empty() {
        return Err(Error::Empty("no realms to compare".into()));
    }
    let average = deltas.iter().map(|(_, d)| d).sum::<f64>() / deltas.len() as f64;
    Ok(RelativeReport { deltas, average })
}

/// `realm,top1,n_test`.
pub fn write_results_csv<W: Write>(results: &[ProbeResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["realm", "top1", "n_test"])?;
    for r in results {
        w.write_record([r.realm.clone(), format!("{}", r.top1), r.n_test.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ProbeResult>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |m: String| Error::Parse { path: "<results>".into(), line: n + 2, message: m };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", rec.len())));
        }
        let top1: f64 = rec[1].trim().parse().map_err(|_| bad(format!("bad top1 `{}`", &rec[1])))?;
        let n_test: usize = rec[2].trim().parse().map_err(|_| bad(format!("bad n_test `{}`", &rec[2])))?;
        if !(0.0..=1.0).contains(&top1) {
            return Err(bad(format!("top1 {top1} outside [0, 1]")));
        }
        out.push(ProbeResult {
            realm: rec[0].to_string(),
            top1,
            correct: (top1 * n_test as f64).round() as usize,
            n_test,
        });
    }
    Ok(out)
}

/// `realm,delta_pp` rows followed by an `AVG` row.
pub fn write_report_csv<W: Write>(report: &RelativeReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["realm", "delta_pp"])?;
    for (realm, d) in &report.deltas {
        w.write_record([realm.clone(), format!("{d}")])?;
    }
    w.write_record(["AVG".to_string(), format!("{}", report.average)])?;
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Horizontal bar chart of the per-realm deltas.
pub fn report_svg(report: &RelativeReport) -> String {
    let row_h = 22.0;
    let label_w = 160.0;
    let half = 200.0;
    let rows = report.deltas.len() + 1;
    let height = row_h * rows as f64 + 30.0;
    let width = label_w + 2.0 * half + 80.0;
    let max = report
        .deltas
        .iter()
        .map(|(_, d)| d.abs())
        .chain([report.average.abs()])
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let axis = label_w + half;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let entries = report.deltas.iter().map(|(r, d)| (r.as_str(), *d)).chain([("AVG", report.average)]);
    for (i, (realm, d)) in entries.enumerate() {
        let y = 10.0 + row_h * i as f64;
        let len = half * d.abs() / max;
        let x = if d >= 0.0 { axis } else { axis - len };
        let color = if d >= 0.0 { "#2e7d32" } else { "#c62828" };
        let _ = writeln!(svg, r#"  <text x="{}" y="{}" text-anchor="end">{}</text>"#, label_w - 6.0, y + 14.0, escape(realm));
        let _ = writeln!(svg, r#"  <rect x="{x:.2}" y="{y}" width="{len:.2}" height="{}" fill="{color}"/>"#, row_h - 6.0);
        let tx = if d >= 0.0 { axis + len + 4.0 } else { axis - len - 4.0 };
        let anchor = if d >= 0.0 { "start" } else { "end" };
        let _ = writeln!(svg, r#"  <text x="{tx:.2}" y="{}" text-anchor="{anchor}">{d:+.1}</text>"#, y + 14.0);
    }
    let _ = writeln!(svg, r#"  <line x1="{axis}" y1="5" x2="{axis}" y2="{}" stroke="black"/>"#, height - 15.0);
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
