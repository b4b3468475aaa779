//! Anomaly scores, thresholds, point adjustment and detection metrics.
//!
//! A step is scored by the mean squared error between the observation and
//! its forecast from `horizon` steps earlier. Predictions are `score >= τ`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::bilevel::ReKoModel;
use crate::koopman::{eig, mode_factors};
use crate::reservoir::ReservoirBank;
use crate::{Error, Result};

/// Per-step anomaly scores; `labels` are carried along when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub scores: Vec<f64>,
    pub labels: Option<Vec<u8>>,
    pub horizon: usize,
}

/// Lifted states advanced `horizon` steps: `K φ` for one step, the mode
/// factors `Re(λ^h) ⊙ φ` for more, or `K^h φ` when `K` is near-defective.
fn advance(model: &ReKoModel, phi: ArrayView2<f64>, horizon: usize) -> Array2<f64> {
    if horizon == 1 {
        return model.k.dot(&phi);
    }
    match eig(model.k.view()) {
        Ok(sys) => {
            let f = mode_factors(&sys.lambdas, horizon);
            let mut out = phi.to_owned();
            for (mut row, fi) in out.axis_iter_mut(Axis(0)).zip(f.iter()) {
                row *= *fi;
            }
            out
        }
        Err(e) => {
            log::warn!("{e}; scoring with matrix powers");
            let mut out = phi.to_owned();
            for _ in 0..horizon {
                out = model.k.dot(&out);
            }
            out
        }
    }
}

/// Scores every column of `values` (`n × T`, standardized).
///
/// The reservoir runs from the zero state over `warmup` followed by
/// `values`; only `values` is scored. Steps without a forecast (fewer than
/// `horizon` predecessors) copy the first defined score.
pub fn score_series(
    model: &ReKoModel,
    bank: &ReservoirBank,
    values: ArrayView2<f64>,
    labels: Option<Vec<u8>>,
    horizon: usize,
    warmup: Option<ArrayView2<f64>>,
) -> Result<ScoreSeries> {
    let t_test = values.ncols();
    if horizon == 0 || horizon >= t_test {
        return Err(Error::InvalidParameter(format!(
            "score horizon must lie in 1..{t_test}, got {horizon}"
        )));
    }
    if let Some(l) = &labels {
        if l.len() != t_test {
            return Err(Error::Shape(format!(
                "{} labels for {t_test} steps",
                l.len()
            )));
        }
    }
    let n = values.nrows();
    if model.n_features() != n {
        return Err(Error::Shape(format!(
            "model expects {} features, data has {n}",
            model.n_features()
        )));
    }
    let full = match warmup {
        Some(w) => concatenate(Axis(1), &[w, values]).map_err(|e| Error::Shape(e.to_string()))?,
        None => values.to_owned(),
    };
    let offset = full.ncols() - t_test;
    let trace = bank.run(full.view(), None, 0)?;

    // Forecast for absolute step t uses the state at t - horizon.
    let first = offset.max(horizon);
    let sources = trace
        .states
        .slice(s![.., first - horizon..full.ncols() - horizon]);
    let phi = model.readout().apply_columns(sources);
    let pred = model.v.t().dot(&advance(model, phi.view(), horizon));
    let actual = full.slice(s![.., first..]);

    let mut scores = vec![0.0; t_test];
    let defined = first - offset;
    for (j, (a, p)) in actual
        .axis_iter(Axis(1))
        .zip(pred.axis_iter(Axis(1)))
        .enumerate()
    {
        let sq: f64 = a.iter().zip(p.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        scores[defined + j] = sq / n as f64;
    }
    let fill = scores[defined];
    scores[..defined].fill(fill);
    if let Some(bad) = scores.iter().position(|x| !x.is_finite()) {
        return Err(Error::Training {
            round: 0,
            client: 0,
            message: format!("non-finite anomaly score at step {bad}"),
        });
    }
    Ok(ScoreSeries {
        scores,
        labels,
        horizon,
    })
}

/// How the decision threshold is picked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Empirical quantile of validation scores from normal data.
    Quantile(f64),
    /// The score maximizing point-adjusted F1 on labeled scores.
    BestF1,
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::Quantile(0.99)
    }
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMode::Quantile(q) => write!(f, "quantile:{q}"),
            ThresholdMode::BestF1 => f.write_str("best-f1"),
        }
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "best-f1" {
            return Ok(ThresholdMode::BestF1);
        }
        let bad = || {
            Error::InvalidParameter(format!(
                "threshold must be `quantile:Q` or `best-f1`, got `{s}`"
            ))
        };
        let q: f64 = s
            .strip_prefix("quantile:")
            .ok_or_else(bad)?
            .parse()
            .map_err(|_| bad())?;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "quantile must lie in (0, 1), got {q}"
            )));
        }
        Ok(ThresholdMode::Quantile(q))
    }
}

impl Serialize for ThresholdMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ThresholdMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub tau: f64,
    pub mode: ThresholdMode,
}

/// Quantile with linear interpolation between order statistics
/// (`q (n − 1)` positions, the common default of numerical libraries).
pub fn quantile(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot take a quantile of no scores".into(),
        ));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "quantile must lie in [0, 1], got {q}"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} predictions for {b} labels")));
    }
    Ok(())
}

/// Marks every step of a labeled anomaly segment once any step in it is
/// predicted. Predictions outside segments are untouched.
pub fn point_adjust(preds: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    check_lengths(preds.len(), labels.len())?;
    let mut out = preds.to_vec();
    for (start, end) in segments(labels) {
        if preds[start..end].contains(&1) {
            out[start..end].fill(1);
        }
    }
    Ok(out)
}

/// Maximal runs of `1` as half-open ranges.
pub fn segments(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        if labels[t] == 1 {
            let start = t;
            while t < labels.len() && labels[t] == 1 {
                t += 1;
            }
            out.push((start, t));
        } else {
            t += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Builds from precision and recall, with `f1 = 0` when both vanish.
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }

    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Prf::from_pr(ratio(tp, tp + fp), ratio(tp, tp + fn_))
    }
}

pub fn prf(preds: &[u8], labels: &[u8]) -> Result<Prf> {
    check_lengths(preds.len(), labels.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == 1, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

/// Rank-sum AUC with midranks for ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps midranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u64;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        twice_rank_sum += twice_mid * pos_in_tie;
        i = j + 1;
    }
    let np = n_pos as u64;
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * n_neg as u64) as f64)
}

pub fn predict(scores: &[f64], tau: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= tau)).collect()
}

/// Threshold maximizing point-adjusted F1 over all distinct scores.
///
/// Lowering `τ` past a score flips one normal step to a false positive, or
/// detects a whole segment once `τ` reaches the segment's highest score, so
/// a single descending sweep evaluates every candidate.
pub fn best_f1_threshold(scores: &[f64], labels: &[u8]) -> Result<(f64, Prf)> {
    check_lengths(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot pick a threshold from no scores".into(),
        ));
    }
    let total_pos = labels.iter().filter(|&&l| l == 1).count();
    // (score, segment length or 0 for a normal step)
    let mut events: Vec<(f64, usize)> = labels
        .iter()
        .zip(scores)
        .filter(|(&l, _)| l != 1)
        .map(|(_, &s)| (s, 0))
        .collect();
    for (a, b) in segments(labels) {
        let peak = scores[a..b]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        events.push((peak, b - a));
    }
    events.sort_by(|x, y| y.0.total_cmp(&x.0));

    let (mut tp, mut fp) = (0, 0);
    let mut best = (f64::INFINITY, Prf::from_pr(0.0, 0.0));
    let mut i = 0;
    while i < events.len() {
        let tau = events[i].0;
        while i < events.len() && events[i].0 == tau {
            match events[i].1 {
                0 => fp += 1,
                len => tp += len,
            }
            i += 1;
        }
        let m = Prf::from_counts(tp, fp, total_pos - tp);
        if m.f1 > best.1.f1 {
            best = (tau, m);
        }
    }
    if best.0.is_infinite() {
        // No candidate detects anything: fall back to the largest score.
        best.0 = events[0].0;
    }
    Ok(best)
}

/// `labels` are required for [`ThresholdMode::BestF1`]; quantile mode uses
/// `scores` alone.
pub fn choose_threshold(
    scores: &[f64],
    labels: Option<&[u8]>,
    mode: ThresholdMode,
) -> Result<Threshold> {
    let tau = match mode {
        ThresholdMode::Quantile(q) => quantile(scores, q)?,
        ThresholdMode::BestF1 => {
            let labels = labels.ok_or_else(|| {
                Error::InvalidParameter("best-f1 thresholds need labeled scores".into())
            })?;
            best_f1_threshold(scores, labels)?.0
        }
    };
    Ok(Threshold { tau, mode })
}

/// Point-adjusted and raw metrics for one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_raw: f64,
    pub recall_raw: f64,
    pub f1_raw: f64,
    pub auc: Option<f64>,
}

impl Metrics {
    fn new(adjusted: Prf, raw: Prf, auc: Option<f64>) -> Self {
        Metrics {
            precision: adjusted.precision,
            recall: adjusted.recall,
            f1: adjusted.f1,
            precision_raw: raw.precision,
            recall_raw: raw.recall,
            f1_raw: raw.f1,
            auc,
        }
    }

    /// Means precision and recall over rows and recomputes both F1 values
    /// from them, so the harmonic identity holds for the average too.
    fn macro_average(rows: &[Metrics]) -> Metrics {
        let k = rows.len().max(1) as f64;
        let mean = |f: fn(&Metrics) -> f64| rows.iter().map(f).sum::<f64>() / k;
        let aucs: Vec<f64> = rows.iter().filter_map(|r| r.auc).collect();
        let auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
        Metrics::new(
            Prf::from_pr(mean(|r| r.precision), mean(|r| r.recall)),
            Prf::from_pr(mean(|r| r.precision_raw), mean(|r| r.recall_raw)),
            auc,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: String,
    pub threshold: f64,
    pub n_steps: usize,
    pub n_anomalies: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold_mode: ThresholdMode,
    pub horizon: usize,
    pub per_node: Vec<NodeReport>,
    /// Headline: precision and recall averaged over nodes.
    #[serde(rename = "macro")]
    pub macro_avg: Metrics,
    pub pooled: Metrics,
    pub pooled_threshold: f64,
}

/// One node's standardized series: the training file (its tail after
/// `train_len` is the validation part) and the labeled test file.
#[derive(Debug, Clone)]
pub struct EvalNode {
    pub name: String,
    pub train: Array2<f64>,
    pub train_len: usize,
    pub test: Array2<f64>,
    pub labels: Vec<u8>,
}

/// Scores of one node: validation scores and labeled test scores.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores {
    pub validation: Vec<f64>,
    pub test: ScoreSeries,
}

/// Scores the validation tail and the test file in one reservoir pass: the
/// test series is warmed up with the whole training file.
pub fn score_node(
    model: &ReKoModel,
    bank: &ReservoirBank,
    node: &EvalNode,
    horizon: usize,
    washout: usize,
) -> Result<NodeScores> {
    let train = score_series(model, bank, node.train.view(), None, horizon, None)?;
    let from = node.train_len.max(washout).max(horizon);
    let validation = train
        .scores
        .get(from..)
        .map(<[f64]>::to_vec)
        .unwrap_or_default();
    let test = score_series(
        model,
        bank,
        node.test.view(),
        Some(node.labels.clone()),
        horizon,
        Some(node.train.view()),
    )?;
    Ok(NodeScores { validation, test })
}

/// Per-step predictions of one node for `scores.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePredictions {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub raw: Vec<u8>,
    pub adjusted: Vec<u8>,
}

fn metrics_for(scores: &[f64], labels: &[u8], tau: f64) -> Result<(Metrics, NodePredictions)> {
    let raw = predict(scores, tau);
    let adjusted = point_adjust(&raw, labels)?;
    let auc = auc(scores, labels).ok();
    let m = Metrics::new(prf(&adjusted, labels)?, prf(&raw, labels)?, auc);
    Ok((
        m,
        NodePredictions {
            scores: scores.to_vec(),
            labels: labels.to_vec(),
            raw,
            adjusted,
        },
    ))
}

/// Thresholds and metrics for already scored nodes.
pub fn report(
    names: &[String],
    scored: &[NodeScores],
    mode: ThresholdMode,
    horizon: usize,
) -> Result<(EvalReport, Vec<NodePredictions>)> {
    if scored.is_empty() {
        return Err(Error::InvalidParameter("no nodes to evaluate".into()));
    }
    let mut per_node = Vec::with_capacity(scored.len());
    let mut preds = Vec::with_capacity(scored.len());
    for (name, node) in names.iter().zip(scored) {
        let labels = node.test.labels.as_deref().unwrap_or_default();
        let th = match mode {
            ThresholdMode::Quantile(_) => choose_threshold(&node.validation, None, mode)?,
            ThresholdMode::BestF1 => choose_threshold(&node.test.scores, Some(labels), mode)?,
        };
        let (metrics, p) = metrics_for(&node.test.scores, labels, th.tau)?;
        per_node.push(NodeReport {
            node: name.clone(),
            threshold: th.tau,
            n_steps: labels.len(),
            n_anomalies: labels.iter().filter(|&&l| l == 1).count(),
            metrics,
        });
        preds.push(p);
    }

    // Pooled: one threshold over the concatenation; segments never span nodes.
    let all_scores: Vec<f64> = scored
        .iter()
        .flat_map(|n| n.test.scores.iter().copied())
        .collect();
    let all_labels: Vec<u8> = scored
        .iter()
        .flat_map(|n| n.test.labels.as_deref().unwrap_or_default().iter().copied())
        .collect();
    let pooled_tau = match mode {
        ThresholdMode::Quantile(_) => {
            let val: Vec<f64> = scored
                .iter()
                .flat_map(|n| n.validation.iter().copied())
                .collect();
            choose_threshold(&val, None, mode)?.tau
        }
        ThresholdMode::BestF1 => {
            // Sweep on the concatenation with a separator so no segment
            // crosses a node boundary.
            let mut s = Vec::with_capacity(all_scores.len() + scored.len());
            let mut l = Vec::with_capacity(s.capacity());
            for n in scored {
                s.extend(n.test.scores.iter().copied());
                l.extend(n.test.labels.as_deref().unwrap_or_default().iter().copied());
                s.push(f64::NEG_INFINITY);
                l.push(0);
            }
            best_f1_threshold(&s, &l)?.0
        }
    };
    let mut raw = Vec::with_capacity(all_scores.len());
    let mut adjusted = Vec::with_capacity(all_scores.len());
    for n in scored {
        let labels = n.test.labels.as_deref().unwrap_or_default();
        let r = predict(&n.test.scores, pooled_tau);
        adjusted.extend(point_adjust(&r, labels)?);
        raw.extend(r);
    }
    let pooled = Metrics::new(
        prf(&adjusted, &all_labels)?,
        prf(&raw, &all_labels)?,
        auc(&all_scores, &all_labels).ok(),
    );
    let macro_avg = Metrics::macro_average(&per_node.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok((
        EvalReport {
            threshold_mode: mode,
            horizon,
            per_node,
            macro_avg,
            pooled,
            pooled_threshold: pooled_tau,
        },
        preds,
    ))
}

/// Scores every node (in parallel when enabled) and builds the report.
pub fn evaluate(
    model: &ReKoModel,
    bank: &ReservoirBank,
    nodes: &[EvalNode],
    mode: ThresholdMode,
    horizon: usize,
    washout: usize,
) -> Result<(EvalReport, Vec<NodePredictions>)> {
    let scored: Vec<NodeScores> =
        crate::par::map_ordered_ref(nodes, |n| score_node(model, bank, n, horizon, washout))
            .into_iter()
            .collect::<Result<_>>()?;
    let names: Vec<String> = nodes.iter().map(|n| n.name.clone()).collect();
    report(&names, &scored, mode, horizon)
}

/// Writes `t,score,label,pred_raw,pred_adjusted`.
pub fn write_scores_csv(path: impl AsRef<Path>, p: &NodePredictions) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["t", "score", "label", "pred_raw", "pred_adjusted"])
        .map_err(io)?;
    for t in 0..p.scores.len() {
        w.write_record([
            t.to_string(),
            p.scores[t].to_string(),
            p.labels[t].to_string(),
            p.raw[t].to_string(),
            p.adjusted[t].to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
