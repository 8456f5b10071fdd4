//! Presentation-attack evaluation metrics over scored sample sets.
//!
//! Scores are "liveness" scores: higher means more live. A sample is
//! accepted (classified live) when its score is >= the threshold; ties count
//! as accepted so results are reproducible.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleLabel {
    Live,
    Attack,
}

/// Per-sample liveness scores with ground-truth labels and optional
/// attack-type tags for per-type breakdowns.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<SampleLabel>,
    tags: Option<Vec<String>>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<SampleLabel>) -> Result<Self> {
        Self::with_tags(scores, labels, None)
    }

    pub fn with_tags(
        scores: Vec<f64>,
        labels: Vec<SampleLabel>,
        tags: Option<Vec<String>>,
    ) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::config("scored set is empty"));
        }
        if scores.len() != labels.len() {
            return Err(Error::config(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(t) = &tags {
            if t.len() != scores.len() {
                return Err(Error::config("tag count does not match sample count"));
            }
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::numeric("scores must be finite"));
        }
        Ok(ScoredSet { scores, labels, tags })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[SampleLabel] {
        &self.labels
    }

    fn class_counts(&self) -> (usize, usize) {
        let live = self.labels.iter().filter(|l| **l == SampleLabel::Live).count();
        (live, self.labels.len() - live)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (live, attack) = self.class_counts();
        if live == 0 || attack == 0 {
            return Err(Error::config(format!(
                "threshold metrics need both classes; set has {live} live and {attack} attack"
            )));
        }
        Ok((live, attack))
    }
}

// ─── threshold metrics ───

/// (APCER, BPCER, ACER) at a fixed threshold: attacks accepted, live
/// rejected, and their mean.
pub fn apcer_bpcer_acer(set: &ScoredSet, threshold: f64) -> Result<(f64, f64, f64)> {
    let (live, attack) = set.require_both_classes()?;
    let mut attacks_accepted = 0usize;
    let mut live_rejected = 0usize;
    for (s, l) in set.scores.iter().zip(&set.labels) {
        match l {
            SampleLabel::Attack if *s >= threshold => attacks_accepted += 1,
            SampleLabel::Live if *s < threshold => live_rejected += 1,
            _ => {}
        }
    }
    let apcer = attacks_accepted as f64 / attack as f64;
    let bpcer = live_rejected as f64 / live as f64;
    Ok((apcer, bpcer, (apcer + bpcer) / 2.0))
}

/// APCER broken down by attack-type tag (live samples are ignored).
pub fn apcer_per_type(set: &ScoredSet, threshold: f64) -> Result<Vec<(String, f64)>> {
    let tags = set
        .tags
        .as_ref()
        .ok_or_else(|| Error::config("scored set carries no attack-type tags"))?;
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for ((s, l), tag) in set.scores.iter().zip(&set.labels).zip(tags) {
        if *l == SampleLabel::Attack {
            let e = counts.entry(tag.as_str()).or_insert((0, 0));
            e.1 += 1;
            if *s >= threshold {
                e.0 += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(tag, (acc, total))| (tag.to_string(), acc as f64 / total as f64))
        .collect())
}

/// Equal error rate and the threshold attaining it. The false-accept and
/// false-reject curves are stepwise in the threshold; the crossing is found
/// by linear interpolation between adjacent evaluated thresholds.
pub fn eer_with_threshold(set: &ScoredSet) -> Result<(f64, f64)> {
    set.require_both_classes()?;
    let mut thresholds: Vec<f64> = set.scores.clone();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    // one more above the max so the sweep ends at FAR=0, FRR=1
    let top = thresholds.last().unwrap() + 1.0;
    thresholds.push(top);

    let mut prev: Option<(f64, f64, f64)> = None; // (threshold, far, frr)
    for &t in &thresholds {
        let (far, frr, _) = apcer_bpcer_acer(set, t)?;
        if (far - frr).abs() == 0.0 {
            return Ok((far, t));
        }
        if let Some((pt, pfar, pfrr)) = prev {
            let d0 = pfar - pfrr;
            let d1 = far - frr;
            if d0 > 0.0 && d1 < 0.0 {
                let lambda = d0 / (d0 - d1);
                let eer = pfar + lambda * (far - pfar);
                let t_star = pt + lambda * (t - pt);
                return Ok((eer, t_star));
            }
        }
        prev = Some((t, far, frr));
    }
    Err(Error::numeric("error-rate curves never cross"))
}

pub fn eer(set: &ScoredSet) -> Result<f64> {
    eer_with_threshold(set).map(|(e, _)| e)
}

/// Mean of the two error rates on `test`, thresholded where `dev` reaches
/// its equal error rate.
pub fn hter(dev: &ScoredSet, test: &ScoredSet) -> Result<f64> {
    let (_, threshold) = eer_with_threshold(dev)?;
    let (apcer, bpcer, _) = apcer_bpcer_acer(test, threshold)?;
    Ok((apcer + bpcer) / 2.0)
}

/// Area under the ROC curve by trapezoidal integration; equal scores in
/// opposite classes contribute half credit.
pub fn auc(set: &ScoredSet) -> Result<f64> {
    let (live, attack) = set.require_both_classes()?;
    // group samples by score, descending; sweep accumulating class counts
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].partial_cmp(&set.scores[a]).unwrap());
    let mut area = 0.0f64;
    let mut tp = 0usize; // live accepted so far
    let mut fp = 0usize; // attacks accepted so far
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut d_tp = 0usize;
        let mut d_fp = 0usize;
        while j < order.len() && set.scores[order[j]] == set.scores[order[i]] {
            match set.labels[order[j]] {
                SampleLabel::Live => d_tp += 1,
                SampleLabel::Attack => d_fp += 1,
            }
            j += 1;
        }
        // trapezoid over the tie group: width d_fp, mean height tp + d_tp/2
        area += d_fp as f64 * (tp as f64 + d_tp as f64 / 2.0);
        tp += d_tp;
        fp += d_fp;
        i = j;
    }
    debug_assert_eq!(tp, live);
    debug_assert_eq!(fp, attack);
    Ok(area / (live as f64 * attack as f64))
}

/// Percent improvement of a searched model over a random-sampling baseline:
/// −100·(acer_s − acer_r)/acer_r. Positive means the search helped.
pub fn relative_improvement(acer_search: f64, acer_random: f64) -> Result<f64> {
    if acer_random == 0.0 {
        return Err(Error::config(
            "relative improvement is undefined against a zero baseline rate",
        ));
    }
    Ok(-100.0 * (acer_search - acer_random) / acer_random)
}

// ─── reporting ───

/// The standard evaluation summary for one scored set.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
    pub acer: f64,
    pub eer: f64,
    pub auc: f64,
    pub per_type: Vec<(String, f64)>,
}

/// Evaluates the full summary at the set's own equal-error threshold.
pub fn evaluate(set: &ScoredSet) -> Result<MetricReport> {
    let (eer_v, threshold) = eer_with_threshold(set)?;
    let (apcer, bpcer, acer) = apcer_bpcer_acer(set, threshold)?;
    let per_type = if set.tags.is_some() {
        apcer_per_type(set, threshold)?
    } else {
        Vec::new()
    };
    Ok(MetricReport { threshold, apcer, bpcer, acer, eer: eer_v, auc: auc(set)?, per_type })
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("threshold,{}\n", self.threshold));
        out.push_str(&format!("apcer,{}\n", self.apcer));
        out.push_str(&format!("bpcer,{}\n", self.bpcer));
        out.push_str(&format!("acer,{}\n", self.acer));
        out.push_str(&format!("eer,{}\n", self.eer));
        out.push_str(&format!("auc,{}\n", self.auc));
        for (tag, v) in &self.per_type {
            out.push_str(&format!("apcer[{tag}],{v}\n"));
        }
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "threshold  {:.6}", self.threshold)?;
        writeln!(f, "APCER      {:.4} %", self.apcer * 100.0)?;
        writeln!(f, "BPCER      {:.4} %", self.bpcer * 100.0)?;
        writeln!(f, "ACER       {:.4} %", self.acer * 100.0)?;
        writeln!(f, "EER        {:.4} %", self.eer * 100.0)?;
        writeln!(f, "AUC        {:.4}", self.auc)?;
        for (tag, v) in &self.per_type {
            writeln!(f, "APCER[{tag}]  {:.4} %", v * 100.0)?;
        }
        Ok(())
    }
}
