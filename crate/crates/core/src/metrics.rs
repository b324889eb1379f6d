//! Survival evaluation: Harrell's concordance index, interval Brier score,
//! Kaplan–Meier curves, the two-group logrank test and median-risk
//! stratification.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time: f64,
    pub event: bool,
    pub risk: f64,
    /// Interval label, needed for the Brier score.
    pub interval: Option<usize>,
    /// Predicted per-interval survival, needed for the Brier score.
    pub survival: Option<Vec<f64>>,
}

impl SurvivalOutcome {
    pub fn new(time: f64, event: bool, risk: f64) -> Self {
        Self {
            time,
            event,
            risk,
            interval: None,
            survival: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Concordance

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Self(vec![0; n + 1])
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Pairs `(a, b)` with `t_a < t_b` and an event at `a` are comparable; they
/// are concordant when `risk_a > risk_b`, and risk ties earn half credit.
pub fn concordance_index(outcomes: &[SurvivalOutcome]) -> Result<f64> {
    let mut risks: Vec<f64> = outcomes.iter().map(|o| o.risk).collect();
    risks.sort_by(f64::total_cmp);
    risks.dedup();
    let rank = |r: f64| risks.partition_point(|&x| x < r);

    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| outcomes[b].time.total_cmp(&outcomes[a].time));

    let mut tree = Fenwick::new(risks.len());
    let mut inserted = 0u64;
    let (mut comparable, mut twice_concordant) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let t = outcomes[order[i]].time;
        let mut j = i;
        while j < order.len() && outcomes[order[j]].time == t {
            j += 1;
        }
        for &a in &order[i..j] {
            if outcomes[a].event {
                let r = rank(outcomes[a].risk);
                let below = tree.prefix(r);
                let tied = tree.prefix(r + 1) - below;
                comparable += inserted;
                twice_concordant += 2 * below + tied;
            }
        }
        for &a in &order[i..j] {
            tree.add(rank(outcomes[a].risk));
            inserted += 1;
        }
        i = j;
    }
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(twice_concordant as f64 / (2 * comparable) as f64)
}

// ---------------------------------------------------------------------------
// Brier score

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BrierTarget {
    Interval(usize),
    /// Mean over every interval with at least one determinable patient.
    Averaged,
}

fn brier_at(outcomes: &[SurvivalOutcome], j: usize) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for o in outcomes {
        let (Some(interval), Some(s)) = (o.interval, o.survival.as_ref()) else {
            return Err(Error::Config("Brier score needs interval labels and survival curves".into()));
        };
        if j >= s.len() {
            return Err(Error::InvalidInterval { index: j, k: s.len() });
        }
        let alive = if interval > j {
            1.0
        } else if o.event {
            0.0
        } else {
            continue;
        };
        sum += (alive - s[j]).powi(2);
        n += 1;
    }
    Ok((n > 0).then(|| sum / n as f64))
}

pub fn brier_score(outcomes: &[SurvivalOutcome], target: BrierTarget) -> Result<f64> {
    match target {
        BrierTarget::Interval(j) => brier_at(outcomes, j)?.ok_or(Error::NoDeterminablePatients),
        BrierTarget::Averaged => {
            let k = outcomes
                .iter()
                .filter_map(|o| o.survival.as_ref().map(Vec::len))
                .max()
                .ok_or(Error::NoDeterminablePatients)?;
            let mut scores = Vec::with_capacity(k);
            for j in 0..k {
                if let Some(b) = brier_at(outcomes, j)? {
                    scores.push(b);
                }
            }
            if scores.is_empty() {
                return Err(Error::NoDeterminablePatients);
            }
            Ok(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }
}

// ---------------------------------------------------------------------------
// Kaplan–Meier

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KmPoint {
    pub time: f64,
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KmCurve {
    pub points: Vec<KmPoint>,
}

impl KmCurve {
    /// Estimate at time `t` (1.0 before the first step).
    pub fn survival_at(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|p| p.time <= t);
        if idx == 0 {
            1.0
        } else {
            self.points[idx - 1].survival
        }
    }
}

/// Product-limit estimator with one step per distinct observed time.
pub fn kaplan_meier(outcomes: &[SurvivalOutcome]) -> KmCurve {
    let mut sorted: Vec<(f64, bool)> = outcomes.iter().map(|o| (o.time, o.event)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = Vec::new();
    let mut at_risk = sorted.len();
    let mut s = 1.0;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let mut j = i;
        let mut events = 0;
        while j < sorted.len() && sorted[j].0 == t {
            events += usize::from(sorted[j].1);
            j += 1;
        }
        if events > 0 {
            s *= 1.0 - events as f64 / at_risk as f64;
        }
        points.push(KmPoint {
            time: t,
            survival: s,
            at_risk,
            events,
        });
        at_risk -= j - i;
        i = j;
    }
    KmCurve { points }
}

// ---------------------------------------------------------------------------
// Logrank

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogrankResult {
    pub chi2: f64,
    pub p: f64,
    pub observed_a: f64,
    pub expected_a: f64,
    pub variance: f64,
}

/// Upper tail of the one-degree-of-freedom chi-square distribution.
pub fn chi2_df1_sf(chi2: f64) -> f64 {
    libm::erfc((chi2 / 2.0).sqrt())
}

pub fn logrank_test(group_a: &[SurvivalOutcome], group_b: &[SurvivalOutcome]) -> Result<LogrankResult> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::Config("logrank test needs two nonempty groups".into()));
    }
    let mut pooled: Vec<(f64, bool, bool)> = group_a
        .iter()
        .map(|o| (o.time, o.event, true))
        .chain(group_b.iter().map(|o| (o.time, o.event, false)))
        .collect();
    if !pooled.iter().any(|p| p.1) {
        return Err(Error::Config("logrank test needs at least one event".into()));
    }
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut n_a = group_a.len() as f64;
    let mut n = pooled.len() as f64;
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let mut j = i;
        let (mut d, mut d_a, mut leave_a) = (0.0, 0.0, 0.0);
        while j < pooled.len() && pooled[j].0 == t {
            let (_, event, in_a) = pooled[j];
            if event {
                d += 1.0;
                if in_a {
                    d_a += 1.0;
                }
            }
            if in_a {
                leave_a += 1.0;
            }
            j += 1;
        }
        if d > 0.0 {
            observed += d_a;
            expected += d * n_a / n;
            if n > 1.0 {
                variance += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
            }
        }
        n_a -= leave_a;
        n -= (j - i) as f64;
        i = j;
    }
    if variance <= 0.0 {
        return Ok(LogrankResult {
            chi2: 0.0,
            p: 1.0,
            observed_a: observed,
            expected_a: expected,
            variance,
        });
    }
    let chi2 = (observed - expected).powi(2) / variance;
    Ok(LogrankResult {
        chi2,
        p: chi2_df1_sf(chi2),
        observed_a: observed,
        expected_a: expected,
        variance,
    })
}

// ---------------------------------------------------------------------------
// Stratification

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MedianSplit {
    pub threshold: f64,
    /// Indices with risk strictly above the median.
    pub high: Vec<usize>,
    pub low: Vec<usize>,
}

pub fn median_risk(risks: &[f64]) -> Result<f64> {
    if risks.is_empty() {
        return Err(Error::EmptyVector);
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

pub fn median_split(outcomes: &[SurvivalOutcome]) -> Result<MedianSplit> {
    if outcomes.len() < 2 {
        return Err(Error::Config("median split needs at least 2 patients".into()));
    }
    let risks: Vec<f64> = outcomes.iter().map(|o| o.risk).collect();
    let threshold = median_risk(&risks)?;
    let (high, low) = (0..outcomes.len()).partition(|&i| risks[i] > threshold);
    Ok(MedianSplit {
        threshold,
        high,
        low,
    })
}

/// Logrank test between the high- and low-risk halves; a split with an empty
/// side yields `chi2 = 0, p = 1`.
pub fn stratified_logrank(outcomes: &[SurvivalOutcome]) -> Result<(MedianSplit, LogrankResult)> {
    let split = median_split(outcomes)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| outcomes[i].clone()).collect::<Vec<_>>();
    let (high, low) = (pick(&split.high), pick(&split.low));
    let result = if high.is_empty() || low.is_empty() || !outcomes.iter().any(|o| o.event) {
        LogrankResult {
            chi2: 0.0,
            p: 1.0,
            observed_a: 0.0,
            expected_a: 0.0,
            variance: 0.0,
        }
    } else {
        logrank_test(&high, &low)?
    };
    Ok((split, result))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub ci: f64,
    pub brier: f64,
    pub logrank_chi2: f64,
    pub logrank_p: f64,
    pub n: usize,
    pub n_events: usize,
}

pub fn metrics_bundle(outcomes: &[SurvivalOutcome]) -> Result<MetricsBundle> {
    let (_, lr) = stratified_logrank(outcomes)?;
    Ok(MetricsBundle {
        ci: concordance_index(outcomes)?,
        brier: brier_score(outcomes, BrierTarget::Averaged)?,
        logrank_chi2: lr.chi2,
        logrank_p: lr.p,
        n: outcomes.len(),
        n_events: outcomes.iter().filter(|o| o.event).count(),
    })
}

/// `group,time,survival,at_risk,events` rows.
pub fn km_csv(groups: &[(&str, &KmCurve)]) -> String {
    let mut out = String::from("group,time,survival,at_risk,events\n");
    for (name, curve) in groups {
        for p in &curve.points {
            let _ = writeln!(out, "{name},{},{},{},{}", p.time, p.survival, p.at_risk, p.events);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    fn outcomes(times: &[f64], events: &[bool], risks: &[f64]) -> Vec<SurvivalOutcome> {
        times
            .iter()
            .zip(events)
            .zip(risks)
            .map(|((&t, &e), &r)| SurvivalOutcome::new(t, e, r))
            .collect()
    }

    /// O(n²) enumeration of comparable pairs.
    fn ci_oracle(o: &[SurvivalOutcome]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for a in o {
            for b in o {
                if a.event && a.time < b.time {
                    den += 1.0;
                    if a.risk > b.risk {
                        num += 1.0;
                    } else if a.risk == b.risk {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    /// Product over distinct event times with at-risk sets counted directly.
    fn km_oracle(o: &[SurvivalOutcome], t: f64) -> f64 {
        let mut times: Vec<f64> = o.iter().filter(|x| x.event && x.time <= t).map(|x| x.time).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut s = 1.0;
        for u in times {
            let n = o.iter().filter(|x| x.time >= u).count();
            let d = o.iter().filter(|x| x.time == u && x.event).count();
            s *= 1.0 - d as f64 / n as f64;
        }
        s
    }

    fn logrank_oracle(a: &[SurvivalOutcome], b: &[SurvivalOutcome]) -> f64 {
        let mut times: Vec<f64> = a.iter().chain(b).filter(|x| x.event).map(|x| x.time).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let (mut o_a, mut e_a, mut v) = (0.0, 0.0, 0.0);
        for t in times {
            let na = a.iter().filter(|x| x.time >= t).count() as f64;
            let nb = b.iter().filter(|x| x.time >= t).count() as f64;
            let da = a.iter().filter(|x| x.time == t && x.event).count() as f64;
            let db = b.iter().filter(|x| x.time == t && x.event).count() as f64;
            let (n, d) = (na + nb, da + db);
            o_a += da;
            e_a += d * na / n;
            if n > 1.0 {
                v += d * na * nb * (n - d) / (n * n * (n - 1.0));
            }
        }
        if v > 0.0 {
            (o_a - e_a).powi(2) / v
        } else {
            0.0
        }
    }

    fn brier_oracle(o: &[SurvivalOutcome], j: usize) -> Option<f64> {
        let terms: Vec<f64> = o
            .iter()
            .filter_map(|x| {
                let i = x.interval.unwrap();
                let s = x.survival.as_ref().unwrap()[j];
                if i > j {
                    Some((1.0 - s) * (1.0 - s))
                } else if x.event {
                    Some(s * s)
                } else {
                    None
                }
            })
            .collect();
        (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64)
    }

    fn random_instance(rng: &mut SeededRng, n: usize) -> Vec<SurvivalOutcome> {
        (0..n)
            .map(|_| {
                // coarse grids force ties in time and risk
                let time = rng.int_inclusive(1, 12) as f64;
                let event = rng.bernoulli(0.6);
                let risk = rng.int_inclusive(0, 8) as f64 * 0.25;
                let interval = rng.int_inclusive(0, 3);
                let mut s = 1.0;
                let survival = (0..4)
                    .map(|_| {
                        s *= 1.0 - rng.uniform();
                        s
                    })
                    .collect();
                SurvivalOutcome {
                    time,
                    event,
                    risk,
                    interval: Some(interval),
                    survival: Some(survival),
                }
            })
            .collect()
    }

    #[test]
    fn ci_examples() {
        let e = [true; 3];
        assert_eq!(concordance_index(&outcomes(&[1.0, 2.0, 3.0], &e, &[3.0, 2.0, 1.0])).unwrap(), 1.0);
        assert_eq!(concordance_index(&outcomes(&[1.0, 2.0, 3.0], &e, &[1.0, 2.0, 3.0])).unwrap(), 0.0);
        let o = outcomes(&[2.0, 4.0, 6.0], &[true, false, true], &[0.9, 0.5, 0.3]);
        assert_eq!(ci_oracle(&o), Some(1.0));
        assert_eq!(concordance_index(&o).unwrap(), 1.0);
        let none = outcomes(&[1.0, 2.0], &[false, false], &[0.0, 1.0]);
        assert_eq!(concordance_index(&none).unwrap_err().to_string(), "no comparable pairs");
        let tie = outcomes(&[1.0, 2.0], &[true, true], &[0.5, 0.5]);
        assert_eq!(concordance_index(&tie).unwrap(), 0.5);
    }

    #[test]
    fn ci_oracle_agreement() {
        let mut rng = SeededRng::new(100);
        for _ in 0..200 {
            let n = rng.int_inclusive(2, 30);
            let o = random_instance(&mut rng, n);
            match ci_oracle(&o) {
                Some(expected) => assert_eq!(concordance_index(&o).unwrap(), expected),
                None => assert!(concordance_index(&o).is_err()),
            }
        }
    }

    #[test]
    fn brier_examples() {
        let mk = |interval, event, s: Vec<f64>| SurvivalOutcome {
            time: 1.0,
            event,
            risk: 0.0,
            interval: Some(interval),
            survival: Some(s),
        };
        // perfect predictions at j* = 1
        let perfect = vec![mk(0, true, vec![0.0, 0.0, 0.0]), mk(2, true, vec![1.0, 1.0, 1.0])];
        assert_eq!(brier_score(&perfect, BrierTarget::Interval(1)).unwrap(), 0.0);

        let half = vec![mk(0, true, vec![0.5; 3]), mk(2, false, vec![0.5; 3]), mk(1, true, vec![0.5; 3])];
        assert_eq!(brier_score(&half, BrierTarget::Averaged).unwrap(), 0.25);

        // one exclusion: censored in interval 0 is unknown at j* = 1
        let three = vec![
            mk(0, false, vec![0.9, 0.8, 0.7]),
            mk(1, true, vec![0.6, 0.3, 0.2]),
            mk(2, false, vec![0.95, 0.9, 0.5]),
        ];
        let direct = ((0.0 - 0.3f64).powi(2) + (1.0 - 0.9f64).powi(2)) / 2.0;
        assert!((brier_score(&three, BrierTarget::Interval(1)).unwrap() - direct).abs() < 1e-15);

        let unknown = vec![mk(0, false, vec![0.5, 0.5])];
        assert!(brier_score(&unknown, BrierTarget::Interval(0)).is_err());
    }

    #[test]
    fn brier_oracle_agreement() {
        let mut rng = SeededRng::new(101);
        for _ in 0..200 {
            let n = rng.int_inclusive(1, 30);
            let o = random_instance(&mut rng, n);
            for j in 0..4 {
                match brier_oracle(&o, j) {
                    Some(b) => assert!((brier_score(&o, BrierTarget::Interval(j)).unwrap() - b).abs() < 1e-10),
                    None => assert!(brier_score(&o, BrierTarget::Interval(j)).is_err()),
                }
            }
            let per: Vec<f64> = (0..4).filter_map(|j| brier_oracle(&o, j)).collect();
            if !per.is_empty() {
                let mean = per.iter().sum::<f64>() / per.len() as f64;
                assert!((brier_score(&o, BrierTarget::Averaged).unwrap() - mean).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn km_examples() {
        let two = outcomes(&[1.0, 2.0], &[true, true], &[0.0, 0.0]);
        let km = kaplan_meier(&two);
        assert_eq!(km.survival_at(1.0), 0.5);
        assert_eq!(km.survival_at(2.0), 0.0);
        assert_eq!(km.survival_at(0.5), 1.0);

        let censored = outcomes(&[1.0, 3.0, 5.0], &[false; 3], &[0.0; 3]);
        assert!(kaplan_meier(&censored).points.iter().all(|p| p.survival == 1.0));

        let mixed = outcomes(&[1.0, 2.0, 2.0, 4.0], &[true, false, true, true], &[0.0; 4]);
        let km = kaplan_meier(&mixed);
        // t=1: 1·(1−1/4); t=2: ·(1−1/3); t=4: ·(1−1/1)
        assert_eq!(km.survival_at(1.0), 0.75);
        assert_eq!(km.survival_at(2.0), 0.75 * (1.0 - 1.0 / 3.0));
        assert_eq!(km.survival_at(4.0), 0.0);
        assert_eq!(km.points[1].at_risk, 3);
    }

    #[test]
    fn km_oracle_agreement() {
        let mut rng = SeededRng::new(102);
        for _ in 0..200 {
            let n = rng.int_inclusive(1, 30);
            let o = random_instance(&mut rng, n);
            let km = kaplan_meier(&o);
            for p in &km.points {
                assert_eq!(p.survival, km_oracle(&o, p.time));
                assert_eq!(p.at_risk, o.iter().filter(|x| x.time >= p.time).count());
            }
            assert!(km.points.windows(2).all(|w| w[1].survival <= w[0].survival && w[1].at_risk <= w[0].at_risk));
        }
    }

    #[test]
    fn km_without_censoring_is_empirical() {
        let mut rng = SeededRng::new(103);
        let o: Vec<SurvivalOutcome> = (0..25)
            .map(|_| SurvivalOutcome::new(rng.int_inclusive(1, 10) as f64, true, 0.0))
            .collect();
        let km = kaplan_meier(&o);
        for p in &km.points {
            let empirical = o.iter().filter(|x| x.time > p.time).count() as f64 / o.len() as f64;
            assert!((p.survival - empirical).abs() < 1e-12);
        }
    }

    #[test]
    fn logrank_examples() {
        let g = outcomes(&[1.0, 2.0, 3.0], &[true, true, false], &[0.0; 3]);
        let r = logrank_test(&g, &g).unwrap();
        assert_eq!(r.chi2, 0.0);
        assert_eq!(r.p, 1.0);

        assert!((chi2_df1_sf(3.841459) - 0.05).abs() < 1e-4);

        let a: Vec<_> = (1..=20).map(|t| SurvivalOutcome::new(t as f64, true, 0.0)).collect();
        let b: Vec<_> = (21..=40).map(|t| SurvivalOutcome::new(t as f64, true, 0.0)).collect();
        let r = logrank_test(&a, &b).unwrap();
        assert!((r.chi2 - logrank_oracle(&a, &b)).abs() < 1e-10);
        assert!(r.p < 1e-5, "p = {}", r.p);
    }

    #[test]
    fn logrank_oracle_agreement() {
        let mut rng = SeededRng::new(104);
        let mut checked = 0;
        while checked < 200 {
            let n = rng.int_inclusive(2, 30);
            let o = random_instance(&mut rng, n);
            let cut = rng.int_inclusive(1, n - 1);
            let (a, b) = o.split_at(cut);
            if !o.iter().any(|x| x.event) {
                continue;
            }
            let r = logrank_test(a, b).unwrap();
            assert!((r.chi2 - logrank_oracle(a, b)).abs() < 1e-10);
            assert!((r.p - chi2_df1_sf(r.chi2)).abs() < 1e-15);
            checked += 1;
        }
    }

    #[test]
    fn median_split_examples() {
        let o = outcomes(&[1.0; 4], &[true; 4], &[1.0, 2.0, 3.0, 4.0]);
        let s = median_split(&o).unwrap();
        assert_eq!(s.threshold, 2.5);
        assert_eq!(s.high, vec![2, 3]);
        assert_eq!(s.low, vec![0, 1]);

        let flat = outcomes(&[1.0; 3], &[true; 3], &[0.7; 3]);
        let s = median_split(&flat).unwrap();
        assert!(s.high.is_empty());
        assert_eq!(s.low.len(), 3);

        let odd = outcomes(&[1.0; 5], &[true; 5], &[5.0, 1.0, 4.0, 2.0, 3.0]);
        assert_eq!(median_split(&odd).unwrap().low.len(), 3);
    }

    proptest! {
        #[test]
        fn ci_reversal_and_rank_invariance(seed in 0u64..5000) {
            let mut rng = SeededRng::new(seed);
            let n = rng.int_inclusive(3, 30);
            let o: Vec<SurvivalOutcome> = (0..n)
                .map(|_| SurvivalOutcome::new(rng.int_inclusive(1, 15) as f64, rng.bernoulli(0.7), rng.normal()))
                .collect();
            prop_assume!(ci_oracle(&o).is_some());
            let ci = concordance_index(&o).unwrap();
            let neg: Vec<_> = o.iter().map(|x| SurvivalOutcome { risk: -x.risk, ..x.clone() }).collect();
            prop_assert!((ci + concordance_index(&neg).unwrap() - 1.0).abs() < 1e-12);
            let mono: Vec<_> = o.iter().map(|x| SurvivalOutcome { risk: x.risk.exp() * 3.0 + 1.0, ..x.clone() }).collect();
            prop_assert_eq!(ci, concordance_index(&mono).unwrap());
        }
    }
}
