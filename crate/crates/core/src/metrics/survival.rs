use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Kaplan-Meier step function evaluated at each distinct event time.
#[derive(Clone, Debug, PartialEq)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// S(t), with S = 1 before the first event.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

fn check(time: &[f64], event: &[bool]) -> Result<()> {
    if time.len() != event.len() {
        return Err(Error::invalid("time and event lengths differ"));
    }
    if time.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::invalid("survival times must be finite and non-negative"));
    }
    Ok(())
}

pub fn kaplan_meier(time: &[f64], event: &[bool]) -> Result<KmCurve> {
    check(time, event)?;
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
    let mut curve = KmCurve { times: Vec::new(), survival: Vec::new(), at_risk: Vec::new(), events: Vec::new() };
    let mut s = 1.0;
    let mut at_risk = time.len();
    let mut i = 0;
    while i < order.len() {
        let t = time[order[i]];
        let group = order[i..].iter().take_while(|&&k| time[k] == t).count();
        let d = order[i..i + group].iter().filter(|&&k| event[k]).count();
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
        at_risk -= group;
        i += group;
    }
    Ok(curve)
}

/// Two-group log-rank test; returns (chi-square, p) with one degree of freedom.
pub fn logrank_test(time: &[f64], event: &[bool], group: &[bool]) -> Result<(f64, f64)> {
    check(time, event)?;
    if group.len() != time.len() {
        return Err(Error::invalid("group labels differ in length"));
    }
    let mut times: Vec<f64> = time.iter().zip(event).filter(|(_, e)| **e).map(|(t, _)| *t).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let (mut obs_minus_exp, mut var) = (0.0, 0.0);
    for &t in &times {
        let (mut n, mut n1, mut d, mut d1) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..time.len() {
            if time[k] >= t {
                n += 1.0;
                if group[k] {
                    n1 += 1.0;
                }
                if time[k] == t && event[k] {
                    d += 1.0;
                    if group[k] {
                        d1 += 1.0;
                    }
                }
            }
        }
        obs_minus_exp += d1 - d * n1 / n;
        if n > 1.0 {
            var += d * (n1 / n) * (1.0 - n1 / n) * (n - d) / (n - 1.0);
        }
    }
    if var <= 0.0 {
        return Ok((0.0, 1.0));
    }
    let chi2 = obs_minus_exp * obs_minus_exp / var;
    Ok((chi2, erfc((chi2 / 2.0).sqrt())))
}

/// `true` marks the high-risk group (risk above the median).
pub fn median_split(risk: &[f64]) -> Result<(f64, Vec<bool>)> {
    if risk.is_empty() {
        return Err(Error::invalid("empty risk vector"));
    }
    let mut s = risk.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    let median = if m % 2 == 1 { s[m / 2] } else { (s[m / 2 - 1] + s[m / 2]) / 2.0 };
    let high: Vec<bool> = risk.iter().map(|&r| r > median).collect();
    if high.iter().all(|h| *h) || high.iter().all(|h| !*h) {
        return Err(Error::DegenerateSplit("median split leaves one group empty".into()));
    }
    Ok((median, high))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KmLogRank {
    pub threshold: f64,
    pub high: KmCurve,
    pub low: KmCurve,
    pub chi2: f64,
    pub p_value: f64,
}

impl KmLogRank {
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("group,time,survival,at_risk,events\n");
        for (name, c) in [("high", &self.high), ("low", &self.low)] {
            s.push_str(&format!("{name},0,1,,\n"));
            for i in 0..c.times.len() {
                s.push_str(&format!("{name},{},{},{},{}\n", c.times[i], c.survival[i], c.at_risk[i], c.events[i]));
            }
        }
        s
    }
}

/// Median-cutoff stratification followed by a log-rank test.
pub fn km_logrank(risk: &[f64], time: &[f64], event: &[bool]) -> Result<KmLogRank> {
    check(time, event)?;
    if risk.len() != time.len() {
        return Err(Error::invalid("risk and time lengths differ"));
    }
    if risk.len() < 4 {
        return Err(Error::invalid("need at least 4 samples"));
    }
    let (threshold, high) = median_split(risk)?;
    let pick = |g: bool| -> (Vec<f64>, Vec<bool>) {
        (0..risk.len()).filter(|&k| high[k] == g).map(|k| (time[k], event[k])).unzip()
    };
    let (th, eh) = pick(true);
    let (tl, el) = pick(false);
    let (chi2, p_value) = logrank_test(time, event, &high)?;
    Ok(KmLogRank { threshold, high: kaplan_meier(&th, &eh)?, low: kaplan_meier(&tl, &el)?, chi2, p_value })
}
