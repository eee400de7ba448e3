use crate::error::{Error, Result};

fn check(risk: &[f64], time: &[f64], event: &[bool]) -> Result<()> {
    if risk.len() != time.len() || risk.len() != event.len() {
        return Err(Error::invalid("C-index inputs differ in length"));
    }
    if risk.iter().chain(time).any(|x| !x.is_finite()) {
        return Err(Error::invalid("C-index inputs must be finite"));
    }
    Ok(())
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted positions < i.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C-index in O(n log n). A pair (i, j) is comparable when
/// `time[i] < time[j]` and `event[i]`; tied risks earn half credit.
pub fn concordance_index(risk: &[f64], time: &[f64], event: &[bool]) -> Result<f64> {
    check(risk, time, event)?;
    let mut levels: Vec<f64> = risk.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let rank = |r: f64| levels.partition_point(|&x| x < r);
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
    let mut tree = Fenwick(vec![0; levels.len() + 1]);
    let (mut conc, mut ties, mut comparable) = (0u64, 0u64, 0u64);
    let mut inserted = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && time[order[j + 1]] == time[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if event[k] {
                let r = rank(risk[k]);
                let below = tree.prefix(r);
                let tied = tree.prefix(r + 1) - below;
                conc += below;
                ties += tied;
                comparable += inserted;
            }
        }
        for &k in &order[i..=j] {
            tree.add(rank(risk[k]));
            inserted += 1;
        }
        i = j + 1;
    }
    if comparable == 0 {
        return Err(Error::UndefinedCIndex("no comparable pairs".into()));
    }
    Ok((conc as f64 + 0.5 * ties as f64) / comparable as f64)
}

/// O(n^2) pair enumeration with the same conventions.
pub fn concordance_index_brute_force(risk: &[f64], time: &[f64], event: &[bool]) -> Result<f64> {
    check(risk, time, event)?;
    let (mut num, mut den) = (0.0, 0u64);
    for i in 0..risk.len() {
        for j in 0..risk.len() {
            if event[i] && time[i] < time[j] {
                den += 1;
                if risk[i] > risk[j] {
                    num += 1.0;
                } else if risk[i] == risk[j] {
                    num += 0.5;
                }
            }
        }
    }
    if den == 0 {
        return Err(Error::UndefinedCIndex("no comparable pairs".into()));
    }
    Ok(num / den as f64)
}
