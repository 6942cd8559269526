use std::fmt;
use std::str::FromStr;

use super::dataset::{Dataset, DatasetStats};
use super::filter::{augment, last_item_pairs};
use crate::error::{invalid, Error, Result};
use crate::sessgraph::Session;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Where the test period begins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TestRule {
    /// The last `n` calendar days (UTC) of the log.
    FinalDays(u32),
    /// An explicit unix timestamp.
    Cutoff(f64),
}

impl TestRule {
    pub fn cutoff(self, max_ts: f64) -> f64 {
        match self {
            TestRule::FinalDays(n) => {
                let last_day = (max_ts / SECONDS_PER_DAY).floor() * SECONDS_PER_DAY;
                last_day - f64::from(n.saturating_sub(1)) * SECONDS_PER_DAY
            }
            TestRule::Cutoff(t) => t,
        }
    }
}

impl fmt::Display for TestRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestRule::FinalDays(n) => write!(f, "final_days:{n}"),
            TestRule::Cutoff(t) => write!(f, "cutoff:{t}"),
        }
    }
}

impl FromStr for TestRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, v) = s
            .split_once(':')
            .ok_or_else(|| invalid!("test rule `{s}` should be final_days:N or cutoff:T"))?;
        match kind {
            "final_days" => v
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .map(TestRule::FinalDays)
                .ok_or_else(|| invalid!("bad day count `{v}`")),
            "cutoff" => v
                .parse()
                .map(TestRule::Cutoff)
                .map_err(|_| invalid!("bad cutoff `{v}`")),
            _ => Err(invalid!("unknown test rule `{kind}`")),
        }
    }
}

/// Share of the training period to keep, most recent first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fraction {
    pub num: u32,
    pub den: u32,
}

impl Fraction {
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num == 0 || num > den {
            return Err(invalid!("fraction {num}/{den} must lie in (0, 1]"));
        }
        Ok(Fraction { num, den })
    }

    /// `⌈count · num / den⌉`
    pub fn of(self, count: usize) -> usize {
        (count as u64 * u64::from(self.num)).div_ceil(u64::from(self.den)) as usize
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Fraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid!("fraction `{s}` should look like 1, 1/4 or 1/64");
        match s.split_once('/') {
            Some((n, d)) => Fraction::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => Fraction::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub test_rule: TestRule,
    pub fraction: Fraction,
    pub augment: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub cutoff: f64,
    /// Sessions that start before the cutoff but end after it; they belong
    /// to neither side.
    pub straddling: usize,
    pub augment: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitStats {
    pub clicks: usize,
    pub train_sessions: usize,
    pub test_sessions: usize,
    pub items: usize,
    pub avg_len: f64,
    pub train_pairs: usize,
    pub test_pairs: usize,
}

impl Split {
    pub fn train_pairs(&self) -> Vec<Session> {
        if self.augment {
            augment(&self.train)
        } else {
            last_item_pairs(&self.train)
        }
    }

    pub fn test_pairs(&self) -> Vec<Session> {
        if self.augment {
            augment(&self.test)
        } else {
            last_item_pairs(&self.test)
        }
    }

    pub fn stats(&self) -> SplitStats {
        let tr: DatasetStats = self.train.stats();
        let te: DatasetStats = self.test.stats();
        let clicks = tr.clicks + te.clicks;
        let sessions = tr.sessions + te.sessions;
        let pairs = |ds: &Dataset| {
            if self.augment {
                ds.sessions.iter().map(|s| s.len() - 1).sum()
            } else {
                ds.sessions.len()
            }
        };
        SplitStats {
            clicks,
            train_sessions: tr.sessions,
            test_sessions: te.sessions,
            items: self.train.vocab.len(),
            avg_len: clicks as f64 / sessions as f64,
            train_pairs: pairs(&self.train),
            test_pairs: pairs(&self.test),
        }
    }
}

/// Temporal split. Test sessions start at or after the cutoff, training
/// sessions end before it; the training side is then cut down to its most
/// recent `fraction` by end time. Both sides are re-indexed onto the items
/// that remain in training, dropping unknown items from test sessions and
/// test sessions left shorter than two clicks.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<Split> {
    if ds.sessions.iter().any(|s| s.timestamps.is_none()) {
        return Err(Error::Data("temporal split needs timestamps on every session".into()));
    }
    let max_ts = ds
        .sessions
        .iter()
        .filter_map(Session::last_timestamp)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_ts.is_finite() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let cutoff = spec.test_rule.cutoff(max_ts);

    let mut train: Vec<&Session> = Vec::new();
    let mut test: Vec<&Session> = Vec::new();
    let mut straddling = 0;
    for s in &ds.sessions {
        if s.first_timestamp().unwrap() >= cutoff {
            test.push(s);
        } else if s.last_timestamp().unwrap() < cutoff {
            train.push(s);
        } else {
            straddling += 1;
        }
    }

    let keep = spec.fraction.of(train.len());
    if keep < train.len() {
        let mut by_end: Vec<usize> = (0..train.len()).collect();
        by_end.sort_by(|&a, &b| {
            let (sa, sb) = (train[a], train[b]);
            sb.last_timestamp()
                .unwrap()
                .total_cmp(&sa.last_timestamp().unwrap())
                .then_with(|| sb.id.cmp(&sa.id))
        });
        let mut chosen = vec![false; train.len()];
        for &i in &by_end[..keep] {
            chosen[i] = true;
        }
        let mut c = chosen.iter();
        train.retain(|_| *c.next().unwrap());
    }

    let mut known = vec![false; ds.vocab.len()];
    for s in &train {
        for &i in &s.items {
            known[i] = true;
        }
    }
    let (vocab, remap) = ds.vocab.restrict(&known);
    let remap_session = |s: &Session| -> Option<Session> {
        let mut items = Vec::with_capacity(s.len());
        let mut ts = Vec::with_capacity(s.len());
        let times = s.timestamps.as_ref().unwrap();
        for (k, &i) in s.items.iter().enumerate() {
            if let Some(j) = remap[i] {
                items.push(j);
                ts.push(times[k]);
            }
        }
        (items.len() >= 2).then(|| Session {
            id: s.id.clone(),
            items,
            timestamps: Some(ts),
            label: None,
        })
    };
    let train_sessions: Vec<Session> = train
        .iter()
        .map(|s| Session {
            items: s.items.iter().map(|&i| remap[i].expect("training item")).collect(),
            ..(*s).clone()
        })
        .collect();
    let test_sessions: Vec<Session> = test.iter().filter_map(|s| remap_session(s)).collect();
    if train_sessions.is_empty() || test_sessions.is_empty() {
        return Err(Error::Data(format!(
            "cutoff {cutoff} leaves {} training and {} test sessions",
            train_sessions.len(),
            test_sessions.len()
        )));
    }

    let mut manifest = ds.manifest.clone();
    manifest
        .set("split.test_rule", spec.test_rule)
        .set("split.cutoff", cutoff)
        .set("split.fraction", spec.fraction)
        .set("split.augment", spec.augment)
        .set("split.straddling", straddling);
    let mut train = Dataset {
        sessions: train_sessions,
        vocab: vocab.clone(),
        manifest: manifest.clone(),
    };
    let mut test = Dataset {
        sessions: test_sessions,
        vocab,
        manifest,
    };
    train.manifest.set("part", "train");
    train.record_stats("");
    test.manifest.set("part", "test");
    test.record_stats("");
    Ok(Split {
        train,
        test,
        cutoff,
        straddling,
        augment: spec.augment,
    })
}

/// Holds out the last `test_count` sessions in dataset order; for data
/// without a calendar, such as the synthetic generator's output.
pub fn split_tail(ds: &Dataset, test_count: usize) -> Result<(Dataset, Dataset)> {
    if test_count == 0 || test_count >= ds.sessions.len() {
        return Err(Error::Data(format!(
            "cannot hold out {test_count} of {} sessions",
            ds.sessions.len()
        )));
    }
    let cut = ds.sessions.len() - test_count;
    let part = |sessions: &[Session], name: &str| {
        let mut d = Dataset {
            sessions: sessions.to_vec(),
            vocab: ds.vocab.clone(),
            manifest: ds.manifest.clone(),
        };
        d.manifest.set("part", name);
        d
    };
    Ok((part(&ds.sessions[..cut], "train"), part(&ds.sessions[cut..], "test")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::dataset::Vocab;
    use crate::manifest::Manifest;

    fn session(id: &str, items: &[usize], start: f64) -> Session {
        Session {
            id: id.into(),
            items: items.to_vec(),
            timestamps: Some((0..items.len()).map(|k| start + k as f64 * 60.0).collect()),
            label: None,
        }
    }

    fn toy() -> Dataset {
        // eight training sessions on day 0, ends ordered by index; two test
        // sessions on day 2
        let mut sessions: Vec<Session> = (0..8)
            .map(|k| session(&format!("t{k}"), &[k % 4, (k + 1) % 4], 1000.0 * k as f64))
            .collect();
        sessions.push(session("x", &[3, 0, 9], 2.0 * SECONDS_PER_DAY + 10.0));
        sessions.push(session("y", &[9, 2], 2.0 * SECONDS_PER_DAY + 20.0));
        Dataset {
            sessions,
            vocab: Vocab::from_raw((0..10).map(|i| i.to_string())),
            manifest: Manifest::new(),
        }
    }

    fn spec(fraction: Fraction) -> SplitSpec {
        SplitSpec {
            test_rule: TestRule::FinalDays(1),
            fraction,
            augment: true,
        }
    }

    #[test]
    fn final_day_cutoff_and_unknown_items() {
        let s = split(&toy(), spec(Fraction::ONE)).unwrap();
        assert_eq!(s.cutoff, 2.0 * SECONDS_PER_DAY);
        assert_eq!(s.train.sessions.len(), 8);
        // item 9 never occurs in training: dropped from "x", "y" falls below 2
        assert_eq!(s.test.sessions.len(), 1);
        assert_eq!(s.test.sessions[0].len(), 2);
        assert_eq!(s.train.vocab.len(), 4);
    }

    #[test]
    fn quarter_keeps_most_recent() {
        let s = split(&toy(), spec(Fraction::new(1, 4).unwrap())).unwrap();
        let ids: Vec<&str> = s.train.sessions.iter().map(|x| x.id.as_str()).collect();
        assert_eq!(ids, vec!["t6", "t7"]);
    }

    #[test]
    fn fractions_share_the_test_period() {
        let mut ds = toy();
        for k in 0..40 {
            ds.sessions
                .push(session(&format!("u{k}"), &[k % 3, 3], 100.0 + k as f64));
        }
        super::super::parse::sort_sessions(&mut ds.sessions);
        let a = split(&ds, spec(Fraction::new(1, 64).unwrap())).unwrap();
        let b = split(&ds, spec(Fraction::new(1, 4).unwrap())).unwrap();
        let ids = |s: &Split| s.test.sessions.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn straddling_sessions_are_dropped() {
        let mut ds = toy();
        ds.sessions.push(session("z", &[0, 1, 2], 2.0 * SECONDS_PER_DAY - 60.0));
        let s = split(&ds, spec(Fraction::ONE)).unwrap();
        assert_eq!(s.straddling, 1);
        let max_train = s
            .train
            .sessions
            .iter()
            .map(|x| x.last_timestamp().unwrap())
            .fold(f64::MIN, f64::max);
        let min_test = s
            .test
            .sessions
            .iter()
            .map(|x| x.first_timestamp().unwrap())
            .fold(f64::MAX, f64::min);
        assert!(max_train <= min_test);
    }

    #[test]
    fn empty_side_fails() {
        let rule = SplitSpec {
            test_rule: TestRule::Cutoff(1e12),
            ..spec(Fraction::ONE)
        };
        assert!(split(&toy(), rule).is_err());
    }

    #[test]
    fn parsing() {
        assert_eq!("1/64".parse::<Fraction>().unwrap(), Fraction { num: 1, den: 64 });
        assert_eq!("1".parse::<Fraction>().unwrap(), Fraction::ONE);
        assert!("0".parse::<Fraction>().is_err());
        assert!("3/2".parse::<Fraction>().is_err());
        assert_eq!("final_days:7".parse::<TestRule>().unwrap(), TestRule::FinalDays(7));
        assert!("final_days:0".parse::<TestRule>().is_err());
        assert_eq!(Fraction::new(1, 4).unwrap().of(8), 2);
        assert_eq!(Fraction::new(1, 64).unwrap().of(65), 2);
    }
}
