//! Per-item thresholds and the refresh/probe cost model.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ItemId, Threshold};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostConstants {
    /// Candidates per unit of threshold.
    pub a: f64,
    /// Construction time per unit of threshold.
    pub b: f64,
    /// Mean item matching time.
    pub c_m: f64,
    /// Mean time per candidate probe.
    pub c_t: f64,
    pub theta_max: f64,
    /// Events per item.
    pub e: f64,
}

impl CostConstants {
    const KEYS: [&'static str; 6] = ["a", "b", "c_m", "c_t", "theta_max", "e"];

    fn values(&self) -> [f64; 6] {
        [self.a, self.b, self.c_m, self.c_t, self.theta_max, self.e]
    }

    pub fn to_kv(&self) -> String {
        Self::KEYS.iter().zip(self.values()).map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Reads the block written by [`CostConstants::to_kv`]; unrelated keys
    /// are ignored so a whole report file can be fed back.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut values = [None; 6];
        for line in text.lines() {
            let Some((key, value)) = line.split_once('=') else { continue };
            if let Some(slot) = Self::KEYS.iter().position(|k| *k == key.trim()) {
                let v: f64 =
                    value.trim().parse().map_err(|_| Error::CostModel(format!("bad value for {key}: {value:?}")))?;
                values[slot] = Some(v);
            }
        }
        let get = |i: usize| values[i].ok_or_else(|| Error::CostModel(format!("missing key {}", Self::KEYS[i])));
        let c = Self { a: get(0)?, b: get(1)?, c_m: get(2)?, c_t: get(3)?, theta_max: get(4)?, e: get(5)? };
        if c.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::CostModel("constants must be finite and non-negative".into()));
        }
        Ok(c)
    }
}

/// `sqrt((1/a) * (theta_max/E) * (C_M/C_T))`.
pub fn optimal_theta(c: &CostConstants) -> Result<f64> {
    if c.a <= 0.0 || c.e <= 0.0 || c.c_t <= 0.0 {
        return Err(Error::CostModel(format!("a, E and C_T must be positive (a={}, E={}, C_T={})", c.a, c.e, c.c_t)));
    }
    Ok(((1.0 / c.a) * (c.theta_max / c.e) * (c.c_m / c.c_t)).sqrt())
}

/// Refresh cost plus probe cost of one item at threshold `theta`.
pub fn predicted_cost(theta: f64, c: &CostConstants) -> Result<f64> {
    if theta <= 0.0 || !theta.is_finite() {
        return Err(Error::CostModel(format!("threshold must be positive, got {theta}")));
    }
    Ok((c.theta_max / theta) * (c.c_m + c.b * theta) + theta * c.e * c.a * c.c_t)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefreshSample {
    pub theta: f64,
    pub size: usize,
    pub secs: f64,
}

/// What an instrumented run records for calibration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeRunStats {
    pub refreshes: Vec<RefreshSample>,
    /// Total traversal time of candidate lists.
    pub probe_secs: f64,
    pub probes: u64,
    /// Item matching time of each new item.
    pub item_match_secs: Vec<f64>,
    /// Final dynamic score and event count per item.
    pub items: Vec<(f64, u64)>,
}

fn slope_through_origin(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (xy, xx) = points.fold((0.0, 0.0), |(xy, xx), (x, y)| (xy + x * y, xx + x * x));
    xy / xx
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

pub fn calibrate(stats: &ProbeRunStats) -> Result<CostConstants> {
    let mut thetas: Vec<f64> = stats.refreshes.iter().map(|r| r.theta).filter(|t| *t > 0.0).collect();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    if thetas.len() < 2 {
        return Err(Error::CostModel(format!(
            "need refreshes at two or more distinct thresholds, got {}",
            thetas.len()
        )));
    }
    let samples = || stats.refreshes.iter().filter(|r| r.theta > 0.0);
    let a = slope_through_origin(samples().map(|r| (r.theta, r.size as f64)));
    let b = slope_through_origin(samples().map(|r| (r.theta, r.secs)));
    let c_t = if stats.probes == 0 { 0.0 } else { stats.probe_secs / stats.probes as f64 };
    Ok(CostConstants {
        a,
        b,
        c_m: mean(stats.item_match_secs.iter().copied()),
        c_t,
        theta_max: mean(stats.items.iter().map(|(d, _)| *d)),
        e: mean(stats.items.iter().map(|(_, n)| *n as f64)),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum ThetaStrategy {
    Zero,
    /// `num/den` of each item's maximal dynamic score.
    ExactFraction { num: u32, den: u32 },
    Global(f64),
    Optimal(CostConstants),
}

impl ThetaStrategy {
    pub fn needs_theta_max(&self) -> bool {
        matches!(self, ThetaStrategy::ExactFraction { .. })
    }
}

impl fmt::Display for ThetaStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaStrategy::Zero => write!(f, "zero"),
            ThetaStrategy::ExactFraction { num, den } => write!(f, "fraction:{num}/{den}"),
            ThetaStrategy::Global(v) => write!(f, "global:{v}"),
            ThetaStrategy::Optimal(c) => write!(f, "optimal:{}", optimal_theta(c).unwrap_or(f64::NAN)),
        }
    }
}

/// Parses `0.5`, `1/3` or `1` into an exact ratio.
pub fn parse_fraction(text: &str) -> Result<(u32, u32)> {
    let bad = || Error::Config(format!("bad fraction {text:?}"));
    let text = text.trim();
    let (num, den) = if let Some((n, d)) = text.split_once('/') {
        (n.trim().parse::<u32>().map_err(|_| bad())?, d.trim().parse::<u32>().map_err(|_| bad())?)
    } else {
        let (int, frac) = text.split_once('.').unwrap_or((text, ""));
        if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let scale = 10u64.pow(frac.len() as u32);
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let (mut n, mut d) = (int * scale + frac, scale);
        let g = gcd(n, d);
        if g > 1 {
            n /= g;
            d /= g;
        }
        (u32::try_from(n).map_err(|_| bad())?, u32::try_from(d).map_err(|_| bad())?)
    };
    if den == 0 {
        return Err(bad());
    }
    Ok((num, den))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl FromStr for ThetaStrategy {
    type Err = Error;

    /// `zero`, `fraction:F` or `global:V`. `optimal:` needs a constants
    /// file and is resolved by the caller.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "zero" => Ok(ThetaStrategy::Zero),
            "fraction" => {
                let (num, den) = parse_fraction(arg)?;
                Ok(ThetaStrategy::ExactFraction { num, den })
            }
            "global" => {
                let v: f64 = arg.parse().map_err(|_| Error::Config(format!("bad global threshold {arg:?}")))?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("threshold must be non-negative, got {v}")));
                }
                Ok(ThetaStrategy::Global(v))
            }
            _ => Err(Error::Config(format!("unknown threshold strategy {s:?}"))),
        }
    }
}

/// Threshold of `item`. `theta_max` is indexed by dense item id.
pub fn theta_for_item(item: ItemId, strategy: &ThetaStrategy, theta_max: Option<&[f64]>) -> Result<Threshold> {
    Ok(match strategy {
        ThetaStrategy::Zero => Threshold::ZERO,
        ThetaStrategy::ExactFraction { num, den } => {
            let max = theta_max.and_then(|m| m.get(item.index())).ok_or(Error::MissingThetaMax(item))?;
            Threshold::fraction_of(*max, *num, *den)
        }
        ThetaStrategy::Global(v) => Threshold::new(*v),
        ThetaStrategy::Optimal(c) => Threshold::new(optimal_theta(c)?),
    })
}
