//! Coincidence counting on picosecond time-tag streams, and a synthetic
//! pair-stream generator.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default coincidence window, s.
pub const DEFAULT_WINDOW_S: f64 = 1.6e-9;

const PS: f64 = 1e12;

/// Detection times of one channel, integer picoseconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    pub channel: u16,
    timestamps: Vec<i64>,
}

impl TimeTagStream {
    /// Checks ordering and sign once.
    pub fn new(channel: u16, timestamps: Vec<i64>) -> Result<Self> {
        if let Some(k) = timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!(
                "channel {channel}: timestamps decrease at index {}",
                k + 1
            )));
        }
        if timestamps.first().is_some_and(|&t| t < 0) {
            return Err(Error::invalid(format!("channel {channel}: negative timestamp")));
        }
        Ok(TimeTagStream { channel, timestamps })
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Writes one timestamp per line.
    pub fn write(&self, path: impl AsRef<Path>, header: &[String]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for line in header {
            writeln!(w, "# {line}")?;
        }
        for t in &self.timestamps {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of one coincidence count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceCount {
    pub coincidences: u64,
    pub singles_a: u64,
    pub singles_b: u64,
    /// Span covered by both streams, s.
    pub duration_s: f64,
    /// `rate_a·rate_b·window`, Hz.
    pub accidental_rate_hz: f64,
}

impl CoincidenceCount {
    pub fn coincidence_rate_hz(&self) -> f64 {
        self.coincidences as f64 / self.duration_s
    }

    /// Coincidences per single of arm A.
    pub fn heralding_a(&self) -> f64 {
        self.coincidences as f64 / self.singles_a as f64
    }

    pub fn heralding_b(&self) -> f64 {
        self.coincidences as f64 / self.singles_b as f64
    }
}

fn to_ps(s: f64) -> i64 {
    (s * PS).round() as i64
}

/// Greedy earliest-match count of pairs with `|t_a − (t_b + delay)| ≤ window/2`,
/// each tag used at most once.
pub fn count_coincidences(
    a: &TimeTagStream,
    b: &TimeTagStream,
    window_s: f64,
    delay_s: f64,
) -> Result<CoincidenceCount> {
    if !(window_s >= 0.0 && window_s.is_finite()) || !delay_s.is_finite() {
        return Err(Error::invalid("window must be >= 0 and delay finite"));
    }
    let (w, d) = (to_ps(window_s), to_ps(delay_s));
    let coincidences = greedy_count(&a.timestamps, &b.timestamps, w, d);
    let span = span_ps(a, b);
    let duration_s = span as f64 / PS;
    let accidental_rate_hz = if duration_s > 0.0 {
        (a.len() as f64 / duration_s) * (b.len() as f64 / duration_s) * window_s
    } else {
        0.0
    };
    Ok(CoincidenceCount {
        coincidences,
        singles_a: a.len() as u64,
        singles_b: b.len() as u64,
        duration_s,
        accidental_rate_hz,
    })
}

fn span_ps(a: &TimeTagStream, b: &TimeTagStream) -> i64 {
    let first = a.timestamps.first().into_iter().chain(b.timestamps.first()).min();
    let last = a.timestamps.last().into_iter().chain(b.timestamps.last()).max();
    match (first, last) {
        (Some(f), Some(l)) => l - f,
        _ => 0,
    }
}

fn greedy_count(a: &[i64], b: &[i64], window: i64, delay: i64) -> u64 {
    // integer test: 2·|Δ| ≤ window
    let (mut i, mut j, mut n) = (0, 0, 0u64);
    while i < a.len() && j < b.len() {
        let diff = 2 * (a[i] - (b[j] + delay));
        if diff > window {
            j += 1;
        } else if -diff > window {
            i += 1;
        } else {
            n += 1;
            i += 1;
            j += 1;
        }
    }
    n
}

/// Coincidences versus delay, `(delay s, count)`.
pub fn delay_scan(a: &TimeTagStream, b: &TimeTagStream, window_s: f64, delays_s: &[f64]) -> Result<Vec<(f64, u64)>> {
    let counts = crate::par::map_slice(delays_s, |&d| {
        count_coincidences(a, b, window_s, d).map(|c| (d, c.coincidences))
    });
    counts.into_iter().collect()
}

pub fn write_delay_scan(scan: &[(f64, u64)], path: impl AsRef<Path>, header: &[String]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in header {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "delay_s,coincidences")?;
    for (d, c) in scan {
        writeln!(w, "{d:.6e},{c}")?;
    }
    w.flush()?;
    Ok(())
}

/// Parameters of a synthetic two-arm TDC record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairStreamSpec {
    pub pair_rate_hz: f64,
    pub eta_a: f64,
    pub eta_b: f64,
    pub jitter_s: f64,
    pub duration_s: f64,
}

impl PairStreamSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate_hz > 0.0 && self.pair_rate_hz.is_finite()) {
            return Err(Error::invalid("pair rate must be > 0"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("duration must be > 0"));
        }
        for (name, eta) in [("eta_a", self.eta_a), ("eta_b", self.eta_b)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.jitter_s >= 0.0 && self.jitter_s.is_finite()) {
            return Err(Error::invalid("jitter must be >= 0"));
        }
        Ok(())
    }
}

/// Poisson pair emission; each photon kept with its arm efficiency, jittered
/// by a centered Gaussian and rounded to 1 ps. Channels 1 and 2.
pub fn synthesize_pair_streams(spec: &PairStreamSpec, seed: u64) -> Result<(TimeTagStream, TimeTagStream)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(spec.pair_rate_hz).map_err(|e| Error::invalid(e.to_string()))?;
    let jitter = Normal::new(0.0, spec.jitter_s).map_err(|e| Error::invalid(e.to_string()))?;
    let expected = (spec.pair_rate_hz * spec.duration_s) as usize;
    let mut ta = Vec::with_capacity((expected as f64 * spec.eta_a * 1.1) as usize + 16);
    let mut tb = Vec::with_capacity((expected as f64 * spec.eta_b * 1.1) as usize + 16);
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= spec.duration_s {
            break;
        }
        // fixed draw order per pair keeps streams reproducible
        let keep_a = rng.random::<f64>() < spec.eta_a;
        let keep_b = rng.random::<f64>() < spec.eta_b;
        let (ja, jb) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
        if keep_a {
            ta.push(to_ps(t + ja).max(0));
        }
        if keep_b {
            tb.push(to_ps(t + jb).max(0));
        }
    }
    ta.sort_unstable();
    tb.sort_unstable();
    Ok((TimeTagStream::new(1, ta)?, TimeTagStream::new(2, tb)?))
}

/// Uncorrelated Poisson stream.
pub fn synthesize_poisson_stream(channel: u16, rate_hz: f64, duration_s: f64, seed: u64) -> Result<TimeTagStream> {
    if !(rate_hz > 0.0) || !(duration_s > 0.0) {
        return Err(Error::invalid("rate and duration must be > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(rate_hz).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = Vec::with_capacity((rate_hz * duration_s * 1.1) as usize + 16);
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= duration_s {
            break;
        }
        out.push(to_ps(t));
    }
    TimeTagStream::new(channel, out)
}

/// Reads a time-tag file. One integer per line gives a single stream on
/// `default_channel`; `channel,timestamp_ps` lines are demultiplexed.
/// Blank lines, `#` comments and a non-numeric header line are skipped.
pub fn read_timetags(path: impl AsRef<Path>, default_channel: u16) -> Result<Vec<TimeTagStream>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut by_channel: BTreeMap<u16, Vec<i64>> = BTreeMap::new();
    let mut columns = None;
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::Format(format!("{}:{}: {msg}", path.display(), n + 1));
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if columns.is_none() && fields.iter().any(|f| f.parse::<i64>().is_err()) {
            // header line
            columns = Some(fields.len());
            continue;
        }
        match *columns.get_or_insert(fields.len()) {
            c if c != fields.len() => return Err(bad("inconsistent column count")),
            1 => {
                let ts = fields[0].parse().map_err(|_| bad("timestamp must be an integer"))?;
                by_channel.entry(default_channel).or_default().push(ts);
            }
            2 => {
                let ch = fields[0].parse().map_err(|_| bad("channel must be a small integer"))?;
                let ts = fields[1].parse().map_err(|_| bad("timestamp must be an integer"))?;
                by_channel.entry(ch).or_default().push(ts);
            }
            _ => return Err(bad("expected 1 or 2 columns")),
        }
    }
    by_channel
        .into_iter()
        .map(|(ch, mut ts)| {
            // multiplexed files are sorted globally, not per channel
            if columns == Some(2) {
                ts.sort_unstable();
            }
            TimeTagStream::new(ch, ts)
        })
        .collect()
}
