//! Study configuration: time window, night definitions, qualification
//! thresholds, and the knobs of downstream stages.
//!
//! Configuration lives in one declarative `key = value` file; every key has a
//! documented default, and command-line flags override file values
//! (precedence: flags > file > defaults).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};

use crate::error::{Error, Result};

/// A daily time window in local seconds-of-day, wrap-aware.
///
/// `19:00-09:00` wraps midnight and contains 23:30; `09:00-19:00` does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayWindow {
    pub start_sec: u32,
    pub end_sec: u32,
}

impl DayWindow {
    pub fn new(start_sec: u32, end_sec: u32) -> Self {
        DayWindow { start_sec, end_sec }
    }

    /// Parse `"HH:MM-HH:MM"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("bad window {s:?}, want HH:MM-HH:MM")))?;
        Ok(DayWindow::new(parse_hhmm(a)?, parse_hhmm(b)?))
    }

    /// Does the window contain this local second-of-day?
    pub fn contains(&self, sec_of_day: u32) -> bool {
        if self.start_sec <= self.end_sec {
            sec_of_day >= self.start_sec && sec_of_day < self.end_sec
        } else {
            sec_of_day >= self.start_sec || sec_of_day < self.end_sec
        }
    }

    fn format(&self) -> String {
        format!("{}-{}", fmt_hhmm(self.start_sec), fmt_hhmm(self.end_sec))
    }
}

fn parse_hhmm(s: &str) -> Result<u32> {
    let (h, m) = s
        .trim()
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("bad time {s:?}, want HH:MM")))?;
    let h: u32 = h
        .parse()
        .map_err(|_| Error::Config(format!("bad hour in {s:?}")))?;
    let m: u32 = m
        .parse()
        .map_err(|_| Error::Config(format!("bad minute in {s:?}")))?;
    if h > 23 || m > 59 {
        return Err(Error::Config(format!("time out of range: {s:?}")));
    }
    Ok(h * 3600 + m * 60)
}

fn fmt_hhmm(sec: u32) -> String {
    format!("{:02}:{:02}", sec / 3600, (sec % 3600) / 60)
}

/// Parse a UTC instant from RFC 3339 or a bare `YYYY-MM-DD` (midnight UTC).
pub fn parse_instant(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    if let Ok(d) = s.parse::<NaiveDate>() {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc());
    }
    Err(Error::Config(format!(
        "bad instant {s:?}, want RFC 3339 or YYYY-MM-DD"
    )))
}

/// Parse a fixed UTC offset like `+02:00` or `-05:30` into seconds.
pub fn parse_offset(s: &str) -> Result<i32> {
    let s = s.trim();
    let (sign, rest) = match s.as_bytes().first() {
        Some(b'+') => (1, &s[1..]),
        Some(b'-') => (-1, &s[1..]),
        _ => (1, s),
    };
    let secs = parse_hhmm(rest)? as i32;
    if secs > 18 * 3600 {
        return Err(Error::Config(format!("offset out of range: {s:?}")));
    }
    Ok(sign * secs)
}

fn fmt_offset(secs: i32) -> String {
    let sign = if secs < 0 { '-' } else { '+' };
    format!("{sign}{}", fmt_hhmm(secs.unsigned_abs()))
}

/// The study configuration shared by every pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// Study window, UTC, half-open `[start, end)`.
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    /// Fixed local-time offset applied before evaluating night windows and
    /// calendar dates. Default +02:00 (French summer time for a June study).
    pub local_offset_secs: i32,
    /// Broad night window, default 19:00-09:00.
    pub night_broad: DayWindow,
    /// Strict night window, default 22:00-06:00.
    pub night_strict: DayWindow,
    /// A user qualifies with at least this many in-window events...
    pub min_events: u32,
    /// ...on at least this many distinct local calendar dates.
    pub min_active_days: u32,
    /// Projection origin (lon, lat). Defaults to the tower-set centroid.
    pub projection_origin: Option<(f64, f64)>,
    /// Intended slicing for repeated time-sliced runs (recorded in the
    /// manifest; slicing itself is done with `--period`).
    pub period_granularity: String,
    /// Number of density bins for entropy calibration (deciles by default).
    pub calib_bins: usize,
    /// Minimum users per calibration bin; thinner bins merge rightward.
    pub calib_min_users: usize,
    /// Hot/cold classification threshold on |z|; 1.645 is the 90% interval.
    pub z_crit: f64,
    /// Sensitivity flag threshold on |delta r| between adjacent levels.
    pub delta_r_threshold: f64,
    /// Spatial levels in report order.
    pub levels: Vec<String>,
    /// Default home-detection heuristic for stages that need a single one.
    pub heuristic: String,
    /// Master seed for synthetic generation.
    pub seed: u64,
    /// Worker threads for the parallel map stages.
    pub workers: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            window_start: parse_instant("2007-06-01").unwrap(),
            window_end: parse_instant("2007-07-01").unwrap(),
            local_offset_secs: 2 * 3600,
            night_broad: DayWindow::new(19 * 3600, 9 * 3600),
            night_strict: DayWindow::new(22 * 3600, 6 * 3600),
            min_events: 10,
            min_active_days: 5,
            projection_origin: None,
            period_granularity: "month".into(),
            calib_bins: 10,
            calib_min_users: 50,
            z_crit: 1.645,
            delta_r_threshold: 0.2,
            levels: vec!["cell".into(), "iris".into(), "commune".into()],
            heuristic: "H3".into(),
            seed: 42,
            workers: 1,
        }
    }
}

impl StudyConfig {
    /// Load defaults, then apply a config file if given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = StudyConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            cfg.apply_file(&text)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `key = value` lines; `#` starts a comment, blank lines ignored.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Set a single key. Unknown keys are errors so typos surface early.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value for {key}: {v:?}")))
        }
        match key {
            "window_start" => self.window_start = parse_instant(value)?,
            "window_end" => self.window_end = parse_instant(value)?,
            "local_offset" => self.local_offset_secs = parse_offset(value)?,
            "night_broad" => self.night_broad = DayWindow::parse(value)?,
            "night_strict" => self.night_strict = DayWindow::parse(value)?,
            "min_events" => self.min_events = num(key, value)?,
            "min_active_days" => self.min_active_days = num(key, value)?,
            "projection_origin" => {
                let (lon, lat) = value
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("bad origin {value:?}, want lon,lat")))?;
                self.projection_origin = Some((num("lon", lon.trim())?, num("lat", lat.trim())?));
            }
            "period_granularity" => self.period_granularity = value.to_string(),
            "calib_bins" => self.calib_bins = num(key, value)?,
            "calib_min_users" => self.calib_min_users = num(key, value)?,
            "z_crit" => self.z_crit = num(key, value)?,
            "delta_r_threshold" => self.delta_r_threshold = num(key, value)?,
            "levels" => {
                self.levels = value.split(',').map(|s| s.trim().to_string()).collect();
                if self.levels.iter().any(String::is_empty) {
                    return Err(Error::Config(format!("bad levels list {value:?}")));
                }
            }
            "heuristic" => self.heuristic = value.to_string(),
            "seed" => self.seed = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Restrict the study window to `START..END`.
    pub fn set_period(&mut self, period: &str) -> Result<()> {
        let (a, b) = period
            .split_once("..")
            .ok_or_else(|| Error::Config(format!("bad period {period:?}, want START..END")))?;
        self.window_start = parse_instant(a)?;
        self.window_end = parse_instant(b)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_start >= self.window_end {
            return Err(Error::Config("window_start must precede window_end".into()));
        }
        if self.min_events < 1 || self.min_active_days < 1 {
            return Err(Error::Config("thresholds must be >= 1".into()));
        }
        if self.calib_bins < 1 {
            return Err(Error::Config("calib_bins must be >= 1".into()));
        }
        if self.z_crit.is_nan() || self.z_crit <= 0.0 {
            return Err(Error::Config("z_crit must be positive".into()));
        }
        Ok(())
    }

    /// Does this UTC instant fall inside the study window?
    pub fn in_window(&self, t: DateTime<Utc>) -> bool {
        t >= self.window_start && t < self.window_end
    }

    /// Local second-of-day for a UTC unix timestamp, after the fixed offset.
    pub fn local_sec_of_day(&self, unix: i64) -> u32 {
        (unix + self.local_offset_secs as i64).rem_euclid(86_400) as u32
    }

    /// Local calendar day number (days since the unix epoch, local clock).
    pub fn local_day(&self, unix: i64) -> i32 {
        ((unix + self.local_offset_secs as i64).div_euclid(86_400)) as i32
    }

    /// Config snapshot for the run manifest, one sorted `key = value` map.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("window_start".into(), self.window_start.to_rfc3339());
        m.insert("window_end".into(), self.window_end.to_rfc3339());
        m.insert("local_offset".into(), fmt_offset(self.local_offset_secs));
        m.insert("night_broad".into(), self.night_broad.format());
        m.insert("night_strict".into(), self.night_strict.format());
        m.insert("min_events".into(), self.min_events.to_string());
        m.insert("min_active_days".into(), self.min_active_days.to_string());
        if let Some((lon, lat)) = self.projection_origin {
            m.insert("projection_origin".into(), format!("{lon},{lat}"));
        }
        m.insert("period_granularity".into(), self.period_granularity.clone());
        m.insert("calib_bins".into(), self.calib_bins.to_string());
        m.insert("calib_min_users".into(), self.calib_min_users.to_string());
        m.insert("z_crit".into(), self.z_crit.to_string());
        m.insert(
            "delta_r_threshold".into(),
            self.delta_r_threshold.to_string(),
        );
        m.insert("levels".into(), self.levels.join(","));
        m.insert("heuristic".into(), self.heuristic.clone());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("workers".into(), self.workers.to_string());
        m
    }

    /// Render the full config as a loadable file, defaults documented.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# cdrlab study configuration");
        for (k, v) in self.snapshot() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_aware_windows() {
        let broad = DayWindow::parse("19:00-09:00").unwrap();
        assert!(broad.contains(23 * 3600));
        assert!(broad.contains(3 * 3600));
        assert!(!broad.contains(12 * 3600));
        assert!(broad.contains(19 * 3600));
        assert!(!broad.contains(9 * 3600)); // half-open end

        let day = DayWindow::parse("09:00-19:00").unwrap();
        assert!(day.contains(12 * 3600));
        assert!(!day.contains(23 * 3600));
    }

    #[test]
    fn offsets_and_local_days() {
        let cfg = StudyConfig {
            local_offset_secs: parse_offset("+02:00").unwrap(),
            ..Default::default()
        };
        // 2007-06-03T23:30:00Z is 01:30 local on the next day.
        let t = parse_instant("2007-06-03T23:30:00Z").unwrap().timestamp();
        assert_eq!(cfg.local_sec_of_day(t), 3600 + 1800);
        assert_eq!(cfg.local_day(t), cfg.local_day(t - 2 * 3600) + 1);
        assert_eq!(parse_offset("-05:30").unwrap(), -(5 * 3600 + 1800));
    }

    #[test]
    fn file_roundtrip_and_unknown_key() {
        let mut cfg = StudyConfig::default();
        cfg.apply_file("min_events = 3\n# comment\nnight_strict = 23:00-05:00\n")
            .unwrap();
        assert_eq!(cfg.min_events, 3);
        assert_eq!(cfg.night_strict, DayWindow::new(23 * 3600, 5 * 3600));

        let rendered = cfg.render();
        let mut cfg2 = StudyConfig::default();
        cfg2.apply_file(&rendered).unwrap();
        assert_eq!(cfg, cfg2);

        assert!(cfg.apply_file("no_such_key = 1\n").is_err());
    }

    #[test]
    fn period_overrides_window() {
        let mut cfg = StudyConfig::default();
        cfg.set_period("2007-07-01..2007-08-01").unwrap();
        assert!(cfg.in_window(parse_instant("2007-07-15").unwrap()));
        assert!(!cfg.in_window(parse_instant("2007-06-15").unwrap()));
        assert!(cfg.set_period("2007-08-01..2007-07-01").is_err());
    }
}
