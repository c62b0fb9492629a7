//! Monitor ingestion: daily series to annual means.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::covariates::SitePoint;
use crate::error::{Error, Result};

/// One daily measurement; `value` is `None` when missing.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRecord {
    pub site_id: String,
    pub date: NaiveDate,
    pub value: Option<f64>,
}

/// Static monitor metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteInfo {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
    pub province: String,
    pub city: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Province,
    City,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    pub site_id: String,
    pub x: f64,
    pub y: f64,
    pub province: String,
    pub city: String,
    pub annual_mean: f64,
    pub n_valid_days: u32,
    pub n_calendar_days: u32,
}

impl Monitor {
    pub fn group(&self, key: GroupKey) -> &str {
        match key {
            GroupKey::Province => &self.province,
            GroupKey::City => &self.city,
        }
    }
}

/// Sites with annual-mean responses.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MonitorTable {
    monitors: Vec<Monitor>,
}

impl MonitorTable {
    pub fn new(monitors: Vec<Monitor>) -> Result<Self> {
        let mut seen = HashSet::new();
        for m in &monitors {
            if !seen.insert(m.site_id.as_str()) {
                return Err(Error::invalid(format!("duplicate site id `{}`", m.site_id)));
            }
            if !m.x.is_finite() || !m.y.is_finite() {
                return Err(Error::invalid(format!("site `{}` has non-finite coordinates", m.site_id)));
            }
            if !m.annual_mean.is_finite() {
                return Err(Error::invalid(format!("site `{}` has no annual mean", m.site_id)));
            }
        }
        Ok(Self { monitors })
    }

    pub fn len(&self) -> usize {
        self.monitors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monitors.is_empty()
    }

    pub fn monitors(&self) -> &[Monitor] {
        &self.monitors
    }

    pub fn site_ids(&self) -> Vec<String> {
        self.monitors.iter().map(|m| m.site_id.clone()).collect()
    }

    pub fn site_points(&self) -> Vec<SitePoint> {
        self.monitors
            .iter()
            .map(|m| SitePoint::new(m.site_id.clone(), m.x, m.y))
            .collect()
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.monitors.iter().map(|m| (m.x, m.y)).collect()
    }

    pub fn responses(&self) -> Vec<f64> {
        self.monitors.iter().map(|m| m.annual_mean).collect()
    }

    pub fn groups(&self, key: GroupKey) -> Vec<String> {
        self.monitors.iter().map(|m| m.group(key).to_string()).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for m in &self.monitors {
            w.serialize(m)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let monitors = rdr.deserialize().collect::<std::result::Result<Vec<Monitor>, _>>()?;
        Self::new(monitors)
    }
}

/// A site dropped for incomplete data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedSite {
    pub site_id: String,
    pub n_valid_days: u32,
    pub n_calendar_days: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnualizeReport {
    pub table: MonitorTable,
    pub excluded: Vec<ExcludedSite>,
}

pub fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

/// True when `n_valid / n_calendar >= 0.75`.
pub fn meets_completeness(n_valid: u32, n_calendar: u32) -> bool {
    4 * u64::from(n_valid) >= 3 * u64::from(n_calendar)
}

/// Averages each site's valid daily values over `year`. Sites with fewer
/// than 75% of calendar days valid, or with no records at all, are excluded
/// and reported. Output is ordered by site id.
pub fn annualize(records: &[DailyRecord], year: i32, sites: &[SiteInfo]) -> Result<AnnualizeReport> {
    let info: HashMap<&str, &SiteInfo> = sites.iter().map(|s| (s.site_id.as_str(), s)).collect();
    if info.len() != sites.len() {
        return Err(Error::invalid("duplicate site id in site table"));
    }
    let mut seen: HashSet<(&str, NaiveDate)> = HashSet::with_capacity(records.len());
    // per site: (sum, count), summed in date order for order independence
    let mut per_site: BTreeMap<&str, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for r in records {
        if !info.contains_key(r.site_id.as_str()) {
            return Err(Error::invalid(format!("record for unknown site `{}`", r.site_id)));
        }
        if r.date.year() != year {
            return Err(Error::invalid(format!(
                "record ({}, {}) lies outside {year}",
                r.site_id, r.date
            )));
        }
        if !seen.insert((r.site_id.as_str(), r.date)) {
            return Err(Error::invalid(format!("duplicate record ({}, {})", r.site_id, r.date)));
        }
        let days = per_site.entry(r.site_id.as_str()).or_default();
        if let Some(v) = r.value {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "record ({}, {}) has invalid value {v}",
                    r.site_id, r.date
                )));
            }
            days.insert(r.date, v);
        }
    }

    let n_calendar = days_in_year(year);
    let mut ordered: Vec<&SiteInfo> = sites.iter().collect();
    ordered.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    let mut monitors = Vec::new();
    let mut excluded = Vec::new();
    for s in ordered {
        let days = per_site.get(s.site_id.as_str());
        let n_valid = days.map_or(0, |d| d.len() as u32);
        if n_valid == 0 || !meets_completeness(n_valid, n_calendar) {
            excluded.push(ExcludedSite {
                site_id: s.site_id.clone(),
                n_valid_days: n_valid,
                n_calendar_days: n_calendar,
            });
            continue;
        }
        let sum: f64 = days.into_iter().flat_map(|d| d.values()).sum();
        monitors.push(Monitor {
            site_id: s.site_id.clone(),
            x: s.x,
            y: s.y,
            province: s.province.clone(),
            city: s.city.clone(),
            annual_mean: sum / n_valid as f64,
            n_valid_days: n_valid,
            n_calendar_days: n_calendar,
        });
    }
    Ok(AnnualizeReport {
        table: MonitorTable::new(monitors)?,
        excluded,
    })
}

#[derive(Deserialize)]
struct DailyRow {
    site_id: String,
    date: String,
    value: String,
}

/// Reads `site_id,date,value` rows; empty, `NA` or `NaN` values are missing.
pub fn read_daily_csv(path: impl AsRef<Path>) -> Result<Vec<DailyRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<DailyRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        let date = NaiveDate::parse_from_str(row.date.trim(), "%Y-%m-%d").map_err(|_| Error::Format {
            line,
            message: format!("bad date `{}`", row.date),
        })?;
        let v = row.value.trim();
        let value = if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
            None
        } else {
            Some(v.parse::<f64>().map_err(|_| Error::Format {
                line,
                message: format!("bad value `{v}`"),
            })?)
        };
        out.push(DailyRecord {
            site_id: row.site_id,
            date,
            value,
        });
    }
    Ok(out)
}

pub fn write_daily_csv(records: &[DailyRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(["site_id", "date", "value"])?;
    for r in records {
        let v = r.value.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.site_id.as_str(), &r.date.format("%Y-%m-%d").to_string(), &v])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_sites_csv(path: impl AsRef<Path>) -> Result<Vec<SiteInfo>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let sites = rdr.deserialize().collect::<std::result::Result<Vec<SiteInfo>, _>>()?;
    Ok(sites)
}

pub fn write_sites_csv(sites: &[SiteInfo], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for s in sites {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
