//! Per-day normalization and selection of one prototypical (clearest) day per
//! group of days.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{IrradianceRecord, PowerProfile};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("profile has no complete days")]
    EmptyProfile,
    #[error("group {group}: no daylight samples on any day")]
    NoDaylightSamples { group: String },
    #[error("no irradiance record at {0}")]
    MissingIrradiance(DateTime<Utc>),
}

/// A day scaled into [0, 1] by its maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDay {
    pub values: Vec<f64>,
    /// Set when the day has no positive sample and was returned unchanged.
    pub all_zero: bool,
}

pub fn normalize_day(day: &[f64]) -> NormalizedDay {
    let max = day.iter().copied().fold(0.0_f64, f64::max);
    if max > 0.0 {
        NormalizedDay {
            values: day.iter().map(|v| v / max).collect(),
            all_zero: false,
        }
    } else {
        NormalizedDay {
            values: day.to_vec(),
            all_zero: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingScheme {
    #[default]
    Monthly,
    IsoWeekly,
}

impl GroupingScheme {
    fn label(&self, date: NaiveDate) -> String {
        match self {
            GroupingScheme::Monthly => format!("{}-{:02}", date.year(), date.month()),
            GroupingScheme::IsoWeekly => {
                let w = date.iso_week();
                format!("{}-W{:02}", w.year(), w.week())
            }
        }
    }
}

/// One complete local day of generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Day {
    pub date: NaiveDate,
    pub timestamps: Vec<DateTime<Utc>>,
    pub power_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayGroup {
    pub group_id: String,
    pub days: Vec<Day>,
    pub prototypical_day: Option<NaiveDate>,
    pub prototype_profile: Vec<f64>,
    /// Irradiance aligned sample-by-sample with the prototypical day.
    pub prototype_irradiance: Vec<IrradianceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedDay {
    pub date: NaiveDate,
    pub samples: usize,
    pub expected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub groups: Vec<DayGroup>,
    pub dropped: Vec<DroppedDay>,
}

/// Partitions the complete local days of a profile. Days with missing samples
/// are reported in `dropped`.
pub fn group_days(
    profile: &PowerProfile,
    scheme: GroupingScheme,
) -> Result<Grouping, PreprocessError> {
    let n = profile.resolution_per_day;
    let mut by_date: BTreeMap<NaiveDate, Day> = BTreeMap::new();
    for s in &profile.samples {
        let date = profile.location.local_date(s.timestamp);
        let day = by_date.entry(date).or_insert_with(|| Day {
            date,
            timestamps: Vec::with_capacity(n),
            power_w: Vec::with_capacity(n),
        });
        day.timestamps.push(s.timestamp);
        day.power_w.push(s.power_w);
    }

    let mut groups: Vec<DayGroup> = Vec::new();
    let mut dropped = Vec::new();
    for (date, day) in by_date {
        if day.power_w.len() != n {
            dropped.push(DroppedDay {
                date,
                samples: day.power_w.len(),
                expected: n,
            });
            continue;
        }
        let label = scheme.label(date);
        match groups.last_mut() {
            Some(g) if g.group_id == label => g.days.push(day),
            _ => groups.push(DayGroup {
                group_id: label,
                days: vec![day],
                prototypical_day: None,
                prototype_profile: Vec::new(),
                prototype_irradiance: Vec::new(),
            }),
        }
    }
    if groups.is_empty() {
        return Err(PreprocessError::EmptyProfile);
    }
    Ok(Grouping { groups, dropped })
}

/// Sample Pearson correlation; `None` when either series is constant or
/// shorter than two samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Time-sorted irradiance records with lookup by instant.
#[derive(Debug, Clone)]
pub struct IrradianceIndex<'a> {
    records: &'a [IrradianceRecord],
}

impl<'a> IrradianceIndex<'a> {
    /// `records` must be sorted by timestamp, as returned by the loaders.
    pub fn new(records: &'a [IrradianceRecord]) -> Self {
        Self { records }
    }

    pub fn get(&self, t: DateTime<Utc>) -> Option<&'a IrradianceRecord> {
        self.records
            .binary_search_by_key(&t, |r| r.timestamp)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn day(&self, day: &Day) -> Result<Vec<IrradianceRecord>, PreprocessError> {
        day.timestamps
            .iter()
            .map(|t| {
                self.get(*t)
                    .copied()
                    .ok_or(PreprocessError::MissingIrradiance(*t))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayCorrelation {
    pub date: NaiveDate,
    pub daylight_samples: usize,
    pub dni_ghi_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSelection {
    pub date: NaiveDate,
    pub correlations: Vec<DayCorrelation>,
    pub prototype_all_zero: bool,
}

/// Picks the day whose daylight DNI and GHI series are most correlated,
/// earliest date on ties, and stores its normalized generation as the group
/// prototype. Days with an undefined correlation rank below every defined
/// one but remain eligible, so a fully overcast group still yields a day.
pub fn select_prototypical_day(
    group: &mut DayGroup,
    irradiance: &IrradianceIndex<'_>,
) -> Result<PrototypeSelection, PreprocessError> {
    let mut correlations = Vec::with_capacity(group.days.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, day) in group.days.iter().enumerate() {
        let recs = irradiance.day(day)?;
        let (dni, ghi): (Vec<f64>, Vec<f64>) = recs
            .iter()
            .filter(|r| r.is_daylight())
            .map(|r| (r.dni, r.ghi))
            .unzip();
        let corr = pearson(&dni, &ghi);
        correlations.push(DayCorrelation {
            date: day.date,
            daylight_samples: dni.len(),
            dni_ghi_correlation: corr,
        });
        if dni.is_empty() {
            continue;
        }
        let rank = corr.unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(_, r)| rank > r) {
            best = Some((i, rank));
        }
    }
    let (idx, _) = best.ok_or_else(|| PreprocessError::NoDaylightSamples {
        group: group.group_id.clone(),
    })?;
    let day = &group.days[idx];
    let normalized = normalize_day(&day.power_w);
    group.prototypical_day = Some(day.date);
    group.prototype_irradiance = irradiance.day(day)?;
    group.prototype_profile = normalized.values;
    Ok(PrototypeSelection {
        date: day.date,
        correlations,
        prototype_all_zero: normalized.all_zero,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group_id: String,
    pub days: usize,
    pub prototypical_day: NaiveDate,
    pub prototype_all_zero: bool,
    pub correlations: Vec<DayCorrelation>,
}

/// JSON-serializable summary of preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub scheme: GroupingScheme,
    pub resolution_per_day: usize,
    pub groups: Vec<GroupReport>,
    pub dropped_days: Vec<DroppedDay>,
}

/// Groups the profile and selects every prototype.
pub fn preprocess(
    profile: &PowerProfile,
    irradiance: &[IrradianceRecord],
    scheme: GroupingScheme,
) -> Result<(Vec<DayGroup>, PreprocessReport), PreprocessError> {
    let Grouping {
        mut groups,
        dropped,
    } = group_days(profile, scheme)?;
    let index = IrradianceIndex::new(irradiance);
    let mut reports = Vec::with_capacity(groups.len());
    for g in groups.iter_mut() {
        let sel = select_prototypical_day(g, &index)?;
        reports.push(GroupReport {
            group_id: g.group_id.clone(),
            days: g.days.len(),
            prototypical_day: sel.date,
            prototype_all_zero: sel.prototype_all_zero,
            correlations: sel.correlations,
        });
    }
    let report = PreprocessReport {
        scheme,
        resolution_per_day: profile.resolution_per_day,
        groups: reports,
        dropped_days: dropped,
    };
    Ok((groups, report))
}
