//! Calendar months and fiscal quarters.
//!
//! Return audits run on calendar months, earnings audits on fiscal quarters
//! exactly as labeled in the earnings file. A fiscal quarter `YYYYQn` is mapped
//! onto calendar months `3n-2 ..= 3n` of year `YYYY` for the purpose of date
//! comparisons; no fiscal-year remapping is attempted.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Period {
    Month { year: i32, month: u32 },
    Quarter { year: i32, quarter: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    Monthly,
    Quarterly,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid period label {0:?} (expected YYYY-MM or YYYYQn)")]
pub struct PeriodParseError(pub String);

impl Period {
    pub fn month(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        Period::Month { year, month }
    }

    pub fn quarter(year: i32, quarter: u32) -> Self {
        assert!((1..=4).contains(&quarter), "quarter out of range: {quarter}");
        Period::Quarter { year, quarter }
    }

    pub fn frequency(&self) -> Frequency {
        match self {
            Period::Month { .. } => Frequency::Monthly,
            Period::Quarter { .. } => Frequency::Quarterly,
        }
    }

    pub fn year(&self) -> i32 {
        match *self {
            Period::Month { year, .. } | Period::Quarter { year, .. } => year,
        }
    }

    /// Linear index: months since year 0 or quarters since year 0.
    pub fn ordinal(&self) -> i64 {
        match *self {
            Period::Month { year, month } => year as i64 * 12 + (month as i64 - 1),
            Period::Quarter { year, quarter } => year as i64 * 4 + (quarter as i64 - 1),
        }
    }

    fn from_ordinal(freq: Frequency, ord: i64) -> Self {
        match freq {
            Frequency::Monthly => Period::Month {
                year: ord.div_euclid(12) as i32,
                month: (ord.rem_euclid(12) + 1) as u32,
            },
            Frequency::Quarterly => Period::Quarter {
                year: ord.div_euclid(4) as i32,
                quarter: (ord.rem_euclid(4) + 1) as u32,
            },
        }
    }

    /// Shift by `n` periods of the same frequency (negative = back in time).
    pub fn offset(&self, n: i64) -> Self {
        Self::from_ordinal(self.frequency(), self.ordinal() + n)
    }

    pub fn prev(&self) -> Self {
        self.offset(-1)
    }

    pub fn next(&self) -> Self {
        self.offset(1)
    }

    pub fn start_date(&self) -> NaiveDate {
        let (y, m) = match *self {
            Period::Month { year, month } => (year, month),
            Period::Quarter { year, quarter } => (year, 3 * quarter - 2),
        };
        NaiveDate::from_ymd_opt(y, m, 1).expect("valid period start")
    }

    /// Last calendar day of the period.
    pub fn end_date(&self) -> NaiveDate {
        self.next().start_date().pred_opt().expect("valid period end")
    }

    /// A period is pre-cutoff when its last day falls strictly before the
    /// cutoff date.
    pub fn is_pre_cutoff(&self, cutoff: NaiveDate) -> bool {
        self.end_date() < cutoff
    }

    pub fn containing(freq: Frequency, date: NaiveDate) -> Self {
        match freq {
            Frequency::Monthly => Period::month(date.year(), date.month()),
            Frequency::Quarterly => Period::quarter(date.year(), (date.month() - 1) / 3 + 1),
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Period::Month { year, month } => write!(f, "{year:04}-{month:02}"),
            Period::Quarter { year, quarter } => write!(f, "{year:04}Q{quarter}"),
        }
    }
}

impl FromStr for Period {
    type Err = PeriodParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PeriodParseError(s.to_string());
        let t = s.trim();
        if let Some((y, q)) = t.split_once(['Q', 'q']) {
            let y = y.trim_end_matches('-');
            let year: i32 = y.parse().map_err(|_| err())?;
            let quarter: u32 = q.parse().map_err(|_| err())?;
            if y.len() != 4 || !(1..=4).contains(&quarter) {
                return Err(err());
            }
            return Ok(Period::Quarter { year, quarter });
        }
        let (y, m) = t.split_once('-').ok_or_else(err)?;
        let year: i32 = y.parse().map_err(|_| err())?;
        let month: u32 = m.parse().map_err(|_| err())?;
        if y.len() != 4 || m.len() != 2 || !(1..=12).contains(&month) {
            return Err(err());
        }
        Ok(Period::Month { year, month })
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        assert_eq!("2023-10".parse::<Period>().unwrap(), Period::month(2023, 10));
        assert_eq!("2023Q3".parse::<Period>().unwrap(), Period::quarter(2023, 3));
        assert_eq!("2023-Q1".parse::<Period>().unwrap(), Period::quarter(2023, 1));
        assert_eq!(Period::month(2023, 3).to_string(), "2023-03");
        assert_eq!(Period::quarter(2024, 4).to_string(), "2024Q4");
        assert!("2023-13".parse::<Period>().is_err());
        assert!("2023Q5".parse::<Period>().is_err());
        assert!("23-01".parse::<Period>().is_err());
    }

    #[test]
    fn offsets_wrap_years() {
        assert_eq!(Period::month(2023, 1).prev(), Period::month(2022, 12));
        assert_eq!(Period::quarter(2023, 2).offset(-4), Period::quarter(2022, 2));
        assert_eq!(Period::quarter(2023, 4).next(), Period::quarter(2024, 1));
    }

    #[test]
    fn dates_and_cutoff() {
        let cutoff = NaiveDate::from_ymd_opt(2023, 10, 1).unwrap();
        assert!(Period::month(2023, 9).is_pre_cutoff(cutoff));
        assert!(!Period::month(2023, 10).is_pre_cutoff(cutoff));
        assert_eq!(
            Period::month(2024, 2).end_date(),
            NaiveDate::from_ymd_opt(2024, 2, 29).unwrap()
        );
        assert_eq!(
            Period::quarter(2023, 3).end_date(),
            NaiveDate::from_ymd_opt(2023, 9, 30).unwrap()
        );
        assert!(Period::quarter(2023, 3).is_pre_cutoff(cutoff));
        assert!(!Period::quarter(2023, 4).is_pre_cutoff(cutoff));
    }
}
