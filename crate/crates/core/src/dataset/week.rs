use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, Weekday};

/// ISO-8601 calendar week, written `2009-W40`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IsoWeek {
    year: i32,
    week: u32,
}

impl IsoWeek {
    pub fn new(year: i32, week: u32) -> Option<Self> {
        NaiveDate::from_isoywd_opt(year, week, Weekday::Mon).map(|_| IsoWeek { year, week })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn week(self) -> u32 {
        self.week
    }

    fn monday(self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon)
            .expect("IsoWeek is validated on construction")
    }

    fn from_date(date: NaiveDate) -> Self {
        let iso = date.iso_week();
        IsoWeek {
            year: iso.year(),
            week: iso.week(),
        }
    }

    pub fn next(self) -> Self {
        Self::from_date(self.monday() + Duration::weeks(1))
    }

    pub fn plus_weeks(self, weeks: i64) -> Self {
        Self::from_date(self.monday() + Duration::weeks(weeks))
    }

    /// Signed number of weeks from `self` to `other`.
    pub fn weeks_until(self, other: IsoWeek) -> i64 {
        (other.monday() - self.monday()).num_weeks()
    }
}

impl fmt::Display for IsoWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseWeekError;

impl fmt::Display for ParseWeekError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("expected an ISO week such as 2009-W40")
    }
}

impl std::error::Error for ParseWeekError {}

impl FromStr for IsoWeek {
    type Err = ParseWeekError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (year, week) = s.trim().split_once("-W").ok_or(ParseWeekError)?;
        if week.len() != 2 {
            return Err(ParseWeekError);
        }
        let year: i32 = year.parse().map_err(|_| ParseWeekError)?;
        let week: u32 = week.parse().map_err(|_| ParseWeekError)?;
        IsoWeek::new(year, week).ok_or(ParseWeekError)
    }
}
