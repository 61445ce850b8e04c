use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// A calendar month, written `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: i32,
    pub month: u8,
}

impl YearMonth {
    pub fn new(year: i32, month: u8) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(invalid(format!("month {month} outside 1..=12")));
        }
        Ok(YearMonth { year, month })
    }

    fn ordinal(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    fn from_ordinal(o: i64) -> Self {
        YearMonth {
            year: o.div_euclid(12) as i32,
            month: (o.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn add_months(self, n: i32) -> Self {
        Self::from_ordinal(self.ordinal() + i64::from(n))
    }

    /// Signed number of months from `self` to `later`.
    pub fn months_until(self, later: YearMonth) -> i64 {
        later.ordinal() - self.ordinal()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| invalid(format!("expected YYYY-MM, got {s:?}")))?;
        let year = y
            .parse()
            .map_err(|_| invalid(format!("bad year in {s:?}")))?;
        let month = m
            .parse()
            .map_err(|_| invalid(format!("bad month in {s:?}")))?;
        YearMonth::new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_crosses_years() {
        let m = YearMonth::new(2021, 11).unwrap();
        assert_eq!(m.add_months(3).to_string(), "2022-02");
        assert_eq!(m.add_months(-11).to_string(), "2020-12");
        assert_eq!(m.months_until(m.add_months(12)), 12);
    }

    #[test]
    fn parse_round_trip() {
        let m: YearMonth = "2018-03".parse().unwrap();
        assert_eq!(m, YearMonth::new(2018, 3).unwrap());
        assert_eq!(m.to_string(), "2018-03");
        assert!("2018-13".parse::<YearMonth>().is_err());
        assert!("201803".parse::<YearMonth>().is_err());
    }
}
