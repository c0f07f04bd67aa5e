use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, TimeZone, Utc, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// IANA time zone name.
    pub timezone: String,
    pub release_time: NaiveTime,
    pub weekdays_only: bool,
}

impl Default for ScheduleConfig {
    /// Weekdays at 10:00 Pacific time.
    fn default() -> Self {
        Self {
            timezone: "America/Los_Angeles".into(),
            release_time: NaiveTime::from_hms_opt(10, 0, 0).unwrap(),
            weekdays_only: true,
        }
    }
}

impl ScheduleConfig {
    pub fn tz(&self) -> Result<Tz> {
        self.timezone
            .parse::<Tz>()
            .map_err(|e| Error::Config(format!("time zone {:?}: {e}", self.timezone)))
    }

    /// Calendar date of `at` in the schedule's time zone.
    pub fn local_date(&self, at: DateTime<Utc>) -> Result<NaiveDate> {
        Ok(at.with_timezone(&self.tz()?).date_naive())
    }
}

/// The first configured release time at or after `now`, skipping weekends
/// when `weekdays_only` is set.
pub fn schedule_release(config: &ScheduleConfig, now: DateTime<Utc>) -> Result<DateTime<Utc>> {
    let tz = config.tz()?;
    let mut date = now.with_timezone(&tz).date_naive();
    for _ in 0..14 {
        let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
        if !(config.weekdays_only && weekend) {
            if let Some(local) = tz.from_local_datetime(&date.and_time(config.release_time)).earliest() {
                let at = local.with_timezone(&Utc);
                if at >= now {
                    return Ok(at);
                }
            }
        }
        date += Duration::days(1);
    }
    Err(Error::Config("no release slot within two weeks".into()))
}
