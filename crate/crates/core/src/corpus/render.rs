//! Text renderings of timestamps and coordinates, so that date and place
//! answers can be found by word matching.

use chrono::{DateTime, Datelike, Timelike, Utc, Weekday};

use super::Gps;

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

/// Lowercase month name for a 1-based month number.
pub fn month_name(month: u32) -> &'static str {
    MONTHS[(month as usize - 1) % 12]
}

/// Meteorological season (northern hemisphere).
pub fn season(month: u32) -> &'static str {
    match month {
        3..=5 => "spring",
        6..=8 => "summer",
        9..=11 => "autumn",
        _ => "winter",
    }
}

fn weekday_name(day: Weekday) -> &'static str {
    match day {
        Weekday::Mon => "monday",
        Weekday::Tue => "tuesday",
        Weekday::Wed => "wednesday",
        Weekday::Thu => "thursday",
        Weekday::Fri => "friday",
        Weekday::Sat => "saturday",
        Weekday::Sun => "sunday",
    }
}

fn datetime(timestamp: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(timestamp, 0).unwrap_or(DateTime::UNIX_EPOCH)
}

/// "YYYY MM month DD weekday season HH", e.g. `2017 05 may 16 tuesday spring 14`.
pub fn render_time(timestamp: i64) -> String {
    let t = datetime(timestamp);
    format!(
        "{:04} {:02} {} {:02} {} {} {:02}",
        t.year(),
        t.month(),
        month_name(t.month()),
        t.day(),
        weekday_name(t.weekday()),
        season(t.month()),
        t.hour()
    )
}

/// "month YYYY", the form used for date answers.
pub fn month_year(timestamp: i64) -> String {
    let t = datetime(timestamp);
    format!("{} {:04}", month_name(t.month()), t.year())
}

/// Coordinates rounded to two decimals, followed by the place name if any.
pub fn render_gps(gps: &Gps) -> String {
    let mut out = format!("{:.2} {:.2}", gps.lat, gps.lon);
    if let Some(place) = &gps.place {
        out.push(' ');
        out.push_str(place);
    }
    out
}
