//! Deterministic spatiotemporal arithmetic: great-circle distance, calendar
//! features, time gaps and the bucketizers feeding the attention bias tables.
//!
//! All bucket intervals are half-open, `[b_{i-1}, b_i)`, so a value sitting
//! exactly on a boundary falls into the upper bucket.

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub const HOUR: i64 = 3600;
pub const DAY: i64 = 24 * HOUR;

/// Time-gap bucket boundaries in seconds: 1h, 6h, 24h, 7d, 30d.
pub const TIME_BOUNDARIES: [i64; 5] = [HOUR, 6 * HOUR, DAY, 7 * DAY, 30 * DAY];
pub const TIME_BUCKETS: usize = TIME_BOUNDARIES.len() + 1;

/// Distance bucket boundaries in kilometers.
pub const DIST_BOUNDARIES: [f64; 4] = [0.1, 0.5, 2.0, 10.0];
pub const DIST_BUCKETS: usize = DIST_BOUNDARIES.len() + 1;

pub const HOURS_PER_DAY: usize = 24;
pub const DAYS_PER_WEEK: usize = 7;

/// Haversine great-circle distance between two points given in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // rounding can push `a` a hair past 1 for antipodal points
    2.0 * EARTH_RADIUS_KM * a.clamp(0.0, 1.0).sqrt().asin()
}

/// Calendar features of a UTC timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeFeatures {
    /// 0..=23
    pub hour: usize,
    /// 0..=6, Monday = 0
    pub weekday: usize,
}

pub fn time_features(timestamp: i64) -> TimeFeatures {
    let secs_of_day = timestamp.rem_euclid(DAY);
    let days = timestamp.div_euclid(DAY);
    TimeFeatures {
        hour: (secs_of_day / HOUR) as usize,
        // 1970-01-01 was a Thursday
        weekday: (days + 3).rem_euclid(7) as usize,
    }
}

/// Non-negative gap between an event and the most recent event.
pub fn time_gap(t_i: i64, t_last: i64) -> i64 {
    (t_last - t_i).max(0)
}

pub fn bucketize_time(delta: i64) -> usize {
    TIME_BOUNDARIES.partition_point(|&b| b <= delta)
}

pub fn bucketize_dist(km: f64) -> usize {
    DIST_BOUNDARIES.partition_point(|&b| b <= km)
}
