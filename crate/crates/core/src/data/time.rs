/// Names of the derived calendar features, in layout order.
pub const TIME_FEATURE_NAMES: [&str; 4] = ["phase15", "minute", "hour", "day_of_week"];

/// Calendar features for one timestamp, computed in UTC.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeFeatures {
    /// Seconds into the current 15-second handover cycle, in `[0, 15)`.
    pub phase15: f64,
    pub minute: f64,
    pub hour: f64,
    /// Monday = 0 through Sunday = 6.
    pub day_of_week: f64,
}

impl TimeFeatures {
    pub fn from_timestamp(ts: i64) -> TimeFeatures {
        let days = ts.div_euclid(86_400);
        TimeFeatures {
            phase15: ts.rem_euclid(15) as f64,
            minute: ts.div_euclid(60).rem_euclid(60) as f64,
            hour: ts.div_euclid(3600).rem_euclid(24) as f64,
            // 1970-01-01 was a Thursday (code 3).
            day_of_week: (days + 3).rem_euclid(7) as f64,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.phase15, self.minute, self.hour, self.day_of_week]
    }
}

pub fn derive_time_features(timestamps: &[i64]) -> Vec<TimeFeatures> {
    timestamps
        .iter()
        .map(|&ts| TimeFeatures::from_timestamp(ts))
        .collect()
}
