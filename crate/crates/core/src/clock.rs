//! Timestamps for archives and records. A fixed clock makes offline runs
//! byte-reproducible.


#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(String),
}

impl Clock {
    pub fn fixed_epoch() -> Self {
        Clock::Fixed("1970-01-01T00:00:00Z".into())
    }

    /// RFC 3339 timestamp, second precision.
    pub fn now(&self) -> String {
        match self {
            Clock::System => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            Clock::Fixed(s) => s.clone(),
        }
    }
}
