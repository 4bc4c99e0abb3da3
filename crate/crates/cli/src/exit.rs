use std::fmt;

pub const OK: u8 = 0;
pub const IO: u8 = 1;
pub const CONFIG: u8 = 2;
pub const NUMERIC: u8 = 3;
pub const VERIFICATION: u8 = 4;

/// A problem with the user's configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Exit code for a failed run.
pub fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<pdlab::Error>() {
            return if e.is_config_error() { CONFIG } else { NUMERIC };
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
    }
    NUMERIC
}
