//! Conversions between solver units (km, h) and emission units (m, s).

/// km/h to m/s.
pub fn kmh_to_ms(v: f64) -> f64 {
    v / 3.6
}

/// m/s to km/h.
pub fn ms_to_kmh(v: f64) -> f64 {
    v * 3.6
}

/// km/h² to m/s².
pub fn kmh2_to_ms2(a: f64) -> f64 {
    a * 1000.0 / (3600.0 * 3600.0)
}

/// m/s² to km/h².
pub fn ms2_to_kmh2(a: f64) -> f64 {
    a * 3600.0 * 3600.0 / 1000.0
}

pub const SECONDS_PER_HOUR: f64 = 3600.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        assert!((ms_to_kmh(kmh_to_ms(90.0)) - 90.0).abs() < 1e-12);
        assert!((kmh2_to_ms2(12960.0) - 1.0).abs() < 1e-12);
        assert!((ms2_to_kmh2(1.0) - 12960.0).abs() < 1e-9);
    }
}
