//! Grid axis specifications: `start:stop:count` (inclusive, evenly spaced)
//! or a comma-separated list of values.

use gqi_core::rates::linspace;

pub fn parse(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty grid".into());
    }
    let values = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, stop, count] = parts[..] else {
            return Err(format!("expected start:stop:count, got `{text}`"));
        };
        let count: usize = count.trim().parse().map_err(|_| format!("bad count `{count}`"))?;
        if count == 0 {
            return Err("count must be >= 1".into());
        }
        linspace(number(start)?, number(stop)?, count)
    } else {
        text.split(',').map(number).collect::<Result<_, _>>()?
    };
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(format!("grid values must be positive, got {v}"));
    }
    Ok(values)
}

fn number(s: &str) -> Result<f64, String> {
    s.trim().parse().map_err(|_| format!("bad number `{}`", s.trim()))
}
