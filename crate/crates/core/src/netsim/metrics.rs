//! Metric time series and their CSV export.

use std::collections::BTreeMap;

/// Quantities sampled during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    /// Clicks per gate of one batch, per link.
    DetectionProb,
    /// Exact QBER measured by error correction, per round, per link.
    Qber,
    /// Secret bits exported by one round, per link.
    SecretBits,
    /// Blocks served to applications during one day, per association.
    KeysServed,
    /// Blocks retained in the association buffer, sampled at cadence.
    BufferFill,
    /// Optical delay deviation of the fibre, ns, sampled at cadence.
    DriftDelay,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::DetectionProb => "DETECTION_PROB",
            Metric::Qber => "QBER",
            Metric::SecretBits => "SECRET_BITS",
            Metric::KeysServed => "KEYS_SERVED",
            Metric::BufferFill => "BUFFER_FILL",
            Metric::DriftDelay => "DRIFT_DELAY",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "DETECTION_PROB" => Metric::DetectionProb,
            "QBER" => Metric::Qber,
            "SECRET_BITS" => Metric::SecretBits,
            "KEYS_SERVED" => Metric::KeysServed,
            "BUFFER_FILL" => Metric::BufferFill,
            "DRIFT_DELAY" => Metric::DriftDelay,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSample {
    pub time_us: u64,
    /// Link or association the sample belongs to.
    pub target: String,
    pub metric: Metric,
    pub value: f64,
}

impl MetricSample {
    pub fn time_s(&self) -> f64 {
        self.time_us as f64 / 1e6
    }
}

/// Append-only metric log; samples strictly time-ordered per (target, metric).
#[derive(Debug, Default)]
pub struct MetricLog {
    samples: Vec<MetricSample>,
    last_time: BTreeMap<(String, Metric), u64>,
}

impl MetricLog {
    pub fn push(&mut self, time_us: u64, target: &str, metric: Metric, value: f64) {
        let key = (target.to_string(), metric);
        if let Some(&last) = self.last_time.get(&key) {
            assert!(
                time_us > last,
                "metric {} on {} sampled out of order ({} !> {})",
                metric.as_str(),
                target,
                time_us,
                last
            );
        }
        self.last_time.insert(key, time_us);
        self.samples.push(MetricSample {
            time_us,
            target: target.to_string(),
            metric,
            value,
        });
    }

    pub fn samples(&self) -> &[MetricSample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Byte-stable export: header, microsecond-precision time, values at 9
    /// significant digits in scientific notation, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,target,metric,value\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{}\n",
                format_time_us(s.time_us),
                s.target,
                s.metric.as_str(),
                format_value(s.value)
            ));
        }
        out
    }
}

pub fn format_time_us(t: u64) -> String {
    format!("{}.{:06}", t / 1_000_000, t % 1_000_000)
}

/// 9 significant digits, scientific notation.
pub fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}
