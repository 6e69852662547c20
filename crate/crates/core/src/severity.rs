//! Hospital-level imputation and the three-tier severity index.
//!
//! County values are split across a county's hospitals in proportion to
//! employee counts. Each hospital then gets three sub-scores in {1, 2, 3}
//! by tertile across all hospitals:
//!
//! - current imputed deaths,
//! - predicted imputed deaths (5-day ensemble forecast),
//! - predicted imputed deaths per ICU bed, `predicted / (icu_beds + 1)`.
//!
//! The sub-scores add to a total in 3..=9: 3–4 Low, 5–6 Medium, 7–9 High.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::model::CountyId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeverityError {
    #[error("no hospitals in county {0}")]
    NoHospitals(CountyId),
    #[error("hospitals in county {0} have zero total employees")]
    ZeroEmployees(CountyId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Medium,
    High,
}

impl Level {
    pub fn from_total(total: u8) -> Level {
        match total {
            0..=4 => Level::Low,
            5..=6 => Level::Medium,
            _ => Level::High,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Level> {
        match s {
            "low" => Some(Level::Low),
            "medium" => Some(Level::Medium),
            "high" => Some(Level::High),
            _ => None,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Splits `county_value` across hospitals with the given employee counts.
pub fn impute_hospital(county: &CountyId, county_value: f64, employees: &[u64]) -> Result<Vec<f64>, SeverityError> {
    if employees.is_empty() {
        return Err(SeverityError::NoHospitals(county.clone()));
    }
    let total: u64 = employees.iter().sum();
    if total == 0 {
        return Err(SeverityError::ZeroEmployees(county.clone()));
    }
    let total = total as f64;
    Ok(employees.iter().map(|&e| county_value * e as f64 / total).collect())
}

/// Severity inputs of one hospital.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HospitalInput {
    pub hospital: String,
    pub county: CountyId,
    pub current_imputed: f64,
    pub predicted_imputed: f64,
    pub icu_beds: u64,
}

impl HospitalInput {
    /// Predicted imputed deaths per ICU bed, with one bed added.
    pub fn icu_strain(&self) -> f64 {
        self.predicted_imputed / (self.icu_beds as f64 + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityRecord {
    pub hospital: String,
    pub county: CountyId,
    pub current_imputed: f64,
    pub predicted_imputed: f64,
    pub icu_beds: u64,
    /// Current, predicted and ICU-strain sub-scores.
    pub sub_scores: [u8; 3],
    pub total: u8,
    pub level: Level,
}

/// Tertile cut points of a feature over all hospitals.
#[derive(Debug, Clone, Copy)]
struct Tertiles {
    low: f64,
    high: f64,
    degenerate: bool,
}

impl Tertiles {
    fn new(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let degenerate = sorted.first().map(|f| f.total_cmp(&sorted[n - 1]) == Ordering::Equal).unwrap_or(true);
        if degenerate {
            return Tertiles { low: 0.0, high: 0.0, degenerate };
        }
        // nearest-rank cut points at 1/3 and 2/3
        let low = sorted[n.div_ceil(3) - 1];
        let high = sorted[(2 * n).div_ceil(3) - 1];
        Tertiles { low, high, degenerate }
    }

    /// Ties at a cut point take the lower score.
    fn score(&self, x: f64) -> u8 {
        if self.degenerate {
            return 2;
        }
        1 + u8::from(x > self.low) + u8::from(x > self.high)
    }
}

/// Scores every hospital. Results are in input order and depend only on
/// the multiset of inputs, not their order.
pub fn severity_index(inputs: &[HospitalInput], exec: Execution) -> Vec<SeverityRecord> {
    let current: Vec<f64> = inputs.iter().map(|h| h.current_imputed).collect();
    let predicted: Vec<f64> = inputs.iter().map(|h| h.predicted_imputed).collect();
    let strain: Vec<f64> = inputs.iter().map(HospitalInput::icu_strain).collect();
    let cuts = [Tertiles::new(&current), Tertiles::new(&predicted), Tertiles::new(&strain)];
    exec.map(inputs, |h| {
        let sub_scores =
            [cuts[0].score(h.current_imputed), cuts[1].score(h.predicted_imputed), cuts[2].score(h.icu_strain())];
        let total = sub_scores.iter().sum();
        SeverityRecord {
            hospital: h.hospital.clone(),
            county: h.county.clone(),
            current_imputed: h.current_imputed,
            predicted_imputed: h.predicted_imputed,
            icu_beds: h.icu_beds,
            sub_scores,
            total,
            level: Level::from_total(total),
        }
    })
}
