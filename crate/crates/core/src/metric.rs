//! Metric identifiers shared by the pipeline, the CLI, and the report.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Whether larger or smaller metric values indicate a better candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::HigherBetter => "higher-better",
            Orientation::LowerBetter => "lower-better",
        }
    }
}

/// Ranking metric selected for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// Separation degree of per-class gaussians over soft labels.
    Sms,
    /// Separation degree after a seeded random projection of the logits.
    Isms,
    /// Distance-weighted separation degree over discretized regression labels.
    SmsRegression,
    /// Mean pairwise distance between cluster centroids.
    Dbc,
    /// Largest intra-cluster pairwise distance.
    Ldwc,
    /// Davies-Bouldin index.
    Dbi,
    /// Calinski-Harabasz index.
    Ch,
    /// Kullback-Leibler divergence between supplied distributions.
    Kld,
    /// Jensen-Shannon divergence between supplied distributions.
    Jsd,
}

impl MetricKind {
    pub const ALL: [MetricKind; 9] = [
        MetricKind::Sms,
        MetricKind::Isms,
        MetricKind::SmsRegression,
        MetricKind::Dbc,
        MetricKind::Ldwc,
        MetricKind::Dbi,
        MetricKind::Ch,
        MetricKind::Kld,
        MetricKind::Jsd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Sms => "sms",
            MetricKind::Isms => "isms",
            MetricKind::SmsRegression => "sms-regression",
            MetricKind::Dbc => "dbc",
            MetricKind::Ldwc => "ldwc",
            MetricKind::Dbi => "dbi",
            MetricKind::Ch => "ch",
            MetricKind::Kld => "kld",
            MetricKind::Jsd => "jsd",
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            MetricKind::Sms
            | MetricKind::Isms
            | MetricKind::SmsRegression
            | MetricKind::Dbc
            | MetricKind::Ch => Orientation::HigherBetter,
            MetricKind::Ldwc | MetricKind::Dbi | MetricKind::Kld | MetricKind::Jsd => {
                Orientation::LowerBetter
            }
        }
    }

    /// True for the metrics that run the soft-label clustering pipeline
    /// (everything except the distribution-file divergences).
    pub fn uses_soft_labels(self) -> bool {
        !matches!(self, MetricKind::Kld | MetricKind::Jsd)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        MetricKind::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown metric `{s}` (expected one of: sms, isms, sms-regression, dbc, ldwc, dbi, ch, kld, jsd)"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_names() {
        for m in MetricKind::ALL {
            assert_eq!(m.as_str().parse::<MetricKind>().unwrap(), m);
        }
        assert!("smsx".parse::<MetricKind>().is_err());
    }

    #[test]
    fn orientations() {
        assert_eq!(MetricKind::Sms.orientation(), Orientation::HigherBetter);
        assert_eq!(MetricKind::Ch.orientation(), Orientation::HigherBetter);
        assert_eq!(MetricKind::Dbi.orientation(), Orientation::LowerBetter);
        assert_eq!(MetricKind::Ldwc.orientation(), Orientation::LowerBetter);
        assert_eq!(MetricKind::Kld.orientation(), Orientation::LowerBetter);
    }
}
