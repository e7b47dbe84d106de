//! Similarity metrics. Every value here is minimised: lower means better
//! alignment, so mutual information is reported negated.

mod mi;
mod mind;
mod multipass;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use mi::{mutual_information, DEFAULT_BINS};
pub use mind::{mind_descriptor, mind_ssd, mind_ssd_descriptors, MindConfig, MindDescriptor};
pub use multipass::{multipass, pass_transforms, perturbation, MultipassConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mi,
    Mind,
    Deep,
}

impl MetricKind {
    pub fn id(self) -> &'static str {
        match self {
            MetricKind::Mi => "mi",
            MetricKind::Mind => "mind",
            MetricKind::Deep => "deep",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "mi" => Ok(MetricKind::Mi),
            "mind" => Ok(MetricKind::Mind),
            "deep" => Ok(MetricKind::Deep),
            other => Err(Error::config(format!("unknown metric '{other}' (expected mi, mind or deep)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for k in [MetricKind::Mi, MetricKind::Mind, MetricKind::Deep] {
            assert_eq!(k.id().parse::<MetricKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.id()));
        }
        assert!("ncc".parse::<MetricKind>().is_err());
    }
}
