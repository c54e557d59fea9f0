use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptConfig;
use crate::error::PdaError;

/// Component removed from the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationSpec {
    #[serde(rename = "full")]
    Full,
    /// Single target classifier.
    #[serde(rename = "no_EL")]
    NoEnsemble,
    /// Geometry and late cross-entropy terms use every target sample.
    #[serde(rename = "no_TSCS")]
    NoConfidentSubset,
    /// One complementary label per sample, shared by every member.
    #[serde(rename = "no_CLS")]
    NoComplementSets,
    /// No class-geometry terms.
    #[serde(rename = "no_DO")]
    NoGeometry,
}

impl AblationSpec {
    pub const ALL: [AblationSpec; 5] = [
        AblationSpec::Full,
        AblationSpec::NoEnsemble,
        AblationSpec::NoConfidentSubset,
        AblationSpec::NoComplementSets,
        AblationSpec::NoGeometry,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationSpec::Full => "full",
            AblationSpec::NoEnsemble => "no_EL",
            AblationSpec::NoConfidentSubset => "no_TSCS",
            AblationSpec::NoComplementSets => "no_CLS",
            AblationSpec::NoGeometry => "no_DO",
        }
    }
}

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationSpec {
    type Err = PdaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PdaError::Config(format!("unknown ablation mode {s:?}")))
    }
}

/// `cfg` with the fields of the named ablation replaced.
pub fn apply_ablation(cfg: &AdaptConfig, spec: AblationSpec) -> AdaptConfig {
    let mut out = cfg.clone();
    match spec {
        AblationSpec::Full => {}
        AblationSpec::NoEnsemble => out.n_e = 1,
        AblationSpec::NoConfidentSubset => out.confident_filter = false,
        AblationSpec::NoComplementSets => {
            out.n_cl = 1;
            out.share_complement_set = true;
        }
        AblationSpec::NoGeometry => {
            out.alpha = 0.0;
            out.beta = 0.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_mode_touches_only_its_fields() {
        let base = AdaptConfig {
            seed: 9,
            ..Default::default()
        };
        assert_eq!(apply_ablation(&base, AblationSpec::Full), base);
        let cases: [(AblationSpec, AdaptConfig); 4] = [
            (
                AblationSpec::NoEnsemble,
                AdaptConfig {
                    n_e: 1,
                    ..base.clone()
                },
            ),
            (
                AblationSpec::NoConfidentSubset,
                AdaptConfig {
                    confident_filter: false,
                    ..base.clone()
                },
            ),
            (
                AblationSpec::NoComplementSets,
                AdaptConfig {
                    n_cl: 1,
                    share_complement_set: true,
                    ..base.clone()
                },
            ),
            (
                AblationSpec::NoGeometry,
                AdaptConfig {
                    alpha: 0.0,
                    beta: 0.0,
                    ..base.clone()
                },
            ),
        ];
        for (spec, expected) in cases {
            assert_eq!(apply_ablation(&base, spec), expected, "{spec}");
        }
    }

    #[test]
    fn names_parse_back() {
        for m in AblationSpec::ALL {
            assert_eq!(m.as_str().parse::<AblationSpec>().unwrap(), m);
        }
        assert!("no_el".parse::<AblationSpec>().is_err());
    }
}
