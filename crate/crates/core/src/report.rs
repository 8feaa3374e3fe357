//! JSON report schema shared by the library and the command-line front end.

use serde::Serialize;

use crate::game::CriticalPoint;
use crate::optimizer::MaximaSet;
use crate::robustness::RobustnessCertificate;
use crate::verdict::Verdict;

/// Serializable view of a critical point.
#[derive(Debug, Clone, Serialize)]
pub struct CriticalPointReport {
    pub angles: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    /// Row-major Hessian.
    pub hessian: Vec<Vec<f64>>,
    pub hessian_eigenvalues: Vec<f64>,
}

impl From<&CriticalPoint> for CriticalPointReport {
    fn from(cp: &CriticalPoint) -> Self {
        let m = cp.hessian.nrows();
        Self {
            angles: cp.point.angles.clone(),
            value: cp.value,
            gradient_norm: cp.gradient_norm,
            hessian: (0..m)
                .map(|i| (0..m).map(|j| cp.hessian[(i, j)]).collect())
                .collect(),
            hessian_eigenvalues: cp.hessian_eigenvalues.clone(),
        }
    }
}

/// Serializable view of a maxima set.
#[derive(Debug, Clone, Serialize)]
pub struct MaximaReport {
    pub q_f: f64,
    pub converged_fraction: f64,
    pub degenerate: bool,
    pub maxima: Vec<CriticalPointReport>,
}

impl From<&MaximaSet> for MaximaReport {
    fn from(set: &MaximaSet) -> Self {
        Self {
            q_f: set.q_f,
            converged_fraction: set.converged_fraction,
            degenerate: set.degenerate,
            maxima: set.maxima.iter().map(CriticalPointReport::from).collect(),
        }
    }
}

/// Top-level analysis report.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub tool_version: String,
    /// SHA-256 of the input file, when the game came from a file.
    pub input_digest: Option<String>,
    pub seed: u64,
    pub verdict: Verdict,
    pub maxima: MaximaReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robustness: Option<RobustnessCertificate>,
    /// Stage name and elapsed seconds.
    pub timings: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::XorGame;
    use crate::optimizer::OptimizerConfig;
    use crate::verdict::classify_full;

    #[test]
    fn report_serializes_and_round_trips_as_json() {
        let cls = classify_full(&XorGame::chsh(), &OptimizerConfig::default()).unwrap();
        let report = AnalysisReport {
            tool_version: "test".into(),
            input_digest: Some("00".repeat(32)),
            seed: 0,
            verdict: cls.verdict.clone(),
            maxima: MaximaReport::from(&cls.maxima),
            robustness: None,
            timings: vec![("classify".into(), 0.25)],
            warnings: vec![],
        };
        let text = report.to_json();
        // Valid JSON whose values survive a parse/serialize cycle (floats
        // print in shortest round-trip form, so no precision is lost).
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let again = serde_json::to_string_pretty(&value).unwrap();
        let value2: serde_json::Value = serde_json::from_str(&again).unwrap();
        assert_eq!(value, value2);
        assert!(text.contains("\"is_robust_self_test\": true"));
    }
}
