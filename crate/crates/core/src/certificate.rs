//! Serialized artifacts: crowns, square-Hamilton orders, and the pipeline
//! certificate file (JSON, versioned).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::graph::Graph;
use crate::spectral::SpectralCertificate;

pub const SCHEMA_VERSION: u32 = 1;

/// A cycle plus spikes. Spikes are `(cycle vertex, outside vertex)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crown {
    pub cycle: Vec<u32>,
    pub spikes: Vec<(u32, u32)>,
}

impl Crown {
    pub fn vertex_count(&self) -> usize {
        self.cycle.len() + self.spikes.len()
    }
}

/// Cyclic vertex order whose consecutive pairs are at distance at most two.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SquareHamiltonCertificate {
    pub order: Vec<u32>,
    pub source_crown: Crown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphIdentity {
    pub n: usize,
    pub m: usize,
    pub sha256: String,
}

impl GraphIdentity {
    pub fn of(g: &Graph) -> Self {
        Self {
            n: g.n(),
            m: g.edge_count(),
            sha256: g.content_hash(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub details: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub stage: String,
    pub message: String,
    pub diagnostics: Value,
}

/// The run parameters recorded verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParameters {
    pub seed: u64,
    pub delta: f64,
    pub delta1: f64,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineCertificate {
    pub schema_version: u32,
    pub status: CertificateStatus,
    pub graph: GraphIdentity,
    pub parameters: Option<RunParameters>,
    pub spectral: Option<SpectralCertificate>,
    pub stages: Vec<StageSummary>,
    pub crown: Option<Crown>,
    pub square_hamilton_order: Option<Vec<u32>>,
    pub failure: Option<FailureInfo>,
}

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("malformed certificate at line {line}, column {column}: {msg}")]
    Malformed { line: usize, column: usize, msg: String },
    #[error("unsupported schema version {0}")]
    Version(u32),
}

impl PipelineCertificate {
    /// Certificate for a known crown without a pipeline run (fixtures).
    pub fn for_crown(g: &Graph, crown: Crown, order: Option<Vec<u32>>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            status: CertificateStatus::Complete,
            graph: GraphIdentity::of(g),
            parameters: None,
            spectral: None,
            stages: Vec::new(),
            crown: Some(crown),
            square_hamilton_order: order,
            failure: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("certificate serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CertificateError> {
        let cert: Self = serde_json::from_str(text).map_err(|e| CertificateError::Malformed {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        if cert.schema_version != SCHEMA_VERSION {
            return Err(CertificateError::Version(cert.schema_version));
        }
        Ok(cert)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::crown_fixture;

    #[test]
    fn json_round_trip_and_malformed_location() {
        let (g, crown) = crown_fixture(4, &[0, 2]).unwrap();
        let cert = PipelineCertificate::for_crown(&g, crown, None);
        let text = cert.to_json();
        assert_eq!(PipelineCertificate::from_json(&text).unwrap(), cert);

        let truncated = &text[..text.len() / 2];
        match PipelineCertificate::from_json(truncated) {
            Err(CertificateError::Malformed { line, .. }) => assert!(line > 1),
            other => panic!("expected malformed, got {other:?}"),
        }
        let wrong = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(
            PipelineCertificate::from_json(&wrong),
            Err(CertificateError::Version(9))
        ));
    }
}
