use std::fmt;

use crate::numerics::{ComplexScalar, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateKind {
    Theorem1,
    Lemma1,
    Theorem3,
    FiniteChain,
}

impl CertificateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CertificateKind::Theorem1 => "theorem1",
            CertificateKind::Lemma1 => "lemma1",
            CertificateKind::Theorem3 => "theorem3",
            CertificateKind::FiniteChain => "finite-chain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    ErgodicCertified,
    NonErgodicCertified,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::ErgodicCertified => "ergodic-certified",
            Verdict::NonErgodicCertified => "non-ergodic-certified",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// Facts a verdict rests on.
#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    FiniteChain {
        states: usize,
        recurrent_classes: usize,
        exact: bool,
    },
    Theorem1 {
        /// Largest spectral radius over the agent matrices.
        agent_radius: Option<f64>,
        filter_radius: Option<f64>,
        controller_radius: Option<f64>,
        /// Product of the declared per-agent floors.
        floor: Option<f64>,
        floor_violation: Option<String>,
        contraction_index: Option<usize>,
        m_max: usize,
    },
    Lemma1 {
        lmi_feasible: bool,
        contraction_index: Option<usize>,
        m_max: usize,
    },
    Theorem3 {
        pole: Option<ComplexScalar>,
        pole_order: Option<usize>,
        output_count: Option<usize>,
        generator: Option<Rational>,
    },
}

/// Outcome of one of the ergodicity analyses, with its evidence and the
/// reasons behind an inconclusive verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub verdict: Verdict,
    pub evidence: Evidence,
    pub reasons: Vec<String>,
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref()
        .map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn float(v: f64) -> String {
    format!("{v:.17e}")
}

impl Certificate {
    /// Stable `key=value` lines, one fact per line.
    pub fn fields(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("kind".to_string(), self.kind.as_str().to_string()),
            ("verdict".to_string(), self.verdict.as_str().to_string()),
        ];
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        match &self.evidence {
            Evidence::FiniteChain {
                states,
                recurrent_classes,
                exact,
            } => {
                push("states", states.to_string());
                push("recurrent_classes", recurrent_classes.to_string());
                push("exact", exact.to_string());
            }
            Evidence::Theorem1 {
                agent_radius,
                filter_radius,
                controller_radius,
                floor,
                floor_violation,
                contraction_index,
                m_max,
            } => {
                push("agent_spectral_radius", opt(&agent_radius.map(float)));
                push("filter_spectral_radius", opt(&filter_radius.map(float)));
                push(
                    "controller_spectral_radius",
                    opt(&controller_radius.map(float)),
                );
                push("floor", opt(&floor.map(float)));
                push("floor_violation", opt(floor_violation));
                push("contraction_index", opt(contraction_index));
                push("m_max", m_max.to_string());
            }
            Evidence::Lemma1 {
                lmi_feasible,
                contraction_index,
                m_max,
            } => {
                push("lmi_feasible", lmi_feasible.to_string());
                push(
                    "contraction_index",
                    contraction_index
                        .map_or_else(|| "not-found-within-budget".into(), |m| m.to_string()),
                );
                push("m_max", m_max.to_string());
            }
            Evidence::Theorem3 {
                pole,
                pole_order,
                output_count,
                generator,
            } => {
                push(
                    "pole",
                    opt(&pole.map(|p| {
                        let sign = if p.im.is_sign_negative() { "" } else { "+" };
                        format!("{}{sign}{}i", float(p.re), float(p.im))
                    })),
                );
                push("pole_order", opt(pole_order));
                push("output_count", opt(output_count));
                push("generator", opt(generator));
            }
        }
        for r in &self.reasons {
            out.push(("reason".to_string(), r.clone()));
        }
        out
    }

    pub fn to_document(&self) -> String {
        self.fields()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_document())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rational::ratio;

    #[test]
    fn document_layout_is_stable() {
        let c = Certificate {
            kind: CertificateKind::Theorem3,
            verdict: Verdict::NonErgodicCertified,
            evidence: Evidence::Theorem3 {
                pole: Some(ComplexScalar::new(1.0, 0.0)),
                pole_order: Some(1),
                output_count: Some(9),
                generator: Some(ratio(1, 2)),
            },
            reasons: vec![],
        };
        let doc = c.to_document();
        let keys: Vec<&str> = doc.lines().map(|l| l.split('=').next().unwrap()).collect();
        assert_eq!(
            keys,
            [
                "kind",
                "verdict",
                "pole",
                "pole_order",
                "output_count",
                "generator"
            ]
        );
        assert!(doc.contains("generator=1/2\n"));
        assert!(
            doc.contains("pole=1.00000000000000000e0+0.00000000000000000e0i\n"),
            "{doc}"
        );
        assert!(doc.contains("verdict=non-ergodic-certified\n"));
    }

    #[test]
    fn lemma_without_index_says_so() {
        let c = Certificate {
            kind: CertificateKind::Lemma1,
            verdict: Verdict::ErgodicCertified,
            evidence: Evidence::Lemma1 {
                lmi_feasible: true,
                contraction_index: None,
                m_max: 3,
            },
            reasons: vec!["x".into()],
        };
        assert!(c
            .to_document()
            .contains("contraction_index=not-found-within-budget\n"));
        assert!(c.to_document().ends_with("reason=x\n"));
    }
}
