//! JSON form of a model description: affine fields, polyhedral modes and
//! reset edges.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    build_model, AffineField, EdgeSpec, HalfSpace, HybridModel, ModeSpec, ModelError, ModelSpec,
    PolyDomain, ResetSource, TargetSpec, VectorField, VectorFieldSet,
};

/// `A(θ) = Mθ + v`; `matrix` defaults to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineFieldDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDoc {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// A mode domain is `box` (faces `2k` lower, `2k + 1` upper) followed by the
/// listed `faces`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeDoc {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoxDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faces: Vec<HalfSpace>,
    pub drift: AffineFieldDoc,
    pub diffusion: Vec<AffineFieldDoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDoc {
    pub mode: usize,
    pub face: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patch: Vec<HalfSpace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetDoc {
    Terminal {
        name: String,
    },
    /// `Φ(θ) = Rθ + b`; `matrix` defaults to the identity, `offset` to zero.
    Surface {
        mode: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offset: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub source: SourceDoc,
    pub target: TargetDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceDoc {
    pub mode: usize,
    pub face: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub dimension: usize,
    pub modes: Vec<ModeDoc>,
    #[serde(default)]
    pub terminal_states: Vec<String>,
    pub reset_edges: Vec<EdgeDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub characteristic_faces: Vec<FaceDoc>,
}

fn flatten_matrix(rows: &[Vec<f64>], d: usize, what: &str) -> Result<Vec<f64>, ModelError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(ModelError::InvalidParameter(format!("{what}: matrix must be {d}x{d}")));
    }
    Ok(rows.iter().flatten().copied().collect())
}

impl AffineFieldDoc {
    pub fn to_field(&self, d: usize, what: &str) -> Result<AffineField, ModelError> {
        if self.offset.len() != d {
            return Err(ModelError::InvalidParameter(format!(
                "{what}: offset must have length {d}"
            )));
        }
        let matrix = match &self.matrix {
            Some(rows) => flatten_matrix(rows, d, what)?,
            None => vec![0.0; d * d],
        };
        if matrix.iter().chain(&self.offset).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("{what}: non-finite coefficient")));
        }
        Ok(AffineField::new(matrix, self.offset.clone()))
    }
}

impl ModelDocument {
    pub fn to_spec(&self) -> Result<ModelSpec, ModelError> {
        let d = self.dimension;
        if d == 0 {
            return Err(ModelError::InvalidDimension(0));
        }
        let mut modes = Vec::with_capacity(self.modes.len());
        for (q, m) in self.modes.iter().enumerate() {
            let mut faces = Vec::new();
            if let Some(b) = &m.bounds {
                if b.lo.len() != d || b.hi.len() != d {
                    return Err(ModelError::InvalidParameter(format!(
                        "mode {q}: box bounds must have length {d}"
                    )));
                }
                faces.extend(PolyDomain::from_box(&b.lo, &b.hi)?.faces().iter().cloned());
            }
            faces.extend(m.faces.iter().cloned());
            let drift = m.drift.to_field(d, &format!("mode {q} drift"))?;
            let diffusion = m
                .diffusion
                .iter()
                .enumerate()
                .map(|(r, f)| {
                    f.to_field(d, &format!("mode {q} diffusion {r}"))
                        .map(|a| Arc::new(a) as Arc<dyn VectorField>)
                })
                .collect::<Result<Vec<_>, _>>()?;
            modes.push(ModeSpec {
                name: m.name.clone().unwrap_or_else(|| format!("mode{q}")),
                faces,
                fields: VectorFieldSet::new(Arc::new(drift), diffusion),
            });
        }
        let mut reset_edges = Vec::with_capacity(self.reset_edges.len());
        for (e, edge) in self.reset_edges.iter().enumerate() {
            let target = match &edge.target {
                TargetDoc::Terminal { name } => TargetSpec::Terminal(name.clone()),
                TargetDoc::Surface {
                    mode,
                    matrix,
                    offset,
                } => {
                    let what = format!("reset edge {e}");
                    let matrix = match matrix {
                        Some(rows) => flatten_matrix(rows, d, &what)?,
                        None => match TargetSpec::identity(*mode, d) {
                            TargetSpec::Surface { matrix, .. } => matrix,
                            TargetSpec::Terminal(_) => unreachable!(),
                        },
                    };
                    let offset = offset.clone().unwrap_or_else(|| vec![0.0; d]);
                    if offset.len() != d {
                        return Err(ModelError::InvalidParameter(format!(
                            "{what}: offset must have length {d}"
                        )));
                    }
                    TargetSpec::Surface {
                        mode: *mode,
                        matrix,
                        offset,
                    }
                }
            };
            reset_edges.push(EdgeSpec {
                source: ResetSource {
                    mode: edge.source.mode,
                    face: edge.source.face,
                    patch: edge.source.patch.clone(),
                },
                target,
            });
        }
        Ok(ModelSpec {
            dimension: d,
            modes,
            terminal_states: self.terminal_states.clone(),
            reset_edges,
            characteristic_faces: self
                .characteristic_faces
                .iter()
                .map(|f| (f.mode, f.face))
                .collect(),
        })
    }

    pub fn build(&self) -> Result<HybridModel, ModelError> {
        build_model(self.to_spec()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_MODE: &str = r#"{
        "dimension": 1,
        "modes": [
            {"name": "off", "box": {"lo": [19.0], "hi": [23.0]},
             "drift": {"matrix": [[-1.0]], "offset": [15.0]},
             "diffusion": [{"offset": [0.3]}]},
            {"name": "on", "box": {"lo": [17.0], "hi": [21.0]},
             "drift": {"matrix": [[-1.0]], "offset": [25.0]},
             "diffusion": [{"offset": [0.3]}]}
        ],
        "terminal_states": ["far_field"],
        "reset_edges": [
            {"source": {"mode": 0, "face": 0}, "target": {"kind": "surface", "mode": 1}},
            {"source": {"mode": 0, "face": 1}, "target": {"kind": "terminal", "name": "far_field"}},
            {"source": {"mode": 1, "face": 0}, "target": {"kind": "terminal", "name": "far_field"}},
            {"source": {"mode": 1, "face": 1}, "target": {"kind": "surface", "mode": 0}}
        ]
    }"#;

    #[test]
    fn document_round_trip_builds_a_model() {
        let doc: ModelDocument = serde_json::from_str(TWO_MODE).unwrap();
        let model = doc.build().unwrap();
        assert_eq!(model.modes().len(), 2);
        assert_eq!(model.edges().len(), 4);
        let again: ModelDocument =
            serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = TWO_MODE.replace("\"kind\": \"surface\", \"mode\": 1", "\"kind\": \"surface\", \"mode\": 1, \"scale\": 2");
        let err = serde_json::from_str::<ModelDocument>(&bad).unwrap_err();
        assert!(err.to_string().contains("scale"), "{err}");
    }

    #[test]
    fn wrong_matrix_shape_is_an_error() {
        let bad = TWO_MODE.replace("[[-1.0]], \"offset\": [15.0]", "[[-1.0, 0.0]], \"offset\": [15.0]");
        let doc: ModelDocument = serde_json::from_str(&bad).unwrap();
        assert!(matches!(doc.build(), Err(ModelError::InvalidParameter(_))));
    }
}
