//! Scenario files: JSON on disk, validated into a [`Scenario`].
//!
//! Vectors are arrays, rotation matrices are 9 row-major numbers. Unknown
//! keys are rejected. Tether directions and rotations are accepted with up
//! to 1e-3 of manifold error (printed values are often rounded), projected
//! exactly, and then validated strictly; anything worse is an error naming
//! the offending field.

use plate_swarm_core::geom::{Mat3, Rotation, UnitVec, Vec2, Vec3};
use plate_swarm_core::model::{QuadrotorParams, SystemParams, SystemState, TetherState};
use plate_swarm_core::sim::{IntegratorConfig, Mode, Scenario};
use plate_swarm_core::Gains;
use serde::{Deserialize, Serialize};

/// Manifold slack tolerated in scenario files before projection.
const LOAD_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub params: ParamsSection,
    pub gains: GainsSection,
    pub initial_state: StateSection,
    pub integrator: IntegratorSection,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub m_p: f64,
    pub m_b: f64,
    #[serde(rename = "J_p")]
    pub j_p: [f64; 9],
    pub g: f64,
    pub quadrotors: [QuadSection; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSection {
    pub m: f64,
    #[serde(rename = "J")]
    pub j: [f64; 9],
    pub l: f64,
    pub x: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub k7: f64,
    pub k8: f64,
    #[serde(rename = "k_R")]
    pub k_r: f64,
    #[serde(rename = "k_Omega")]
    pub k_omega: f64,
    pub eps: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSection {
    pub o_p: [f64; 3],
    pub v_p: [f64; 3],
    #[serde(rename = "R_p")]
    pub r_p: [f64; 9],
    #[serde(rename = "Omega_p")]
    pub omega_p: [f64; 3],
    pub r_b: [f64; 2],
    pub rdot_b: [f64; 2],
    pub tethers: [TetherSection; 3],
    pub quadrotors: [QuadStateSection; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TetherSection {
    pub q: [f64; 3],
    pub omega: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadStateSection {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    #[serde(rename = "Omega")]
    pub omega: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: f64,
    pub duration: f64,
    #[serde(default = "default_decimation")]
    pub decimation: usize,
}

fn default_decimation() -> usize {
    1
}

#[derive(Debug)]
pub struct ScenarioError(pub String);

impl std::fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ScenarioError {}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn vec2(a: [f64; 2]) -> Vec2 {
    Vec2::new(a[0], a[1])
}

fn mat3(a: [f64; 9]) -> Mat3 {
    Mat3::from_row_slice(&a)
}

fn rotation_field(a: [f64; 9], field: &str) -> Result<Rotation, ScenarioError> {
    let m = mat3(a);
    let residual = (m.transpose() * m - Mat3::identity()).norm();
    let det = m.determinant();
    if residual > LOAD_TOL || (det - 1.0).abs() > LOAD_TOL {
        return Err(ScenarioError(format!(
            "{field}: not a rotation matrix (orthogonality residual {residual:.3e}, det {det:.6})"
        )));
    }
    let mut r = Rotation::from_matrix_unchecked(m);
    // Two polar Newton steps reduce 1e-3 of drift below 1e-9.
    r.reorthonormalize();
    r.reorthonormalize();
    Ok(r)
}

fn unit_field(a: [f64; 3], field: &str) -> Result<UnitVec, ScenarioError> {
    let v = vec3(a);
    let norm = v.norm();
    if (norm - 1.0).abs() > LOAD_TOL {
        return Err(ScenarioError(format!(
            "{field}: |q| = {norm:.6}, more than {LOAD_TOL} from unit length"
        )));
    }
    Ok(UnitVec::normalized(v))
}

impl ScenarioFile {
    /// Parses JSON with line/column-anchored syntax errors.
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| {
            ScenarioError(format!("{origin}:{}:{}: {e}", e.line(), e.column()))
        })
    }

    /// Converts to a validated runtime scenario.
    pub fn to_scenario(&self) -> Result<Scenario, ScenarioError> {
        let mode = match self.mode.as_str() {
            "closed-loop" => Mode::ClosedLoop,
            "passive" => Mode::Passive,
            "attitude-only" => Mode::AttitudeOnly,
            other => {
                return Err(ScenarioError(format!(
                    "mode: expected closed-loop | passive | attitude-only, got {other:?}"
                )))
            }
        };

        let params = SystemParams {
            m_p: self.params.m_p,
            m_b: self.params.m_b,
            j_p: mat3(self.params.j_p),
            gravity: self.params.g,
            quads: std::array::from_fn(|i| {
                let q = &self.params.quadrotors[i];
                QuadrotorParams {
                    mass: q.m,
                    inertia: mat3(q.j),
                    cable_length: q.l,
                    attach: vec3(q.x),
                }
            }),
        };
        params
            .validate()
            .map_err(|e| ScenarioError(format!("params: {e}")))?;

        let g = &self.gains;
        let gains = Gains {
            k1: g.k1,
            k2: g.k2,
            k3: g.k3,
            k4: g.k4,
            k5: g.k5,
            k6: g.k6,
            k7: g.k7,
            k8: g.k8,
            k_r: g.k_r,
            k_omega: g.k_omega,
            eps: g.eps,
            c0: g.c0,
            c1: g.c1,
            c2: g.c2,
        };
        gains
            .validate()
            .map_err(|e| ScenarioError(format!("gains: {e}")))?;

        let st = &self.initial_state;
        let mut tethers = [TetherState {
            q: UnitVec::e3(),
            omega: Vec3::zeros(),
        }; 3];
        for i in 0..3 {
            let q = unit_field(st.tethers[i].q, &format!("initial_state.tethers[{i}].q"))?;
            let omega_raw = vec3(st.tethers[i].omega);
            let along = omega_raw.dot(q.as_vec());
            if along.abs() > LOAD_TOL * (1.0 + omega_raw.norm()) {
                return Err(ScenarioError(format!(
                    "initial_state.tethers[{i}].omega: component along q is {along:.3e}; \
                     tether rates must be perpendicular to the tether"
                )));
            }
            tethers[i] = TetherState {
                q,
                omega: omega_raw - q.as_vec() * along,
            };
        }

        let mut quads = [plate_swarm_core::model::QuadrotorState {
            r: Rotation::identity(),
            omega: Vec3::zeros(),
        }; 3];
        for i in 0..3 {
            quads[i] = plate_swarm_core::model::QuadrotorState {
                r: rotation_field(st.quadrotors[i].r, &format!("initial_state.quadrotors[{i}].R"))?,
                omega: vec3(st.quadrotors[i].omega),
            };
        }

        let initial = SystemState {
            o_p: vec3(st.o_p),
            v_p: vec3(st.v_p),
            r_p: rotation_field(st.r_p, "initial_state.R_p")?,
            omega_p: vec3(st.omega_p),
            r_b: vec2(st.r_b),
            rdot_b: vec2(st.rdot_b),
            tethers,
            quads,
        };
        initial
            .validate(plate_swarm_core::geom::tol::ALGEBRAIC)
            .map_err(|e| ScenarioError(format!("initial_state: {e}")))?;

        let config = IntegratorConfig {
            dt: self.integrator.dt,
            duration: self.integrator.duration,
            decimation: self.integrator.decimation,
            projection_tol: 1e-9,
        };
        config
            .validate()
            .map_err(|e| ScenarioError(format!("integrator: {e}")))?;

        Ok(Scenario {
            params,
            gains,
            initial,
            config,
            mode,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Bundled scenarios shipped with the binary.
pub const BUNDLED: &[(&str, &str)] = &[
    ("paper_sec4.json", include_str!("../scenarios/paper_sec4.json")),
    ("hover.json", include_str!("../scenarios/hover.json")),
    ("passive.json", include_str!("../scenarios/passive.json")),
];

/// Loads a scenario from a path, falling back to the bundled set when the
/// path does not exist but matches a bundled name.
pub fn load(path: &str) -> Result<(ScenarioFile, Scenario), ScenarioError> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(io) => {
            let name = std::path::Path::new(path)
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or(path);
            match BUNDLED.iter().find(|(n, _)| *n == name || name == n.trim_end_matches(".json")) {
                Some((_, text)) => text.to_string(),
                None => {
                    return Err(ScenarioError(format!("{path}: {io}")));
                }
            }
        }
    };
    let file = ScenarioFile::from_json(&text, path)?;
    let scenario = file.to_scenario()?;
    Ok((file, scenario))
}
