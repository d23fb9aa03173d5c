//! Articulated surrogate body.
//!
//! 22 joints (a root plus 21 body joints) each own one capsule of the
//! surface. Capsules are tessellated into rings with a fixed triangle
//! topology, skinned with linear blend skinning, and reshaped by a
//! 10-dimensional shape vector that scales bone lengths and radii.
//!
//! Coordinates are meters with `+y` up, `+z` forward and `+x` to the body's
//! left. The root joint sits at the origin in the rest pose, which is an
//! A-pose.

mod markers;
mod motion;

pub use markers::{layout_from_specs, place_virtual_markers, MarkerSpec, LAYOUT_12, LAYOUT_20};
pub use motion::{rotation_about_up, sample_motion, sample_shape, MotionClip, MotionConfig, Pose, ShapePrior};

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SomaError};
use crate::mocap::{MarkerLayout, Point3};

/// Root plus 21 body joints.
pub const NUM_JOINTS: usize = 22;
pub const SHAPE_DIM: usize = 10;

const RING_SEGMENTS: usize = 10;
const BODY_RINGS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const CAP_LATITUDES: [f64; 2] = [std::f64::consts::FRAC_PI_6, std::f64::consts::FRAC_PI_3];
/// Fraction of a capsule near its start that blends with the parent bone.
const BLEND_ZONE: f64 = 0.3;

const BODY_FORMAT: &str = "soma-body/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint.
    pub offset: Point3,
    /// Capsule axis endpoints relative to this joint, rest pose.
    pub capsule: [Point3; 2],
    pub radius: f64,
    /// Axis-angle box limits, `[lo, hi]` per local axis, radians.
    pub limits: [[f64; 2]; 3],
    /// Linear response of this bone's length scale to the shape vector.
    pub length_coeffs: [f64; SHAPE_DIM],
    /// Linear response of this bone's radius scale to the shape vector.
    pub radius_coeffs: [f64; SHAPE_DIM],
}

/// Where a template vertex sits on its capsule: `capsule[0] + axial *
/// (capsule[1] - capsule[0]) + radius * direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexBinding {
    pub bone: usize,
    pub axial: f64,
    pub direction: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateBody {
    pub joints: Vec<Joint>,
    pub bindings: Vec<VertexBinding>,
    /// Sparse skinning weights per vertex, `(bone, weight)`.
    pub weights: Vec<Vec<(usize, f64)>>,
    pub faces: Vec<[usize; 3]>,
    /// Rest-pose vertices for the zero shape vector.
    pub template: Vec<Point3>,
    #[serde(skip)]
    neighbors: Vec<Vec<usize>>,
}

/// Posed surface.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSurface {
    pub vertices: Vec<Point3>,
    pub normals: Vec<Point3>,
}

#[derive(Serialize, Deserialize)]
struct BodyFile {
    format: String,
    #[serde(flatten)]
    body: SurrogateBody,
}

fn v3(p: Point3) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn p3(v: Vector3<f64>) -> Point3 {
    [v.x, v.y, v.z]
}

fn mirror(p: Point3) -> Point3 {
    [-p[0], p[1], p[2]]
}

/// Two unit vectors spanning the plane orthogonal to `axis`, with
/// `e1 x e2 = axis`.
fn orthonormal_frame(axis: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.z.abs() < 0.9 {
        Vector3::z()
    } else {
        Vector3::x()
    };
    let e1 = helper.cross(&axis).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

struct JointSpec {
    name: String,
    parent: Option<usize>,
    offset: Point3,
    capsule: [Point3; 2],
    radius: f64,
    limits: [[f64; 2]; 3],
    length_coeffs: [f64; SHAPE_DIM],
    radius_coeffs: [f64; SHAPE_DIM],
}

fn coeffs(entries: &[(usize, f64)]) -> [f64; SHAPE_DIM] {
    let mut c = [0.0; SHAPE_DIM];
    for &(k, v) in entries {
        c[k] += v;
    }
    c
}

// Shape vector roles: 0 overall size, 1 girth, 2 leg length, 3 arm length,
// 4 torso length, 5 shoulder width, 6 hip width, 7 head size, 8 arm girth,
// 9 leg girth.
fn default_joint_specs() -> Vec<JointSpec> {
    let arm_dir = {
        let a = 40f64.to_radians();
        [a.cos(), -a.sin(), 0.0]
    };
    let along = |s: f64| [arm_dir[0] * s, arm_dir[1] * s, 0.0];
    let sym = |lim: f64| [[-lim, lim]; 3];

    let torso_len = coeffs(&[(0, 0.04), (4, 0.05)]);
    let torso_rad = coeffs(&[(0, 0.03), (1, 0.08)]);
    let leg_len = coeffs(&[(0, 0.04), (2, 0.05)]);
    let leg_rad = coeffs(&[(0, 0.03), (1, 0.06), (9, 0.08)]);
    let arm_len = coeffs(&[(0, 0.04), (3, 0.05)]);
    let arm_rad = coeffs(&[(0, 0.03), (1, 0.06), (8, 0.08)]);

    let mut specs = vec![
        JointSpec {
            name: "pelvis".into(),
            parent: None,
            offset: [0.0; 3],
            capsule: [[-0.08, 0.0, 0.0], [0.08, 0.0, 0.0]],
            radius: 0.11,
            limits: [[-0.3, 0.3], [-0.5, 0.5], [-0.2, 0.2]],
            length_coeffs: coeffs(&[(0, 0.04), (6, 0.08)]),
            radius_coeffs: torso_rad,
        },
        JointSpec {
            name: "spine1".into(),
            parent: Some(0),
            offset: [0.0, 0.10, 0.0],
            capsule: [[0.0, 0.0, 0.0], [0.0, 0.11, 0.0]],
            radius: 0.12,
            limits: sym(0.25),
            length_coeffs: torso_len,
            radius_coeffs: torso_rad,
        },
        JointSpec {
            name: "spine2".into(),
            parent: Some(1),
            offset: [0.0, 0.13, 0.0],
            capsule: [[0.0, 0.0, 0.0], [0.0, 0.11, 0.0]],
            radius: 0.125,
            limits: sym(0.25),
            length_coeffs: torso_len,
            radius_coeffs: torso_rad,
        },
        JointSpec {
            name: "spine3".into(),
            parent: Some(2),
            offset: [0.0, 0.13, 0.0],
            capsule: [[-0.07, 0.06, 0.0], [0.07, 0.06, 0.0]],
            radius: 0.12,
            limits: sym(0.25),
            length_coeffs: torso_len,
            radius_coeffs: torso_rad,
        },
        JointSpec {
            name: "neck".into(),
            parent: Some(3),
            offset: [0.0, 0.17, 0.0],
            capsule: [[0.0, 0.0, 0.0], [0.0, 0.08, 0.0]],
            radius: 0.05,
            limits: sym(0.4),
            length_coeffs: torso_len,
            radius_coeffs: torso_rad,
        },
        JointSpec {
            name: "head".into(),
            parent: Some(4),
            offset: [0.0, 0.10, 0.0],
            capsule: [[0.0, 0.04, 0.01], [0.0, 0.13, 0.01]],
            radius: 0.09,
            limits: sym(0.4),
            length_coeffs: coeffs(&[(0, 0.04), (7, 0.06)]),
            radius_coeffs: coeffs(&[(0, 0.03), (7, 0.06)]),
        },
    ];

    // left side, mirrored below for the right side
    let left_leg = [
        JointSpec {
            name: "l_hip".into(),
            parent: Some(0),
            offset: [0.09, -0.06, 0.0],
            capsule: [[0.0, 0.0, 0.0], [0.0, -0.38, 0.0]],
            radius: 0.07,
            limits: [[-1.4, 0.4], [-0.4, 0.4], [-0.2, 0.6]],
            length_coeffs: leg_len,
            radius_coeffs: leg_rad,
        },
        JointSpec {
            name: "l_knee".into(),
            parent: None,
            offset: [0.0, -0.42, 0.0],
            capsule: [[0.0, 0.0, 0.0], [0.0, -0.37, 0.0]],
            radius: 0.05,
            limits: [[0.0, 2.0], [-0.05, 0.05], [-0.05, 0.05]],
            length_coeffs: leg_len,
            radius_coeffs: leg_rad,
        },
        JointSpec {
            name: "l_ankle".into(),
            parent: None,
            offset: [0.0, -0.40, 0.0],
            capsule: [[0.0, 0.0, 0.0], [0.0, -0.04, 0.05]],
            radius: 0.04,
            limits: [[-0.5, 0.5], [-0.2, 0.2], [-0.2, 0.2]],
            length_coeffs: leg_len,
            radius_coeffs: leg_rad,
        },
        JointSpec {
            name: "l_foot".into(),
            parent: None,
            offset: [0.0, -0.06, 0.08],
            capsule: [[0.0, 0.0, 0.0], [0.0, 0.0, 0.07]],
            radius: 0.035,
            limits: [[-0.3, 0.3], [-0.05, 0.05], [-0.05, 0.05]],
            length_coeffs: leg_len,
            radius_coeffs: leg_rad,
        },
    ];
    let left_arm = [
        JointSpec {
            name: "l_collar".into(),
            parent: Some(3),
            offset: [0.03, 0.14, 0.0],
            capsule: [[0.0, 0.0, 0.0], [0.11, 0.0, 0.0]],
            radius: 0.05,
            limits: sym(0.2),
            length_coeffs: coeffs(&[(0, 0.04), (5, 0.08)]),
            radius_coeffs: arm_rad,
        },
        JointSpec {
            name: "l_shoulder".into(),
            parent: None,
            offset: [0.14, 0.0, 0.0],
            capsule: [[0.0, 0.0, 0.0], along(0.26)],
            radius: 0.05,
            limits: [[-1.2, 1.2], [-0.8, 0.8], [-0.8, 0.8]],
            length_coeffs: arm_len,
            radius_coeffs: arm_rad,
        },
        JointSpec {
            name: "l_elbow".into(),
            parent: None,
            offset: along(0.28),
            capsule: [[0.0, 0.0, 0.0], along(0.24)],
            radius: 0.04,
            limits: [[-0.05, 0.05], [-2.2, 0.0], [-0.05, 0.05]],
            length_coeffs: arm_len,
            radius_coeffs: arm_rad,
        },
        JointSpec {
            name: "l_wrist".into(),
            parent: None,
            offset: along(0.25),
            capsule: [[0.0, 0.0, 0.0], along(0.08)],
            radius: 0.035,
            limits: sym(0.5),
            length_coeffs: arm_len,
            radius_coeffs: arm_rad,
        },
    ];

    let push_chain = |specs: &mut Vec<JointSpec>, chain: &[JointSpec], right: bool| {
        for (i, js) in chain.iter().enumerate() {
            let parent = if i == 0 {
                js.parent
            } else {
                Some(specs.len() - 1)
            };
            let (name, offset, capsule, limits) = if right {
                // mirroring across x flips the sign of rotations about y and z
                let l = js.limits;
                (
                    js.name.replacen("l_", "r_", 1),
                    mirror(js.offset),
                    [mirror(js.capsule[0]), mirror(js.capsule[1])],
                    [l[0], [-l[1][1], -l[1][0]], [-l[2][1], -l[2][0]]],
                )
            } else {
                (js.name.clone(), js.offset, js.capsule, js.limits)
            };
            specs.push(JointSpec {
                name,
                parent,
                offset,
                capsule,
                radius: js.radius,
                limits,
                length_coeffs: js.length_coeffs,
                radius_coeffs: js.radius_coeffs,
            });
        }
    };
    push_chain(&mut specs, &left_leg, false);
    push_chain(&mut specs, &left_leg, true);
    push_chain(&mut specs, &left_arm, false);
    push_chain(&mut specs, &left_arm, true);
    specs
}

/// Bone geometry after applying a shape vector.
#[derive(Debug, Clone)]
pub struct ShapedSkeleton {
    /// Rest joint positions.
    pub positions: Vec<Vector3<f64>>,
    /// Rest offsets from the parent joint.
    pub offsets: Vec<Vector3<f64>>,
    pub capsules: Vec<[Vector3<f64>; 2]>,
    pub radii: Vec<f64>,
}

impl SurrogateBody {
    /// Builds the default desk-scale body (about 2000 vertices).
    pub fn new_default() -> Self {
        let joints: Vec<Joint> = default_joint_specs()
            .into_iter()
            .map(|s| Joint {
                name: s.name,
                parent: s.parent,
                offset: s.offset,
                capsule: s.capsule,
                radius: s.radius,
                limits: s.limits,
                length_coeffs: s.length_coeffs,
                radius_coeffs: s.radius_coeffs,
            })
            .collect();
        debug_assert_eq!(joints.len(), NUM_JOINTS);

        let mut bindings = Vec::new();
        let mut weights = Vec::new();
        let mut faces = Vec::new();
        for (bone, joint) in joints.iter().enumerate() {
            let axis = (v3(joint.capsule[1]) - v3(joint.capsule[0])).normalize();
            let (e1, e2) = orthonormal_frame(axis);
            let base = bindings.len();

            // rings ordered along the axis: bottom cap, body, top cap
            let mut rings: Vec<(f64, f64)> = Vec::new();
            for &lat in CAP_LATITUDES.iter().rev() {
                rings.push((0.0, -lat));
            }
            for &t in &BODY_RINGS {
                rings.push((t, 0.0));
            }
            for &lat in &CAP_LATITUDES {
                rings.push((1.0, lat));
            }

            let push_vertex = |bindings: &mut Vec<VertexBinding>,
                               weights: &mut Vec<Vec<(usize, f64)>>,
                               axial: f64,
                               dir: Vector3<f64>| {
                bindings.push(VertexBinding {
                    bone,
                    axial,
                    direction: p3(dir),
                });
                weights.push(match joint.parent {
                    Some(parent) if axial < BLEND_ZONE => {
                        let own = 0.5 + 0.5 * (axial / BLEND_ZONE);
                        vec![(bone, own), (parent, 1.0 - own)]
                    }
                    _ => vec![(bone, 1.0)],
                });
            };

            push_vertex(&mut bindings, &mut weights, 0.0, -axis);
            for &(axial, lat) in &rings {
                for s in 0..RING_SEGMENTS {
                    let phi = 2.0 * std::f64::consts::PI * s as f64 / RING_SEGMENTS as f64;
                    let radial = e1 * phi.cos() + e2 * phi.sin();
                    let dir = radial * lat.cos() + axis * lat.sin();
                    push_vertex(&mut bindings, &mut weights, axial, dir);
                }
            }
            push_vertex(&mut bindings, &mut weights, 1.0, axis);

            let bottom = base;
            let ring_start = |r: usize| base + 1 + r * RING_SEGMENTS;
            let top = base + 1 + rings.len() * RING_SEGMENTS;
            for s in 0..RING_SEGMENTS {
                let s1 = (s + 1) % RING_SEGMENTS;
                faces.push([bottom, ring_start(0) + s1, ring_start(0) + s]);
                for r in 0..rings.len() - 1 {
                    let a = ring_start(r) + s;
                    let b = ring_start(r) + s1;
                    let c = ring_start(r + 1) + s1;
                    let d = ring_start(r + 1) + s;
                    faces.push([a, b, c]);
                    faces.push([a, c, d]);
                }
                let last = rings.len() - 1;
                faces.push([ring_start(last) + s, ring_start(last) + s1, top]);
            }
        }

        let mut body = SurrogateBody {
            joints,
            bindings,
            weights,
            faces,
            template: Vec::new(),
            neighbors: Vec::new(),
        };
        body.template = body.shaped_template(&[0.0; SHAPE_DIM]);
        body.neighbors = body.compute_neighbors();
        body
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// 1-ring neighborhood of vertex `v`, ascending.
    pub fn one_ring(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    fn compute_neighbors(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.bindings.len()];
        for f in &self.faces {
            for i in 0..3 {
                let a = f[i];
                let b = f[(i + 1) % 3];
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Checks tree structure, weights, and topology.
    pub fn validate(&self) -> Result<()> {
        let nj = self.joints.len();
        if nj != NUM_JOINTS {
            return Err(SomaError::InvalidArgument(format!(
                "body must have {NUM_JOINTS} joints, got {nj}"
            )));
        }
        for (j, joint) in self.joints.iter().enumerate() {
            match joint.parent {
                None if j != 0 => {
                    return Err(SomaError::InvalidArgument(format!(
                        "joint {} has no parent but is not the root",
                        joint.name
                    )))
                }
                Some(_) if j == 0 => {
                    return Err(SomaError::InvalidArgument("root joint has a parent".into()))
                }
                // parents precede children, which rules out cycles
                Some(p) if p >= j => {
                    return Err(SomaError::InvalidArgument(format!(
                        "joint {} has parent {p} that does not precede it",
                        joint.name
                    )))
                }
                _ => {}
            }
            for lim in &joint.limits {
                if !(lim[0] <= 0.0 && 0.0 <= lim[1]) {
                    return Err(SomaError::InvalidArgument(format!(
                        "joint {} limits must contain zero",
                        joint.name
                    )));
                }
            }
        }
        let nv = self.bindings.len();
        if self.weights.len() != nv || self.template.len() != nv {
            return Err(SomaError::InvalidArgument(
                "vertex tables have inconsistent lengths".into(),
            ));
        }
        for (v, w) in self.weights.iter().enumerate() {
            let total: f64 = w.iter().map(|(_, x)| x).sum();
            if w.is_empty()
                || w.iter().any(|&(b, x)| b >= nj || x < 0.0)
                || !w.iter().any(|&(_, x)| x > 0.0)
                || (total - 1.0).abs() > 1e-9
            {
                return Err(SomaError::InvalidArgument(format!(
                    "vertex {v} has invalid skinning weights"
                )));
            }
        }
        if self.faces.iter().flatten().any(|&v| v >= nv) {
            return Err(SomaError::InvalidArgument("face index out of range".into()));
        }
        if self.neighbors.len() == nv && self.neighbors.iter().any(|n| n.is_empty()) {
            return Err(SomaError::InvalidArgument(
                "vertex without 1-ring neighborhood".into(),
            ));
        }
        Ok(())
    }

    fn length_scale(&self, j: usize, beta: &[f64; SHAPE_DIM]) -> f64 {
        let c = &self.joints[j].length_coeffs;
        (1.0 + c.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()).max(0.5)
    }

    fn radius_scale(&self, j: usize, beta: &[f64; SHAPE_DIM]) -> f64 {
        let c = &self.joints[j].radius_coeffs;
        (1.0 + c.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()).max(0.5)
    }

    /// Rest-pose bone geometry for a shape vector. A child's offset scales
    /// with its parent's length scale.
    pub fn shaped_skeleton(&self, beta: &[f64; SHAPE_DIM]) -> ShapedSkeleton {
        let n = self.joints.len();
        let mut positions = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        let mut capsules = Vec::with_capacity(n);
        let mut radii = Vec::with_capacity(n);
        for (j, joint) in self.joints.iter().enumerate() {
            let (offset, pos) = match joint.parent {
                None => (v3(joint.offset), v3(joint.offset)),
                Some(p) => {
                    let o = v3(joint.offset) * self.length_scale(p, beta);
                    (o, positions[p] + o)
                }
            };
            let s = self.length_scale(j, beta);
            positions.push(pos);
            offsets.push(offset);
            capsules.push([v3(joint.capsule[0]) * s, v3(joint.capsule[1]) * s]);
            radii.push(joint.radius * self.radius_scale(j, beta));
        }
        ShapedSkeleton {
            positions,
            offsets,
            capsules,
            radii,
        }
    }

    fn bound_position(&self, skel: &ShapedSkeleton, b: &VertexBinding) -> Vector3<f64> {
        let [c0, c1] = skel.capsules[b.bone];
        skel.positions[b.bone] + c0 + (c1 - c0) * b.axial + v3(b.direction) * skel.radii[b.bone]
    }

    /// Rest-pose vertices for a shape vector.
    pub fn shaped_template(&self, beta: &[f64; SHAPE_DIM]) -> Vec<Point3> {
        let skel = self.shaped_skeleton(beta);
        self.bindings
            .iter()
            .map(|b| p3(self.bound_position(&skel, b)))
            .collect()
    }

    /// Global joint rotations and positions for a pose.
    pub fn forward_kinematics(
        &self,
        skel: &ShapedSkeleton,
        pose: &Pose,
    ) -> (Vec<Rotation3<f64>>, Vec<Vector3<f64>>) {
        let n = self.joints.len();
        let mut rots: Vec<Rotation3<f64>> = Vec::with_capacity(n);
        let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(n);
        for (j, joint) in self.joints.iter().enumerate() {
            let local = Rotation3::from_scaled_axis(v3(pose.theta[j]));
            match joint.parent {
                None => {
                    rots.push(local);
                    pos.push(skel.positions[j] + v3(pose.translation));
                }
                Some(p) => {
                    rots.push(rots[p] * local);
                    pos.push(pos[p] + rots[p] * skel.offsets[j]);
                }
            }
        }
        (rots, pos)
    }

    /// Linear blend skinning of the shaped template, then normals from the
    /// deformed faces.
    pub fn skin(&self, pose: &Pose) -> Result<MeshSurface> {
        pose.validate()?;
        if pose.theta.len() != self.joints.len() {
            return Err(SomaError::LengthMismatch {
                what: "pose joints vs body joints",
                left: pose.theta.len(),
                right: self.joints.len(),
            });
        }
        let skel = self.shaped_skeleton(&pose.beta);
        let (rots, pos) = self.forward_kinematics(&skel, pose);
        let vertices: Vec<Point3> = self
            .bindings
            .iter()
            .zip(&self.weights)
            .map(|(b, w)| {
                let rest = self.bound_position(&skel, b);
                let mut out = Vector3::zeros();
                for &(k, wk) in w {
                    out += (rots[k] * (rest - skel.positions[k]) + pos[k]) * wk;
                }
                p3(out)
            })
            .collect();
        let normals = vertex_normals(&vertices, &self.faces);
        Ok(MeshSurface { vertices, normals })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&BodyFile {
            format: BODY_FORMAT.to_string(),
            body: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: BodyFile = serde_json::from_str(text)?;
        if file.format != BODY_FORMAT {
            return Err(SomaError::format(
                "body.json",
                format!("expected format {BODY_FORMAT}, got {}", file.format),
            ));
        }
        let mut body = file.body;
        body.neighbors = body.compute_neighbors();
        body.validate()?;
        Ok(body)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| SomaError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SomaError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Vertex of `bone` closest to a rest-pose target point.
    pub fn closest_vertex_on_bone(&self, bone: usize, target: Point3) -> usize {
        let t = v3(target);
        self.bindings
            .iter()
            .enumerate()
            .filter(|(_, b)| b.bone == bone)
            .map(|(v, _)| (v, (v3(self.template[v]) - t).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(v, _)| v)
            .expect("every bone owns vertices")
    }
}

/// Area-weighted vertex normals, normalized.
pub fn vertex_normals(vertices: &[Point3], faces: &[[usize; 3]]) -> Vec<Point3> {
    let mut acc = vec![Vector3::<f64>::zeros(); vertices.len()];
    for f in faces {
        let a = v3(vertices[f[0]]);
        let b = v3(vertices[f[1]]);
        let c = v3(vertices[f[2]]);
        let n = (b - a).cross(&(c - a));
        for &v in f {
            acc[v] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                p3(n / len)
            } else {
                [0.0, 1.0, 0.0]
            }
        })
        .collect()
}

/// Checks that a layout's vertex ids exist on this body.
pub fn bind_layout(body: &SurrogateBody, layout: &MarkerLayout) -> Result<()> {
    layout.validate(Some(body.num_vertices()))
}
