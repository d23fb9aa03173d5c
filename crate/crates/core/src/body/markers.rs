use nalgebra::Vector3;

use super::{MeshSurface, SurrogateBody, SHAPE_DIM};
use crate::error::{Result, SomaError};
use crate::mocap::{LabelSet, MarkerLayout, Point3};

/// Anatomical marker placement: the vertex of `bone` nearest to the point
/// `axial` along its capsule, pushed out along `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerSpec {
    pub name: &'static str,
    pub bone: &'static str,
    pub axial: f64,
    pub direction: Point3,
}

const fn spec(name: &'static str, bone: &'static str, axial: f64, direction: Point3) -> MarkerSpec {
    MarkerSpec {
        name,
        bone,
        axial,
        direction,
    }
}

const FRONT: Point3 = [0.0, 0.0, 1.0];
const BACK: Point3 = [0.0, 0.0, -1.0];
const UP: Point3 = [0.0, 1.0, 0.0];
const LEFT: Point3 = [1.0, 0.0, 0.0];
const RIGHT: Point3 = [-1.0, 0.0, 0.0];

/// Twelve-marker desk layout.
pub const LAYOUT_12: [MarkerSpec; 12] = [
    spec("C7", "neck", 0.1, BACK),
    spec("STRN", "spine3", 0.5, FRONT),
    spec("LSHO", "l_shoulder", 0.0, UP),
    spec("RSHO", "r_shoulder", 0.0, UP),
    spec("LELB", "l_elbow", 0.0, BACK),
    spec("RELB", "r_elbow", 0.0, BACK),
    spec("LWRI", "l_wrist", 0.3, FRONT),
    spec("RWRI", "r_wrist", 0.3, FRONT),
    spec("LKNE", "l_knee", 0.0, LEFT),
    spec("RKNE", "r_knee", 0.0, RIGHT),
    spec("LANK", "l_ankle", 0.0, LEFT),
    spec("RANK", "r_ankle", 0.0, RIGHT),
];

/// Twenty-marker superset of [`LAYOUT_12`].
pub const LAYOUT_20: [MarkerSpec; 20] = [
    spec("HEAD", "head", 1.0, UP),
    spec("C7", "neck", 0.1, BACK),
    spec("STRN", "spine3", 0.5, FRONT),
    spec("T10", "spine2", 0.5, BACK),
    spec("LASI", "pelvis", 0.9, FRONT),
    spec("RASI", "pelvis", 0.1, FRONT),
    spec("LSHO", "l_shoulder", 0.0, UP),
    spec("RSHO", "r_shoulder", 0.0, UP),
    spec("LELB", "l_elbow", 0.0, BACK),
    spec("RELB", "r_elbow", 0.0, BACK),
    spec("LWRI", "l_wrist", 0.3, FRONT),
    spec("RWRI", "r_wrist", 0.3, FRONT),
    spec("LTHI", "l_hip", 0.5, LEFT),
    spec("RTHI", "r_hip", 0.5, RIGHT),
    spec("LKNE", "l_knee", 0.0, LEFT),
    spec("RKNE", "r_knee", 0.0, RIGHT),
    spec("LANK", "l_ankle", 0.0, LEFT),
    spec("RANK", "r_ankle", 0.0, RIGHT),
    spec("LTOE", "l_foot", 1.0, FRONT),
    spec("RTOE", "r_foot", 1.0, FRONT),
];

/// Resolves marker specs to vertex ids on `body`, all at the same offset.
pub fn layout_from_specs(
    body: &SurrogateBody,
    specs: &[MarkerSpec],
    offset: f64,
) -> Result<MarkerLayout> {
    let skel = body.shaped_skeleton(&[0.0; SHAPE_DIM]);
    let mut vertex_ids = Vec::with_capacity(specs.len());
    for s in specs {
        let bone = body
            .joint_index(s.bone)
            .ok_or_else(|| SomaError::InvalidArgument(format!("unknown bone {}", s.bone)))?;
        let [c0, c1] = skel.capsules[bone];
        let dir = Vector3::new(s.direction[0], s.direction[1], s.direction[2]).normalize();
        let target =
            skel.positions[bone] + c0 + (c1 - c0) * s.axial + dir * skel.radii[bone];
        vertex_ids.push(body.closest_vertex_on_bone(bone, [target.x, target.y, target.z]));
    }
    let labels = LabelSet::new(specs.iter().map(|s| s.name))?;
    let layout = MarkerLayout::new(labels, vertex_ids, vec![offset; specs.len()])?;
    layout.validate(Some(body.num_vertices()))?;
    Ok(layout)
}

/// `X_m = vertices[v_m] + d_m * normals[v_m]`.
pub fn place_virtual_markers(surface: &MeshSurface, layout: &MarkerLayout) -> Result<Vec<Point3>> {
    layout.validate(Some(surface.vertices.len()))?;
    Ok(layout
        .vertex_ids
        .iter()
        .zip(&layout.offsets)
        .map(|(&v, &d)| {
            let p = surface.vertices[v];
            let n = surface.normals[v];
            [p[0] + d * n[0], p[1] + d * n[1], p[2] + d * n[2]]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Pose;

    #[test]
    fn zero_offset_marker_is_the_vertex() {
        let surface = MeshSurface {
            vertices: vec![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]],
            normals: vec![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
        let layout =
            MarkerLayout::new(LabelSet::new(["A", "B"]).unwrap(), vec![0, 1], vec![0.0, 0.0095])
                .unwrap();
        let x = place_virtual_markers(&surface, &layout).unwrap();
        assert_eq!(x[0], [1.0, 2.0, 3.0]);
        assert_eq!(x[1], [0.0, 0.0, 0.0095]);
    }

    #[test]
    fn out_of_range_vertex_errors() {
        let surface = MeshSurface {
            vertices: vec![[0.0; 3]],
            normals: vec![[0.0, 0.0, 1.0]],
        };
        let layout =
            MarkerLayout::new(LabelSet::new(["A"]).unwrap(), vec![3], vec![0.0]).unwrap();
        assert!(place_virtual_markers(&surface, &layout).is_err());
    }

    #[test]
    fn identity_pose_layout_matches_brute_force() {
        let body = SurrogateBody::new_default();
        let layout = layout_from_specs(&body, &LAYOUT_20, 0.0095).unwrap();
        let surface = body.skin(&Pose::identity()).unwrap();
        let x = place_virtual_markers(&surface, &layout).unwrap();
        for m in 0..layout.num_markers() {
            let v = layout.vertex_ids[m];
            let mut expect = body.template[v];
            for k in 0..3 {
                expect[k] += layout.offsets[m] * surface.normals[v][k];
            }
            assert_eq!(x[m], expect);
            let dist = (0..3)
                .map(|k| (x[m][k] - surface.vertices[v][k]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((dist - layout.offsets[m]).abs() < 1e-12);
        }
    }

    #[test]
    fn layouts_use_distinct_vertices() {
        let body = SurrogateBody::new_default();
        for specs in [&LAYOUT_12[..], &LAYOUT_20[..]] {
            let layout = layout_from_specs(&body, specs, 0.0095).unwrap();
            let mut ids = layout.vertex_ids.clone();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), specs.len());
        }
    }

    #[test]
    fn left_markers_on_left_side() {
        let body = SurrogateBody::new_default();
        let layout = layout_from_specs(&body, &LAYOUT_12, 0.0095).unwrap();
        for (m, name) in layout.label_set.names().iter().enumerate() {
            let x = body.template[layout.vertex_ids[m]][0];
            if name.starts_with('L') {
                assert!(x > 0.0, "{name} at x = {x}");
            } else if name.starts_with('R') {
                assert!(x < 0.0, "{name} at x = {x}");
            }
        }
    }
}
