//! Object geometry: an analytic cuboid for the rigid-object task and capsule
//! chains for the articulated toy hand.

use super::Vec3;

/// A capsule (sphere-swept segment) in the object frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub p0: Vec3,
    pub p1: Vec3,
    pub radius: f64,
}

/// An axis-aligned box in the object frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AaBox {
    pub center: Vec3,
    pub extents: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Union of axis-aligned boxes (a single box for the plain cuboid).
    Boxes { boxes: Vec<AaBox> },
    Capsules { segments: Vec<Capsule> },
}

/// A renderable model with the derived quantities the pipeline needs:
/// canonical bounding-box corners, the model diameter, and sampled surface
/// points for the pose metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub geometry: Geometry,
    /// The 8 corners of the axis-aligned model box, enumerated by sign
    /// pattern with x as the most significant axis:
    /// ---, --+, -+-, -++, +--, +-+, ++-, +++.
    pub corners: [Vec3; 8],
    /// Max pairwise distance over model points.
    pub diameter: f64,
    /// Deterministic surface samples for the projection and ADD metrics.
    pub surface_points: Vec<Vec3>,
}

/// Canonical sign-pattern corners of a centered box with the given extents.
pub fn box_corners(extents: Vec3) -> [Vec3; 8] {
    let h = extents / 2.0;
    let mut corners = [Vec3::zeros(); 8];
    for (i, c) in corners.iter_mut().enumerate() {
        let sx = if i & 4 == 0 { -1.0 } else { 1.0 };
        let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
        let sz = if i & 1 == 0 { -1.0 } else { 1.0 };
        *c = Vec3::new(sx * h.x, sy * h.y, sz * h.z);
    }
    corners
}

impl ObjectModel {
    /// Centered axis-aligned cuboid with the given extents (meters).
    pub fn cuboid(extents: Vec3) -> ObjectModel {
        ObjectModel {
            geometry: Geometry::Boxes {
                boxes: vec![AaBox {
                    center: Vec3::zeros(),
                    extents,
                }],
            },
            corners: box_corners(extents),
            diameter: extents.norm(),
            surface_points: cuboid_surface_grid(extents, 5),
        }
    }

    /// A cuboid with a small off-center stud on its +z face. The stud breaks
    /// all three 180-degree box symmetries, so a depth image determines the
    /// pose uniquely; a plain cuboid's depth images are symmetry-ambiguous
    /// and its corner labels unlearnable. Corners, diameter and surface
    /// points stay those of the main box (the stud is a surface feature,
    /// not part of the model box).
    pub fn studded_cuboid(extents: Vec3) -> ObjectModel {
        let mut model = ObjectModel::cuboid(extents);
        let stud_side = 0.24 * extents.min();
        let stud = AaBox {
            center: Vec3::new(
                0.25 * extents.x,
                0.25 * extents.y,
                extents.z / 2.0 + 0.6 * stud_side,
            ),
            extents: Vec3::repeat(stud_side),
        };
        let Geometry::Boxes { boxes } = &mut model.geometry else {
            unreachable!()
        };
        boxes.push(stud);
        model
    }

    /// Default object: a 10 x 8 x 6 cm cuboid with the asymmetry stud.
    pub fn default_object() -> ObjectModel {
        ObjectModel::studded_cuboid(Vec3::new(0.10, 0.08, 0.06))
    }

    /// Plain 10 x 8 x 6 cm cuboid (exact oracles, symmetric).
    pub fn default_cuboid() -> ObjectModel {
        ObjectModel::cuboid(Vec3::new(0.10, 0.08, 0.06))
    }

    /// Uniformly scale the model (used for the scale-augmentation hook).
    pub fn scaled(&self, s: f64) -> ObjectModel {
        let geometry = match &self.geometry {
            Geometry::Boxes { boxes } => Geometry::Boxes {
                boxes: boxes
                    .iter()
                    .map(|b| AaBox {
                        center: b.center * s,
                        extents: b.extents * s,
                    })
                    .collect(),
            },
            Geometry::Capsules { segments } => Geometry::Capsules {
                segments: segments
                    .iter()
                    .map(|c| Capsule {
                        p0: c.p0 * s,
                        p1: c.p1 * s,
                        radius: c.radius * s,
                    })
                    .collect(),
            },
        };
        let mut corners = self.corners;
        for c in &mut corners {
            *c *= s;
        }
        ObjectModel {
            geometry,
            corners,
            diameter: self.diameter * s,
            surface_points: self.surface_points.iter().map(|p| p * s).collect(),
        }
    }

    /// Triangulation of the box union (12 triangles per box); the renderer's
    /// view of the surface. Panics on capsule geometry.
    pub fn box_triangles(&self) -> Vec<[Vec3; 3]> {
        let Geometry::Boxes { boxes } = &self.geometry else {
            panic!("box_triangles on capsule geometry");
        };
        let mut tris = Vec::with_capacity(12 * boxes.len());
        for b in boxes {
            let c: Vec<Vec3> = box_corners(b.extents).iter().map(|p| p + b.center).collect();
            // Each face as two triangles; indices into the sign-pattern corners.
            let faces: [[usize; 4]; 6] = [
                [0, 1, 3, 2], // -x
                [4, 6, 7, 5], // +x
                [0, 4, 5, 1], // -y
                [2, 3, 7, 6], // +y
                [0, 2, 6, 4], // -z
                [1, 5, 7, 3], // +z
            ];
            for f in faces {
                tris.push([c[f[0]], c[f[1]], c[f[2]]]);
                tris.push([c[f[0]], c[f[2]], c[f[3]]]);
            }
        }
        tris
    }
}

/// Per-face grid of surface samples (6 faces, grid x grid each).
fn cuboid_surface_grid(extents: Vec3, grid: usize) -> Vec<Vec3> {
    let h = extents / 2.0;
    let mut pts = Vec::with_capacity(6 * grid * grid);
    let lin = |i: usize, half: f64| -half + (i as f64 + 0.5) / grid as f64 * 2.0 * half;
    for i in 0..grid {
        for j in 0..grid {
            let (u, v, w) = (lin(i, h.x), lin(j, h.y), h.z);
            pts.push(Vec3::new(u, v, -w));
            pts.push(Vec3::new(u, v, w));
            let (u, v, w) = (lin(i, h.x), lin(j, h.z), h.y);
            pts.push(Vec3::new(u, -w, v));
            pts.push(Vec3::new(u, w, v));
            let (u, v, w) = (lin(i, h.y), lin(j, h.z), h.x);
            pts.push(Vec3::new(-w, u, v));
            pts.push(Vec3::new(w, u, v));
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_follow_sign_pattern_order() {
        let m = ObjectModel::cuboid(Vec3::new(2.0, 4.0, 6.0));
        assert_eq!(m.corners[0], Vec3::new(-1.0, -2.0, -3.0));
        assert_eq!(m.corners[1], Vec3::new(-1.0, -2.0, 3.0));
        assert_eq!(m.corners[2], Vec3::new(-1.0, 2.0, -3.0));
        assert_eq!(m.corners[7], Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn diameter_is_max_pairwise_distance() {
        let m = ObjectModel::default_cuboid();
        let mut max = 0.0f64;
        for a in &m.corners {
            for b in &m.corners {
                max = max.max((a - b).norm());
            }
        }
        assert!((m.diameter - max).abs() < 1e-12);
        assert!((m.diameter - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn surface_points_lie_on_the_surface() {
        let e = Vec3::new(0.1, 0.08, 0.06);
        let m = ObjectModel::cuboid(e);
        assert_eq!(m.surface_points.len(), 150);
        for p in &m.surface_points {
            let on_x = (p.x.abs() - e.x / 2.0).abs() < 1e-12;
            let on_y = (p.y.abs() - e.y / 2.0).abs() < 1e-12;
            let on_z = (p.z.abs() - e.z / 2.0).abs() < 1e-12;
            assert!(on_x || on_y || on_z, "{p:?} not on any face plane");
            assert!(p.x.abs() <= e.x / 2.0 + 1e-12);
            assert!(p.y.abs() <= e.y / 2.0 + 1e-12);
            assert!(p.z.abs() <= e.z / 2.0 + 1e-12);
        }
    }
}
