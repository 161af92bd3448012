use super::SimError;
use crate::clinical::TubePhantomSpec;
use crate::geom::{CameraIntrinsics, FrameId, RigidTransform, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Source-to-detector distance of the simulated C-arm, mm.
pub const CARM_FOCAL_LENGTH: f64 = 980.0;
pub const CARM_PIXEL_PITCH: f64 = 0.22;
pub const CARM_IMAGE_SIZE: f64 = 1024.0;
/// Source-to-isocenter distance, mm.
pub const CARM_SOURCE_DISTANCE: f64 = 600.0;

pub const TUBE_ENTRY: &str = "tube_entry";
pub const TUBE_EXIT: &str = "tube_exit";
pub const ASIS_LEFT: &str = "asis_left";
pub const ASIS_RIGHT: &str = "asis_right";
pub const PUBIS: &str = "pubis";
pub const ACETABULUM: &str = "acetabulum";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    TubeInCube,
    PelvisLandmarks,
}

impl std::str::FromStr for PhantomKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tube_in_cube" => Ok(Self::TubeInCube),
            "pelvis_landmarks" | "pelvis" => Ok(Self::PelvisLandmarks),
            other => Err(SimError::InvalidParams(format!("unknown phantom kind {other:?}"))),
        }
    }
}

/// Geometry of a phantom in its own frame `P`, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomParams {
    TubeInCube { cube_size: f64, tube_start: Vec3, tube_end: Vec3, tube_diameter: f64 },
    PelvisLandmarks { asis_left: Vec3, asis_right: Vec3, pubis: Vec3, acetabulum: Vec3 },
}

impl PhantomParams {
    /// Frame `P`: x towards the patient's left-to-right, y anterior, z cranial.
    pub fn default_for(kind: PhantomKind) -> Self {
        match kind {
            // 80 mm cube; the tube runs between opposite faces, slightly oblique
            PhantomKind::TubeInCube => Self::TubeInCube {
                cube_size: 80.0,
                tube_start: Vec3::new(-6.0, 4.0, -40.0),
                tube_end: Vec3::new(6.0, -4.0, 40.0),
                tube_diameter: 10.0,
            },
            // adult-sized pelvis, origin between the spines
            PhantomKind::PelvisLandmarks => Self::PelvisLandmarks {
                asis_left: Vec3::new(-115.0, 0.0, 0.0),
                asis_right: Vec3::new(115.0, 0.0, 0.0),
                pubis: Vec3::new(0.0, 0.0, -95.0),
                acetabulum: Vec3::new(85.0, -40.0, -60.0),
            },
        }
    }

    pub fn kind(&self) -> PhantomKind {
        match self {
            Self::TubeInCube { .. } => PhantomKind::TubeInCube,
            Self::PelvisLandmarks { .. } => PhantomKind::PelvisLandmarks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub kind: PhantomKind,
    /// Named points in `P`.
    pub landmarks: BTreeMap<String, Vec3>,
    /// In `P`; present iff `kind` is `TubeInCube`.
    pub tube: Option<TubePhantomSpec>,
    /// `^OR T_P`.
    pub pose: RigidTransform,
}

fn finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

pub fn build_phantom(kind: PhantomKind, params: &PhantomParams) -> Result<Phantom, SimError> {
    if params.kind() != kind {
        return Err(SimError::InvalidParams(format!("{:?} parameters given for a {kind:?} phantom", params.kind())));
    }
    let mut landmarks = BTreeMap::new();
    let mut tube = None;
    match *params {
        PhantomParams::TubeInCube { cube_size, tube_start, tube_end, tube_diameter } => {
            if !(cube_size > 0.0 && cube_size.is_finite()) || !finite(&tube_start) || !finite(&tube_end) {
                return Err(SimError::InvalidParams("cube size must be positive and points finite".into()));
            }
            let spec = TubePhantomSpec::new(tube_start, tube_end, tube_diameter).map_err(|e| SimError::InvalidParams(e.to_string()))?;
            let h = cube_size / 2.0;
            for i in 0..8 {
                let c = Vec3::new(
                    if i & 1 == 0 { -h } else { h },
                    if i & 2 == 0 { -h } else { h },
                    if i & 4 == 0 { -h } else { h },
                );
                landmarks.insert(format!("corner_{}{}{}", i & 1, (i >> 1) & 1, (i >> 2) & 1), c);
            }
            landmarks.insert(TUBE_ENTRY.to_string(), tube_start);
            landmarks.insert(TUBE_EXIT.to_string(), tube_end);
            tube = Some(spec);
        }
        PhantomParams::PelvisLandmarks { asis_left, asis_right, pubis, acetabulum } => {
            if ![asis_left, asis_right, pubis, acetabulum].iter().all(finite) {
                return Err(SimError::InvalidParams("landmarks must be finite".into()));
            }
            crate::clinical::app_from_landmarks(&asis_left, &asis_right, &pubis).map_err(|e| SimError::InvalidParams(e.to_string()))?;
            landmarks.insert(ASIS_LEFT.to_string(), asis_left);
            landmarks.insert(ASIS_RIGHT.to_string(), asis_right);
            landmarks.insert(PUBIS.to_string(), pubis);
            landmarks.insert(ACETABULUM.to_string(), acetabulum);
        }
    }
    Ok(Phantom { kind, landmarks, tube, pose: RigidTransform::identity_between(FrameId::P, FrameId::OR) })
}

impl Phantom {
    pub fn with_pose(mut self, pose: RigidTransform) -> Result<Self, SimError> {
        if pose.from != FrameId::P || pose.to != FrameId::OR {
            return Err(SimError::InvalidParams(format!("phantom pose must map P to OR, got {}<-{}", pose.to, pose.from)));
        }
        self.pose = pose;
        Ok(self)
    }

    pub fn landmark_world(&self, name: &str) -> Option<Vec3> {
        self.landmarks.get(name).map(|p| self.pose.apply(p))
    }

    pub fn world_landmarks(&self) -> BTreeMap<String, Vec3> {
        self.landmarks.iter().map(|(k, p)| (k.clone(), self.pose.apply(p))).collect()
    }

    pub fn tube_world(&self) -> Option<TubePhantomSpec> {
        self.tube.map(|t| t.transformed(&self.pose))
    }

    /// Ground-truth APP in OR for a pelvis phantom.
    pub fn app_world(&self) -> Option<crate::clinical::AppFrame> {
        let (l, r, p) = (self.landmark_world(ASIS_LEFT)?, self.landmark_world(ASIS_RIGHT)?, self.landmark_world(PUBIS)?);
        crate::clinical::app_from_landmarks(&l, &r, &p).ok()
    }
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::centered(CARM_FOCAL_LENGTH, CARM_PIXEL_PITCH, CARM_IMAGE_SIZE, CARM_IMAGE_SIZE).expect("constant intrinsics are valid")
}

/// `^OR T_X` for a source `distance` mm from `target`, in direction
/// `(azimuth, elevation)`: azimuth 0 is anterior (+y), 90 is +x; elevation
/// tilts towards +z.
pub fn carm_pose(target: &Vec3, distance: f64, azimuth_deg: f64, elevation_deg: f64) -> Result<RigidTransform, SimError> {
    if !(distance > 0.0) {
        return Err(SimError::InvalidParams(format!("source distance {distance} must be positive")));
    }
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let dir = Vec3::new(az.sin() * el.cos(), az.cos() * el.cos(), el.sin());
    Ok(RigidTransform::look_at(&(target + dir * distance), target, &Vec3::z())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::project;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tube_in_cube_defaults() {
        let p = build_phantom(PhantomKind::TubeInCube, &PhantomParams::default_for(PhantomKind::TubeInCube)).unwrap();
        assert_eq!(p.tube.unwrap().diameter, 10.0);
        assert_eq!(p.landmarks.len(), 10);
        assert!(p.landmarks.contains_key("corner_111"));
        assert_eq!(p.landmark_world(TUBE_ENTRY), Some(p.tube.unwrap().axis_start));
    }

    #[test]
    fn pelvis_defaults_give_right_handed_app() {
        let p = build_phantom(PhantomKind::PelvisLandmarks, &PhantomParams::default_for(PhantomKind::PelvisLandmarks)).unwrap();
        assert!(p.tube.is_none());
        let app = p.app_world().unwrap();
        assert_abs_diff_eq!(app.lateral.cross(&app.anterior).dot(&app.longitudinal), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(app.anterior, Vec3::y(), epsilon = 1e-12);
    }

    #[test]
    fn invalid_params() {
        let zero = PhantomParams::TubeInCube { cube_size: 80.0, tube_start: Vec3::zeros(), tube_end: Vec3::zeros(), tube_diameter: 10.0 };
        assert!(matches!(build_phantom(PhantomKind::TubeInCube, &zero), Err(SimError::InvalidParams(_))));
        let pelvis = PhantomParams::default_for(PhantomKind::PelvisLandmarks);
        assert!(build_phantom(PhantomKind::TubeInCube, &pelvis).is_err());
        let flat = PhantomParams::PelvisLandmarks {
            asis_left: Vec3::new(-1.0, 0.0, 0.0),
            asis_right: Vec3::new(1.0, 0.0, 0.0),
            pubis: Vec3::new(2.0, 0.0, 0.0),
            acetabulum: Vec3::zeros(),
        };
        assert!(build_phantom(PhantomKind::PelvisLandmarks, &flat).is_err());
    }

    #[test]
    fn carm_pose_looks_at_target() {
        let k = default_intrinsics();
        let target = Vec3::new(10.0, -20.0, 5.0);
        for (az, el) in [(0.0, 0.0), (90.0, 0.0), (45.0, 20.0), (-30.0, -10.0)] {
            let pose = carm_pose(&target, CARM_SOURCE_DISTANCE, az, el).unwrap();
            let px = project(&k, &pose.invert(), &target).unwrap();
            assert_abs_diff_eq!(px, k.principal_point, epsilon = 1e-9);
            assert_abs_diff_eq!((pose.translation - target).norm(), CARM_SOURCE_DISTANCE, epsilon = 1e-9);
        }
    }

    #[test]
    fn phantom_fits_in_the_field_of_view() {
        let k = default_intrinsics();
        let p = build_phantom(PhantomKind::TubeInCube, &PhantomParams::default_for(PhantomKind::TubeInCube)).unwrap();
        for (az, el) in [(0.0, 0.0), (90.0, 0.0)] {
            let pose = carm_pose(&Vec3::zeros(), CARM_SOURCE_DISTANCE, az, el).unwrap().invert();
            for (_, x) in p.world_landmarks() {
                assert!(k.contains(&project(&k, &pose, &x).unwrap()));
            }
        }
    }
}
