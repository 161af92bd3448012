//! Intra-operative planning on flying frustums.
//!
//! Two routes: a virtual tool is posed in 3D and scored by how well its
//! projections agree with targets in every frustum; or landmarks are clicked
//! on two acquisitions and reconstructed from their back-projected rays.

use crate::frustum::{frustum_project, FlyingFrustum, FrustumError};
use crate::geom::{project, FrameId, GeomError, Mat3, Ray, RigidTransform, Vec2, Vec3};
use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rays (or plane normals) closer than this are treated as parallel.
pub const PARALLEL_DEG: f64 = 0.1;
/// Relative eigenvalue floor of the triangulation normal matrix.
pub const RANK_TOLERANCE: f64 = 1e-9;
/// Default K-wire diameter, mm.
pub const KWIRE_DIAMETER: f64 = 2.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanningError {
    #[error("need at least 2 rays, got {0}")]
    InsufficientRays(usize),
    #[error("rays are (nearly) parallel")]
    ParallelRays,
    #[error("the two views span the same plane for this trajectory")]
    CoplanarViews,
    #[error("need targets in at least 2 frustums, got {0}")]
    InsufficientViews(usize),
    #[error("annotation label mismatch: {0}")]
    LabelMismatch(String),
    #[error("invalid tool: {0}")]
    InvalidTool(String),
    #[error(transparent)]
    Frustum(#[from] FrustumError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationLabel {
    Landmark(String),
    Entry,
    Exit,
}

/// A click on an acquisition image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    /// Index of the shot the click belongs to.
    pub frustum_id: usize,
    /// Acquisition-image pixel coordinates (detector scale).
    pub point: Vec2,
    pub label: AnnotationLabel,
    pub author: String,
    pub timestamp_ms: u64,
}

/// A planned straight trajectory in OR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory3D {
    /// Anchor point (the triangulated entry), mm.
    pub point: Vec3,
    pub direction: Vec3,
    /// Triangulation quality, mm.
    pub residual: f64,
}

impl Trajectory3D {
    pub fn ray(&self) -> Ray {
        Ray { origin: self.point, direction: self.direction }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ToolKind {
    Kwire { diameter: f64 },
    Drill,
    ImpactorCup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualTool {
    /// Points in the tool frame, mm. The first and last define the tool axis.
    pub model_points: Vec<Vec3>,
    /// `^OR T_T`.
    pub pose: RigidTransform,
    pub kind: ToolKind,
}

impl VirtualTool {
    pub fn new(model_points: Vec<Vec3>, pose: RigidTransform, kind: ToolKind) -> Result<Self, PlanningError> {
        let tool = Self { model_points, pose, kind };
        tool.validate()?;
        Ok(tool)
    }

    /// A straight wire of `length` mm along the tool `+z` axis, sampled every
    /// `length / (samples - 1)`.
    pub fn kwire(length: f64, samples: usize, pose: RigidTransform) -> Result<Self, PlanningError> {
        if samples < 2 || !(length > 0.0) {
            return Err(PlanningError::InvalidTool("a wire needs length > 0 and >= 2 samples".into()));
        }
        let pts = (0..samples).map(|i| Vec3::new(0.0, 0.0, length * i as f64 / (samples - 1) as f64)).collect();
        Self::new(pts, pose, ToolKind::Kwire { diameter: KWIRE_DIAMETER })
    }

    pub fn validate(&self) -> Result<(), PlanningError> {
        if self.model_points.len() < 2 {
            return Err(PlanningError::InvalidTool("at least 2 model points are required".into()));
        }
        if self.pose.from != FrameId::T || self.pose.to != FrameId::OR {
            return Err(GeomError::FrameMismatch { left: "OR<-T".into(), right: format!("{}<-{}", self.pose.to, self.pose.from) }.into());
        }
        Ok(())
    }

    pub fn world_points(&self) -> Vec<Vec3> {
        self.model_points.iter().map(|p| self.pose.apply(p)).collect()
    }

    /// Axis from the first to the last model point, in OR.
    pub fn axis(&self) -> (Vec3, Vec3) {
        let pts = self.world_points();
        (pts[0], pts[pts.len() - 1])
    }
}

/// Back-projected ray through an acquisition-image pixel.
pub fn ray_through_pixel(fr: &FlyingFrustum, px: &Vec2) -> Result<Ray, PlanningError> {
    if !fr.intrinsics.contains(px) {
        return Err(FrustumError::PixelOutOfBounds { x: px.x, y: px.y }.into());
    }
    let d = fr.source_pose.apply_vector(&fr.intrinsics.back_project(px));
    Ok(Ray::new(fr.source_position(), d)?)
}

pub fn ray_from_annotation(fr: &FlyingFrustum, ann: &Annotation) -> Result<Ray, PlanningError> {
    ray_through_pixel(fr, &ann.point)
}

/// Least-squares closest point to a bundle of rays, and the RMS
/// point-to-line distance.
pub fn triangulate(rays: &[Ray]) -> Result<(Vec3, f64), PlanningError> {
    if rays.len() < 2 {
        return Err(PlanningError::InsufficientRays(rays.len()));
    }
    let min_sin = PARALLEL_DEG.to_radians().sin();
    let spread = rays
        .iter()
        .enumerate()
        .any(|(i, a)| rays[i + 1..].iter().any(|b| a.direction.cross(&b.direction).norm() > min_sin));
    if !spread {
        return Err(PlanningError::ParallelRays);
    }

    let mut a = Mat3::zeros();
    let mut b = Vec3::zeros();
    for r in rays {
        let p = Mat3::identity() - r.direction * r.direction.transpose();
        a += p;
        b += p * r.origin;
    }
    let eig = SymmetricEigen::new(a);
    let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &e| (lo.min(e.abs()), hi.max(e.abs())));
    if lo < RANK_TOLERANCE * hi {
        return Err(PlanningError::ParallelRays);
    }
    let x = a.cholesky().ok_or(PlanningError::ParallelRays)?.solve(&b);
    let ss: f64 = rays.iter().map(|r| r.distance_to(&x).powi(2)).sum();
    Ok((x, (ss / rays.len() as f64).sqrt()))
}

/// Trajectory from two rays per view. Each view's entry/exit rays span a
/// plane; the trajectory direction is the intersection of the two planes.
pub fn trajectory_from_rays(entry_i: &Ray, exit_i: &Ray, entry_j: &Ray, exit_j: &Ray) -> Result<Trajectory3D, PlanningError> {
    let n_i = entry_i.direction.cross(&exit_i.direction);
    let n_j = entry_j.direction.cross(&exit_j.direction);
    let d = n_i.cross(&n_j);
    let min_sin = PARALLEL_DEG.to_radians().sin();
    if n_i.norm() == 0.0 || n_j.norm() == 0.0 || d.norm() <= min_sin * n_i.norm() * n_j.norm() {
        return Err(PlanningError::CoplanarViews);
    }
    let mut direction = d.normalize();

    let (entry, entry_res) = triangulate(&[*entry_i, *entry_j])?;
    let mut residual = entry_res;
    match triangulate(&[*exit_i, *exit_j]) {
        Ok((exit, exit_res)) => {
            residual = residual.max(exit_res);
            if direction.dot(&(exit - entry)) < 0.0 {
                direction = -direction;
            }
        }
        // exit not recoverable on its own: orient by the clicked rays instead
        Err(_) => {
            let hint = exit_i.direction + exit_j.direction - entry_i.direction - entry_j.direction;
            if direction.dot(&hint) < 0.0 {
                direction = -direction;
            }
        }
    }
    Ok(Trajectory3D { point: entry, direction, residual })
}

fn check_label(ann: &Annotation, expected: &AnnotationLabel, fr_index: usize) -> Result<(), PlanningError> {
    if &ann.label != expected {
        return Err(PlanningError::LabelMismatch(format!("expected {expected:?} on view {fr_index}, got {:?}", ann.label)));
    }
    Ok(())
}

pub fn trajectory_from_frustum_pair(
    entry_i: &Annotation,
    exit_i: &Annotation,
    entry_j: &Annotation,
    exit_j: &Annotation,
    fr_i: &FlyingFrustum,
    fr_j: &FlyingFrustum,
) -> Result<Trajectory3D, PlanningError> {
    check_label(entry_i, &AnnotationLabel::Entry, 0)?;
    check_label(exit_i, &AnnotationLabel::Exit, 0)?;
    check_label(entry_j, &AnnotationLabel::Entry, 1)?;
    check_label(exit_j, &AnnotationLabel::Exit, 1)?;
    if entry_i.frustum_id != exit_i.frustum_id || entry_j.frustum_id != exit_j.frustum_id {
        return Err(PlanningError::LabelMismatch("entry and exit of one view must share a shot".into()));
    }
    trajectory_from_rays(
        &ray_from_annotation(fr_i, entry_i)?,
        &ray_from_annotation(fr_i, exit_i)?,
        &ray_from_annotation(fr_j, entry_j)?,
        &ray_from_annotation(fr_j, exit_j)?,
    )
}

/// Projection of every tool point into every frustum's near-plane image.
/// `None` marks points behind that source.
pub fn project_tool(tool: &VirtualTool, frustums: &[FlyingFrustum]) -> Result<Vec<Vec<Option<Vec2>>>, PlanningError> {
    tool.validate()?;
    let pts = tool.world_points();
    frustums
        .iter()
        .map(|fr| {
            pts.iter()
                .map(|p| match frustum_project(fr, p) {
                    Ok(px) => Ok(Some(px)),
                    Err(FrustumError::Geom(GeomError::BehindSource { .. })) => Ok(None),
                    Err(e) => Err(e.into()),
                })
                .collect()
        })
        .collect()
}

fn point_segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * t - p).norm()
}

/// Distance from a pixel to a polyline (a single vertex is a point target).
pub fn polyline_distance(p: &Vec2, polyline: &[Vec2]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [only] => (p - only).norm(),
        _ => polyline.windows(2).map(|w| point_segment_distance(p, &w[0], &w[1])).fold(f64::INFINITY, f64::min),
    }
}

/// Agreement of a posed tool with 2D targets across views: mean detector-scale
/// distance (mm) from the projected tool points to each view's target
/// polyline, averaged over views. Zero iff the projected tool lies on every
/// target.
pub fn consensus_residual(tool: &VirtualTool, targets: &[Vec<Vec2>], frustums: &[FlyingFrustum]) -> Result<f64, PlanningError> {
    tool.validate()?;
    let views = targets.len().min(frustums.len());
    if views < 2 || targets.len() != frustums.len() {
        return Err(PlanningError::InsufficientViews(views));
    }
    let pts = tool.world_points();
    let mut total = 0.0;
    for (fr, target) in frustums.iter().zip(targets) {
        let extrinsic = fr.extrinsic();
        let dists: Vec<f64> = pts
            .iter()
            .filter_map(|p| project(&fr.intrinsics, &extrinsic, p).ok())
            .map(|px| polyline_distance(&px, target) * fr.intrinsics.pixel_pitch)
            .collect();
        if dists.is_empty() {
            return Ok(f64::INFINITY);
        }
        total += dists.iter().sum::<f64>() / dists.len() as f64;
    }
    Ok(total / views as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frustum::ImageRef;
    use crate::geom::{project, CameraIntrinsics};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 0.25, Vec2::new(512.0, 500.0), Vec2::new(1024.0, 1024.0)).unwrap()
    }

    fn view(source: Vec3, target: Vec3) -> FlyingFrustum {
        let pose = RigidTransform::look_at(&source, &target, &Vec3::new(0.3, 1.0, 0.2)).unwrap();
        FlyingFrustum::new(intrinsics(), pose, ImageRef { handle: "v".into(), timestamp_ms: 0 }).unwrap()
    }

    fn ann(fr: &FlyingFrustum, id: usize, x: &Vec3, label: AnnotationLabel) -> Annotation {
        let px = project(&fr.intrinsics, &fr.extrinsic(), x).unwrap();
        Annotation { frustum_id: id, point: px, label, author: "test".into(), timestamp_ms: 0 }
    }

    fn random_view_pair(rng: &mut ChaCha8Rng) -> (FlyingFrustum, FlyingFrustum) {
        let dir = |rng: &mut ChaCha8Rng| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        loop {
            let (u, w) = (dir(rng), dir(rng));
            if u.cross(&w).norm() > 0.5 {
                return (view(u * 600.0, Vec3::zeros()), view(w * 600.0, Vec3::zeros()));
            }
        }
    }

    #[test]
    fn principal_point_ray_is_viewing_axis() {
        let fr = view(Vec3::new(100.0, -600.0, 50.0), Vec3::new(0.0, 0.0, 10.0));
        let a = Annotation { frustum_id: 0, point: fr.intrinsics.principal_point, label: AnnotationLabel::Entry, author: "a".into(), timestamp_ms: 0 };
        let r = ray_from_annotation(&fr, &a).unwrap();
        assert_abs_diff_eq!(r.origin, fr.source_position(), epsilon = 0.0);
        assert_abs_diff_eq!(r.direction, fr.viewing_axis(), epsilon = 1e-12);
    }

    #[test]
    fn ray_round_trip_passes_through_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fr = view(Vec3::new(0.0, -650.0, 0.0), Vec3::zeros());
        for _ in 0..200 {
            let x = Vec3::from_fn(|_, _| rng.random_range(-60.0..60.0));
            let a = ann(&fr, 0, &x, AnnotationLabel::Landmark("p".into()));
            assert!(ray_from_annotation(&fr, &a).unwrap().distance_to(&x) < 1e-9);
        }
    }

    #[test]
    fn corner_ray_matches_inverse_intrinsics() {
        let fr = view(Vec3::new(300.0, -500.0, 100.0), Vec3::zeros());
        let k = fr.intrinsics.matrix();
        let kinv = k.try_inverse().unwrap();
        for c in fr.intrinsics.corners() {
            let d = fr.source_pose.rotation * (kinv * Vec3::new(c.x, c.y, 1.0));
            let r = ray_through_pixel(&fr, &c).unwrap();
            assert_abs_diff_eq!(r.direction, d.normalize(), epsilon = 1e-12);
            assert!(r.direction.dot(&fr.viewing_axis()) > 0.0);
        }
        assert!(ray_through_pixel(&fr, &Vec2::new(-0.5, 10.0)).is_err());
    }

    #[test]
    fn triangulate_exact_intersection() {
        let r1 = Ray::new(Vec3::zeros(), Vec3::z()).unwrap();
        let r2 = Ray::new(Vec3::new(2.0, 0.0, 2.0), -Vec3::x()).unwrap();
        let (x, res) = triangulate(&[r1, r2]).unwrap();
        assert_abs_diff_eq!(x, Vec3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(res, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn triangulate_skew_rays_midpoint() {
        let r1 = Ray::new(Vec3::zeros(), Vec3::x()).unwrap();
        let r2 = Ray::new(Vec3::new(0.0, 1.0, 1.0), Vec3::z()).unwrap();
        let (x, res) = triangulate(&[r1, r2]).unwrap();
        assert_abs_diff_eq!(x, Vec3::new(0.0, 0.5, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(res, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn triangulate_errors() {
        let r = Ray::new(Vec3::zeros(), Vec3::z()).unwrap();
        assert_eq!(triangulate(&[r]), Err(PlanningError::InsufficientRays(1)));
        let p = Ray::new(Vec3::new(5.0, 0.0, 0.0), Vec3::z()).unwrap();
        assert_eq!(triangulate(&[r, p]), Err(PlanningError::ParallelRays));
        let nearly = Ray::new(Vec3::new(5.0, 0.0, 0.0), Vec3::new(0.0, 0.05f64.to_radians().tan(), 1.0)).unwrap();
        assert_eq!(triangulate(&[r, nearly, p]), Err(PlanningError::ParallelRays));
    }

    /// Grid search followed by compass refinement of the summed squared
    /// projector residuals. No linear algebra shared with the closed form.
    fn brute_force_closest_point(rays: &[Ray], center: Vec3, half: f64) -> Vec3 {
        let cost = |x: &Vec3| -> f64 {
            rays.iter()
                .map(|r| {
                    let u = r.direction;
                    let px = x - u * u.dot(x);
                    let t = r.origin - u * u.dot(&r.origin);
                    (px - t).norm_squared()
                })
                .sum()
        };
        let steps = 40;
        let mut best = (f64::INFINITY, center);
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let g = center + Vec3::new(i as f64, j as f64, k as f64) * (2.0 * half / steps as f64) - Vec3::repeat(half);
                    let c = cost(&g);
                    if c < best.0 {
                        best = (c, g);
                    }
                }
            }
        }
        let (mut c0, mut x) = best;
        let mut step = 2.0 * half / steps as f64;
        let dirs: Vec<Vec3> = (0..3).flat_map(|a| [1.0, -1.0].map(|s| Vec3::from_fn(|i, _| if i == a { s } else { 0.0 }))).collect();
        while step > 1e-10 {
            let mut moved = false;
            for d in &dirs {
                let y = x + d * step;
                let c = cost(&y);
                if c < c0 {
                    (c0, x, moved) = (c, y, true);
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        x
    }

    #[test]
    fn triangulate_matches_brute_force_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let target = Vec3::from_fn(|_, _| rng.random_range(-50.0..50.0));
            let rays: Vec<Ray> = (0..2)
                .map(|_| {
                    let c = Vec3::from_fn(|_, _| rng.random_range(-600.0..600.0));
                    let aim = target + Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0));
                    Ray::new(c, aim - c).unwrap()
                })
                .collect();
            if rays[0].direction.cross(&rays[1].direction).norm() < 0.3 {
                continue;
            }
            let (x, _) = triangulate(&rays).unwrap();
            let oracle = brute_force_closest_point(&rays, target, 20.0);
            assert!((x - oracle).norm() < 1e-6, "{}", (x - oracle).norm());
        }
    }

    #[test]
    fn two_view_recovery_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let (a, b) = random_view_pair(&mut rng);
            let x = Vec3::from_fn(|_, _| rng.random_range(-40.0..40.0));
            let ra = ray_from_annotation(&a, &ann(&a, 0, &x, AnnotationLabel::Landmark("l".into()))).unwrap();
            let rb = ray_from_annotation(&b, &ann(&b, 1, &x, AnnotationLabel::Landmark("l".into()))).unwrap();
            let (y, res) = triangulate(&[ra, rb]).unwrap();
            assert!((y - x).norm() < 1e-9, "{}", (y - x).norm());
            assert!(res < 1e-9);
        }
    }

    #[test]
    fn plane_intersection_shared_origin() {
        let o = Vec3::zeros();
        let r = |d: Vec3| Ray::new(o, d).unwrap();
        let t = trajectory_from_rays(&r(Vec3::x()), &r(Vec3::z()), &r(Vec3::y()), &r(Vec3::z())).unwrap();
        assert_abs_diff_eq!(t.direction.z.abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.direction.z, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.point, o, epsilon = 1e-12);
    }

    fn segment_annotations(fr: &FlyingFrustum, id: usize, entry: &Vec3, exit: &Vec3) -> (Annotation, Annotation) {
        (ann(fr, id, entry, AnnotationLabel::Entry), ann(fr, id, exit, AnnotationLabel::Exit))
    }

    #[test]
    fn segment_round_trip_through_orthogonal_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ap = view(Vec3::new(0.0, -600.0, 0.0), Vec3::zeros());
        let lat = view(Vec3::new(600.0, 0.0, 0.0), Vec3::zeros());
        for _ in 0..200 {
            let entry = Vec3::from_fn(|_, _| rng.random_range(-40.0..40.0));
            let exit = Vec3::from_fn(|_, _| rng.random_range(-40.0..40.0));
            if (exit - entry).norm() < 20.0 {
                continue;
            }
            let (ei, xi) = segment_annotations(&ap, 0, &entry, &exit);
            let (ej, xj) = segment_annotations(&lat, 1, &entry, &exit);
            match trajectory_from_frustum_pair(&ei, &xi, &ej, &xj, &ap, &lat) {
                Ok(t) => {
                    let truth = (exit - entry).normalize();
                    let angle = t.direction.cross(&truth).norm().atan2(t.direction.dot(&truth)).to_degrees();
                    assert!(angle < 1e-6, "{angle}");
                    assert!((t.point - entry).norm() < 1e-6);
                }
                // a segment whose plane contains one source is a genuine degeneracy
                Err(PlanningError::CoplanarViews) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn same_pose_views_are_coplanar() {
        let a = view(Vec3::new(0.0, -600.0, 0.0), Vec3::zeros());
        let (entry, exit) = (Vec3::new(-20.0, 0.0, 5.0), Vec3::new(25.0, 3.0, -4.0));
        let (ei, xi) = segment_annotations(&a, 0, &entry, &exit);
        let (ej, xj) = segment_annotations(&a, 1, &entry, &exit);
        assert_eq!(trajectory_from_frustum_pair(&ei, &xi, &ej, &xj, &a, &a), Err(PlanningError::CoplanarViews));
    }

    #[test]
    fn labels_are_checked() {
        let a = view(Vec3::new(0.0, -600.0, 0.0), Vec3::zeros());
        let b = view(Vec3::new(600.0, 0.0, 0.0), Vec3::zeros());
        let (entry, exit) = (Vec3::new(-20.0, 0.0, 5.0), Vec3::new(25.0, 3.0, -4.0));
        let (ei, xi) = segment_annotations(&a, 0, &entry, &exit);
        let (ej, xj) = segment_annotations(&b, 1, &entry, &exit);
        assert!(matches!(trajectory_from_frustum_pair(&xi, &ei, &ej, &xj, &a, &b), Err(PlanningError::LabelMismatch(_))));
    }

    #[test]
    fn plane_direction_invariant_under_swaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (a, b) = random_view_pair(&mut rng);
            let entry = Vec3::from_fn(|_, _| rng.random_range(-40.0..40.0));
            let exit = Vec3::from_fn(|_, _| rng.random_range(-40.0..40.0));
            let rays = |fr: &FlyingFrustum| {
                let (e, x) = segment_annotations(fr, 0, &entry, &exit);
                (ray_from_annotation(fr, &e).unwrap(), ray_from_annotation(fr, &x).unwrap())
            };
            let ((ea, xa), (eb, xb)) = (rays(&a), rays(&b));
            let Ok(t) = trajectory_from_rays(&ea, &xa, &eb, &xb) else { continue };
            let swapped_views = trajectory_from_rays(&eb, &xb, &ea, &xa).unwrap();
            let swapped_labels = trajectory_from_rays(&xa, &ea, &xb, &eb).unwrap();
            assert!(t.direction.cross(&swapped_views.direction).norm() < 1e-9);
            assert!(t.direction.cross(&swapped_labels.direction).norm() < 1e-9);
            assert!(t.direction.dot(&swapped_views.direction) > 0.0);
            assert!(t.direction.dot(&swapped_labels.direction) < 0.0);
        }
    }

    #[test]
    fn triangulation_error_grows_with_pixel_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = view(Vec3::new(0.0, -600.0, 0.0), Vec3::zeros());
        let b = view(Vec3::new(600.0, 0.0, 100.0), Vec3::zeros());
        let points: Vec<Vec3> = (0..500).map(|_| Vec3::from_fn(|_, _| rng.random_range(-40.0..40.0))).collect();
        let unit: Vec<[f64; 4]> = (0..500).map(|_| std::array::from_fn(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng))).collect();
        let mut medians = Vec::new();
        for sigma in [0.0, 0.5, 1.0, 2.0] {
            let mut errs: Vec<f64> = points
                .iter()
                .zip(&unit)
                .map(|(x, n)| {
                    let mut pa = ann(&a, 0, x, AnnotationLabel::Landmark("l".into()));
                    let mut pb = ann(&b, 1, x, AnnotationLabel::Landmark("l".into()));
                    pa.point += Vec2::new(n[0], n[1]) * sigma;
                    pb.point += Vec2::new(n[2], n[3]) * sigma;
                    let rays = [ray_from_annotation(&a, &pa).unwrap(), ray_from_annotation(&b, &pb).unwrap()];
                    (triangulate(&rays).unwrap().0 - x).norm()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(errs[errs.len() / 2]);
        }
        assert!(medians[0] < 1e-9);
        assert!(medians.windows(2).all(|w| w[0] < w[1]), "{medians:?}");
        // no faster than linear
        assert!(medians[3] <= 4.0 * medians[1] * 1.05, "{medians:?}");
    }

    fn wire_on(entry: &Vec3, exit: &Vec3) -> VirtualTool {
        let len = (exit - entry).norm();
        let pose = RigidTransform::look_at(entry, exit, &Vec3::new(0.1, 0.2, 1.0)).unwrap().relabel(FrameId::T, FrameId::OR);
        VirtualTool::kwire(len, 11, pose).unwrap()
    }

    #[test]
    fn tool_projection_examples() {
        let ap = view(Vec3::new(0.0, -600.0, 0.0), Vec3::zeros());
        let lat = view(Vec3::new(600.0, 0.0, 0.0), Vec3::zeros());
        let tool = VirtualTool::new(
            vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(0.0, 0.0, 1.0)],
            RigidTransform::identity_between(FrameId::T, FrameId::OR),
            ToolKind::Drill,
        )
        .unwrap();
        let proj = project_tool(&tool, std::slice::from_ref(&ap)).unwrap();
        let mid = (proj[0][0].unwrap() + proj[0][1].unwrap()) / 2.0;
        assert_abs_diff_eq!(mid, ap.intrinsics.principal_point, epsilon = 1e-9);

        // sliding a point along the AP viewing axis leaves its AP pixel fixed
        let point_tool = |t: Vec3| {
            VirtualTool::new(vec![Vec3::zeros(), Vec3::zeros()], RigidTransform::new(FrameId::T, FrameId::OR, Mat3::identity(), t).unwrap(), ToolKind::Drill).unwrap()
        };
        let p0 = project_tool(&point_tool(Vec3::zeros()), &[ap.clone(), lat.clone()]).unwrap();
        let p1 = project_tool(&point_tool(ap.viewing_axis() * 50.0), &[ap.clone(), lat.clone()]).unwrap();
        assert_abs_diff_eq!(p0[0][0].unwrap(), p1[0][0].unwrap(), epsilon = 1e-9);
        assert!((p0[1][0].unwrap() - p1[1][0].unwrap()).norm() > 10.0);

        let behind = point_tool(Vec3::new(0.0, -700.0, 0.0));
        assert_eq!(project_tool(&behind, &[ap]).unwrap()[0][0], None);
    }

    #[test]
    fn tool_projection_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (mut a, b) = random_view_pair(&mut rng);
            a.set_near_plane(rng.random_range(0.0..1000.0)).unwrap();
            let tool = wire_on(&Vec3::from_fn(|_, _| rng.random_range(-30.0..30.0)), &Vec3::from_fn(|_, _| rng.random_range(-30.0..30.0)));
            let proj = project_tool(&tool, &[a.clone(), b.clone()]).unwrap();
            for (fr, pv) in [&a, &b].iter().zip(&proj) {
                for (m, got) in tool.model_points.iter().zip(pv) {
                    let world = tool.pose.apply(m);
                    let px = project(&fr.intrinsics, &fr.extrinsic(), &world).unwrap();
                    let c = fr.intrinsics.principal_point;
                    let want = c + (px - c) * (fr.near_plane / fr.intrinsics.focal_length);
                    assert_abs_diff_eq!(got.unwrap(), want, epsilon = 1e-9);
                }
            }
        }
    }

    fn targets_for(frs: &[&FlyingFrustum], entry: &Vec3, exit: &Vec3) -> Vec<Vec<Vec2>> {
        frs.iter()
            .map(|fr| vec![project(&fr.intrinsics, &fr.extrinsic(), entry).unwrap(), project(&fr.intrinsics, &fr.extrinsic(), exit).unwrap()])
            .collect()
    }

    #[test]
    fn consensus_residual_behaviour() {
        let ap = view(Vec3::new(0.0, -600.0, 0.0), Vec3::zeros());
        let lat = view(Vec3::new(600.0, 0.0, 0.0), Vec3::zeros());
        let (entry, exit) = (Vec3::new(-5.0, -20.0, 30.0), Vec3::new(8.0, 25.0, -30.0));
        let targets = targets_for(&[&ap, &lat], &entry, &exit);
        let frs = [ap.clone(), lat.clone()];
        let on = consensus_residual(&wire_on(&entry, &exit), &targets, &frs).unwrap();
        assert!(on < 1e-9, "{on}");

        // perpendicular to both viewing axes (y and x): along z
        let scores: Vec<f64> = [5.0, 10.0, 20.0]
            .iter()
            .map(|d| {
                let off = Vec3::new(0.0, 0.0, *d);
                consensus_residual(&wire_on(&(entry + off), &(exit + off)), &targets, &frs).unwrap()
            })
            .collect();
        assert!(scores[0] > 0.0);
        assert!(scores.windows(2).all(|w| w[0] < w[1]), "{scores:?}");

        assert_eq!(
            consensus_residual(&wire_on(&entry, &exit), &targets[..1], &frs[..1]),
            Err(PlanningError::InsufficientViews(1))
        );
    }

    #[test]
    fn zero_consensus_means_tool_on_reconstructed_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let (a, b) = random_view_pair(&mut rng);
            let entry = Vec3::from_fn(|_, _| rng.random_range(-40.0..40.0));
            let exit = Vec3::from_fn(|_, _| rng.random_range(-40.0..40.0));
            if (exit - entry).norm() < 20.0 {
                continue;
            }
            let targets = targets_for(&[&a, &b], &entry, &exit);
            let tool = wire_on(&entry, &exit);
            let score = consensus_residual(&tool, &targets, &[a.clone(), b.clone()]).unwrap();
            assert!(score < 1e-9);
            let (ea, xa) = segment_annotations(&a, 0, &entry, &exit);
            let (eb, xb) = segment_annotations(&b, 1, &entry, &exit);
            let Ok(traj) = trajectory_from_frustum_pair(&ea, &xa, &eb, &xb, &a, &b) else { continue };
            for p in tool.world_points() {
                assert!(traj.ray().distance_to(&p) < 1e-6);
            }
        }
    }

    #[test]
    fn tool_validation() {
        let pose = RigidTransform::identity_between(FrameId::T, FrameId::OR);
        assert!(VirtualTool::new(vec![Vec3::zeros()], pose, ToolKind::Drill).is_err());
        assert!(VirtualTool::new(vec![Vec3::zeros(); 2], pose.relabel(FrameId::X, FrameId::OR), ToolKind::Drill).is_err());
        assert!(VirtualTool::kwire(0.0, 5, pose).is_err());
        let w = VirtualTool::kwire(100.0, 3, pose).unwrap();
        assert_eq!(w.model_points[2], Vec3::new(0.0, 0.0, 100.0));
        assert_eq!(w.kind, ToolKind::Kwire { diameter: 2.8 });
    }
}
