use super::{build_phantom, default_intrinsics, mix_seed, LocalizerModel, Phantom, PhantomKind, PhantomParams, SimError};
use super::{ACETABULUM, ASIS_LEFT, ASIS_RIGHT, PUBIS};
use crate::clinical::{app_from_landmarks, axis_from_angles, cup_angles, in_safe_zone, kwire_error, AppFrame, CupOrientation, KwireError};
use crate::frustum::{image_pose, FlyingFrustum, ImageRef};
use crate::geom::{exp_so3, project, CameraIntrinsics, FrameId, Ray, RigidTransform, Vec2, Vec3};
use crate::handeye::{calibrate, default_mounting, generate_pose_pairs, CalibrationResult, MotionRange, NoiseModel};
use crate::planning::{
    consensus_residual, project_tool, ray_from_annotation, trajectory_from_frustum_pair, triangulate, Annotation, AnnotationLabel,
    PlanningError, Trajectory3D, VirtualTool,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Area dose booked per acquisition, cGy·cm².
pub const DOSE_PER_SHOT: f64 = 0.1275;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CalibrationConfig {
    /// The estimate equals the true mounting.
    Exact,
    /// Calibrate from `pairs` synthetic motions with the given per-axis noise
    /// (degrees, mm).
    Estimated { pairs: usize, rot_sigma: f64, trans_sigma: f64 },
}

impl CalibrationConfig {
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            Self::Exact => Self::Exact,
            Self::Estimated { pairs, rot_sigma, trans_sigma } => Self::Estimated { pairs, rot_sigma: rot_sigma * factor, trans_sigma: trans_sigma * factor },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub phantom: PhantomParams,
    /// `^OR T_P`.
    pub phantom_pose: RigidTransform,
    /// True `^X T_H`.
    pub mounting: RigidTransform,
    pub calibration: CalibrationConfig,
    pub intrinsics: CameraIntrinsics,
    /// Defaults for acquisitions that do not specify their own noise.
    pub localizer: LocalizerModel,
    pub pixel_noise_sigma: f64,
    pub seed: u64,
}

impl SessionConfig {
    /// Default phantom at the OR origin, exact calibration, no noise.
    pub fn noiseless(kind: PhantomKind, seed: u64) -> Self {
        Self {
            phantom: PhantomParams::default_for(kind),
            phantom_pose: RigidTransform::identity_between(FrameId::P, FrameId::OR),
            mounting: default_mounting(),
            calibration: CalibrationConfig::Exact,
            intrinsics: default_intrinsics(),
            localizer: LocalizerModel::perfect(),
            pixel_noise_sigma: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPixel {
    /// Recorded (noisy) pixel; `None` when the landmark is behind the source.
    pub pixel: Option<Vec2>,
    /// In front of the source and inside the image.
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShot {
    /// Carries the pose as reported by the localizer.
    pub frustum: FlyingFrustum,
    /// Ground truth, for evaluation only.
    pub true_source_pose: RigidTransform,
    pub landmark_pixels: BTreeMap<String, LandmarkPixel>,
    pub pixel_noise_sigma: f64,
    pub dose_units: f64,
}

/// Perturbation of a plan when it is carried out by hand.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionNoise {
    /// Per-axis std of the rotation-vector error, degrees.
    pub rot_sigma_deg: f64,
    /// Per-axis std of the entry-point error, mm.
    pub trans_sigma_mm: f64,
}

impl ExecutionNoise {
    pub fn scaled(&self, factor: f64) -> Self {
        Self { rot_sigma_deg: self.rot_sigma_deg * factor, trans_sigma_mm: self.trans_sigma_mm * factor }
    }
}

/// A 2D target for the tool consensus on one shot, detector pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolTarget {
    pub shot: usize,
    pub polyline: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Create { id: String, config: SessionConfig },
    Calibrate { config: CalibrationConfig },
    Acquire { commanded_pose: RigidTransform, localizer: LocalizerModel, pixel_noise_sigma: f64 },
    Annotate { annotation: Annotation },
    SetNearPlane { shot: usize, n: f64 },
    /// Annotation indices: entry and exit on the first view, then the second.
    PlanTrajectory { annotations: [usize; 4] },
    /// `targets: None` uses the latest entry/exit clicks of every shot.
    PlanTool { tool: VirtualTool, targets: Option<Vec<ToolTarget>> },
    PlanCup { target: CupOrientation },
    Execute { plan: usize, noise: ExecutionNoise },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Create { .. } => "create",
            Self::Calibrate { .. } => "calibrate",
            Self::Acquire { .. } => "acquire",
            Self::Annotate { .. } => "annotate",
            Self::SetNearPlane { .. } => "set_near_plane",
            Self::PlanTrajectory { .. } => "plan_trajectory",
            Self::PlanTool { .. } => "plan_tool",
            Self::PlanCup { .. } => "plan_cup",
            Self::Execute { .. } => "execute",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: usize,
    pub timestamp_ms: u64,
    pub op: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolPlan {
    pub tool: VirtualTool,
    /// Near-plane pixels per shot and tool point.
    pub projections: Vec<Vec<Option<Vec2>>>,
    /// Shots that had a target.
    pub views: Vec<usize>,
    /// `None` with fewer than two targeted views.
    pub consensus_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CupPlan {
    pub target: CupOrientation,
    /// Reconstructed landmarks, OR.
    pub landmarks: BTreeMap<String, Vec3>,
    pub app: AppFrame,
    pub center: Vec3,
    pub axis: Vec3,
    /// Worst triangulation RMS, mm.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Plan {
    Trajectory { annotations: [usize; 4], trajectory: Trajectory3D },
    Tool(ToolPlan),
    Cup(CupPlan),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outcome {
    Kwire { plan: usize, executed: Trajectory3D, error: KwireError },
    Cup { plan: usize, executed_axis: Vec3, target: CupOrientation, achieved: CupOrientation, abduction_error: f64, anteversion_error: f64, in_safe_zone: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlanMetric {
    Kwire { plan: usize, error: KwireError },
    Cup { plan: usize, target: CupOrientation, achieved: CupOrientation, in_safe_zone: bool },
}

/// Ground-truth evaluation of the current plans and executions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub shots: usize,
    pub dose: f64,
    pub plans: Vec<PlanMetric>,
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub config: SessionConfig,
    pub phantom: Phantom,
    pub calibration: CalibrationResult,
    pub shots: Vec<SyntheticShot>,
    pub annotations: Vec<Annotation>,
    pub plans: Vec<Plan>,
    pub events: Vec<Event>,
    pub outcome: Vec<Outcome>,
}

/// Result of applying one event.
enum Effect {
    Shot(SyntheticShot),
    Annotation(Annotation, Ray),
    NearPlane(usize, f64),
    Plan(Plan),
    Outcome(Outcome),
    Calibration(CalibrationResult),
}

impl Session {
    /// Opens a session; logs `create` followed by `calibrate`.
    pub fn create(id: impl Into<String>, config: SessionConfig) -> Result<Session, SimError> {
        let id = id.into();
        let mut session = Self::init(&id, &config)?;
        session.events.push(Event { seq: 0, timestamp_ms: 0, op: EventKind::Create { id, config: config.clone() } });
        session.record(EventKind::Calibrate { config: config.calibration })?;
        Ok(session)
    }

    fn init(id: &str, config: &SessionConfig) -> Result<Session, SimError> {
        config.localizer.validate()?;
        check_sigma(config.pixel_noise_sigma)?;
        if config.mounting.from != FrameId::H || config.mounting.to != FrameId::X {
            return Err(SimError::InvalidParams("mounting must map H to X".into()));
        }
        let phantom = build_phantom(config.phantom.kind(), &config.phantom)?.with_pose(config.phantom_pose)?;
        Ok(Session {
            id: id.to_string(),
            config: config.clone(),
            phantom,
            calibration: CalibrationResult::exact(config.mounting),
            shots: Vec::new(),
            annotations: Vec::new(),
            plans: Vec::new(),
            events: Vec::new(),
            outcome: Vec::new(),
        })
    }

    /// Rebuilds a session by re-running every logged event.
    pub fn from_events(events: &[Event]) -> Result<Session, SimError> {
        let Some(Event { seq: 0, timestamp_ms, op: EventKind::Create { id, config } }) = events.first() else {
            return Err(SimError::CorruptLog("the log must start with a create event".into()));
        };
        let mut session = Self::init(id, config)?;
        session.events.push(Event { seq: 0, timestamp_ms: *timestamp_ms, op: EventKind::Create { id: id.clone(), config: config.clone() } });
        for ev in &events[1..] {
            let last = session.events.last().expect("create is logged").timestamp_ms;
            if ev.seq != session.events.len() || ev.timestamp_ms <= last {
                return Err(SimError::CorruptLog(format!("event {} out of order", ev.seq)));
            }
            session.apply(ev.seq, ev.timestamp_ms, ev.op.clone())?;
        }
        Ok(session)
    }

    pub fn next_timestamp(&self) -> u64 {
        self.events.last().map_or(0, |e| e.timestamp_ms + 1)
    }

    fn record(&mut self, op: EventKind) -> Result<Effect, SimError> {
        self.apply(self.events.len(), self.next_timestamp(), op)
    }

    fn event_rng(&self, seq: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, seq as u64))
    }

    /// Validates and evaluates `op`, then commits its effect and logs it.
    /// Nothing changes when evaluation fails.
    fn apply(&mut self, seq: usize, timestamp_ms: u64, op: EventKind) -> Result<Effect, SimError> {
        let effect = self.evaluate(seq, timestamp_ms, &op)?;
        match &effect {
            Effect::Calibration(c) => self.calibration = *c,
            Effect::Shot(s) => self.shots.push(s.clone()),
            Effect::Annotation(a, _) => self.annotations.push(a.clone()),
            Effect::NearPlane(k, n) => self.shots[*k].frustum.near_plane = *n,
            Effect::Plan(p) => self.plans.push(p.clone()),
            Effect::Outcome(o) => self.outcome.push(o.clone()),
        }
        self.events.push(Event { seq, timestamp_ms, op });
        Ok(effect)
    }

    fn evaluate(&self, seq: usize, timestamp_ms: u64, op: &EventKind) -> Result<Effect, SimError> {
        match op {
            EventKind::Create { .. } => Err(SimError::CorruptLog("create may only appear first".into())),
            EventKind::Calibrate { config } => Ok(Effect::Calibration(self.run_calibration(seq, config)?)),
            EventKind::Acquire { commanded_pose, localizer, pixel_noise_sigma } => {
                Ok(Effect::Shot(self.simulate_shot(seq, timestamp_ms, commanded_pose, localizer, *pixel_noise_sigma)?))
            }
            EventKind::Annotate { annotation } => {
                let fr = &self.shot(annotation.frustum_id)?.frustum;
                let ray = ray_from_annotation(fr, annotation)?;
                Ok(Effect::Annotation(annotation.clone(), ray))
            }
            EventKind::SetNearPlane { shot, n } => {
                self.shot(*shot)?.frustum.clone().set_near_plane(*n)?;
                Ok(Effect::NearPlane(*shot, *n))
            }
            EventKind::PlanTrajectory { annotations } => {
                let anns = annotations.map(|i| self.annotation(i)).into_iter().collect::<Result<Vec<_>, _>>()?;
                let fr_i = &self.shot(anns[0].frustum_id)?.frustum;
                let fr_j = &self.shot(anns[2].frustum_id)?.frustum;
                let trajectory = trajectory_from_frustum_pair(anns[0], anns[1], anns[2], anns[3], fr_i, fr_j)?;
                Ok(Effect::Plan(Plan::Trajectory { annotations: *annotations, trajectory }))
            }
            EventKind::PlanTool { tool, targets } => Ok(Effect::Plan(Plan::Tool(self.plan_tool_value(tool, targets.as_deref())?))),
            EventKind::PlanCup { target } => Ok(Effect::Plan(Plan::Cup(self.plan_cup_value(target)?))),
            EventKind::Execute { plan, noise } => Ok(Effect::Outcome(self.execute_value(seq, *plan, noise)?)),
        }
    }

    fn shot(&self, k: usize) -> Result<&SyntheticShot, SimError> {
        self.shots.get(k).ok_or_else(|| SimError::NotFound(format!("shot {k}")))
    }

    fn annotation(&self, k: usize) -> Result<&Annotation, SimError> {
        self.annotations.get(k).ok_or_else(|| SimError::NotFound(format!("annotation {k}")))
    }

    fn plan(&self, k: usize) -> Result<&Plan, SimError> {
        self.plans.get(k).ok_or_else(|| SimError::NotFound(format!("plan {k}")))
    }

    fn run_calibration(&self, seq: usize, config: &CalibrationConfig) -> Result<CalibrationResult, SimError> {
        match *config {
            CalibrationConfig::Exact => Ok(CalibrationResult::exact(self.config.mounting)),
            CalibrationConfig::Estimated { pairs, rot_sigma, trans_sigma } => {
                let noise = NoiseModel { rot_sigma, trans_sigma, seed: mix_seed(self.config.seed, seq as u64) };
                let data = generate_pose_pairs(&self.config.mounting, pairs, MotionRange::default(), noise)?;
                Ok(calibrate(&data)?)
            }
        }
    }

    fn simulate_shot(
        &self,
        seq: usize,
        timestamp_ms: u64,
        commanded: &RigidTransform,
        localizer: &LocalizerModel,
        sigma: f64,
    ) -> Result<SyntheticShot, SimError> {
        localizer.validate()?;
        check_sigma(sigma)?;
        if commanded.from != FrameId::X || commanded.to != FrameId::OR {
            return Err(SimError::InvalidParams(format!("commanded pose must map X to OR, got {}<-{}", commanded.to, commanded.from)));
        }
        let k = self.config.intrinsics;
        let mut measured = *commanded;
        if self.calibration.x != self.config.mounting {
            // the tracker pose is true; the source pose is inferred through the estimate
            let tracker = commanded.compose(&self.config.mounting)?;
            measured = tracker.compose(&self.calibration.x.invert())?;
        }
        if !localizer.is_perfect() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.config.seed, seq as u64), localizer.seed));
            measured = localizer.sample(&mut rng).compose(&measured)?;
        }
        let index = self.shots.len();
        let frustum = FlyingFrustum::new(k, measured, ImageRef { handle: format!("shot-{index}"), timestamp_ms })?;

        let mut rng = self.event_rng(seq);
        let noise = Normal::new(0.0, sigma).expect("sigma checked");
        let extrinsic = commanded.invert();
        let mut landmark_pixels = BTreeMap::new();
        for (name, x) in self.phantom.world_landmarks() {
            let offset = Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            let entry = match project(&k, &extrinsic, &x) {
                Ok(px) => {
                    let px = px + offset;
                    LandmarkPixel { pixel: Some(px), visible: k.contains(&px) }
                }
                Err(_) => LandmarkPixel { pixel: None, visible: false },
            };
            landmark_pixels.insert(name, entry);
        }
        Ok(SyntheticShot { frustum, true_source_pose: *commanded, landmark_pixels, pixel_noise_sigma: sigma, dose_units: DOSE_PER_SHOT })
    }

    fn latest_click(&self, shot: usize, label: &AnnotationLabel) -> Option<Vec2> {
        self.annotations.iter().rev().find(|a| a.frustum_id == shot && &a.label == label).map(|a| a.point)
    }

    fn plan_tool_value(&self, tool: &VirtualTool, targets: Option<&[ToolTarget]>) -> Result<ToolPlan, SimError> {
        tool.validate()?;
        let frustums: Vec<FlyingFrustum> = self.shots.iter().map(|s| s.frustum.clone()).collect();
        let projections = project_tool(tool, &frustums)?;
        let targets: Vec<ToolTarget> = match targets {
            Some(t) => {
                for target in t {
                    self.shot(target.shot)?;
                    if target.polyline.is_empty() {
                        return Err(PlanningError::InvalidTool(format!("empty target on shot {}", target.shot)).into());
                    }
                }
                t.to_vec()
            }
            None => (0..self.shots.len())
                .filter_map(|k| {
                    let entry = self.latest_click(k, &AnnotationLabel::Entry)?;
                    let exit = self.latest_click(k, &AnnotationLabel::Exit)?;
                    Some(ToolTarget { shot: k, polyline: vec![entry, exit] })
                })
                .collect(),
        };
        let views: Vec<usize> = targets.iter().map(|t| t.shot).collect();
        let consensus = if targets.len() >= 2 {
            let frs: Vec<FlyingFrustum> = views.iter().map(|&k| self.shots[k].frustum.clone()).collect();
            let polylines: Vec<Vec<Vec2>> = targets.into_iter().map(|t| t.polyline).collect();
            Some(consensus_residual(tool, &polylines, &frs)?).filter(|r| r.is_finite())
        } else {
            None
        };
        Ok(ToolPlan { tool: tool.clone(), projections, views, consensus_residual: consensus })
    }

    /// Triangulates every click labelled with `name`.
    pub fn triangulate_landmark(&self, name: &str) -> Result<(Vec3, f64), SimError> {
        let label = AnnotationLabel::Landmark(name.to_string());
        let rays = self
            .annotations
            .iter()
            .filter(|a| a.label == label)
            .map(|a| Ok(ray_from_annotation(&self.shot(a.frustum_id)?.frustum, a)?))
            .collect::<Result<Vec<Ray>, SimError>>()?;
        Ok(triangulate(&rays)?)
    }

    fn plan_cup_value(&self, target: &CupOrientation) -> Result<CupPlan, SimError> {
        if !(0.0..=90.0).contains(&target.abduction) || !(-90.0..=90.0).contains(&target.anteversion) {
            return Err(SimError::InvalidParams(format!("cup target {target:?} out of range")));
        }
        let mut landmarks = BTreeMap::new();
        let mut residual = 0f64;
        for name in [ASIS_LEFT, ASIS_RIGHT, PUBIS, ACETABULUM] {
            let (p, rms) = self.triangulate_landmark(name)?;
            residual = residual.max(rms);
            landmarks.insert(name.to_string(), p);
        }
        let app = app_from_landmarks(&landmarks[ASIS_LEFT], &landmarks[ASIS_RIGHT], &landmarks[PUBIS])?;
        let axis = axis_from_angles(target, &app);
        Ok(CupPlan { target: *target, center: landmarks[ACETABULUM], landmarks, app, axis, residual })
    }

    fn plan_line(&self, k: usize) -> Result<Trajectory3D, SimError> {
        match self.plan(k)? {
            Plan::Trajectory { trajectory, .. } => Ok(*trajectory),
            Plan::Tool(t) => {
                let (a, b) = t.tool.axis();
                Ok(Trajectory3D { point: a, direction: (b - a).normalize(), residual: t.consensus_residual.unwrap_or(0.0) })
            }
            Plan::Cup(_) => Err(SimError::InvalidParams(format!("plan {k} is not a trajectory"))),
        }
    }

    fn execute_value(&self, seq: usize, k: usize, noise: &ExecutionNoise) -> Result<Outcome, SimError> {
        check_sigma(noise.rot_sigma_deg)?;
        check_sigma(noise.trans_sigma_mm)?;
        let mut rng = self.event_rng(seq);
        let rot = Normal::new(0.0, noise.rot_sigma_deg.to_radians()).expect("sigma checked");
        let trans = Normal::new(0.0, noise.trans_sigma_mm).expect("sigma checked");
        let tremor = exp_so3(&Vec3::from_fn(|_, _| rot.sample(&mut rng)));
        let shift = Vec3::from_fn(|_, _| trans.sample(&mut rng));
        match self.plan(k)? {
            Plan::Cup(cup) => {
                let app = self.phantom.app_world().ok_or_else(|| SimError::InvalidParams("cup execution needs a pelvis phantom".into()))?;
                let executed_axis = tremor * cup.axis;
                let achieved = cup_angles(&executed_axis, &app)?;
                Ok(Outcome::Cup {
                    plan: k,
                    executed_axis,
                    target: cup.target,
                    achieved,
                    abduction_error: (achieved.abduction - cup.target.abduction).abs(),
                    anteversion_error: (achieved.anteversion - cup.target.anteversion).abs(),
                    in_safe_zone: in_safe_zone(&achieved),
                })
            }
            _ => {
                let tube = self.phantom.tube_world().ok_or_else(|| SimError::InvalidParams("wire execution needs a tube phantom".into()))?;
                let line = self.plan_line(k)?;
                let executed = Trajectory3D { point: line.point + shift, direction: tremor * line.direction, residual: line.residual };
                Ok(Outcome::Kwire { plan: k, executed, error: kwire_error(&executed, &tube)? })
            }
        }
    }

    pub fn acquire(&mut self, commanded_pose: RigidTransform, localizer: LocalizerModel, pixel_noise_sigma: f64) -> Result<&SyntheticShot, SimError> {
        self.record(EventKind::Acquire { commanded_pose, localizer, pixel_noise_sigma })?;
        Ok(self.shots.last().expect("shot committed"))
    }

    /// Acquires with the session's default noise.
    pub fn acquire_default(&mut self, commanded_pose: RigidTransform) -> Result<&SyntheticShot, SimError> {
        self.acquire(commanded_pose, self.config.localizer, self.config.pixel_noise_sigma)
    }

    /// Stores a click and returns its back-projected ray. The annotation's
    /// timestamp is set from the session clock.
    pub fn annotate(&mut self, mut annotation: Annotation) -> Result<(usize, Ray), SimError> {
        annotation.timestamp_ms = self.next_timestamp();
        match self.record(EventKind::Annotate { annotation })? {
            Effect::Annotation(_, ray) => Ok((self.annotations.len() - 1, ray)),
            _ => unreachable!("annotate yields an annotation"),
        }
    }

    /// Clicks the recorded pixel of a landmark, as a scripted annotator.
    pub fn annotate_landmark(&mut self, shot: usize, landmark: &str, label: AnnotationLabel, author: &str) -> Result<(usize, Ray), SimError> {
        let px = self.shot(shot)?.landmark_pixels.get(landmark).copied().ok_or_else(|| SimError::NotFound(format!("landmark {landmark}")))?;
        let point = match px {
            LandmarkPixel { pixel: Some(p), visible: true } => p,
            _ => return Err(SimError::InvalidParams(format!("landmark {landmark} is not visible on shot {shot}"))),
        };
        self.annotate(Annotation { frustum_id: shot, point, label, author: author.to_string(), timestamp_ms: 0 })
    }

    /// Returns the new `^OR T_I`.
    pub fn set_near_plane(&mut self, shot: usize, n: f64) -> Result<RigidTransform, SimError> {
        self.record(EventKind::SetNearPlane { shot, n })?;
        Ok(image_pose(&self.shots[shot].frustum)?)
    }

    pub fn plan_trajectory(&mut self, annotations: [usize; 4]) -> Result<Trajectory3D, SimError> {
        match self.record(EventKind::PlanTrajectory { annotations })? {
            Effect::Plan(Plan::Trajectory { trajectory, .. }) => Ok(trajectory),
            _ => unreachable!("plan_trajectory yields a trajectory"),
        }
    }

    pub fn plan_tool(&mut self, tool: VirtualTool, targets: Option<Vec<ToolTarget>>) -> Result<ToolPlan, SimError> {
        match self.record(EventKind::PlanTool { tool, targets })? {
            Effect::Plan(Plan::Tool(p)) => Ok(p),
            _ => unreachable!("plan_tool yields a tool plan"),
        }
    }

    pub fn plan_cup(&mut self, target: CupOrientation) -> Result<CupPlan, SimError> {
        match self.record(EventKind::PlanCup { target })? {
            Effect::Plan(Plan::Cup(p)) => Ok(p),
            _ => unreachable!("plan_cup yields a cup plan"),
        }
    }

    pub fn execute(&mut self, plan: usize, noise: ExecutionNoise) -> Result<Outcome, SimError> {
        match self.record(EventKind::Execute { plan, noise })? {
            Effect::Outcome(o) => Ok(o),
            _ => unreachable!("execute yields an outcome"),
        }
    }

    /// Cumulative dose, cGy·cm².
    pub fn dose(&self) -> f64 {
        self.shots.iter().map(|s| s.dose_units).sum()
    }

    pub fn metrics(&self) -> Metrics {
        let tube = self.phantom.tube_world();
        let app = self.phantom.app_world();
        let plans = (0..self.plans.len())
            .filter_map(|k| match &self.plans[k] {
                Plan::Cup(cup) => {
                    let achieved = cup_angles(&cup.axis, app.as_ref()?).ok()?;
                    Some(PlanMetric::Cup { plan: k, target: cup.target, achieved, in_safe_zone: in_safe_zone(&achieved) })
                }
                _ => {
                    let error = kwire_error(&self.plan_line(k).ok()?, tube.as_ref()?).ok()?;
                    Some(PlanMetric::Kwire { plan: k, error })
                }
            })
            .collect();
        Metrics { shots: self.shots.len(), dose: self.dose(), plans, outcomes: self.outcome.clone() }
    }
}

fn check_sigma(sigma: f64) -> Result<(), SimError> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidParams(format!("noise sigma {sigma} must be finite and non-negative")))
    }
}
