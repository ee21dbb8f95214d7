//! Planar kinematics of the compliant four-bar finger.
//!
//! Frame convention: the MCP joint `A` sits at the origin, the open finger
//! points along `+x`, flexion is counter-clockwise and the palmar side is
//! `+y`. The palm surface is the line `y = 0` running proximally (`x <= 0`).
//!
//! The input link `AB` is the proximal phalanx. The coupler `BC` is rigidly
//! attached to the intermediate phalanx, which therefore rotates about `B`
//! (the PIP joint) by the coupler angle plus a fixed offset. `D` is the ground
//! pivot on the palm and `CD` the compliant follower.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("linkage cannot be assembled at input angle {theta_deg:.4} deg")]
    NotAssemblable { theta_deg: f64 },
    #[error("input angle {theta_deg:.4} deg outside travel [{min_deg}, {max_deg}] deg")]
    OutOfTravel { theta_deg: f64, min_deg: f64, max_deg: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("follower extension {required:.4} mm exceeds limit {max:.4} mm")]
    ExtensionLimit {
        required: f64,
        max: f64,
        clamped: Box<CompliantPose>,
    },
}

/// One finger's mechanism. Lengths in mm, angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkageGeometry {
    /// Input link, equal to the proximal phalanx.
    pub len_ab: f64,
    /// Coupler.
    pub len_bc: f64,
    /// Ground link.
    pub len_ad: f64,
    /// Compliant follower at rest.
    pub len_cd_rest: f64,
    /// Intermediate phalanx.
    pub len_mp: f64,
    /// Distal phalanx.
    pub len_dp: f64,
    /// Fixed DIP flexion.
    pub dip_angle: f64,
    /// Direction of the ground pivot `D` seen from `A`.
    pub ground_angle: f64,
    /// Intermediate phalanx direction relative to the coupler `B -> C`.
    pub coupler_offset: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for LinkageGeometry {
    fn default() -> Self {
        Self {
            len_ab: 36.0,
            len_bc: 12.0,
            len_ad: 14.0,
            len_cd_rest: 33.0,
            len_mp: 23.5,
            len_dp: 21.0,
            dip_angle: 20.0,
            ground_angle: 340.0,
            coupler_offset: 305.0,
            theta_min: 0.0,
            theta_max: 90.0,
        }
    }
}

impl LinkageGeometry {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let lengths = [
            ("len_ab", self.len_ab),
            ("len_bc", self.len_bc),
            ("len_ad", self.len_ad),
            ("len_cd_rest", self.len_cd_rest),
            ("len_mp", self.len_mp),
            ("len_dp", self.len_dp),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(KinematicsError::InvalidGeometry(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.theta_min <= self.theta_max) {
            return Err(KinematicsError::InvalidGeometry(format!(
                "theta_min {} > theta_max {}",
                self.theta_min, self.theta_max
            )));
        }
        Ok(())
    }

    /// Checks closure at `samples` evenly spaced input angles over the travel.
    pub fn check_assemblable(&self, samples: usize) -> Result<(), KinematicsError> {
        self.validate()?;
        for theta in self.travel_samples(samples.max(2)) {
            solve_fourbar(self, theta)?;
        }
        Ok(())
    }

    /// Same mechanism with every length multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            len_ab: self.len_ab * k,
            len_bc: self.len_bc * k,
            len_ad: self.len_ad * k,
            len_cd_rest: self.len_cd_rest * k,
            len_mp: self.len_mp * k,
            len_dp: self.len_dp * k,
            ..self.clone()
        }
    }

    pub fn theta_range_rad(&self) -> (f64, f64) {
        (self.theta_min.to_radians(), self.theta_max.to_radians())
    }

    /// Evenly spaced input angles (rad) over the travel, endpoints included.
    pub fn travel_samples(&self, samples: usize) -> impl Iterator<Item = f64> {
        let (lo, hi) = self.theta_range_rad();
        let n = samples.max(2);
        (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
    }

    pub fn ground_pivot(&self) -> Vec2 {
        let g = self.ground_angle.to_radians();
        Vec2::new(self.len_ad * g.cos(), self.len_ad * g.sin())
    }

    /// Finger length with every joint straight.
    pub fn chain_length(&self) -> f64 {
        self.len_ab + self.len_mp + self.len_dp
    }
}

/// Linear extension spring acting along the follower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplianceModel {
    /// N per mm of follower extension.
    pub stiffness: f64,
    /// mm.
    pub max_extension: f64,
}

impl Default for ComplianceModel {
    fn default() -> Self {
        Self { stiffness: 2.0, max_extension: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkagePose {
    pub theta_input: f64,
    /// Direction of `B -> C`.
    pub coupler_angle: f64,
    /// Direction of `D -> C`.
    pub follower_angle: f64,
    pub follower_length: f64,
    pub joint_b: Vec2,
    pub joint_c: Vec2,
    pub joint_d: Vec2,
    /// DIP joint (end of the intermediate phalanx).
    pub joint_dip: Vec2,
    pub fingertip: Vec2,
    pub fingertip_heading: f64,
}

impl LinkagePose {
    /// PIP flexion relative to the proximal phalanx, wrapped to (-pi, pi].
    pub fn pip_angle(&self) -> f64 {
        let mp = (self.joint_dip - self.joint_b).y.atan2((self.joint_dip - self.joint_b).x);
        wrap_angle(mp - self.theta_input)
    }

    /// Finger outline A -> B -> DIP -> tip.
    pub fn chain_points(&self) -> [Vec2; 4] {
        [Vec2::zeros(), self.joint_b, self.joint_dip, self.fingertip]
    }

    /// Residual of the closed vector loop A->B->C->D->A, using the given
    /// follower length (mm).
    pub fn closure_residual(&self, geom: &LinkageGeometry) -> f64 {
        let bc = ((self.joint_c - self.joint_b).norm() - geom.len_bc).abs();
        let cd = ((self.joint_c - self.joint_d).norm() - self.follower_length).abs();
        let ab = (self.joint_b.norm() - geom.len_ab).abs();
        bc.max(cd).max(ab)
    }

    /// Perpendicular distance from `about` to the follower's line of action.
    pub fn follower_moment_arm(&self, about: Vec2) -> f64 {
        let u = (self.joint_d - self.joint_c).normalize();
        let r = self.joint_c - about;
        (r.x * u.y - r.y * u.x).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompliantPose {
    pub pose: LinkagePose,
    pub cd_extension: f64,
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

fn check_travel(geom: &LinkageGeometry, theta: f64) -> Result<(), KinematicsError> {
    let (lo, hi) = geom.theta_range_rad();
    let eps = 1e-12;
    if theta < lo - eps || theta > hi + eps {
        return Err(KinematicsError::OutOfTravel {
            theta_deg: theta.to_degrees(),
            min_deg: geom.theta_min,
            max_deg: geom.theta_max,
        });
    }
    Ok(())
}

/// Closure with an explicit follower length. Joint `C` is taken on the
/// palmar side of `B -> D`, i.e. `cross(D - B, C - B) < 0`.
pub(crate) fn solve_with_follower(
    geom: &LinkageGeometry,
    theta: f64,
    len_cd: f64,
) -> Result<LinkagePose, KinematicsError> {
    let b = Vec2::new(geom.len_ab * theta.cos(), geom.len_ab * theta.sin());
    let d = geom.ground_pivot();
    let bd = d - b;
    let dist = bd.norm();
    let not_assemblable = || KinematicsError::NotAssemblable { theta_deg: theta.to_degrees() };
    if dist <= 0.0 || dist > geom.len_bc + len_cd || dist < (geom.len_bc - len_cd).abs() {
        return Err(not_assemblable());
    }
    let along = (geom.len_bc * geom.len_bc - len_cd * len_cd + dist * dist) / (2.0 * dist);
    let h2 = geom.len_bc * geom.len_bc - along * along;
    if h2 < 0.0 {
        return Err(not_assemblable());
    }
    let u = bd / dist;
    // clockwise normal of B -> D
    let n = Vec2::new(u.y, -u.x);
    let c = b + u * along + n * h2.sqrt();

    let coupler_angle = (c - b).y.atan2((c - b).x);
    let follower_angle = (c - d).y.atan2((c - d).x);
    let mp_dir = coupler_angle + geom.coupler_offset.to_radians();
    let dip = b + Vec2::new(mp_dir.cos(), mp_dir.sin()) * geom.len_mp;
    let heading = mp_dir + geom.dip_angle.to_radians();
    let tip = dip + Vec2::new(heading.cos(), heading.sin()) * geom.len_dp;
    Ok(LinkagePose {
        theta_input: theta,
        coupler_angle,
        follower_angle,
        follower_length: len_cd,
        joint_b: b,
        joint_c: c,
        joint_d: d,
        joint_dip: dip,
        fingertip: tip,
        fingertip_heading: wrap_angle(heading),
    })
}

/// Rigid closure at input angle `theta` (rad).
pub fn solve_fourbar(geom: &LinkageGeometry, theta: f64) -> Result<LinkagePose, KinematicsError> {
    check_travel(geom, theta)?;
    solve_with_follower(geom, theta, geom.len_cd_rest)
}

/// Full PP -> MP -> DP chain at `theta`; the fingertip is the DP endpoint.
pub fn fingertip_pose(geom: &LinkageGeometry, theta: f64) -> Result<LinkagePose, KinematicsError> {
    let pose = solve_fourbar(geom, theta)?;
    debug_assert!((pose.fingertip - pose.joint_dip).norm() - geom.len_dp < 1e-9);
    Ok(pose)
}

/// Smallest and largest graspable cylinder radius (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraspEnvelope {
    pub r_min: f64,
    pub r_max: f64,
}

impl GraspEnvelope {
    pub fn contains(&self, lo: f64, hi: f64) -> bool {
        self.r_min <= lo && self.r_max >= hi
    }
}

const POINTS_PER_SEGMENT: usize = 256;

/// Radii `r` for which `p` lies strictly inside the cylinder section of radius
/// `r` resting on the palm and touching the knuckle line: center `(-r, r)`.
pub(crate) fn penetrating_radii(p: Vec2) -> Option<(f64, f64)> {
    if p.x >= 0.0 || p.y <= 0.0 {
        return None;
    }
    let mid = p.y - p.x;
    let half = (-2.0 * p.x * p.y).sqrt();
    Some((mid - half, mid + half))
}

fn for_each_chain_point(pose: &LinkagePose, mut f: impl FnMut(Vec2)) {
    let pts = pose.chain_points();
    for seg in pts.windows(2) {
        for k in 0..=POINTS_PER_SEGMENT {
            let t = k as f64 / POINTS_PER_SEGMENT as f64;
            f(seg[0] + (seg[1] - seg[0]) * t);
        }
    }
}

/// Sweeps the travel and returns the range of cylinder radii the closing
/// finger makes contact with. The cylinder rests on the palm line with its
/// surface tangent to the knuckle line `x = 0`; a radius counts when some
/// pose brings the finger outline into contact with it.
pub fn grasp_radius_envelope(
    geom: &LinkageGeometry,
    samples: usize,
) -> Result<GraspEnvelope, KinematicsError> {
    if samples < 16 {
        return Err(KinematicsError::InvalidGeometry(format!(
            "envelope needs at least 16 samples, got {samples}"
        )));
    }
    let mut r_min = f64::INFINITY;
    let mut r_max = 0.0f64;
    for theta in geom.travel_samples(samples) {
        let pose = solve_fourbar(geom, theta)?;
        for_each_chain_point(&pose, |p| {
            if let Some((lo, hi)) = penetrating_radii(p) {
                r_min = r_min.min(lo);
                r_max = r_max.max(hi);
            }
        });
    }
    if !r_min.is_finite() {
        return Ok(GraspEnvelope { r_min: 0.0, r_max: 0.0 });
    }
    Ok(GraspEnvelope { r_min, r_max })
}

/// First contact between the closing finger and a cylinder of radius `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactInfo {
    /// MCP angle at first contact (rad).
    pub theta: f64,
    pub point: Vec2,
    /// Distance from the MCP joint to the contact point (mm).
    pub lever: f64,
    /// Contact lies above the cylinder's equator, so the finger pulls the
    /// object toward the palm.
    pub enclosing: bool,
    pub pose: LinkagePose,
}

fn deepest_point(pose: &LinkagePose, r: f64) -> Option<(f64, Vec2)> {
    let center = Vec2::new(-r, r);
    let mut best: Option<(f64, Vec2)> = None;
    for_each_chain_point(pose, |p| {
        let depth = r - (p - center).norm();
        if best.is_none_or(|(d, _)| depth > d) {
            best = Some((depth, p));
        }
    });
    best
}

/// Finds the first MCP angle where the finger touches the cylinder of
/// radius `r` (mm); `None` if the whole travel passes without contact.
pub fn first_contact(
    geom: &LinkageGeometry,
    r: f64,
    samples: usize,
) -> Result<Option<ContactInfo>, KinematicsError> {
    let touches = |theta: f64| -> Result<bool, KinematicsError> {
        let pose = solve_fourbar(geom, theta)?;
        Ok(deepest_point(&pose, r).is_some_and(|(d, _)| d > 0.0))
    };
    let thetas: Vec<f64> = geom.travel_samples(samples.max(16)).collect();
    if touches(thetas[0])? {
        let pose = solve_fourbar(geom, thetas[0])?;
        return Ok(Some(contact_from_pose(pose, r)));
    }
    for w in thetas.windows(2) {
        if touches(w[1])? {
            let (mut lo, mut hi) = (w[0], w[1]);
            while hi - lo > 1e-10 {
                let mid = 0.5 * (lo + hi);
                if touches(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let pose = solve_fourbar(geom, hi)?;
            return Ok(Some(contact_from_pose(pose, r)));
        }
    }
    Ok(None)
}

fn contact_from_pose(pose: LinkagePose, r: f64) -> ContactInfo {
    let (_, point) = deepest_point(&pose, r).expect("chain has points");
    ContactInfo {
        theta: pose.theta_input,
        point,
        lever: point.norm(),
        enclosing: point.y >= r,
        pose,
    }
}

/// Balances an external torque on the intermediate phalanx (N mm, about the
/// PIP joint) against the follower spring. Returns the stretched pose; if the
/// required extension exceeds the limit the error carries the pose clamped at
/// `max_extension`.
pub fn compliant_equilibrium(
    geom: &LinkageGeometry,
    comp: &ComplianceModel,
    external_tip_torque: f64,
    theta: f64,
) -> Result<CompliantPose, KinematicsError> {
    if !(external_tip_torque >= 0.0) {
        return Err(KinematicsError::InvalidGeometry(format!(
            "external torque must be >= 0, got {external_tip_torque}"
        )));
    }
    check_travel(geom, theta)?;
    let restoring = |ext: f64| -> Result<(f64, LinkagePose), KinematicsError> {
        let pose = solve_with_follower(geom, theta, geom.len_cd_rest + ext)?;
        let arm = pose.follower_moment_arm(pose.joint_b);
        Ok((comp.stiffness * ext * arm, pose))
    };
    if external_tip_torque == 0.0 {
        let pose = solve_with_follower(geom, theta, geom.len_cd_rest)?;
        return Ok(CompliantPose { pose, cd_extension: 0.0 });
    }
    let (at_limit, limit_pose) = restoring(comp.max_extension)?;
    if at_limit < external_tip_torque {
        let required = estimate_required_extension(geom, comp, external_tip_torque, theta);
        return Err(KinematicsError::ExtensionLimit {
            required,
            max: comp.max_extension,
            clamped: Box::new(CompliantPose { pose: limit_pose, cd_extension: comp.max_extension }),
        });
    }
    let (mut lo, mut hi) = (0.0, comp.max_extension);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if restoring(mid)?.0 < external_tip_torque {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let ext = 0.5 * (lo + hi);
    let (_, pose) = restoring(ext)?;
    Ok(CompliantPose { pose, cd_extension: ext })
}

fn estimate_required_extension(
    geom: &LinkageGeometry,
    comp: &ComplianceModel,
    torque: f64,
    theta: f64,
) -> f64 {
    // linearized at the limit; only used for the diagnostic
    solve_with_follower(geom, theta, geom.len_cd_rest + comp.max_extension)
        .map(|p| torque / (comp.stiffness * p.follower_moment_arm(p.joint_b)))
        .unwrap_or(f64::INFINITY)
}

/// Writes `theta_deg,tip_x_mm,tip_y_mm,heading_deg` rows over the travel.
pub fn write_trajectory_csv<W: Write>(
    geom: &LinkageGeometry,
    samples: usize,
    mut out: W,
) -> anyhow::Result<()> {
    writeln!(out, "theta_deg,tip_x_mm,tip_y_mm,heading_deg")?;
    for theta in geom.travel_samples(samples) {
        let pose = fingertip_pose(geom, theta)?;
        writeln!(
            out,
            "{},{},{},{}",
            theta.to_degrees(),
            pose.fingertip.x,
            pose.fingertip.y,
            pose.fingertip_heading.to_degrees()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Homogeneous-transform forward chain, independent of the closure code.
    fn chain_oracle(theta: f64, mp_abs: f64, geom: &LinkageGeometry) -> Vec2 {
        type M = nalgebra::Matrix3<f64>;
        let rot = |a: f64| M::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0);
        let tx = |l: f64| M::new(1.0, 0.0, l, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let pip = mp_abs - theta;
        let t = rot(theta)
            * tx(geom.len_ab)
            * rot(pip)
            * tx(geom.len_mp)
            * rot(geom.dip_angle.to_radians())
            * tx(geom.len_dp);
        Vec2::new(t[(0, 2)], t[(1, 2)])
    }

    #[test]
    fn default_geometry_is_assemblable() {
        LinkageGeometry::default().check_assemblable(901).unwrap();
    }

    #[test]
    fn input_link_is_proximal_phalanx() {
        let g = LinkageGeometry::default();
        let pose = solve_fourbar(&g, 0.3).unwrap();
        assert_abs_diff_eq!(pose.joint_b.norm(), 36.0, epsilon = 1e-12);
    }

    #[test]
    fn straight_chain_reaches_full_length() {
        // collinear joints: pick the coupler offset that cancels the PIP angle
        let mut g = LinkageGeometry { dip_angle: 0.0, ..Default::default() };
        let pose = solve_fourbar(&g, 0.0).unwrap();
        g.coupler_offset -= pose.pip_angle().to_degrees();
        let pose = fingertip_pose(&g, 0.0).unwrap();
        assert_abs_diff_eq!(pose.fingertip.norm(), 80.5, epsilon = 1e-9);
    }

    #[test]
    fn fingertip_matches_transform_chain() {
        let g = LinkageGeometry::default();
        for theta in g.travel_samples(37) {
            let pose = fingertip_pose(&g, theta).unwrap();
            let mp_abs = pose.coupler_angle + g.coupler_offset.to_radians();
            let oracle = chain_oracle(theta, mp_abs, &g);
            assert!((pose.fingertip - oracle).norm() < 1e-9);
        }
    }

    #[test]
    fn open_pose_matches_branch_enumeration() {
        let g = LinkageGeometry::default();
        let pose = solve_fourbar(&g, 0.0).unwrap();
        // both circle intersections, pick the one palmar of B->D
        let b = Vec2::new(36.0, 0.0);
        let d = g.ground_pivot();
        let mut candidates = Vec::new();
        let n = 200_000;
        for k in 0..n {
            let a = 2.0 * PI * k as f64 / n as f64;
            let c = b + Vec2::new(a.cos(), a.sin()) * g.len_bc;
            let err = ((c - d).norm() - g.len_cd_rest).abs();
            if err < 5e-3 {
                candidates.push(c);
            }
        }
        let bd = d - b;
        let palmar: Vec<_> = candidates
            .into_iter()
            .filter(|c| bd.x * (c - b).y - bd.y * (c - b).x < 0.0)
            .collect();
        assert!(!palmar.is_empty());
        let mean = palmar.iter().fold(Vec2::zeros(), |acc, c| acc + c) / palmar.len() as f64;
        assert!((mean - pose.joint_c).norm() < 1e-3);
        // the open finger points distally and lies close to the palm plane
        assert!(pose.fingertip.x > 70.0);
        assert!(pose.pip_angle().to_degrees().abs() < 5.0);
    }

    #[test]
    fn degenerate_geometry_not_assemblable() {
        let g = LinkageGeometry { len_bc: 2.0, len_cd_rest: 3.0, ..Default::default() };
        assert!(matches!(solve_fourbar(&g, 0.2), Err(KinematicsError::NotAssemblable { .. })));
    }

    #[test]
    fn out_of_travel_rejected() {
        let g = LinkageGeometry::default();
        assert!(matches!(solve_fourbar(&g, 2.0), Err(KinematicsError::OutOfTravel { .. })));
    }

    #[test]
    fn coupler_angle_is_continuous() {
        let g = LinkageGeometry::default();
        let n = 901; // 0.1 deg steps
        let poses: Vec<_> = g.travel_samples(n).map(|t| solve_fourbar(&g, t).unwrap()).collect();
        for w in poses.windows(2) {
            let jump = wrap_angle(w[1].coupler_angle - w[0].coupler_angle).abs();
            assert!(jump < 0.01, "coupler jump {jump}");
        }
    }

    #[test]
    fn fingertip_path_has_no_jumps() {
        let g = LinkageGeometry::default();
        let n = 2001;
        let step = (g.theta_max - g.theta_min).to_radians() / (n - 1) as f64;
        let tips: Vec<_> =
            g.travel_samples(n).map(|t| fingertip_pose(&g, t).unwrap().fingertip).collect();
        // the PIP coupling can amplify the input rotation, bound it generously
        let bound = 3.0 * step * g.chain_length();
        for w in tips.windows(2) {
            assert!((w[1] - w[0]).norm() < bound);
        }
    }

    #[test]
    fn pip_flexes_with_mcp() {
        let g = LinkageGeometry::default();
        let pips: Vec<f64> = g
            .travel_samples(91)
            .map(|t| solve_fourbar(&g, t).unwrap().pip_angle())
            .collect();
        assert!(pips.windows(2).all(|w| w[1] > w[0]));
        assert!(pips.last().unwrap().to_degrees() > 100.0);
    }

    #[test]
    fn envelope_covers_daily_objects() {
        let env = grasp_radius_envelope(&LinkageGeometry::default(), 181).unwrap();
        assert!(env.contains(15.0, 70.0), "{env:?}");
    }

    #[test]
    fn envelope_scales_with_geometry() {
        let g = LinkageGeometry::default();
        let e1 = grasp_radius_envelope(&g, 91).unwrap();
        let e2 = grasp_radius_envelope(&g.scaled(2.0), 91).unwrap();
        assert!((e2.r_min / e1.r_min - 2.0).abs() < 0.02);
        assert!((e2.r_max / e1.r_max - 2.0).abs() < 0.02);
    }

    #[test]
    fn envelope_needs_samples() {
        assert!(grasp_radius_envelope(&LinkageGeometry::default(), 8).is_err());
    }

    #[test]
    fn envelope_matches_brute_force_sweep() {
        // small finger; brute force checks penetration on an (r, theta) grid
        let g = LinkageGeometry::default().scaled(0.5);
        let env = grasp_radius_envelope(&g, 46).unwrap();
        let center_dist = |p: Vec2, r: f64| (p - Vec2::new(-r, r)).norm();
        let mut contacted = Vec::new();
        let dr = 0.05;
        let mut r = dr;
        while r < 100.0 {
            let hit = g.travel_samples(46).any(|t| {
                let pose = solve_fourbar(&g, t).unwrap();
                let pts = pose.chain_points();
                pts.windows(2).any(|s| {
                    (0..=400).any(|k| {
                        let p = s[0] + (s[1] - s[0]) * (k as f64 / 400.0);
                        center_dist(p, r) < r
                    })
                })
            });
            if hit {
                contacted.push(r);
            }
            r += dr;
        }
        let lo = contacted.first().copied().unwrap();
        let hi = contacted.last().copied().unwrap();
        assert!((lo - env.r_min).abs() <= 2.0 * dr, "{lo} vs {}", env.r_min);
        assert!((hi - env.r_max).abs() <= 2.0 * dr, "{hi} vs {}", env.r_max);
    }

    #[test]
    fn first_contact_inside_envelope() {
        let g = LinkageGeometry::default();
        let c = first_contact(&g, 25.0, 181).unwrap().unwrap();
        assert!(c.theta > 0.0 && c.theta < g.theta_max.to_radians());
        assert!(c.lever > 36.0);
        assert!(first_contact(&g, 200.0, 181).unwrap().is_none());
        assert!(first_contact(&g, 5.0, 181).unwrap().is_none());
    }

    #[test]
    fn unloaded_spring_gives_rigid_pose() {
        let g = LinkageGeometry::default();
        let c = ComplianceModel::default();
        let res = compliant_equilibrium(&g, &c, 0.0, 0.7).unwrap();
        assert_eq!(res.cd_extension, 0.0);
        assert_eq!(res.pose, solve_fourbar(&g, 0.7).unwrap());
    }

    #[test]
    fn unit_extension_balances_linearized_torque() {
        let g = LinkageGeometry::default();
        let c = ComplianceModel::default();
        let theta = 0.7;
        let stretched = solve_with_follower(&g, theta, g.len_cd_rest + 1.0).unwrap();
        let arm_at_1 = stretched.follower_moment_arm(stretched.joint_b);
        let res = compliant_equilibrium(&g, &c, c.stiffness * 1.0 * arm_at_1, theta).unwrap();
        assert_abs_diff_eq!(res.cd_extension, 1.0, epsilon = 1e-9);

        let rest = solve_fourbar(&g, theta).unwrap();
        let arm_at_0 = rest.follower_moment_arm(rest.joint_b);
        let res = compliant_equilibrium(&g, &c, c.stiffness * arm_at_0, theta).unwrap();
        assert!((res.cd_extension - 1.0).abs() < 0.05);
    }

    #[test]
    fn excessive_torque_hits_extension_limit() {
        let g = LinkageGeometry::default();
        let c = ComplianceModel::default();
        match compliant_equilibrium(&g, &c, 1e6, 0.7) {
            Err(KinematicsError::ExtensionLimit { clamped, max, .. }) => {
                assert_eq!(clamped.cd_extension, max);
            }
            other => panic!("expected limit, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_trajectory_csv(&LinkageGeometry::default(), 10, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "theta_deg,tip_x_mm,tip_y_mm,heading_deg");
        assert_eq!(lines.len(), 11);
    }
}
