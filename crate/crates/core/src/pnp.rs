//! Rigid pose from 2D-3D point correspondences under a pinhole camera:
//! a direct linear transform for initialization, nearest-rotation projection,
//! then damped Gauss-Newton refinement on the pixel reprojection error.

use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, Vector6};
use thiserror::Error;

use crate::scene::{CameraIntrinsics, Mat3, RigidPose, Vec3};

#[derive(Debug, Error)]
pub enum PnpError {
    #[error("need at least 6 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite value in correspondence input")]
    NonFiniteInput,
    #[error("point transforms behind the camera (z = {z})")]
    Cheirality { z: f64 },
    #[error("singular value decomposition failed in the DLT")]
    SvdFailed,
    #[error("degenerate point configuration")]
    Degenerate,
    #[error(
        "refinement diverged (residual {residual:.3e}); best pose so far attached"
    )]
    Diverged { best: Box<RigidPose>, residual: f64 },
}

pub type Result<T> = std::result::Result<T, PnpError>;

/// 2D-3D correspondences plus the camera they were observed with.
#[derive(Debug, Clone)]
pub struct Correspondences {
    /// (model-frame point, observed pixel).
    pub points: Vec<(Vec3, [f64; 2])>,
    pub intrinsics: CameraIntrinsics,
}

/// Pinhole projection of model points under a pose. Errors if any point
/// lands behind the camera.
pub fn project(
    points: &[Vec3],
    pose: &RigidPose,
    intr: &CameraIntrinsics,
) -> Result<Vec<[f64; 2]>> {
    points
        .iter()
        .map(|p| {
            let q = pose.transform(p);
            if q.z <= 0.0 {
                return Err(PnpError::Cheirality { z: q.z });
            }
            Ok([intr.fx * q.x / q.z + intr.cx, intr.fy * q.y / q.z + intr.cy])
        })
        .collect()
}

/// Sum of squared pixel reprojection errors; infinite when cheirality fails.
fn reprojection_rss(corrs: &Correspondences, pose: &RigidPose) -> f64 {
    let mut rss = 0.0;
    for (p, uv) in &corrs.points {
        let q = pose.transform(p);
        if q.z <= 0.0 {
            return f64::INFINITY;
        }
        let u = corrs.intrinsics.fx * q.x / q.z + corrs.intrinsics.cx;
        let v = corrs.intrinsics.fy * q.y / q.z + corrs.intrinsics.cy;
        rss += (u - uv[0]) * (u - uv[0]) + (v - uv[1]) * (v - uv[1]);
    }
    rss
}

/// Nearest rotation matrix in the Frobenius sense, with det +1.
fn nearest_rotation(m: &Mat3) -> Result<Mat3> {
    let svd = m.svd(true, true);
    let u = svd.u.ok_or(PnpError::SvdFailed)?;
    let v_t = svd.v_t.ok_or(PnpError::SvdFailed)?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fix = u;
        u_fix.column_mut(2).neg_mut();
        r = u_fix * v_t;
    }
    Ok(r)
}

/// DLT initialization in normalized image coordinates with Hartley
/// normalization of the 3D points.
fn dlt_init(corrs: &Correspondences) -> Result<RigidPose> {
    let n = corrs.points.len();
    let intr = &corrs.intrinsics;

    // Normalize the 3D points: zero centroid, mean norm sqrt(3).
    let mut centroid = Vec3::zeros();
    for (p, _) in &corrs.points {
        centroid += p;
    }
    centroid /= n as f64;
    let mut mean_dist = 0.0;
    for (p, _) in &corrs.points {
        mean_dist += (p - centroid).norm();
    }
    mean_dist /= n as f64;
    if mean_dist <= f64::EPSILON {
        return Err(PnpError::Degenerate);
    }
    let scale = 3.0f64.sqrt() / mean_dist;

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (p, uv)) in corrs.points.iter().enumerate() {
        let q = (p - centroid) * scale;
        let u = (uv[0] - intr.cx) / intr.fx;
        let v = (uv[1] - intr.cy) / intr.fy;
        let r0 = 2 * i;
        let r1 = 2 * i + 1;
        a[(r0, 0)] = q.x;
        a[(r0, 1)] = q.y;
        a[(r0, 2)] = q.z;
        a[(r0, 3)] = 1.0;
        a[(r0, 8)] = -u * q.x;
        a[(r0, 9)] = -u * q.y;
        a[(r0, 10)] = -u * q.z;
        a[(r0, 11)] = -u;
        a[(r1, 4)] = q.x;
        a[(r1, 5)] = q.y;
        a[(r1, 6)] = q.z;
        a[(r1, 7)] = 1.0;
        a[(r1, 8)] = -v * q.x;
        a[(r1, 9)] = -v * q.y;
        a[(r1, 10)] = -v * q.z;
        a[(r1, 11)] = -v;
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(PnpError::SvdFailed)?;
    let p_vec = v_t.row(v_t.nrows() - 1);

    let mut m = Matrix3::<f64>::zeros();
    let mut t = Vec3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            m[(r, c)] = p_vec[4 * r + c];
        }
        t[r] = p_vec[4 * r + 3];
    }

    // Undo the 3D normalization: P' = P * T, with T = scale translation.
    // M' = M * scale stays proportional; t' = t - M * centroid * scale.
    let t = t - m * (centroid * scale);
    let m = m * scale;

    // Fix the projective scale by the mean row norm and the sign by det.
    let mut s =
        (m.row(0).norm() + m.row(1).norm() + m.row(2).norm()) / 3.0;
    if m.determinant() < 0.0 {
        s = -s;
    }
    if s.abs() <= f64::EPSILON {
        return Err(PnpError::Degenerate);
    }
    let m = m / s;
    let mut t = t / s;

    let mut r = nearest_rotation(&m)?;

    // Cheirality: most points must land in front of the camera.
    let behind = corrs
        .points
        .iter()
        .filter(|(p, _)| (r * p + t).z <= 0.0)
        .count();
    if behind * 2 > n {
        // The null vector's global sign is arbitrary; flip.
        let m2 = -m;
        t = -t;
        r = nearest_rotation(&m2)?;
    }
    let pose = RigidPose {
        rotation: r,
        translation: t,
    };
    if corrs.points.iter().any(|(p, _)| pose.transform(p).z <= 0.0) {
        return Err(PnpError::Cheirality {
            z: corrs
                .points
                .iter()
                .map(|(p, _)| pose.transform(p).z)
                .fold(f64::INFINITY, f64::min),
        });
    }
    Ok(pose)
}

/// The solved pose and its fit quality.
#[derive(Debug, Clone)]
pub struct PnpSolution {
    pub pose: RigidPose,
    /// Sum of squared pixel reprojection errors of the returned pose.
    pub reprojection_rss: f64,
    /// Same quantity for the DLT initialization.
    pub init_rss: f64,
}

const MAX_ITERS: usize = 50;
const STEP_TOL: f64 = 1e-10;
const LAMBDA_INIT: f64 = 1e-3;

/// Pose minimizing the pixel reprojection error of the correspondences.
///
/// Rotation increments are axis-angle vectors composed onto the current
/// estimate, so the returned rotation is orthonormal without renormalization
/// tricks; a final nearest-rotation projection removes accumulated round-off.
pub fn solve_pnp(corrs: &Correspondences) -> Result<PnpSolution> {
    let n = corrs.points.len();
    if n < 6 {
        return Err(PnpError::TooFewPoints(n));
    }
    for (p, uv) in &corrs.points {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())
            || !(uv[0].is_finite() && uv[1].is_finite())
        {
            return Err(PnpError::NonFiniteInput);
        }
    }

    let init = dlt_init(corrs)?;
    let init_rss = reprojection_rss(corrs, &init);

    let mut pose = init;
    let mut rss = init_rss;
    let mut lambda = LAMBDA_INIT;
    let mut consecutive_fails = 0;
    let intr = &corrs.intrinsics;

    for _ in 0..MAX_ITERS {
        // Normal equations J^T J delta = -J^T r over (omega, dt).
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (p, uv) in &corrs.points {
            let q = pose.transform(p);
            let (qx, qy, qz) = (q.x, q.y, q.z);
            let ru = intr.fx * qx / qz + intr.cx - uv[0];
            let rv = intr.fy * qy / qz + intr.cy - uv[1];

            // d(u,v)/dq
            let du_dq = Vec3::new(intr.fx / qz, 0.0, -intr.fx * qx / (qz * qz));
            let dv_dq = Vec3::new(0.0, intr.fy / qz, -intr.fy * qy / (qz * qz));
            // dq/d(omega) = -[R p]_x (left-composed increment), dq/dt = I.
            let rp = q - pose.translation;
            let dq_dw = |e: &Vec3| -> Vec3 { e.cross(&rp) };
            let mut j_u = Vector6::<f64>::zeros();
            let mut j_v = Vector6::<f64>::zeros();
            for (k, axis) in [Vec3::x(), Vec3::y(), Vec3::z()].iter().enumerate() {
                let dq = dq_dw(axis);
                j_u[k] = du_dq.dot(&dq);
                j_v[k] = dv_dq.dot(&dq);
            }
            for k in 0..3 {
                j_u[3 + k] = du_dq[k];
                j_v[3 + k] = dv_dq[k];
            }
            jtj += j_u * j_u.transpose() + j_v * j_v.transpose();
            jtr += j_u * ru + j_v * rv;
        }
        if jtr.norm() < 1e-14 {
            break; // gradient vanished: at a least-squares optimum
        }

        let mut accepted = false;
        for _ in 0..10 {
            let damped = jtj + Matrix6::identity() * lambda;
            let Some(delta) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            // A vanishing proposed step means convergence whether or not it
            // improves the float residual.
            if delta.norm() < STEP_TOL {
                return finish(corrs, pose, init_rss);
            }
            let omega = Vec3::new(delta[0], delta[1], delta[2]);
            let dt = Vec3::new(delta[3], delta[4], delta[5]);
            let candidate = RigidPose {
                rotation: *Rotation3::from_scaled_axis(omega).matrix() * pose.rotation,
                translation: pose.translation + dt,
            };
            let cand_rss = reprojection_rss(corrs, &candidate);
            if cand_rss < rss {
                pose = candidate;
                rss = cand_rss;
                lambda = (lambda / 10.0).max(1e-12);
                consecutive_fails = 0;
                accepted = true;
                break;
            }
            // Stagnation at float resolution is convergence, not divergence.
            if cand_rss - rss <= 1e-12 * rss.max(1.0) {
                return finish(corrs, pose, init_rss);
            }
            // A full-size step that genuinely worsens the residual: damp and
            // retry; give up after five strikes in a row.
            lambda *= 10.0;
            consecutive_fails += 1;
            if consecutive_fails >= 5 {
                return Err(PnpError::Diverged {
                    best: Box::new(finish(corrs, pose, init_rss)?.pose),
                    residual: rss,
                });
            }
        }
        if !accepted {
            break;
        }
    }
    finish(corrs, pose, init_rss)
}

fn finish(corrs: &Correspondences, pose: RigidPose, init_rss: f64) -> Result<PnpSolution> {
    let rotation = nearest_rotation(&pose.rotation)?;
    let pose = RigidPose {
        rotation,
        translation: pose.translation,
    };
    Ok(PnpSolution {
        reprojection_rss: reprojection_rss(corrs, &pose),
        init_rss,
        pose,
    })
}

/// Pair the 16 head outputs with the canonical box corners and solve.
pub fn pose_from_head_output(
    head16: &[f64],
    corners: &[Vec3; 8],
    intr: &CameraIntrinsics,
) -> Result<PnpSolution> {
    if head16.len() != 16 {
        return Err(PnpError::TooFewPoints(head16.len() / 2));
    }
    if head16.iter().any(|v| !v.is_finite()) {
        return Err(PnpError::NonFiniteInput);
    }
    let points = corners
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, [head16[2 * i], head16[2 * i + 1]]))
        .collect();
    solve_pnp(&Correspondences {
        points,
        intrinsics: *intr,
    })
}
