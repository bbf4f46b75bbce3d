//! Rectified stereo geometry: disparity, triangulation, pinhole projection
//! and the virtual-sphere bounding-box construction.

use thiserror::Error;

use crate::types::{BBox, Keypoint2D, Point3D, StereoBBox, StereoCalibration, View};

/// Radius of the virtual sphere placed around an annotated keypoint.
pub const DEFAULT_SPHERE_RADIUS_MM: f64 = 2.5;

/// Default vertical tolerance between stereo correspondences.
pub const DEFAULT_EPIPOLAR_TOL_PX: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("disparity {0} px is not positive")]
    NonPositiveDisparity(f64),
    #[error("point at z = {0} mm is not in front of the camera")]
    BehindCamera(f64),
    #[error("camera lies inside or on the sphere (|c| = {distance_mm} mm, r = {radius_mm} mm)")]
    CameraInsideSphere { distance_mm: f64, radius_mm: f64 },
}

/// `u_left - u_right`. May be zero or negative.
pub fn disparity(left_centre: Keypoint2D, right_centre: Keypoint2D) -> f64 {
    left_centre.u - right_centre.u
}

/// Triangulates a left-view pixel with the given disparity.
///
/// Uses `Z = f·b/d`, so that positive disparity maps to positive depth.
pub fn reproject(kpt_left: Keypoint2D, d: f64, calib: &StereoCalibration) -> Result<Point3D, GeometryError> {
    if !(d > 0.0) {
        return Err(GeometryError::NonPositiveDisparity(d));
    }
    let scale = calib.baseline_mm / d;
    Ok(Point3D { x_mm: (kpt_left.u - calib.cx_px) * scale, y_mm: (kpt_left.v - calib.cy_px) * scale, z_mm: calib.focal_px * scale })
}

/// Triangulates the centres of a stereo box pair.
pub fn reproject_bbox(bbox: &StereoBBox, calib: &StereoCalibration) -> Result<Point3D, GeometryError> {
    let left = bbox.left.centre();
    reproject(left, disparity(left, bbox.right.centre()), calib)
}

/// Pinhole projection into one rectified view.
pub fn project(p: Point3D, calib: &StereoCalibration, view: View) -> Result<Keypoint2D, GeometryError> {
    if !(p.z_mm > 0.0) {
        return Err(GeometryError::BehindCamera(p.z_mm));
    }
    let x = match view {
        View::Left => p.x_mm,
        View::Right => p.x_mm - calib.baseline_mm,
    };
    Ok(Keypoint2D { u: calib.focal_px * x / p.z_mm + calib.cx_px, v: calib.focal_px * p.y_mm / p.z_mm + calib.cy_px })
}

/// True when the two points lie on the same image row within `tol` pixels.
pub fn epipolar_consistent(kl: Keypoint2D, kr: Keypoint2D, tol: f64) -> bool {
    (kl.v - kr.v).abs() <= tol
}

/// Tight axis-aligned boxes around the silhouette of a sphere in both views.
///
/// The silhouette of a sphere with centre `c` (camera frame) and radius `r`
/// is the conic `pᵀ(ccᵀ − (c·c − r²)I)p = 0` in normalised coordinates
/// `p = (x, y, 1)`. Its dual is proportional to `r²I − ccᵀ`, so the
/// vertical tangents `x = k` solve `(c_z² − r²)k² − 2c_x c_z k + c_x² − r² = 0`
/// and likewise for horizontal tangents with `c_y`.
pub fn sphere_to_bbox(centre: Point3D, radius_mm: f64, calib: &StereoCalibration) -> Result<StereoBBox, GeometryError> {
    if !(centre.norm() > radius_mm && centre.z_mm > radius_mm) {
        return Err(GeometryError::CameraInsideSphere { distance_mm: centre.norm(), radius_mm });
    }
    // Vertical extents depend only on (y, z) and are shared by both views.
    let (y_lo, y_hi) = tangent_pair(centre.y_mm, centre.z_mm, radius_mm);
    let v_min = calib.focal_px * y_lo + calib.cy_px;
    let v_max = calib.focal_px * y_hi + calib.cy_px;

    let view_box = |x_mm: f64| {
        let (x_lo, x_hi) = tangent_pair(x_mm, centre.z_mm, radius_mm);
        BBox::new(calib.focal_px * x_lo + calib.cx_px, v_min, calib.focal_px * x_hi + calib.cx_px, v_max)
    };
    Ok(StereoBBox { left: view_box(centre.x_mm), right: view_box(centre.x_mm - calib.baseline_mm) })
}

/// Normalised tangent coordinates `(lo, hi)` of a sphere's silhouette
/// along one image axis, given the lateral offset `a` and depth `z`.
fn tangent_pair(a: f64, z: f64, r: f64) -> (f64, f64) {
    let denom = z * z - r * r;
    let root = r * (a * a + denom).sqrt();
    let mid = a * z;
    ((mid - root) / denom, (mid + root) / denom)
}

/// Rebuilds the stereo box from an annotated keypoint pair.
///
/// Triangulates with the keypoints' disparity and projects the virtual
/// sphere of `radius_mm` around the result.
pub fn keypoints_to_bbox(kl: Keypoint2D, kr: Keypoint2D, radius_mm: f64, calib: &StereoCalibration) -> Result<StereoBBox, GeometryError> {
    let p = reproject(kl, disparity(kl, kr), calib)?;
    sphere_to_bbox(p, radius_mm, calib)
}
