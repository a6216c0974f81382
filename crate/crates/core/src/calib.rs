//! Pinhole camera model, the full 3×4 projection and the ground-plane
//! homography obtained by dropping its z column.
//!
//! A ground point is considered visible when the third homogeneous
//! coordinate of its projection exceeds [`DEPTH_EPS`]; the projection
//! functions return `None` otherwise instead of failing, because warping
//! has to tolerate cameras that see only part of the ground.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Mat34, Vec3};
use crate::scalar::Real;

/// Smallest homogeneous scale treated as "in front of the camera".
pub const DEPTH_EPS: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-12;

/// Intrinsics, extrinsics and image size of one calibrated camera.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraCalibration<T> {
    pub intrinsic: Mat3<T>,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    /// (height, width) in pixels.
    pub image_size: (usize, usize),
}

impl<T: Real> CameraCalibration<T> {
    /// Builds a calibration and checks every invariant; nothing is repaired.
    pub fn new(
        intrinsic: Mat3<T>,
        rotation: Mat3<T>,
        translation: Vec3<T>,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let calib = Self {
            intrinsic,
            rotation,
            translation,
            image_size,
        };
        calib.validate()?;
        Ok(calib)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .intrinsic
            .iter()
            .chain(self.rotation.iter())
            .flatten()
            .chain(self.translation.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite entry".into()));
        }
        let (h, w) = self.image_size;
        if h == 0 || w == 0 {
            return Err(Error::Validation(format!("image size {h}x{w}")));
        }

        let a = &self.intrinsic;
        if a[0][0] <= T::zero() || a[1][1] <= T::zero() {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        if a[1][0] != T::zero() || a[2][0] != T::zero() || a[2][1] != T::zero() {
            return Err(Error::Validation(
                "intrinsic matrix must be upper triangular".into(),
            ));
        }
        if linalg::det(a).abs() <= T::lit(SINGULAR_TOL) {
            return Err(Error::Validation("singular intrinsic matrix".into()));
        }

        let r = &self.rotation;
        let rtr = linalg::mat_mul(&linalg::transpose(r), r);
        let err = linalg::max_abs_diff(&rtr, &linalg::identity());
        if err >= T::lit(ORTHONORMAL_TOL) {
            return Err(Error::Validation(format!(
                "rotation is not orthonormal (|RᵀR - I| = {:e})",
                err.as_f64()
            )));
        }
        if linalg::det(r) <= T::zero() {
            return Err(Error::Validation(
                "rotation has negative determinant (reflection)".into(),
            ));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vec3<T> {
        let rt = linalg::transpose(&self.rotation);
        let c = linalg::mat_vec(&rt, &self.translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn cast<U: Real>(&self) -> CameraCalibration<U> {
        let m3 = |m: &Mat3<T>| m.map(|row| row.map(|v| v.cast::<U>()));
        CameraCalibration {
            intrinsic: m3(&self.intrinsic),
            rotation: m3(&self.rotation),
            translation: self.translation.map(|v| v.cast::<U>()),
            image_size: self.image_size,
        }
    }
}

/// `A [R | t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMatrix<T> {
    pub p: Mat34<T>,
}

/// Ground-plane (z = 0) homography and its inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct Homography<T> {
    pub h: Mat3<T>,
    pub h_inv: Mat3<T>,
}

impl<T: Real> Homography<T> {
    /// Wraps an arbitrary invertible 3×3 matrix.
    pub fn from_matrix(h: Mat3<T>) -> Result<Self> {
        let d = linalg::det(&h);
        let h_inv = linalg::inverse(&h, T::lit(SINGULAR_TOL))
            .ok_or(Error::SingularHomography { det: d.as_f64() })?;
        Ok(Self { h, h_inv })
    }

    pub fn identity() -> Self {
        Self {
            h: linalg::identity(),
            h_inv: linalg::identity(),
        }
    }

    /// Multiplies `h` by `s` (and `h_inv` by `1/s`).
    pub fn scaled(&self, s: T) -> Self {
        Self {
            h: self.h.map(|row| row.map(|v| v * s)),
            h_inv: self.h_inv.map(|row| row.map(|v| v / s)),
        }
    }
}

pub fn projection_matrix<T: Real>(c: &CameraCalibration<T>) -> ProjectionMatrix<T> {
    let mut rt = [[T::zero(); 4]; 3];
    for i in 0..3 {
        rt[i][..3].copy_from_slice(&c.rotation[i]);
        rt[i][3] = c.translation[i];
    }
    let a = &c.intrinsic;
    let mut p = [[T::zero(); 4]; 3];
    for i in 0..3 {
        for j in 0..4 {
            p[i][j] = (0..3).map(|k| a[i][k] * rt[k][j]).sum();
        }
    }
    ProjectionMatrix { p }
}

/// Keeps columns 1, 2 and 4 of the projection matrix.
pub fn ground_homography<T: Real>(pm: &ProjectionMatrix<T>) -> Result<Homography<T>> {
    let p = &pm.p;
    let h = [
        [p[0][0], p[0][1], p[0][3]],
        [p[1][0], p[1][1], p[1][3]],
        [p[2][0], p[2][1], p[2][3]],
    ];
    Homography::from_matrix(h)
}

#[inline]
fn dehomogenize<T: Real>(q: Vec3<T>) -> Option<[T; 2]> {
    if q[2] > T::lit(DEPTH_EPS) {
        Some([q[0] / q[2], q[1] / q[2]])
    } else {
        None
    }
}

/// Homogeneous projection `P (x, y, z, 1)`.
pub fn project_homogeneous<T: Real>(pm: &ProjectionMatrix<T>, x: &Vec3<T>) -> Vec3<T> {
    let p = &pm.p;
    let row = |i: usize| p[i][0] * x[0] + p[i][1] * x[1] + p[i][2] * x[2] + p[i][3];
    [row(0), row(1), row(2)]
}

/// Pixel coordinates of a world point; `None` when it is behind the camera.
pub fn world_to_image<T: Real>(pm: &ProjectionMatrix<T>, x: &Vec3<T>) -> Option<[T; 2]> {
    dehomogenize(project_homogeneous(pm, x))
}

/// Pixel coordinates of a ground point; `None` when it is behind the camera.
pub fn ground_to_image<T: Real>(h: &Homography<T>, x: &[T; 2]) -> Option<[T; 2]> {
    dehomogenize(linalg::mat_vec(&h.h, &[x[0], x[1], T::one()]))
}

/// Back-projects a pixel onto the ground plane through `h_inv`.
///
/// Returns `None` when the pixel ray never meets the ground in front of the
/// camera (at or above the horizon).
pub fn image_to_ground<T: Real>(h: &Homography<T>, uv: &[T; 2]) -> Option<[T; 2]> {
    let q = linalg::mat_vec(&h.h_inv, &[uv[0], uv[1], T::one()]);
    // Sign of the back-projected scale mirrors the depth of the ground point.
    if q[2].abs() <= T::lit(DEPTH_EPS) {
        return None;
    }
    let g = [q[0] / q[2], q[1] / q[2]];
    ground_to_image(h, &g).map(|_| g)
}

#[derive(Serialize, Deserialize)]
struct CalibrationRecord {
    intrinsic: [[f64; 3]; 3],
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    image_size: [usize; 2],
}

impl From<&CameraCalibration<f64>> for CalibrationRecord {
    fn from(c: &CameraCalibration<f64>) -> Self {
        Self {
            intrinsic: c.intrinsic,
            rotation: c.rotation,
            translation: c.translation,
            image_size: [c.image_size.0, c.image_size.1],
        }
    }
}

impl TryFrom<CalibrationRecord> for CameraCalibration<f64> {
    type Error = Error;

    fn try_from(r: CalibrationRecord) -> Result<Self> {
        CameraCalibration::new(
            r.intrinsic,
            r.rotation,
            r.translation,
            (r.image_size[0], r.image_size[1]),
        )
    }
}

pub fn calibration_to_json(c: &CameraCalibration<f64>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&CalibrationRecord::from(c))?)
}

pub fn calibration_from_json(text: &str) -> Result<CameraCalibration<f64>> {
    let rec: CalibrationRecord = serde_json::from_str(text)?;
    rec.try_into()
}

pub fn load_calibration(path: impl AsRef<Path>) -> Result<CameraCalibration<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    calibration_from_json(&text)
}

pub fn save_calibration(path: impl AsRef<Path>, c: &CameraCalibration<f64>) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), calibration_to_json(c)?.as_bytes())
}

/// Rig file: JSON array, camera index = array position.
pub fn rig_from_json(text: &str) -> Result<Vec<CameraCalibration<f64>>> {
    let recs: Vec<CalibrationRecord> = serde_json::from_str(text)?;
    recs.into_iter().map(TryInto::try_into).collect()
}

pub fn rig_to_json(rig: &[CameraCalibration<f64>]) -> Result<String> {
    let recs: Vec<CalibrationRecord> = rig.iter().map(Into::into).collect();
    Ok(serde_json::to_string_pretty(&recs)?)
}

pub fn load_rig(path: impl AsRef<Path>) -> Result<Vec<CameraCalibration<f64>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    rig_from_json(&text)
}

pub fn save_rig(path: impl AsRef<Path>, rig: &[CameraCalibration<f64>]) -> Result<()> {
    crate::io::write_atomic(path.as_ref(), rig_to_json(rig)?.as_bytes())
}

/// Camera at `eye` looking at `target` with world +z up.
///
/// The camera frame is x right, y down, z forward, so visible points have
/// positive depth.
pub fn look_at(
    eye: Vec3<f64>,
    target: Vec3<f64>,
    hfov_deg: f64,
    image_size: (usize, usize),
) -> Result<CameraCalibration<f64>> {
    let forward = linalg::normalize3(&linalg::sub3(&target, &eye));
    let up = [0.0, 0.0, 1.0];
    let right = linalg::normalize3(&linalg::cross(&forward, &up));
    let down = linalg::cross(&forward, &right);
    let rotation = [right, down, forward];
    let rc = linalg::mat_vec(&rotation, &eye);
    let translation = [-rc[0], -rc[1], -rc[2]];
    let (h, w) = image_size;
    let f = (w as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
    let intrinsic = [
        [f, 0.0, w as f64 / 2.0],
        [0.0, f, h as f64 / 2.0],
        [0.0, 0.0, 1.0],
    ];
    CameraCalibration::new(intrinsic, rotation, translation, image_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_calibration;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn overhead() -> ProjectionMatrix<f64> {
        let c = CameraCalibration::new(
            linalg::identity(),
            linalg::identity(),
            [0.0, 0.0, 5.0],
            (10, 10),
        )
        .unwrap();
        projection_matrix(&c)
    }

    #[test]
    fn identity_projection() {
        let pm = overhead();
        assert_eq!(
            pm.p,
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 5.0]
            ]
        );
    }

    #[test]
    fn projection_is_linear_in_intrinsic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_calibration(&mut rng);
        let mut c2 = c.clone();
        c2.intrinsic = c.intrinsic.map(|r| r.map(|v| 2.0 * v));
        let (p1, p2) = (projection_matrix(&c), projection_matrix(&c2));
        for i in 0..3 {
            for j in 0..4 {
                assert!((p2.p[i][j] - 2.0 * p1.p[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_matches_step_by_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_calibration(&mut rng);
        let pm = projection_matrix(&c);
        for _ in 0..10 {
            let x = [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(0.0..2.0),
            ];
            let cam = linalg::mat_vec(&c.rotation, &x);
            let cam = [
                cam[0] + c.translation[0],
                cam[1] + c.translation[1],
                cam[2] + c.translation[2],
            ];
            let want = linalg::mat_vec(&c.intrinsic, &cam);
            let got = project_homogeneous(&pm, &x);
            for k in 0..3 {
                assert!((want[k] - got[k]).abs() <= 1e-12 * want[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn ground_homography_drops_z_column() {
        let hg = ground_homography(&overhead()).unwrap();
        assert_eq!(hg.h, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 5.0]]);
        let uv = ground_to_image(&hg, &[2.0, 3.0]).unwrap();
        assert!((uv[0] - 0.4).abs() < 1e-15 && (uv[1] - 0.6).abs() < 1e-15);
        let uv = ground_to_image(&Homography::identity(), &[7.0, -1.0]).unwrap();
        assert_eq!(uv, [7.0, -1.0]);
    }

    #[test]
    fn overhead_pinhole_arithmetic() {
        let uv = world_to_image(&overhead(), &[2.0, 3.0, 0.0]).unwrap();
        assert!((uv[0] - 0.4).abs() < 1e-15 && (uv[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn negative_depth_is_flagged() {
        let c = CameraCalibration::new(
            linalg::identity(),
            linalg::identity(),
            [0.0, 0.0, -5.0],
            (10, 10),
        )
        .unwrap();
        assert!(world_to_image(&projection_matrix(&c), &[0.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn camera_on_ground_plane_is_singular() {
        // Camera centre at z = 0 looking horizontally: the plane z = 0 maps to a line.
        let c = look_at([0.0, -5.0, 0.0], [0.0, 0.0, 0.0], 60.0, (100, 100)).unwrap();
        let err = ground_homography(&projection_matrix(&c)).unwrap_err();
        assert!(matches!(err, Error::SingularHomography { .. }));
    }

    #[test]
    fn validation_rejects_reflection_and_singular_intrinsic() {
        let refl = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]];
        let err = CameraCalibration::new(linalg::identity(), refl, [0.0; 3], (4, 4)).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));

        let mut a = linalg::identity::<f64>();
        a[2][2] = 0.0;
        assert!(CameraCalibration::new(a, linalg::identity(), [0.0; 3], (4, 4)).is_err());

        let skewed = [[1.0, 1e-6, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraCalibration::new(linalg::identity(), skewed, [0.0; 3], (4, 4)).is_err());
        assert!(CameraCalibration::new(
            linalg::identity::<f64>(),
            linalg::identity(),
            [0.0; 3],
            (0, 4)
        )
        .is_err());
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_calibration(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam.json");
        save_calibration(&path, &c).unwrap();
        let back = load_calibration(&path).unwrap();
        assert_eq!(back, c);

        let rig = vec![c.clone(), random_calibration(&mut rng)];
        assert_eq!(rig_from_json(&rig_to_json(&rig).unwrap()).unwrap(), rig);
    }

    #[test]
    fn load_reports_parse_and_validation_errors() {
        let ok = r#"{"intrinsic":[[1,0,0],[0,1,0],[0,0,1]],"rotation":[[1,0,0],[0,1,0],[0,0,1]],"translation":[0,0,5],"image_size":[10,20]}"#;
        let c = calibration_from_json(ok).unwrap();
        assert_eq!(c.translation, [0.0, 0.0, 5.0]);
        assert_eq!(c.image_size, (10, 20));

        assert!(matches!(
            calibration_from_json("{\"intrinsic\": 3"),
            Err(Error::Json(_))
        ));
        let refl = ok.replace("[0,0,1]],\"translation", "[0,0,-1]],\"translation");
        assert!(matches!(
            calibration_from_json(&refl),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn look_at_points_the_optical_axis_at_the_target() {
        let c = look_at([10.0, 0.0, 3.0], [0.0, 0.0, 0.0], 60.0, (720, 1280)).unwrap();
        let uv = world_to_image(&projection_matrix(&c), &[0.0, 0.0, 0.0]).unwrap();
        assert!((uv[0] - 640.0).abs() < 1e-9 && (uv[1] - 360.0).abs() < 1e-9);
        let center = c.center();
        assert!((center[0] - 10.0).abs() < 1e-12 && (center[2] - 3.0).abs() < 1e-12);
    }
}
