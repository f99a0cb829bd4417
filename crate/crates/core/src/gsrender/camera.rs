use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("invalid camera: {0}")]
    Invalid(String),
    #[error("camera rig line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Pinhole camera. Camera frame looks along +z with x right and y down; a
/// camera-frame point `(x, y, z)` lands on pixel `(fx*x/z + cx, fy*y/z + cy)`,
/// and integer pixel coordinates are the sample positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: UnitQuaternion<f64>,
    /// World-to-camera translation: `p_cam = R * p_world + t`.
    pub translation: Vector3<f64>,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: UnitQuaternion<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(CameraError::Invalid(format!("focal lengths ({fx}, {fy}) must be > 0")));
        }
        if !(cx.is_finite() && cy.is_finite()) || translation.iter().any(|v| !v.is_finite()) {
            return Err(CameraError::Invalid("principal point and translation must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(CameraError::Invalid(format!("resolution {width}x{height} must be >= 1x1")));
        }
        Ok(Self { name: name.into(), fx, fy, cx, cy, width, height, rotation, translation })
    }

    /// Camera at `eye` looking at `target`, with `up` roughly opposing image y.
    pub fn look_at(
        name: impl Into<String>,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| CameraError::Invalid("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| CameraError::Invalid("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let m = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        let t = -(rot * eye);
        Self::new(name, fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height, rot, t)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    /// Pixel coordinates of a camera-frame point (no near-plane test).
    pub fn project(&self, p_cam: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p_cam.x / p_cam.z + self.cx, self.fy * p_cam.y / p_cam.z + self.cy)
    }

    /// Camera-frame point at depth `z` behind pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Optical center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        self.camera_to_world(&Vector3::zeros())
    }

    /// One rig line: `name fx fy cx cy width height qw qx qy qz tx ty tz`.
    pub fn to_rig_line(&self) -> String {
        let q = self.rotation.quaternion();
        format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            self.name, self.fx, self.fy, self.cx, self.cy, self.width, self.height, q.w, q.i, q.j, q.k,
            self.translation.x, self.translation.y, self.translation.z
        )
    }
}

/// Parse a camera rig: one camera per line, `#` comments and blank lines ignored.
pub fn parse_camera_rig(text: &str) -> Result<Vec<Camera>, CameraError> {
    let mut cams = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| CameraError::Parse { line: line_no, reason };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 14 {
            return Err(err(format!("expected 14 fields, found {}", fields.len())));
        }
        let num = |i: usize, what: &str| -> Result<f64, CameraError> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| err(format!("field `{what}` is not a number: {:?}", fields[i])))
        };
        let int = |i: usize, what: &str| -> Result<usize, CameraError> {
            fields[i]
                .parse::<usize>()
                .map_err(|_| err(format!("field `{what}` is not an integer: {:?}", fields[i])))
        };
        let q = Quaternion::new(num(7, "qw")?, num(8, "qx")?, num(9, "qy")?, num(10, "qz")?);
        let norm = q.norm();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(err(format!("quaternion norm {norm} is not 1")));
        }
        let cam = Camera::new(
            fields[0],
            num(1, "fx")?,
            num(2, "fy")?,
            num(3, "cx")?,
            num(4, "cy")?,
            int(5, "width")?,
            int(6, "height")?,
            UnitQuaternion::from_quaternion(q),
            Vector3::new(num(11, "tx")?, num(12, "ty")?, num(13, "tz")?),
        )
        .map_err(|e| err(e.to_string()))?;
        cams.push(cam);
    }
    Ok(cams)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_puts_target_on_axis() {
        let cam = Camera::look_at(
            "front",
            Vector3::new(0.0, 0.0, 1.5),
            Vector3::new(10.0, 0.0, 1.5),
            Vector3::z(),
            100.0,
            100.0,
            64,
            48,
        )
        .unwrap();
        let p = cam.world_to_camera(&Vector3::new(10.0, 0.0, 1.5));
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.z - 10.0).abs() < 1e-12);
        // world left (+y) is image left (-x), world up (+z) is image up (-y)
        let left = cam.world_to_camera(&Vector3::new(10.0, 1.0, 1.5));
        assert!(left.x < 0.0);
        let up = cam.world_to_camera(&Vector3::new(10.0, 0.0, 2.5));
        assert!(up.y < 0.0);
        let back = cam.camera_to_world(&p);
        assert!((back - Vector3::new(10.0, 0.0, 1.5)).norm() < 1e-12);
    }

    #[test]
    fn rig_parsing() {
        let text = "# name fx fy cx cy w h qw qx qy qz tx ty tz\n\
                    cam0 100 100 32 24 64 48 1 0 0 0 0 0 0\n\n\
                    cam1 120 110 30 20 60 40 0.7071068 0 0 0.7071068 1 2 3\n";
        let cams = parse_camera_rig(text).unwrap();
        assert_eq!(cams.len(), 2);
        assert_eq!(cams[1].name, "cam1");
        assert_eq!(cams[1].width, 60);
        assert!((cams[1].translation - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        let back = parse_camera_rig(&cams[1].to_rig_line()).unwrap();
        assert_eq!(back[0].width, 60);

        assert!(matches!(parse_camera_rig("cam 1 2 3"), Err(CameraError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_camera_rig("c 100 100 32 24 64 48 2 0 0 0 0 0 0"),
            Err(CameraError::Parse { .. })
        ));
        assert!(matches!(
            parse_camera_rig("c -1 100 32 24 64 48 1 0 0 0 0 0 0"),
            Err(CameraError::Parse { .. })
        ));
    }
}
