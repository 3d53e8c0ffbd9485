//! Small geometric helpers shared by rendering and the analytic backward pass.

use nalgebra::{Matrix3, Rotation3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rotation matrix of a unit quaternion stored as `(w, x, y, z)`.
pub fn quat_to_rotation(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pull a rotation-matrix gradient back onto the (unit) quaternion entries.
pub fn quat_to_rotation_backward(q: [f64; 4], d_rot: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |r: usize, c: usize| d_rot[(r, c)];
    let dw =
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1))
        - 4.0 * x * (g(1, 1) + g(2, 2));
    let dy = 2.0
        * (x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1))
        - 4.0 * y * (g(0, 0) + g(2, 2));
    let dz = 2.0
        * (-w * g(0, 1) + x * g(0, 2) + w * g(1, 0) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1))
        - 4.0 * z * (g(0, 0) + g(1, 1));
    [dw, dx, dy, dz]
}

pub fn quat_norm(q: [f64; 4]) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `q / |q|`; the caller guarantees a nonzero norm.
pub fn quat_normalize(q: [f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Gradient of `q / |q|` with respect to the unnormalized `q`.
pub fn quat_normalize_backward(q: [f64; 4], d_unit: [f64; 4]) -> [f64; 4] {
    let n = quat_norm(q);
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let dot: f64 = (0..4).map(|k| u[k] * d_unit[k]).sum();
    [
        (d_unit[0] - u[0] * dot) / n,
        (d_unit[1] - u[1] * dot) / n,
        (d_unit[2] - u[2] * dot) / n,
        (d_unit[3] - u[3] * dot) / n,
    ]
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(scale)`.
pub fn covariance(rotation: &Mat3, scale: &Vec3) -> Mat3 {
    let m = rotation * Mat3::from_diagonal(scale);
    m * m.transpose()
}

/// Backward of [`covariance`]. `d_cov` is the full symmetric gradient matrix
/// (`dL = tr(d_covᵀ dΣ)`). Returns `(d_rotation, d_scale)`.
pub fn covariance_backward(rotation: &Mat3, scale: &Vec3, d_cov: &Mat3) -> (Mat3, Vec3) {
    let m = rotation * Mat3::from_diagonal(scale);
    let sym = 0.5 * (d_cov + d_cov.transpose());
    let d_m = 2.0 * sym * m;
    let d_rot = d_m * Mat3::from_diagonal(scale);
    let rt_dm = rotation.transpose() * d_m;
    (
        d_rot,
        Vec3::new(rt_dm[(0, 0)], rt_dm[(1, 1)], rt_dm[(2, 2)]),
    )
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Axis-angle vector (log map) of a rotation matrix.
pub fn rotation_log(r: &Mat3) -> Vec3 {
    // sin(θ)·axis from the antisymmetric part keeps full precision for small angles.
    let s = 0.5
        * Vec3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
    let c = 0.5 * (r.trace() - 1.0);
    if c < -0.9 {
        return Rotation3::from_matrix_unchecked(*r).scaled_axis();
    }
    let sin = s.norm();
    let theta = sin.atan2(c);
    if sin < 1e-300 {
        return s;
    }
    s * (theta / sin)
}

/// Rotation matrix of an axis-angle vector (exp map).
pub fn rotation_exp(w: &Vec3) -> Mat3 {
    Rotation3::from_scaled_axis(*w).into_inner()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Neumaier compensated sum. Loss reductions use it so that the value's
/// rounding noise stays well below what central differences can resolve.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
