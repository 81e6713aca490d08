//! Minimal 3D vector/rotation helpers used by the body model, cloth
//! surrogate and renderer. Kept as free functions over `[f64; 3]` — the
//! handful of operations needed here does not justify a linear-algebra
//! dependency.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n == 0.0 {
        [0.0, 0.0, 0.0]
    } else {
        scale(a, 1.0 / n)
    }
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_apply(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[j][i];
        }
    }
    out
}

/// Rotation from Euler angles (rx, ry, rz), applied as Rz · Ry · Rx.
pub fn euler_to_mat(angles: [f64; 3]) -> Mat3 {
    let (sx, cx) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sz, cz) = angles[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

/// Rigid transform: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy)]
pub struct RigidTransform {
    pub r: Mat3,
    pub t: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        t: [0.0, 0.0, 0.0],
    };

    pub fn new(r: Mat3, t: Vec3) -> Self {
        RigidTransform { r, t }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add(mat_apply(&self.r, p), self.t)
    }

    /// Rotates a direction without translating it.
    pub fn apply_dir(&self, d: Vec3) -> Vec3 {
        mat_apply(&self.r, d)
    }

    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            r: mat_mul(&self.r, &inner.r),
            t: self.apply(inner.t),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = mat_transpose(&self.r);
        RigidTransform {
            r: rt,
            t: scale(mat_apply(&rt, self.t), -1.0),
        }
    }
}

/// Closest point on segment [a, b] to `p`.
pub fn closest_on_segment(p: Vec3, a: Vec3, b: Vec3) -> Vec3 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return a;
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    add(a, scale(ab, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euler_z_swings_down_vector_forward() {
        // A limb hanging along -y rotated by +rz should move toward +x.
        let r = euler_to_mat([0.0, 0.0, 0.4]);
        let v = mat_apply(&r, [0.0, -1.0, 0.0]);
        assert!(v[0] > 0.0);
        assert!((norm(v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_inverse_round_trips() {
        let t = RigidTransform::new(euler_to_mat([0.3, -0.8, 1.2]), [4.0, -2.0, 0.5]);
        let p = [0.2, 1.4, -3.0];
        let q = t.inverse().apply(t.apply(p));
        for i in 0..3 {
            assert!((q[i] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_projection_clamps_to_ends() {
        let a = [0.0, 0.0, 0.0];
        let b = [1.0, 0.0, 0.0];
        assert_eq!(closest_on_segment([-1.0, 2.0, 0.0], a, b), a);
        assert_eq!(closest_on_segment([2.0, 2.0, 0.0], a, b), b);
        assert_eq!(closest_on_segment([0.5, 2.0, 0.0], a, b), [0.5, 0.0, 0.0]);
    }
}
