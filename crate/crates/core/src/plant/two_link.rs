use super::PlantModel;

/// Planar two-link arm with point masses at the link ends, moving in a vertical plane.
///
/// Joint angles are measured from the hanging configuration; the second angle is relative to
/// the first link. State order is `(q1, q2, q1', q2')`. `friction` is a viscous joint
/// coefficient in N*m*s/rad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLinkArm {
    pub l1: f64,
    pub l2: f64,
    pub m1: f64,
    pub m2: f64,
    pub g: f64,
    pub friction: f64,
}

impl Default for TwoLinkArm {
    fn default() -> Self {
        TwoLinkArm {
            l1: 0.8,
            l2: 0.7,
            m1: 2.5,
            m2: 2.0,
            g: 9.81,
            friction: 0.0,
        }
    }
}

impl TwoLinkArm {
    pub fn mass_matrix(&self, q2: f64) -> [[f64; 2]; 2] {
        let c2 = q2.cos();
        let off = self.m2 * self.l2 * self.l2 + self.m2 * self.l1 * self.l2 * c2;
        [
            [
                (self.m1 + self.m2) * self.l1 * self.l1 + self.m2 * self.l2 * self.l2 + 2.0 * self.m2 * self.l1 * self.l2 * c2,
                off,
            ],
            [off, self.m2 * self.l2 * self.l2],
        ]
    }

    /// Joint torques that hold the arm still at angles `q`.
    pub fn gravity_torque(&self, q: [f64; 2]) -> [f64; 2] {
        let s12 = (q[0] + q[1]).sin();
        [
            self.g * ((self.m1 + self.m2) * self.l1 * q[0].sin() + self.m2 * self.l2 * s12),
            self.g * self.m2 * self.l2 * s12,
        ]
    }

    /// Kinetic plus potential energy, potential zero at the pivot height.
    pub fn energy(&self, z: &[f64]) -> f64 {
        let m = self.mass_matrix(z[1]);
        let (w1, w2) = (z[2], z[3]);
        let kinetic = 0.5 * (m[0][0] * w1 * w1 + 2.0 * m[0][1] * w1 * w2 + m[1][1] * w2 * w2);
        let potential = -self.g * ((self.m1 + self.m2) * self.l1 * z[0].cos() + self.m2 * self.l2 * (z[0] + z[1]).cos());
        kinetic + potential
    }
}

pub fn two_link_dynamics(z: [f64; 4], u: [f64; 2], params: &TwoLinkArm) -> [f64; 4] {
    let [q1, q2, w1, w2] = z;
    let m = params.mass_matrix(q2);
    let h = params.m2 * params.l1 * params.l2 * q2.sin();
    let coriolis = [-h * (2.0 * w1 * w2 + w2 * w2), h * w1 * w1];
    let gravity = params.gravity_torque([q1, q2]);
    let rhs = [
        u[0] - coriolis[0] - gravity[0] - params.friction * w1,
        u[1] - coriolis[1] - gravity[1] - params.friction * w2,
    ];
    // The mass matrix is positive definite for positive masses and lengths.
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let a1 = (m[1][1] * rhs[0] - m[0][1] * rhs[1]) / det;
    let a2 = (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det;
    [w1, w2, a1, a2]
}

impl PlantModel for TwoLinkArm {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn derivative(&self, x: &[f64], u: &[f64], _t: f64, dx: &mut [f64]) {
        let d = two_link_dynamics([x[0], x[1], x[2], x[3]], [u[0], u[1]], self);
        dx.copy_from_slice(&d);
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("l1", self.l1),
            ("l2", self.l2),
            ("m1", self.m1),
            ("m2", self.m2),
            ("g", self.g),
            ("friction", self.friction),
        ]
    }
}
