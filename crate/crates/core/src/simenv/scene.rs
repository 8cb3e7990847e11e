/// Spring constant for fingertip penetration, N/m.
pub const CONTACT_STIFFNESS: f64 = 100.0;
/// Contact is reported when any fingertip force exceeds this, N.
pub const CONTACT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Disc {
    pub fn distance_to_center(&self, p: [f64; 2]) -> f64 {
        ((p[0] - self.center[0]).powi(2) + (p[1] - self.center[1]).powi(2)).sqrt()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.distance_to_center(p) <= self.radius
    }
}

/// Axis-aligned table region seen by the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.min[0]..=self.max[0]).contains(&p[0]) && (self.min[1]..=self.max[1]).contains(&p[1])
    }
}

/// Kinematic tabletop: one graspable disc and a bowl.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub object: Disc,
    pub bowl: Disc,
    pub table: Bounds,
    /// Object offset from the end effector while grasped.
    pub grasp_offset: Option<[f64; 2]>,
}

impl Scene {
    pub fn is_attached(&self) -> bool {
        self.grasp_offset.is_some()
    }

    /// Object center within the bowl radius (boundary inclusive) and released.
    pub fn is_success(&self) -> bool {
        !self.is_attached() && self.bowl.contains(self.object.center)
    }
}

/// Per-fingertip penetration forces against the object and the contact bit.
///
/// Forces are rounded to `f32` so the recorded observation and this bit agree.
pub fn detect_contact_and_force(tips: &[[f64; 2]], object: &Disc) -> (bool, Vec<f64>, f64) {
    let mut max_pen: f64 = 0.0;
    let forces: Vec<f64> = tips
        .iter()
        .map(|&tip| {
            let pen = (object.radius - object.distance_to_center(tip)).max(0.0);
            max_pen = max_pen.max(pen);
            (CONTACT_STIFFNESS * pen) as f32 as f64
        })
        .collect();
    let contact = forces.iter().any(|&f| f > CONTACT_THRESHOLD);
    (contact, forces, max_pen)
}
