//! Minimal 3D vector / ray / primitive intersection kit for the ray caster
//! and the volume renderer. Everything is f32 and allocation-free.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

pub const fn v3(x: f32, y: f32, z: f32) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub fn from_array(a: [f32; 3]) -> Self {
        v3(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f32; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f32 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        v3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f32 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        v3(self.x / n, self.y / n, self.z / n)
    }

    pub fn scale(self, s: f32) -> Vec3 {
        v3(self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        v3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        v3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

/// A ray with a clipped parametric range. `dir` is unit length.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f32,
    pub t_far: f32,
}

impl Ray {
    pub fn at(&self, t: f32) -> Vec3 {
        self.origin + self.dir.scale(t)
    }
}

/// Axis-aligned box, used both as a scene primitive and as world bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Aabb {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

impl Aabb {
    pub fn from_center_half(center: Vec3, half: Vec3) -> Self {
        Aabb {
            min: (center - half).to_array(),
            max: (center + half).to_array(),
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let p = p.to_array();
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Slab test. Returns the entry/exit parameters along `origin + t*dir`,
    /// unclipped against the ray's own range.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f32, f32)> {
        let o = origin.to_array();
        let d = dir.to_array();
        let mut t0 = f32::NEG_INFINITY;
        let mut t1 = f32::INFINITY;
        for i in 0..3 {
            if d[i].abs() < 1e-12 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return None;
                }
            } else {
                let inv = 1.0 / d[i];
                let (mut a, mut b) = ((self.min[i] - o[i]) * inv, (self.max[i] - o[i]) * inv);
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }

    /// Outward normal of the face closest to a surface point `p`.
    pub fn normal_at(&self, p: Vec3) -> Vec3 {
        let pa = p.to_array();
        let mut best = (f32::INFINITY, v3(1.0, 0.0, 0.0));
        for i in 0..3 {
            let mut n_lo = [0.0f32; 3];
            n_lo[i] = -1.0;
            let mut n_hi = [0.0f32; 3];
            n_hi[i] = 1.0;
            let d_lo = (pa[i] - self.min[i]).abs();
            let d_hi = (pa[i] - self.max[i]).abs();
            if d_lo < best.0 {
                best = (d_lo, Vec3::from_array(n_lo));
            }
            if d_hi < best.0 {
                best = (d_hi, Vec3::from_array(n_hi));
            }
        }
        best.1
    }
}

/// Hit record from a primitive intersection test.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub t: f32,
    pub normal: Vec3,
}

/// Finite vertical cylinder (axis +z) centered at `center`, with caps.
pub fn intersect_cylinder(
    origin: Vec3,
    dir: Vec3,
    center: Vec3,
    radius: f32,
    height: f32,
) -> Option<Hit> {
    let z_lo = center.z - height / 2.0;
    let z_hi = center.z + height / 2.0;
    let ox = origin.x - center.x;
    let oy = origin.y - center.y;
    let mut best: Option<Hit> = None;
    let mut consider = |t: f32, normal: Vec3| {
        if t > 1e-4 && best.map_or(true, |h| t < h.t) {
            best = Some(Hit { t, normal });
        }
    };

    // lateral surface
    let a = dir.x * dir.x + dir.y * dir.y;
    if a > 1e-12 {
        let b = 2.0 * (ox * dir.x + oy * dir.y);
        let c = ox * ox + oy * oy - radius * radius;
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                let p = origin + dir.scale(t);
                if p.z >= z_lo && p.z <= z_hi {
                    let n = v3(p.x - center.x, p.y - center.y, 0.0).normalized();
                    consider(t, n);
                }
            }
        }
    }

    // caps
    if dir.z.abs() > 1e-12 {
        for (z, n) in [(z_lo, v3(0.0, 0.0, -1.0)), (z_hi, v3(0.0, 0.0, 1.0))] {
            let t = (z - origin.z) / dir.z;
            let p = origin + dir.scale(t);
            let dx = p.x - center.x;
            let dy = p.y - center.y;
            if dx * dx + dy * dy <= radius * radius {
                consider(t, n);
            }
        }
    }

    best
}

pub fn intersect_box(origin: Vec3, dir: Vec3, aabb: &Aabb) -> Option<Hit> {
    let (t0, t1) = aabb.intersect(origin, dir)?;
    let t = if t0 > 1e-4 {
        t0
    } else if t1 > 1e-4 {
        t1
    } else {
        return None;
    };
    let p = origin + dir.scale(t);
    Some(Hit {
        t,
        normal: aabb.normal_at(p),
    })
}
