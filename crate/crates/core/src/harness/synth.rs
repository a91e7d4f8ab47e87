//! Synthetic labeled point clouds built from analytic primitives.

use crate::cloud::PointCloud;
use crate::error::{EngineError, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Vec<usize>,
}

/// Surface primitive; scenes label each point with its primitive's class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Axis-aligned rectangle: `center`, half extents on the two free axes,
    /// `normal_axis` the constant axis.
    Plane {
        center: [f64; 3],
        half: [f64; 2],
        normal_axis: usize,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box surface.
    Cuboid {
        center: [f64; 3],
        half: [f64; 3],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Plane,
    Sphere,
    Cuboid,
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Plane { .. } => PrimitiveKind::Plane,
            Primitive::Sphere { .. } => PrimitiveKind::Sphere,
            Primitive::Cuboid { .. } => PrimitiveKind::Cuboid,
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Plane { half, .. } => 4.0 * half[0] * half[1],
            Primitive::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
            Primitive::Cuboid { half, .. } => 8.0 * (half[0] * half[1] + half[1] * half[2] + half[0] * half[2]),
        }
    }

    /// Uniform point on the surface.
    pub fn sample(&self, rng: &mut Rng) -> [f64; 3] {
        match *self {
            Primitive::Plane {
                center,
                half,
                normal_axis,
            } => {
                let mut p = center;
                let free = free_axes(normal_axis);
                p[free[0]] += rng.uniform_range(-half[0], half[0]);
                p[free[1]] += rng.uniform_range(-half[1], half[1]);
                p
            }
            Primitive::Sphere { center, radius } => {
                let (mut v, mut norm) = ([0.0; 3], 0.0);
                while norm < 1e-12 {
                    v = [rng.normal(), rng.normal(), rng.normal()];
                    norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                }
                [
                    center[0] + radius * v[0] / norm,
                    center[1] + radius * v[1] / norm,
                    center[2] + radius * v[2] / norm,
                ]
            }
            Primitive::Cuboid { center, half } => {
                // pick a face with probability proportional to its area
                let areas = [half[1] * half[2], half[0] * half[2], half[0] * half[1]];
                let total: f64 = areas.iter().sum();
                let mut u = rng.uniform() * total;
                let mut axis = 2;
                for (a, &area) in areas.iter().enumerate() {
                    if u < area {
                        axis = a;
                        break;
                    }
                    u -= area;
                }
                let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                let mut p = center;
                p[axis] += sign * half[axis];
                for f in free_axes(axis) {
                    p[f] += rng.uniform_range(-half[f], half[f]);
                }
                p
            }
        }
    }

    /// Euclidean distance from `p` to the surface.
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        match *self {
            Primitive::Plane {
                center,
                half,
                normal_axis,
            } => {
                let free = free_axes(normal_axis);
                let dn = p[normal_axis] - center[normal_axis];
                let d0 = ((p[free[0]] - center[free[0]]).abs() - half[0]).max(0.0);
                let d1 = ((p[free[1]] - center[free[1]]).abs() - half[1]).max(0.0);
                (dn * dn + d0 * d0 + d1 * d1).sqrt()
            }
            Primitive::Sphere { center, radius } => {
                let r = (0..3).map(|i| (p[i] - center[i]).powi(2)).sum::<f64>().sqrt();
                (r - radius).abs()
            }
            Primitive::Cuboid { center, half } => {
                let q: Vec<f64> = (0..3).map(|i| (p[i] - center[i]).abs() - half[i]).collect();
                let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                let inside = q.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(0.0);
                (outside + inside).abs()
            }
        }
    }
}

fn free_axes(axis: usize) -> [usize; 2] {
    match axis {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

/// A generated scene with the primitives that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub data: LabeledCloud,
    pub primitives: Vec<Primitive>,
    /// Generating primitive of each point.
    pub owner: Vec<usize>,
}

/// Scenes of 3 to 5 primitives on a `[-2, 2]^2` floor. Every class in
/// `classes` appears at least once and receives an equal share of the
/// points; the label of a point is the position of its primitive's kind in
/// `classes`. Planes are the floor first, then walls along the scene border;
/// spheres and boxes stand on the floor in separate cells of a 3x3 layout.
pub fn gen_synthetic_seg(
    n_points: usize,
    n_scenes: usize,
    classes: &[PrimitiveKind],
    rng: &mut Rng,
) -> Result<Vec<Scene>> {
    if n_scenes == 0 {
        return Err(EngineError::config("at least one scene is required"));
    }
    if classes.is_empty() || classes.len() > 3 {
        return Err(EngineError::config("between one and three primitive classes are supported"));
    }
    for (i, c) in classes.iter().enumerate() {
        if classes[..i].contains(c) {
            return Err(EngineError::config("primitive classes must be distinct"));
        }
    }
    if n_points < 5 * classes.len() {
        return Err(EngineError::config(format!("{n_points} points are too few for a scene")));
    }
    (0..n_scenes)
        .map(|s| gen_scene(n_points, classes, &mut rng.derive(s as u64)))
        .collect()
}

fn gen_scene(n_points: usize, classes: &[PrimitiveKind], rng: &mut Rng) -> Result<Scene> {
    let count = (3 + rng.below(3)).max(classes.len());
    let mut kinds: Vec<PrimitiveKind> = classes.to_vec();
    while kinds.len() < count {
        kinds.push(classes[rng.below(classes.len())]);
    }
    // cells of a 3x3 layout for free-standing objects
    let mut cells: Vec<usize> = (0..9).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.below(i + 1));
    }
    let mut cells = cells.into_iter();
    let mut planes = 0usize;
    let primitives: Vec<Primitive> = kinds
        .iter()
        .map(|kind| match kind {
            PrimitiveKind::Plane => {
                planes += 1;
                match planes {
                    1 => Primitive::Plane {
                        center: [0.0, 0.0, 0.0],
                        half: [2.0, 2.0],
                        normal_axis: 2,
                    },
                    wall => {
                        let axis = wall % 2;
                        let mut center = [0.0, 0.0, 0.75];
                        center[axis] = if wall % 4 < 2 { -2.0 } else { 2.0 };
                        Primitive::Plane {
                            center,
                            half: [2.0, 0.75],
                            normal_axis: axis,
                        }
                    }
                }
            }
            PrimitiveKind::Sphere | PrimitiveKind::Cuboid => {
                let cell = cells.next().expect("at most five primitives");
                let cx = -4.0 / 3.0 + (cell % 3) as f64 * 4.0 / 3.0 + rng.uniform_range(-0.1, 0.1);
                let cy = -4.0 / 3.0 + (cell / 3) as f64 * 4.0 / 3.0 + rng.uniform_range(-0.1, 0.1);
                if *kind == PrimitiveKind::Sphere {
                    let radius = rng.uniform_range(0.25, 0.4);
                    Primitive::Sphere {
                        center: [cx, cy, radius + 0.05],
                        radius,
                    }
                } else {
                    let half = [
                        rng.uniform_range(0.4, 0.55),
                        rng.uniform_range(0.4, 0.55),
                        rng.uniform_range(0.3, 0.6),
                    ];
                    Primitive::Cuboid {
                        center: [cx, cy, half[2] + 0.05],
                        half,
                    }
                }
            }
        })
        .collect();

    // equal share per class, split by surface area within the class
    let base = n_points / classes.len();
    let mut owner = Vec::with_capacity(n_points);
    for (class, kind) in classes.iter().enumerate() {
        let members: Vec<usize> = (0..primitives.len()).filter(|&p| primitives[p].kind() == *kind).collect();
        let share = base + usize::from(class < n_points % classes.len());
        let total: f64 = members.iter().map(|&p| primitives[p].area()).sum();
        let mut given = 0;
        for (m, &p) in members.iter().enumerate() {
            let take = if m + 1 == members.len() {
                share - given
            } else {
                ((share as f64 * primitives[p].area() / total).round() as usize).min(share - given)
            };
            given += take;
            owner.extend(std::iter::repeat_n(p, take));
        }
    }
    // interleave so file order carries no class information
    for i in (1..owner.len()).rev() {
        owner.swap(i, rng.below(i + 1));
    }
    let mut locations = Matrix::zeros(n_points, 3);
    let mut labels = Vec::with_capacity(n_points);
    for (i, &p) in owner.iter().enumerate() {
        locations.row_mut(i).copy_from_slice(&primitives[p].sample(rng));
        labels.push(classes.iter().position(|&k| k == primitives[p].kind()).unwrap());
    }
    let cloud = PointCloud::new(locations, Matrix::filled(n_points, 1, 1.0))?;
    Ok(Scene {
        data: LabeledCloud { cloud, labels },
        primitives,
        owner,
    })
}

/// Class 0: points on a sphere; class 1: points on a cube surface. Sizes,
/// positions and the cube's aspect vary per sample.
pub fn gen_two_class_clouds(n_points: usize, n_samples: usize, rng: &mut Rng) -> Result<Vec<LabeledCloud>> {
    if n_samples == 0 || n_points == 0 {
        return Err(EngineError::config("need at least one sample of at least one point"));
    }
    (0..n_samples)
        .map(|s| {
            let mut r = rng.derive(s as u64);
            let class = s % 2;
            let center = [r.uniform_range(-0.2, 0.2), r.uniform_range(-0.2, 0.2), r.uniform_range(-0.2, 0.2)];
            let scale = r.uniform_range(0.7, 1.3);
            let prim = if class == 0 {
                Primitive::Sphere { center, radius: scale }
            } else {
                Primitive::Cuboid {
                    center,
                    half: [scale, scale * r.uniform_range(0.8, 1.2), scale * r.uniform_range(0.8, 1.2)],
                }
            };
            let mut locations = Matrix::zeros(n_points, 3);
            for i in 0..n_points {
                locations.row_mut(i).copy_from_slice(&prim.sample(&mut r));
            }
            Ok(LabeledCloud {
                cloud: PointCloud::new(locations, Matrix::filled(n_points, 1, 1.0))?,
                labels: vec![class],
            })
        })
        .collect()
}

/// Chair-like shape with strongly varying density: a dense seat, a medium
/// back rest and four sparse legs.
pub fn chair_like(n_points: usize, rng: &mut Rng) -> Result<PointCloud> {
    let parts = [
        // (primitive, share of points)
        (
            Primitive::Cuboid {
                center: [0.0, 0.0, 0.5],
                half: [0.5, 0.5, 0.04],
            },
            0.6,
        ),
        (
            Primitive::Plane {
                center: [0.0, -0.5, 1.0],
                half: [0.5, 0.5],
                normal_axis: 1,
            },
            0.25,
        ),
    ];
    let legs: Vec<Primitive> = [(-0.45, -0.45), (0.45, -0.45), (-0.45, 0.45), (0.45, 0.45)]
        .iter()
        .map(|&(x, y)| Primitive::Cuboid {
            center: [x, y, 0.23],
            half: [0.03, 0.03, 0.23],
        })
        .collect();
    let mut locations = Matrix::zeros(n_points, 3);
    let seat = (n_points as f64 * parts[0].1) as usize;
    let back = (n_points as f64 * parts[1].1) as usize;
    for i in 0..n_points {
        let p = if i < seat {
            parts[0].0.sample(rng)
        } else if i < seat + back {
            parts[1].0.sample(rng)
        } else {
            legs[i % 4].sample(rng)
        };
        locations.row_mut(i).copy_from_slice(&p);
    }
    PointCloud::new(locations, Matrix::filled(n_points, 1, 1.0))
}

/// Centers the locations and scales them to unit RMS radius.
pub fn normalize_locations(cloud: &PointCloud) -> PointCloud {
    let (n, d) = cloud.locations.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(cloud.locations.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut locations = cloud.locations.clone();
    let mut sq = 0.0;
    for i in 0..n {
        for (v, m) in locations.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
            sq += *v * *v;
        }
    }
    let rms = (sq / n as f64).sqrt();
    if rms > 0.0 {
        locations.scale(1.0 / rms);
    }
    PointCloud {
        locations,
        features: cloud.features.clone(),
    }
}
