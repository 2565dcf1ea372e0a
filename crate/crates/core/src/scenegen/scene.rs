use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::texture::Texture;
use crate::error::{Error, Result};
use crate::geometry::{Camera, Image};

/// Surface of constant world `z = depth`, optionally bounded to a rectangle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub depth: f64,
    #[serde(default)]
    pub center: [f64; 2],
    /// Full width and height; unbounded when absent.
    #[serde(default)]
    pub size: Option<[f64; 2]>,
    pub texture: Texture,
}

/// Axis-aligned box; faces are textured with their two in-face coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub texture: Texture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridInputs {
    /// Four corner views with the four side pairs.
    Corners,
    /// Corners plus the four edge midpoints, adding the two central cross pairs.
    CornersAndMidpoints,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RigLayout {
    /// `count` cameras along +x, `baseline` apart; the middle one is the target.
    Line { count: usize, baseline: f64 },
    /// `size x size` grid in the xy-plane, `spacing` apart; the target sits at
    /// fractional grid coordinates `target`.
    Grid {
        size: usize,
        spacing: f64,
        inputs: GridInputs,
        target: [f64; 2],
    },
    /// Explicit camera centers; `edges` index into the non-target cameras.
    List {
        centers: Vec<[f64; 3]>,
        target: usize,
        edges: Vec<[usize; 2]>,
    },
}

/// Pinhole rig of identical fronto-parallel cameras looking along +z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    #[serde(default)]
    pub origin: [f64; 3],
    pub layout: RigLayout,
}

/// Cameras of a rig split into target and inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RigCameras {
    pub target: Camera,
    pub inputs: Vec<Camera>,
    pub edges: Vec<(usize, usize)>,
    pub kind: String,
}

impl RigSpec {
    fn camera(&self, offset: [f64; 3]) -> Result<Camera> {
        let c = Vector3::new(
            self.origin[0] + offset[0],
            self.origin[1] + offset[1],
            self.origin[2] + offset[2],
        );
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        Camera::axis_aligned(self.width, self.height, self.focal, self.focal, cx, cy, c)
    }

    pub fn build(&self) -> Result<RigCameras> {
        match &self.layout {
            RigLayout::Line { count, baseline } => {
                if count % 2 == 0 || *count < 3 {
                    return Err(Error::Config(format!("line rig needs an odd count of at least 3, got {count}")));
                }
                let mid = count / 2;
                let pos = |i: usize| [(i as f64 - mid as f64) * baseline, 0.0, 0.0];
                let inputs = (0..*count)
                    .filter(|&i| i != mid)
                    .map(|i| self.camera(pos(i)))
                    .collect::<Result<Vec<_>>>()?;
                let edges = (0..inputs.len() - 1).map(|i| (i, i + 1)).collect();
                Ok(RigCameras {
                    target: self.camera(pos(mid))?,
                    inputs,
                    edges,
                    kind: "line".into(),
                })
            }
            RigLayout::Grid {
                size,
                spacing,
                inputs,
                target,
            } => {
                if *size < 2 {
                    return Err(Error::Config(format!("grid rig needs size >= 2, got {size}")));
                }
                let last = (*size - 1) as f64;
                let half = last / 2.0;
                let pos = |gx: f64, gy: f64| [(gx - half) * spacing, (gy - half) * spacing, 0.0];
                let mut coords = vec![(0.0, 0.0), (last, 0.0), (0.0, last), (last, last)];
                let mut edges = vec![(0, 1), (2, 3), (0, 2), (1, 3)];
                if *inputs == GridInputs::CornersAndMidpoints {
                    coords.extend([(half, 0.0), (0.0, half), (last, half), (half, last)]);
                    edges.extend([(4, 7), (5, 6)]);
                }
                Ok(RigCameras {
                    target: self.camera(pos(target[0], target[1]))?,
                    inputs: coords
                        .iter()
                        .map(|&(gx, gy)| self.camera(pos(gx, gy)))
                        .collect::<Result<_>>()?,
                    edges,
                    kind: "grid".into(),
                })
            }
            RigLayout::List { centers, target, edges } => {
                if *target >= centers.len() || centers.len() < 3 {
                    return Err(Error::Config(format!(
                        "list rig needs >= 3 cameras and a target index below {}",
                        centers.len()
                    )));
                }
                let inputs: Vec<Camera> = centers
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i != target)
                    .map(|(_, c)| self.camera(*c))
                    .collect::<Result<_>>()?;
                if let Some(e) = edges.iter().find(|e| e[0] >= inputs.len() || e[1] >= inputs.len() || e[0] == e[1]) {
                    return Err(Error::Config(format!("edge {e:?} does not join two distinct inputs")));
                }
                Ok(RigCameras {
                    target: self.camera(centers[*target])?,
                    inputs,
                    edges: edges.iter().map(|e| (e[0], e[1])).collect(),
                    kind: "list".into(),
                })
            }
        }
    }
}

/// Scene description; also the on-disk TOML grammar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub depth_range: [f64; 2],
    #[serde(default)]
    pub planes: Vec<PlaneSpec>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    pub rig: RigSpec,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.depth_range;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::InvalidRange { dmin: lo, dmax: hi });
        }
        let inside = |z: f64| z >= lo && z <= hi;
        if let Some(p) = self.planes.iter().find(|p| !inside(p.depth)) {
            return Err(Error::Config(format!("plane depth {} outside [{lo}, {hi}]", p.depth)));
        }
        if let Some(b) = self.boxes.iter().find(|b| !inside(b.min[2]) || !inside(b.max[2])) {
            return Err(Error::Config(format!("box z-extent {:?}..{:?} outside [{lo}, {hi}]", b.min, b.max)));
        }
        if let Some(b) = self.boxes.iter().find(|b| (0..3).any(|i| b.min[i] >= b.max[i])) {
            return Err(Error::Config(format!("box min {:?} not below max {:?}", b.min, b.max)));
        }
        if !(self.rig.focal > 0.0) || self.rig.width == 0 || self.rig.height == 0 {
            return Err(Error::Config("rig needs positive focal length and image size".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, source_name: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| {
            let offset = e.span().map_or(0, |s| s.start as u64);
            Error::parse(source_name, offset, e.message())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene specs serialize")
    }

    /// Nearest hit along the ray `origin + t dir`, as `(t, albedo)`.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, [f64; 3])> {
        let mut best: Option<(f64, [f64; 3])> = None;
        let mut consider = |t: f64, color: &dyn Fn() -> [f64; 3]| {
            if t > 0.0 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, color()));
            }
        };
        for p in &self.planes {
            if dir.z.abs() < 1e-15 {
                continue;
            }
            let t = (p.depth - origin.z) / dir.z;
            let hit = origin + dir * t;
            if let Some([w, h]) = p.size {
                if (hit.x - p.center[0]).abs() > w / 2.0 || (hit.y - p.center[1]).abs() > h / 2.0 {
                    continue;
                }
            }
            consider(t, &|| p.texture.sample(hit.x, hit.y));
        }
        for b in &self.boxes {
            let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
            let mut miss = false;
            for i in 0..3 {
                if dir[i].abs() < 1e-15 {
                    if origin[i] < b.min[i] || origin[i] > b.max[i] {
                        miss = true;
                    }
                    continue;
                }
                let (a, c) = ((b.min[i] - origin[i]) / dir[i], (b.max[i] - origin[i]) / dir[i]);
                let (near, far) = if a < c { (a, c) } else { (c, a) };
                if near > t0 {
                    t0 = near;
                    axis = i;
                }
                t1 = t1.min(far);
            }
            if miss || t0 > t1 || t0 <= 0.0 {
                continue;
            }
            let hit = origin + dir * t0;
            let (u, v) = match axis {
                0 => (hit.y, hit.z),
                1 => (hit.x, hit.z),
                _ => (hit.x, hit.y),
            };
            consider(t0, &|| b.texture.sample(u, v));
        }
        best
    }

    /// Ray-cast render of albedo and camera-frame depth (0 where nothing is hit).
    pub fn render(&self, cam: &Camera) -> (Image, Vec<f64>) {
        let (w, h) = (cam.width(), cam.height());
        let origin = cam.center();
        let rt = cam.rotation().transpose();
        let rows: Vec<(Vec<[f64; 3]>, Vec<f64>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut colors = Vec::with_capacity(w);
                let mut depths = Vec::with_capacity(w);
                for x in 0..w {
                    // the camera-frame direction has z = 1, so t is the depth
                    let dir = rt * cam.ray_direction(x as f64, y as f64);
                    match self.intersect(&origin, &dir) {
                        Some((t, c)) => {
                            colors.push(c);
                            depths.push(t);
                        }
                        None => {
                            colors.push([0.0; 3]);
                            depths.push(0.0);
                        }
                    }
                }
                (colors, depths)
            })
            .collect();
        let mut img = Image::new(w, h);
        let mut depth = Vec::with_capacity(w * h);
        for (y, (colors, depths)) in rows.into_iter().enumerate() {
            for (x, c) in colors.iter().enumerate() {
                for (ch, v) in c.iter().enumerate() {
                    img.set(x, y, ch, *v);
                }
            }
            depth.extend(depths);
        }
        (img, depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> RigSpec {
        RigSpec {
            width: 16,
            height: 12,
            focal: 20.0,
            origin: [0.0; 3],
            layout: RigLayout::Line { count: 5, baseline: 0.1 },
        }
    }

    fn noise(seed: u64) -> Texture {
        Texture::Noise {
            seed,
            scale: 0.5,
            octaves: 2,
            contrast: 1.0,
        }
    }

    fn plane(depth: f64, size: Option<[f64; 2]>) -> PlaneSpec {
        PlaneSpec {
            depth,
            center: [0.0, 0.0],
            size,
            texture: noise(1),
        }
    }

    #[test]
    fn empty_scene_is_black_with_zero_depth() {
        let s = SceneSpec {
            depth_range: [1.0, 10.0],
            planes: vec![],
            boxes: vec![],
            rig: rig(),
        };
        let cam = s.rig.build().unwrap().target;
        let (img, depth) = s.render(&cam);
        assert!(img.data().iter().all(|v| *v == 0.0));
        assert!(depth.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn overlapping_planes_keep_nearest_depth() {
        let s = SceneSpec {
            depth_range: [1.0, 10.0],
            planes: vec![plane(5.0, None), plane(3.0, Some([0.5, 0.5]))],
            boxes: vec![],
            rig: rig(),
        };
        let cam = s.rig.build().unwrap().target;
        let (_, depth) = s.render(&cam);
        for y in 0..12 {
            for x in 0..16 {
                let p = cam.unproject(x as f64, y as f64, 3.0);
                let near = p.x.abs() <= 0.25 && p.y.abs() <= 0.25;
                let expect: f64 = if near { 3.0 } else { 5.0 };
                assert!((depth[y * 16 + x] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn box_front_face_depth() {
        let s = SceneSpec {
            depth_range: [1.0, 10.0],
            planes: vec![],
            boxes: vec![BoxSpec {
                min: [-10.0, -10.0, 4.0],
                max: [10.0, 10.0, 6.0],
                texture: noise(2),
            }],
            rig: rig(),
        };
        let (_, depth) = s.render(&s.rig.build().unwrap().target);
        assert!(depth.iter().all(|d| (d - 4.0).abs() < 1e-12));
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let s = SceneSpec {
            depth_range: [1.0, 10.0],
            planes: vec![plane(5.0, Some([1.0, 2.0]))],
            boxes: vec![],
            rig: rig(),
        };
        let text = s.to_toml();
        assert_eq!(SceneSpec::from_toml(&text, "s").unwrap(), s);
        let mut bad = s.clone();
        bad.planes[0].depth = 20.0;
        assert!(bad.validate().is_err());
        assert!(matches!(SceneSpec::from_toml("depth_range = 3", "s"), Err(Error::Parse { .. })));
    }

    #[test]
    fn rig_layouts() {
        let line = rig().build().unwrap();
        assert_eq!(line.inputs.len(), 4);
        assert_eq!(line.edges, vec![(0, 1), (1, 2), (2, 3)]);
        assert!((line.inputs[1].center().x + 0.1).abs() < 1e-15);
        let mut g = rig();
        g.layout = RigLayout::Grid {
            size: 8,
            spacing: 1.0,
            inputs: GridInputs::CornersAndMidpoints,
            target: [2.0, 2.0],
        };
        let grid = g.build().unwrap();
        assert_eq!(grid.inputs.len(), 8);
        assert_eq!(grid.edges.len(), 6);
        assert!((grid.target.center().x + 1.5).abs() < 1e-12);
    }
}
