use std::io::Read;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::scene::{RigLayout, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::{format_cameras, parse_cameras, Camera, CameraRecord, Image};

pub const DEPTH_MAGIC: &[u8; 4] = b"PSWD";
pub const DEPTH_VERSION: u32 = 1;

/// Ground-truth depth raster; 0 marks background.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::Shape(format!("depth map {width}x{height} with {} values", data.len())));
        }
        Ok(DepthMap { width, height, data })
    }

    pub fn from_f64(width: usize, height: usize, data: &[f64]) -> Result<Self> {
        Self::new(width, height, data.iter().map(|&d| d as f32).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        f64::from(self.data[y * self.width + x])
    }

    /// Header (`PSWD`, width u32, height u32, version u32) then f32 values,
    /// all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(DEPTH_MAGIC);
        for v in [self.width as u32, self.height as u32, DEPTH_VERSION] {
            out.write_u32::<LittleEndian>(v).expect("writing to a Vec");
        }
        for &d in &self.data {
            out.write_f32::<LittleEndian>(d).expect("writing to a Vec");
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source_name: &str) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::parse(source_name, bytes.len() as u64, "truncated header"));
        }
        if &bytes[..4] != DEPTH_MAGIC {
            return Err(Error::parse(source_name, 0, format!("bad magic {:?}", &bytes[..4])));
        }
        let mut r = &bytes[4..16];
        let w = r.read_u32::<LittleEndian>()? as usize;
        let h = r.read_u32::<LittleEndian>()? as usize;
        let version = r.read_u32::<LittleEndian>()?;
        if version != DEPTH_VERSION {
            return Err(Error::parse(source_name, 12, format!("unsupported version {version}")));
        }
        let need = w.checked_mul(h).and_then(|n| n.checked_mul(4)).unwrap_or(usize::MAX);
        if bytes.len() - 16 != need {
            return Err(Error::parse(
                source_name,
                bytes.len() as u64,
                format!("{w}x{h} raster needs {need} data bytes, found {}", bytes.len() - 16),
            ));
        }
        let mut data = vec![0.0f32; w * h];
        (&bytes[16..]).read_f32_into::<LittleEndian>(&mut data)?;
        Self::new(w, h, data).map_err(|e| Error::parse(source_name, 4, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub id: String,
    pub camera: Camera,
    pub image: Image,
    pub depth: Option<DepthMap>,
}

/// One target view with its input views and the declared input pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSample {
    pub target: View,
    pub inputs: Vec<View>,
    pub edges: Vec<(usize, usize)>,
    pub rig: String,
    pub depth_range: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    target: String,
    inputs: Vec<String>,
    edges: Vec<[usize; 2]>,
    rig: String,
    depth_range: [f64; 2],
}

const CAMERAS_FILE: &str = "cameras.txt";
const META_FILE: &str = "sample.toml";

fn render_view(scene: &SceneSpec, id: String, camera: Camera) -> Result<View> {
    let (img, depth) = scene.render(&camera);
    let depth = DepthMap::from_f64(camera.width(), camera.height(), &depth)?;
    Ok(View {
        id,
        image: img.quantized(),
        camera,
        depth: Some(depth),
    })
}

/// Renders every camera of the scene's rig. Images are quantized to bytes
/// and depths to `f32`, so a written sample reads back identically.
pub fn make_sample(scene: &SceneSpec) -> Result<DatasetSample> {
    scene.validate()?;
    let rig = scene.rig.build()?;
    let target = render_view(scene, "target".into(), rig.target)?;
    let inputs = rig
        .inputs
        .into_iter()
        .enumerate()
        .map(|(i, c)| render_view(scene, format!("in{i}"), c))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetSample {
        target,
        inputs,
        edges: rig.edges,
        rig: rig.kind,
        depth_range: (scene.depth_range[0], scene.depth_range[1]),
    })
}

/// `n` cameras on a line `baseline` apart; middle view is the target and the
/// remaining views form `n - 2` adjacent pairs.
pub fn make_kitti_like_sequence(scene: &SceneSpec, baseline: f64, n: usize) -> Result<DatasetSample> {
    let mut s = scene.clone();
    s.rig.layout = RigLayout::Line { count: n, baseline };
    make_sample(&s)
}

fn missing_or_io(path: &Path, e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.display().to_string()),
        _ => Error::Io(e),
    }
}

impl DatasetSample {
    pub fn views(&self) -> impl Iterator<Item = &View> {
        std::iter::once(&self.target).chain(&self.inputs)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let records: Vec<CameraRecord> = self
            .views()
            .map(|v| CameraRecord {
                id: v.id.clone(),
                camera: v.camera.clone(),
            })
            .collect();
        std::fs::write(dir.join(CAMERAS_FILE), format_cameras(&records))?;
        for v in self.views() {
            v.image.save(&dir.join(format!("{}.png", v.id)))?;
            if let Some(d) = &v.depth {
                d.save(&dir.join(format!("{}.depth", v.id)))?;
            }
        }
        let meta = SampleMeta {
            target: self.target.id.clone(),
            inputs: self.inputs.iter().map(|v| v.id.clone()).collect(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            rig: self.rig.clone(),
            depth_range: [self.depth_range.0, self.depth_range.1],
        };
        std::fs::write(dir.join(META_FILE), toml::to_string(&meta).expect("metadata serializes"))?;
        Ok(())
    }

    /// Reads a sample directory. Views without a `.depth` file load with no
    /// ground truth.
    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| missing_or_io(&meta_path, e))?;
        let meta: SampleMeta = toml::from_str(&meta_text).map_err(|e| {
            Error::parse(
                meta_path.display().to_string(),
                e.span().map_or(0, |s| s.start as u64),
                e.message(),
            )
        })?;
        let cam_path = dir.join(CAMERAS_FILE);
        let cam_text = std::fs::read_to_string(&cam_path).map_err(|e| missing_or_io(&cam_path, e))?;
        let records = parse_cameras(&cam_text, &cam_path.display().to_string())?;
        let load = |id: &str| -> Result<View> {
            let camera = records
                .iter()
                .find(|r| r.id == id)
                .ok_or_else(|| Error::Missing(format!("camera `{id}` in {}", cam_path.display())))?
                .camera
                .clone();
            let img_path = dir.join(format!("{id}.png"));
            if !img_path.exists() {
                return Err(Error::Missing(img_path.display().to_string()));
            }
            let image = Image::load(&img_path)?;
            if image.width() != camera.width() || image.height() != camera.height() {
                return Err(Error::Shape(format!("{} does not match its camera size", img_path.display())));
            }
            let depth_path = dir.join(format!("{id}.depth"));
            let depth = if depth_path.exists() {
                Some(DepthMap::load(&depth_path)?)
            } else {
                None
            };
            Ok(View {
                id: id.to_string(),
                camera,
                image,
                depth,
            })
        };
        let target = load(&meta.target)?;
        let inputs = meta.inputs.iter().map(|id| load(id)).collect::<Result<Vec<_>>>()?;
        if let Some(e) = meta.edges.iter().find(|e| e[0] >= inputs.len() || e[1] >= inputs.len()) {
            return Err(Error::parse(meta_path.display().to_string(), 0, format!("edge {e:?} out of range")));
        }
        Ok(DatasetSample {
            target,
            inputs,
            edges: meta.edges.iter().map(|e| (e[0], e[1])).collect(),
            rig: meta.rig,
            depth_range: (meta.depth_range[0], meta.depth_range[1]),
        })
    }
}
