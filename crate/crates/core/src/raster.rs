//! Core raster value types: images, float planes, score stacks and label maps.

use std::path::Path;

use crate::{Error, Result};

/// Label code for pixels claimed by the background map.
pub const BACKGROUND: u8 = 254;
/// Label code for pixels that carry no confident claim.
pub const NEUTRAL: u8 = 255;

/// Index of a class inside a score stack / palette.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u8);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RasterData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl RasterData {
    pub fn len(&self) -> usize {
        match self {
            RasterData::U8(v) => v.len(),
            RasterData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-major, channel-interleaved image.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: RasterData,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: RasterData) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::arg(format!(
                "raster dims must be >= 1, got {width}x{height}x{channels}"
            )));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::arg(format!(
                "raster data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, channels, RasterData::U8(data))
    }

    pub fn from_f32(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(width, height, channels, RasterData::F32(data))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &RasterData {
        &self.data
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            RasterData::U8(v) => Some(v),
            RasterData::F32(_) => None,
        }
    }

    /// Float view of the raster; 8-bit data is scaled into [0, 1].
    pub fn to_unit_f32(&self) -> Raster {
        let data = match &self.data {
            RasterData::U8(v) => v.iter().map(|&b| b as f32 / 255.0).collect(),
            RasterData::F32(v) => v.clone(),
        };
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: RasterData::F32(data),
        }
    }

    /// Copies the `w`x`h` window at (`x`, `y`).
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Raster> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::arg(format!(
                "crop {w}x{h}+{x}+{y} outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        fn rows<T: Copy>(src: &[T], sw: usize, c: usize, x: usize, y: usize, w: usize, h: usize) -> Vec<T> {
            let mut out = Vec::with_capacity(w * h * c);
            for row in y..y + h {
                let start = (row * sw + x) * c;
                out.extend_from_slice(&src[start..start + w * c]);
            }
            out
        }
        let data = match &self.data {
            RasterData::U8(v) => RasterData::U8(rows(v, self.width, c, x, y, w, h)),
            RasterData::F32(v) => RasterData::F32(rows(v, self.width, c, x, y, w, h)),
        };
        Raster::new(w, h, c, data)
    }

    pub fn load(path: &Path) -> Result<Raster> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Raster::from_u8(w as usize, h as usize, 3, img.into_raw())
    }

    /// PNG bytes of an 8-bit raster (1 channel → grayscale, 3 → RGB).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let data = self
            .as_u8()
            .ok_or_else(|| Error::arg("only 8-bit rasters can be written as PNG"))?;
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::arg(format!("cannot write {c}-channel PNG"))),
        };
        let mut out = Vec::new();
        image::ImageEncoder::write_image(
            image::codecs::png::PngEncoder::new(&mut out),
            data,
            self.width as u32,
            self.height as u32,
            color,
        )?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::path(path, e))
    }

    /// Loads an image keeping single-channel files single-channel.
    pub fn load_any(path: &Path) -> Result<Raster> {
        let img = image::open(path)?;
        match img.color() {
            image::ColorType::L8 => {
                let g = img.into_luma8();
                let (w, h) = g.dimensions();
                Raster::from_u8(w as usize, h as usize, 1, g.into_raw())
            }
            _ => {
                let rgb = img.into_rgb8();
                let (w, h) = rgb.dimensions();
                Raster::from_u8(w as usize, h as usize, 3, rgb.into_raw())
            }
        }
    }
}

/// Single-channel float plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("plane dims must be >= 1"));
        }
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "plane data length {} != {width}x{height}",
                data.len()
            )));
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
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

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Per-class score planes over one pixel grid, stored class-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreStack {
    width: usize,
    height: usize,
    classes: Vec<String>,
    data: Vec<f32>,
}

impl ScoreStack {
    /// Validates dims and that every value is finite and non-negative.
    pub fn new(width: usize, height: usize, classes: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("score stack dims must be >= 1"));
        }
        if classes.is_empty() || classes.len() >= BACKGROUND as usize {
            return Err(Error::arg(format!(
                "1..{} classes supported, got {}",
                BACKGROUND,
                classes.len()
            )));
        }
        if data.len() != classes.len() * width * height {
            return Err(Error::arg(format!(
                "score stack data length {} != {}x{width}x{height}",
                data.len(),
                classes.len()
            )));
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::arg(format!(
                "score value {v} at flat index {i} is not finite and >= 0"
            )));
        }
        Ok(ScoreStack {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn from_planes(classes: Vec<String>, planes: Vec<Plane>) -> Result<Self> {
        if planes.len() != classes.len() {
            return Err(Error::arg("plane count != class count"));
        }
        let (w, h) = match planes.first() {
            Some(p) => (p.width, p.height),
            None => return Err(Error::arg("score stack needs at least one plane to infer dims")),
        };
        let mut data = Vec::with_capacity(planes.len() * w * h);
        for p in &planes {
            if p.width != w || p.height != h {
                return Err(Error::arg("planes differ in dims"));
            }
            data.extend_from_slice(&p.data);
        }
        Self::new(w, h, classes, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, class: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[class * n..(class + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, class: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[class * n..(class + 1) * n]
    }

    pub fn plane_owned(&self, class: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.plane(class).to_vec(),
        }
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.pixels())
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().position(|c| c == name).map(|i| ClassId(i as u8))
    }
}

/// One 8-bit code per pixel: class index, [`BACKGROUND`] or [`NEUTRAL`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    codes: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, codes: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("label map dims must be >= 1"));
        }
        if codes.len() != width * height {
            return Err(Error::arg(format!(
                "label map length {} != {width}x{height}",
                codes.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            codes,
        })
    }

    pub fn filled(width: usize, height: usize, code: u8) -> Result<Self> {
        Self::new(width, height, vec![code; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.codes[y * self.width + x]
    }

    /// Checks that every code is below `num_classes` or a sentinel.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .codes
            .iter()
            .position(|&c| (c as usize) >= num_classes && c != BACKGROUND && c != NEUTRAL)
        {
            Some(i) => Err(Error::Validation(format!(
                "label code {} at pixel {i} is neither a class below {num_classes} nor a sentinel",
                self.codes[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<LabelMap> {
        let r = Raster::from_u8(self.width, self.height, 1, self.codes.clone())?.crop(x, y, w, h)?;
        let codes = r.as_u8().map(<[u8]>::to_vec).unwrap_or_default();
        LabelMap::new(w, h, codes)
    }

    /// Raw codes as a grayscale raster (lossless, unlike the RGB palette encoding).
    pub fn to_code_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data: RasterData::U8(self.codes.clone()),
        }
    }

    pub fn from_code_raster(r: &Raster) -> Result<LabelMap> {
        match (r.channels(), r.as_u8()) {
            (1, Some(codes)) => LabelMap::new(r.width(), r.height(), codes.to_vec()),
            _ => Err(Error::arg("code raster must be 1-channel 8-bit")),
        }
    }
}
