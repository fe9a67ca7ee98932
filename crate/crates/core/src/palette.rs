//! Class palettes and RGB label-raster codecs.

use std::collections::HashMap;
use std::path::Path;

use crate::raster::{ClassId, LabelMap, Raster, BACKGROUND, NEUTRAL};
use crate::{Error, Result};

/// Emitted for [`BACKGROUND`] pixels. Shared with Unknown on output only.
pub const BACKGROUND_RGB: [u8; 3] = [0, 0, 0];
/// Emitted for [`NEUTRAL`] pixels.
pub const NEUTRAL_RGB: [u8; 3] = [128, 128, 128];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaletteEntry {
    pub name: String,
    pub rgb: [u8; 3],
}

/// Ordered class list; the position of an entry is its [`ClassId`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassPalette {
    entries: Vec<PaletteEntry>,
}

impl ClassPalette {
    pub fn new(entries: Vec<PaletteEntry>) -> Result<Self> {
        if entries.is_empty() || entries.len() >= BACKGROUND as usize {
            return Err(Error::arg(format!(
                "palette needs 1..{} entries, got {}",
                BACKGROUND,
                entries.len()
            )));
        }
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.name == b.name {
                    return Err(Error::arg(format!("duplicate palette name {:?}", a.name)));
                }
                if a.rgb == b.rgb {
                    return Err(Error::arg(format!(
                        "palette entries {:?} and {:?} share color {:?}",
                        a.name, b.name, a.rgb
                    )));
                }
            }
        }
        Ok(ClassPalette { entries })
    }

    /// The DeepGlobe land-cover palette.
    pub fn deepglobe() -> Self {
        let table: [(&str, [u8; 3]); 7] = [
            ("Urban", [0, 255, 255]),
            ("Agriculture", [255, 255, 0]),
            ("Rangeland", [255, 0, 255]),
            ("Forest", [0, 255, 0]),
            ("Water", [0, 0, 255]),
            ("Barren", [255, 255, 255]),
            ("Unknown", [0, 0, 0]),
        ];
        ClassPalette {
            entries: table
                .iter()
                .map(|(n, rgb)| PaletteEntry {
                    name: n.to_string(),
                    rgb: *rgb,
                })
                .collect(),
        }
    }

    /// Parses `name r g b` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::arg(format!(
                    "palette line {}: expected `name r g b`",
                    lineno + 1
                )));
            }
            let mut rgb = [0u8; 3];
            for (k, p) in parts[1..].iter().enumerate() {
                rgb[k] = p.parse().map_err(|_| {
                    Error::arg(format!("palette line {}: bad channel {p:?}", lineno + 1))
                })?;
            }
            entries.push(PaletteEntry {
                name: parts[0].to_string(),
                rgb,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(|i| ClassId(i as u8))
    }

    /// The "no claim" class, if the palette has one named `Unknown`.
    pub fn unknown(&self) -> Option<ClassId> {
        self.id_of("Unknown")
    }

    fn nearest(&self, rgb: [u8; 3]) -> usize {
        let dist = |e: &PaletteEntry| -> u32 {
            (0..3)
                .map(|k| {
                    let d = e.rgb[k] as i32 - rgb[k] as i32;
                    (d * d) as u32
                })
                .sum()
        };
        let mut best = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if dist(e) < dist(&self.entries[best]) {
                best = i;
            }
        }
        best
    }
}

/// Paints a label map with palette colors; sentinels use the fixed sentinel colors.
pub fn rgb_encode(labels: &LabelMap, palette: &ClassPalette) -> Result<Raster> {
    let mut out = Vec::with_capacity(labels.codes().len() * 3);
    for (i, &code) in labels.codes().iter().enumerate() {
        let rgb = match code {
            BACKGROUND => BACKGROUND_RGB,
            NEUTRAL => NEUTRAL_RGB,
            c => match palette.entries.get(c as usize) {
                Some(e) => e.rgb,
                None => {
                    return Err(Error::arg(format!(
                        "label code {c} at pixel {i} has no palette entry"
                    )))
                }
            },
        };
        out.extend_from_slice(&rgb);
    }
    Raster::from_u8(labels.width(), labels.height(), 3, out)
}

/// Maps each RGB pixel to its palette index.
///
/// Exact matches win; [`NEUTRAL_RGB`] decodes to [`NEUTRAL`] when no entry uses it.
/// Any other color is an error unless `nearest` is set.
pub fn rgb_decode(raster: &Raster, palette: &ClassPalette, nearest: bool) -> Result<LabelMap> {
    let data = match (raster.channels(), raster.as_u8()) {
        (3, Some(d)) => d,
        _ => return Err(Error::arg("rgb_decode needs a 3-channel 8-bit raster")),
    };
    let lookup: HashMap<[u8; 3], u8> = palette
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.rgb, i as u8))
        .collect();
    let mut codes = Vec::with_capacity(data.len() / 3);
    for (i, px) in data.chunks_exact(3).enumerate() {
        let rgb = [px[0], px[1], px[2]];
        let code = match lookup.get(&rgb) {
            Some(&c) => c,
            None if rgb == NEUTRAL_RGB => NEUTRAL,
            None if nearest => palette.nearest(rgb) as u8,
            None => {
                return Err(Error::arg(format!(
                    "color {:?} at pixel ({}, {}) is not in the palette",
                    rgb,
                    i % raster.width(),
                    i / raster.width()
                )))
            }
        };
        codes.push(code);
    }
    LabelMap::new(raster.width(), raster.height(), codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forest_pixels_decode_to_forest() {
        let p = ClassPalette::deepglobe();
        let r = Raster::from_u8(2, 2, 3, [0u8, 255, 0].repeat(4)).unwrap();
        let m = rgb_decode(&r, &p, false).unwrap();
        let forest = p.id_of("Forest").unwrap().0;
        assert!(m.codes().iter().all(|&c| c == forest));
    }

    #[test]
    fn off_palette_color_is_an_error() {
        let p = ClassPalette::deepglobe();
        let r = Raster::from_u8(1, 1, 3, vec![1, 255, 0]).unwrap();
        let err = rgb_decode(&r, &p, false).unwrap_err().to_string();
        assert!(err.contains("[1, 255, 0]") && err.contains("(0, 0)"), "{err}");
        let m = rgb_decode(&r, &p, true).unwrap();
        assert_eq!(m.codes()[0], p.id_of("Forest").unwrap().0);
    }

    #[test]
    fn sentinels_use_fixed_colors() {
        let p = ClassPalette::deepglobe();
        let m = LabelMap::new(2, 1, vec![BACKGROUND, NEUTRAL]).unwrap();
        let r = rgb_encode(&m, &p).unwrap();
        assert_eq!(r.as_u8().unwrap(), &[0, 0, 0, 128, 128, 128]);
        // black always reads back as Unknown
        let back = rgb_decode(&r, &p, false).unwrap();
        assert_eq!(back.codes(), &[p.unknown().unwrap().0, NEUTRAL]);
    }

    #[test]
    fn palette_file_rejects_duplicates() {
        assert!(ClassPalette::parse("a 1 2 3\nb 1 2 3\n").is_err());
        assert!(ClassPalette::parse("a 1 2 3\na 4 5 6\n").is_err());
        let p = ClassPalette::parse("# land\na 1 2 3\nb 4 5 6 # water\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.entries()[1].rgb, [4, 5, 6]);
    }

    #[test]
    fn deepglobe_is_valid() {
        let p = ClassPalette::deepglobe();
        assert_eq!(p.len(), 7);
        assert!(ClassPalette::new(p.entries().to_vec()).is_ok());
    }

    proptest! {
        #[test]
        fn decode_encode_roundtrip_on_palette_rasters(idx in prop::collection::vec(0usize..7, 1..64)) {
            let p = ClassPalette::deepglobe();
            let data: Vec<u8> = idx.iter().flat_map(|&i| p.entries()[i].rgb).collect();
            let r = Raster::from_u8(idx.len(), 1, 3, data).unwrap();
            let m = rgb_decode(&r, &p, false).unwrap();
            prop_assert_eq!(rgb_encode(&m, &p).unwrap(), r);
        }

        #[test]
        fn encode_decode_roundtrip_on_label_maps(codes in prop::collection::vec(prop_oneof![0u8..7, Just(NEUTRAL)], 1..64)) {
            // BACKGROUND is excluded: it shares black with Unknown on output.
            let p = ClassPalette::deepglobe();
            let m = LabelMap::new(codes.len(), 1, codes).unwrap();
            prop_assert_eq!(rgb_decode(&rgb_encode(&m, &p).unwrap(), &p, false).unwrap(), m);
        }
    }
}
