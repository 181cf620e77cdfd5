//! Portable pixmap images (binary P6 and plain P3) and the colour product
//! format: green cells are cooling surface, red cells taboo, white cells
//! overflow, with saturation giving fractional membership.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::documents::write_atomic;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{GapSpec, Product, TargetAreas};

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixmapFormat {
    /// `P6`, raw bytes.
    #[default]
    Binary,
    /// `P3`, decimal text.
    Ascii,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Image {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn encode(&self, format: PixmapFormat) -> Vec<u8> {
        match format {
            PixmapFormat::Binary => {
                let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
                out.extend(self.pixels.iter().flatten());
                out
            }
            PixmapFormat::Ascii => {
                let mut out = format!("P3\n{} {}\n255\n", self.width, self.height);
                for row in self.pixels.chunks(self.width.max(1)) {
                    let line: Vec<String> = row.iter().map(|[r, g, b]| format!("{r} {g} {b}")).collect();
                    out.push_str(&line.join("  "));
                    out.push('\n');
                }
                out.into_bytes()
            }
        }
    }

    pub fn write(&self, path: &Path, format: PixmapFormat) -> Result<()> {
        write_atomic(path, &self.encode(format))
    }

    /// Reads P3 or P6 with any maxval up to 255 (values are rescaled).
    pub fn decode(bytes: &[u8], context: &str) -> Result<Self> {
        let err = |m: &str| Error::parse(context, m);
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(err("unexpected end of pixmap header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token()?;
        let mut number = |what: &str| -> Result<usize> {
            token()?
                .parse::<usize>()
                .map_err(|_| err(&format!("bad {what} in pixmap header")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval == 0 || maxval > 255 {
            return Err(err("maxval must be in 1..=255"));
        }
        let scale = |v: usize| ((v * 255 + maxval / 2) / maxval) as u8;
        let n = width * height;
        let pixels = match magic.as_str() {
            "P6" => {
                let data = bytes.get(pos + 1..).unwrap_or(&[]);
                if data.len() < 3 * n {
                    return Err(err("pixel data is truncated"));
                }
                data[..3 * n]
                    .chunks(3)
                    .map(|c| [scale(c[0] as usize), scale(c[1] as usize), scale(c[2] as usize)])
                    .collect()
            }
            "P3" => {
                let text = String::from_utf8_lossy(&bytes[pos..]);
                let values: Vec<usize> = text
                    .lines()
                    .map(|l| l.split('#').next().unwrap_or(""))
                    .flat_map(str::split_whitespace)
                    .map(|t| t.parse::<usize>().map_err(|_| err("bad sample in P3 data")))
                    .collect::<Result<_>>()?;
                if values.len() < 3 * n {
                    return Err(err("pixel data is truncated"));
                }
                if values.iter().any(|&v| v > maxval) {
                    return Err(err("sample exceeds maxval"));
                }
                values[..3 * n].chunks(3).map(|c| [scale(c[0]), scale(c[1]), scale(c[2])]).collect()
            }
            _ => return Err(err("not a P3 or P6 pixmap")),
        };
        Ok(Image { width, height, pixels })
    }
}

/// Masks from a colour image: cooling `max(0, g - r)/255`, taboo
/// `max(0, r - g)/255`, overflow everything that is not cooling.
pub fn areas_from_image(image: &Image) -> Result<TargetAreas> {
    let (w, h) = (image.width, image.height);
    let channel = |f: fn(Rgb) -> f64| Grid::from_fn(w, h, |x, y| f(image.get(x, y)));
    let cool = channel(|[r, g, _]| g.saturating_sub(r) as f64 / 255.0);
    let tab = channel(|[r, g, _]| r.saturating_sub(g) as f64 / 255.0);
    let over = cool.map(|c| 1.0 - c);
    TargetAreas::new(cool, over, tab)
}

pub fn load_pixmap_product(path: &Path, cell_size: f64, gap: GapSpec) -> Result<Product> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let image = Image::decode(&bytes, &path.display().to_string())?;
    let name = path.file_stem().map_or("product".into(), |s| s.to_string_lossy().into_owned());
    Product::new(name, cell_size, areas_from_image(&image)?, gap)
}
