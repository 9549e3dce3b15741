use std::io::Cursor;

use super::PreprocessError;

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RawImage {
    pub const CHANNELS: usize = 3;

    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::InvalidImage(format!("{width}x{height} has no pixels")));
        }
        let expected = width as usize * height as usize * Self::CHANNELS;
        if data.len() != expected {
            return Err(PreprocessError::InvalidImage(format!("expected {expected} bytes, got {}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, PreprocessError> {
        let data = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().expect("in-memory png header");
        writer.write_image_data(&self.data).expect("in-memory png data");
        writer.finish().expect("in-memory png finish");
        out
    }

    /// Decode an 8-bit PNG; grayscale and alpha variants are converted to RGB.
    pub fn from_png(bytes: &[u8]) -> Result<Self, PreprocessError> {
        let err = |e: png::DecodingError| PreprocessError::Png(e.to_string());
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(err)?;
        let size = reader.output_buffer_size().ok_or_else(|| PreprocessError::Png("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(err)?;
        buf.truncate(info.buffer_size());
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            png::ColorType::Indexed => return Err(PreprocessError::Png("unexpanded palette".into())),
        };
        Self::new(info.width, info.height, rgb)
    }
}

/// Largest centered square, offsets `floor((dim - side) / 2)`.
pub fn center_crop(image: &RawImage) -> RawImage {
    let side = image.width.min(image.height);
    let x0 = (image.width - side) / 2;
    let y0 = (image.height - side) / 2;
    if side == image.width && side == image.height {
        return image.clone();
    }
    let row_bytes = side as usize * 3;
    let mut data = Vec::with_capacity(row_bytes * side as usize);
    for y in y0..y0 + side {
        let start = (y as usize * image.width as usize + x0 as usize) * 3;
        data.extend_from_slice(&image.data[start..start + row_bytes]);
    }
    RawImage { width: side, height: side, data }
}

/// Bilinear resize of a square image with half-pixel centres
/// (`src = (dst + 0.5) * in / out - 0.5`, clamped to the border).
pub fn resize(image: &RawImage, target: u32) -> Result<RawImage, PreprocessError> {
    if image.width != image.height {
        return Err(PreprocessError::NotSquare { width: image.width, height: image.height });
    }
    if target == 0 {
        return Err(PreprocessError::Config("resize target must be positive".into()));
    }
    if target == image.width {
        return Ok(image.clone());
    }
    let n = image.width as usize;
    let t = target as usize;
    let scale = n as f64 / t as f64;
    // Source index pairs and blend weight per output coordinate; shared by both axes.
    let taps: Vec<(usize, usize, f64)> = (0..t)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, s - lo as f64)
        })
        .collect();

    let mut data = Vec::with_capacity(t * t * 3);
    for &(y0, y1, wy) in &taps {
        for &(x0, x1, wx) in &taps {
            for c in 0..3 {
                let p = |x: usize, y: usize| f64::from(image.data[(y * n + x) * 3 + c]);
                let top = p(x0, y0) * (1.0 - wx) + p(x1, y0) * wx;
                let bottom = p(x0, y1) * (1.0 - wx) + p(x1, y1) * wx;
                let v = top * (1.0 - wy) + bottom * wy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(RawImage { width: target, height: target, data })
}

/// Crop to the centred square then resize to `target`.
pub fn prepare(image: &RawImage, target: u32) -> Result<RawImage, PreprocessError> {
    resize(&center_crop(image), target)
}

/// Flattened HWC features scaled to `[-0.5, 0.5]`.
pub fn to_features(image: &RawImage) -> Vec<f64> {
    image.data.iter().map(|&v| f64::from(v) / 255.0 - 0.5).collect()
}
