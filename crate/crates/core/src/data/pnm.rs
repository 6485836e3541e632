use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A decoded binary pixmap, interleaved 8-bit samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl PnmImage {
    /// Planar `[C, H, W]` tensor scaled by 1/255.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        let (c, hw) = (self.channels, self.width * self.height);
        let mut planar = vec![0.0f32; c * hw];
        for (i, px) in self.data.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                planar[ch * hw + i] = f32::from(v) / 255.0;
            }
        }
        Tensor::from_vec([c, self.height, self.width], planar)
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Pnm(format!("corrupt header: missing or invalid {what}")))
    }
}

/// Decodes binary P5 (grey) or P6 (RGB) data with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<PnmImage> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Pnm("corrupt header: expected magic P5 or P6".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    if !h
        .bytes
        .get(h.pos)
        .is_some_and(|b| b.is_ascii_whitespace() || *b == b'#')
    {
        return Err(Error::Pnm("corrupt header: no separator after magic".into()));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Pnm(format!("corrupt header: zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(Error::Pnm(format!("unsupported maxval {maxval}, expected 255")));
    }
    if !h.bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Pnm("corrupt header: no separator before raster".into()));
    }
    let raster = &bytes[h.pos + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Pnm(format!("dimensions {width}x{height} overflow")))?;
    if raster.len() != expected {
        return Err(Error::Pnm(format!(
            "raster has {} bytes but header {width}x{height}x{channels} needs {expected}",
            raster.len()
        )));
    }
    Ok(PnmImage {
        channels,
        width,
        height,
        data: raster.to_vec(),
    })
}

pub fn encode_pnm(img: &PnmImage) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_p6_is_all_ones() {
        let img = decode_pnm(b"P6\n2 2\n255\n\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff\xff").unwrap();
        let t = img.to_tensor().unwrap();
        assert_eq!(t.dims(), &[3, 2, 2]);
        assert!(t.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn interleaved_to_planar() {
        let img = PnmImage {
            channels: 3,
            width: 2,
            height: 1,
            data: vec![255, 0, 51, 0, 255, 102],
        };
        let t = decode_pnm(&encode_pnm(&img)).unwrap().to_tensor().unwrap();
        assert_eq!(t.values(), &[1.0, 0.0, 0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn comments_in_header() {
        let img = decode_pnm(b"P5 # grey\n# size next\n1 2 255\n\x00\x80").unwrap();
        assert_eq!((img.channels, img.width, img.height), (1, 1, 2));
        assert_eq!(img.data, vec![0, 128]);
    }

    #[test]
    fn corrupt_inputs() {
        for bad in [
            &b"P3\n1 1\n255\n\x00"[..],
            b"P5\n1\n",
            b"P5\n0 1\n255\n",
            b"P5\n1 1\n65535\n\x00\x00",
            b"P5\n2 2\n255\n\x00",
            b"P5\n1 1\n255\n\x00\x00",
            b"P599999999999999999999999 1 255\n",
            b"",
        ] {
            assert!(matches!(decode_pnm(bad), Err(Error::Pnm(_))), "{bad:?}");
        }
    }
}
