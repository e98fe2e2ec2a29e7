use super::FeatureError;

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }
}

/// Reads a binary (P5) PGM with maxval 255.
pub fn read_pgm(content: &[u8]) -> Result<GrayImage, FeatureError> {
    let mut pos = 0usize;
    let mut token = || -> Result<String, FeatureError> {
        loop {
            while pos < content.len() && content[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < content.len() && content[pos] == b'#' {
                while pos < content.len() && content[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < content.len() && !content[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FeatureError::Pgm("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&content[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(FeatureError::Pgm("only binary P5 is supported".into()));
    }
    let number = |t: String| -> Result<u32, FeatureError> {
        t.parse::<u32>()
            .map_err(|_| FeatureError::Pgm(format!("bad header value `{t}`")))
    };
    let width = number(token()?)?;
    let height = number(token()?)?;
    let maxval = number(token()?)?;
    if maxval != 255 {
        return Err(FeatureError::Pgm(format!("maxval {maxval}, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let len = width as usize * height as usize;
    if content.len() < pos + len {
        return Err(FeatureError::Pgm(format!(
            "raster truncated: need {len} bytes, found {}",
            content.len().saturating_sub(pos)
        )));
    }
    Ok(GrayImage {
        width,
        height,
        data: content[pos..pos + len].to_vec(),
    })
}

pub fn write_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comment() {
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 10 + y) as u8);
        let bytes = write_pgm(&img);
        assert_eq!(read_pgm(&bytes).unwrap(), img);

        let mut commented = b"P5\n# made by hand\n5 3\n255\n".to_vec();
        commented.extend_from_slice(&img.data);
        assert_eq!(read_pgm(&commented).unwrap(), img);
    }

    #[test]
    fn rejects_other_variants() {
        assert!(read_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(read_pgm(b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0").is_err());
        assert!(read_pgm(b"P5\n4 4\n255\n\0\0").is_err());
    }
}
