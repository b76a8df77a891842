use super::{ImagingError, Raster, Result};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

fn is_netpbm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "ppm" || e == "pgm" || e == "pnm"
    )
}

/// Reads PNG (or anything the `image` crate decodes) and binary PPM/PGM.
/// Alpha is dropped; grayscale stays single-channel.
pub fn read_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    if is_netpbm(path) {
        return read_ppm(&mut BufReader::new(fs::File::open(path)?));
    }
    let img = image::open(path)?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Raster::new(w as usize, h as usize, 1, g.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Raster::new(w as usize, h as usize, 3, rgb.into_raw())
        }
    }
}

pub fn write_image(path: impl AsRef<Path>, r: &Raster) -> Result<()> {
    let path = path.as_ref();
    if is_netpbm(path) {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        write_ppm(&mut f, r)?;
        f.flush()?;
        return Ok(());
    }
    let color = if r.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(path, r.data(), r.width() as u32, r.height() as u32, color)?;
    Ok(())
}

fn read_token(reader: &mut impl BufRead) -> Result<String> {
    let mut token = String::new();
    loop {
        let mut byte = [0u8; 1];
        if reader.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0] as char;
        if c == '#' && token.is_empty() {
            let mut comment = String::new();
            reader.read_line(&mut comment)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(c);
    }
    if token.is_empty() {
        return Err(ImagingError::UnsupportedFormat("truncated netpbm header".into()));
    }
    Ok(token)
}

fn parse_dim(tok: String) -> Result<usize> {
    tok.parse()
        .map_err(|_| ImagingError::UnsupportedFormat(format!("bad netpbm header field {tok:?}")))
}

/// Binary P6 (RGB) or P5 (gray) with maxval 255.
pub fn read_ppm(reader: &mut impl BufRead) -> Result<Raster> {
    let magic = read_token(reader)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        m => return Err(ImagingError::UnsupportedFormat(format!("netpbm magic {m}"))),
    };
    let width = parse_dim(read_token(reader)?)?;
    let height = parse_dim(read_token(reader)?)?;
    let maxval = parse_dim(read_token(reader)?)?;
    if maxval != 255 {
        return Err(ImagingError::UnsupportedFormat(format!(
            "netpbm maxval {maxval} (only 255 supported)"
        )));
    }
    let mut data = vec![0u8; width * height * channels];
    reader.read_exact(&mut data)?;
    Raster::new(width, height, channels, data)
}

pub fn write_ppm(writer: &mut impl Write, r: &Raster) -> Result<()> {
    let magic = if r.channels() == 3 { "P6" } else { "P5" };
    write!(writer, "{magic}\n{} {}\n255\n", r.width(), r.height())?;
    writer.write_all(r.data())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact() {
        let r = Raster::from_fn_rgb(7, 3, |x, y| [x as u8 * 30, y as u8 * 80, (x * y) as u8]);
        let mut buf = Vec::new();
        write_ppm(&mut buf, &r).unwrap();
        let back = read_ppm(&mut &buf[..]).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn pgm_with_comment() {
        let mut buf = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        buf.extend_from_slice(&[9, 250]);
        let r = read_ppm(&mut &buf[..]).unwrap();
        assert_eq!(r.channels(), 1);
        assert_eq!(r.data(), &[9, 250]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let r = Raster::from_fn_rgb(5, 4, |x, y| [x as u8, y as u8, 200]);
        write_image(&p, &r).unwrap();
        assert_eq!(read_image(&p).unwrap(), r);
    }
}
