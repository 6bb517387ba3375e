//! PNG encodings: label maps as 8-bit grayscale holding raw class ids,
//! images as 16-bit grayscale where code `v` means intensity `v/32767.5 - 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{GrayImage, LabelMap, NUM_CLASSES};
use crate::error::{Error, Result};

fn encode_gray(out: impl Write, width: usize, height: usize, depth: BitDepth, bytes: &[u8]) -> Result<(), png::EncodingError> {
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(depth);
    let mut writer = enc.write_header()?;
    writer.write_image_data(bytes)?;
    writer.finish()
}

pub fn label_png_bytes(map: &LabelMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_gray(&mut out, map.width(), map.height(), BitDepth::Eight, map.as_slice())
        .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
    Ok(out)
}

pub fn image_png_bytes(img: &GrayImage) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img
        .as_slice()
        .iter()
        .flat_map(|&v| GrayImage::encode_u16(v).to_be_bytes())
        .collect();
    let mut out = Vec::new();
    encode_gray(&mut out, img.width(), img.height(), BitDepth::Sixteen, &bytes)
        .map_err(|e| Error::invalid(format!("png encode: {e}")))?;
    Ok(out)
}

/// 8-bit grayscale PNG of arbitrary pixel data (used for previews).
pub fn write_gray8(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_gray(BufWriter::new(f), width, height, BitDepth::Eight, pixels).map_err(|e| Error::file(path, e.to_string()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_label_png(path: &Path, map: &LabelMap) -> Result<()> {
    write_bytes(path, &label_png_bytes(map)?)
}

pub fn write_image_png(path: &Path, img: &GrayImage) -> Result<()> {
    write_bytes(path, &image_png_bytes(img)?)
}

fn decode_gray(path: &Path, depth: BitDepth) -> Result<(usize, usize, Vec<u8>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(f));
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::file(path, format!("png decode: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::file(path, "png too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::file(path, format!("png decode: {e}")))?;
    if info.color_type != ColorType::Grayscale || info.bit_depth != depth {
        return Err(Error::file(
            path,
            format!(
                "expected {depth:?}-bit grayscale, found {:?} {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let bpp = if depth == BitDepth::Sixteen { 2 } else { 1 };
    let mut packed = Vec::with_capacity(w * h * bpp);
    for row in buf[..info.buffer_size()].chunks(info.line_size) {
        packed.extend_from_slice(&row[..w * bpp]);
    }
    Ok((h, w, packed))
}

pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let (h, w, data) = decode_gray(path, BitDepth::Eight)?;
    if let Some(i) = data.iter().position(|&c| c as usize >= NUM_CLASSES) {
        return Err(Error::file(
            path,
            format!("illegal class id {} at (row {}, col {})", data[i], i / w, i % w),
        ));
    }
    LabelMap::new(h, w, data)
}

pub fn read_image_png(path: &Path) -> Result<GrayImage> {
    let (h, w, raw) = decode_gray(path, BitDepth::Sixteen)?;
    let data = raw
        .chunks_exact(2)
        .map(|b| GrayImage::decode_u16(u16::from_be_bytes([b[0], b[1]])))
        .collect();
    GrayImage::new(h, w, data)
}

/// Decodes an in-memory label PNG; used to check encoder output.
pub fn label_from_png_bytes(bytes: &[u8]) -> Result<LabelMap> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| Error::invalid(format!("png decode: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::invalid(format!("png decode: {e}")))?;
    LabelMap::new(info.height as usize, info.width as usize, buf[..info.buffer_size()].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::{generate_phantom, PhantomProfile, PhantomSpec};
    use rand::SeedableRng;

    #[test]
    fn png_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let spec = PhantomSpec::random(&mut rng, 48, 64, PhantomProfile::B);
        let (img, map) = generate_phantom(&spec, &mut rng, 48, 64).unwrap();
        let (ip, lp) = (dir.path().join("i.png"), dir.path().join("l.png"));
        write_image_png(&ip, &img).unwrap();
        write_label_png(&lp, &map).unwrap();
        let back = read_image_png(&ip).unwrap();
        assert_eq!(back.height(), 48);
        let bits = |g: &GrayImage| g.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&img));
        assert_eq!(read_label_png(&lp).unwrap(), map);
        assert_eq!(label_from_png_bytes(&label_png_bytes(&map).unwrap()).unwrap(), map);
    }

    #[test]
    fn rejects_illegal_class_and_wrong_depth() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        write_gray8(&p, 2, 2, &[0, 1, 7, 3]).unwrap();
        let err = read_label_png(&p).unwrap_err().to_string();
        assert!(err.contains("bad.png") && err.contains('7'), "{err}");
        assert!(read_image_png(&p).is_err());
    }
}
