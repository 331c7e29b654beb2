//! Binary file formats: CBK1 codebooks, LDS1 latent datasets, P5 PGM images.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::codebook::Codebook;
use super::dataset::LatentDataset;
use super::grid::{ImageGrid, TokenGrid};
use crate::error::{Error, Result};

const CODEBOOK_MAGIC: &[u8; 4] = b"CBK1";
const DATASET_MAGIC: &[u8; 4] = b"LDS1";

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated {} file", self.what)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("bad {} magic", self.what)));
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("trailing bytes in {} file", self.what)));
        }
        Ok(())
    }
}

fn u32_field(v: usize, name: &str) -> Result<[u8; 4]> {
    u32::try_from(v).map(u32::to_le_bytes).map_err(|_| Error::Format(format!("{name} {v} does not fit in u32")))
}

pub fn codebook_to_bytes(cb: &Codebook) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + cb.codewords().len() * 4);
    out.extend_from_slice(CODEBOOK_MAGIC);
    for (v, name) in [
        (cb.vocab(), "vocab"),
        (cb.patch_size(), "patch size"),
        (cb.channels(), "channels"),
        (cb.patch_dim(), "patch dim"),
    ] {
        out.extend_from_slice(&u32_field(v, name)?);
    }
    for w in cb.codewords() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

pub fn codebook_from_bytes(bytes: &[u8]) -> Result<Codebook> {
    let mut r = Reader::new(bytes, "codebook");
    r.magic(CODEBOOK_MAGIC)?;
    let vocab = r.u32()? as usize;
    let patch = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim != patch * patch * channels {
        return Err(Error::Format(format!("patch dim {dim} inconsistent with f={patch}, channels={channels}")));
    }
    let words = (0..vocab * dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Codebook::new(vocab, patch, channels, words)
}

pub fn dataset_to_bytes(ds: &LatentDataset) -> Result<Vec<u8>> {
    if ds.vocab() > u16::MAX as usize + 1 {
        return Err(Error::Format(format!("vocab {} overflows u16 tokens", ds.vocab())));
    }
    let (h, w) = ds.grid_shape();
    let mut out = Vec::with_capacity(24 + ds.len() * h * w * 2);
    out.extend_from_slice(DATASET_MAGIC);
    for (v, name) in [(ds.vocab(), "vocab"), (h, "height"), (w, "width"), (ds.len(), "count")] {
        out.extend_from_slice(&u32_field(v, name)?);
    }
    out.extend_from_slice(&(ds.labels().is_some() as u32).to_le_bytes());
    for e in ds.entries() {
        for t in e.tokens() {
            out.extend_from_slice(&t.to_le_bytes());
        }
    }
    if let Some(labels) = ds.labels() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<LatentDataset> {
    let mut r = Reader::new(bytes, "latent dataset");
    r.magic(DATASET_MAGIC)?;
    let vocab = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let count = r.u32()? as usize;
    let labels_flag = r.u32()?;
    if labels_flag > 1 {
        return Err(Error::Format(format!("labels flag {labels_flag} is not 0 or 1")));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let tokens = (0..h * w).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
        entries.push(TokenGrid::new(h, w, tokens)?);
    }
    let labels = if labels_flag == 1 { Some((0..count).map(|_| r.u16()).collect::<Result<Vec<_>>>()?) } else { None };
    r.finish()?;
    LatentDataset::new(vocab, entries, labels)
}

pub fn save_codebook(cb: &Codebook, path: &Path) -> Result<()> {
    fs::write(path, codebook_to_bytes(cb)?)?;
    Ok(())
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    codebook_from_bytes(&fs::read(path)?)
}

pub fn save_dataset(ds: &LatentDataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LatentDataset> {
    dataset_from_bytes(&fs::read(path)?)
}

/// Binary grayscale PGM (P5). 8-bit samples, any maxval up to 255.
pub fn read_pgm<R: Read>(mut src: R) -> Result<ImageGrid> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut fields = [0usize; 3];
    let mut token = |bytes: &[u8]| -> Result<String> {
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
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    for f in fields.iter_mut() {
        *f = token(&bytes)?.parse().map_err(|_| Error::Format("bad PGM header field".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let raster =
        bytes.get(start..start + width * height).ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
    let values = raster.iter().map(|&p| (p as f32 / maxval as f32).min(1.0)).collect();
    ImageGrid::new(height, width, 1, values)
}

pub fn write_pgm<W: Write>(image: &ImageGrid, mut dst: W) -> Result<()> {
    if image.channels() != 1 {
        return Err(Error::Format("PGM output supports grayscale only".into()));
    }
    write!(dst, "P5\n{} {}\n255\n", image.width(), image.height())?;
    let raster: Vec<u8> = image.values().iter().map(|v| (v * 255.0).round() as u8).collect();
    dst.write_all(&raster)?;
    Ok(())
}

pub fn load_pgm(path: &Path) -> Result<ImageGrid> {
    read_pgm(fs::File::open(path)?)
}

pub fn save_pgm(image: &ImageGrid, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm(image, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn codebook_layout_is_exact() {
        let cb = Codebook::new(2, 1, 1, vec![0.25, 1.0]).unwrap();
        let bytes = codebook_to_bytes(&cb).unwrap();
        let mut expected = b"CBK1".to_vec();
        for v in [2u32, 1, 1, 1] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&0.25f32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(codebook_from_bytes(&bytes).unwrap(), cb);
    }

    #[test]
    fn dataset_layout_is_exact() {
        let ds = LatentDataset::new(3, vec![TokenGrid::new(1, 2, vec![2, 1]).unwrap()], Some(vec![7])).unwrap();
        let bytes = dataset_to_bytes(&ds).unwrap();
        let mut expected = b"LDS1".to_vec();
        for v in [3u32, 1, 2, 1, 1] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&[2, 0, 1, 0, 7, 0]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corrupt_files_rejected() {
        assert!(matches!(codebook_from_bytes(b"CBK2"), Err(Error::Format(_))));
        let cb = Codebook::uniform_levels(4).unwrap();
        let bytes = codebook_to_bytes(&cb).unwrap();
        assert!(matches!(codebook_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let ds = LatentDataset::new(4, vec![TokenGrid::new(1, 1, vec![5]).unwrap()], None);
        assert!(matches!(ds, Err(Error::Vocab { .. })));
    }

    #[test]
    fn pgm_with_comment_and_maxval() {
        let mut bytes = b"P5\n# made by hand\n2 1\n15\n".to_vec();
        bytes.extend_from_slice(&[0, 15]);
        let img = read_pgm(&bytes[..]).unwrap();
        assert_eq!((img.height(), img.width()), (1, 2));
        assert_eq!(img.values(), &[0.0, 1.0]);
        assert!(read_pgm(&b"P2\n1 1\n255\n0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn dataset_round_trip(tokens in proptest::collection::vec(0u16..300, 12), labeled in any::<bool>()) {
            let entries = vec![
                TokenGrid::new(2, 3, tokens[..6].to_vec()).unwrap(),
                TokenGrid::new(2, 3, tokens[6..].to_vec()).unwrap(),
            ];
            let ds = LatentDataset::new(300, entries, labeled.then(|| vec![1, 0])).unwrap();
            let bytes = dataset_to_bytes(&ds).unwrap();
            prop_assert_eq!(dataset_from_bytes(&bytes).unwrap(), ds);
        }

        #[test]
        fn pgm_round_trip(raster in proptest::collection::vec(any::<u8>(), 12)) {
            let img = ImageGrid::new(3, 4, 1, raster.iter().map(|p| *p as f32 / 255.0).collect()).unwrap();
            let mut buf = Vec::new();
            write_pgm(&img, &mut buf).unwrap();
            prop_assert_eq!(&buf[buf.len() - 12..], &raster[..]);
            prop_assert_eq!(read_pgm(&buf[..]).unwrap(), img);
        }
    }
}
