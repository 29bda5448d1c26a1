use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::ingest::image::read_netpbm_header;
use crate::labels::{ClassId, TissueLabelMap};

fn check_classes(data: &[ClassId], label_map: &TissueLabelMap) -> Result<()> {
    if let Some(bad) = data.iter().find(|&&c| !label_map.contains(c)) {
        return Err(Error::invalid(format!(
            "class id {bad} not in label map of {} classes",
            label_map.len()
        )));
    }
    Ok(())
}

/// Per-cell tissue labels at embedding-grid resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    cells: Vec<ClassId>,
    label_map: TissueLabelMap,
}

impl LabelGrid {
    pub fn new(
        height: usize,
        width: usize,
        cells: Vec<ClassId>,
        label_map: TissueLabelMap,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("label grid must be non-empty"));
        }
        if cells.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                found: cells.len(),
            });
        }
        check_classes(&cells, &label_map)?;
        Ok(Self {
            height,
            width,
            cells,
            label_map,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[ClassId] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> ClassId {
        self.cells[row * self.width + col]
    }

    pub fn label_map(&self) -> &TissueLabelMap {
        &self.label_map
    }
}

/// Full-resolution class raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    width: usize,
    height: usize,
    data: Vec<ClassId>,
    label_map: TissueLabelMap,
}

impl ClassMask {
    pub fn new(
        width: usize,
        height: usize,
        data: Vec<ClassId>,
        label_map: TissueLabelMap,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask must be non-empty"));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                found: data.len(),
            });
        }
        check_classes(&data, &label_map)?;
        Ok(Self {
            width,
            height,
            data,
            label_map,
        })
    }

    pub fn filled(
        width: usize,
        height: usize,
        class: ClassId,
        label_map: TissueLabelMap,
    ) -> Result<Self> {
        Self::new(width, height, vec![class; width * height], label_map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[ClassId] {
        &self.data
    }

    pub fn label_map(&self) -> &TissueLabelMap {
        &self.label_map
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.data[y * self.width + x]
    }

    /// Panics if `class` is not in the label map.
    pub fn set(&mut self, x: usize, y: usize, class: ClassId) {
        assert!(self.label_map.contains(class), "class {class} not in label map");
        self.data[y * self.width + x] = class;
    }

    /// Pixel count per class id, indexed by id.
    pub fn class_histogram(&self) -> Vec<u64> {
        let mut h = vec![0u64; self.label_map.len()];
        for &c in &self.data {
            h[c as usize] += 1;
        }
        h
    }
}

/// Nearest-neighbour expansion: every cell becomes a constant
/// `factor x factor` block.
pub fn upsample_mask(grid: &LabelGrid, factor: usize) -> Result<ClassMask> {
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be >= 1"));
    }
    let (w, h) = (grid.width * factor, grid.height * factor);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = y / factor;
        for x in 0..w {
            data.push(grid.cells[row * grid.width + x / factor]);
        }
    }
    ClassMask::new(w, h, data, grid.label_map.clone())
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskSidecar {
    label_map: TissueLabelMap,
    width: usize,
    height: usize,
}

/// JSON sidecar holding the label map: same stem, `.json`.
pub fn mask_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_pgm(mask: &ClassMask) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(mask.data.len() + 20);
    write!(out, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    for &c in &mask.data {
        let byte = u8::try_from(c).map_err(|_| {
            Error::invalid(format!("class id {c} does not fit an 8-bit mask"))
        })?;
        out.push(byte);
    }
    Ok(out)
}

/// Reads raw class indices from a P5 image. Only `maxval == 255` is accepted.
pub fn decode_pgm<R: BufRead>(r: &mut R) -> Result<(usize, usize, Vec<ClassId>)> {
    let header = read_netpbm_header(r, "P5")?;
    if header.maxval != 255 {
        return Err(Error::format(
            "PGM",
            format!("maxval {} unsupported (need 255)", header.maxval),
        ));
    }
    let mut bytes = vec![0u8; header.width * header.height];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::format("PGM", format!("truncated pixel data: {e}")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format("PGM", "trailing bytes"));
    }
    Ok((
        header.width,
        header.height,
        bytes.into_iter().map(ClassId::from).collect(),
    ))
}

pub fn write_mask(mask: &ClassMask, path: &Path) -> Result<()> {
    let pgm = encode_pgm(mask)?;
    let sidecar = MaskSidecar {
        label_map: mask.label_map.clone(),
        width: mask.width,
        height: mask.height,
    };
    fsutil::write_atomic(path, &pgm)?;
    fsutil::write_json(&mask_sidecar_path(path), &sidecar)
}

pub fn read_mask(path: &Path) -> Result<ClassMask> {
    let bytes = fsutil::read(path)?;
    let (width, height, data) = decode_pgm(&mut bytes.as_slice())?;
    let sidecar: MaskSidecar = fsutil::read_json(&mask_sidecar_path(path))?;
    if sidecar.width != width || sidecar.height != height {
        return Err(Error::format(
            "mask sidecar",
            format!(
                "sidecar says {}x{}, image is {width}x{height}",
                sidecar.width, sidecar.height
            ),
        ));
    }
    ClassMask::new(width, height, data, sidecar.label_map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize) -> TissueLabelMap {
        TissueLabelMap::numbered(n).unwrap()
    }

    #[test]
    fn upsample_examples() {
        let g = LabelGrid::new(1, 1, vec![0], labels(1)).unwrap();
        let m = upsample_mask(&g, 32).unwrap();
        assert_eq!((m.width(), m.height()), (32, 32));
        assert!(m.data().iter().all(|&c| c == 0));

        let g = LabelGrid::new(2, 3, vec![0, 1, 2, 2, 1, 0], labels(3)).unwrap();
        let m = upsample_mask(&g, 1).unwrap();
        assert_eq!(m.data(), g.cells());

        let g = LabelGrid::new(2, 2, vec![0, 1, 2, 3], labels(4)).unwrap();
        let m = upsample_mask(&g, 32).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let expect = (y / 32 * 2 + x / 32) as ClassId;
                assert_eq!(m.get(x, y), expect);
            }
        }
        assert!(upsample_mask(&g, 0).is_err());
    }

    proptest! {
        #[test]
        fn upsample_scales_histogram(cells in prop::collection::vec(0u16..5, 1..60), width in 1usize..8, factor in 1usize..9) {
            let height = cells.len() / width;
            prop_assume!(height > 0);
            let cells = cells[..height * width].to_vec();
            let g = LabelGrid::new(height, width, cells, labels(5)).unwrap();
            let m = upsample_mask(&g, factor).unwrap();
            let mut grid_hist = vec![0u64; 5];
            for &c in g.cells() { grid_hist[c as usize] += 1; }
            let expected: Vec<u64> = grid_hist.iter().map(|n| n * (factor * factor) as u64).collect();
            prop_assert_eq!(m.class_histogram(), expected);
        }
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = ClassMask::filled(5, 3, 0, labels(17)).unwrap();
        m.set(4, 2, 16);
        m.set(0, 1, 3);
        let p = dir.path().join("m.pgm");
        write_mask(&m, &p).unwrap();
        assert!(dir.path().join("m.json").exists());
        assert_eq!(read_mask(&p).unwrap(), m);
    }

    #[test]
    fn pgm_errors() {
        let big = TissueLabelMap::numbered(300).unwrap();
        let m = ClassMask::filled(1, 1, 299, big).unwrap();
        assert!(encode_pgm(&m).is_err());
        assert!(decode_pgm(&mut &b"P5\n1 1\n15\n\x01"[..]).is_err());
        assert!(decode_pgm(&mut &b"P5\n2 1\n255\n\x01"[..]).is_err());
        assert!(decode_pgm(&mut &b"P6\n1 1\n255\n\x01"[..]).is_err());
        assert_eq!(decode_pgm(&mut &b"P5 1 1 255\n\x07"[..]).unwrap().2, vec![7]);
    }

    #[test]
    fn class_validation() {
        assert!(ClassMask::new(1, 1, vec![2], labels(2)).is_err());
        assert!(LabelGrid::new(1, 2, vec![0], labels(2)).is_err());
    }
}
