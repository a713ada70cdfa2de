//! Grayscale shape rasters and their placement on the grid.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{CellRect, Grid2D};

/// Row-major grayscale image, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterShape {
    pub width: usize,
    pub height: usize,
    pub gray: Vec<f64>,
}

impl RasterShape {
    pub fn new(width: usize, height: usize, gray: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig("raster dimensions must be >= 1".into()));
        }
        if gray.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, got: gray.len() });
        }
        if gray.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::InvalidConfig("raster intensities must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, gray })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.gray[y * self.width + x]
    }

    /// Reads a portable graymap (`P2` or `P5`), normalizing by maxval.
    pub fn from_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        parse_pgm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<RasterShape, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
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
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("bad maxval {maxval}"));
    }
    let count = width * height;
    let raw: Vec<usize> = match magic.as_str() {
        "P2" => (0..count).map(|_| token().and_then(num)).collect::<std::result::Result<_, _>>()?,
        "P5" => {
            let data = &bytes[(pos + 1).min(bytes.len())..];
            let wide = maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            if data.len() < need {
                return Err("truncated pixel data".into());
            }
            if wide {
                data.chunks_exact(2).take(count).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
            } else {
                data[..count].iter().map(|&b| b as usize).collect()
            }
        }
        other => return Err(format!("unsupported magic {other:?}")),
    };
    if raw.iter().any(|&v| v > maxval) {
        return Err("pixel exceeds maxval".into());
    }
    let gray = raw.into_iter().map(|v| v as f64 / maxval as f64).collect();
    RasterShape::new(width, height, gray).map_err(|e| e.to_string())
}

/// Places `shape` centered in `quadrant` by nearest-neighbour sampling and
/// returns grid-wide occupancy (`gray ≥ threshold`). Rasters larger than the
/// quadrant are shrunk to fit with their aspect ratio kept; smaller ones are
/// placed at native size.
pub fn rasterize_shape(shape: &RasterShape, grid: &Grid2D, quadrant: CellRect, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("threshold must be in (0, 1), got {threshold}")));
    }
    if quadrant.i0 + quadrant.width > grid.nx || quadrant.j0 + quadrant.height > grid.ny {
        return Err(Error::InvalidConfig("quadrant exceeds grid".into()));
    }
    let mut occ = vec![false; grid.len()];
    if quadrant.width == 0 || quadrant.height == 0 {
        return Ok(occ);
    }
    let scale = (quadrant.width as f64 / shape.width as f64)
        .min(quadrant.height as f64 / shape.height as f64)
        .min(1.0);
    let tw = ((shape.width as f64 * scale).round() as usize).clamp(1, quadrant.width);
    let th = ((shape.height as f64 * scale).round() as usize).clamp(1, quadrant.height);
    let ox = quadrant.i0 + (quadrant.width - tw) / 2;
    let oy = quadrant.j0 + (quadrant.height - th) / 2;
    for v in 0..th {
        let sy = (((v as f64 + 0.5) * shape.height as f64 / th as f64) as usize).min(shape.height - 1);
        for u in 0..tw {
            let sx = (((u as f64 + 0.5) * shape.width as f64 / tw as f64) as usize).min(shape.width - 1);
            if shape.at(sx, sy) >= threshold {
                // raster rows run top-down, grid rows bottom-up
                occ[grid.index(ox + u, oy + th - 1 - v)] = true;
            }
        }
    }
    Ok(occ)
}

// Seven-segment layout: a top, b upper right, c lower right, d bottom,
// e lower left, f upper left, g middle.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

/// Size of procedural digit rasters.
pub const DIGIT_SIZE: usize = 28;

/// Seven-segment digit on a 28×28 canvas with randomized stroke width and
/// small offsets.
pub fn procedural_digit<R: Rng + ?Sized>(digit: u8, rng: &mut R) -> RasterShape {
    let n = DIGIT_SIZE;
    let seg = SEGMENTS[(digit % 10) as usize];
    let stroke = rng.random_range(2..=4) as i64;
    let left = rng.random_range(5..=8) as i64;
    let right = n as i64 - rng.random_range(5..=8) as i64;
    let top = rng.random_range(2..=4) as i64;
    let bottom = n as i64 - rng.random_range(2..=4) as i64;
    let mid = (top + bottom) / 2 + rng.random_range(-1..=1);
    let mut gray = vec![0.0; n * n];
    let mut fill = |x0: i64, x1: i64, y0: i64, y1: i64| {
        for y in y0.max(0)..y1.min(n as i64) {
            for x in x0.max(0)..x1.min(n as i64) {
                gray[y as usize * n + x as usize] = 1.0;
            }
        }
    };
    let h = |fill: &mut dyn FnMut(i64, i64, i64, i64), y: i64| fill(left, right, y, y + stroke);
    let v = |fill: &mut dyn FnMut(i64, i64, i64, i64), x: i64, y0: i64, y1: i64| fill(x, x + stroke, y0, y1 + stroke);
    if seg[0] {
        h(&mut fill, top);
    }
    if seg[1] {
        v(&mut fill, right - stroke, top, mid);
    }
    if seg[2] {
        v(&mut fill, right - stroke, mid, bottom - stroke);
    }
    if seg[3] {
        h(&mut fill, bottom - stroke);
    }
    if seg[4] {
        v(&mut fill, left, mid, bottom - stroke);
    }
    if seg[5] {
        v(&mut fill, left, top, mid);
    }
    if seg[6] {
        h(&mut fill, mid);
    }
    RasterShape { width: n, height: n, gray }
}

/// Loads every `.pgm` file in `dir` in name order, skipping unreadable files
/// with a warning.
pub fn load_pgm_dir(dir: &Path) -> Result<Vec<RasterShape>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        match RasterShape::from_pgm(&p) {
            Ok(s) => out.push(s),
            Err(e) => log::warn!("skipping raster: {e}"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> Grid2D {
        Grid2D::centered(n, n, 0.01).unwrap()
    }

    #[test]
    fn trivial_rasters() {
        let g = grid(8);
        let q = g.quadrants()[0];
        let zero = RasterShape::filled(5, 5, 0.0).unwrap();
        assert!(rasterize_shape(&zero, &g, q, 0.5).unwrap().iter().all(|&b| !b));
        let one = RasterShape::filled(40, 40, 1.0).unwrap();
        let occ = rasterize_shape(&one, &g, q, 0.5).unwrap();
        assert_eq!(occ.iter().filter(|&&b| b).count(), q.width * q.height);
        for j in 0..4 {
            for i in 0..4 {
                assert!(occ[g.index(i, j)]);
            }
        }
    }

    #[test]
    fn checkerboard_into_matching_quadrant() {
        let g = grid(4);
        let q = g.quadrants()[3];
        let shape = RasterShape::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let occ = rasterize_shape(&shape, &g, q, 0.5).unwrap();
        assert_eq!(occ.iter().filter(|&&b| b).count(), 2);
        // top-left raster pixel lands on the upper row of the quadrant
        assert!(occ[g.index(2, 3)] && occ[g.index(3, 2)]);
    }

    #[test]
    fn large_raster_shrinks_with_aspect() {
        let g = grid(16);
        let q = g.quadrants()[1];
        let wide = RasterShape::filled(32, 16, 1.0).unwrap();
        let occ = rasterize_shape(&wide, &g, q, 0.5).unwrap();
        assert_eq!(occ.iter().filter(|&&b| b).count(), 8 * 4);
        assert!(rasterize_shape(&wide, &g, q, 1.0).is_err());
    }

    #[test]
    fn quadrants_never_overlap() {
        let g = grid(16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = vec![false; g.len()];
        for (k, q) in g.quadrants().into_iter().enumerate() {
            let occ = rasterize_shape(&procedural_digit(8, &mut rng), &g, q, 0.5).unwrap();
            assert!(occ.iter().any(|&b| b), "quadrant {k} empty");
            for (s, o) in seen.iter_mut().zip(&occ) {
                assert!(!(*s && *o));
                *s |= o;
            }
        }
    }

    #[test]
    fn digits_differ() {
        // same seed gives the same stroke geometry, and 8 lights every segment
        let one = procedural_digit(1, &mut ChaCha8Rng::seed_from_u64(1));
        let eight = procedural_digit(8, &mut ChaCha8Rng::seed_from_u64(1));
        let count = |s: &RasterShape| s.gray.iter().filter(|&&g| g > 0.5).count();
        assert!(count(&eight) > count(&one));
        assert!(one.gray.iter().zip(&eight.gray).all(|(a, b)| a <= b));
        assert!(one.gray.iter().all(|g| (0.0..=1.0).contains(g)));
    }

    #[test]
    fn pgm_formats() {
        let ascii = b"P2\n# comment\n3 2\n255\n0 128 255\n255 0 0\n";
        let s = parse_pgm(ascii).unwrap();
        assert_eq!((s.width, s.height), (3, 2));
        assert_eq!(s.at(2, 0), 1.0);
        assert!((s.at(1, 0) - 128.0 / 255.0).abs() < 1e-15);

        let mut bin = b"P5 2 2 255\n".to_vec();
        bin.extend_from_slice(&[0, 255, 255, 0]);
        let s = parse_pgm(&bin).unwrap();
        assert_eq!(s.gray, vec![0.0, 1.0, 1.0, 0.0]);

        assert!(parse_pgm(b"P5 2 2 255\n\x00").is_err());
        assert!(parse_pgm(b"P3 1 1 255 0 0 0").is_err());
        assert!(parse_pgm(b"P2 1 1 10 11").is_err());

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.pgm"), ascii).unwrap();
        std::fs::write(dir.path().join("b.pgm"), b"garbage").unwrap();
        std::fs::write(dir.path().join("c.txt"), b"ignored").unwrap();
        assert_eq!(load_pgm_dir(dir.path()).unwrap().len(), 1);
    }
}
