//! PCLD point-cloud files.
//!
//! ```text
//! "PCLD"  u32 version  u64 N  u32 attr_dim  u32 flags
//! N x 3 f32 coords   N x attr_dim f32 attrs
//! [N x u16 point labels]  (flags bit 0)
//! [u16 cloud label]        (flags bit 1)
//! ```
//!
//! Everything is little-endian. Values are stored as `f32` and widened to
//! `f64` on load, so a cloud round-trips exactly when its values are
//! representable in `f32`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const MAGIC: &[u8; 4] = b"PCLD";
pub const VERSION: u32 = 1;
const FLAG_POINT_LABELS: u32 = 1;
const FLAG_CLOUD_LABEL: u32 = 2;
const HEADER: usize = 24;

pub fn encode(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut flags = 0;
    if cloud.point_labels().is_some() {
        flags |= FLAG_POINT_LABELS;
    }
    if cloud.cloud_label().is_some() {
        flags |= FLAG_CLOUD_LABEL;
    }
    let mut out = Vec::with_capacity(HEADER + n * (3 + cloud.attr_dim()) * 4 + n * 2 + 2);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(cloud.attr_dim() as u32).to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    for v in cloud.coords().iter().flatten().chain(cloud.attrs()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    if let Some(labels) = cloud.point_labels() {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    if let Some(l) = cloud.cloud_label() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

/// Parses PCLD bytes; `path` only appears in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let fail = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(fail(pos, format!("truncated while reading {what}")));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    if take(4, "magic")? != MAGIC {
        return Err(fail(0, "bad magic, expected PCLD".into()));
    }
    let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(take(8, "point count")?.try_into().unwrap());
    let attr_dim = u32::from_le_bytes(take(4, "attribute width")?.try_into().unwrap()) as usize;
    let flags = u32::from_le_bytes(take(4, "flags")?.try_into().unwrap());
    if flags & !(FLAG_POINT_LABELS | FLAG_CLOUD_LABEL) != 0 {
        return Err(fail(20, format!("unknown flag bits {flags:#x}")));
    }
    let n = usize::try_from(n)
        .ok()
        .filter(|&n| n.checked_mul(3 + attr_dim).and_then(|v| v.checked_mul(4)).is_some_and(|b| b <= bytes.len()))
        .ok_or_else(|| fail(8, format!("point count {n} does not fit the file")))?;

    let floats = |raw: &[u8]| -> Vec<f64> {
        raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
    };
    let coords = floats(take(n * 12, "coordinates")?)
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let attrs = floats(take(n * attr_dim * 4, "attributes")?);
    let point_labels = if flags & FLAG_POINT_LABELS != 0 {
        let raw = take(n * 2, "point labels")?;
        Some(raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
    } else {
        None
    };
    let cloud_label = if flags & FLAG_CLOUD_LABEL != 0 {
        let raw = take(2, "cloud label")?;
        Some(u16::from_le_bytes([raw[0], raw[1]]))
    } else {
        None
    };
    if pos != bytes.len() {
        return Err(fail(pos, "trailing bytes after cloud".into()));
    }
    PointCloud::from_parts(coords, attrs, attr_dim, point_labels, cloud_label)
}

pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, encode(cloud)).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(n: usize, a: usize, labels: bool, cls: Option<u16>) -> PointCloud {
        let coords = (0..n).map(|i| [i as f64 * 0.5, -(i as f64), 0.25]).collect();
        let attrs = (0..n * a).map(|i| i as f64 / 8.0).collect();
        let mut c = PointCloud::with_attrs(coords, attrs, a).unwrap();
        if labels {
            c = c.with_point_labels((0..n as u16).collect()).unwrap();
        }
        if let Some(l) = cls {
            c = c.with_cloud_label(l);
        }
        c
    }

    #[test]
    fn header_layout() {
        let b = encode(&cloud(2, 1, true, Some(3)));
        assert_eq!(&b[..4], b"PCLD");
        assert_eq!(u64::from_le_bytes(b[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 3);
        assert_eq!(b.len(), 24 + 2 * 4 * 4 + 2 * 2 + 2);
        assert_eq!(u16::from_le_bytes(b[b.len() - 2..].try_into().unwrap()), 3);
    }

    #[test]
    fn extra_channels_survive_positionally() {
        let c = cloud(5, 2, false, None);
        let back = decode(&encode(&c), Path::new("m")).unwrap();
        assert_eq!(back.attr_dim(), 2);
        assert_eq!(back.attr_row(3), c.attr_row(3));
        assert_eq!(back, c);
    }

    #[test]
    fn damaged_files_are_format_errors() {
        let b = encode(&cloud(4, 1, true, Some(1)));
        let offset = |bytes: &[u8]| match decode(bytes, Path::new("f")) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected a format error, got {other:?}"),
        };
        assert_eq!(offset(&b[..10]), 8);
        assert_eq!(offset(&b[..b.len() - 1]), (b.len() - 2) as u64);
        let mut bad = b.clone();
        bad[1] = b'X';
        assert_eq!(offset(&bad), 0);
        let mut bad = b.clone();
        bad[4] = 2;
        assert_eq!(offset(&bad), 4);
        let mut bad = b.clone();
        bad[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert_eq!(offset(&bad), 8);
    }

    #[test]
    fn files_on_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pcld");
        let c = cloud(7, 0, true, Some(2));
        save_cloud(&path, &c).unwrap();
        assert_eq!(load_cloud(&path).unwrap(), c);
        assert!(matches!(load_cloud(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            n in 1usize..20,
            a in 0usize..3,
            seed in any::<u64>(),
            labels in any::<bool>(),
            cls in proptest::option::of(any::<u16>()),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut f = || rng.random_range(-4.0f32..4.0) as f64;
            let coords = (0..n).map(|_| [f(), f(), f()]).collect();
            let attrs = (0..n * a).map(|_| f()).collect();
            let mut c = PointCloud::with_attrs(coords, attrs, a).unwrap();
            if labels {
                c = c.with_point_labels((0..n).map(|i| (i * 7) as u16).collect()).unwrap();
            }
            if let Some(l) = cls {
                c = c.with_cloud_label(l);
            }
            let bytes = encode(&c);
            let back = decode(&bytes, Path::new("p")).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
