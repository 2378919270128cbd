//! File access: atomic writes and IDX datasets.

use std::fs;
use std::io::Write;
use std::path::Path;

use symmetria_core::data::idx::{dataset_from_bytes, encode, IdxArray};
use symmetria_core::data::Dataset;

use crate::error::{CliError, Result};

/// Write `bytes` to a temporary sibling, flush it to disk, then rename it
/// over `path`, so readers see either the old file or the complete new one.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::Io(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Load an image/label IDX pair. Pixels keep their raw values; callers
/// standardise afterwards.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (img, lab) = (read(images)?, read(labels)?);
    dataset_from_bytes(&img, &lab)
        .map_err(|e| CliError::Format(format!("{} / {}: {e}", images.display(), labels.display())))
}

/// Write `N x H x W` byte images and their labels as an IDX pair.
pub fn write_idx(images: &Path, labels: &Path, dims: [usize; 3], pixels: &[u8], classes: &[u8]) -> Result<()> {
    let img = IdxArray { dims: dims.to_vec(), data: pixels.to_vec() };
    let lab = IdxArray { dims: vec![classes.len()], data: classes.to_vec() };
    for a in [&img, &lab] {
        let n: usize = a.dims.iter().product();
        if n != a.data.len() {
            return Err(CliError::Format(format!("dims {:?} need {n} bytes, got {}", a.dims, a.data.len())));
        }
    }
    atomic_write(images, &encode(&img))?;
    atomic_write(labels, &encode(&lab))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn idx_pair_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("img"), dir.path().join("lab"));
        let pixels: Vec<u8> = (0..3 * 2 * 4).map(|v| (v * 11) as u8).collect();
        write_idx(&i, &l, [3, 2, 4], &pixels, &[2, 0, 1]).unwrap();
        let d = load_idx(&i, &l).unwrap();
        assert_eq!(d.labels, vec![2, 0, 1]);
        assert_eq!(d.image_shape(), [1, 2, 4]);
        let back: Vec<u8> = d.images.data().iter().map(|&v| v as u8).collect();
        assert_eq!(back, pixels);
        assert!(write_idx(&i, &l, [3, 2, 4], &pixels[1..], &[0, 0, 0]).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_idx(Path::new("/nonexistent/x"), Path::new("/nonexistent/y")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x"));
    }
}
