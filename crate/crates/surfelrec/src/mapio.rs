//! Binary surfel-map serialization.
//!
//! Layout (little-endian): magic "SMAP", version u32, feature_dim u32,
//! count u64, then per surfel f32 position (3), normal (3), radius, weight,
//! feature (feature_dim) followed by the u64 id. In-memory values are f64;
//! the format stores f32, so save→load→save is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Surfel, SurfelMap, Vec3};

const MAGIC: &[u8; 4] = b"SMAP";
const VERSION: u32 = 1;

pub fn save_map(map: &SurfelMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let mut write = |buf: &[u8]| w.write_all(buf).map_err(|e| Error::io(path.display().to_string(), e));
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(map.feature_dim as u32).to_le_bytes())?;
    write(&(map.len() as u64).to_le_bytes())?;
    for s in map.iter() {
        let fields = [
            s.position.x,
            s.position.y,
            s.position.z,
            s.normal.x,
            s.normal.y,
            s.normal.z,
            s.radius,
            s.weight,
        ];
        for v in fields.iter().chain(s.feature.iter()) {
            write(&(*v as f32).to_le_bytes())?;
        }
        write(&s.id.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_map(path: &Path) -> Result<SurfelMap> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let fmt = |what: &str| Error::Format(format!("{}: {what}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
    if &magic != MAGIC {
        return Err(fmt("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(|_| fmt("truncated header"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(fmt(&format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf).map_err(|_| fmt("truncated header"))?;
    let feature_dim = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf).map_err(|_| fmt("truncated header"))?;
    let count = u64::from_le_bytes(u64buf);

    let mut map = SurfelMap::new(feature_dim);
    let mut f32buf = [0u8; 4];
    let mut read_f = |r: &mut BufReader<File>| -> Result<f64> {
        r.read_exact(&mut f32buf).map_err(|_| fmt("truncated surfel record"))?;
        Ok(f32::from_le_bytes(f32buf) as f64)
    };
    for _ in 0..count {
        let p = Vec3::new(read_f(&mut r)?, read_f(&mut r)?, read_f(&mut r)?);
        let n = Vec3::new(read_f(&mut r)?, read_f(&mut r)?, read_f(&mut r)?);
        let radius = read_f(&mut r)?;
        let weight = read_f(&mut r)?;
        let mut feature = Vec::with_capacity(feature_dim);
        for _ in 0..feature_dim {
            feature.push(read_f(&mut r)?);
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(|_| fmt("truncated surfel record"))?;
        let id = u64::from_le_bytes(u64buf);
        map.insert_with_id(Surfel {
            id,
            position: p,
            normal: n,
            radius,
            weight,
            feature,
        })?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path.display().to_string(), e))? != 0 {
        return Err(fmt("trailing bytes after last surfel"));
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn random_map(rng: &mut ChaCha8Rng, n: usize, f: usize) -> SurfelMap {
        let mut map = SurfelMap::new(f);
        for _ in 0..n {
            // f32-representable values so the round trip is lossless.
            let mut g = || rng.gen_range(-4.0f32..4.0) as f64;
            let n3 = Vec3::new(g(), g(), g() + 8.0);
            map.insert(Surfel {
                id: 0,
                position: Vec3::new(g(), g(), g()),
                normal: Vec3::new(
                    (n3.x / n3.norm()) as f32 as f64,
                    (n3.y / n3.norm()) as f32 as f64,
                    (n3.z / n3.norm()) as f32 as f64,
                ),
                radius: g().abs() + 0.01,
                weight: g().abs() + 0.01,
                feature: (0..f).map(|_| g()).collect(),
            });
        }
        map
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.smap");
        let map = SurfelMap::new(32);
        save_map(&map, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 4 + 4 + 4 + 8);
        let back = load_map(&path).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.feature_dim, 32);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dir = tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.smap"), dir.path().join("b.smap"));
        let map = random_map(&mut rng, 1000, 32);
        save_map(&map, &p1).unwrap();
        let back = load_map(&p1).unwrap();
        assert_eq!(back.len(), map.len());
        save_map(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        for (a, b) in map.iter().zip(back.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.position, b.position);
            assert_eq!(a.feature, b.feature);
        }
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.smap");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        save_map(&random_map(&mut rng, 10, 8), &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_map(&path), Err(Error::Format(_))));

        std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load_map(&path), Err(Error::Format(_))));
    }
}
