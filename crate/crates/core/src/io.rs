//! DN map files and CSV output.
//!
//! DN file: text header lines `calderon-dn 1`, `mesh_hash <hex>`, `boundary_nodes <n>`,
//! `potential_hash <hex>`, `end`, followed by n² little-endian f64 (the bilinear form, row-major)
//! and n little-endian f64 (the lumped boundary masses).

use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use faer::Mat;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::DnMap;
use crate::geometry::{hex, Mesh};

const MAGIC: &str = "calderon-dn 1";

pub fn encode_dn(dn: &DnMap) -> Vec<u8> {
    let n = dn.boundary_count();
    let mut out = format!("{MAGIC}\nmesh_hash {}\nboundary_nodes {n}\npotential_hash {}\nend\n", dn.mesh_hash, dn.potential_hash).into_bytes();
    out.reserve(8 * n * (n + 1));
    for i in 0..n {
        for j in 0..n {
            out.extend_from_slice(&dn.form[(i, j)].to_le_bytes());
        }
    }
    for m in &dn.boundary_mass {
        out.extend_from_slice(&m.to_le_bytes());
    }
    out
}

pub fn decode_dn(bytes: &[u8]) -> Result<DnMap> {
    let mut reader = std::io::Cursor::new(bytes);
    let mut header = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Io("DN file ends inside its header".into()));
        }
        let line = line.trim_end().to_string();
        if line == "end" {
            break;
        }
        header.push(line);
    }
    if header.first().map(String::as_str) != Some(MAGIC) {
        return Err(Error::Io(format!("not a DN file (expected '{MAGIC}')")));
    }
    let field = |key: &str| -> Result<String> {
        header
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')).map(str::to_string))
            .ok_or_else(|| Error::Io(format!("DN header lacks '{key}'")))
    };
    let n: usize = field("boundary_nodes")?.parse().map_err(|_| Error::Io("bad boundary_nodes".into()))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != 8 * n * (n + 1) {
        return Err(Error::Io(format!("DN payload has {} bytes, expected {}", payload.len(), 8 * n * (n + 1))));
    }
    let value = |k: usize| f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().unwrap());
    Ok(DnMap {
        form: Mat::from_fn(n, n, |i, j| value(i * n + j)),
        boundary_mass: (0..n).map(|k| value(n * n + k)).collect(),
        mesh_hash: field("mesh_hash")?,
        potential_hash: field("potential_hash")?,
    })
}

/// Writes the DN file and returns the SHA-256 of its bytes.
pub fn write_dn(path: &Path, dn: &DnMap) -> Result<String> {
    let bytes = encode_dn(dn);
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Reads a DN file and returns it with its SHA-256.
pub fn read_dn(path: &Path) -> Result<(DnMap, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok((decode_dn(&bytes)?, hex(&Sha256::digest(&bytes))))
}

/// Checks that a DN map was produced on this mesh.
pub fn check_dn_mesh(dn: &DnMap, mesh: &Mesh) -> Result<()> {
    if dn.mesh_hash != mesh.hash() {
        return Err(Error::ShapeMismatch(format!("DN map built on mesh {} but the configuration gives mesh {}", dn.mesh_hash, mesh.hash())));
    }
    Ok(())
}

/// CSV text from a header and rows of already formatted cells.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_dn_map, Potential};
    use crate::geometry::{CylinderGeometry, Resolution};

    #[test]
    fn dn_roundtrip_is_bit_exact() {
        let mesh = CylinderGeometry::default().build_mesh(Resolution::new(2, 4)).unwrap();
        let dn = assemble_dn_map(&mesh, &Potential::constant(&mesh, 0.5)).unwrap();
        let back = decode_dn(&encode_dn(&dn)).unwrap();
        assert_eq!(back.mesh_hash, dn.mesh_hash);
        assert_eq!(back.potential_hash, dn.potential_hash);
        assert_eq!(back.boundary_mass, dn.boundary_mass);
        assert!((0..dn.boundary_count()).all(|i| (0..dn.boundary_count()).all(|j| back.form[(i, j)] == dn.form[(i, j)])));
        check_dn_mesh(&back, &mesh).unwrap();
    }

    #[test]
    fn corrupt_files_rejected() {
        assert!(decode_dn(b"hello\nend\n").is_err());
        let mesh = CylinderGeometry::default().build_mesh(Resolution::new(2, 4)).unwrap();
        let mut bytes = encode_dn(&assemble_dn_map(&mesh, &Potential::zero(&mesh)).unwrap());
        bytes.truncate(bytes.len() - 3);
        assert!(decode_dn(&bytes).is_err());
    }
}
