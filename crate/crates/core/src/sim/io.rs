//! Debug exports for meshes and pose tracks.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::geom::Vec3;
use crate::sim::{BodyPose, JOINT_COUNT};
use crate::Result;

/// Write a Wavefront OBJ. Faces are 1-based; when UVs are supplied they are
/// parallel to the vertex array, so `f` entries reuse one index per corner.
pub fn write_obj(
    path: &Path,
    vertices: &[Vec3],
    uvs: Option<&[[f64; 2]]>,
    faces: &[[u32; 3]],
) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for v in vertices {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2])?;
    }
    if let Some(uvs) = uvs {
        for uv in uvs {
            writeln!(w, "vt {} {}", uv[0], uv[1])?;
        }
        for f in faces {
            writeln!(
                w,
                "f {}/{} {}/{} {}/{}",
                f[0] + 1,
                f[0] + 1,
                f[1] + 1,
                f[1] + 1,
                f[2] + 1,
                f[2] + 1
            )?;
        }
    } else {
        for f in faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write a pose track as CSV: one row per frame, root translation followed by
/// per-joint Euler angles.
pub fn write_pose_csv(path: &Path, poses: &[BodyPose]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "frame,root_x,root_y,root_z")?;
    for j in 0..JOINT_COUNT {
        write!(w, ",j{j}_rx,j{j}_ry,j{j}_rz")?;
    }
    writeln!(w)?;
    for (t, pose) in poses.iter().enumerate() {
        write!(w, "{t},{},{},{}", pose.root[0], pose.root[1], pose.root[2])?;
        for j in 0..JOINT_COUNT {
            let a = pose.joint_angles[j];
            write!(w, ",{},{},{}", a[0], a[1], a[2])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
