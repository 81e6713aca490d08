//! Regenerate the committed smoke-scenario textures under `assets/`.
//!
//! Usage: cargo run -p seqcloak-core --example gen_smoke_assets [out_dir]

use std::path::PathBuf;

use seqcloak_core::smoke::{smoke_texture, SMOKE_GARMENTS};

fn main() -> seqcloak_core::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "assets".into()).into();
    std::fs::create_dir_all(&out)?;
    for id in SMOKE_GARMENTS {
        let tex = smoke_texture(id)?;
        let texture = out.join(format!("smoke_{id}.png"));
        let mask = out.join(format!("smoke_{id}_mask.png"));
        tex.save_png(&texture, Some(&mask))?;
        println!("wrote {} and {}", texture.display(), mask.display());
    }
    Ok(())
}
