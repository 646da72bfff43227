//! Estimator checkpoints inside the `ADRW` container.
//!
//! ```text
//! "ADRW" | version u32 | role u8 |
//!   obs_dim u32 | act_dim u32 | latent_dim u32 | codebook_size u32 | hidden_dim u32 |
//!   hidden_layers u32 | quantize u8 | commitment f64 | dead_code_steps u64 |
//!   encoder block | decoder block | decoder log-variance f64[act_dim] |
//!   codebook rows u32 | cols u32 | f64[rows*cols]
//! ```
//!
//! Blocks use the layer layout of plain parameter checkpoints (layer count, then layers).

use std::path::Path;

use super::{DensityEstimator, EstimatorConfig, EstimatorRole};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_mlp_block, write_mlp_block, ByteReader, ByteWriter, WEIGHTS_MAGIC, WEIGHTS_VERSION};
use crate::nn::Mat;

pub fn estimator_to_bytes(est: &DensityEstimator) -> Result<Vec<u8>> {
    let c = est.config();
    let mut w = ByteWriter::new();
    w.bytes(WEIGHTS_MAGIC);
    w.u32(WEIGHTS_VERSION);
    w.u8(est.role().tag());
    for n in [c.obs_dim, c.act_dim, c.latent_dim, c.codebook_size, c.hidden_dim, c.hidden_layers] {
        w.len_u32(n)?;
    }
    w.u8(c.quantize as u8);
    w.f64(c.commitment);
    w.u64(c.dead_code_steps);
    write_mlp_block(&mut w, est.encoder())?;
    write_mlp_block(&mut w, est.decoder())?;
    w.f64s(est.decoder_log_var().data());
    w.len_u32(est.codebook().rows())?;
    w.len_u32(est.codebook().cols())?;
    w.f64s(est.codebook().data());
    Ok(w.into_inner())
}

pub fn estimator_from_bytes(bytes: &[u8]) -> Result<DensityEstimator> {
    let mut r = ByteReader::new(bytes);
    r.magic(WEIGHTS_MAGIC)?;
    r.version(WEIGHTS_VERSION)?;
    let at = r.offset();
    let tag = r.u8("role")?;
    let role = EstimatorRole::from_tag(tag)
        .ok_or_else(|| Error::format(at, format!("unknown estimator role {tag}")))?;
    let mut dims = [0usize; 6];
    for (d, name) in dims.iter_mut().zip(["obs_dim", "act_dim", "latent_dim", "codebook_size", "hidden_dim", "hidden_layers"]) {
        *d = r.u32(name)? as usize;
    }
    let at = r.offset();
    let quantize = match r.u8("quantize flag")? {
        0 => false,
        1 => true,
        v => return Err(Error::format(at, format!("quantize flag {v} is not 0/1"))),
    };
    let commitment = r.f64("commitment")?;
    let dead_code_steps = r.u64("dead_code_steps")?;
    let cfg = EstimatorConfig {
        obs_dim: dims[0],
        act_dim: dims[1],
        latent_dim: dims[2],
        codebook_size: dims[3],
        hidden_dim: dims[4],
        hidden_layers: dims[5],
        quantize,
        commitment,
        dead_code_steps,
    };
    let encoder = read_mlp_block(&mut r)?;
    let decoder = read_mlp_block(&mut r)?;
    let lv = r.f64s(cfg.act_dim, "decoder log-variance")?;
    let at = r.offset();
    let rows = r.u32("codebook rows")? as usize;
    let cols = r.u32("codebook cols")? as usize;
    let cb = r.f64s(rows * cols, "codebook")?;
    if !r.is_at_end() {
        return Err(Error::format(r.offset(), "trailing bytes after codebook"));
    }
    DensityEstimator::from_parts(
        cfg,
        role,
        encoder,
        decoder,
        Mat::row_vector(&lv),
        Mat::from_vec(rows, cols, cb)?,
    )
    .map_err(|e| Error::format(at, e.to_string()))
}

pub fn save_estimator(est: &DensityEstimator, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, estimator_to_bytes(est)?)?;
    Ok(())
}

pub fn load_estimator(path: impl AsRef<Path>) -> Result<DensityEstimator> {
    estimator_from_bytes(&std::fs::read(path)?)
}
