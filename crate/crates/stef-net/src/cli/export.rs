//! Attention-weight export: CSV rows and portable graymaps for heatmap
//! rendering.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Write a `[T, W, H]` attention stack as CSV rows `t,i,j,weight`.
/// For every cell the weights sum to 1 over `t`.
pub fn write_attention_csv(path: &Path, attention: &Tensor) -> Result<()> {
    let [t_len, w, h] = dims(attention)?;
    let mut out = String::from("t,i,j,weight\n");
    for t in 0..t_len {
        for i in 0..w {
            for j in 0..h {
                writeln!(out, "{t},{i},{j},{}", attention.at(&[t, i, j]))
                    .expect("string write cannot fail");
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write one time step of a `[T, W, H]` attention stack as an ASCII
/// portable graymap (P2), scaled so the step's largest weight maps to 255.
pub fn write_attention_pgm(path: &Path, attention: &Tensor, t: usize) -> Result<()> {
    let [t_len, w, h] = dims(attention)?;
    if t >= t_len {
        return Err(Error::Usage(format!(
            "time step {t} out of range for {t_len} attention steps"
        )));
    }
    let mut max = 0.0f64;
    for i in 0..w {
        for j in 0..h {
            max = max.max(attention.at(&[t, i, j]));
        }
    }
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    // Raster rows run over j (latitude), columns over i (longitude).
    let mut out = format!("P2\n{w} {h}\n255\n");
    for j in (0..h).rev() {
        let mut row = String::new();
        for i in 0..w {
            let v = (attention.at(&[t, i, j]) * scale).round() as u32;
            if i > 0 {
                row.push(' ');
            }
            write!(row, "{}", v.min(255)).expect("string write cannot fail");
        }
        out.push_str(&row);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn dims(attention: &Tensor) -> Result<[usize; 3]> {
    match attention.shape() {
        [t, w, h] => Ok([*t, *w, *h]),
        other => Err(Error::dim(format!(
            "attention export expects a [T, W, H] tensor, got {other:?}"
        ))),
    }
}
