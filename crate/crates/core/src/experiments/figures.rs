use std::path::{Path, PathBuf};

use crate::data::{export_png, Direction, Split, UnpairedDataset};
use crate::model::Translator;
use crate::trainer::figure_sets;
use crate::Result;

/// Writes `<id>_<direction>_{real,synth,err}.png` for every test pair in
/// both directions. `g` maps X to Y, `f` maps Y to X.
pub fn emit_figures(
    g: &dyn Translator,
    f: &dyn Translator,
    data: &UnpairedDataset,
    split: &Split,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (direction, tr) in [(Direction::A2b, g), (Direction::B2a, f)] {
        for set in figure_sets(tr, data, split, direction)? {
            for (kind, image) in [("real", &set.real), ("synth", &set.synth), ("err", &set.error)] {
                let path = out.join(format!("{}_{direction}_{kind}.png", set.id));
                export_png(image, &path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
