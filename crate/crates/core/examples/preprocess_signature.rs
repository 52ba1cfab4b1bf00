//! Cleans, centres, inverts and downsizes one synthetic signature, then
//! writes the before/after rasters as PGM files.

use sigverify::preprocess::{
    center_on_canvas, invert_normalize, otsu_threshold, preprocess_image, remove_background,
    write_pgm, PreprocessConfig,
};
use sigverify::synth::{render_sample, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scan = render_sample(&SynthConfig::default(), 3, false, 0);
    let cfg = PreprocessConfig {
        canvas_height: 80,
        canvas_width: 120,
        out_height: 32,
        out_width: 48,
    };
    let t = otsu_threshold(&scan);
    let cleaned = remove_background(&scan);
    let ink = cleaned.pixels().iter().filter(|&&p| p < 255).count();
    println!("scan {}x{}, Otsu threshold {t}, {ink} ink pixels", scan.height(), scan.width());

    let centred = center_on_canvas(&cleaned, &cfg)?;
    let out = preprocess_image(&scan, &cfg)?;
    let mass: f64 = out.values().iter().sum();
    println!("network input {}x{}, total ink {mass:.1}", out.height(), out.width());

    let dir = std::env::temp_dir().join("sigverify-preprocess");
    std::fs::create_dir_all(&dir)?;
    write_pgm(&invert_normalize(&centred), dir.join("centred.pgm"))?;
    write_pgm(&out, dir.join("input.pgm"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
