use super::{SimError, SyntheticShot};

const BACKGROUND: u8 = 40;
const DISC: u8 = 230;
const DISC_RADIUS: f64 = 6.0;

/// Flat 8-bit grayscale image of a shot: one bright disc per visible
/// landmark on a dark background, PNG-encoded.
pub fn render_shot_png(shot: &SyntheticShot) -> Result<Vec<u8>, SimError> {
    let size = shot.frustum.intrinsics.image_size;
    let (w, h) = (size.x.round() as u32, size.y.round() as u32);
    let mut pixels = vec![BACKGROUND; (w * h) as usize];
    for lm in shot.landmark_pixels.values().filter(|l| l.visible) {
        let Some(c) = lm.pixel else { continue };
        let (x0, x1) = ((c.x - DISC_RADIUS).floor().max(0.0) as u32, ((c.x + DISC_RADIUS).ceil() as u32).min(w));
        let (y0, y1) = ((c.y - DISC_RADIUS).floor().max(0.0) as u32, ((c.y + DISC_RADIUS).ceil() as u32).min(h));
        for y in y0..y1 {
            for x in x0..x1 {
                // pixel (x, y) covers [x, x + 1) x [y, y + 1)
                let (dx, dy) = (x as f64 + 0.5 - c.x, y as f64 + 0.5 - c.y);
                if dx * dx + dy * dy <= DISC_RADIUS * DISC_RADIUS {
                    pixels[(y * w + x) as usize] = DISC;
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, w, h);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| SimError::Io(e.to_string()))?;
    writer.write_image_data(&pixels).map_err(|e| SimError::Io(e.to_string()))?;
    writer.finish().map_err(|e| SimError::Io(e.to_string()))?;
    Ok(out)
}
