//! 8-bit grayscale PNG output, ink dark on a white background.

/// Maps an ink probability in `[0, 1]` to a gray level (1.0 is black).
pub fn gray_level(p: f32) -> u8 {
    255 - (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_gray(pixels: &[f32], width: usize, height: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count must match the image size");
    let levels: Vec<u8> = pixels.iter().map(|&p| gray_level(p)).collect();
    encode_levels(&levels, width, height)
}

pub fn encode_levels(levels: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().expect("writing to a Vec cannot fail");
    w.write_image_data(levels).expect("buffer size checked by caller");
    w.finish().expect("writing to a Vec cannot fail");
    out
}

/// Tiles equally sized images into a `rows × cols` grid with a 2-pixel white gutter.
pub fn grid(images: &[Vec<f32>], side: usize, cols: usize) -> (Vec<u8>, usize, usize) {
    const GAP: usize = 2;
    let cols = cols.max(1);
    let rows = images.len().div_ceil(cols);
    let width = cols * side + (cols - 1) * GAP;
    let height = rows * side + rows.saturating_sub(1) * GAP;
    let mut levels = vec![255u8; width * height];
    for (i, img) in images.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let (y0, x0) = (r * (side + GAP), c * (side + GAP));
        for y in 0..side {
            for x in 0..side {
                levels[(y0 + y) * width + x0 + x] = gray_level(img[y * side + x]);
            }
        }
    }
    (encode_levels(&levels, width, height), width, height)
}
