//! Static SVG renders of oracle trajectories over the source image.
//!
//! The raster image is embedded as a base64 PNG (written by the minimal
//! encoder below: stored-block zlib, so byte-exact and dependency-free). Each
//! token contributes one polyline whose stroke ramps through the perceptual
//! dark-purple-to-yellow colormap from its start to its end point, a start
//! dot in the darkest color, and its final window rectangle in the brightest.

use std::fmt::Write as _;

use spot_core::imagery::Image;

/// Anchors of the perceptual colormap (matplotlib's viridis).
const RAMP: [(f64, [f64; 3]); 9] = [
    (0.000, [0.267004, 0.004874, 0.329415]),
    (0.125, [0.282623, 0.140926, 0.457517]),
    (0.250, [0.253935, 0.265254, 0.529983]),
    (0.375, [0.206756, 0.371758, 0.553117]),
    (0.500, [0.163625, 0.471133, 0.558148]),
    (0.625, [0.127568, 0.566949, 0.550556]),
    (0.750, [0.134692, 0.658636, 0.517649]),
    (0.875, [0.266941, 0.748751, 0.440573]),
    (1.000, [0.993248, 0.906157, 0.143936]),
];

pub fn ramp_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mut rgb = RAMP[RAMP.len() - 1].1;
    for w in RAMP.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
            rgb = [
                c0[0] + f * (c1[0] - c0[0]),
                c0[1] + f * (c1[1] - c0[1]),
                c0[2] + f * (c1[2] - c0[2]),
            ];
            break;
        }
    }
    format!(
        "#{:02x}{:02x}{:02x}",
        (rgb[0] * 255.0).round() as u8,
        (rgb[1] * 255.0).round() as u8,
        (rgb[2] * 255.0).round() as u8
    )
}

// --- minimal PNG encoder (RGB8, stored zlib blocks) ---

fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, t) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *t = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

fn adler32(bytes: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &byte in bytes {
        a = (a + byte as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

fn png_chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend((data.len() as u32).to_be_bytes());
    out.extend(kind);
    out.extend(data);
    let mut crc_input = kind.to_vec();
    crc_input.extend(data);
    out.extend(crc32(&crc_input).to_be_bytes());
}

/// Encode an RGB image as an uncompressed (stored-block) PNG.
pub fn encode_png_rgb(image: &Image) -> Vec<u8> {
    assert_eq!(image.channels(), 3, "PNG export expects RGB");
    let (h, w) = (image.height(), image.width());
    // raw scanlines: filter byte 0 + RGB8 per pixel
    let mut raw = Vec::with_capacity(h * (1 + 3 * w));
    for y in 0..h {
        raw.push(0u8);
        for x in 0..w {
            for c in 0..3 {
                raw.push((image.at(y, x, c) * 255.0).round() as u8);
            }
        }
    }
    // zlib with stored deflate blocks
    let mut z = vec![0x78, 0x01];
    for (i, block) in raw.chunks(65535).enumerate() {
        let last = (i + 1) * 65535 >= raw.len();
        z.push(u8::from(last));
        z.extend((block.len() as u16).to_le_bytes());
        z.extend((!(block.len() as u16)).to_le_bytes());
        z.extend(block);
    }
    z.extend(adler32(&raw).to_be_bytes());

    let mut png = vec![0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];
    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend((w as u32).to_be_bytes());
    ihdr.extend((h as u32).to_be_bytes());
    ihdr.extend([8u8, 2, 0, 0, 0]); // depth 8, RGB, default methods
    png_chunk(&mut png, b"IHDR", &ihdr);
    png_chunk(&mut png, b"IDAT", &z);
    png_chunk(&mut png, b"IEND", &[]);
    png
}

const BASE64: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

pub fn base64_encode(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len().div_ceil(3) * 4);
    for chunk in bytes.chunks(3) {
        let b = [chunk[0], *chunk.get(1).unwrap_or(&0), *chunk.get(2).unwrap_or(&0)];
        let n = (u32::from(b[0]) << 16) | (u32::from(b[1]) << 8) | u32::from(b[2]);
        let chars = [
            BASE64[(n >> 18 & 63) as usize],
            BASE64[(n >> 12 & 63) as usize],
            BASE64[(n >> 6 & 63) as usize],
            BASE64[(n & 63) as usize],
        ];
        let keep = chunk.len() + 1;
        for (i, ch) in chars.iter().enumerate() {
            out.push(if i < keep { *ch as char } else { '=' });
        }
    }
    out
}

/// Render a trajectory (rows of per-step positions) over its image.
pub fn render_svg(image: &Image, rows: &[Vec<(f64, f64)>], window: usize) -> String {
    let (h, w) = (image.height(), image.width());
    let m = rows.first().map_or(0, |r| r.len());
    let png = encode_png_rgb(image);
    let b64 = base64_encode(&png);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{w}" height="{h}" viewBox="-0.5 -0.5 {w} {h}">"#
    );
    let _ = writeln!(
        svg,
        r#"<image x="-0.5" y="-0.5" width="{w}" height="{h}" preserveAspectRatio="none" image-rendering="pixelated" xlink:href="data:image/png;base64,{b64}"/>"#
    );

    // per-token gradients along the start-to-end chord
    let _ = writeln!(svg, "<defs>");
    for t in 0..m {
        let (x0, y0) = rows[0][t];
        let (x1, y1) = rows[rows.len() - 1][t];
        let degenerate = (x1 - x0).abs() < 1e-9 && (y1 - y0).abs() < 1e-9;
        if degenerate {
            continue; // solid stroke fallback below
        }
        let _ = writeln!(
            svg,
            r#"<linearGradient id="traj{t}" gradientUnits="userSpaceOnUse" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}">"#
        );
        for stop in 0..5 {
            let f = stop as f64 / 4.0;
            let _ = writeln!(svg, r#"<stop offset="{f}" stop-color="{}"/>"#, ramp_color(f));
        }
        let _ = writeln!(svg, "</linearGradient>");
    }
    let _ = writeln!(svg, "</defs>");

    for t in 0..m {
        let (x0, y0) = rows[0][t];
        let (x1, y1) = rows[rows.len() - 1][t];
        let degenerate = (x1 - x0).abs() < 1e-9 && (y1 - y0).abs() < 1e-9;
        let stroke = if degenerate {
            ramp_color(1.0)
        } else {
            format!("url(#traj{t})")
        };
        let points: Vec<String> = rows.iter().map(|row| format!("{},{}", row[t].0, row[t].1)).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="0.7" stroke-linejoin="round"/>"#,
            points.join(" ")
        );
    }
    // start dots
    for t in 0..m {
        let (x0, y0) = rows[0][t];
        let _ = writeln!(
            svg,
            r#"<circle cx="{x0}" cy="{y0}" r="0.9" fill="{}"/>"#,
            ramp_color(0.0)
        );
    }
    // final windows
    let k = window as f64;
    for t in 0..m {
        let (x1, y1) = rows[rows.len() - 1][t];
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="{k}" height="{k}" fill="none" stroke="{}" stroke-width="0.7"/>"#,
            x1 - k / 2.0,
            y1 - k / 2.0,
            ramp_color(1.0)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc32_and_adler32_reference_vectors() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(adler32(b"Wikipedia"), 0x11E6_0398);
        assert_eq!(adler32(b""), 1);
    }

    #[test]
    fn base64_reference_vectors() {
        assert_eq!(base64_encode(b""), "");
        assert_eq!(base64_encode(b"f"), "Zg==");
        assert_eq!(base64_encode(b"fo"), "Zm8=");
        assert_eq!(base64_encode(b"foo"), "Zm9v");
        assert_eq!(base64_encode(b"foobar"), "Zm9vYmFy");
    }

    #[test]
    fn png_structure_is_wellformed() {
        let img = Image::new(4, 3, 3, vec![0.5; 36]).unwrap();
        let png = encode_png_rgb(&img);
        assert_eq!(&png[..8], &[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A]);
        assert_eq!(&png[12..16], b"IHDR");
        // width 3, height 4, bit depth 8, color type 2
        assert_eq!(&png[16..20], &[0, 0, 0, 3]);
        assert_eq!(&png[20..24], &[0, 0, 0, 4]);
        assert_eq!(png[24], 8);
        assert_eq!(png[25], 2);
        assert_eq!(&png[png.len() - 8..png.len() - 4], b"IEND");
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp_color(0.0), "#440154");
        assert_eq!(ramp_color(1.0), "#fde725");
    }

    #[test]
    fn svg_counts_match_token_count() {
        let img = Image::new(16, 16, 3, vec![0.2; 16 * 16 * 3]).unwrap();
        let rows = vec![
            vec![(2.0, 2.0), (8.0, 8.0), (12.0, 4.0)],
            vec![(3.0, 2.5), (8.0, 8.0), (11.0, 5.0)],
        ];
        let svg = render_svg(&img, &rows, 4);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches("<rect").count(), 3);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("data:image/png;base64,"));
    }

    #[test]
    fn degenerate_single_row_is_valid() {
        let img = Image::new(8, 8, 3, vec![0.1; 192]).unwrap();
        let rows = vec![vec![(4.0, 4.0)]];
        let svg = render_svg(&img, &rows, 2);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.ends_with("</svg>\n"));
    }
}
