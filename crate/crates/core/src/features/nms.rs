use super::Keypoint;

/// Score-based non-maximum suppression over a dense score map.
///
/// Pixels with score `<= 0` are not candidates. A candidate survives when no
/// other candidate within Chebyshev distance `radius` has a higher score, or
/// an equal score earlier in raster order. Output is sorted by `(y, x)`.
pub fn non_max_suppression(
    scores: &[f64],
    width: usize,
    height: usize,
    radius: usize,
) -> Vec<Keypoint> {
    assert_eq!(scores.len(), width * height, "score map size mismatch");
    let mut out = Vec::new();
    for y in 0..height {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius).min(height - 1);
        for x in 0..width {
            let s = scores[y * width + x];
            if s <= 0.0 {
                continue;
            }
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius).min(width - 1);
            let mut keep = true;
            'window: for yy in y0..=y1 {
                let row = &scores[yy * width..(yy + 1) * width];
                for (xx, &o) in row.iter().enumerate().take(x1 + 1).skip(x0) {
                    if o > s || (o == s && (yy, xx) < (y, x)) {
                        keep = false;
                        break 'window;
                    }
                }
            }
            if keep {
                out.push(Keypoint { x, y, score: s });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isolated_peaks_survive() {
        let mut s = vec![0.0; 100];
        s[11] = 1.0;
        s[88] = 2.0;
        let kps = non_max_suppression(&s, 10, 10, 3);
        assert_eq!(kps.len(), 2);
        assert_eq!((kps[0].x, kps[0].y), (1, 1));
    }

    #[test]
    fn weaker_neighbour_suppressed_and_ties_keep_first() {
        let mut s = vec![0.0; 100];
        s[44] = 5.0;
        s[46] = 3.0;
        s[47] = 5.0; // ties with 44 at distance 3
        let kps = non_max_suppression(&s, 10, 10, 3);
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].x, kps[0].y), (4, 4));
    }
}
