//! Binary morphology with a disk structuring element.

use std::collections::VecDeque;

use crate::grid::Grid;

/// Offsets `(dr, dc)` with `dr² + dc² ≤ radius²`.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

fn shifted(rows: usize, cols: usize, r: usize, c: usize, (dr, dc): (isize, isize)) -> Option<(usize, usize)> {
    let nr = r as isize + dr;
    let nc = c as isize + dc;
    (nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols).then_some((nr as usize, nc as usize))
}

pub fn dilate(mask: &Grid<bool>, radius: usize) -> Grid<bool> {
    let (rows, cols) = mask.dims();
    let offsets = disk_offsets(radius);
    let mut out = Grid::filled(rows, cols, false);
    for r in 0..rows {
        for c in 0..cols {
            if mask[(r, c)] {
                for &o in &offsets {
                    if let Some(p) = shifted(rows, cols, r, c, o) {
                        out[p] = true;
                    }
                }
            }
        }
    }
    out
}

/// Erosion treating pixels outside the grid as set, so that closing never
/// removes pixels from the input.
pub fn erode(mask: &Grid<bool>, radius: usize) -> Grid<bool> {
    let (rows, cols) = mask.dims();
    let offsets = disk_offsets(radius);
    Grid::from_fn(rows, cols, |r, c| {
        offsets
            .iter()
            .all(|&o| shifted(rows, cols, r, c, o).is_none_or(|p| mask[p]))
    })
}

pub fn close(mask: &Grid<bool>, radius: usize) -> Grid<bool> {
    if radius == 0 {
        return mask.clone();
    }
    erode(&dilate(mask, radius), radius)
}

/// Sets every unset pixel that is not 4-connected to the image border.
pub fn fill_holes(mask: &Grid<bool>) -> Grid<bool> {
    let (rows, cols) = mask.dims();
    let mut outside = Grid::filled(rows, cols, false);
    let mut queue = VecDeque::new();
    for r in 0..rows {
        for c in 0..cols {
            let border = r == 0 || c == 0 || r + 1 == rows || c + 1 == cols;
            if border && !mask[(r, c)] {
                outside[(r, c)] = true;
                queue.push_back((r, c));
            }
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        for o in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            if let Some(p) = shifted(rows, cols, r, c, o) {
                if !mask[p] && !outside[p] {
                    outside[p] = true;
                    queue.push_back(p);
                }
            }
        }
    }
    Grid::from_fn(rows, cols, |r, c| mask[(r, c)] || !outside[(r, c)])
}
