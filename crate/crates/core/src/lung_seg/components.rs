//! Two-pass connected-component labelling over a binary grid.

use crate::grid::Grid;

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // Slot 0 is the background label.
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        // Smaller root wins so labels stay in first-seen order.
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else if rb < ra {
            self.parent[ra as usize] = rb;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    /// 1-based label, assigned in raster order of each component's first pixel.
    pub label: u32,
    pub size: usize,
    pub touches_border: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Labels the set pixels of `mask`. Returns the label grid (0 = unset) and
/// one [`Component`] per label, indexed by `label - 1`.
pub fn label_components(mask: &Grid<bool>, connectivity: Connectivity) -> (Grid<u32>, Vec<Component>) {
    let (rows, cols) = mask.dims();
    let mut labels = Grid::filled(rows, cols, 0u32);
    let mut sets = DisjointSet::new();

    for r in 0..rows {
        for c in 0..cols {
            if !mask[(r, c)] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if c > 0 {
                push(labels[(r, c - 1)]);
            }
            if r > 0 {
                push(labels[(r - 1, c)]);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        push(labels[(r - 1, c - 1)]);
                    }
                    if c + 1 < cols {
                        push(labels[(r - 1, c + 1)]);
                    }
                }
            }
            let label = match neighbours[..n].iter().min() {
                None => sets.make(),
                Some(&m) => {
                    for &other in &neighbours[..n] {
                        sets.union(m, other);
                    }
                    m
                }
            };
            labels[(r, c)] = label;
        }
    }

    // Resolve provisional labels to dense final labels in raster order.
    let mut dense = vec![0u32; sets.parent.len()];
    let mut components: Vec<Component> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let provisional = labels[(r, c)];
            if provisional == 0 {
                continue;
            }
            let root = sets.find(provisional) as usize;
            if dense[root] == 0 {
                components.push(Component {
                    label: components.len() as u32 + 1,
                    size: 0,
                    touches_border: false,
                });
                dense[root] = components.len() as u32;
            }
            let label = dense[root];
            labels[(r, c)] = label;
            let comp = &mut components[label as usize - 1];
            comp.size += 1;
            comp.touches_border |= r == 0 || c == 0 || r + 1 == rows || c + 1 == cols;
        }
    }
    (labels, components)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(rows: &[&str]) -> Grid<bool> {
        let cols = rows[0].len();
        Grid::from_fn(rows.len(), cols, |r, c| rows[r].as_bytes()[c] == b'#')
    }

    /// Flood fill oracle used to cross-check the two-pass labeller.
    fn flood_count(mask: &Grid<bool>, connectivity: Connectivity) -> Vec<usize> {
        let (rows, cols) = mask.dims();
        let mut seen = Grid::filled(rows, cols, false);
        let mut sizes = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if !mask[(r, c)] || seen[(r, c)] {
                    continue;
                }
                let mut stack = vec![(r, c)];
                seen[(r, c)] = true;
                let mut size = 0;
                while let Some((y, x)) = stack.pop() {
                    size += 1;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if (dy == 0 && dx == 0)
                                || (connectivity == Connectivity::Four && dy != 0 && dx != 0)
                            {
                                continue;
                            }
                            let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                            if ny < 0 || nx < 0 || ny >= rows as i64 || nx >= cols as i64 {
                                continue;
                            }
                            let (ny, nx) = (ny as usize, nx as usize);
                            if mask[(ny, nx)] && !seen[(ny, nx)] {
                                seen[(ny, nx)] = true;
                                stack.push((ny, nx));
                            }
                        }
                    }
                }
                sizes.push(size);
            }
        }
        sizes
    }

    #[test]
    fn diagonal_pixels_join_only_under_eight_connectivity() {
        let m = parse(&["#..", ".#.", "..#"]);
        assert_eq!(label_components(&m, Connectivity::Eight).1.len(), 1);
        assert_eq!(label_components(&m, Connectivity::Four).1.len(), 3);
    }

    #[test]
    fn u_shape_merges_into_one_label() {
        let m = parse(&[".....", ".#.#.", ".#.#.", ".###.", "....."]);
        let (labels, comps) = label_components(&m, Connectivity::Eight);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].size, 7);
        assert!(!comps[0].touches_border);
        assert_eq!(labels[(1, 3)], 1);
    }

    #[test]
    fn border_flag() {
        let m = parse(&["#....", ".....", "..#..", "....."]);
        let (_, comps) = label_components(&m, Connectivity::Eight);
        assert!(comps[0].touches_border);
        assert!(!comps[1].touches_border);
    }

    #[test]
    fn matches_flood_fill_on_pseudo_random_masks() {
        let mut state = 0x2545_F491_4F6C_DD1Du64;
        for _ in 0..50 {
            let m = Grid::from_fn(17, 23, |_, _| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                state % 5 < 2
            });
            for conn in [Connectivity::Four, Connectivity::Eight] {
                let (_, comps) = label_components(&m, conn);
                let mut got: Vec<usize> = comps.iter().map(|c| c.size).collect();
                let mut want = flood_count(&m, conn);
                got.sort_unstable();
                want.sort_unstable();
                assert_eq!(got, want);
            }
        }
    }
}
