use crate::grid::{BinaryGrid, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Disjoint-set forest with path halving; the smaller index becomes root.
#[derive(Debug, Clone, Default)]
pub struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.parent.clear();
    }

    pub fn make_set(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Label map plus per-label areas. Label 0 is the background (unset cells);
/// foreground components are numbered `1..=component_count` in raster order
/// of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledComponents {
    pub label_map: Grid<u32>,
    /// Indexed by label; `component_areas[0]` is the background area.
    pub component_areas: Vec<usize>,
    pub component_count: usize,
}

impl LabeledComponents {
    /// Areas of the foreground components, in label order.
    pub fn foreground_areas(&self) -> &[usize] {
        &self.component_areas[1..]
    }
}

/// Two-pass union-find labeling of the set cells of `mask`.
pub fn connected_components(mask: &BinaryGrid, connectivity: Connectivity) -> LabeledComponents {
    let (w, h) = (mask.width(), mask.height());
    let mut provisional = Grid::filled(w, h, u32::MAX);
    let mut uf = UnionFind::new();

    for y in 0..h {
        for x in 0..w {
            if !*mask.get(x, y) {
                continue;
            }
            let mut label = u32::MAX;
            let link = |other: u32, label: &mut u32, uf: &mut UnionFind| {
                if other == u32::MAX {
                    return;
                }
                *label = if *label == u32::MAX { other } else { uf.union(*label, other) };
            };
            if x > 0 {
                link(*provisional.get(x - 1, y), &mut label, &mut uf);
            }
            if y > 0 {
                link(*provisional.get(x, y - 1), &mut label, &mut uf);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        link(*provisional.get(x - 1, y - 1), &mut label, &mut uf);
                    }
                    if x + 1 < w {
                        link(*provisional.get(x + 1, y - 1), &mut label, &mut uf);
                    }
                }
            }
            if label == u32::MAX {
                label = uf.make_set();
            }
            *provisional.get_mut(x, y) = label;
        }
    }

    let mut compact = vec![0u32; uf.len()];
    let mut next = 0u32;
    for id in 0..uf.len() as u32 {
        let root = uf.find(id);
        if root == id {
            next += 1;
            compact[id as usize] = next;
        } else {
            compact[id as usize] = compact[root as usize];
        }
    }

    let mut areas = vec![0usize; next as usize + 1];
    let label_map = provisional.map(|&p| {
        let label = if p == u32::MAX { 0 } else { compact[p as usize] };
        areas[label as usize] += 1;
        label
    });
    LabeledComponents {
        label_map,
        component_areas: areas,
        component_count: next as usize,
    }
}
