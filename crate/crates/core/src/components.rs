//! 4-connected component labeling of binary grids.

/// One connected region of set pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// Row-major index of the component's first pixel in scan order.
    pub first: usize,
    pub size: usize,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// Labels set pixels of a `width x height` grid by 4-connected component.
///
/// Returns a per-pixel label (`0` = unset, components numbered from 1 in
/// order of their first pixel) and the component list in the same order.
pub fn label(values: &[u8], width: usize, height: usize) -> (Vec<u32>, Vec<Component>) {
    assert_eq!(values.len(), width * height);
    let mut labels = vec![0u32; values.len()];
    // parent[0] is the unset sentinel.
    let mut parent: Vec<u32> = vec![0];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if values[i] == 0 {
                continue;
            }
            let up = if y > 0 { labels[i - width] } else { 0 };
            let left = if x > 0 { labels[i - 1] } else { 0 };
            labels[i] = match (up, left) {
                (0, 0) => {
                    parent.push(parent.len() as u32);
                    (parent.len() - 1) as u32
                }
                (a, 0) | (0, a) => a,
                (a, b) => {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                    parent[hi as usize] = lo;
                    lo
                }
            };
        }
    }
    // Provisional labels are created in scan order and roots are always the
    // smallest provisional label, so root order is first-pixel order.
    let mut remap = vec![0u32; parent.len()];
    let mut comps: Vec<Component> = Vec::new();
    for i in 0..labels.len() {
        if labels[i] == 0 {
            continue;
        }
        let root = find(&mut parent, labels[i]) as usize;
        if remap[root] == 0 {
            comps.push(Component { first: i, size: 0 });
            remap[root] = comps.len() as u32;
        }
        let l = remap[root];
        comps[l as usize - 1].size += 1;
        labels[i] = l;
    }
    (labels, comps)
}

/// Keeps only the largest component (ties go to the one whose first pixel
/// comes earliest in row-major order). Returns `None` for an empty grid.
pub fn keep_largest(values: &[u8], width: usize, height: usize) -> Option<Vec<u8>> {
    let (labels, comps) = label(values, width, height);
    let mut best: Option<(usize, &Component)> = None;
    for (i, c) in comps.iter().enumerate() {
        if best.is_none_or(|(_, b)| c.size > b.size) {
            best = Some((i, c));
        }
    }
    let (idx, _) = best?;
    let keep = idx as u32 + 1;
    Some(labels.iter().map(|&l| u8::from(l == keep)).collect())
}
